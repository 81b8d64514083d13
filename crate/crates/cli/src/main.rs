use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use meshmotion::embedding::{mds_project, write_mds_csv};
use meshmotion::losses::write_deviation_csv;
use meshmotion::mesh::load_sequence;
use meshmotion::synth::{make_dataset, DatasetConfig, DatasetManifest, MotionKind, Split};
use meshmotion::train::{
    bench_inference, embed_sequence, evaluate, robustness_eval, static_baseline, train,
    transfer, Checkpoint, TrainConfig, TrainMode,
};
use meshmotion::{Error, RemeshVariant, Result};

#[derive(Parser)]
#[command(name = "meshmotion", version, about = "Rig-free deformation of unregistered triangle meshes")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of articulated bodies in motion.
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the mode from the config file.
        #[arg(long)]
        mode: Option<TrainMode>,
        /// Override the epoch count from the config file.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Report MSE / Cosim (or chamfer) on a split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Also report the static-source baseline.
        #[arg(long)]
        baseline: bool,
        /// Write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Metric deviations when test sources are re-triangulated.
    Robustness {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ds2,us2,vd")]
        variants: Vec<RemeshVariant>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Carry a source mesh through the motion of a target sequence.
    Transfer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the motion code of a sequence.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Write a planar MDS projection of the codes.
        #[arg(long)]
        mds: Option<PathBuf>,
        /// Further sequences to include in the MDS projection.
        #[arg(long)]
        compare: Vec<PathBuf>,
    },
    /// Time rollouts at several resolutions.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1000,4000,8000")]
        resolutions: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    train_identities: usize,
    #[arg(long, default_value_t = 2)]
    test_identities: usize,
    #[arg(long, value_delimiter = ',', default_value = "arm_raise,knee_raise,walk_cycle")]
    motions: Vec<MotionKind>,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    level: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn name_of(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let cfg = DatasetConfig {
                train_identities: a.train_identities,
                test_identities: a.test_identities,
                motions: a.motions,
                frames: a.frames,
                level: a.level,
                seed: a.seed,
            };
            let m = make_dataset(&cfg, &a.out)?;
            println!("wrote {} sequences to {}", m.sequences.len(), a.out.display());
        }
        Command::Train {
            config,
            data,
            out,
            mode,
            epochs,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let manifest = DatasetManifest::load(&data)?;
            info!("training {} mode for {} epochs", cfg.mode, cfg.epochs);
            let ckpt = train(&cfg, &manifest, Some(&out))?;
            let first = ckpt.history.first().map_or(f64::NAN, |r| r.loss);
            let last = ckpt.history.last().map_or(f64::NAN, |r| r.loss);
            println!(
                "checkpoint {} written to {} (loss {first:.4e} -> {last:.4e})",
                &ckpt.id[..12],
                out.display()
            );
        }
        Command::Eval {
            ckpt,
            data,
            split,
            baseline,
            json,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let manifest = DatasetManifest::load(&data)?;
            let report = evaluate(&ckpt, &manifest, split)?;
            for s in &report.sequences {
                println!("{}: {}", s.name, metric_line(s.mse, s.cosim, s.chamfer));
            }
            println!("mean: {}", metric_line(report.mse, report.cosim, report.chamfer));
            if baseline {
                let b = static_baseline(&manifest, split)?;
                println!("static baseline: {}", metric_line(b.mse, b.cosim, None));
            }
            if let Some(p) = json {
                report.save(p)?;
            }
        }
        Command::Robustness {
            ckpt,
            data,
            variants,
            csv,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let manifest = DatasetManifest::load(&data)?;
            let rows = robustness_eval(&ckpt, &manifest, &variants)?;
            println!("variant  mse          cosim        mse dev   cosim dev");
            for r in &rows {
                println!(
                    "{:<8} {:<12.5e} {:<12.5e} {:>7.2}%  {:>7.2}%",
                    r.variant.to_string(),
                    r.mse,
                    r.cosim,
                    100.0 * r.mse_deviation,
                    100.0 * r.cosim_deviation
                );
            }
            if let Some(p) = csv {
                write_deviation_csv(&rows, p)?;
            }
        }
        Command::Transfer {
            ckpt,
            source,
            motion,
            out,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let r = transfer(&ckpt, &source, &motion, &out)?;
            println!("wrote {} frames to {}", r.frames.len(), out.display());
        }
        Command::Embed {
            ckpt,
            motion,
            csv,
            mds,
            compare,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let code = embed_sequence(&ckpt, &load_sequence(&motion)?)?;
            code.write_csv(&csv)?;
            if let Some(p) = mds {
                let mut names = vec![name_of(&motion)];
                let mut codes = vec![code];
                for dir in &compare {
                    names.push(name_of(dir));
                    codes.push(embed_sequence(&ckpt, &load_sequence(dir)?)?);
                }
                write_mds_csv(&names, &mds_project(&codes)?, p)?;
            }
        }
        Command::Bench {
            ckpt,
            resolutions,
            frames,
            json,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let rows = bench_inference(&ckpt, &resolutions, frames)?;
            println!("vertices  frames  operators(s)  features(s)  rollout(s, mean of runs)");
            for r in &rows {
                println!(
                    "{:<9} {:<7} {:<13.4} {:<12.4} {:.4}",
                    r.vertices, r.frames, r.operator_seconds, r.feature_seconds, r.rollout_seconds
                );
            }
            if let Some(p) = json {
                write_json(&p, &rows)?;
            }
        }
    }
    Ok(())
}

/// Present metrics only, e.g. `mse 3.3107e-3 cosim 4.8898e-2`.
fn metric_line(mse: Option<f64>, cosim: Option<f64>, chamfer: Option<f64>) -> String {
    [("mse", mse), ("cosim", cosim), ("chamfer", chamfer)]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| format!("{k} {v:.4e}")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
