//! Metrics on dataset splits, the remeshing-robustness protocol, motion transfer
//! and inference timing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Model};
use super::config::{TrainConfig, TrainMode};
use super::TrainingSequence;
use crate::autodiff::Tensor;
use crate::embedding::{embed_motion, MotionCode};
use crate::error::{Error, Result};
use crate::features::extract_features;
use crate::generator::{rollout, DeformationRollout};
use crate::geom::Vec3;
use crate::losses::{
    chamfer_sequence_loss, mse_loss, normal_loss, relative_deviation, DeviationRow,
    MetricsReport, SequenceMetrics,
};
use crate::mesh::{
    closest_surface_points, decimate_to, load_mesh, load_sequence, normalize,
    normals_from_positions, refine_to, remesh, save_mesh, frame_file_name, MotionSequence,
    NormalizeTransform, RemeshVariant, TriMesh,
};
use crate::spectral::{build_operators, SpectralCache};
use crate::synth::{build_body, unregister, DatasetManifest, IdentitySpec, Split};

pub const TRANSFER_MANIFEST: &str = "transfer.json";

/// Offset separating evaluation-time re-triangulation seeds from training ones.
const EVAL_SEED_OFFSET: u64 = 0x00E7_A100;

/// Model rollout of `seq`'s source through its target motion, in normalized units.
/// Surface sampling for the embedder uses the checkpoint seed, so the result is
/// deterministic.
pub fn predict(model: &Model, cfg: &TrainConfig, seq: &TrainingSequence) -> Result<DeformationRollout> {
    let features = extract_features(&seq.source, &seq.ops, &model.extractor)?;
    let code = embed_motion(&seq.targets, &model.embedder, cfg.embedder.points, cfg.seed)?;
    rollout(&seq.source, &features, &code, &model.generator)
}

fn registered_metrics(name: &str, pred: &[Tensor], seq: &TrainingSequence) -> Result<SequenceMetrics> {
    Ok(SequenceMetrics {
        name: name.to_string(),
        mse: Some(mse_loss(pred, &seq.truth)?),
        cosim: Some(normal_loss(pred, seq.source.faces(), &seq.truth_normals)?),
        chamfer: None,
    })
}

fn split_sequences(
    manifest: &DatasetManifest,
    split: Split,
    mode: TrainMode,
    cfg: &TrainConfig,
    cache: &SpectralCache,
) -> Result<Vec<TrainingSequence>> {
    let entries = manifest.split(split);
    if entries.is_empty() {
        return Err(Error::validation(format!("the {split} split is empty")));
    }
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut seq = manifest.load_sequence(e)?;
            if mode == TrainMode::Unregistered {
                let seed = cfg.seed.wrapping_add(EVAL_SEED_OFFSET + i as u64);
                seq = unregister(&seq, seed)?;
            }
            TrainingSequence::prepare(&e.path, &seq, mode, cfg.eigenpairs, cache)
        })
        .collect()
}

/// MSE and Cosim per sequence (registered checkpoints), or chamfer distance against
/// re-triangulated frames (unregistered checkpoints).
pub fn evaluate(ckpt: &Checkpoint, manifest: &DatasetManifest, split: Split) -> Result<MetricsReport> {
    let cfg = &ckpt.config;
    let cache = SpectralCache::from_env(manifest.sequences.len() + 1);
    let data = split_sequences(manifest, split, cfg.mode, cfg, &cache)?;
    let mut rows = Vec::with_capacity(data.len());
    for seq in &data {
        let r = predict(&ckpt.model, cfg, seq)?;
        let pred = &r.positions[1..];
        rows.push(match cfg.mode {
            TrainMode::Registered => registered_metrics(&seq.name, pred, seq)?,
            TrainMode::Unregistered => {
                let p: Vec<Vec<Vec3>> = pred.iter().map(|t| t.to_points()).collect();
                let q: Vec<Vec<Vec3>> =
                    seq.targets.frames.iter().map(|f| f.vertices().to_vec()).collect();
                SequenceMetrics {
                    name: seq.name.clone(),
                    mse: None,
                    cosim: None,
                    chamfer: Some(chamfer_sequence_loss(&p, &q)?),
                }
            }
        });
    }
    Ok(MetricsReport::from_sequences(rows))
}

/// Metrics of predicting the unmoved source for every frame.
pub fn static_baseline(manifest: &DatasetManifest, split: Split) -> Result<MetricsReport> {
    let cache = SpectralCache::new(1);
    // The operators are unused here; one eigenpair keeps preparation cheap.
    let cfg = TrainConfig {
        eigenpairs: 1,
        ..TrainConfig::default()
    };
    let data = split_sequences(manifest, split, TrainMode::Registered, &cfg, &cache)?;
    let rows = data
        .iter()
        .map(|seq| {
            let still = Tensor::from_points(seq.source.vertices());
            let pred = vec![still; seq.truth.len()];
            registered_metrics(&seq.name, &pred, seq)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_sequences(rows))
}

/// Mean MSE and Cosim over the test split when every source is re-triangulated by
/// `variant`. Ground truth is carried to the new vertices through their closest
/// points on the original source surface.
fn remeshed_metrics(
    ckpt: &Checkpoint,
    data: &[TrainingSequence],
    variant: RemeshVariant,
    cache: &SpectralCache,
) -> Result<(f64, f64)> {
    let cfg = &ckpt.config;
    let (mut mse, mut cosim) = (0.0, 0.0);
    for (i, seq) in data.iter().enumerate() {
        let m = if variant == RemeshVariant::Original {
            let r = predict(&ckpt.model, cfg, seq)?;
            registered_metrics(&seq.name, &r.positions[1..], seq)?
        } else {
            let seed = cfg.seed.wrapping_add(EVAL_SEED_OFFSET + i as u64);
            let source = remesh(&seq.source, variant, seed)?;
            let map = closest_surface_points(&seq.source, source.vertices());
            let faces = seq.source.faces();
            let truth: Vec<Tensor> = seq
                .truth
                .iter()
                .map(|t| {
                    let p = t.to_points();
                    let moved: Vec<Vec3> = map.iter().map(|s| s.interpolate(faces, &p)).collect();
                    Tensor::from_points(&moved)
                })
                .collect();
            let truth_normals: Vec<Vec<Vec3>> = truth
                .iter()
                .map(|t| normals_from_positions(&t.to_points(), source.faces()).normals)
                .collect();
            let k = cfg.eigenpairs.min(source.num_vertices() - 1);
            let ops = cache.get_or_build(&source, k)?;
            let features = extract_features(&source, &ops, &ckpt.model.extractor)?;
            let code = embed_motion(&seq.targets, &ckpt.model.embedder, cfg.embedder.points, cfg.seed)?;
            let r = rollout(&source, &features, &code, &ckpt.model.generator)?;
            let pred = &r.positions[1..];
            SequenceMetrics {
                name: seq.name.clone(),
                mse: Some(mse_loss(pred, &truth)?),
                cosim: Some(normal_loss(pred, source.faces(), &truth_normals)?),
                chamfer: None,
            }
        };
        mse += m.mse.unwrap_or(0.0);
        cosim += m.cosim.unwrap_or(0.0);
    }
    let n = data.len() as f64;
    Ok((mse / n, cosim / n))
}

/// Relative change of test-split MSE and Cosim when the test sources are
/// re-triangulated, one row per requested variant.
pub fn robustness_eval(
    ckpt: &Checkpoint,
    manifest: &DatasetManifest,
    variants: &[RemeshVariant],
) -> Result<Vec<DeviationRow>> {
    let cfg = &ckpt.config;
    let cache = SpectralCache::from_env(manifest.sequences.len() + 1);
    let data = split_sequences(manifest, Split::Test, TrainMode::Registered, cfg, &cache)?;
    let (mse0, cos0) = remeshed_metrics(ckpt, &data, RemeshVariant::Original, &cache)?;
    variants
        .iter()
        .map(|&variant| {
            let (mse, cosim) = if variant == RemeshVariant::Original {
                (mse0, cos0)
            } else {
                remeshed_metrics(ckpt, &data, variant, &cache)?
            };
            Ok(DeviationRow {
                variant,
                mse,
                cosim,
                mse_deviation: relative_deviation(mse0, mse)?,
                cosim_deviation: relative_deviation(cos0, cosim)?,
            })
        })
        .collect()
}

/// Motion code of a whole sequence, normalized by its first frame.
pub fn embed_sequence(ckpt: &Checkpoint, seq: &MotionSequence) -> Result<MotionCode> {
    let t = NormalizeTransform::fit(&seq.frames[0])?;
    let frames = MotionSequence::new(seq.frames.iter().map(|f| t.apply(f)).collect())?;
    embed_motion(&frames, &ckpt.model.embedder, ckpt.config.embedder.points, ckpt.config.seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferManifest {
    pub checkpoint: String,
    pub source: PathBuf,
    pub motion: PathBuf,
    pub frames: Vec<String>,
    pub source_vertices: usize,
    pub normalization: NormalizeTransform,
}

#[derive(Clone, Debug)]
pub struct TransferOutput {
    /// Frame 0 is the source; frame `t` follows target frame `t`.
    pub frames: Vec<TriMesh>,
    pub manifest: TransferManifest,
}

/// Carries the source mesh through the motion of the target sequence. Target
/// frames may each have their own triangulation.
pub fn transfer(
    ckpt: &Checkpoint,
    source_path: impl AsRef<Path>,
    motion_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
) -> Result<TransferOutput> {
    let (source_path, motion_dir, out_dir) =
        (source_path.as_ref(), motion_dir.as_ref(), out_dir.as_ref());
    let raw = load_mesh(source_path)?;
    let components = raw.connected_components();
    if components != 1 {
        log::error!(
            "{}: transfer needs a single connected surface; keep the largest component or stitch the pieces",
            source_path.display()
        );
        return Err(Error::Disconnected { components });
    }
    let target = load_sequence(motion_dir)?;
    let (source, transform) = normalize(&raw)?;
    let k = ckpt.config.eigenpairs.min(source.num_vertices() - 1);
    let ops = std::sync::Arc::new(build_operators(&source, k)?);
    let features = extract_features(&source, &ops, &ckpt.model.extractor)?;
    let code = if target.len() > 1 {
        let t = NormalizeTransform::fit(&target.frames[0])?;
        let frames = MotionSequence::new(target.frames[1..].iter().map(|f| t.apply(f)).collect())?;
        embed_motion(&frames, &ckpt.model.embedder, ckpt.config.embedder.points, ckpt.config.seed)?
    } else {
        MotionCode {
            values: Tensor::zeros(0, ckpt.model.embedder.code_width()),
        }
    };
    let r = rollout(&source, &features, &code, &ckpt.model.generator)?;
    let ext = match source_path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ply") => "ply",
        _ => "obj",
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut frames = Vec::with_capacity(r.positions.len());
    let mut names = Vec::with_capacity(r.positions.len());
    for t in 0..r.positions.len() {
        let mesh = transform.invert(&r.frame(&source, t)?);
        let name = frame_file_name(t, ext);
        save_mesh(&mesh, out_dir.join(&name))?;
        names.push(name);
        frames.push(mesh);
    }
    let manifest = TransferManifest {
        checkpoint: ckpt.id.clone(),
        source: source_path.to_path_buf(),
        motion: motion_dir.to_path_buf(),
        frames: names,
        source_vertices: source.num_vertices(),
        normalization: transform,
    };
    let path = out_dir.join(TRANSFER_MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(TransferOutput { frames, manifest })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// Requested vertex count.
    pub resolution: usize,
    pub vertices: usize,
    pub frames: usize,
    pub operator_seconds: f64,
    pub feature_seconds: f64,
    pub embed_seconds: f64,
    /// Mean over the runs below.
    pub rollout_seconds: f64,
    pub rollout_runs: Vec<f64>,
}

pub const BENCH_RUNS: usize = 3;

/// Synthetic body resampled to roughly `n` vertices, normalized.
fn bench_mesh(seed: u64, n: usize) -> Result<TriMesh> {
    let body = build_body(&IdentitySpec::sample(seed, 0))?;
    let m = body.mesh();
    let resized = if n < m.num_vertices() {
        decimate_to(m, n, seed)?
    } else {
        refine_to(m, n, seed)?
    };
    Ok(normalize(&resized)?.0)
}

/// Wall-clock time of a `frames`-step rollout at each resolution, averaged over
/// three runs. Operator construction, feature extraction and motion embedding are
/// timed once each and reported separately.
pub fn bench_inference(ckpt: &Checkpoint, resolutions: &[usize], frames: usize) -> Result<Vec<BenchRow>> {
    let cfg = &ckpt.config;
    let mut rows = Vec::with_capacity(resolutions.len());
    for &n in resolutions {
        let mesh = bench_mesh(cfg.seed, n)?;
        let clock = Instant::now();
        let k = cfg.eigenpairs.min(mesh.num_vertices() - 1);
        let ops = std::sync::Arc::new(build_operators(&mesh, k)?);
        let operator_seconds = clock.elapsed().as_secs_f64();
        let clock = Instant::now();
        let features = extract_features(&mesh, &ops, &ckpt.model.extractor)?;
        let feature_seconds = clock.elapsed().as_secs_f64();
        let clock = Instant::now();
        // A still motion: the cost of the rollout does not depend on the code values.
        let motion = MotionSequence::new(vec![mesh.clone(); frames.max(1)])?;
        let mut code = embed_motion(&motion, &ckpt.model.embedder, cfg.embedder.points, cfg.seed)?;
        if frames == 0 {
            code.values = Tensor::zeros(0, code.width());
        }
        let embed_seconds = clock.elapsed().as_secs_f64();
        let mut runs = Vec::with_capacity(BENCH_RUNS);
        for _ in 0..BENCH_RUNS {
            let clock = Instant::now();
            let r = rollout(&mesh, &features, &code, &ckpt.model.generator)?;
            runs.push(clock.elapsed().as_secs_f64());
            std::hint::black_box(&r);
        }
        rows.push(BenchRow {
            resolution: n,
            vertices: mesh.num_vertices(),
            frames,
            operator_seconds,
            feature_seconds,
            embed_seconds,
            rollout_seconds: runs.iter().sum::<f64>() / runs.len() as f64,
            rollout_runs: runs,
        });
    }
    Ok(rows)
}
