//! Training loop, evaluation protocols, motion transfer and inference benchmarks.

mod checkpoint;
mod config;
mod eval;
mod optim;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, EpochRecord, Model, CHECKPOINT_VERSION};
pub use config::{AdamConfig, TrainConfig, TrainMode, CONFIG_VERSION};
pub use eval::{
    bench_inference, embed_sequence, evaluate, predict, robustness_eval, static_baseline,
    transfer, BenchRow, TransferManifest, TransferOutput, TRANSFER_MANIFEST,
};
pub use optim::{clip_global_norm, Adam};

use crate::autodiff::{Graph, Tensor, Var};
use crate::embedding::{frame_seed, sample_sequence};
use crate::error::{Error, Result};
use crate::features::{default_init_time, input_signal};
use crate::geom::Vec3;
use crate::losses::{self, combine, LossComponents};
use crate::mesh::{
    edge_list, normalize, vertex_normals, EdgeList, MotionSequence, NormalizeTransform, TriMesh,
};
use crate::nn::Params;
use crate::spectral::{SpectralCache, SpectralOps};
use crate::synth::{unregister, DatasetManifest, SequenceEntry, Split};

/// One sequence in normalized coordinates with everything the loss needs that
/// does not depend on the model.
pub struct TrainingSequence {
    pub name: String,
    /// Normalized frame 0.
    pub source: TriMesh,
    pub transform: NormalizeTransform,
    pub ops: Arc<SpectralOps>,
    pub input: Tensor,
    /// Normalized frames 1..T, embedded as the target motion.
    pub targets: MotionSequence,
    /// Registered mode: target positions and their vertex normals.
    pub truth: Vec<Tensor>,
    pub truth_normals: Vec<Vec<Vec3>>,
    pub edges: EdgeList,
}

impl TrainingSequence {
    /// Normalizes `seq` by the transform fitted on its first frame, which becomes
    /// the source.
    pub fn prepare(
        name: impl Into<String>,
        seq: &MotionSequence,
        mode: TrainMode,
        eigenpairs: usize,
        cache: &SpectralCache,
    ) -> Result<Self> {
        let name = name.into();
        if seq.len() < 2 {
            return Err(Error::validation(format!(
                "{name}: a training sequence needs a source and at least one target frame"
            )));
        }
        if mode == TrainMode::Registered && !seq.is_registered() {
            return Err(Error::validation(format!(
                "{name}: registered mode needs every frame to share the source connectivity"
            )));
        }
        let (source, transform) = normalize(&seq.frames[0])?;
        let k = eigenpairs.min(source.num_vertices() - 1);
        let ops = cache.get_or_build(&source, k)?;
        let targets =
            MotionSequence::new(seq.frames[1..].iter().map(|f| transform.apply(f)).collect())?;
        let (truth, truth_normals) = match mode {
            TrainMode::Registered => targets
                .frames
                .iter()
                .map(|f| (Tensor::from_points(f.vertices()), vertex_normals(f).normals))
                .unzip(),
            TrainMode::Unregistered => (Vec::new(), Vec::new()),
        };
        Ok(TrainingSequence {
            name,
            input: input_signal(&source),
            edges: edge_list(&source),
            source,
            transform,
            ops,
            targets,
            truth,
            truth_normals,
        })
    }
}

/// Builds the full forward pass for one sequence and returns the scalar loss.
/// Components are reported in registered mode.
pub fn sequence_loss(
    g: &mut Graph,
    model: &Model,
    cfg: &TrainConfig,
    seq: &TrainingSequence,
    epoch_fraction: f64,
    sampling_seed: u64,
) -> Result<(Var, Option<LossComponents>)> {
    let input = g.constant(seq.input.clone());
    let features = model.extractor.forward(g, &seq.ops, input)?;
    let points = sample_sequence(&seq.targets, cfg.embedder.points, sampling_seed)?;
    let code = model.embedder.forward(g, &points)?;
    let source = g.constant(Tensor::from_points(seq.source.vertices()));
    let teacher = (cfg.teacher_forcing && cfg.mode == TrainMode::Registered)
        .then_some(seq.truth.as_slice());
    let pred = model.generator.rollout_var(g, features, code, source, teacher)?;
    match cfg.mode {
        TrainMode::Registered => {
            let mse = losses::mse_var(g, &pred, &seq.truth)?;
            let normal = losses::normal_var(g, &pred, seq.source.faces(), &seq.truth_normals)?;
            let w_i = cfg.loss.isometry_weight(epoch_fraction);
            let pred_values: Vec<Tensor> = pred.iter().map(|&p| g.value(p).clone()).collect();
            let source_positions = Tensor::from_points(seq.source.vertices());
            let aiap = losses::aiap_loss(&pred_values, &source_positions, &seq.edges)?;
            let parts = combine(
                g.value(mse).item(),
                g.value(normal).item(),
                aiap,
                &cfg.loss,
                epoch_fraction,
            );
            let weighted_normal = g.affine(normal, cfg.loss.lambda_n, 0.0);
            let mut total = g.add(mse, weighted_normal);
            if w_i > 0.0 {
                let aiap_var = losses::aiap_var(g, &pred, &source_positions, &seq.edges)?;
                let weighted = g.affine(aiap_var, w_i, 0.0);
                total = g.add(total, weighted);
            }
            Ok((total, Some(parts)))
        }
        TrainMode::Unregistered => {
            let target: Vec<Vec<Vec3>> =
                seq.targets.frames.iter().map(|f| f.vertices().to_vec()).collect();
            Ok((losses::chamfer_sequence_var(g, &pred, &target)?, None))
        }
    }
}

/// Sampling seed of sequence `index` in `epoch`.
fn sampling_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    frame_seed(seed ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03), epoch)
}

/// Loads the training split (or the configured subset) in the configured mode.
pub fn load_training_data(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    cache: &SpectralCache,
) -> Result<Vec<TrainingSequence>> {
    let mut entries: Vec<&SequenceEntry> = manifest.split(Split::Train);
    if !cfg.sequences.is_empty() {
        for name in &cfg.sequences {
            if !entries.iter().any(|e| &e.path == name) {
                return Err(Error::validation(format!(
                    "sequence `{name}` is not in the training split"
                )));
            }
        }
        entries.retain(|e| cfg.sequences.contains(&e.path));
    }
    if entries.is_empty() {
        return Err(Error::validation("the training split is empty"));
    }
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut seq = manifest.load_sequence(e)?;
            if cfg.mode == TrainMode::Unregistered {
                seq = unregister(&seq, cfg.seed.wrapping_add(i as u64))?;
            }
            TrainingSequence::prepare(&e.path, &seq, cfg.mode, cfg.eigenpairs, cache)
        })
        .collect()
}

pub fn train(cfg: &TrainConfig, manifest: &DatasetManifest, out: Option<&Path>) -> Result<Checkpoint> {
    cfg.validate()?;
    let cache = SpectralCache::from_env(manifest.sequences.len() + 1);
    let data = load_training_data(cfg, manifest, &cache)?;
    let mut ckpt = fresh_checkpoint(cfg, &data)?;
    ckpt.dataset_hash = Some(manifest.hash());
    fit(ckpt, &data, out)
}

/// Untrained checkpoint whose diffusion times start at the data's mean squared edge length.
pub fn fresh_checkpoint(cfg: &TrainConfig, data: &[TrainingSequence]) -> Result<Checkpoint> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::validation("no training sequences"));
    }
    let init_time =
        data.iter().map(|s| default_init_time(&s.source)).sum::<f64>() / data.len() as f64;
    Ok(Checkpoint::new(cfg.clone(), Model::new(cfg, init_time)?))
}

/// Runs the configured number of epochs on `ckpt`'s model. With `out` set,
/// checkpoints are written there at the configured cadence, at the end, and
/// (the last good state) when training diverges.
pub fn fit(mut ckpt: Checkpoint, data: &[TrainingSequence], out: Option<&Path>) -> Result<Checkpoint> {
    let cfg = ckpt.config.clone();
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::validation("no training sequences"));
    }
    let shapes: Vec<(usize, usize)> = ckpt.model.tensors().iter().map(|t| t.shape()).collect();
    let mut adam = Adam::new(cfg.adam, &shapes);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in ckpt.epoch..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.learning_rate_at(epoch);
        let frac = cfg.epoch_fraction(epoch);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(frame_seed(cfg.seed, epoch)));
        let mut loss_sum = 0.0;
        let mut parts_sum = LossComponents::default();
        let mut norm_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch) {
            let mut grads: Option<Vec<Tensor>> = None;
            for &i in batch {
                let seq = &data[i];
                let step = (|| {
                    let mut g = Graph::new();
                    let seed = sampling_seed(cfg.seed, epoch, i);
                    let (loss, parts) = sequence_loss(&mut g, &ckpt.model, &cfg, seq, frac, seed)?;
                    let value = g.value(loss).item();
                    if !value.is_finite() {
                        return Err(Error::numerical(format!("loss is {value}")));
                    }
                    let gr = g.backward(loss).params(&g);
                    if gr.iter().any(|t| !t.is_finite()) {
                        return Err(Error::numerical("non-finite gradient"));
                    }
                    Ok((value, parts, gr))
                })();
                let (value, parts, gr) = match step {
                    Ok(s) => s,
                    Err(Error::Numerical(msg)) => {
                        return Err(diverged(&mut ckpt, out, epoch, &seq.name, &msg));
                    }
                    Err(e) => return Err(e),
                };
                loss_sum += value;
                if let Some(p) = parts {
                    parts_sum.mse += p.mse;
                    parts_sum.normal += p.normal;
                    parts_sum.aiap += p.aiap;
                    parts_sum.weighted_aiap += p.weighted_aiap;
                    parts_sum.total += p.total;
                }
                let scale = 1.0 / batch.len() as f64;
                match grads.as_mut() {
                    None => {
                        grads = Some(
                            gr.into_iter()
                                .map(|mut t| {
                                    t.scale_in_place(scale);
                                    t
                                })
                                .collect(),
                        )
                    }
                    Some(acc) => {
                        for (a, mut t) in acc.iter_mut().zip(gr) {
                            t.scale_in_place(scale);
                            a.add_assign(&t);
                        }
                    }
                }
            }
            let mut grads = grads.expect("batches are non-empty");
            norm_sum += clip_global_norm(&mut grads, cfg.grad_clip);
            adam.step(ckpt.model.tensors_mut(), &grads, lr);
            batches += 1;
        }
        let n = data.len() as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            learning_rate: lr,
            loss: loss_sum / n,
            components: (cfg.mode == TrainMode::Registered).then(|| LossComponents {
                mse: parts_sum.mse / n,
                normal: parts_sum.normal / n,
                aiap: parts_sum.aiap / n,
                weighted_aiap: parts_sum.weighted_aiap / n,
                total: parts_sum.total / n,
            }),
            grad_norm: norm_sum / batches as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}/{}: loss {:.6e} (lr {:.3e}, grad norm {:.3e}, {:.1}s)",
            record.epoch,
            cfg.epochs,
            record.loss,
            lr,
            record.grad_norm,
            record.seconds
        );
        ckpt.history.push(record);
        ckpt.epoch = epoch + 1;
        if let Some(path) = out {
            if cfg.checkpoint_every > 0 && ckpt.epoch % cfg.checkpoint_every == 0 {
                ckpt.stamp();
                ckpt.save(path)?;
            }
        }
    }
    ckpt.stamp();
    if let Some(path) = out {
        ckpt.save(path)?;
    }
    Ok(ckpt)
}

fn diverged(ckpt: &mut Checkpoint, out: Option<&Path>, epoch: usize, name: &str, msg: &str) -> Error {
    ckpt.stamp();
    let saved = match out {
        Some(path) => match ckpt.save(path) {
            Ok(()) => format!("; last good checkpoint (epoch {}) saved to {}", ckpt.epoch, path.display()),
            Err(e) => format!("; saving the last good checkpoint failed: {e}"),
        },
        None => String::new(),
    };
    Error::numerical(format!("training diverged in epoch {} on {name}: {msg}{saved}", epoch + 1))
}

#[cfg(test)]
mod tests {
    use super::checkpoint::tests::tiny_config;
    use super::*;
    use crate::mesh::fixtures::icosphere;
    use crate::nn::testing::check_param_grads;

    /// Non-rigid bend of a small sphere over `frames` frames.
    fn bending(frames: usize) -> MotionSequence {
        let base = icosphere(0);
        MotionSequence::new(
            (0..frames)
                .map(|t| {
                    let a = 0.15 * t as f64;
                    base.transformed(|p| [p[0], p[1] + a * p[0] * p[0], p[2] * (1.0 + 0.5 * a)])
                })
                .collect(),
        )
        .unwrap()
    }

    fn micro(mode: TrainMode, frames: usize) -> (TrainConfig, Vec<TrainingSequence>) {
        let cfg = TrainConfig {
            mode,
            eigenpairs: 6,
            ..tiny_config()
        };
        let cache = SpectralCache::new(4);
        let seq = TrainingSequence::prepare("bend", &bending(frames), mode, 6, &cache).unwrap();
        (cfg, vec![seq])
    }

    #[test]
    fn registered_mode_rejects_varying_topology() {
        let seq = bending(3);
        let mut frames = seq.frames.clone();
        frames[2] = icosphere(1);
        let mixed = MotionSequence::new(frames).unwrap();
        let cache = SpectralCache::new(1);
        let err = TrainingSequence::prepare("x", &mixed, TrainMode::Registered, 6, &cache);
        assert!(matches!(err, Err(Error::Validation(_))));
        assert!(TrainingSequence::prepare("x", &mixed, TrainMode::Unregistered, 6, &cache).is_ok());
        let single = MotionSequence::new(vec![icosphere(0)]).unwrap();
        assert!(TrainingSequence::prepare("x", &single, TrainMode::Registered, 6, &cache).is_err());
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let (cfg, data) = micro(TrainMode::Registered, 4);
        let mut model = fresh_checkpoint(&cfg, &data).unwrap().model;
        // Move the decoder off its zero initialization so every block gets gradient.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in model.generator.tensors_mut() {
            for x in t.data_mut() {
                *x += rng.gen_range(-0.2..0.2);
            }
        }
        let loss = |m: &Model| {
            let mut g = Graph::new();
            let (l, _) = sequence_loss(&mut g, m, &cfg, &data[0], 1.0, 7).unwrap();
            (g, l)
        };
        check_param_grads(&mut model, 60, 1e-6, 1e-3, 11, &loss);
    }

    #[test]
    fn unregistered_loss_gradient_matches_finite_differences() {
        let (cfg, data) = micro(TrainMode::Unregistered, 3);
        let mut model = fresh_checkpoint(&cfg, &data).unwrap().model;
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in model.generator.tensors_mut() {
            for x in t.data_mut() {
                *x += rng.gen_range(-0.2..0.2);
            }
        }
        let loss = |m: &Model| {
            let mut g = Graph::new();
            let (l, _) = sequence_loss(&mut g, m, &cfg, &data[0], 1.0, 7).unwrap();
            (g, l)
        };
        check_param_grads(&mut model, 40, 1e-6, 1e-3, 12, &loss);
    }

    #[test]
    fn fixed_seeds_reproduce_the_loss_curve() {
        let (mut cfg, data) = micro(TrainMode::Registered, 4);
        cfg.epochs = 6;
        let a = fit(fresh_checkpoint(&cfg, &data).unwrap(), &data, None).unwrap();
        let b = fit(fresh_checkpoint(&cfg, &data).unwrap(), &data, None).unwrap();
        let la: Vec<f64> = a.history.iter().map(|r| r.loss).collect();
        let lb: Vec<f64> = b.history.iter().map(|r| r.loss).collect();
        assert_eq!(la, lb);
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch, 6);
    }

    #[test]
    fn isometry_term_switches_on_at_the_configured_fraction() {
        let (mut cfg, data) = micro(TrainMode::Registered, 4);
        cfg.epochs = 5;
        cfg.loss.lambda_i_start_fraction = 0.6;
        let c = fit(fresh_checkpoint(&cfg, &data).unwrap(), &data, None).unwrap();
        let w: Vec<f64> = c
            .history
            .iter()
            .map(|r| r.components.unwrap().weighted_aiap)
            .collect();
        assert!(w[..3].iter().all(|&x| x == 0.0), "{w:?}");
        assert!(w[3..].iter().all(|&x| x > 0.0), "{w:?}");
        // The untrained decoder leaves the source unmoved, which is exactly isometric.
        assert_eq!(c.history[0].components.unwrap().aiap, 0.0);
        assert!(c.history[1..].iter().all(|r| r.components.unwrap().aiap > 0.0));
    }

    #[test]
    fn divergence_keeps_the_last_good_checkpoint() {
        let (mut cfg, data) = micro(TrainMode::Registered, 4);
        cfg.epochs = 50;
        cfg.learning_rate = 1e200;
        cfg.grad_clip = 0.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let err = fit(fresh_checkpoint(&cfg, &data).unwrap(), &data, Some(&path)).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
        let saved = Checkpoint::load(&path).unwrap();
        assert!(saved.model.tensors().iter().all(|t| t.is_finite()));
        assert_eq!(saved.history.len(), saved.epoch);
    }

    #[test]
    fn short_run_reduces_the_loss() {
        let (mut cfg, data) = micro(TrainMode::Registered, 4);
        cfg.epochs = 60;
        cfg.learning_rate = 3e-3;
        let c = fit(fresh_checkpoint(&cfg, &data).unwrap(), &data, None).unwrap();
        let first = c.history[0].loss;
        let last = c.history.last().unwrap().loss;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }
}
