//! Training losses, evaluation metrics and the remeshing deviation statistic.
//!
//! Every loss exists in two forms: a plain function over tensors for evaluation and
//! a graph node (`*_var`) with an analytic derivative for training. Sequence losses
//! average over the predicted frames `t = 1..T`; frame 0 is the fixed source.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Function, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::{normals_from_positions, EdgeList, PointIndex, RemeshVariant, DEGENERATE_AREA};

/// Source edges shorter than this are left out of the isometry term.
pub const MIN_EDGE_LENGTH: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_n: f64,
    pub lambda_i: f64,
    /// Fraction of training after which the isometry term is switched on.
    pub lambda_i_start_fraction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_n: 1e-4,
            lambda_i: 1e-5,
            lambda_i_start_fraction: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x >= 0.0 && x.is_finite();
        if !ok(self.lambda_n) || !ok(self.lambda_i) {
            return Err(Error::validation("loss weights must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.lambda_i_start_fraction) {
            return Err(Error::validation("lambda_i_start_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Weight of the isometry term at `epoch_fraction` of training.
    pub fn isometry_weight(&self, epoch_fraction: f64) -> f64 {
        if epoch_fraction >= self.lambda_i_start_fraction {
            self.lambda_i
        } else {
            0.0
        }
    }
}

/// Loss terms of one evaluation. `weighted_aiap` is the isometry contribution
/// actually added to `total` (zero before the term is switched on).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub mse: f64,
    pub normal: f64,
    pub aiap: f64,
    pub weighted_aiap: f64,
    pub total: f64,
}

/// `mse + lambda_n * normal + [fraction >= start] * lambda_i * aiap`.
pub fn combine(mse: f64, normal: f64, aiap: f64, w: &LossWeights, epoch_fraction: f64) -> LossComponents {
    let weighted_aiap = w.isometry_weight(epoch_fraction) * aiap;
    LossComponents {
        mse,
        normal,
        aiap,
        weighted_aiap,
        total: mse + w.lambda_n * normal + weighted_aiap,
    }
}

fn check_frames(pred: &[Tensor], truth: &[Tensor]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::validation("loss needs at least one frame"));
    }
    if pred.len() != truth.len() {
        return Err(Error::validation(format!(
            "frame counts differ: {} predicted, {} true",
            pred.len(),
            truth.len()
        )));
    }
    for (t, (p, q)) in pred.iter().zip(truth).enumerate() {
        if p.shape() != q.shape() || p.cols() != 3 {
            return Err(Error::validation(format!(
                "frame {t}: predicted {:?} vs true {:?}",
                p.shape(),
                q.shape()
            )));
        }
    }
    Ok(())
}

/// `(1 / (T N)) sum_t sum_i |v_it - v^_it|^2`.
pub fn mse_loss(pred: &[Tensor], truth: &[Tensor]) -> Result<f64> {
    check_frames(pred, truth)?;
    let n = pred[0].rows();
    let s: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, q)| p.data().iter().zip(q.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(s / (pred.len() * n) as f64)
}

struct SquaredError {
    target: Tensor,
}

impl Function for SquaredError {
    fn name(&self) -> &'static str {
        "squared_error"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Tensor {
        let s = inputs[0]
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Tensor::scalar(s)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let g = 2.0 * grad.item();
        let mut out = inputs[0].clone();
        for (o, t) in out.data_mut().iter_mut().zip(self.target.data()) {
            *o = g * (*o - t);
        }
        vec![Some(out)]
    }
}

/// Sum of per-frame scalars scaled by `scale`.
fn scaled_sum(g: &mut Graph, terms: Vec<Var>, scale: f64) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    g.affine(acc, scale, 0.0)
}

pub fn mse_var(g: &mut Graph, pred: &[Var], truth: &[Tensor]) -> Result<Var> {
    let values: Vec<Tensor> = pred.iter().map(|&v| g.value(v).clone()).collect();
    check_frames(&values, truth)?;
    let n = values[0].rows();
    let terms = pred
        .iter()
        .zip(truth)
        .map(|(&p, t)| g.custom(&[p], Box::new(SquaredError { target: t.clone() })))
        .collect();
    Ok(scaled_sum(g, terms, 1.0 / (pred.len() * n) as f64))
}

/// Unit reference normals with `None` where the reference has no normal.
fn reference_normals(truth: &[Vec3]) -> Vec<Option<Vec3>> {
    truth
        .iter()
        .map(|n| if geom::norm2(*n) > 0.5 { Some(*n) } else { None })
        .collect()
}

/// Sum over vertices of `1 - n_i . m_i` with the count of vertices used; vertices
/// without a normal on either side are skipped.
fn normal_terms(positions: &[Vec3], faces: &[[usize; 3]], truth: &[Option<Vec3>]) -> (f64, usize) {
    let pred = normals_from_positions(positions, faces);
    let mut skip = vec![false; positions.len()];
    for &i in &pred.zero {
        skip[i] = true;
    }
    let mut s = 0.0;
    let mut count = 0;
    for (i, (n, m)) in pred.normals.iter().zip(truth).enumerate() {
        if let (false, Some(m)) = (skip[i], m) {
            s += 1.0 - geom::dot(*n, *m);
            count += 1;
        }
    }
    (s, count)
}

/// Mean of `1 - n_i . m_i` between normals of the predicted positions (with the
/// source connectivity `faces`) and reference normals. Also used as the cosine
/// dissimilarity metric.
pub fn normal_loss(pred: &[Tensor], faces: &[[usize; 3]], truth_normals: &[Vec<Vec3>]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth_normals.len() {
        return Err(Error::validation("normal loss needs matching, non-empty frame lists"));
    }
    let mut s = 0.0;
    let mut count = 0;
    for (p, m) in pred.iter().zip(truth_normals) {
        if m.len() != p.rows() {
            return Err(Error::validation("reference normals differ in count from vertices"));
        }
        let (a, c) = normal_terms(&p.to_points(), faces, &reference_normals(m));
        s += a;
        count += c;
    }
    let skipped = pred.len() * pred[0].rows() - count;
    if skipped > 0 {
        log::warn!("normal loss skipped {skipped} vertex-frames without a normal");
    }
    if count == 0 {
        return Err(Error::numerical("no vertex has a usable normal"));
    }
    Ok(s / count as f64)
}

struct NormalTerm {
    faces: Vec<[usize; 3]>,
    truth: Vec<Option<Vec3>>,
}

impl Function for NormalTerm {
    fn name(&self) -> &'static str {
        "normal_loss"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Tensor {
        Tensor::scalar(normal_terms(&inputs[0].to_points(), &self.faces, &self.truth).0)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let p = inputs[0].to_points();
        let n = p.len();
        let mut acc = vec![[0.0; 3]; n];
        let mut used = vec![false; self.faces.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let c = geom::tri_cross(p[f[0]], p[f[1]], p[f[2]]);
            if 0.5 * geom::norm(c) < DEGENERATE_AREA {
                continue;
            }
            used[fi] = true;
            for &i in f {
                acc[i] = geom::add(acc[i], c);
            }
        }
        // d(1 - a/|a| . m)/da = -(m - n (n . m)) / |a|
        let g = grad.item();
        let da: Vec<Vec3> = acc
            .iter()
            .zip(&self.truth)
            .map(|(a, m)| {
                let len = geom::norm(*a);
                match m {
                    Some(m) if len > 0.0 => {
                        let nn = geom::scale(*a, 1.0 / len);
                        let proj = geom::sub(*m, geom::scale(nn, geom::dot(nn, *m)));
                        geom::scale(proj, -g / len)
                    }
                    _ => [0.0; 3],
                }
            })
            .collect();
        let mut out = vec![[0.0; 3]; n];
        for (fi, f) in self.faces.iter().enumerate() {
            if !used[fi] {
                continue;
            }
            let gc = geom::add(geom::add(da[f[0]], da[f[1]]), da[f[2]]);
            let e1 = geom::sub(p[f[1]], p[f[0]]);
            let e2 = geom::sub(p[f[2]], p[f[0]]);
            let g1 = geom::cross(e2, gc);
            let g2 = geom::cross(gc, e1);
            out[f[1]] = geom::add(out[f[1]], g1);
            out[f[2]] = geom::add(out[f[2]], g2);
            out[f[0]] = geom::sub(out[f[0]], geom::add(g1, g2));
        }
        vec![Some(Tensor::from_points(&out))]
    }
}

pub fn normal_var(
    g: &mut Graph,
    pred: &[Var],
    faces: &[[usize; 3]],
    truth_normals: &[Vec<Vec3>],
) -> Result<Var> {
    if pred.is_empty() || pred.len() != truth_normals.len() {
        return Err(Error::validation("normal loss needs matching, non-empty frame lists"));
    }
    let mut count = 0;
    let mut terms = Vec::with_capacity(pred.len());
    for (&p, m) in pred.iter().zip(truth_normals) {
        let truth = reference_normals(m);
        count += normal_terms(&g.value(p).to_points(), faces, &truth).1;
        terms.push(g.custom(
            &[p],
            Box::new(NormalTerm {
                faces: faces.to_vec(),
                truth,
            }),
        ));
    }
    if count == 0 {
        return Err(Error::numerical("no vertex has a usable normal"));
    }
    Ok(scaled_sum(g, terms, 1.0 / count as f64))
}

/// Source edges long enough to serve as isometry references, with their lengths.
fn reference_edges(source: &Tensor, edges: &EdgeList) -> Result<(Vec<[usize; 2]>, Vec<f64>)> {
    let p = source.to_points();
    let mut kept = Vec::with_capacity(edges.len());
    let mut lengths = Vec::with_capacity(edges.len());
    for &[i, j] in edges.iter() {
        let l = geom::norm(geom::sub(p[i], p[j]));
        if l >= MIN_EDGE_LENGTH {
            kept.push([i, j]);
            lengths.push(l);
        }
    }
    if kept.is_empty() {
        return Err(Error::validation("every source edge is degenerate"));
    }
    Ok((kept, lengths))
}

fn aiap_sum(p: &Tensor, edges: &[[usize; 2]], rest: &[f64]) -> f64 {
    edges
        .iter()
        .zip(rest)
        .map(|(&[i, j], &l0)| {
            let l = geom::norm(geom::sub(row3(p, i), row3(p, j)));
            ((l - l0) / l0).powi(2)
        })
        .sum()
}

fn row3(t: &Tensor, i: usize) -> Vec3 {
    let r = t.row(i);
    [r[0], r[1], r[2]]
}

/// `(1 / (T |E|)) sum_t sum_ij ((|v_it - v_jt| - l0_ij) / l0_ij)^2` with rest lengths
/// from the source.
pub fn aiap_loss(pred: &[Tensor], source: &Tensor, edges: &EdgeList) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::validation("isometry loss needs at least one frame"));
    }
    let (kept, rest) = reference_edges(source, edges)?;
    let s: f64 = pred.iter().map(|p| aiap_sum(p, &kept, &rest)).sum();
    Ok(s / (pred.len() * kept.len()) as f64)
}

struct AiapTerm {
    edges: std::sync::Arc<Vec<[usize; 2]>>,
    rest: std::sync::Arc<Vec<f64>>,
}

impl Function for AiapTerm {
    fn name(&self) -> &'static str {
        "aiap_loss"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Tensor {
        Tensor::scalar(aiap_sum(inputs[0], &self.edges, &self.rest))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let p = inputs[0];
        let g = grad.item();
        let mut out = Tensor::zeros(p.rows(), 3);
        for (&[i, j], &l0) in self.edges.iter().zip(self.rest.iter()) {
            let d = geom::sub(row3(p, i), row3(p, j));
            let l = geom::norm(d);
            if l == 0.0 {
                continue;
            }
            let c = g * 2.0 * (l - l0) / (l0 * l0 * l);
            for k in 0..3 {
                out.row_mut(i)[k] += c * d[k];
                out.row_mut(j)[k] -= c * d[k];
            }
        }
        vec![Some(out)]
    }
}

pub fn aiap_var(g: &mut Graph, pred: &[Var], source: &Tensor, edges: &EdgeList) -> Result<Var> {
    if pred.is_empty() {
        return Err(Error::validation("isometry loss needs at least one frame"));
    }
    let (kept, rest) = reference_edges(source, edges)?;
    let scale = 1.0 / (pred.len() * kept.len()) as f64;
    let kept = std::sync::Arc::new(kept);
    let rest = std::sync::Arc::new(rest);
    let terms = pred
        .iter()
        .map(|&p| {
            g.custom(
                &[p],
                Box::new(AiapTerm {
                    edges: kept.clone(),
                    rest: rest.clone(),
                }),
            )
        })
        .collect();
    Ok(scaled_sum(g, terms, scale))
}

/// The two directed terms of the chamfer distance:
/// (mean over `a` of squared distance to `b`, mean over `b` of squared distance to `a`).
pub fn chamfer_terms(a: &[Vec3], b: &[Vec3]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation("chamfer distance of an empty point set"));
    }
    let ib = PointIndex::new(b);
    let ia = PointIndex::new(a);
    let ab = a.iter().map(|p| ib.nearest(p).1).sum::<f64>() / a.len() as f64;
    let ba = b.iter().map(|q| ia.nearest(q).1).sum::<f64>() / b.len() as f64;
    Ok((ab, ba))
}

pub fn chamfer(pred: &[Vec3], target: &[Vec3]) -> Result<f64> {
    let (a, b) = chamfer_terms(pred, target)?;
    Ok(a + b)
}

/// Mean per-frame chamfer distance.
pub fn chamfer_sequence_loss(pred: &[Vec<Vec3>], target: &[Vec<Vec3>]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::validation(format!(
            "chamfer sequence lengths differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    let mut s = 0.0;
    for (p, q) in pred.iter().zip(target) {
        s += chamfer(p, q)?;
    }
    Ok(s / pred.len() as f64)
}

struct ChamferTerm {
    target: Vec<Vec3>,
    target_index: std::sync::Arc<PointIndex>,
    /// Nearest target of each predicted point and nearest prediction of each target.
    matches: Option<(Vec<usize>, Vec<usize>)>,
}

impl Function for ChamferTerm {
    fn name(&self) -> &'static str {
        "chamfer"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Tensor {
        let p = inputs[0].to_points();
        let pi = PointIndex::new(&p);
        let (mut ab, mut ba) = (0.0, 0.0);
        let fwd: Vec<usize> = p
            .iter()
            .map(|x| {
                let (j, d) = self.target_index.nearest(x);
                ab += d;
                j
            })
            .collect();
        let bwd: Vec<usize> = self
            .target
            .iter()
            .map(|q| {
                let (i, d) = pi.nearest(q);
                ba += d;
                i
            })
            .collect();
        self.matches = Some((fwd, bwd));
        Tensor::scalar(ab / p.len() as f64 + ba / self.target.len() as f64)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let p = inputs[0];
        let (fwd, bwd) = self.matches.as_ref().unwrap();
        let g = grad.item();
        let ca = 2.0 * g / p.rows() as f64;
        let cb = 2.0 * g / self.target.len() as f64;
        let mut out = Tensor::zeros(p.rows(), 3);
        for (i, &j) in fwd.iter().enumerate() {
            let q = self.target[j];
            for k in 0..3 {
                out.row_mut(i)[k] += ca * (p.get(i, k) - q[k]);
            }
        }
        for (q, &i) in self.target.iter().zip(bwd) {
            for k in 0..3 {
                out.row_mut(i)[k] += cb * (p.get(i, k) - q[k]);
            }
        }
        vec![Some(out)]
    }
}

/// Differentiable mean per-frame chamfer distance to fixed target point sets.
pub fn chamfer_sequence_var(g: &mut Graph, pred: &[Var], target: &[Vec<Vec3>]) -> Result<Var> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::validation(format!(
            "chamfer sequence lengths differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    let mut terms = Vec::with_capacity(pred.len());
    for (&p, q) in pred.iter().zip(target) {
        if q.is_empty() || g.shape(p).0 == 0 {
            return Err(Error::validation("chamfer distance of an empty point set"));
        }
        terms.push(g.custom(
            &[p],
            Box::new(ChamferTerm {
                target: q.clone(),
                target_index: std::sync::Arc::new(PointIndex::new(q)),
                matches: None,
            }),
        ));
    }
    Ok(scaled_sum(g, terms, 1.0 / pred.len() as f64))
}

/// `|remesh - orig| / orig`.
pub fn relative_deviation(metric_orig: f64, metric_remesh: f64) -> Result<f64> {
    if !(metric_orig > 0.0) {
        return Err(Error::validation(format!(
            "relative deviation needs a positive reference metric, got {metric_orig}"
        )));
    }
    Ok((metric_remesh - metric_orig).abs() / metric_orig)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub name: String,
    pub mse: Option<f64>,
    pub cosim: Option<f64>,
    pub chamfer: Option<f64>,
}

/// Metrics averaged over sequences with the per-sequence breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: Option<f64>,
    pub cosim: Option<f64>,
    pub chamfer: Option<f64>,
    pub sequences: Vec<SequenceMetrics>,
}

impl MetricsReport {
    pub fn from_sequences(sequences: Vec<SequenceMetrics>) -> Self {
        let mean = |f: &dyn Fn(&SequenceMetrics) -> Option<f64>| {
            let v: Vec<f64> = sequences.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        MetricsReport {
            mse: mean(&|s| s.mse),
            cosim: mean(&|s| s.cosim),
            chamfer: mean(&|s| s.chamfer),
            sequences,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// One row of the robustness table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub variant: RemeshVariant,
    pub mse: f64,
    pub cosim: f64,
    pub mse_deviation: f64,
    pub cosim_deviation: f64,
}

pub fn write_deviation_csv(rows: &[DeviationRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("variant,mse,cosim,mse_deviation,cosim_deviation\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{:?}\n",
            r.variant, r.mse, r.cosim, r.mse_deviation, r.cosim_deviation
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
