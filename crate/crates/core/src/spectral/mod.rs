//! Discrete operators for heat diffusion on a surface: cotangent Laplacian, lumped
//! mass, a truncated eigenbasis, spectral diffusion and tangent-plane gradients.

mod container;
mod eigen;
mod gradient;
mod laplacian;
mod sparse;

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

pub use container::{read_operators, write_operators, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use gradient::{tangent_frame, Frame};
pub use laplacian::{cotan_laplacian, lumped_mass};
pub use sparse::SparseMatrix;
pub(crate) use eigen::symmetric_eigen;

use crate::autodiff::{Function, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;

pub const DEFAULT_EIGENPAIRS: usize = 64;
/// Environment variable naming a directory for the on-disk operator cache.
pub const CACHE_DIR_ENV: &str = "MESHMOTION_CACHE_DIR";

/// Precomputed operators of one mesh. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralOps {
    pub laplacian: SparseMatrix,
    pub mass: Vec<f64>,
    /// Ascending, non-negative.
    pub eigenvalues: Vec<f64>,
    /// N x k, orthonormal under the mass inner product.
    pub eigenvectors: Tensor,
    pub grad_x: SparseMatrix,
    pub grad_y: SparseMatrix,
    pub frames: Vec<Frame>,
    /// Vertices whose gradient could not be fit (valence below 2).
    pub degenerate_gradient: Vec<bool>,
    pub mesh_hash: String,
    /// `M * eigenvectors`, used to project fields onto the basis.
    mass_eigenvectors: Tensor,
}

impl SpectralOps {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        laplacian: SparseMatrix,
        mass: Vec<f64>,
        eigenvalues: Vec<f64>,
        eigenvectors: Tensor,
        grad_x: SparseMatrix,
        grad_y: SparseMatrix,
        frames: Vec<Frame>,
        degenerate_gradient: Vec<bool>,
        mesh_hash: String,
    ) -> Self {
        let mut mass_eigenvectors = eigenvectors.clone();
        let k = eigenvectors.cols();
        for (i, m) in mass.iter().enumerate() {
            for x in &mut mass_eigenvectors.data_mut()[i * k..(i + 1) * k] {
                *x *= m;
            }
        }
        SpectralOps {
            laplacian,
            mass,
            eigenvalues,
            eigenvectors,
            grad_x,
            grad_y,
            frames,
            degenerate_gradient,
            mesh_hash,
            mass_eigenvectors,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.mass.len()
    }

    pub fn num_eigenpairs(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Operators of the same mesh with vertices reordered so that new vertex `i`
    /// is old vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<SpectralOps> {
        let n = self.num_vertices();
        let mut inverse = vec![usize::MAX; n];
        if perm.len() != n {
            return Err(Error::validation("permutation length differs from vertex count"));
        }
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::validation("not a permutation"));
            }
            inverse[old] = new;
        }
        let remap = |m: &SparseMatrix| {
            let mut entries = Vec::with_capacity(m.nnz());
            for (new, &old) in perm.iter().enumerate() {
                let (c, v) = m.row(old);
                entries.extend(c.iter().zip(v).map(|(&j, &x)| (new, inverse[j], x)));
            }
            SparseMatrix::from_triplets(n, n, entries)
        };
        Ok(SpectralOps::from_parts(
            remap(&self.laplacian),
            perm.iter().map(|&i| self.mass[i]).collect(),
            self.eigenvalues.clone(),
            self.eigenvectors.select_rows(perm),
            remap(&self.grad_x),
            remap(&self.grad_y),
            perm.iter().map(|&i| self.frames[i]).collect(),
            perm.iter().map(|&i| self.degenerate_gradient[i]).collect(),
            self.mesh_hash.clone(),
        ))
    }

    /// Spectral coefficients `Φᵀ M x` of an N x C field.
    pub fn project(&self, field: &Tensor) -> Tensor {
        self.mass_eigenvectors.matmul_tn(field)
    }
}

/// Builds every operator for `mesh` with the `k` lowest eigenpairs.
pub fn build_operators(mesh: &TriMesh, k: usize) -> Result<SpectralOps> {
    let components = mesh.connected_components();
    if components != 1 {
        return Err(Error::Disconnected { components });
    }
    let n = mesh.num_vertices();
    if k == 0 || k > n - 1 {
        return Err(Error::validation(format!(
            "eigenpair count {k} must be between 1 and N - 1 = {}",
            n - 1
        )));
    }
    let laplacian = cotan_laplacian(mesh);
    let mass = lumped_mass(mesh);
    let pairs = eigen::smallest_eigenpairs(&laplacian, &mass, k)?;
    let mut eigenvectors = Tensor::zeros(n, k);
    for (j, phi) in pairs.vectors.iter().enumerate() {
        for (i, &x) in phi.iter().enumerate() {
            eigenvectors.set(i, j, x);
        }
    }
    let grads = gradient::gradient_operators(mesh);
    Ok(SpectralOps::from_parts(
        laplacian,
        mass,
        pairs.values,
        eigenvectors,
        grads.grad_x,
        grads.grad_y,
        grads.frames,
        grads.degenerate,
        mesh.content_hash(),
    ))
}

/// Heat flow per channel: `Φ diag(exp(-λ t_c)) Φᵀ M x`. With truncated k the
/// result is also low-pass filtered.
pub fn diffuse(ops: &SpectralOps, field: &Tensor, times: &[f64]) -> Result<Tensor> {
    if field.rows() != ops.num_vertices() || field.cols() != times.len() {
        return Err(Error::validation(format!(
            "diffuse: field is {}x{}, expected {}x{}",
            field.rows(),
            field.cols(),
            ops.num_vertices(),
            times.len()
        )));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::validation(format!(
            "diffusion time must be non-negative, got {t}"
        )));
    }
    let (_, _, out) = diffuse_parts(ops, field, times);
    Ok(out)
}

/// Returns (coefficients, decay factors, output).
fn diffuse_parts(ops: &SpectralOps, field: &Tensor, times: &[f64]) -> (Tensor, Tensor, Tensor) {
    let coeffs = ops.project(field);
    let k = ops.num_eigenpairs();
    let c = times.len();
    let mut decay = Tensor::zeros(k, c);
    let mut scaled = coeffs.clone();
    for j in 0..k {
        for ch in 0..c {
            let d = (-ops.eigenvalues[j] * times[ch]).exp();
            decay.set(j, ch, d);
            scaled.set(j, ch, d * coeffs.get(j, ch));
        }
    }
    let out = ops.eigenvectors.matmul(&scaled);
    (coeffs, decay, out)
}

/// Gradient of a scalar field in each vertex's tangent frame.
pub fn tangent_gradient(ops: &SpectralOps, field: &[f64]) -> Result<Vec<[f64; 2]>> {
    if field.len() != ops.num_vertices() {
        return Err(Error::validation(format!(
            "tangent_gradient: field has {} values, mesh has {} vertices",
            field.len(),
            ops.num_vertices()
        )));
    }
    if field.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("tangent_gradient: field is not finite"));
    }
    let gx = ops.grad_x.mul_vec(field);
    let gy = ops.grad_y.mul_vec(field);
    Ok(gx.into_iter().zip(gy).map(|(a, b)| [a, b]).collect())
}

struct DiffuseFn {
    ops: Arc<SpectralOps>,
    coeffs: Option<Tensor>,
    decay: Option<Tensor>,
}

impl Function for DiffuseFn {
    fn name(&self) -> &'static str {
        "diffuse"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Tensor {
        let (coeffs, decay, out) = diffuse_parts(&self.ops, inputs[0], inputs[1].data());
        self.coeffs = Some(coeffs);
        self.decay = Some(decay);
        out
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let coeffs = self.coeffs.as_ref().unwrap();
        let decay = self.decay.as_ref().unwrap();
        let gc = self.ops.eigenvectors.matmul_tn(grad);
        let gx = needs[0].then(|| {
            let mut scaled = gc.clone();
            for (s, d) in scaled.data_mut().iter_mut().zip(decay.data()) {
                *s *= d;
            }
            self.ops.mass_eigenvectors.matmul(&scaled)
        });
        let gt = needs[1].then(|| {
            let (k, c) = gc.shape();
            let mut out = vec![0.0; c];
            for j in 0..k {
                let lam = self.ops.eigenvalues[j];
                for (ch, o) in out.iter_mut().enumerate() {
                    *o -= gc.get(j, ch) * lam * decay.get(j, ch) * coeffs.get(j, ch);
                }
            }
            Tensor::row_vector(out)
        });
        vec![gx, gt]
    }
}

/// Differentiable [`diffuse`]: `x` is N x C, `times` is 1 x C and must be non-negative.
pub fn diffuse_var(g: &mut Graph, ops: &Arc<SpectralOps>, x: Var, times: Var) -> Var {
    g.custom(
        &[x, times],
        Box::new(DiffuseFn {
            ops: ops.clone(),
            coeffs: None,
            decay: None,
        }),
    )
}

struct GradientFn {
    ops: Arc<SpectralOps>,
}

impl Function for GradientFn {
    fn name(&self) -> &'static str {
        "tangent_gradient"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Tensor {
        let x = inputs[0];
        let gx = self.ops.grad_x.mul_dense(x);
        let gy = self.ops.grad_y.mul_dense(x);
        let (n, c) = x.shape();
        let mut out = Tensor::zeros(n, 2 * c);
        for i in 0..n {
            out.row_mut(i)[..c].copy_from_slice(gx.row(i));
            out.row_mut(i)[c..].copy_from_slice(gy.row(i));
        }
        out
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let (n, c) = inputs[0].shape();
        let mut g1 = Tensor::zeros(n, c);
        let mut g2 = Tensor::zeros(n, c);
        for i in 0..n {
            g1.row_mut(i).copy_from_slice(&grad.row(i)[..c]);
            g2.row_mut(i).copy_from_slice(&grad.row(i)[c..]);
        }
        let mut out = self.ops.grad_x.transpose_mul_dense(&g1);
        out.add_assign(&self.ops.grad_y.transpose_mul_dense(&g2));
        vec![Some(out)]
    }
}

/// Differentiable tangent gradients of every channel of an N x C field,
/// returned as the (x, y) frame components, each N x C.
pub fn gradient_var(g: &mut Graph, ops: &Arc<SpectralOps>, x: Var) -> (Var, Var) {
    let c = g.shape(x).1;
    let both = g.custom(&[x], Box::new(GradientFn { ops: ops.clone() }));
    let gx = g.slice_cols(both, 0, c);
    let gy = g.slice_cols(both, c, c);
    (gx, gy)
}

/// Operators keyed by mesh content hash and eigenpair count, optionally mirrored in
/// a directory of binary containers.
pub struct SpectralCache {
    max_entries: usize,
    dir: Option<PathBuf>,
    inner: Mutex<CacheInner>,
}

#[derive(Default)]
struct CacheInner {
    map: HashMap<(String, usize), Arc<SpectralOps>>,
    order: VecDeque<(String, usize)>,
}

impl SpectralCache {
    pub fn new(max_entries: usize) -> Self {
        SpectralCache {
            max_entries: max_entries.max(1),
            dir: None,
            inner: Mutex::new(CacheInner::default()),
        }
    }

    pub fn with_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dir = Some(dir.into());
        self
    }

    /// Uses the directory named by [`CACHE_DIR_ENV`], if set.
    pub fn from_env(max_entries: usize) -> Self {
        let cache = SpectralCache::new(max_entries);
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => cache.with_dir(d),
            _ => cache,
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_build(&self, mesh: &TriMesh, k: usize) -> Result<Arc<SpectralOps>> {
        let key = (mesh.content_hash(), k);
        if let Some(ops) = self.inner.lock().unwrap().map.get(&key) {
            return Ok(ops.clone());
        }
        let ops = Arc::new(self.load_or_build(mesh, &key)?);
        let mut inner = self.inner.lock().unwrap();
        if let Some(existing) = inner.map.get(&key) {
            return Ok(existing.clone());
        }
        while inner.map.len() >= self.max_entries {
            let Some(old) = inner.order.pop_front() else { break };
            inner.map.remove(&old);
        }
        inner.map.insert(key.clone(), ops.clone());
        inner.order.push_back(key);
        Ok(ops)
    }

    fn load_or_build(&self, mesh: &TriMesh, key: &(String, usize)) -> Result<SpectralOps> {
        let Some(dir) = &self.dir else {
            return build_operators(mesh, key.1);
        };
        let path = dir.join(format!("{}-k{}.mmspec", key.0, key.1));
        if path.exists() {
            match read_operators(&path) {
                Ok(ops) if ops.mesh_hash == key.0 && ops.num_eigenpairs() == key.1 => {
                    return Ok(ops)
                }
                Ok(_) => log::warn!("{}: cache entry does not match, rebuilding", path.display()),
                Err(e) => log::warn!("{}: unreadable cache entry ({e}), rebuilding", path.display()),
            }
        }
        let ops = build_operators(mesh, key.1)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = path.with_extension("tmp");
        write_operators(&ops, &tmp)?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(ops)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom;
    use crate::mesh::fixtures::{grid, icosphere};
    use rand::{Rng, SeedableRng};

    fn bumpy_sphere(seed: u64) -> TriMesh {
        let m = icosphere(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v = m
            .vertices()
            .iter()
            .map(|p| geom::scale(*p, 1.0 + 0.05 * rng.gen::<f64>()))
            .collect();
        m.with_vertices(v).unwrap()
    }

    fn m_inner(ops: &SpectralOps, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&ops.mass).map(|((x, y), m)| x * y * m).sum()
    }

    fn column(t: &Tensor, j: usize) -> Vec<f64> {
        (0..t.rows()).map(|i| t.get(i, j)).collect()
    }

    #[test]
    fn kernel_is_constant() {
        for m in [icosphere(2), bumpy_sphere(1)] {
            let ops = build_operators(&m, 10).unwrap();
            assert!(ops.eigenvalues[0] < 1e-6);
            let phi0 = column(&ops.eigenvectors, 0);
            let expect = 1.0 / m.total_area().sqrt();
            assert!(phi0.iter().all(|&x| (x - expect).abs() < 1e-6 * expect));
            assert!(ops.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn sphere_first_band_is_threefold() {
        let ops = build_operators(&icosphere(3), 10).unwrap();
        let l = &ops.eigenvalues[1..4];
        let (lo, hi) = (l[0], l[2]);
        assert!(hi / lo - 1.0 < 0.05, "{l:?}");
        assert!((l[1] - 2.0).abs() < 0.1, "{l:?}");
    }

    #[test]
    fn eigenvectors_are_mass_orthonormal() {
        let ops = build_operators(&bumpy_sphere(2), 24).unwrap();
        for i in 0..24 {
            for j in 0..24 {
                let d = m_inner(&ops, &column(&ops.eigenvectors, i), &column(&ops.eigenvectors, j));
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn eigenfunction_decays_exponentially() {
        let ops = build_operators(&bumpy_sphere(3), 12).unwrap();
        let phi1 = Tensor::from_vec(ops.num_vertices(), 1, column(&ops.eigenvectors, 1));
        let t = 0.3;
        let out = diffuse(&ops, &phi1, &[t]).unwrap();
        let f = (-ops.eigenvalues[1] * t).exp();
        for (o, p) in out.data().iter().zip(phi1.data()) {
            assert!((o - f * p).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_time_projects_and_large_time_averages() {
        let m = bumpy_sphere(4);
        let n = m.num_vertices();
        let ops = build_operators(&m, 16).unwrap();
        let field = Tensor::from_vec(n, 2, (0..2 * n).map(|i| (i as f64 * 0.7).sin()).collect());
        let projected = ops.eigenvectors.matmul(&ops.project(&field));
        assert_eq!(diffuse(&ops, &field, &[0.0, 0.0]).unwrap(), projected);
        let out = diffuse(&ops, &field, &[1e6, 1e6]).unwrap();
        let area: f64 = ops.mass.iter().sum();
        for c in 0..2 {
            let mean = (0..n).map(|i| field.get(i, c) * ops.mass[i]).sum::<f64>() / area;
            assert!((0..n).all(|i| (out.get(i, c) - mean).abs() < 1e-9));
        }
        assert!(diffuse(&ops, &field, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn diffusion_contracts_and_commutes_with_channel_swap() {
        let m = bumpy_sphere(5);
        let n = m.num_vertices();
        let ops = build_operators(&m, 16).unwrap();
        let field = Tensor::from_vec(n, 2, (0..2 * n).map(|i| (i as f64 * 1.3).cos()).collect());
        let out = diffuse(&ops, &field, &[0.01, 0.2]).unwrap();
        for c in 0..2 {
            let (a, b) = (column(&field, c), column(&out, c));
            assert!(m_inner(&ops, &b, &b).sqrt() <= m_inner(&ops, &a, &a).sqrt() + 1e-8);
        }
        let swapped = Tensor::from_vec(n, 2, (0..n).flat_map(|i| [field.get(i, 1), field.get(i, 0)]).collect());
        let out2 = diffuse(&ops, &swapped, &[0.2, 0.01]).unwrap();
        for i in 0..n {
            assert_eq!(out2.get(i, 0), out.get(i, 1));
        }
    }

    #[test]
    fn diffusion_is_rotation_invariant() {
        let m = bumpy_sphere(6);
        let (s, c) = (0.6f64.sin(), 0.6f64.cos());
        let r = m.transformed(|p| [c * p[0] - s * p[2], p[1] + 0.0, s * p[0] + c * p[2]]);
        let r = r.transformed(|p| [p[0] + 1.0, p[1] - 2.0, p[2]]);
        let a = build_operators(&m, 16).unwrap();
        let b = build_operators(&r, 16).unwrap();
        let n = m.num_vertices();
        let field = Tensor::from_vec(n, 1, m.vertices().iter().map(|p| p[1] + p[0] * p[2]).collect());
        let fa = diffuse(&a, &field, &[0.05]).unwrap();
        let fb = diffuse(&b, &field, &[0.05]).unwrap();
        for (x, y) in fa.data().iter().zip(fb.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_field_gradient_on_flat_grid() {
        let m = grid(8);
        let ops = build_operators(&m, 8).unwrap();
        let fx: Vec<f64> = m.vertices().iter().map(|p| p[0]).collect();
        let g = tangent_gradient(&ops, &fx).unwrap();
        let nbrs = m.vertex_neighbors();
        for (i, gi) in g.iter().enumerate() {
            if nbrs[i].len() < 6 {
                continue; // boundary
            }
            let frame = ops.frames[i];
            let expect = [frame[0][0], frame[1][0]];
            assert!((gi[0] - expect[0]).abs() < 1e-9 && (gi[1] - expect[1]).abs() < 1e-9);
            assert!(((gi[0].hypot(gi[1])) - 1.0).abs() < 0.05);
        }
        let doubled: Vec<f64> = fx.iter().map(|x| 2.0 * x).collect();
        let g2 = tangent_gradient(&ops, &doubled).unwrap();
        for (a, b) in g.iter().zip(&g2) {
            assert!((2.0 * a[0] - b[0]).abs() < 1e-12 && (2.0 * a[1] - b[1]).abs() < 1e-12);
        }
        let constant = vec![3.0; m.num_vertices()];
        let g0 = tangent_gradient(&ops, &constant).unwrap();
        assert!(g0.iter().all(|v| v[0].abs() < 1e-12 && v[1].abs() < 1e-12));
    }

    #[test]
    fn disconnected_and_oversized_requests_fail() {
        let a = icosphere(0);
        let mut v = a.vertices().to_vec();
        v.extend(a.vertices().iter().map(|p| geom::add(*p, [5.0, 0.0, 0.0])));
        let mut f = a.faces().to_vec();
        f.extend(a.faces().iter().map(|t| t.map(|i| i + 12)));
        let two = TriMesh::new(v, f).unwrap();
        match build_operators(&two, 4) {
            Err(Error::Disconnected { components }) => assert_eq!(components, 2),
            other => panic!("expected disconnected error, got {other:?}"),
        }
        assert!(build_operators(&a, 12).is_err());
    }

    #[test]
    fn graph_ops_match_finite_differences() {
        let m = icosphere(1);
        let n = m.num_vertices();
        let ops = Arc::new(build_operators(&m, 10).unwrap());
        let x0 = Tensor::from_vec(n, 2, (0..2 * n).map(|i| (i as f64 * 0.37).sin()).collect());
        let t0 = Tensor::row_vector(vec![0.05, 0.2]);
        let eval = |x: &Tensor, t: &Tensor| {
            let mut g = Graph::new();
            let xv = g.variable(x.clone());
            let tv = g.variable(t.clone());
            let d = diffuse_var(&mut g, &ops, xv, tv);
            let (gx, gy) = gradient_var(&mut g, &ops, d);
            let a = g.mul(gx, gy);
            let b = g.mul(d, d);
            let s1 = g.sum(a);
            let s2 = g.sum(b);
            let s = g.add(s1, s2);
            (g, xv, tv, s)
        };
        let (g, xv, tv, s) = eval(&x0, &t0);
        let grads = g.backward(s);
        let (gx, gt) = (grads.get(xv).unwrap().clone(), grads.get(tv).unwrap().clone());
        let h = 1e-6;
        for idx in [0, 5, 17, 2 * n - 1] {
            let mut p = x0.clone();
            p.data_mut()[idx] += h;
            let mut q = x0.clone();
            q.data_mut()[idx] -= h;
            let (gp, _, _, sp) = eval(&p, &t0);
            let (gq, _, _, sq) = eval(&q, &t0);
            let num = (gp.value(sp).item() - gq.value(sq).item()) / (2.0 * h);
            assert!((num - gx.data()[idx]).abs() < 1e-5 * (1.0 + num.abs()));
        }
        for c in 0..2 {
            let mut p = t0.clone();
            p.data_mut()[c] += h;
            let mut q = t0.clone();
            q.data_mut()[c] -= h;
            let (gp, _, _, sp) = eval(&x0, &p);
            let (gq, _, _, sq) = eval(&x0, &q);
            let num = (gp.value(sp).item() - gq.value(sq).item()) / (2.0 * h);
            assert!((num - gt.data()[c]).abs() < 1e-5 * (1.0 + num.abs()));
        }
    }

    #[test]
    fn cache_returns_shared_operators_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let m = icosphere(2);
        let cache = SpectralCache::new(2).with_dir(dir.path());
        let a = cache.get_or_build(&m, 8).unwrap();
        let b = cache.get_or_build(&m, 8).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let fresh = SpectralCache::new(2).with_dir(dir.path());
        let c = fresh.get_or_build(&m, 8).unwrap();
        assert_eq!(*a, *c);
        cache.get_or_build(&icosphere(1), 8).unwrap();
        cache.get_or_build(&icosphere(0), 8).unwrap();
        assert_eq!(cache.len(), 2);
    }
}
