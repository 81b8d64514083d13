//! Smallest eigenpairs of the generalized problem `L x = lambda M x` with diagonal `M`.
//!
//! Small problems use a dense symmetric solver. Larger ones run a block Krylov
//! iteration on the shift-inverted operator `(A + sigma I)^-1`, with
//! `A = M^-1/2 L M^-1/2`, factoring `L + sigma M` once with a profile Cholesky
//! under a reverse Cuthill-McKee ordering. Blocks keep repeated eigenvalues (as on
//! symmetric surfaces) from being missed.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

/// Problems at or below this size are solved densely.
const DENSE_LIMIT: usize = 400;
const BLOCK: usize = 8;
/// Required relative residual of each Ritz pair of the inverted operator.
const TOLERANCE: f64 = 1e-10;

pub struct EigenPairs {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column-major blocks: `vectors[j]` is the j-th mass-orthonormal eigenvector.
    pub vectors: Vec<Vec<f64>>,
}

pub fn smallest_eigenpairs(l: &SparseMatrix, mass: &[f64], k: usize) -> Result<EigenPairs> {
    let n = l.rows();
    if k == 0 || k >= n {
        return Err(Error::validation(format!(
            "eigenpair count must be in [1, {}] for a mesh with {n} vertices, got {k}",
            n - 1
        )));
    }
    if mass.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::numerical(
            "a vertex has zero mass (all incident faces degenerate)",
        ));
    }
    let inv_sqrt: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let m_target = (2 * k + 20).max(3 * k);
    let (values, xs) = if n <= DENSE_LIMIT || m_target * 2 >= n {
        dense(l, &inv_sqrt, k)
    } else {
        krylov(l, mass, &inv_sqrt, k, m_target)?
    };
    let vectors = xs
        .into_iter()
        .map(|x| {
            let mut phi: Vec<f64> = x.iter().zip(&inv_sqrt).map(|(a, s)| a * s).collect();
            orient(&mut phi, mass);
            phi
        })
        .collect();
    Ok(EigenPairs { values, vectors })
}

/// Fixes the sign ambiguity: positive mass-weighted sum, or positive largest entry.
fn orient(phi: &mut [f64], mass: &[f64]) {
    let s: f64 = phi.iter().zip(mass).map(|(p, m)| p * m).sum();
    let norm: f64 = phi.iter().map(|p| p.abs()).fold(0.0, f64::max);
    let flip = if s.abs() > 1e-8 * norm {
        s < 0.0
    } else {
        let big = phi
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        big < 0.0
    };
    if flip {
        phi.iter_mut().for_each(|p| *p = -*p);
    }
}

fn dense(l: &SparseMatrix, inv_sqrt: &[f64], k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = l.rows();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let (c, v) = l.row(i);
        for (&j, &x) in c.iter().zip(v) {
            a[(i, j)] = inv_sqrt[i] * x * inv_sqrt[j];
        }
    }
    let a = (&a + a.transpose()) * 0.5;
    let eig = symmetric_eigen(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values = order[..k].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = order[..k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}

/// nalgebra's symmetric solver can return eigenvalues in an order that does not
/// match its (correct) eigenvectors, so each value is recomputed as the Rayleigh
/// quotient of its vector.
pub(crate) fn symmetric_eigen(a: DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut eig = SymmetricEigen::new(a.clone());
    for i in 0..a.nrows() {
        let v = eig.eigenvectors.column(i);
        eig.eigenvalues[i] = v.dot(&(&a * v));
    }
    eig
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yy, xx) in y.iter_mut().zip(x) {
        *yy += a * xx;
    }
}

/// Two passes of classical Gram-Schmidt against `basis`, then normalization.
/// Returns `None` when `v` is (numerically) inside the span.
fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) -> Option<()> {
    let before = dot(v, v).sqrt();
    for _ in 0..2 {
        let coeffs: Vec<f64> = basis.iter().map(|q| dot(q, v)).collect();
        for (q, c) in basis.iter().zip(coeffs) {
            axpy(v, -c, q);
        }
    }
    let after = dot(v, v).sqrt();
    if after <= 1e-10 * before || after == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= after);
    Some(())
}

fn krylov(
    l: &SparseMatrix,
    mass: &[f64],
    inv_sqrt: &[f64],
    k: usize,
    m_target: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = l.rows();
    let mean_diag = (0..n).map(|i| l.get(i, i) / mass[i]).sum::<f64>() / n as f64;
    let sigma = 1e-5 * mean_diag;
    let mut shifted = Vec::with_capacity(l.nnz() + n);
    for i in 0..n {
        let (c, v) = l.row(i);
        for (&j, &x) in c.iter().zip(v) {
            shifted.push((i, j, x));
        }
        shifted.push((i, i, sigma * mass[i]));
    }
    let factor = ProfileCholesky::factor(&SparseMatrix::from_triplets(n, n, shifted))?;
    let sqrt_m: Vec<f64> = inv_sqrt.iter().map(|s| 1.0 / s).collect();
    // (A + sigma I)^-1 v = M^1/2 (L + sigma M)^-1 M^1/2 v
    let apply = |v: &[f64]| -> Vec<f64> {
        let rhs: Vec<f64> = v.iter().zip(&sqrt_m).map(|(a, s)| a * s).collect();
        let y = factor.solve(&rhs);
        y.iter().zip(&sqrt_m).map(|(a, s)| a * s).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut images: Vec<Vec<f64>> = Vec::new();
    let mut pending: VecDeque<Vec<f64>> = (0..BLOCK)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut target = m_target.div_ceil(BLOCK) * BLOCK;
    loop {
        while basis.len() < target.min(n) {
            let mut v = match pending.pop_front() {
                Some(v) => v,
                None => (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            if orthonormalize(&mut v, &basis).is_none() {
                continue;
            }
            let w = apply(&v);
            basis.push(v);
            pending.push_back(w.clone());
            images.push(w);
        }
        let m = basis.len();
        let mut h = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let x = 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i]));
                h[(i, j)] = x;
                h[(j, i)] = x;
            }
        }
        let eig = symmetric_eigen(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut values = Vec::with_capacity(k);
        let mut vectors = Vec::with_capacity(k);
        let mut converged = true;
        for &i in &order[..k] {
            let theta = eig.eigenvalues[i];
            let s = eig.eigenvectors.column(i);
            let mut x = vec![0.0; n];
            let mut ax = vec![0.0; n];
            for (j, &c) in s.iter().enumerate() {
                axpy(&mut x, c, &basis[j]);
                axpy(&mut ax, c, &images[j]);
            }
            axpy(&mut ax, -theta, &x);
            let resid = dot(&ax, &ax).sqrt();
            if !(theta > 0.0) || resid > TOLERANCE * theta {
                converged = false;
            }
            values.push((1.0 / theta - sigma).max(0.0));
            vectors.push(x);
        }
        if converged {
            return Ok((values, vectors));
        }
        if m >= n {
            return Err(Error::numerical(
                "eigensolver exhausted the space without converging",
            ));
        }
        log::debug!("eigensolver: {m}-dimensional subspace not converged, growing");
        target = (target + target / 2).div_ceil(BLOCK) * BLOCK;
        if target * 2 >= n {
            return Ok(dense(l, inv_sqrt, k));
        }
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern.
fn rcm_order(a: &SparseMatrix) -> Vec<usize> {
    let n = a.rows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_last = |start: usize| -> usize {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut last = start;
        while let Some(u) = queue.pop_front() {
            last = u;
            for &w in a.row(u).0 {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        last
    };
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .unwrap();
        // A couple of sweeps toward a pseudo-peripheral vertex.
        let start = bfs_last(bfs_last(seed));
        let start = if visited[start] { seed } else { start };
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = a.row(u).0.iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor stored row-wise over each row's envelope.
pub(crate) struct ProfileCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl ProfileCholesky {
    pub(crate) fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.rows();
        let perm = rcm_order(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            for &j in a.row(old).0 {
                first[new] = first[new].min(inv[j]);
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for (new, &old) in perm.iter().enumerate() {
            let (c, v) = a.row(old);
            for (&j, &x) in c.iter().zip(v) {
                let jn = inv[j];
                if jn <= new {
                    data[start[new] + jn - first[new]] += x;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let (ri, rj) = (start[i], start[j]);
                let mut s = data[ri + j - fi];
                let a_row = &data[ri + lo - fi..ri + j - fi];
                let b_row = &data[rj + lo - fj..rj + j - fj];
                s -= dot(a_row, b_row);
                if j < i {
                    data[ri + j - fi] = s / data[rj + j - fj];
                } else {
                    if !(s > 0.0) {
                        return Err(Error::numerical(format!(
                            "matrix not positive definite at pivot {i}"
                        )));
                    }
                    data[ri + i - fi] = s.sqrt();
                }
            }
        }
        Ok(ProfileCholesky {
            perm,
            first,
            start,
            data,
        })
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let s = dot(&row[..i - fi], &y[fi..i]);
            y[i] = (y[i] - s) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (yy, &l) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                *yy -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
