//! Eigenpairs, inertia counts, lifting curves and Hellmann–Feynman derivatives.

mod banded;

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use banded::BandedLdl;

use crate::error::{invalid, Error, Result};
use crate::fields::{cell_means, MatrixField};
use crate::lattice::Grid;
use crate::operator::{assemble, weighted_gradient_energy, DiscreteOperator};

/// Relative residual tolerance used by default.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Problems up to this size go to the dense solver.
pub const DENSE_LIMIT: usize = 800;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Request {
    /// The `k` smallest eigenpairs.
    Lowest(usize),
    /// All eigenpairs with `lo ≤ E < hi`.
    Interval { lo: f64, hi: f64 },
}

/// Sorted eigenpairs; vectors live on the unknowns with `h^d Σ v² = 1`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    mass: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Eigenvector `n` extended to the full node lattice.
    pub fn node_field(&self, grid: &Grid, n: usize) -> Vec<f64> {
        grid.extend(&self.vectors[n])
    }

    /// Indices of eigenvalues in `[lo, hi)`.
    pub fn indices_in(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.values[i] >= lo && self.values[i] < hi).collect()
    }

    /// Gap to the nearest other eigenvalue in the spectrum.
    pub fn gap(&self, n: usize) -> f64 {
        let mut g = f64::INFINITY;
        if n > 0 {
            g = g.min(self.values[n] - self.values[n - 1]);
        }
        if n + 1 < self.len() {
            g = g.min(self.values[n + 1] - self.values[n]);
        }
        g
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Rows `index, eigenvalue, residual`, tab separated.
    pub fn write_table(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "index\teigenvalue\tresidual")?;
        for (i, (e, r)) in self.values.iter().zip(&self.residuals).enumerate() {
            writeln!(out, "{}\t{e:.17e}\t{r:.3e}", i + 1)?;
        }
        Ok(())
    }
}

fn weighted_norm(mass: f64, v: &[f64]) -> f64 {
    (mass * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

fn normalize_and_fix_sign(mass: f64, v: &mut [f64]) {
    let norm = weighted_norm(mass, v);
    let max = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let sign = v.iter().find(|x| x.abs() > 1e-10 * max).map_or(1.0, |x| x.signum());
    for x in v.iter_mut() {
        *x *= sign / norm;
    }
}

fn residual(op: &DiscreteOperator, mass: f64, value: f64, v: &[f64]) -> f64 {
    let r: Vec<f64> = op.apply(v).iter().zip(v).map(|(a, b)| a - value * b).collect();
    weighted_norm(mass, &r)
}

/// Residual threshold for eigenvalue `value` of `op`.
pub(crate) fn threshold(op: &DiscreteOperator, tol: f64, value: f64) -> f64 {
    tol * (value.abs() + 1e-4 * op.max_diagonal())
}

pub fn eigensolve(op: &DiscreteOperator, request: Request) -> Result<Spectrum> {
    eigensolve_with(op, request, DEFAULT_TOL)
}

pub fn eigensolve_with(op: &DiscreteOperator, request: Request, tol: f64) -> Result<Spectrum> {
    let n = op.dim();
    match request {
        Request::Lowest(k) if k == 0 || k > n => {
            return Err(invalid("k", format!("need 1 ≤ k ≤ {n}, got {k}")));
        }
        Request::Interval { lo, hi } if !(lo < hi) => return Err(Error::EmptyInterval { lo, hi }),
        _ => {}
    }
    let mass = op.grid().cell_volume();
    let (values, mut vectors) = if n <= DENSE_LIMIT { dense(op, request) } else { iterative(op, request, tol)? };
    for v in vectors.iter_mut() {
        normalize_and_fix_sign(mass, v);
    }
    let residuals: Vec<f64> = values.iter().zip(&vectors).map(|(&e, v)| residual(op, mass, e, v)).collect();
    if let Some(worst) = values.iter().zip(&residuals).find(|(e, r)| **r > threshold(op, tol, **e)) {
        return Err(Error::NotConverged { worst_residual: *worst.1, iterations: 0 });
    }
    Ok(Spectrum { values, vectors, residuals, mass })
}

fn select(request: Request, values: &[f64]) -> Vec<usize> {
    match request {
        Request::Lowest(k) => (0..k.min(values.len())).collect(),
        Request::Interval { lo, hi } => (0..values.len()).filter(|&i| values[i] >= lo && values[i] < hi).collect(),
    }
}

fn dense(op: &DiscreteOperator, request: Request) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(op.to_dense());
    let mut order: Vec<usize> = (0..op.dim()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let keep = select(request, &sorted);
    let values = keep.iter().map(|&i| sorted[i]).collect();
    let vectors = keep.iter().map(|&i| eig.eigenvectors.column(order[i]).iter().cloned().collect()).collect();
    (values, vectors)
}

/// Shift-invert subspace iteration with Rayleigh–Ritz, growing the block
/// until an interval request is covered.
fn iterative(op: &DiscreteOperator, request: Request, tol: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = op.dim();
    let mut k = match request {
        Request::Lowest(k) => k,
        Request::Interval { .. } => 8.min(n),
    };
    let shift = -1e-4 * op.max_diagonal();
    let ldl = BandedLdl::factor(op, shift, 0.0);
    loop {
        let (values, vectors) = subspace(op, &ldl, k, tol)?;
        match request {
            Request::Lowest(_) => return Ok((values, vectors)),
            Request::Interval { hi, .. } => {
                if values[k - 1] >= hi || k == n {
                    let keep = select(request, &values);
                    return Ok((
                        keep.iter().map(|&i| values[i]).collect(),
                        keep.iter().map(|&i| vectors[i].clone()).collect(),
                    ));
                }
                k = (2 * k).min(n);
            }
        }
    }
}

fn orthonormalize(x: &mut DMatrix<f64>) {
    let (_, p) = x.shape();
    for j in 0..p {
        for _ in 0..2 {
            for i in 0..j {
                let dot = x.column(i).dot(&x.column(j));
                let ci = x.column(i).clone_owned();
                x.column_mut(j).axpy(-dot, &ci, 1.0);
            }
        }
        let norm = x.column(j).norm();
        if norm > 0.0 {
            x.column_mut(j).scale_mut(1.0 / norm);
        }
    }
}

fn subspace(op: &DiscreteOperator, ldl: &BandedLdl, k: usize, tol: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = op.dim();
    let p = n.min((2 * k).max(k + 8));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ n as u64);
    let mut x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    orthonormalize(&mut x);
    let max_iter = 2000;
    let mut worst = f64::INFINITY;
    for iter in 0..max_iter {
        let cols: Vec<Vec<f64>> = (0..p)
            .into_par_iter()
            .map(|j| {
                let mut c: Vec<f64> = x.column(j).iter().cloned().collect();
                ldl.solve(&mut c);
                c
            })
            .collect();
        for (j, c) in cols.iter().enumerate() {
            x.column_mut(j).copy_from_slice(c);
        }
        orthonormalize(&mut x);
        let hx_cols: Vec<Vec<f64>> =
            (0..p).into_par_iter().map(|j| op.apply(x.column(j).as_slice())).collect();
        let hx = DMatrix::from_fn(n, p, |i, j| hx_cols[j][i]);
        let mut small = x.transpose() * &hx;
        small = (&small + small.transpose()) * 0.5;
        let eig = SymmetricEigen::new(small);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let q = DMatrix::from_fn(p, p, |i, j| eig.eigenvectors[(i, order[j])]);
        x = &x * &q;
        let hxq = &hx * &q;
        let theta: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        worst = 0.0;
        let mut ok = true;
        for j in 0..k {
            // Euclidean residual of a unit column equals the weighted residual
            // of the mass-normalized vector.
            let r = (hxq.column(j) - x.column(j) * theta[j]).norm();
            worst = f64::max(worst, r);
            if r > 0.1 * threshold(op, tol, theta[j]) {
                ok = false;
            }
        }
        if ok {
            let values = theta[..k].to_vec();
            let vectors = (0..k).map(|j| x.column(j).iter().cloned().collect()).collect();
            return Ok((values, vectors));
        }
        if iter + 1 == max_iter {
            break;
        }
    }
    Err(Error::NotConverged { worst_residual: worst, iterations: max_iter })
}

/// Result of an inertia count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    /// Number of eigenvalues `≤ E`.
    pub count: usize,
    /// `E` lies within `10⁻¹²·scale` of an eigenvalue.
    pub ambiguous: bool,
}

fn negatives(op: &DiscreteOperator, e: f64) -> usize {
    BandedLdl::factor(op, e, 1e-300).negative_pivots()
}

fn eta(op: &DiscreteOperator, e: f64) -> f64 {
    1e-12 * e.abs().max(op.max_diagonal())
}

/// Number of eigenvalues `≤ e` from the inertia of `H − e·I`.
pub fn count_eigenvalues(op: &DiscreteOperator, e: f64) -> Count {
    let eta = eta(op, e);
    let below = negatives(op, e - eta);
    let above = negatives(op, e + eta);
    Count { count: above, ambiguous: below != above }
}

/// Number of eigenvalues in the closed window `[lo, hi]`.
pub fn count_in_window(op: &DiscreteOperator, lo: f64, hi: f64) -> Count {
    let upper = count_eigenvalues(op, hi);
    let eta = eta(op, lo);
    let below = negatives(op, lo - eta);
    let ambiguous = upper.ambiguous || negatives(op, lo + eta) != below;
    Count { count: upper.count.saturating_sub(below), ambiguous }
}

/// Hellmann–Feynman value `Σ h^d/2^d W_c Σ_v |∇φ|²` for eigenpair `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HfValue {
    pub value: f64,
    /// The eigenvalue is within `10⁻⁸·scale` of a neighbour.
    pub degenerate: bool,
}

pub fn hf_derivative(op: &DiscreteOperator, spectrum: &Spectrum, n: usize, w: &[f64]) -> Result<HfValue> {
    let grid = op.grid();
    let cw = cell_means(grid, w)?;
    let phi = spectrum.node_field(grid, n);
    let value = weighted_gradient_energy(grid, &phi, &cw)?;
    let scale = spectrum.values[n].abs().max(1.0);
    Ok(HfValue { value, degenerate: spectrum.gap(n) < 1e-8 * scale })
}

/// Normalized random element of `span{ψ_n : lo ≤ E_n < hi}`.
pub fn projector_sample(grid: &Grid, spectrum: &Spectrum, lo: f64, hi: f64, seed: u64) -> Result<Vec<f64>> {
    let idx = spectrum.indices_in(lo, hi);
    if idx.is_empty() {
        return Err(Error::EmptyInterval { lo, hi });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(grid.extend(&random_combination(spectrum, &idx, &mut rng)))
}

pub(crate) fn random_combination(spectrum: &Spectrum, idx: &[usize], rng: &mut impl rand::Rng) -> Vec<f64> {
    let n = spectrum.vectors[idx[0]].len();
    let mut v = vec![0.0; n];
    for &i in idx {
        let c: f64 = StandardNormal.sample(rng);
        for (a, b) in v.iter_mut().zip(&spectrum.vectors[i]) {
            *a += c * b;
        }
    }
    let norm = weighted_norm(spectrum.mass, &v);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Sorted eigenvalues of `H(A + tW·Id)` along a `t` grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiftingCurve {
    pub ts: Vec<f64>,
    /// `values[n][i] = E_{n+1}(t_i)`.
    pub values: Vec<Vec<f64>>,
    /// `hf[n][i]`: discrete `∫ W |∇φ_{n+1}(t_i)|²`.
    pub hf: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
    /// `degenerate[n][i]`: gap to a neighbour below tolerance.
    pub degenerate: Vec<Vec<bool>>,
    /// `t` values at which the solver failed; rows hold NaN there.
    pub failed: Vec<f64>,
    /// `sup W`.
    pub w_max: f64,
}

pub fn lifting_curve(field: &MatrixField, w: &[f64], horizon: f64, steps: usize, count: usize) -> Result<LiftingCurve> {
    let grid = field.grid();
    grid.check_node_len(w.len(), "W")?;
    if w.iter().any(|&v| v < 0.0) {
        return Err(invalid("W", "must be non-negative"));
    }
    if !(horizon > 0.0) || steps == 0 {
        return Err(invalid("T", "need T > 0 and at least one step"));
    }
    if count == 0 || count > grid.unknown_count() {
        return Err(invalid("n_indices", format!("need 1 ≤ n ≤ {}", grid.unknown_count())));
    }
    let ts: Vec<f64> = (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect();
    let per_t: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>)>> = ts
        .par_iter()
        .map(|&t| {
            let op = assemble(&field.shifted(w, t)?)?;
            // One extra pair so the gap of the last index is known.
            let extra = (count + 1).min(op.dim());
            let s = eigensolve(&op, Request::Lowest(extra))?;
            let mut hf = Vec::with_capacity(count);
            let mut deg = Vec::with_capacity(count);
            for n in 0..count {
                let v = hf_derivative(&op, &s, n, w)?;
                hf.push(v.value);
                deg.push(v.degenerate);
            }
            Ok((s.values[..count].to_vec(), hf, s.residuals[..count].to_vec(), deg))
        })
        .collect();
    let mut curve = LiftingCurve {
        values: vec![Vec::new(); count],
        hf: vec![Vec::new(); count],
        residuals: vec![Vec::new(); count],
        degenerate: vec![Vec::new(); count],
        failed: Vec::new(),
        w_max: w.iter().cloned().fold(0.0, f64::max),
        ts: ts.clone(),
    };
    for (i, r) in per_t.into_iter().enumerate() {
        match r {
            Ok((v, h, res, deg)) => {
                for n in 0..count {
                    curve.values[n].push(v[n]);
                    curve.hf[n].push(h[n]);
                    curve.residuals[n].push(res[n]);
                    curve.degenerate[n].push(deg[n]);
                }
            }
            Err(_) => {
                curve.failed.push(ts[i]);
                for n in 0..count {
                    curve.values[n].push(f64::NAN);
                    curve.hf[n].push(f64::NAN);
                    curve.residuals[n].push(f64::NAN);
                    curve.degenerate[n].push(false);
                }
            }
        }
    }
    Ok(curve)
}

impl LiftingCurve {
    pub fn is_complete(&self) -> bool {
        self.failed.is_empty()
    }

    /// Rows `index, t, eigenvalue, hf_value, residual`, tab separated.
    pub fn write_table(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "index\tt\teigenvalue\thf_value\tresidual")?;
        for n in 0..self.values.len() {
            for (i, t) in self.ts.iter().enumerate() {
                writeln!(
                    out,
                    "{}\t{t}\t{:.17e}\t{:.17e}\t{:.3e}",
                    n + 1,
                    self.values[n][i],
                    self.hf[n][i],
                    self.residuals[n][i]
                )?;
            }
        }
        Ok(())
    }
}
