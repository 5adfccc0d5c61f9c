//! Coefficient matrix fields `A(x)`, sampled at cell centres.
//!
//! Every field carries ellipticity bounds, an optional Lipschitz constant and
//! the boundary off-diagonal flag. Bounds produced by constructors that know
//! more than the samples (mollification, alloy sampling) are looser than the
//! cellwise extremes but always valid.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::lattice::{ball_mask, dist, to_point, EquidistributedSeq, Grid, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LipschitzKind {
    /// Known analytically for the generator.
    Exact,
    /// Proven upper bound from a construction.
    Bound,
    /// Largest adjacent-cell difference quotient; a lower estimate only.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lipschitz {
    pub value: f64,
    pub kind: LipschitzKind,
}

impl Lipschitz {
    pub fn is_certified(&self) -> bool {
        self.kind != LipschitzKind::Empirical && self.value.is_finite()
    }
}

/// Symmetric `d×d` matrix per cell, row-major.
#[derive(Debug, Clone)]
pub struct MatrixField {
    grid: Arc<Grid>,
    entries: Vec<f64>,
    theta_minus: f64,
    theta_plus: f64,
    lipschitz: Option<Lipschitz>,
    dir: bool,
}

/// Serializable metadata of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub theta_minus: f64,
    pub theta_plus: f64,
    pub lipschitz: Option<Lipschitz>,
    pub dir_condition: bool,
    pub sha256: String,
}

impl MatrixField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub(crate) fn grid_arc(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let s = self.dim() * self.dim();
        &self.entries[c * s..(c + 1) * s]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn theta_minus(&self) -> f64 {
        self.theta_minus
    }

    pub fn theta_plus(&self) -> f64 {
        self.theta_plus
    }

    /// `θ_Ellip = max(1/θ₋, θ₊)`.
    pub fn theta_ellip(&self) -> f64 {
        (1.0 / self.theta_minus).max(self.theta_plus)
    }

    pub fn lipschitz(&self) -> Option<Lipschitz> {
        self.lipschitz
    }

    pub fn dir_condition(&self) -> bool {
        self.dir
    }

    /// Attach an analytically known Lipschitz constant.
    pub fn with_lipschitz(mut self, value: f64) -> Self {
        self.lipschitz = Some(Lipschitz { value, kind: LipschitzKind::Exact });
        self
    }

    pub fn summary(&self) -> FieldSummary {
        FieldSummary {
            theta_minus: self.theta_minus,
            theta_plus: self.theta_plus,
            lipschitz: self.lipschitz,
            dir_condition: self.dir,
            sha256: self.hash(),
        }
    }

    /// SHA-256 of the grid header and the little-endian entries.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim() as u64).to_le_bytes());
        h.update(u64::from(self.grid.side()).to_le_bytes());
        h.update(u64::from(self.grid.per_unit()).to_le_bytes());
        for v in &self.entries {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Build from raw entries, computing bounds from the samples.
    pub(crate) fn from_entries(grid: Arc<Grid>, entries: Vec<f64>) -> Result<Self> {
        let d = grid.dim();
        if entries.len() != grid.cell_count() * d * d {
            return Err(Error::GridMismatch(format!(
                "{} entries for {} cells of dimension {d}",
                entries.len(),
                grid.cell_count()
            )));
        }
        for (c, m) in entries.chunks(d * d).enumerate() {
            if (0..d).any(|i| (0..d).any(|j| m[i * d + j] != m[j * d + i])) {
                return Err(Error::NotSymmetric { cell: c });
            }
        }
        let mut field =
            MatrixField { grid, entries, theta_minus: 0.0, theta_plus: 0.0, lipschitz: None, dir: false };
        let (lo, hi) = check_ellipticity(&field)?;
        field.theta_minus = lo;
        field.theta_plus = hi;
        field.dir = check_dir_condition(&field).holds;
        Ok(field)
    }

    pub(crate) fn with_bounds(mut self, theta_minus: f64, theta_plus: f64) -> Self {
        self.theta_minus = theta_minus;
        self.theta_plus = theta_plus;
        self
    }

    pub(crate) fn with_lipschitz_meta(mut self, lip: Option<Lipschitz>) -> Self {
        self.lipschitz = lip;
        self
    }

    /// `A + t·W·Id`, where the node field `W` enters each cell as the mean of its corners.
    pub fn shifted(&self, w: &[f64], t: f64) -> Result<Self> {
        let cw = cell_means(&self.grid, w)?;
        let d = self.dim();
        let mut entries = self.entries.clone();
        for (c, s) in cw.iter().enumerate() {
            for i in 0..d {
                entries[c * d * d + i * d + i] += t * s;
            }
        }
        let lo = cw.iter().map(|s| t * s).fold(f64::INFINITY, f64::min);
        let hi = cw.iter().map(|s| t * s).fold(f64::NEG_INFINITY, f64::max);
        let tm = self.theta_minus + lo;
        if !(tm > 0.0) {
            return Err(Error::Precondition(format!("shifted field loses ellipticity (θ₋ = {tm})")));
        }
        let dir = self.dir;
        Ok(MatrixField {
            grid: self.grid.clone(),
            entries,
            theta_minus: tm,
            theta_plus: self.theta_plus + hi,
            lipschitz: None,
            dir,
        })
    }

    /// Text dump: header `d L n_per_side`, then one line per cell with its
    /// `d²` entries in row-major order, cells in grid order.
    pub fn write_dump(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{} {} {}", self.dim(), self.grid.side(), self.grid.per_unit())?;
        let s = self.dim() * self.dim();
        for m in self.entries.chunks(s) {
            let row: Vec<String> = m.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn read_dump(grid: &Grid, input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Io("empty field dump".into()))??;
        let h: Vec<u64> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Io(format!("bad header token `{t}`"))))
            .collect::<Result<_>>()?;
        if h != [grid.dim() as u64, u64::from(grid.side()), u64::from(grid.per_unit())] {
            return Err(Error::GridMismatch(format!("dump header {h:?} does not match grid")));
        }
        let mut entries = Vec::new();
        for line in lines {
            for t in line?.split_whitespace() {
                entries.push(t.parse::<f64>().map_err(|_| Error::Io(format!("bad entry `{t}`")))?);
            }
        }
        Self::from_entries(Arc::new(grid.clone()), entries)
    }
}

/// Mean of the corner values of each cell.
pub fn cell_means(grid: &Grid, w: &[f64]) -> Result<Vec<f64>> {
    grid.check_node_len(w.len(), "node field")?;
    let k = (1usize << grid.dim()) as f64;
    Ok((0..grid.cell_count()).map(|c| grid.cell_nodes(c).iter().map(|&n| w[n]).sum::<f64>() / k).collect())
}

fn check_matrix_len(d: usize, m: &[f64]) -> Result<()> {
    if m.len() != d * d {
        return Err(invalid("matrix", format!("expected {} entries, got {}", d * d, m.len())));
    }
    Ok(())
}

/// Every cell equal to `matrix` (row-major `d×d`).
pub fn constant_field(grid: &Grid, matrix: &[f64]) -> Result<MatrixField> {
    let d = grid.dim();
    check_matrix_len(d, matrix)?;
    let entries = matrix.repeat(grid.cell_count());
    Ok(MatrixField::from_entries(Arc::new(grid.clone()), entries)?
        .with_lipschitz_meta(Some(Lipschitz { value: 0.0, kind: LipschitzKind::Exact })))
}

pub fn identity_field(grid: &Grid) -> MatrixField {
    scalar_constant(grid, 1.0).expect("identity is elliptic")
}

pub fn scalar_constant(grid: &Grid, c: f64) -> Result<MatrixField> {
    let d = grid.dim();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = c;
    }
    constant_field(grid, &m)
}

/// Sample `generator` at every cell centre.
pub fn sampled_field(grid: &Grid, generator: impl Fn(&[f64]) -> Vec<f64>) -> Result<MatrixField> {
    let d = grid.dim();
    let mut entries = Vec::with_capacity(grid.cell_count() * d * d);
    for c in 0..grid.cell_count() {
        let m = generator(&grid.cell_center(c)[..d]);
        check_matrix_len(d, &m)?;
        entries.extend_from_slice(&m);
    }
    let field = MatrixField::from_entries(Arc::new(grid.clone()), entries)?;
    let lip = check_lipschitz(&field);
    Ok(field.with_lipschitz_meta(Some(Lipschitz { value: lip, kind: LipschitzKind::Empirical })))
}

/// `a(x)·Id` sampled at cell centres.
pub fn scalar_field(grid: &Grid, a: impl Fn(&[f64]) -> f64) -> Result<MatrixField> {
    let d = grid.dim();
    sampled_field(grid, |x| {
        let v = a(x);
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = v;
        }
        m
    })
}

/// Scalar checkerboard on the unit lattice: `lo` on cells with even index sum
/// of `floor(x)`, `hi` otherwise. In 1D this is `lo` on `[-1,0)` and `hi` on `[0,1)`.
pub fn checkerboard(grid: &Grid, lo: f64, hi: f64) -> Result<MatrixField> {
    scalar_field(grid, |x| {
        let parity: i64 = x.iter().map(|v| v.floor() as i64).sum();
        if parity.rem_euclid(2) == 1 {
            lo
        } else {
            hi
        }
    })
}

fn extreme_eigenvalues(d: usize, m: &[f64]) -> (f64, f64) {
    match d {
        1 => (m[0], m[0]),
        2 => {
            let mean = 0.5 * (m[0] + m[3]);
            let r = (0.25 * (m[0] - m[3]).powi(2) + m[1] * m[1]).sqrt();
            (mean - r, mean + r)
        }
        _ => {
            let e = SymmetricEigen::new(Matrix3::from_row_slice(m)).eigenvalues;
            (e.min(), e.max())
        }
    }
}

/// Exact minimum and maximum of the cell eigenvalues.
pub fn check_ellipticity(field: &MatrixField) -> Result<(f64, f64)> {
    let d = field.dim();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (c, m) in field.entries.chunks(d * d).enumerate() {
        let (a, b) = extreme_eigenvalues(d, m);
        if !(a > 0.0) {
            return Err(Error::NotPositiveDefinite { cell: c, min_eigenvalue: a });
        }
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok((lo, hi))
}

fn row_sum_norm(d: usize, a: &[f64], b: &[f64]) -> f64 {
    (0..d).map(|i| (0..d).map(|j| (a[i * d + j] - b[i * d + j]).abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Largest `‖A(x) − A(y)‖_∞ / h` over adjacent cells.
pub fn check_lipschitz(field: &MatrixField) -> f64 {
    let grid = field.grid();
    let d = grid.dim();
    let h = grid.spacing();
    let mut best: f64 = 0.0;
    for c in 0..grid.cell_count() {
        let m = grid.cell_multi(c);
        for k in 0..d {
            if m[k] + 1 < grid.cells_per_axis() {
                let other = c + grid.cell_stride(k);
                best = best.max(row_sum_norm(d, field.cell(c), field.cell(other)) / h);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirReport {
    pub holds: bool,
    pub violating_cells: Vec<usize>,
}

/// Off-diagonal entries must vanish on every cell touching `∂Λ_L`.
pub fn check_dir_condition(field: &MatrixField) -> DirReport {
    let grid = field.grid();
    let d = grid.dim();
    let last = grid.cells_per_axis() - 1;
    let violating_cells: Vec<usize> = (0..grid.cell_count())
        .filter(|&c| {
            let m = grid.cell_multi(c);
            let boundary = m[..d].iter().any(|&i| i == 0 || i == last);
            let a = field.cell(c);
            boundary && (0..d).any(|i| (0..d).any(|j| i != j && a[i * d + j] != 0.0))
        })
        .collect();
    DirReport { holds: violating_cells.is_empty(), violating_cells }
}

// ---------------------------------------------------------------------------
// Mollification
// ---------------------------------------------------------------------------

/// Radial profile `b(ρ) = 1 − 3ρ² + 2ρ³` on `[0,1]`.
fn bump(rho: f64) -> f64 {
    if rho >= 1.0 {
        0.0
    } else {
        1.0 - rho * rho * (3.0 - 2.0 * rho)
    }
}

/// Normalization `1/∫ b(|x|) dx` of the radial profile in dimension `d`.
fn bump_normalization(d: usize) -> f64 {
    match d {
        1 => 1.0,
        2 => 1.0 / (0.3 * std::f64::consts::PI),
        _ => 15.0 / (4.0 * std::f64::consts::PI),
    }
}

/// Discrete kernel on cell offsets within radius `1/ℓ`, unit total mass.
fn kernel_stencil(grid: &Grid, ell: u32) -> Vec<([i64; 3], f64)> {
    let d = grid.dim();
    let h = grid.spacing();
    let radius = 1.0 / f64::from(ell);
    let reach = (radius / h).floor() as i64;
    let width = (2 * reach + 1) as usize;
    let mut out = Vec::new();
    for idx in 0..width.pow(d as u32) {
        let m = crate::lattice::multi_index(idx, width, d);
        let mut off = [0i64; 3];
        let mut r2 = 0.0;
        for k in 0..d {
            off[k] = m[k] as i64 - reach;
            r2 += (off[k] as f64 * h).powi(2);
        }
        let w = bump(r2.sqrt() / radius);
        if w > 0.0 {
            out.push((off, w));
        }
    }
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    for (_, w) in out.iter_mut() {
        *w /= total;
    }
    out
}

fn check_mollify_eps(field: &MatrixField, ell: u32, eps: f64) -> Result<()> {
    if ell == 0 {
        return Err(invalid("ell", "must be a positive integer"));
    }
    if !(eps > 0.0 && eps < field.theta_minus) {
        return Err(invalid("eps", format!("need 0 < eps < θ₋ = {}", field.theta_minus)));
    }
    Ok(())
}

/// `A_ℓ = B + (A − B)·1_Λ ∗ φ_ℓ` with `B = (θ₋ − eps)·Id`.
pub fn mollify(field: &MatrixField, ell: u32, eps: f64) -> Result<MatrixField> {
    check_mollify_eps(field, ell, eps)?;
    let grid = field.grid();
    let d = grid.dim();
    let s = d * d;
    let n = grid.cells_per_axis() as i64;
    let b = field.theta_minus - eps;
    let stencil = kernel_stencil(grid, ell);
    let excess: Vec<f64> = field
        .entries
        .chunks(s)
        .flat_map(|m| (0..s).map(move |e| if e % (d + 1) == 0 { m[e] - b } else { m[e] }))
        .collect();
    let mut entries = vec![0.0; field.entries.len()];
    for c in 0..grid.cell_count() {
        let m = grid.cell_multi(c);
        let out = &mut entries[c * s..(c + 1) * s];
        for (off, w) in &stencil {
            let mut src = [0usize; 3];
            let mut inside = true;
            for k in 0..d {
                let i = m[k] as i64 + off[k];
                inside &= (0..n).contains(&i);
                src[k] = i.max(0) as usize;
            }
            if inside {
                let sc = grid.cell_from_multi(src);
                for e in 0..s {
                    out[e] += w * excess[sc * s + e];
                }
            }
        }
        for i in 0..d {
            out[i * d + i] += b;
        }
    }
    let l1 = (0..s)
        .map(|e| excess.iter().skip(e).step_by(s).map(|v| v.abs()).sum::<f64>() * grid.cell_volume())
        .fold(0.0, f64::max);
    let lip = d as f64 * f64::from(ell).powi(d as i32 + 1) * 1.5 * bump_normalization(d) * l1;
    Ok(MatrixField::from_entries(field.grid.clone(), entries)?
        .with_bounds(b, field.theta_plus)
        .with_lipschitz_meta(Some(Lipschitz { value: lip, kind: LipschitzKind::Bound })))
}

/// `A_ℓ(x)` at an arbitrary point, with the discrete kernel centred at `x`
/// and normalized over all (also exterior) cell centres.
pub fn mollified_value_at(field: &MatrixField, ell: u32, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_mollify_eps(field, ell, eps)?;
    let grid = field.grid();
    let d = grid.dim();
    let s = d * d;
    let h = grid.spacing();
    let b = field.theta_minus - eps;
    let radius = 1.0 / f64::from(ell);
    let p = to_point(x);
    let half = 0.5 * grid.side_len();
    let reach = (radius / h).ceil() as i64 + 1;
    let base: Vec<i64> = (0..d).map(|k| ((p[k] + half) / h).floor() as i64).collect();
    let width = (2 * reach + 1) as usize;
    let n = grid.cells_per_axis() as i64;
    let mut acc = vec![0.0; s];
    let mut total = 0.0;
    for idx in 0..width.pow(d as u32) {
        let m = crate::lattice::multi_index(idx, width, d);
        let mut centre: Point = [0.0; 3];
        let mut cell = [0usize; 3];
        let mut inside = true;
        for k in 0..d {
            let i = base[k] + m[k] as i64 - reach;
            centre[k] = -half + (i as f64 + 0.5) * h;
            inside &= (0..n).contains(&i);
            cell[k] = i.max(0) as usize;
        }
        let w = bump(dist(&centre, &p) / radius);
        if w == 0.0 {
            continue;
        }
        total += w;
        if inside {
            let a = field.cell(grid.cell_from_multi(cell));
            for e in 0..s {
                acc[e] += w * if e % (d + 1) == 0 { a[e] - b } else { a[e] };
            }
        }
    }
    Ok((0..s).map(|e| acc[e] / total + if e % (d + 1) == 0 { b } else { 0.0 }).collect())
}

// ---------------------------------------------------------------------------
// Alloy-type random perturbations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpShape {
    /// `C₋` on `B(z, δ₋)`, decaying linearly to 0 at `|x − z| = δ₊`.
    PlateauLinear,
    /// `C₋·1_{B(z, δ₋)}`.
    Indicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SiteDistribution {
    Uniform { m: f64 },
    /// Atoms `(value, probability)`.
    Discrete { atoms: Vec<(f64, f64)> },
}

impl SiteDistribution {
    pub fn point_mass(v: f64) -> Self {
        SiteDistribution::Discrete { atoms: vec![(v, 1.0)] }
    }

    pub fn bernoulli(p: f64) -> Self {
        SiteDistribution::Discrete { atoms: vec![(0.0, 1.0 - p), (1.0, p)] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SiteDistribution::Uniform { m } if !(*m > 0.0) => Err(invalid("m", "uniform support must have m > 0")),
            SiteDistribution::Discrete { atoms } => {
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if atoms.is_empty() || atoms.iter().any(|a| a.1 < 0.0 || a.0 < 0.0) || (total - 1.0).abs() > 1e-12 {
                    return Err(invalid("atoms", "need non-negative atoms with probabilities summing to 1"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Upper end `m` of the support `[0, m]`.
    pub fn support_max(&self) -> f64 {
        match self {
            SiteDistribution::Uniform { m } => *m,
            SiteDistribution::Discrete { atoms } => atoms.iter().map(|a| a.0).fold(0.0, f64::max),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            SiteDistribution::Uniform { m } => rng.random_range(0.0..=*m),
            SiteDistribution::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(v, p) in atoms {
                    acc += p;
                    if u < acc {
                        return v;
                    }
                }
                atoms.last().map_or(0.0, |a| a.0)
            }
        }
    }

    /// Largest mass in a closed interval of length `eps`.
    pub fn modulus(&self, eps: f64) -> f64 {
        match self {
            SiteDistribution::Uniform { m } => (eps.max(0.0) / m).min(1.0),
            SiteDistribution::Discrete { atoms } => {
                let mut a = atoms.clone();
                a.sort_by(|x, y| x.0.total_cmp(&y.0));
                let mut best: f64 = 0.0;
                let mut lo = 0;
                let mut mass = 0.0;
                for hi in 0..a.len() {
                    mass += a[hi].1;
                    while a[hi].0 - a[lo].0 > eps {
                        mass -= a[lo].1;
                        lo += 1;
                    }
                    best = best.max(mass);
                }
                best.min(1.0)
            }
        }
    }

    /// `∫ f dμ`; exact for atoms, Gauss–Legendre on `[0, m]` for the uniform law.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            SiteDistribution::Uniform { m } => gauss_legendre(&f, 0.0, *m, 64) / m,
            SiteDistribution::Discrete { atoms } => atoms.iter().map(|&(v, p)| p * f(v)).sum(),
        }
    }
}

/// Composite 5-point Gauss–Legendre rule with `panels` panels.
pub(crate) fn gauss_legendre(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683, 0.538_469_310_105_683, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
        0.236_926_885_056_189,
    ];
    let step = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * step;
        for i in 0..5 {
            s += W[i] * f(mid + 0.5 * step * X[i]);
        }
    }
    s * 0.5 * step
}

/// `A_ω = A + V_ω·Id` with `V_ω = Σ_j ω_j u_j` over the unit cells of `Λ_L`.
#[derive(Debug, Clone)]
pub struct AlloyModel {
    pub base: MatrixField,
    pub sites: EquidistributedSeq,
    pub c_minus: f64,
    pub c_plus: f64,
    pub delta_minus: f64,
    pub delta_plus: f64,
    pub shape: BumpShape,
    /// One law shared by all sites, or one per site.
    pub distributions: Vec<SiteDistribution>,
}

#[derive(Debug, Clone)]
pub struct AlloySample {
    pub omega: Vec<f64>,
    pub potential: Vec<f64>,
    pub field: MatrixField,
}

impl AlloyModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        base: MatrixField,
        sites: EquidistributedSeq,
        c_minus: f64,
        c_plus: f64,
        delta_plus: f64,
        shape: BumpShape,
        distributions: Vec<SiteDistribution>,
    ) -> Result<Self> {
        let delta_minus = sites.radius();
        if (sites.period() - 1.0).abs() > 1e-12 {
            return Err(invalid("G", "alloy sites need a (1, δ₋)-equidistributed sequence"));
        }
        if sites.dim() != base.dim() {
            return Err(Error::GridMismatch("site sequence and field dimensions differ".into()));
        }
        if !(0.0 < c_minus && c_minus <= c_plus) {
            return Err(invalid("C", format!("need 0 < C₋ ≤ C₊, got {c_minus}, {c_plus}")));
        }
        if !(delta_plus > delta_minus) {
            return Err(invalid("delta_plus", format!("need δ₊ > δ₋ = {delta_minus}")));
        }
        if distributions.len() != 1 && distributions.len() != sites.len() {
            return Err(invalid("distributions", "give one shared law or one per site"));
        }
        for d in &distributions {
            d.validate()?;
        }
        Ok(AlloyModel { base, sites, c_minus, c_plus, delta_minus, delta_plus, shape, distributions })
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn distribution(&self, j: usize) -> &SiteDistribution {
        &self.distributions[if self.distributions.len() == 1 { 0 } else { j }]
    }

    /// `m = max_j sup supp μ_j`.
    pub fn support_max(&self) -> f64 {
        self.distributions.iter().map(SiteDistribution::support_max).fold(0.0, f64::max)
    }

    /// Conservative bound `m (2 + δ₊)^d C₊` on `‖V_ω‖_∞`.
    pub fn potential_bound(&self) -> f64 {
        self.support_max() * (2.0 + self.delta_plus).powi(self.base.dim() as i32) * self.c_plus
    }

    /// Single-site bump `u_j` on the lattice nodes.
    pub fn bump(&self, j: usize) -> Vec<f64> {
        let grid = self.base.grid();
        let z = *self.sites.center_point(j);
        (0..grid.node_count())
            .map(|n| {
                let r = dist(&grid.node_point(n), &z);
                match self.shape {
                    BumpShape::Indicator if r < self.delta_minus => self.c_minus,
                    BumpShape::Indicator => 0.0,
                    BumpShape::PlateauLinear if r < self.delta_minus => self.c_minus,
                    BumpShape::PlateauLinear if r < self.delta_plus => {
                        self.c_minus * (self.delta_plus - r) / (self.delta_plus - self.delta_minus)
                    }
                    BumpShape::PlateauLinear => 0.0,
                }
            })
            .collect()
    }

    pub fn potential(&self, omega: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.base.grid().node_count()];
        for (j, &w) in omega.iter().enumerate() {
            if w != 0.0 {
                for (a, b) in v.iter_mut().zip(self.bump(j)) {
                    *a += w * b;
                }
            }
        }
        v
    }

    /// `A + V_ω·Id` with the conservative upper ellipticity bound.
    pub fn field_for(&self, omega: &[f64]) -> Result<(Vec<f64>, MatrixField)> {
        let v = self.potential(omega);
        let field = self.base.shifted(&v, 1.0)?;
        let field = field.with_bounds(self.base.theta_minus(), self.base.theta_plus() + self.potential_bound());
        Ok((v, field))
    }

    /// `s(ε)`: the largest modulus over the site laws.
    pub fn modulus_of_continuity(&self, eps: f64) -> f64 {
        self.distributions.iter().map(|d| d.modulus(eps)).fold(0.0, f64::max)
    }
}

/// Deterministic generator for work item `index` under `master`.
pub fn item_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

pub fn sample_alloy(model: &AlloyModel, seed: u64) -> Result<AlloySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega: Vec<f64> = (0..model.site_count()).map(|j| model.distribution(j).sample(&mut rng)).collect();
    let (potential, field) = model.field_for(&omega)?;
    Ok(AlloySample { omega, potential, field })
}

pub fn modulus_of_continuity(dist: &SiteDistribution, eps: f64) -> f64 {
    dist.modulus(eps)
}

/// `W̃ = max_j clamp(2 − |x − z_j|/δ̂, 0, 1)` with `δ̂ = δ/2`, after checking `W ≥ 1_S`.
pub fn tent_minorant(grid: &Grid, w: &[f64], seq: &EquidistributedSeq) -> Result<Vec<f64>> {
    grid.check_node_len(w.len(), "W")?;
    let mask = ball_mask(grid, seq)?;
    for (n, &v) in w.iter().enumerate() {
        if mask.contains_node(n) && v < 1.0 {
            return Err(Error::NodePrecondition { node: n, reason: format!("W = {v} < 1 inside S") });
        }
        if v < 0.0 {
            return Err(Error::NodePrecondition { node: n, reason: format!("W = {v} is negative") });
        }
    }
    Ok(tent_field(grid, seq, 0.5 * seq.radius()))
}

/// `max_j clamp(2 − |x − z_j|/r, 0, 1)`: 1 on `B(z_j, r)`, 0 outside `B(z_j, 2r)`.
pub fn tent_field(grid: &Grid, seq: &EquidistributedSeq, r: f64) -> Vec<f64> {
    (0..grid.node_count())
        .map(|n| {
            let p = grid.node_point(n);
            (0..seq.len())
                .map(|j| (2.0 - dist(&p, seq.center_point(j)) / r).clamp(0.0, 1.0))
                .fold(0.0, f64::max)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{equidistributed_sequence, make_grid, Boundary, CenterMode};
    use approx::assert_abs_diff_eq;

    fn grid(d: usize, l: u32, n: u32) -> Grid {
        make_grid(d, l, n, Boundary::Dirichlet).unwrap()
    }

    #[test]
    fn constant_fields() {
        let g = grid(2, 1, 4);
        let id = identity_field(&g);
        assert_eq!((id.theta_minus(), id.theta_plus()), (1.0, 1.0));
        assert_eq!(id.lipschitz().unwrap().value, 0.0);
        assert!(id.dir_condition());
        let f = constant_field(&g, &[2.0, 0.0, 0.0, 3.0]).unwrap();
        assert_eq!((f.theta_minus(), f.theta_plus()), (2.0, 3.0));
        assert!(matches!(constant_field(&g, &[1.0, 5.0, 5.0, 1.0]), Err(Error::NotPositiveDefinite { .. })));
        assert!(matches!(constant_field(&g, &[1.0, 0.1, 0.2, 1.0]), Err(Error::NotSymmetric { cell: 0 })));
    }

    #[test]
    fn coupled_matrix_bounds() {
        let g = grid(2, 1, 4);
        let f = constant_field(&g, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        let (lo, hi) = check_ellipticity(&f).unwrap();
        assert_abs_diff_eq!(lo, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(hi, 3.0, epsilon = 1e-14);
        assert!(!check_dir_condition(&constant_field(&g, &[1.0, 0.1, 0.1, 1.0]).unwrap()).holds);
    }

    #[test]
    fn three_dimensional_bounds() {
        let g = grid(3, 1, 2);
        let f = constant_field(&g, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]).unwrap();
        assert_abs_diff_eq!(f.theta_minus(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.theta_plus(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn sampled_sine_field() {
        let g = grid(1, 1, 64);
        let f = scalar_field(&g, |x| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).sin()).unwrap();
        assert!((f.theta_minus() - 0.5).abs() < 2e-3);
        assert!((f.theta_plus() - 1.5).abs() < 2e-3);
    }

    #[test]
    fn checkerboard_has_divergent_lipschitz_estimate() {
        let coarse = checkerboard(&grid(1, 2, 8), 1.0, 2.0).unwrap();
        let fine = checkerboard(&grid(1, 2, 16), 1.0, 2.0).unwrap();
        assert_eq!((coarse.theta_minus(), coarse.theta_plus()), (1.0, 2.0));
        assert_abs_diff_eq!(check_lipschitz(&coarse), 8.0);
        assert_abs_diff_eq!(check_lipschitz(&fine), 16.0);
        assert!(!coarse.lipschitz().unwrap().is_certified());
    }

    #[test]
    fn linear_field_lipschitz() {
        let g = grid(1, 1, 32);
        let f = scalar_field(&g, |x| 2.0 + x[0]).unwrap();
        assert_abs_diff_eq!(check_lipschitz(&f), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_generator_matches_constant_field() {
        let g = grid(2, 1, 4);
        let a = sampled_field(&g, |_| vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let b = constant_field(&g, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        assert_eq!(a.entries(), b.entries());
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn dir_condition_with_vanishing_off_diagonal() {
        let g = grid(2, 1, 8);
        let f = sampled_field(&g, |x| {
            let bump = ((x[0] * x[0] + x[1] * x[1]) < 0.09) as u8 as f64;
            vec![2.0, 0.5 * bump, 0.5 * bump, 2.0]
        })
        .unwrap();
        assert!(check_dir_condition(&f).holds);
    }

    #[test]
    fn mollify_constant_is_identity() {
        let g = grid(1, 2, 32);
        let f = scalar_constant(&g, 3.0).unwrap();
        let m = mollify(&f, 4, 1.0).unwrap();
        let reach = 32 / 4;
        for c in reach..(64 - reach) {
            assert_abs_diff_eq!(m.cell(c)[0], 3.0, epsilon = 1e-13);
        }
        assert_eq!(m.theta_minus(), 2.0);
    }

    #[test]
    fn mollified_checkerboard_at_jump() {
        let g = grid(1, 2, 64);
        let f = checkerboard(&g, 1.0, 2.0).unwrap();
        let v = mollified_value_at(&f, 8, 0.5, &[0.0]).unwrap();
        assert_abs_diff_eq!(v[0], 1.5, epsilon = 1e-13);
        let far = mollified_value_at(&f, 8, 0.5, &[0.5]).unwrap();
        assert_abs_diff_eq!(far[0], 2.0, epsilon = 1e-13);
        assert!(mollify(&f, 8, 1.0).is_err());
        assert!(mollify(&f, 8, 0.0).is_err());
    }

    #[test]
    fn mollified_bounds_hold_cellwise() {
        let g = grid(2, 2, 8);
        let f = checkerboard(&g, 1.0, 2.0).unwrap();
        let m = mollify(&f, 2, 0.25).unwrap();
        let (lo, hi) = check_ellipticity(&m).unwrap();
        assert!(lo >= 0.75 - 1e-12 && hi <= 2.0 + 1e-12);
        assert_eq!((m.theta_minus(), m.theta_plus()), (0.75, 2.0));
    }

    #[test]
    fn modulus_examples() {
        assert_abs_diff_eq!(SiteDistribution::Uniform { m: 1.0 }.modulus(0.1), 0.1);
        assert_eq!(SiteDistribution::Uniform { m: 2.0 }.modulus(5.0), 1.0);
        assert_eq!(SiteDistribution::bernoulli(0.5).modulus(0.1), 0.5);
        assert_eq!(SiteDistribution::bernoulli(0.5).modulus(1.0), 1.0);
    }

    fn alloy(g: &Grid, dist: SiteDistribution, shape: BumpShape) -> AlloyModel {
        let seq = equidistributed_sequence(g, 1.0, 0.25, &CenterMode::Midpoint).unwrap();
        AlloyModel::new(identity_field(g), seq, 1.0, 1.0, 0.45, shape, vec![dist]).unwrap()
    }

    #[test]
    fn point_mass_alloy_is_base() {
        let g = grid(1, 4, 8);
        let model = alloy(&g, SiteDistribution::point_mass(0.0), BumpShape::PlateauLinear);
        let s = sample_alloy(&model, 3).unwrap();
        assert_eq!(s.field.entries(), model.base.entries());
    }

    #[test]
    fn single_site_plateau() {
        let g = grid(1, 1, 8);
        let model = alloy(&g, SiteDistribution::point_mass(1.0), BumpShape::Indicator);
        let s = sample_alloy(&model, 0).unwrap();
        assert_eq!(s.potential[4], 1.0);
        assert!(s.potential.iter().all(|&v| v >= 0.0 && v <= model.potential_bound()));
    }

    #[test]
    fn uniform_sample_mean() {
        let d = SiteDistribution::Uniform { m: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mean: f64 = (0..10_000).map(|_| d.sample(&mut rng)).sum::<f64>() / 1e4;
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn tent_values() {
        let g = grid(1, 2, 16);
        let seq = equidistributed_sequence(&g, 2.0, 0.5, &CenterMode::Explicit { centers: vec![vec![0.0]] }).unwrap();
        let w = vec![1.0; g.node_count()];
        let t = tent_minorant(&g, &w, &seq).unwrap();
        let at = |x: f64| t[((x + 1.0) * 16.0).round() as usize];
        assert_eq!(at(0.0), 1.0);
        assert_abs_diff_eq!(at(0.375), 0.5, epsilon = 1e-14);
        assert_eq!(at(0.5), 0.0);
        assert!(tent_minorant(&g, &vec![0.0; g.node_count()], &seq).is_err());
    }

    #[test]
    fn dump_roundtrip() {
        let g = grid(2, 1, 4);
        let f = sampled_field(&g, |x| vec![1.0 + x[0] * x[0], 0.1 * x[1], 0.1 * x[1], 2.0]).unwrap();
        let mut buf = Vec::new();
        f.write_dump(&mut buf).unwrap();
        let back = MatrixField::read_dump(&g, buf.as_slice()).unwrap();
        assert_eq!(back.entries(), f.entries());
    }
}
