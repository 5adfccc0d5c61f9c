//! Cube geometry, discrete calculus and equidistributed ball sets.
//!
//! A [`Grid`] discretizes the open cube `(-L/2, L/2)^d` with `L * n_per_side`
//! cells per axis. Fields live on the full node lattice (boundary nodes
//! included); under Dirichlet conditions the boundary nodes are simply not
//! unknowns and carry the value zero.
//!
//! Face (edge) fields are stored per axis and indexed by the start node of
//! the edge, so that `u[p + e_k] - u[p]` lives at index `p` of axis `k`.
//! Slots whose start node sits on the upper boundary of axis `k` are not
//! edges and always hold zero weight.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Point = [f64; 3];

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    Neumann,
}

/// Uniform tensor grid on `Λ_L`.
#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    side: u32,
    per_unit: u32,
    bc: Boundary,
    cells: usize,
    unknown_of_node: Vec<usize>,
    node_of_unknown: Vec<usize>,
}

/// Compact description used to detect mismatched grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub dim: usize,
    pub side: u32,
    pub per_unit: u32,
    pub bc: Boundary,
}

pub fn make_grid(dim: usize, side: u32, per_unit: u32, bc: Boundary) -> Result<Grid> {
    Grid::new(dim, side, per_unit, bc)
}

impl Grid {
    pub fn new(dim: usize, side: u32, per_unit: u32, bc: Boundary) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(invalid("d", format!("dimension {dim} outside 1..=3")));
        }
        if side < 1 {
            return Err(invalid("L", "side length must be at least 1"));
        }
        if per_unit < 2 {
            return Err(invalid("n_per_side", "resolution must be at least 2"));
        }
        let cells = side as usize * per_unit as usize;
        let n = cells + 1;
        let total = n.pow(dim as u32);
        let mut unknown_of_node = vec![NONE; total];
        let mut node_of_unknown = Vec::with_capacity(total);
        for (node, slot) in unknown_of_node.iter_mut().enumerate() {
            let m = multi_index(node, n, dim);
            let interior = m[..dim].iter().all(|&i| i > 0 && i < cells);
            if bc == Boundary::Neumann || interior {
                *slot = node_of_unknown.len();
                node_of_unknown.push(node);
            }
        }
        Ok(Grid { dim, side, per_unit, bc, cells, unknown_of_node, node_of_unknown })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    pub fn side_len(&self) -> f64 {
        self.side as f64
    }

    pub fn per_unit(&self) -> u32 {
        self.per_unit
    }

    pub fn bc(&self) -> Boundary {
        self.bc
    }

    pub fn shape(&self) -> GridShape {
        GridShape { dim: self.dim, side: self.side, per_unit: self.per_unit, bc: self.bc }
    }

    /// Mesh spacing `h = 1 / n_per_side`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.per_unit as f64
    }

    /// `h^d`, the quadrature weight of one node and the volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.cells + 1
    }

    pub fn node_count(&self) -> usize {
        self.unknown_of_node.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn unknown_count(&self) -> usize {
        self.node_of_unknown.len()
    }

    pub fn unknown_of(&self, node: usize) -> Option<usize> {
        match self.unknown_of_node[node] {
            NONE => None,
            u => Some(u),
        }
    }

    pub fn node_of(&self, unknown: usize) -> usize {
        self.node_of_unknown[unknown]
    }

    pub fn node_multi(&self, node: usize) -> [usize; 3] {
        multi_index(node, self.nodes_per_axis(), self.dim)
    }

    pub fn node_from_multi(&self, m: [usize; 3]) -> usize {
        flat_index(m, self.nodes_per_axis(), self.dim)
    }

    pub fn cell_multi(&self, cell: usize) -> [usize; 3] {
        multi_index(cell, self.cells, self.dim)
    }

    pub fn cell_from_multi(&self, m: [usize; 3]) -> usize {
        flat_index(m, self.cells, self.dim)
    }

    pub fn node_stride(&self, axis: usize) -> usize {
        self.nodes_per_axis().pow(axis as u32)
    }

    pub fn cell_stride(&self, axis: usize) -> usize {
        self.cells.pow(axis as u32)
    }

    fn coord(&self, i: f64) -> f64 {
        -0.5 * self.side_len() + i * self.spacing()
    }

    pub fn node_point(&self, node: usize) -> Point {
        let m = self.node_multi(node);
        let mut p = [0.0; 3];
        for k in 0..self.dim {
            p[k] = self.coord(m[k] as f64);
        }
        p
    }

    pub fn cell_center(&self, cell: usize) -> Point {
        let m = self.cell_multi(cell);
        let mut p = [0.0; 3];
        for k in 0..self.dim {
            p[k] = self.coord(m[k] as f64 + 0.5);
        }
        p
    }

    /// Whether `node` starts an edge along `axis`.
    pub fn has_edge(&self, axis: usize, node: usize) -> bool {
        self.node_multi(node)[axis] < self.cells
    }

    pub fn edge_midpoint(&self, axis: usize, node: usize) -> Point {
        let mut p = self.node_point(node);
        p[axis] += 0.5 * self.spacing();
        p
    }

    /// Fraction of the `2^{d-1}` cells around an edge that lie inside the cube.
    /// Interior edges weigh 1; edges on the boundary weigh less.
    pub fn edge_weight(&self, axis: usize, node: usize) -> f64 {
        let m = self.node_multi(node);
        if m[axis] >= self.cells {
            return 0.0;
        }
        let mut w = 1.0;
        for k in 0..self.dim {
            if k != axis && (m[k] == 0 || m[k] == self.cells) {
                w *= 0.5;
            }
        }
        w
    }

    /// Nodes of a cell, ordered by the corner bit pattern (bit `k` set means
    /// the upper node along axis `k`).
    pub fn cell_nodes(&self, cell: usize) -> Vec<usize> {
        let m = self.cell_multi(cell);
        let base = self.node_from_multi(m);
        (0..1usize << self.dim)
            .map(|bits| {
                (0..self.dim).filter(|k| bits >> k & 1 == 1).map(|k| self.node_stride(k)).sum::<usize>() + base
            })
            .collect()
    }

    /// Restrict a lattice node field to the unknowns.
    pub fn restrict(&self, field: &[f64]) -> Vec<f64> {
        self.node_of_unknown.iter().map(|&n| field[n]).collect()
    }

    /// Extend an unknown vector to the full lattice, zero on eliminated nodes.
    pub fn extend(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count()];
        for (u, &n) in self.node_of_unknown.iter().enumerate() {
            out[n] = values[u];
        }
        out
    }

    /// Evaluate a function at every lattice node.
    pub fn sample_nodes(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.node_count()).map(|n| f(&self.node_point(n)[..self.dim])).collect()
    }

    pub(crate) fn check_shape(&self, other: &GridShape, what: &str) -> Result<()> {
        if self.shape() != *other {
            return Err(Error::GridMismatch(format!("{what}: {:?} vs {:?}", self.shape(), other)));
        }
        Ok(())
    }

    pub(crate) fn check_node_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.node_count() {
            return Err(Error::GridMismatch(format!(
                "{what} has {len} entries, grid has {} nodes",
                self.node_count()
            )));
        }
        Ok(())
    }
}

pub(crate) fn multi_index(mut idx: usize, n: usize, dim: usize) -> [usize; 3] {
    let mut m = [0; 3];
    for slot in m.iter_mut().take(dim) {
        *slot = idx % n;
        idx /= n;
    }
    m
}

pub(crate) fn flat_index(m: [usize; 3], n: usize, dim: usize) -> usize {
    (0..dim).rev().fold(0, |acc, k| acc * n + m[k])
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub(crate) fn to_point(x: &[f64]) -> Point {
    let mut p = [0.0; 3];
    p[..x.len()].copy_from_slice(x);
    p
}

// ---------------------------------------------------------------------------
// Equidistributed sequences
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CenterMode {
    Midpoint,
    Random { seed: u64 },
    Explicit { centers: Vec<Vec<f64>> },
}

/// One ball centre per period cell, each ball inside its cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EquidistributedSeq {
    dim: usize,
    period: f64,
    radius: f64,
    centers: Vec<Point>,
    labels: Vec<[i64; 3]>,
}

impl EquidistributedSeq {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j][..self.dim]
    }

    pub(crate) fn center_point(&self, j: usize) -> &Point {
        &self.centers[j]
    }

    pub fn centers(&self) -> impl Iterator<Item = &[f64]> {
        self.centers.iter().map(move |c| &c[..self.dim])
    }

    /// Lattice label of the period cell holding centre `j`.
    pub fn label(&self, j: usize) -> &[i64] {
        &self.labels[j][..self.dim]
    }

    /// Same centres with a different radius; fails if a ball leaves its cell.
    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        let centers: Vec<Vec<f64>> = self.centers().map(|c| c.to_vec()).collect();
        build_sequence(self.dim, self.period, radius, self.period_cells_per_axis(), |_| Ok(centers.clone()))
    }

    fn period_cells_per_axis(&self) -> usize {
        (self.centers.len() as f64).powf(1.0 / self.dim as f64).round() as usize
    }

    /// Image of the sequence under `x ↦ x / scale`: a `(G/scale, δ/scale)` sequence.
    pub fn scaled_down(&self, scale: f64) -> Result<Self> {
        let centers: Vec<Vec<f64>> = self.centers().map(|c| c.iter().map(|x| x / scale).collect()).collect();
        build_sequence(
            self.dim,
            self.period / scale,
            self.radius / scale,
            self.period_cells_per_axis(),
            |_| Ok(centers.clone()),
        )
    }
}

/// Build a `(G, δ)`-equidistributed sequence for the period cells tiling `Λ_L`.
///
/// Period cells tile the cube starting at `-L/2`, so `G` must divide `L`.
pub fn equidistributed_sequence(grid: &Grid, period: f64, radius: f64, mode: &CenterMode) -> Result<EquidistributedSeq> {
    if !(period > 0.0) {
        return Err(invalid("G", "period must be positive"));
    }
    let ratio = grid.side_len() / period;
    let per_axis = ratio.round();
    if per_axis < 1.0 || (ratio - per_axis).abs() > 1e-9 {
        return Err(invalid("G", format!("period {period} does not divide L = {}", grid.side())));
    }
    let per_axis = per_axis as usize;
    let dim = grid.dim();
    build_sequence(dim, period, radius, per_axis, |cells| match mode {
        CenterMode::Midpoint => Ok(cells.iter().map(|(lo, _)| lo.iter().map(|x| x + 0.5 * period).collect()).collect()),
        CenterMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Ok(cells
                .iter()
                .map(|(lo, _)| lo.iter().map(|x| rng.random_range(x + radius..=x + period - radius)).collect())
                .collect())
        }
        CenterMode::Explicit { centers } => {
            if centers.len() != cells.len() {
                return Err(invalid(
                    "centers",
                    format!("expected {} centres (one per period cell), got {}", cells.len(), centers.len()),
                ));
            }
            if let Some(bad) = centers.iter().position(|c| c.len() != dim) {
                return Err(invalid("centers", format!("centre #{bad} does not have {dim} coordinates")));
            }
            Ok(centers.clone())
        }
    })
}

type CellBox = (Vec<f64>, Vec<i64>);

fn build_sequence(
    dim: usize,
    period: f64,
    radius: f64,
    per_axis: usize,
    centers_for: impl FnOnce(&[CellBox]) -> Result<Vec<Vec<f64>>>,
) -> Result<EquidistributedSeq> {
    if !(radius > 0.0) || !(radius < 0.5 * period) {
        return Err(invalid("delta", format!("radius {radius} must satisfy 0 < δ < G/2 = {}", 0.5 * period)));
    }
    let half = 0.5 * per_axis as f64 * period;
    let count = per_axis.pow(dim as u32);
    let cells: Vec<CellBox> = (0..count)
        .map(|c| {
            let m = multi_index(c, per_axis, dim);
            let lo: Vec<f64> = (0..dim).map(|k| -half + m[k] as f64 * period).collect();
            let label = lo.iter().map(|x| ((x + 0.5 * period) / period + 0.25).floor() as i64).collect();
            (lo, label)
        })
        .collect();
    let raw = centers_for(&cells)?;
    let tol = 1e-12 * period.max(1.0);
    let mut centers = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for (position, (c, (lo, label))) in raw.iter().zip(&cells).enumerate() {
        let inside = c.iter().zip(lo).all(|(&z, &l)| z - radius >= l - tol && z + radius <= l + period + tol);
        if !inside {
            return Err(Error::BallOutsideCell { position, cell: label.clone() });
        }
        centers.push(to_point(c));
        let mut l = [0i64; 3];
        l[..dim].copy_from_slice(label);
        labels.push(l);
    }
    Ok(EquidistributedSeq { dim, period, radius, centers, labels })
}

// ---------------------------------------------------------------------------
// Subset masks and restricted norms
// ---------------------------------------------------------------------------

/// Node and edge membership of a subset of the cube.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetMask {
    shape: GridShape,
    nodes: Vec<bool>,
    edges: Vec<Vec<bool>>,
    measure: f64,
}

impl SubsetMask {
    /// Nodes belong iff their coordinates satisfy `inside`; edges iff their midpoints do.
    pub fn from_predicate(grid: &Grid, inside: impl Fn(&Point) -> bool) -> Self {
        let nodes: Vec<bool> = (0..grid.node_count()).map(|n| inside(&grid.node_point(n))).collect();
        let edges = (0..grid.dim())
            .map(|k| {
                (0..grid.node_count())
                    .map(|n| grid.has_edge(k, n) && inside(&grid.edge_midpoint(k, n)))
                    .collect()
            })
            .collect();
        let measure = nodes.iter().filter(|&&b| b).count() as f64 * grid.cell_volume();
        SubsetMask { shape: grid.shape(), nodes, edges, measure }
    }

    pub fn full(grid: &Grid) -> Self {
        Self::from_predicate(grid, |_| true)
    }

    pub fn empty(grid: &Grid) -> Self {
        Self::from_predicate(grid, |_| false)
    }

    /// Open ball `B(x0, r)` intersected with the cube.
    pub fn ball(grid: &Grid, x0: &[f64], r: f64) -> Self {
        let c = to_point(x0);
        Self::from_predicate(grid, |p| dist(p, &c) < r)
    }

    pub fn measure(&self) -> f64 {
        self.measure
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn contains_node(&self, node: usize) -> bool {
        self.nodes[node]
    }

    pub fn contains_edge(&self, axis: usize, node: usize) -> bool {
        self.edges[axis][node]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().filter(|&&b| b).count()
    }

    /// Squared `L²` norm of a node field restricted to the mask.
    pub fn node_norm2(&self, grid: &Grid, u: &[f64]) -> Result<f64> {
        grid.check_shape(&self.shape, "mask")?;
        grid.check_node_len(u.len(), "node field")?;
        let s: f64 = u.iter().zip(&self.nodes).filter(|(_, &m)| m).map(|(v, _)| v * v).sum();
        Ok(s * grid.cell_volume())
    }

    /// Squared `L²` norm of a face field restricted to the mask (edge-midpoint membership).
    pub fn face_norm2(&self, grid: &Grid, g: &FaceField) -> Result<f64> {
        grid.check_shape(&self.shape, "mask")?;
        if g.axes.len() != grid.dim() || g.axes.iter().any(|a| a.len() != grid.node_count()) {
            return Err(Error::GridMismatch("face field does not match grid".into()));
        }
        let mut s = 0.0;
        for (k, axis) in g.axes.iter().enumerate() {
            for (n, v) in axis.iter().enumerate() {
                if self.edges[k][n] {
                    s += grid.edge_weight(k, n) * v * v;
                }
            }
        }
        Ok(s * grid.cell_volume())
    }
}

/// `S_{Z,δ}(L)`: union of the sequence balls, intersected with the cube.
pub fn ball_mask(grid: &Grid, seq: &EquidistributedSeq) -> Result<SubsetMask> {
    if seq.dim() != grid.dim() {
        return Err(Error::GridMismatch(format!("sequence is {}-dimensional, grid is {}", seq.dim(), grid.dim())));
    }
    let half = 0.5 * grid.side_len();
    let r = seq.radius();
    Ok(SubsetMask::from_predicate(grid, |p| {
        p[..grid.dim()].iter().all(|x| x.abs() < half) && seq.centers.iter().any(|c| dist(p, c) < r)
    }))
}

/// Forward differences along each axis, one value per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub axes: Vec<Vec<f64>>,
}

pub fn discrete_gradient(grid: &Grid, u: &[f64]) -> Result<FaceField> {
    grid.check_node_len(u.len(), "node field")?;
    let h = grid.spacing();
    let axes = (0..grid.dim())
        .map(|k| {
            let stride = grid.node_stride(k);
            (0..grid.node_count())
                .map(|n| if grid.has_edge(k, n) { (u[n + stride] - u[n]) / h } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(FaceField { axes })
}

/// Full squared `L²` norm of a node field.
pub fn norm2(grid: &Grid, u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>() * grid.cell_volume()
}

/// Full squared gradient norm `‖∇u‖²` with boundary edge weights.
pub fn gradient_norm2(grid: &Grid, u: &[f64]) -> Result<f64> {
    SubsetMask::full(grid).face_norm2(grid, &discrete_gradient(grid, u)?)
}

// ---------------------------------------------------------------------------
// Cutoff and smearing functions
// ---------------------------------------------------------------------------

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Radial cutoff: 1 on `B(x0, r)`, 0 outside `B(x0, 2r)`, cubic smoothstep in between.
/// Its gradient is bounded by `1.5 / r`.
pub fn cutoff(grid: &Grid, x0: &[f64], r: f64) -> Result<Vec<f64>> {
    if x0.len() != grid.dim() {
        return Err(Error::GridMismatch("centre dimension".into()));
    }
    if !(r > 0.0) {
        return Err(invalid("r", "radius must be positive"));
    }
    let half = 0.5 * grid.side_len();
    if x0.iter().any(|x| x.abs() + 2.0 * r > half + 1e-12) {
        return Err(Error::Geometry(format!("B({x0:?}, {}) is not contained in the cube", 2.0 * r)));
    }
    let c = to_point(x0);
    Ok((0..grid.node_count()).map(|n| cutoff_profile(dist(&grid.node_point(n), &c), r)).collect())
}

pub(crate) fn cutoff_profile(rho: f64, r: f64) -> f64 {
    1.0 - smoothstep((rho - r) / r)
}

/// The switch `ρ_ε`: −1 on `(−∞, −ε]`, 0 on `[ε, ∞)`, non-decreasing, slope at most `0.75/ε`.
pub fn switch(x: f64, eps: f64) -> f64 {
    -1.0 + smoothstep((x + eps) / (2.0 * eps))
}

/// `ρ_ε(v − shift)` for every value.
pub fn smooth_switch(values: &[f64], eps: f64, shift: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(invalid("epsilon", "width must be positive"));
    }
    Ok(values.iter().map(|v| switch(v - shift, eps)).collect())
}

/// Smeared window `ρ_ε(x−E+2ε) − ρ_ε(x−E−2ε)`, which dominates `1_{[E−ε,E+ε]}`.
pub fn smeared_window(x: f64, center: f64, eps: f64) -> f64 {
    switch(x - center + 2.0 * eps, eps) - switch(x - center - 2.0 * eps, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn g(d: usize, l: u32, n: u32, bc: Boundary) -> Grid {
        make_grid(d, l, n, bc).unwrap()
    }

    #[test]
    fn unknown_counts() {
        assert_eq!(g(1, 1, 8, Boundary::Dirichlet).unknown_count(), 7);
        assert_eq!(g(2, 2, 4, Boundary::Dirichlet).unknown_count(), 49);
        assert_eq!(g(1, 1, 8, Boundary::Neumann).unknown_count(), 9);
        assert_eq!(g(3, 1, 4, Boundary::Neumann).unknown_count(), 125);
        assert_eq!(g(3, 1, 4, Boundary::Dirichlet).unknown_count(), 27);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(make_grid(0, 1, 4, Boundary::Dirichlet).is_err());
        assert!(make_grid(4, 1, 4, Boundary::Dirichlet).is_err());
        assert!(make_grid(1, 0, 4, Boundary::Dirichlet).is_err());
        assert!(make_grid(1, 1, 1, Boundary::Dirichlet).is_err());
    }

    #[test]
    fn spacing_is_consistent() {
        let grid = g(2, 3, 5, Boundary::Dirichlet);
        assert_eq!(grid.cells_per_axis(), 15);
        assert_abs_diff_eq!(grid.spacing() * 15.0, 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(grid.node_point(0)[0], -1.5);
        assert_abs_diff_eq!(grid.node_point(grid.node_count() - 1)[1], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn midpoint_sequence() {
        let grid = g(1, 2, 8, Boundary::Dirichlet);
        let seq = equidistributed_sequence(&grid, 1.0, 0.25, &CenterMode::Midpoint).unwrap();
        let c: Vec<f64> = seq.centers().map(|c| c[0]).collect();
        assert_eq!(c, vec![-0.5, 0.5]);
    }

    #[test]
    fn radius_must_be_below_half_period() {
        let grid = g(1, 2, 8, Boundary::Dirichlet);
        assert!(equidistributed_sequence(&grid, 1.0, 0.5, &CenterMode::Midpoint).is_err());
        assert!(equidistributed_sequence(&grid, 1.0, 0.0, &CenterMode::Midpoint).is_err());
    }

    #[test]
    fn explicit_centers_are_verified() {
        let grid = g(1, 2, 8, Boundary::Dirichlet);
        let mode = CenterMode::Explicit { centers: vec![vec![-0.5], vec![0.9]] };
        let err = equidistributed_sequence(&grid, 1.0, 0.25, &mode).unwrap_err();
        assert_eq!(err, Error::BallOutsideCell { position: 1, cell: vec![0] });
    }

    #[test]
    fn random_centers_keep_balls_inside() {
        let grid = g(2, 3, 4, Boundary::Dirichlet);
        let seq = equidistributed_sequence(&grid, 1.0, 0.3, &CenterMode::Random { seed: 11 }).unwrap();
        assert_eq!(seq.len(), 9);
        let again = equidistributed_sequence(&grid, 1.0, 0.3, &CenterMode::Random { seed: 11 }).unwrap();
        assert_eq!(seq, again);
    }

    #[test]
    fn two_interval_mask() {
        let grid = g(1, 2, 64, Boundary::Dirichlet);
        let seq = equidistributed_sequence(&grid, 1.0, 0.25, &CenterMode::Midpoint).unwrap();
        let mask = ball_mask(&grid, &seq).unwrap();
        assert!((mask.measure() - 1.0).abs() <= 2.0 * grid.spacing());
        assert!(mask.contains_node(grid.node_from_multi([96, 0, 0])));
        assert!(!mask.contains_node(grid.node_from_multi([64, 0, 0])));
    }

    #[test]
    fn tiny_balls_hold_at_most_one_node() {
        let grid = g(1, 2, 16, Boundary::Dirichlet);
        let h = grid.spacing();
        let seq = equidistributed_sequence(&grid, 1.0, h / 2.0, &CenterMode::Midpoint).unwrap();
        let mask = ball_mask(&grid, &seq).unwrap();
        assert!(mask.measure() <= 2.0 * h + 1e-15);
    }

    #[test]
    fn gradient_of_affine_and_quadratic() {
        let grid = g(1, 1, 10, Boundary::Neumann);
        let lin = grid.sample_nodes(|x| x[0]);
        let d = discrete_gradient(&grid, &lin).unwrap();
        for n in 0..10 {
            assert_abs_diff_eq!(d.axes[0][n], 1.0, epsilon = 1e-12);
        }
        let c = grid.sample_nodes(|_| 3.0);
        assert!(discrete_gradient(&grid, &c).unwrap().axes[0].iter().all(|&v| v == 0.0));
        let q = grid.sample_nodes(|x| x[0] * x[0]);
        let d = discrete_gradient(&grid, &q).unwrap();
        for n in 0..10 {
            let m = grid.edge_midpoint(0, n)[0];
            assert_abs_diff_eq!(d.axes[0][n], 2.0 * m, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_and_full_masks() {
        let grid = g(2, 1, 8, Boundary::Neumann);
        let u = grid.sample_nodes(|x| x[0] + 2.0 * x[1]);
        assert_eq!(SubsetMask::empty(&grid).node_norm2(&grid, &u).unwrap(), 0.0);
        assert_eq!(SubsetMask::full(&grid).node_norm2(&grid, &u).unwrap(), norm2(&grid, &u));
    }

    #[test]
    fn mask_rejects_other_grid() {
        let a = g(1, 1, 8, Boundary::Dirichlet);
        let b = g(1, 1, 16, Boundary::Dirichlet);
        let mask = SubsetMask::full(&a);
        assert!(mask.node_norm2(&b, &vec![0.0; b.node_count()]).is_err());
    }

    #[test]
    fn cutoff_values() {
        let grid = g(1, 1, 200, Boundary::Dirichlet);
        let phi = cutoff(&grid, &[0.0], 0.2).unwrap();
        let center = grid.node_from_multi([100, 0, 0]);
        assert_eq!(phi[center], 1.0);
        let at_2r = grid.node_from_multi([180, 0, 0]);
        assert_abs_diff_eq!(phi[at_2r], 0.0, epsilon = 1e-12);
        assert!(cutoff(&grid, &[0.2], 0.2).is_err());
    }

    #[test]
    fn switch_plateaus_and_centre() {
        let eps = 0.1;
        let v = smooth_switch(&[1.0 - 2.0 * eps, 1.0 + 2.0 * eps, 1.0], eps, 1.0).unwrap();
        assert_eq!(v, vec![-1.0, 0.0, -0.5]);
        assert!(smooth_switch(&[0.0], 0.0, 0.0).is_err());
    }
}
