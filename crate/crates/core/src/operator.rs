//! Assembly of the discrete form `∫ ∇u·A∇u` and the operator it induces.
//!
//! Inside each cell the gradient is evaluated at every corner `v` from the
//! cell edges through `v` (one per axis), so that
//!
//! ```text
//! h(u,u) = Σ_cells h^d/2^d Σ_corners g_vᵀ A_cell g_v .
//! ```
//!
//! Axis-aligned terms therefore see the arithmetic mean of the cells around
//! each edge, mixed terms pair the two forward differences meeting at a
//! corner, and the form is exactly linear in `A`. Since `|g_v|²` summed over
//! corners is the edge-weighted `‖∇u‖²`, cellwise ellipticity transfers to
//! the discrete form without loss. The operator is `H = K / h^d`, where `K`
//! is the form matrix and `h^d` the lumped node mass.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::fields::MatrixField;
use crate::lattice::{multi_index, Grid};

/// Sparse symmetric operator on the unknowns of a grid.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Arc<Grid>,
    field: MatrixField,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
    /// `Σ_j K_ij` over eliminated (boundary) neighbours `j`.
    outer: Vec<f64>,
    bandwidth: usize,
}

/// Offsets `{-1,0,1}^d` encoded in base 3.
fn stencil_size(d: usize) -> usize {
    3usize.pow(d as u32)
}

fn offset_code(d: usize, delta: &[i64]) -> usize {
    (0..d).rev().fold(0, |acc, k| acc * 3 + (delta[k] + 1) as usize)
}

/// Corner-gradient form matrix on the full node lattice, stored as a 3^d stencil per node.
fn full_stencil(field: &MatrixField) -> Vec<f64> {
    let grid = field.grid();
    let d = grid.dim();
    let h = grid.spacing();
    let ss = stencil_size(d);
    let mut k = vec![0.0; grid.node_count() * ss];
    let scale = h.powi(d as i32 - 2) / (1usize << d) as f64;
    let mut add = |grid: &Grid, a: usize, b: usize, v: f64| {
        let ma = grid.node_multi(a);
        let mb = grid.node_multi(b);
        let delta: Vec<i64> = (0..d).map(|i| mb[i] as i64 - ma[i] as i64).collect();
        k[a * ss + offset_code(d, &delta)] += v;
    };
    for c in 0..grid.cell_count() {
        let nodes = grid.cell_nodes(c);
        let a = field.cell(c);
        for v in 0..(1usize << d) {
            // Edge along axis i through corner v: (lo_i, hi_i).
            let ends: Vec<(usize, usize)> = (0..d).map(|i| (nodes[v & !(1 << i)], nodes[v | (1 << i)])).collect();
            for i in 0..d {
                for j in 0..d {
                    let coef = scale * a[i * d + j];
                    if coef == 0.0 {
                        continue;
                    }
                    let (li, hi) = ends[i];
                    let (lj, hj) = ends[j];
                    add(grid, hi, hj, coef);
                    add(grid, li, lj, coef);
                    add(grid, hi, lj, -coef);
                    add(grid, li, hj, -coef);
                }
            }
        }
    }
    k
}

pub fn assemble(field: &MatrixField) -> Result<DiscreteOperator> {
    let (lo, _) = crate::fields::check_ellipticity(field)?;
    if !(field.theta_minus() > 0.0) || lo < field.theta_minus() * (1.0 - 1e-12) {
        return Err(Error::Precondition(format!(
            "ellipticity bound θ₋ = {} not satisfied (cell minimum {lo})",
            field.theta_minus()
        )));
    }
    let grid = field.grid_arc().clone();
    let d = grid.dim();
    let ss = stencil_size(d);
    let k = full_stencil(field);
    let centre = offset_code(d, &[0, 0, 0][..d]);
    let offsets: Vec<Vec<i64>> =
        (0..ss).map(|code| multi_index(code, 3, d)[..d].iter().map(|&x| x as i64 - 1).collect()).collect();
    let n_axis = grid.nodes_per_axis() as i64;
    let neighbour = |node: usize, off: &[i64]| -> Option<usize> {
        let m = grid.node_multi(node);
        let mut t = [0usize; 3];
        for i in 0..d {
            let x = m[i] as i64 + off[i];
            if !(0..n_axis).contains(&x) {
                return None;
            }
            t[i] = x as usize;
        }
        Some(grid.node_from_multi(t))
    };
    let nu = grid.unknown_count();
    let mut row_ptr = Vec::with_capacity(nu + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut diag = vec![0.0; nu];
    let mut outer = vec![0.0; nu];
    let mut bandwidth = 0;
    let inv_mass = 1.0 / grid.cell_volume();
    row_ptr.push(0);
    for i in 0..nu {
        let node = grid.node_of(i);
        let mut off_sum = 0.0;
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (code, off) in offsets.iter().enumerate() {
            if code == centre {
                continue;
            }
            let Some(other) = neighbour(node, off) else { continue };
            let back = offset_code(d, &off.iter().map(|x| -x).collect::<Vec<_>>());
            let kij = 0.5 * (k[node * ss + code] + k[other * ss + back]) * inv_mass;
            if kij == 0.0 {
                continue;
            }
            off_sum += kij;
            match grid.unknown_of(other) {
                Some(j) => {
                    bandwidth = bandwidth.max(j.abs_diff(i));
                    entries.push((j, kij));
                }
                None => outer[i] += kij,
            }
        }
        entries.sort_by_key(|e| e.0);
        for (j, v) in entries {
            cols.push(j);
            vals.push(v);
        }
        diag[i] = -off_sum;
        row_ptr.push(cols.len());
    }
    Ok(DiscreteOperator { grid, field: field.clone(), row_ptr, cols, vals, diag, outer, bandwidth })
}

impl DiscreteOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn field(&self) -> &MatrixField {
        &self.field
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn max_diagonal(&self) -> f64 {
        self.diag.iter().cloned().fold(0.0, f64::max)
    }

    /// Off-diagonal entries `(j, H_ij)` of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.cols[p], self.vals[p]))
    }

    /// `H_ij` (zero outside the stencil).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    /// `Hu`, written as `Σ_j H_ij (u_j − u_i) − (Σ_outer H_ij) u_i` so that
    /// Neumann operators annihilate constants exactly.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let ui = u[i];
                self.row(i).map(|(j, v)| v * (u[j] - ui)).sum::<f64>() - self.outer[i] * ui
            })
            .collect()
    }

    /// `uᵀHu` on the unknowns (no mass weighting).
    pub fn quadratic(&self, u: &[f64]) -> f64 {
        self.apply(u).iter().zip(u).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Lower band of `H − shift·I`: `band[i][k] = (H − shift)_{i, i−k}`.
    pub(crate) fn lower_band(&self, shift: f64) -> Vec<Vec<f64>> {
        let bw = self.bandwidth;
        (0..self.dim())
            .map(|i| {
                let mut row = vec![0.0; bw + 1];
                row[0] = self.diag[i] - shift;
                for (j, v) in self.row(i) {
                    if j < i {
                        row[i - j] = v;
                    }
                }
                row
            })
            .collect()
    }

    /// Coordinate dump `row col value`, one entry per line, zero-based.
    pub fn write_coo(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "% {} {} {}", self.dim(), self.dim(), self.vals.len() + self.dim())?;
        for i in 0..self.dim() {
            let mut row: Vec<(usize, f64)> = self.row(i).collect();
            row.push((i, self.diag[i]));
            row.sort_by_key(|e| e.0);
            for (j, v) in row {
                writeln!(out, "{i} {j} {v:e}")?;
            }
        }
        Ok(())
    }
}

/// Corner gradients `g_v` of a lattice node field in cell `c`.
fn corner_gradients(grid: &Grid, u: &[f64], c: usize) -> Vec<[f64; 3]> {
    let d = grid.dim();
    let h = grid.spacing();
    let nodes = grid.cell_nodes(c);
    (0..(1usize << d))
        .map(|v| {
            let mut g = [0.0; 3];
            for (i, gi) in g.iter_mut().enumerate().take(d) {
                *gi = (u[nodes[v | (1 << i)]] - u[nodes[v & !(1 << i)]]) / h;
            }
            g
        })
        .collect()
}

/// `Σ_c h^d/2^d Σ_v g_vᵀ A_c g_v` evaluated directly from the cells.
pub fn form_value(field: &MatrixField, u: &[f64]) -> Result<f64> {
    let grid = field.grid();
    grid.check_node_len(u.len(), "node field")?;
    let d = grid.dim();
    let w = grid.cell_volume() / (1usize << d) as f64;
    let mut s = 0.0;
    for c in 0..grid.cell_count() {
        let a = field.cell(c);
        for g in corner_gradients(grid, u, c) {
            for i in 0..d {
                for j in 0..d {
                    s += w * g[i] * a[i * d + j] * g[j];
                }
            }
        }
    }
    Ok(s)
}

/// `Σ_c h^d/2^d w_c Σ_v |g_v|²`: the discrete `∫ w |∇u|²` for a cell weight `w`.
pub fn weighted_gradient_energy(grid: &Grid, u: &[f64], cell_weight: &[f64]) -> Result<f64> {
    grid.check_node_len(u.len(), "node field")?;
    if cell_weight.len() != grid.cell_count() {
        return Err(Error::GridMismatch("cell weight length".into()));
    }
    let w = grid.cell_volume() / (1usize << grid.dim()) as f64;
    let mut s = 0.0;
    for (c, &cw) in cell_weight.iter().enumerate() {
        if cw != 0.0 {
            s += w * cw * corner_gradients(grid, u, c).iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>();
        }
    }
    Ok(s)
}

/// Field on `Λ_L` obtained from a field on `Λ_{GL}` through `x ↦ Gx`.
#[derive(Debug, Clone)]
pub struct Rescaled {
    pub field: MatrixField,
    /// Spectra satisfy `eig(H_L(A_G)) = factor · eig(H_{GL}(A))`.
    pub factor: f64,
}

/// `A_G(x) = A(Gx)` on `Λ_{L/G}` with `G·n_per_side` cells per unit length.
pub fn rescale(field: &MatrixField, g: f64) -> Result<Rescaled> {
    if !(g > 0.0) {
        return Err(invalid("G", "must be positive"));
    }
    let src = field.grid();
    let side = f64::from(src.side()) / g;
    let per_unit = f64::from(src.per_unit()) * g;
    let as_int = |x: f64| (x.round() >= 1.0 && (x - x.round()).abs() < 1e-9).then_some(x.round() as u32);
    let (Some(side), Some(per_unit)) = (as_int(side), as_int(per_unit)) else {
        return Err(invalid(
            "G",
            format!("G = {g} maps L = {} with n_per_side = {} off the integer grid", src.side(), src.per_unit()),
        ));
    };
    let grid = Grid::new(src.dim(), side, per_unit, src.bc())?;
    let out = MatrixField::from_entries(Arc::new(grid), field.entries().to_vec())?
        .with_bounds(field.theta_minus(), field.theta_plus())
        .with_lipschitz_meta(field.lipschitz().map(|mut l| {
            l.value *= g;
            l
        }));
    Ok(Rescaled { field: out, factor: g * g })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{checkerboard, constant_field, identity_field, scalar_constant, scalar_field};
    use crate::lattice::{gradient_norm2, make_grid, Boundary};
    use approx::assert_relative_eq;

    #[test]
    fn laplacian_stencil_1d() {
        let g = make_grid(1, 1, 8, Boundary::Dirichlet).unwrap();
        let op = assemble(&identity_field(&g)).unwrap();
        let m = op.to_dense();
        let s = 64.0;
        for i in 0..7 {
            assert_relative_eq!(m[(i, i)], 2.0 * s, max_relative = 1e-14);
            if i + 1 < 7 {
                assert_relative_eq!(m[(i, i + 1)], -s, max_relative = 1e-14);
                assert_eq!(m[(i, i + 1)], m[(i + 1, i)]);
            }
        }
    }

    #[test]
    fn laplacian_stencil_2d_is_five_point() {
        let g = make_grid(2, 1, 4, Boundary::Dirichlet).unwrap();
        let op = assemble(&identity_field(&g)).unwrap();
        let m = op.to_dense();
        for i in 0..op.dim() {
            assert_relative_eq!(m[(i, i)], 64.0, max_relative = 1e-14);
            assert_eq!(op.row(i).count(), op.row(i).filter(|e| (e.1 + 16.0).abs() < 1e-12).count());
        }
    }

    #[test]
    fn exact_symmetry_with_mixed_terms() {
        let g = make_grid(2, 2, 4, Boundary::Neumann).unwrap();
        let f = crate::fields::sampled_field(&g, |x| {
            let a = 1.5 + 0.3 * x[0];
            vec![a, 0.2 * x[1], 0.2 * x[1], 2.0]
        })
        .unwrap();
        let m = assemble(&f).unwrap().to_dense();
        assert_eq!(m, m.transpose());
        let s = assemble(&scalar_field(&g, |x| 1.5 + x[0] * x[1]).unwrap()).unwrap().to_dense();
        assert_eq!(s, s.transpose());
    }

    #[test]
    fn neumann_kernel_is_constant() {
        let g = make_grid(2, 2, 4, Boundary::Neumann).unwrap();
        let f = crate::fields::sampled_field(&g, |x| vec![2.0 + x[0], 0.3, 0.3, 1.0 + x[1] * x[1]]).unwrap();
        let op = assemble(&f).unwrap();
        assert!(op.apply(&vec![1.0; op.dim()]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_in_scalar_multiples() {
        let g = make_grid(2, 1, 4, Boundary::Dirichlet).unwrap();
        let a = assemble(&identity_field(&g)).unwrap().to_dense();
        let b = assemble(&scalar_constant(&g, 3.0).unwrap()).unwrap().to_dense();
        assert!((b - a * 3.0).abs().max() < 1e-10);
    }

    #[test]
    fn operator_matches_form() {
        let g = make_grid(2, 1, 4, Boundary::Dirichlet).unwrap();
        let f = constant_field(&g, &[2.0, 0.7, 0.7, 1.0]).unwrap();
        let op = assemble(&f).unwrap();
        let u: Vec<f64> = (0..op.dim()).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let full = g.extend(&u);
        assert_relative_eq!(op.quadratic(&u) * g.cell_volume(), form_value(&f, &full).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn ellipticity_transfer() {
        let g = make_grid(2, 2, 4, Boundary::Neumann).unwrap();
        let f = checkerboard(&g, 1.0, 3.0).unwrap();
        let u = g.sample_nodes(|x| (3.0 * x[0]).sin() + x[1] * x[1]);
        let q = form_value(&f, &u).unwrap();
        let grad = gradient_norm2(&g, &u).unwrap();
        assert!(q >= grad * (1.0 - 1e-12) && q <= 3.0 * grad * (1.0 + 1e-12));
    }

    #[test]
    fn rescale_examples() {
        let g = make_grid(1, 2, 8, Boundary::Dirichlet).unwrap();
        let f = identity_field(&g).with_lipschitz(1.0);
        let r = rescale(&f, 1.0).unwrap();
        assert_eq!(r.factor, 1.0);
        assert_eq!(r.field.entries(), f.entries());
        let r = rescale(&f, 2.0).unwrap();
        assert_eq!(r.field.grid().side(), 1);
        assert_eq!(r.field.grid().per_unit(), 16);
        assert_eq!(r.factor, 4.0);
        assert_eq!(r.field.lipschitz().unwrap().value, 2.0);
        assert!(rescale(&f, 3.0).is_err());
    }

    #[test]
    fn coo_dump_lists_all_entries() {
        let g = make_grid(1, 1, 4, Boundary::Dirichlet).unwrap();
        let op = assemble(&identity_field(&g)).unwrap();
        let mut buf = Vec::new();
        op.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 4);
    }
}
