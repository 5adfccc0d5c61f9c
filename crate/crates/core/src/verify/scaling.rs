use serde_json::json;

use super::CheckReport;
use crate::error::{Error, Result};
use crate::fields::MatrixField;
use crate::lattice::{ball_mask, discrete_gradient, EquidistributedSeq};
use crate::operator::{assemble, rescale, DiscreteOperator};
use crate::spectral::{eigensolve, Request, Spectrum};

fn masked_gradient(op: &DiscreteOperator, spectrum: &Spectrum, n: usize, seq: &EquidistributedSeq) -> Result<f64> {
    let grid = op.grid();
    let psi = spectrum.node_field(grid, n);
    ball_mask(grid, seq)?.face_norm2(grid, &discrete_gradient(grid, &psi)?)
}

/// Compare `H_{GL}(A)` with the rescaled `H_L(A_G)`: eigenvalues scale by
/// `G²` and `‖∇u‖²_{S_{Z,δ}(GL)} = G^{d−2}‖∇u_G‖²_{S_{Z_G,δ/G}(L)}`.
///
/// `seq` must be `(G, δ)`-equidistributed on the large cube; both problems are
/// solved independently and `k` eigenpairs compared.
pub fn scaling_check(field: &MatrixField, seq: &EquidistributedSeq, k: usize, rel_tol: f64) -> Result<CheckReport> {
    let g = seq.period();
    let small = rescale(field, g)?;
    let seq_small = seq.scaled_down(g)?;
    if (seq_small.period() - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!("mapped sequence has period {}", seq_small.period())));
    }
    let big_op = assemble(field)?;
    let small_op = assemble(&small.field)?;
    let k = k.min(big_op.dim()).max(1);
    let big = eigensolve(&big_op, Request::Lowest(k))?;
    let sm = eigensolve(&small_op, Request::Lowest(k))?;

    let mut rep = CheckReport::new("scaling", "eig(H_L(A_G)) = G²·eig(H_{GL}(A)); masked gradient ratios agree")
        .field(field)
        .params(json!({ "g": g, "delta": seq.radius(), "k": k, "rel_tol": rel_tol }));
    rep.observed("mapped_period", seq_small.period());
    rep.observed("mapped_radius", seq_small.radius());
    let mut worst_eig = 0.0f64;
    for n in 0..k {
        let expected = small.factor * big.values[n];
        let rel = (sm.values[n] - expected).abs() / expected.abs().max(1e-300);
        worst_eig = worst_eig.max(rel);
        rep.row(&[("index", (n + 1) as f64), ("large", big.values[n]), ("small", sm.values[n]), ("relative", rel)]);
    }
    // Gradient identity on non-degenerate eigenfunctions (sign is fixed, so they correspond).
    let mut worst_grad = 0.0f64;
    let mut compared = 0;
    for n in 0..k {
        let scale = big.values[n].abs().max(1.0);
        if big.gap(n) < 1e-6 * scale || sm.gap(n) < 1e-6 * scale * small.factor {
            continue;
        }
        let lhs = masked_gradient(&big_op, &big, n, seq)?;
        let rhs = masked_gradient(&small_op, &sm, n, &seq_small)? / small.factor;
        let rel = (lhs - rhs).abs() / lhs.abs().max(1e-300);
        worst_grad = worst_grad.max(rel);
        compared += 1;
        rep.row(&[("index", (n + 1) as f64), ("gradient_large", lhs), ("gradient_small", rhs), ("relative", rel)]);
    }
    rep.observed("eigenvalue_relative_error", worst_eig);
    rep.observed("gradient_relative_error", worst_grad);
    rep.observed("gradient_pairs", compared as f64);
    let worst = worst_eig.max(worst_grad);
    Ok(rep.finish_upper(worst, rel_tol, worst <= rel_tol && compared > 0))
}
