use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{aligned, require_dir, require_lipschitz, snapshot, CheckReport, Status, Tolerances};
use crate::bounds::{c_evl_family, kappa_family, ConstantsConfig};
use crate::error::{Error, Result};
use crate::fields::MatrixField;
use crate::lattice::{ball_mask, Boundary, EquidistributedSeq};
use crate::operator::assemble;
use crate::spectral::{eigensolve, LiftingCurve, Request};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftingVariant {
    /// Lipschitz `W` with `W ≥ 1_S`; constant `C_evl`.
    Lipschitz,
    /// Bounded `W ≥ 1_S`; constant `Ĉ_evl`.
    Bounded,
    /// Any elliptic field, `E₊ ≤ κ`; constant `C̃_evl`.
    LowEnergy,
    /// Neumann conditions, `d ≥ 3`, `E₊ ≤ κ^N`.
    Neumann,
    /// `W ≥ 1` everywhere; slope `E₋/(θ₊ + T‖W‖_∞)`.
    Elementary,
}

/// Relative agreement required between the Hellmann–Feynman value and a central difference.
const HF_TOLERANCE: f64 = 1e-3;
const FD_STEP: f64 = 1e-4;

fn w_lipschitz(field: &MatrixField, w: &[f64]) -> f64 {
    let grid = field.grid();
    let h = grid.spacing();
    let mut lip = 0.0f64;
    for k in 0..grid.dim() {
        let s = grid.node_stride(k);
        for n in 0..grid.node_count() {
            if grid.has_edge(k, n) {
                lip = lip.max((w[n + s] - w[n]).abs() / h);
            }
        }
    }
    lip
}

fn check_hypotheses(
    field: &MatrixField,
    w: &[f64],
    seq: &EquidistributedSeq,
    cfg: &ConstantsConfig,
    variant: LiftingVariant,
) -> Result<f64> {
    let grid = field.grid();
    grid.check_node_len(w.len(), "W")?;
    if let Some((n, v)) = w.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NodePrecondition { node: n, reason: format!("W = {v} is negative") });
    }
    if variant == LiftingVariant::Elementary {
        if let Some((n, v)) = w.iter().enumerate().find(|(_, v)| **v < 1.0) {
            return Err(Error::NodePrecondition { node: n, reason: format!("W = {v} < 1; elementary bound needs W ≥ 1") });
        }
    } else {
        let mask = ball_mask(grid, seq)?;
        if let Some(n) = (0..w.len()).find(|&n| mask.contains_node(n) && w[n] < 1.0) {
            return Err(Error::NodePrecondition { node: n, reason: format!("W = {} < 1 inside S", w[n]) });
        }
    }
    let w_max = w.iter().cloned().fold(0.0, f64::max);
    if w_max > cfg.k2 * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("‖W‖_∞ = {w_max} exceeds K₂ = {}", cfg.k2)));
    }
    let unit = (cfg.g - 1.0).abs() < 1e-12;
    let bc = grid.bc();
    let dirichlet = || {
        if bc == Boundary::Dirichlet {
            Ok(())
        } else {
            Err(Error::Precondition(format!("{variant:?} lifting bound needs Dirichlet conditions")))
        }
    };
    let evl = c_evl_family(cfg);
    let kappa = kappa_family(cfg);
    let ceiling = |k: f64| {
        if cfg.e_plus > k {
            Err(Error::Precondition(format!("E₊ = {} exceeds the low-energy ceiling {k:.6e}", cfg.e_plus)))
        } else {
            Ok(())
        }
    };
    match variant {
        LiftingVariant::Lipschitz => {
            dirichlet()?;
            require_lipschitz(field)?;
            require_dir(field)?;
            let lip = w_lipschitz(field, w);
            if lip > cfg.k1 * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Precondition(format!("Lip(W) ≈ {lip} exceeds K₁ = {}", cfg.k1)));
            }
            Ok(if unit { evl.c_evl } else { evl.c_evl_scaled })
        }
        LiftingVariant::Bounded => {
            dirichlet()?;
            require_lipschitz(field)?;
            require_dir(field)?;
            if !unit {
                return Err(Error::Precondition("bounded-W lifting needs a (1, δ)-equidistributed sequence".into()));
            }
            Ok(evl.c_evl_hat)
        }
        LiftingVariant::LowEnergy => {
            dirichlet()?;
            if unit {
                ceiling(kappa.kappa)?;
                Ok(evl.c_evl_tilde)
            } else {
                ceiling(kappa.kappa_g)?;
                Ok(evl.c_evl_tilde_scaled)
            }
        }
        LiftingVariant::Neumann => {
            if bc != Boundary::Neumann {
                return Err(Error::Precondition("Neumann lifting needs Neumann conditions".into()));
            }
            if cfg.d < 3 {
                return Err(Error::Precondition(format!("Neumann lifting needs d ≥ 3, got d = {}", cfg.d)));
            }
            if !unit {
                return Err(Error::Precondition("Neumann lifting needs a (1, δ)-equidistributed sequence".into()));
            }
            ceiling(kappa.kappa_n.value)?;
            Ok(kappa.c_n_grad.value)
        }
        LiftingVariant::Elementary => Ok(evl.elementary),
    }
}

/// Central difference of `E_n(t)` at `t = 0` for the given indices.
fn central_difference(field: &MatrixField, w: &[f64], count: usize) -> Result<Vec<f64>> {
    let mut side = Vec::with_capacity(2);
    for t in [FD_STEP, -FD_STEP] {
        let op = assemble(&field.shifted(w, t)?)?;
        side.push(eigensolve(&op, Request::Lowest(count.min(op.dim())))?.values);
    }
    Ok((0..count).map(|n| (side[0][n] - side[1][n]) / (2.0 * FD_STEP)).collect())
}

/// `E_n(t) ≥ E_n(0) + t·C` for every index whose curve stays inside `(E₋, E₊)`.
///
/// `curve` must have been computed for `field` and `w`.
pub fn lifting_check(
    field: &MatrixField,
    w: &[f64],
    curve: &LiftingCurve,
    seq: &EquidistributedSeq,
    cfg: &ConstantsConfig,
    variant: LiftingVariant,
    tol: &Tolerances,
) -> Result<CheckReport> {
    let mut cfg = aligned(cfg, field, Some(seq));
    let horizon = curve.ts.last().copied().unwrap_or(0.0);
    cfg.t = horizon;
    cfg.validate()?;
    let c = check_hypotheses(field, w, seq, &cfg, variant)?;
    let mut rep = CheckReport::new("lifting", "E_n(t) ≥ E_n(0) + t·C")
        .field(field)
        .params(json!({ "variant": variant, "constants": snapshot(&cfg), "ts": curve.ts, "tolerances": snapshot(tol) }));
    rep.constant("c_lifting", c);
    if !curve.is_complete() {
        rep.note(format!("solver failed at t = {:?}", curve.failed));
    }
    let last = curve.ts.len() - 1;
    let mut in_window = Vec::new();
    for n in 0..curve.values.len() {
        let row = &curve.values[n];
        if row.iter().any(|v| !v.is_finite()) {
            rep.note(format!("index {} excluded: incomplete curve", n + 1));
        } else if row[0] > cfg.e_minus && row[last] < cfg.e_plus {
            in_window.push(n);
        } else {
            rep.note(format!("index {} excluded: leaves (E₋, E₊) on [0, T]", n + 1));
        }
    }
    if in_window.is_empty() {
        rep.note("no index stays inside (E₋, E₊)");
        return Ok(rep.finish_with(Status::Vacuous));
    }

    let mut bound_ok = true;
    let mut monotone = true;
    let mut slope_ok = true;
    let mut min_slope = f64::INFINITY;
    for &n in &in_window {
        let row = &curve.values[n];
        let e0 = row[0];
        for i in 0..=last {
            let t = curve.ts[i];
            let slack = tol.tol * row[i].abs().max(1.0) * 1e-3;
            if i > 0 {
                let slope = (row[i] - e0) / t;
                min_slope = min_slope.min(slope);
                bound_ok &= row[i] >= e0 + t * c - slack;
                monotone &= row[i] >= row[i - 1] - slack;
            }
            if variant == LiftingVariant::Elementary && i > 0 && i < last && !curve.degenerate[n][i] {
                slope_ok &= curve.hf[n][i] >= c * (1.0 - tol.tol);
            }
            rep.row(&[
                ("index", (n + 1) as f64),
                ("t", t),
                ("eigenvalue", row[i]),
                ("lower_bound", e0 + t * c),
                ("hf", curve.hf[n][i]),
            ]);
        }
    }

    let count = in_window.iter().max().map_or(0, |m| m + 1);
    let fd = central_difference(field, w, (count + 1).min(field.grid().unknown_count()))?;
    let mut worst_hf = 0.0f64;
    for &n in &in_window {
        if curve.degenerate[n][0] {
            continue;
        }
        let rel = (curve.hf[n][0] - fd[n]).abs() / fd[n].abs().max(1e-300);
        worst_hf = worst_hf.max(rel);
    }
    let hf_ok = worst_hf <= HF_TOLERANCE;

    rep.observed("min_slope", min_slope);
    rep.observed("hf_fd_relative_error", worst_hf);
    rep.observed("in_window", in_window.len() as f64);
    if !monotone {
        rep.note("a curve row decreases in t");
    }
    if !slope_ok {
        rep.note("Hellmann–Feynman slope below the elementary bound at an interior sample");
    }
    if !hf_ok {
        rep.note(format!("Hellmann–Feynman value differs from the central difference by {worst_hf:.3e}"));
    }
    let ok = bound_ok && monotone && slope_ok && hf_ok;
    Ok(rep.finish_lower(min_slope, c, ok))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{identity_field, tent_field};
    use crate::lattice::{equidistributed_sequence, make_grid, CenterMode, Grid};
    use crate::spectral::lifting_curve;
    use approx::assert_relative_eq;

    fn setup(l: u32, n: u32) -> (Grid, MatrixField, EquidistributedSeq) {
        let g = make_grid(1, l, n, Boundary::Dirichlet).unwrap();
        let f = identity_field(&g);
        let seq = equidistributed_sequence(&g, 1.0, 0.3, &CenterMode::Midpoint).unwrap();
        (g, f, seq)
    }

    #[test]
    fn elementary_bound_for_constant_shift() {
        let (g, f, seq) = setup(1, 64);
        let w = vec![1.0; g.node_count()];
        let curve = lifting_curve(&f, &w, 1.0, 4, 2).unwrap();
        let cfg = ConstantsConfig { e_minus: 1.0, e_plus: 200.0, k2: 1.0, ..Default::default() };
        let rep = lifting_check(&f, &w, &curve, &seq, &cfg, LiftingVariant::Elementary, &Tolerances::default()).unwrap();
        assert!(rep.passed, "{:?}", rep.notes);
        assert_relative_eq!(rep.rhs, 0.5, max_relative = 1e-12);
        // E_n(t) = (1+t)E_n(0): the slope equals E_1(0).
        assert_relative_eq!(rep.lhs, curve.values[0][0], max_relative = 1e-9);
    }

    #[test]
    fn zero_perturbation_rejected() {
        let (g, f, seq) = setup(1, 32);
        let w = vec![0.0; g.node_count()];
        let curve = lifting_curve(&f, &w, 1.0, 2, 1).unwrap();
        let r = lifting_check(&f, &w, &curve, &seq, &ConstantsConfig::default(), LiftingVariant::Bounded, &Tolerances::default());
        assert!(matches!(r, Err(Error::NodePrecondition { .. })));
    }

    #[test]
    fn tent_perturbation_passes() {
        let (g, f, seq) = setup(1, 128);
        let w = tent_field(&g, &seq, 0.3);
        let curve = lifting_curve(&f, &w, 1.0, 4, 1).unwrap();
        let cfg = ConstantsConfig { e_minus: 1.0, e_plus: 30.0, k1: 1.0 / 0.3, k2: 1.0, ..Default::default() };
        let rep = lifting_check(&f, &w, &curve, &seq, &cfg, LiftingVariant::Lipschitz, &Tolerances::default()).unwrap();
        assert!(rep.passed, "{:?}", rep.notes);
        assert!(rep.margin > 0.0);
        assert!(rep.quantity_value("hf_fd_relative_error").unwrap() < 1e-3);
    }

    #[test]
    fn steep_w_rejected_for_lipschitz_variant() {
        let (g, f, seq) = setup(1, 128);
        let w = tent_field(&g, &seq, 0.3);
        let curve = lifting_curve(&f, &w, 1.0, 2, 1).unwrap();
        let cfg = ConstantsConfig { e_minus: 1.0, e_plus: 30.0, k1: 1.0, k2: 1.0, ..Default::default() };
        let r = lifting_check(&f, &w, &curve, &seq, &cfg, LiftingVariant::Lipschitz, &Tolerances::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
