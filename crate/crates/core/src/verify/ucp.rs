use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{aligned, require_dir, require_lipschitz, snapshot, CheckReport, Status, Tolerances};
use crate::bounds::{c_gradient, c_sfucp_family, delta0, kappa_family, kappa_prime, ConstantsConfig};
use crate::error::{Error, Result};
use crate::fields::item_rng;
use crate::lattice::{
    ball_mask, discrete_gradient, equidistributed_sequence, Boundary, CenterMode, EquidistributedSeq, SubsetMask,
};
use crate::operator::DiscreteOperator;
use crate::spectral::{count_eigenvalues, count_in_window, eigensolve, random_combination, Request, Spectrum};

fn masked_gradient(op: &DiscreteOperator, mask: &SubsetMask, psi: &[f64]) -> Result<f64> {
    mask.face_norm2(op.grid(), &discrete_gradient(op.grid(), psi)?)
}

fn note_delta0(rep: &mut CheckReport, cfg: &ConstantsConfig) {
    let d0 = delta0(cfg);
    rep.constant("delta0", d0);
    if !cfg.use_delta0_min && cfg.delta > d0 / 2.0 {
        rep.note(format!("δ = {} exceeds δ₀/2 = {:.3e}; constants evaluated at the configured δ", cfg.delta, d0 / 2.0));
    }
}

/// Reverse Caccioppoli inequality `‖∇ψ‖²_{B(x₀,2r)} ≥ C^∇(r)‖ψ‖²_{B(x₀,r)}` for
/// every eigenpair of `spectrum` with `E > E₋`.
pub fn reverse_caccioppoli_check(
    op: &DiscreteOperator,
    spectrum: &Spectrum,
    x0: &[f64],
    r: f64,
    e_minus: f64,
    tol: &Tolerances,
) -> Result<CheckReport> {
    let grid = op.grid();
    if x0.len() != grid.dim() {
        return Err(Error::GridMismatch(format!("x₀ has {} coordinates, grid is {}-dimensional", x0.len(), grid.dim())));
    }
    if !(r > 0.0) {
        return Err(Error::Geometry("radius must be positive".into()));
    }
    let half = grid.side_len() / 2.0;
    if x0.iter().any(|x| x.abs() + 2.0 * r > half + 1e-12) {
        return Err(Error::Geometry(format!("B({x0:?}, {}) is not contained in the cube of side {}", 2.0 * r, 2.0 * half)));
    }
    let theta_plus = op.field().theta_plus();
    let c = c_gradient(r, e_minus, theta_plus);
    let mut rep = CheckReport::new("reverse_caccioppoli", "‖∇ψ‖²_{B(x₀,2r)} ≥ C^∇(r)·‖ψ‖²_{B(x₀,r)}")
        .field(op.field())
        .params(json!({ "x0": x0, "r": r, "e_minus": e_minus, "tolerances": snapshot(tol) }));
    rep.constant("c_gradient", c);
    let outer = SubsetMask::ball(grid, x0, 2.0 * r);
    let inner = SubsetMask::ball(grid, x0, r);
    let factor = tol.mask_factor(grid);
    let mut worst: Option<(f64, f64)> = None;
    let mut all = true;
    let mut min_ratio = f64::INFINITY;
    for n in 0..spectrum.len() {
        let e = spectrum.values[n];
        if e <= e_minus {
            continue;
        }
        let psi = spectrum.node_field(grid, n);
        let lhs = masked_gradient(op, &outer, &psi)?;
        let mass = inner.node_norm2(grid, &psi)?;
        let rhs = c * mass;
        let ok = lhs >= rhs * factor;
        all &= ok;
        if mass > 0.0 {
            min_ratio = min_ratio.min(lhs / mass);
        }
        if worst.is_none_or(|(l, r)| lhs * r < l * rhs) {
            worst = Some((lhs, rhs));
        }
        rep.row(&[("index", (n + 1) as f64), ("eigenvalue", e), ("lhs", lhs), ("rhs", rhs), ("inner_mass", mass)]);
    }
    let Some((lhs, rhs)) = worst else {
        rep.note("no eigenvalue above E₋; inequality not applicable");
        return Ok(rep.finish_with(Status::Skipped));
    };
    rep.observed("min_ratio", min_ratio);
    Ok(rep.finish_lower(lhs, rhs, all))
}

/// `‖ψ‖²_{S_{Z,δ}} ≥ C_sfUCP‖ψ‖²` for eigenfunctions with `E ∈ [lo, hi]`,
/// with the potential realized as `V ≡ v_bound`.
#[allow(clippy::too_many_arguments)]
pub fn ucp_function_check(
    op: &DiscreteOperator,
    spectrum: &Spectrum,
    seq: &EquidistributedSeq,
    lo: f64,
    hi: f64,
    v_bound: f64,
    cfg: &ConstantsConfig,
    tol: &Tolerances,
) -> Result<CheckReport> {
    let field = op.field();
    let lip = require_lipschitz(field)?;
    require_dir(field)?;
    let mut cfg = aligned(cfg, field, Some(seq));
    cfg.theta_lip = cfg.theta_lip.max(lip);
    cfg.validate()?;
    let grid = op.grid();
    let c = c_sfucp_family(&cfg, v_bound).c_sfucp;
    let mut rep = CheckReport::new("ucp_function", "‖ψ‖²_S ≥ C_sfUCP·‖ψ‖²")
        .field(field)
        .params(json!({ "lo": lo, "hi": hi, "v_bound": v_bound, "constants": snapshot(&cfg), "tolerances": snapshot(tol) }));
    rep.constant("c_sfucp", c);
    note_delta0(&mut rep, &cfg);
    let mask = ball_mask(grid, seq)?;
    let mut min_lhs = f64::INFINITY;
    for n in 0..spectrum.len() {
        let e = spectrum.values[n];
        if e < lo || e > hi {
            continue;
        }
        let lhs = mask.node_norm2(grid, &spectrum.node_field(grid, n))?;
        min_lhs = min_lhs.min(lhs);
        rep.row(&[("index", (n + 1) as f64), ("eigenvalue", e), ("lhs", lhs)]);
    }
    if rep.rows.is_empty() {
        rep.note("no eigenvalue in the interval");
        return Ok(rep.finish_with(Status::Vacuous));
    }
    rep.observed("min_ratio", min_lhs);
    let ok = min_lhs >= c * tol.mask_factor(grid);
    Ok(rep.finish_lower(min_lhs, c, ok))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientVariant {
    /// Lipschitz field satisfying the derivative condition; any `E₊`.
    Lipschitz,
    /// Any elliptic field, `E₊ ≤ κ`.
    LowEnergy,
    /// Neumann conditions, `d ≥ 3`, `E₊ ≤ κ^N`.
    Neumann,
}

/// Constant and energy ceiling of the gradient variant, after checking its hypotheses.
fn gradient_constant(op: &DiscreteOperator, cfg: &mut ConstantsConfig, variant: GradientVariant) -> Result<(f64, f64)> {
    let field = op.field();
    let bc = op.grid().bc();
    let unit = (cfg.g - 1.0).abs() < 1e-12;
    match variant {
        GradientVariant::Lipschitz => {
            if bc != Boundary::Dirichlet {
                return Err(Error::Precondition("Lipschitz variant needs Dirichlet conditions".into()));
            }
            cfg.theta_lip = cfg.theta_lip.max(require_lipschitz(field)?);
            require_dir(field)?;
            let f = c_sfucp_family(cfg, cfg.e_plus);
            Ok((if unit { f.c_grad } else { f.c_grad_scaled }, f64::INFINITY))
        }
        GradientVariant::LowEnergy => {
            if bc != Boundary::Dirichlet {
                return Err(Error::Precondition("low-energy variant needs Dirichlet conditions".into()));
            }
            let k = kappa_family(cfg);
            if unit {
                Ok((k.c_tilde_grad, k.kappa))
            } else {
                Ok((k.c_tilde_grad_scaled, k.kappa_g))
            }
        }
        GradientVariant::Neumann => {
            if bc != Boundary::Neumann {
                return Err(Error::Precondition("Neumann variant needs Neumann conditions".into()));
            }
            if cfg.d < 3 {
                return Err(Error::Precondition(format!("Neumann variant needs d ≥ 3, got d = {}", cfg.d)));
            }
            if !unit {
                return Err(Error::Precondition("Neumann variant needs a (1, δ)-equidistributed sequence".into()));
            }
            let k = kappa_family(cfg);
            Ok((k.c_n_grad.value, k.kappa_n.value))
        }
    }
}

/// `‖∇ψ‖²_{S_{Z,δ}} ≥ C‖ψ‖²` for eigenfunctions with `E₋ < E < E₊`.
pub fn ucp_gradient_check(
    op: &DiscreteOperator,
    spectrum: &Spectrum,
    seq: &EquidistributedSeq,
    cfg: &ConstantsConfig,
    variant: GradientVariant,
    tol: &Tolerances,
) -> Result<CheckReport> {
    let mut cfg = aligned(cfg, op.field(), Some(seq));
    cfg.validate()?;
    let (c, ceiling) = gradient_constant(op, &mut cfg, variant)?;
    if cfg.e_plus > ceiling {
        return Err(Error::Precondition(format!("E₊ = {} exceeds the low-energy ceiling {:.6e}", cfg.e_plus, ceiling)));
    }
    let grid = op.grid();
    let mut rep = CheckReport::new("ucp_gradient", "‖∇ψ‖²_S ≥ C·‖ψ‖²")
        .field(op.field())
        .params(json!({ "variant": variant, "constants": snapshot(&cfg), "tolerances": snapshot(tol) }));
    rep.constant("c_gradient_ucp", c);
    if ceiling.is_finite() {
        rep.constant("energy_ceiling", ceiling);
    }
    if variant == GradientVariant::Lipschitz {
        note_delta0(&mut rep, &cfg);
    }
    let mask = ball_mask(grid, seq)?;
    let mut min_lhs = f64::INFINITY;
    for n in 0..spectrum.len() {
        let e = spectrum.values[n];
        if e <= cfg.e_minus || e >= cfg.e_plus {
            continue;
        }
        let lhs = masked_gradient(op, &mask, &spectrum.node_field(grid, n))?;
        min_lhs = min_lhs.min(lhs);
        rep.row(&[("index", (n + 1) as f64), ("eigenvalue", e), ("lhs", lhs)]);
    }
    let window = count_in_window(op, cfg.e_minus, cfg.e_plus);
    rep.observed("window_count", window.count as f64);
    if window.count > rep.rows.len() {
        rep.note(format!(
            "spectrum covers {} of {} eigenvalues in the window",
            rep.rows.len(),
            window.count
        ));
    }
    if rep.rows.is_empty() {
        rep.note("no eigenvalue in (E₋, E₊)");
        return Ok(rep.finish_with(Status::Vacuous));
    }
    rep.observed("min_ratio", min_lhs);
    let ok = min_lhs >= c * tol.mask_factor(grid);
    Ok(rep.finish_lower(min_lhs, c, ok))
}

/// The Neumann ground state is constant, so its gradient vanishes on every
/// subset: the gradient bound must fail there. Negative control.
pub fn neumann_zero_mode_check(
    op: &DiscreteOperator,
    spectrum: &Spectrum,
    seq: &EquidistributedSeq,
    cfg: &ConstantsConfig,
    tol: &Tolerances,
) -> Result<CheckReport> {
    if op.grid().bc() != Boundary::Neumann {
        return Err(Error::Precondition("zero-mode control needs Neumann conditions".into()));
    }
    if spectrum.is_empty() || spectrum.values[0].abs() > 1e-8 * op.max_diagonal() {
        return Err(Error::Precondition("spectrum does not start at the zero mode".into()));
    }
    let cfg = aligned(cfg, op.field(), Some(seq));
    let k = kappa_family(&cfg);
    let c = k.c_n_grad.value;
    let grid = op.grid();
    let mut rep = CheckReport::new("neumann_zero_mode", "‖∇ψ₀‖²_S ≥ C^{N,∇}·‖ψ₀‖² (expected to fail)")
        .field(op.field())
        .params(json!({ "constants": snapshot(&cfg) }));
    rep.negative_control = true;
    rep.constant("c_gradient_ucp", c);
    if let Some(n) = k.c_n_grad.note {
        rep.note(n);
    }
    let lhs = masked_gradient(op, &ball_mask(grid, seq)?, &spectrum.node_field(grid, 0))?;
    rep.row(&[("index", 1.0), ("eigenvalue", spectrum.values[0]), ("lhs", lhs)]);
    // The gradient vanishes identically, so no mask allowance applies.
    Ok(rep.finish_lower(lhs, c, lhs >= c * (1.0 - tol.tol)))
}

/// Gradient ratio `‖∇ψ₁‖²_S/‖ψ₁‖²` of the first non-constant Neumann
/// eigenfunction along growing cubes; passes iff the ratio does not increase.
pub fn neumann_trend_check(ops: &[DiscreteOperator], radius: f64, mode: &CenterMode) -> Result<CheckReport> {
    let mut rep = CheckReport::new("neumann_trend", "‖∇ψ₁‖²_S/‖ψ₁‖² non-increasing in L")
        .params(json!({ "radius": radius, "mode": snapshot(mode), "sides": ops.iter().map(|o| o.grid().side()).collect::<Vec<_>>() }));
    let mut ratios = Vec::with_capacity(ops.len());
    for op in ops {
        let grid = op.grid();
        if grid.bc() != Boundary::Neumann {
            return Err(Error::Precondition("trend study needs Neumann conditions".into()));
        }
        let seq = equidistributed_sequence(grid, 1.0, radius, mode)?;
        let s = eigensolve(op, Request::Lowest(2))?;
        let ratio = masked_gradient(op, &ball_mask(grid, &seq)?, &s.node_field(grid, 1))?;
        rep.row(&[("side", grid.side_len()), ("eigenvalue", s.values[1]), ("ratio", ratio)]);
        ratios.push(ratio);
    }
    if ratios.len() < 2 {
        return Err(Error::Precondition("trend study needs at least two cubes".into()));
    }
    let ok = ratios.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let (first, last) = (ratios[0], ratios[ratios.len() - 1]);
    Ok(rep.finish_upper(last, first, ok))
}

/// Smallest eigenvalue of `[⟨ψ_i, 1_S ψ_j⟩]` over the given eigenvectors.
fn compressed_minimum(op: &DiscreteOperator, spectrum: &Spectrum, idx: &[usize], mask: &SubsetMask) -> f64 {
    let grid = op.grid();
    let inside: Vec<bool> = (0..grid.unknown_count()).map(|u| mask.contains_node(grid.node_of(u))).collect();
    let k = idx.len();
    let q = DMatrix::from_fn(k, k, |a, b| {
        let (va, vb) = (&spectrum.vectors[idx[a]], &spectrum.vectors[idx[b]]);
        let s: f64 = (0..va.len()).filter(|&u| inside[u]).map(|u| va[u] * vb[u]).sum();
        s * grid.cell_volume()
    });
    SymmetricEigen::new(q).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `χ_I 1_S χ_I ≥ κ′ χ_I` for `I = (−∞, λ)`: exact minimum over the spectral
/// subspace plus a Monte Carlo minimum over random elements.
#[allow(clippy::too_many_arguments)]
pub fn projector_ucp_check(
    op: &DiscreteOperator,
    spectrum: &Spectrum,
    seq: &EquidistributedSeq,
    lambda: f64,
    n_samples: usize,
    seed: u64,
    cfg: &ConstantsConfig,
    tol: &Tolerances,
) -> Result<CheckReport> {
    let cfg = aligned(cfg, op.field(), Some(seq));
    if (cfg.g - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition("projector bound needs a (1, δ)-equidistributed sequence".into()));
    }
    let kp = kappa_prime(&cfg, cfg.delta);
    if lambda > kp {
        return Err(Error::Precondition(format!("λ = {lambda} exceeds κ′ = {kp:.6e}")));
    }
    let grid = op.grid();
    let idx: Vec<usize> = (0..spectrum.len()).filter(|&i| spectrum.values[i] < lambda).collect();
    let below = count_eigenvalues(op, lambda);
    if below.count > idx.len() && !below.ambiguous {
        return Err(Error::Precondition(format!(
            "spectrum holds {} of the {} eigenvalues below λ",
            idx.len(),
            below.count
        )));
    }
    let mut rep = CheckReport::new("projector_ucp", "min_{ψ ∈ Ran χ_I} ‖ψ‖²_S/‖ψ‖² ≥ κ′")
        .field(op.field())
        .seeds(&[seed])
        .params(json!({ "lambda": lambda, "n_samples": n_samples, "constants": snapshot(&cfg), "tolerances": snapshot(tol) }));
    rep.constant("kappa_prime", kp);
    rep.observed("span_dim", idx.len() as f64);
    if idx.is_empty() {
        rep.note("no eigenvalue below λ; bound holds vacuously");
        return Ok(rep.finish_with(Status::Vacuous));
    }
    let mask = ball_mask(grid, seq)?;
    let exact = compressed_minimum(op, spectrum, &idx, &mask);
    let samples: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = item_rng(seed, i as u64);
            let v = random_combination(spectrum, &idx, &mut rng);
            mask.node_norm2(grid, &grid.extend(&v)).unwrap_or(f64::NAN)
        })
        .collect();
    let mc = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    rep.observed("exact_minimum", exact);
    if n_samples > 0 {
        rep.observed("mc_minimum", mc);
        rep.observed("mc_relative_gap", (mc - exact) / exact);
    }
    for &i in &idx {
        let v = mask.node_norm2(grid, &spectrum.node_field(grid, i))?;
        rep.row(&[("index", (i + 1) as f64), ("eigenvalue", spectrum.values[i]), ("mask_mass", v)]);
    }
    let consistent = n_samples == 0 || mc >= exact - 1e-10;
    if !consistent {
        rep.note("Monte Carlo minimum fell below the exact minimum");
    }
    let ok = exact >= kp * tol.mask_factor(grid) && consistent;
    Ok(rep.finish_lower(exact, kp, ok))
}
