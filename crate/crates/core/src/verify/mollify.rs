use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{snapshot, CheckReport};
use crate::error::{invalid, Error, Result};
use crate::fields::{check_ellipticity, mollify, MatrixField};
use crate::operator::assemble;
use crate::spectral::{eigensolve, Request};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MollifyOptions {
    /// Largest relative eigenvalue deviation allowed at the last `ℓ`.
    pub final_tol: f64,
}

impl Default for MollifyOptions {
    fn default() -> Self {
        MollifyOptions { final_tol: 0.01 }
    }
}

/// Eigenvalues of `H(A_ℓ)` approach those of `H(A)` along the `ℓ` sweep, and
/// every `A_ℓ` is elliptic with bounds `[θ₋ − eps, θ₊]`.
pub fn mollification_convergence(
    field: &MatrixField,
    eps: f64,
    ells: &[u32],
    k: usize,
    opts: &MollifyOptions,
) -> Result<CheckReport> {
    if ells.is_empty() {
        return Err(invalid("ells", "sweep is empty"));
    }
    if !(eps > 0.0 && eps < field.theta_minus()) {
        return Err(invalid("eps", format!("need 0 < eps < θ₋ = {}", field.theta_minus())));
    }
    let reference = eigensolve(&assemble(field)?, Request::Lowest(k))?;
    let (lo_bound, hi_bound) = (field.theta_minus() - eps, field.theta_plus());
    let per_ell: Vec<Result<(f64, f64, f64, Vec<f64>)>> = ells
        .par_iter()
        .map(|&ell| {
            let m = mollify(field, ell, eps)?;
            let (lo, hi) = check_ellipticity(&m)?;
            let s = eigensolve(&assemble(&m)?, Request::Lowest(k))?;
            let dev = s
                .values
                .iter()
                .zip(&reference.values)
                .map(|(a, b)| (a - b).abs() / b.abs())
                .fold(0.0, f64::max);
            Ok((lo, hi, dev, s.values))
        })
        .collect();

    let mut rep = CheckReport::new("mollification", "max_n |E_n(A_ℓ) − E_n(A)|/E_n(A) → 0 as ℓ grows")
        .field(field)
        .params(json!({ "eps": eps, "ells": ells, "k": k, "options": snapshot(opts) }));
    let mut devs = Vec::with_capacity(ells.len());
    let mut certified = true;
    for (r, &ell) in per_ell.into_iter().zip(ells) {
        let (lo, hi, dev, values) = r?;
        let ok = lo >= lo_bound * (1.0 - 1e-12) && hi <= hi_bound * (1.0 + 1e-12);
        certified &= ok;
        let mut row = vec![("ell", f64::from(ell)), ("theta_minus", lo), ("theta_plus", hi), ("deviation", dev)];
        let names: Vec<String> = (1..=values.len()).map(|n| format!("e{n}")).collect();
        for (name, v) in names.iter().zip(&values) {
            row.push((name.as_str(), *v));
        }
        rep.row(&row);
        devs.push(dev);
    }
    if !certified {
        return Err(Error::Precondition(format!("a mollified field leaves [{lo_bound}, {hi_bound}]")));
    }
    let last = *devs.last().unwrap_or(&f64::NAN);
    let monotone = devs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let eventually = devs.iter().all(|&d| last <= d);
    rep.observed("final_deviation", last);
    rep.observed("monotone", f64::from(u8::from(monotone)));
    rep.constant("theta_minus_bound", lo_bound);
    rep.constant("theta_plus_bound", hi_bound);
    Ok(rep.finish_upper(last, opts.final_tol, eventually && last <= opts.final_tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{checkerboard, scalar_constant};
    use crate::lattice::{make_grid, Boundary};

    #[test]
    fn constant_field_unchanged_for_sub_cell_kernel() {
        let g = make_grid(1, 2, 16, Boundary::Dirichlet).unwrap();
        let f = scalar_constant(&g, 2.0).unwrap();
        let rep = mollification_convergence(&f, 0.5, &[32, 64], 3, &MollifyOptions::default()).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert!(rep.passed);
    }

    #[test]
    fn eps_above_theta_rejected() {
        let g = make_grid(1, 2, 16, Boundary::Dirichlet).unwrap();
        let f = checkerboard(&g, 1.0, 2.0).unwrap();
        assert!(mollification_convergence(&f, 1.0, &[4], 2, &MollifyOptions::default()).is_err());
    }

    #[test]
    fn checkerboard_sweep_certified() {
        let g = make_grid(1, 2, 64, Boundary::Dirichlet).unwrap();
        let f = checkerboard(&g, 1.0, 2.0).unwrap();
        let rep = mollification_convergence(&f, 0.25, &[4, 8, 16], 3, &MollifyOptions { final_tol: 1.0 }).unwrap();
        for r in &rep.rows {
            assert!(r["theta_minus"] >= 0.75 - 1e-12 && r["theta_plus"] <= 2.0 + 1e-12);
        }
        let devs: Vec<f64> = rep.rows.iter().map(|r| r["deviation"]).collect();
        assert!(devs[2] < devs[0], "{devs:?}");
    }
}
