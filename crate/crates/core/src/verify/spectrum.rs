use serde_json::json;

use super::CheckReport;
use crate::operator::DiscreteOperator;
use crate::spectral::{threshold, Spectrum, DEFAULT_TOL};

/// Eigenpairs with their residuals `‖Hv − Ev‖`; passes when every residual is
/// below the solver threshold `tol·(|E| + 10⁻⁴ max H_ii)`.
pub fn spectrum_report(op: &DiscreteOperator, spectrum: &Spectrum) -> CheckReport {
    let mut rep = CheckReport::new("eigenpairs", "‖Hv − Ev‖ ≤ tol·(|E| + 10⁻⁴ max H_ii)")
        .field(op.field())
        .params(json!({ "count": spectrum.len(), "tol": DEFAULT_TOL }));
    let mut worst = 0.0f64;
    for (n, (&e, &r)) in spectrum.values.iter().zip(&spectrum.residuals).enumerate() {
        let limit = threshold(op, DEFAULT_TOL, e);
        worst = worst.max(r / limit);
        rep.row(&[("index", (n + 1) as f64), ("eigenvalue", e), ("residual", r), ("threshold", limit)]);
    }
    rep.observed("count", spectrum.len() as f64);
    rep.finish_upper(worst, 1.0, worst <= 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::identity_field;
    use crate::lattice::{make_grid, Boundary};
    use crate::operator::assemble;
    use crate::spectral::{eigensolve, Request};

    #[test]
    fn laplacian_rows() {
        let g = make_grid(1, 1, 16, Boundary::Dirichlet).unwrap();
        let op = assemble(&identity_field(&g)).unwrap();
        let rep = spectrum_report(&op, &eigensolve(&op, Request::Lowest(3)).unwrap());
        assert!(rep.passed);
        assert_eq!(rep.rows.len(), 3);
        let h: f64 = 1.0 / 16.0;
        let e1 = 4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
        assert!((rep.rows[0]["eigenvalue"] - e1).abs() < 1e-10 * e1);
    }
}
