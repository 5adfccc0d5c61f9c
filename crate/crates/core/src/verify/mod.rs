//! Executable checks of the unique-continuation, lifting, Wegner, scaling and
//! mollification inequalities. Every check returns a [`CheckReport`] and is a
//! pure function of its inputs and seeds.

mod lifting;
mod mollify;
mod report;
mod scaling;
mod spectrum;
mod ucp;
mod wegner;

use serde::{Deserialize, Serialize};

pub use lifting::{lifting_check, LiftingVariant};
pub use mollify::{mollification_convergence, MollifyOptions};
pub use report::{CheckReport, Inputs, Quantity, Status};
pub use scaling::scaling_check;
pub use spectrum::spectrum_report;
pub use ucp::{
    neumann_trend_check, neumann_zero_mode_check, projector_ucp_check, reverse_caccioppoli_check,
    ucp_function_check, ucp_gradient_check, GradientVariant,
};
pub use wegner::{pi_singular_check, wegner_mc, weyl_check, WegnerOptions, WegnerVariant};

use crate::bounds::ConstantsConfig;
use crate::error::{Error, Result};
use crate::fields::{check_dir_condition, MatrixField};
use crate::lattice::{EquidistributedSeq, Grid};

/// Comparison tolerances shared by all checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative slack on every inequality.
    pub tol: f64,
    /// Multiplier of `h` in the slack given to quantities measured on geometric masks.
    pub kappa_disc: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { tol: 1e-6, kappa_disc: 10.0 }
    }
}

impl Tolerances {
    /// Factor applied to a lower bound measured on a mask: `1 − tol − κ_disc·h`.
    pub fn mask_factor(&self, grid: &Grid) -> f64 {
        (1.0 - self.tol - self.kappa_disc * grid.spacing()).max(0.0)
    }
}

/// `cfg` with `d`, `L`, `G` and `δ` taken from the field and sequence, and the
/// ellipticity bounds widened to cover the field.
pub(crate) fn aligned(cfg: &ConstantsConfig, field: &MatrixField, seq: Option<&EquidistributedSeq>) -> ConstantsConfig {
    let mut c = cfg.clone();
    let grid = field.grid();
    c.d = grid.dim();
    c.side = grid.side_len();
    c.theta_minus = c.theta_minus.min(field.theta_minus());
    c.theta_plus = c.theta_plus.max(field.theta_plus());
    if let Some(s) = seq {
        c.delta = s.radius();
        c.g = s.period();
    }
    c
}

pub(crate) fn snapshot<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

pub(crate) fn require_lipschitz(field: &MatrixField) -> Result<f64> {
    match field.lipschitz() {
        Some(l) if l.is_certified() => Ok(l.value),
        Some(_) => Err(Error::Precondition("(Lip): the field's Lipschitz constant is only an empirical estimate".into())),
        None => Err(Error::Precondition("(Lip): the field has no Lipschitz bound".into())),
    }
}

pub(crate) fn require_dir(field: &MatrixField) -> Result<()> {
    let rep = check_dir_condition(field);
    if rep.holds {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "(Dir): derivative condition fails on {} cells",
            rep.violating_cells.len()
        )))
    }
}
