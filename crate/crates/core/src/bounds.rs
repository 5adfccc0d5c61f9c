//! Explicit constants of the unique-continuation, lifting and Wegner bounds.
//!
//! The absolute constants `N`, `M`, `a`, `b`, `c`, `C` and `C_{E₊}` are only
//! known to exist; they are configuration values (default 1) and every report
//! marks them as such.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub d: usize,
    pub theta_minus: f64,
    pub theta_plus: f64,
    pub theta_lip: f64,
    pub e_minus: f64,
    pub e_plus: f64,
    pub delta: f64,
    /// Period `G` of the equidistributed sequence.
    pub g: f64,
    /// Horizon `T` of the lifting parameter.
    pub t: f64,
    /// Bound on `Lip(W)`.
    pub k1: f64,
    /// Bound on `‖W‖_∞`.
    pub k2: f64,
    /// Side length `L` (enters `C^N_sfUCP`).
    pub side: f64,
    /// Outer bump radius `δ₊` of the alloy model.
    pub delta_plus: f64,
    pub n: f64,
    pub m: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub c_neumann: f64,
    pub c_weyl: f64,
    /// Replace `δ` by `min{δ, δ₀}` in the unique-continuation constants.
    pub use_delta0_min: bool,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            d: 1,
            theta_minus: 1.0,
            theta_plus: 1.0,
            theta_lip: 0.0,
            e_minus: 1.0,
            e_plus: 2.0,
            delta: 0.25,
            g: 1.0,
            t: 1.0,
            k1: 0.0,
            k2: 1.0,
            side: 1.0,
            delta_plus: 0.5,
            n: 1.0,
            m: 1.0,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            c_neumann: 1.0,
            c_weyl: 1.0,
            use_delta0_min: false,
        }
    }
}

impl ConstantsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.d) {
            return Err(invalid("d", "dimension outside 1..=3"));
        }
        if !(self.theta_minus > 0.0 && self.theta_minus <= self.theta_plus) {
            return Err(invalid("theta_minus", "need 0 < θ₋ ≤ θ₊"));
        }
        if !(self.e_minus > 0.0 && self.e_minus < self.e_plus) {
            return Err(invalid("e_minus", "need 0 < E₋ < E₊"));
        }
        if !(self.delta > 0.0) {
            return Err(invalid("delta", "must be positive"));
        }
        if !(self.g > 0.0 && self.side > 0.0) {
            return Err(invalid("g", "G and L must be positive"));
        }
        if !(self.t >= 0.0 && self.k1 >= 0.0 && self.k2 >= 0.0 && self.theta_lip >= 0.0) {
            return Err(invalid("t", "T, K₁, K₂ and θ_Lip must be non-negative"));
        }
        let named = [
            ("n", self.n),
            ("m", self.m),
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("c_neumann", self.c_neumann),
            ("c_weyl", self.c_weyl),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(invalid("constants", format!("absolute constant `{name}` must be positive")));
        }
        Ok(())
    }

    /// `θ_Ellip = max(1/θ₋, θ₊)`.
    pub fn theta_ellip(&self) -> f64 {
        (1.0 / self.theta_minus).max(self.theta_plus)
    }

    /// `δ`, or `min{δ, δ₀}` when requested.
    pub fn effective_delta(&self) -> f64 {
        if self.use_delta0_min {
            self.delta.min(delta0(self))
        } else {
            self.delta
        }
    }

    fn energy_exponent(&self) -> f64 {
        self.n * (1.0 + self.e_plus.powf(2.0 / 3.0))
    }

    fn low_energy_exponent(&self) -> f64 {
        self.m * (1.0 + self.theta_minus.powf(-2.0 / 3.0))
    }
}

/// `δ₀ = 2G / (330 d e² θ^{11/2} (θ+1)^{5/3} (Gθ_Lip + 1))`.
pub fn delta0(cfg: &ConstantsConfig) -> f64 {
    let th = cfg.theta_ellip();
    let e2 = std::f64::consts::E.powi(2);
    2.0 * cfg.g / (330.0 * cfg.d as f64 * e2 * th.powf(5.5) * (th + 1.0).powf(5.0 / 3.0) * (cfg.g * cfg.theta_lip + 1.0))
}

/// `C^∇(r) = r²E₋² / (2θ₊(8θ₊ + r²E₋))`.
pub fn c_gradient(r: f64, e_minus: f64, theta_plus: f64) -> f64 {
    let r2 = r * r;
    r2 * e_minus * e_minus / (2.0 * theta_plus * (8.0 * theta_plus + r2 * e_minus))
}

/// Lower bound `E₋²r² / (2θ₊(8θ₊ + E₋))` of `C^∇(r)`, valid for `r ≤ 1`.
pub fn c_gradient_lower(r: f64, e_minus: f64, theta_plus: f64) -> f64 {
    e_minus * e_minus * r * r / (2.0 * theta_plus * (8.0 * theta_plus + e_minus))
}

/// `κ′(δ) = ½ δ^{M(1 + θ₋^{-2/3})}`.
pub fn kappa_prime(cfg: &ConstantsConfig, delta: f64) -> f64 {
    0.5 * delta.powf(cfg.low_energy_exponent())
}

/// `C^N_sfUCP(δ) = cθ₋δ^d [b/min{√d, L/2}² + |log(aδ^{d−2})|]^{−2}`.
pub fn c_neumann_sfucp(cfg: &ConstantsConfig, delta: f64) -> f64 {
    let d = cfg.d as f64;
    let m = d.sqrt().min(cfg.side / 2.0);
    let bracket = cfg.b / (m * m) + (cfg.a * delta.powf(d - 2.0)).ln().abs();
    cfg.c * cfg.theta_minus * delta.powf(d) / (bracket * bracket)
}

/// A constant whose hypotheses may not hold for the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flagged {
    pub value: f64,
    pub valid: bool,
    pub note: Option<String>,
}

impl Flagged {
    fn neumann(cfg: &ConstantsConfig, value: f64) -> Self {
        if cfg.d >= 3 {
            Flagged { value, valid: true, note: None }
        } else {
            Flagged { value, valid: false, note: Some(format!("Neumann constants assume d ≥ 3, got d = {}", cfg.d)) }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfucpFamily {
    /// `δ^{N(1+‖V‖_∞^{2/3})}`.
    pub c_sfucp: f64,
    /// `C^∇(δ)(δ/2)^{N(1+E₊^{2/3})}`.
    pub c_grad: f64,
    /// `C^∇(δ)(δ/(2G))^{N(1+G^{4/3}E₊^{2/3})}`.
    pub c_grad_scaled: f64,
    /// `C₁(δ/2)^{2+N(1+E₊^{2/3})}` with `C₁ = 2E₋²/(θ₊(8θ₊+E₋))`.
    pub bracket_lower: f64,
    /// `C₂(δ/2)^{N(1+E₊^{2/3})}` with `C₂ = E₋/(2θ₊)`.
    pub bracket_upper: f64,
}

pub fn c_sfucp_family(cfg: &ConstantsConfig, v_norm: f64) -> SfucpFamily {
    let delta = cfg.effective_delta();
    let (em, tp) = (cfg.e_minus, cfg.theta_plus);
    let expo = cfg.energy_exponent();
    let scaled_expo = cfg.n * (1.0 + cfg.g.powf(4.0 / 3.0) * cfg.e_plus.powf(2.0 / 3.0));
    let half = delta / 2.0;
    let c1 = 2.0 * em * em / (tp * (8.0 * tp + em));
    let c2 = em / (2.0 * tp);
    SfucpFamily {
        c_sfucp: delta.powf(cfg.n * (1.0 + v_norm.powf(2.0 / 3.0))),
        c_grad: c_gradient(delta, em, tp) * half.powf(expo),
        c_grad_scaled: c_gradient(delta, em, tp) * (delta / (2.0 * cfg.g)).powf(scaled_expo),
        bracket_lower: c1 * half.powf(2.0 + expo),
        bracket_upper: c2 * half.powf(expo),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvlFamily {
    /// `C^∇`-type constant with `θ̃₊ = θ₊ + TK₂`.
    pub c_evl: f64,
    /// The same formula at `δ̂ = δ/2`.
    pub c_evl_hat: f64,
    /// `δ²E₋²/(4θ₊(8θ₊+δ²E₋)) (δ/2)^{M(1+θ₋^{−2/3})}`.
    pub c_evl_tilde: f64,
    /// `E₋/(θ₊ + T‖W‖_∞)` with `‖W‖_∞ = K₂`.
    pub elementary: f64,
    /// `δ²E₋²/(2θ′(8θ′+δ²E₋)) (δ/(2G))^{N(1+G^{4/3}E₊^{2/3})}`, `θ′ = θ₊ + TK₂`.
    pub c_evl_scaled: f64,
    /// `δ²E₋²/(2θ₊(8θ₊+δ²E₋)) (δ/(2G))^{M(1+θ₋^{−2/3})}`.
    pub c_evl_tilde_scaled: f64,
}

fn lifting_formula(delta: f64, cfg: &ConstantsConfig, theta: f64) -> f64 {
    c_gradient(delta, cfg.e_minus, theta) * (delta / 2.0).powf(cfg.energy_exponent())
}

pub fn c_evl_family(cfg: &ConstantsConfig) -> EvlFamily {
    let delta = cfg.effective_delta();
    let tt = cfg.theta_plus + cfg.t * cfg.k2;
    let scaled_expo = cfg.n * (1.0 + cfg.g.powf(4.0 / 3.0) * cfg.e_plus.powf(2.0 / 3.0));
    let low = cfg.low_energy_exponent();
    EvlFamily {
        c_evl: lifting_formula(delta, cfg, tt),
        c_evl_hat: lifting_formula(delta / 2.0, cfg, tt),
        c_evl_tilde: 0.5 * c_gradient(delta, cfg.e_minus, cfg.theta_plus) * (delta / 2.0).powf(low),
        elementary: cfg.e_minus / (cfg.theta_plus + cfg.t * cfg.k2),
        c_evl_scaled: c_gradient(delta, cfg.e_minus, tt) * (delta / (2.0 * cfg.g)).powf(scaled_expo),
        c_evl_tilde_scaled: c_gradient(delta, cfg.e_minus, cfg.theta_plus) * (delta / (2.0 * cfg.g)).powf(low),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaFamily {
    pub kappa_prime: f64,
    /// `κ′(δ/2)`.
    pub kappa: f64,
    /// `Cθ₋(δ/2)^{d−2}`.
    pub kappa_n: Flagged,
    /// `C^N_sfUCP(δ)`.
    pub c_n_sfucp: Flagged,
    /// `C^∇(δ) C^N_sfUCP(δ/2)`; also the Neumann lifting constant.
    pub c_n_grad: Flagged,
    /// `½ C^∇(δ)(δ/2)^{M(1+θ₋^{−2/3})}`.
    pub c_tilde_grad: f64,
    /// `(1/(2G²))(δ/(2G))^{M(1+θ₋^{−2/3})}`.
    pub kappa_g: f64,
    /// `C^∇(δ)(δ/(2G))^{M(1+θ₋^{−2/3})}`.
    pub c_tilde_grad_scaled: f64,
}

pub fn kappa_family(cfg: &ConstantsConfig) -> KappaFamily {
    let delta = cfg.delta;
    let low = cfg.low_energy_exponent();
    let cg = c_gradient(delta, cfg.e_minus, cfg.theta_plus);
    let d = cfg.d as f64;
    KappaFamily {
        kappa_prime: kappa_prime(cfg, delta),
        kappa: kappa_prime(cfg, delta / 2.0),
        kappa_n: Flagged::neumann(cfg, cfg.c_neumann * cfg.theta_minus * (delta / 2.0).powf(d - 2.0)),
        c_n_sfucp: Flagged::neumann(cfg, c_neumann_sfucp(cfg, delta)),
        c_n_grad: Flagged::neumann(cfg, cg * c_neumann_sfucp(cfg, delta / 2.0)),
        c_tilde_grad: 0.5 * cg * (delta / 2.0).powf(low),
        kappa_g: 1.0 / (2.0 * cfg.g * cfg.g) * (delta / (2.0 * cfg.g)).powf(low),
        c_tilde_grad_scaled: cg * (delta / (2.0 * cfg.g)).powf(low),
    }
}

/// `C_{E₊}(2+δ₊)^d · 4/c`, with `c` either `Ĉ_evl` or `C_evl`.
pub fn c_wegner(cfg: &ConstantsConfig, c_evl: f64, c_weyl: f64) -> f64 {
    c_weyl * (2.0 + cfg.delta_plus).powi(cfg.d as i32) * (4.0 / c_evl)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Computed from a closed formula.
    Constant,
    /// Measured from the discrete model.
    Observed,
    /// An absolute constant set by configuration, not derived.
    Configured,
    /// Calibrated from measurements.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedConstant {
    pub name: String,
    pub value: f64,
    pub formula: String,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub config: ConstantsConfig,
    /// `‖V‖_∞` used for `C_sfUCP`.
    pub v_norm: f64,
    pub constants: Vec<NamedConstant>,
}

impl ConstantsReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|c| c.name == name).map(|c| c.value)
    }
}

/// Every constant for `cfg`, with formulas; re-evaluating the snapshot reproduces it.
pub fn constants_report(cfg: &ConstantsConfig, v_norm: f64) -> Result<ConstantsReport> {
    cfg.validate()?;
    let sf = c_sfucp_family(cfg, v_norm);
    let ev = c_evl_family(cfg);
    let ka = kappa_family(cfg);
    let mut out = Vec::new();
    let mut push = |name: &str, value: f64, formula: &str, provenance: Provenance, note: Option<String>| {
        out.push(NamedConstant { name: name.into(), value, formula: formula.into(), provenance, note });
    };
    use Provenance::*;
    for (name, v) in [
        ("N", cfg.n),
        ("M", cfg.m),
        ("a", cfg.a),
        ("b", cfg.b),
        ("c", cfg.c),
        ("C", cfg.c_neumann),
        ("C_E+", cfg.c_weyl),
    ] {
        push(name, v, "absolute constant (configuration, default 1)", Configured, None);
    }
    push("theta_ellip", cfg.theta_ellip(), "max(1/θ₋, θ₊)", Constant, None);
    push("delta0", delta0(cfg), "2G/(330 d e² θ^{11/2} (θ+1)^{5/3} (Gθ_Lip+1))", Constant, None);
    push("delta_eff", cfg.effective_delta(), "δ or min{δ, δ₀}", Constant, None);
    push("C_grad(delta)", c_gradient(cfg.delta, cfg.e_minus, cfg.theta_plus), "δ²E₋²/(2θ₊(8θ₊+δ²E₋))", Constant, None);
    push("C_sfUCP", sf.c_sfucp, "δ^{N(1+‖V‖^{2/3})}", Constant, None);
    push("C_grad_sfUCP", sf.c_grad, "C^∇(δ)(δ/2)^{N(1+E₊^{2/3})}", Constant, None);
    push("C_grad_sfUCP_G", sf.c_grad_scaled, "C^∇(δ)(δ/2G)^{N(1+G^{4/3}E₊^{2/3})}", Constant, None);
    push("bracket_lower", sf.bracket_lower, "2E₋²/(θ₊(8θ₊+E₋))(δ/2)^{2+N(1+E₊^{2/3})}", Constant, None);
    push("bracket_upper", sf.bracket_upper, "E₋/(2θ₊)(δ/2)^{N(1+E₊^{2/3})}", Constant, None);
    push("C_evl", ev.c_evl, "δ²E₋²/(2θ̃(8θ̃+δ²E₋))(δ/2)^{N(1+E₊^{2/3})}, θ̃=θ₊+TK₂", Constant, None);
    push("C_evl_hat", ev.c_evl_hat, "C_evl formula at δ/2", Constant, None);
    push("C_evl_tilde", ev.c_evl_tilde, "δ²E₋²/(4θ₊(8θ₊+δ²E₋))(δ/2)^{M(1+θ₋^{-2/3})}", Constant, None);
    push("evl_elementary", ev.elementary, "E₋/(θ₊+T‖W‖_∞)", Constant, None);
    push("C_evl_G", ev.c_evl_scaled, "δ²E₋²/(2θ′(8θ′+δ²E₋))(δ/2G)^{N(1+G^{4/3}E₊^{2/3})}", Constant, None);
    push("C_evl_tilde_G", ev.c_evl_tilde_scaled, "δ²E₋²/(2θ₊(8θ₊+δ²E₋))(δ/2G)^{M(1+θ₋^{-2/3})}", Constant, None);
    push("kappa_prime", ka.kappa_prime, "½δ^{M(1+θ₋^{-2/3})}", Constant, None);
    push("kappa", ka.kappa, "κ′(δ/2)", Constant, None);
    push("kappa_N", ka.kappa_n.value, "Cθ₋(δ/2)^{d−2}", Constant, ka.kappa_n.note.clone());
    push(
        "C_N_sfUCP",
        ka.c_n_sfucp.value,
        "cθ₋δ^d[b/min{√d,L/2}²+|log(aδ^{d−2})|]^{-2}",
        Constant,
        ka.c_n_sfucp.note.clone(),
    );
    push("C_N_grad_sfUCP", ka.c_n_grad.value, "C^∇(δ)C^N_sfUCP(δ/2)", Constant, ka.c_n_grad.note.clone());
    push("C_tilde_grad_sfUCP", ka.c_tilde_grad, "½C^∇(δ)(δ/2)^{M(1+θ₋^{-2/3})}", Constant, None);
    push("kappa_G", ka.kappa_g, "(1/2G²)(δ/2G)^{M(1+θ₋^{-2/3})}", Constant, None);
    push("C_tilde_grad_sfUCP_G", ka.c_tilde_grad_scaled, "C^∇(δ)(δ/2G)^{M(1+θ₋^{-2/3})}", Constant, None);
    push("C_W", c_wegner(cfg, ev.c_evl_hat, cfg.c_weyl), "C_{E₊}(2+δ₊)^d·4/Ĉ_evl", Constant, None);
    push("C_W_prime", c_wegner(cfg, ev.c_evl, cfg.c_weyl), "C_{E₊}(2+δ₊)^d·4/C_evl", Constant, None);
    Ok(ConstantsReport { config: cfg.clone(), v_norm, constants: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn delta0_examples() {
        let cfg = ConstantsConfig::default();
        assert_relative_eq!(delta0(&cfg), 2.58351169914080441e-4, max_relative = 1e-12);
        let doubled = ConstantsConfig { g: 2.0, ..cfg.clone() };
        assert_relative_eq!(delta0(&doubled), 2.0 * delta0(&cfg), max_relative = 1e-14);
        let stiff = ConstantsConfig { theta_plus: 3.0, ..cfg };
        assert!(delta0(&stiff) < 2.58e-4);
    }

    #[test]
    fn gradient_constant() {
        assert_relative_eq!(c_gradient(1.0, 1.0, 1.0), 1.0 / 18.0, max_relative = 1e-14);
        assert_relative_eq!(c_gradient(0.2, 5.0, 1.0), 0.0609756097560975609756, max_relative = 1e-13);
        assert!(c_gradient(7.0, 3.0, 2.0) <= 3.0 / 4.0);
        assert!(c_gradient_lower(0.5, 2.0, 1.0) <= c_gradient(0.5, 2.0, 1.0));
    }

    #[test]
    fn families_reduce_at_unit_period_and_zero_horizon() {
        let cfg = ConstantsConfig { t: 0.0, delta: 0.5, e_plus: 1.0, ..Default::default() };
        let sf = c_sfucp_family(&ConstantsConfig { delta: 0.5, ..Default::default() }, 0.0);
        assert_eq!(sf.c_sfucp, 0.5);
        let sf = c_sfucp_family(&cfg, 0.0);
        assert_relative_eq!(sf.c_grad, 9.4696969696969697e-4, max_relative = 1e-12);
        assert_eq!(sf.c_grad, sf.c_grad_scaled);
        let ev = c_evl_family(&cfg);
        assert_eq!(ev.c_evl, sf.c_grad);
        assert_eq!(ev.c_evl_scaled, ev.c_evl);
    }

    #[test]
    fn kappa_examples() {
        let cfg = ConstantsConfig { delta: 0.25, ..Default::default() };
        let k = kappa_family(&cfg);
        assert_relative_eq!(k.kappa_prime, 0.03125, max_relative = 1e-14);
        assert_relative_eq!(k.kappa, 0.0078125, max_relative = 1e-14);
        assert!(!k.c_n_sfucp.valid);
        let cfg = ConstantsConfig { d: 3, delta: 0.5, side: 4.0, ..Default::default() };
        let k = kappa_family(&cfg);
        assert!(k.c_n_sfucp.valid);
        assert_relative_eq!(k.c_n_sfucp.value, 0.118633841674982763711622822015, max_relative = 1e-12);
    }

    #[test]
    fn wegner_examples() {
        let cfg = ConstantsConfig { delta_plus: 0.5, ..Default::default() };
        assert_relative_eq!(c_wegner(&cfg, 0.01, 1.0), 1000.0, max_relative = 1e-14);
        assert_relative_eq!(c_wegner(&cfg, 0.02, 1.0), 500.0, max_relative = 1e-14);
        let d2 = ConstantsConfig { d: 2, ..cfg.clone() };
        assert_relative_eq!(c_wegner(&d2, 0.01, 1.0), 2500.0, max_relative = 1e-14);
    }

    #[test]
    fn report_is_reproducible() {
        let cfg = ConstantsConfig { d: 3, delta: 0.3, ..Default::default() };
        let a = constants_report(&cfg, 2.0).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let back: ConstantsReport = serde_json::from_str(&json).unwrap();
        let b = constants_report(&back.config, back.v_norm).unwrap();
        assert_eq!(a, b);
        assert!(constants_report(&ConstantsConfig { n: 0.0, ..cfg }, 0.0).is_err());
    }
}
