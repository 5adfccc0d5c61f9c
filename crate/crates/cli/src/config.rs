//! Run configuration: a TOML document listing checks to execute.

use std::fmt;
use std::path::{Path, PathBuf};

use divlab::bounds::ConstantsConfig;
use divlab::fields::{BumpShape, SiteDistribution};
use divlab::lattice::{Boundary, CenterMode};
use divlab::verify::{GradientVariant, LiftingVariant, Tolerances, WegnerVariant};
use serde::{Deserialize, Serialize};

/// A validation failure tied to a path inside the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn default_multiplier() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; checks without their own seed derive one from it.
    #[serde(default)]
    pub seed: u64,
    /// Multiplies `per_unit` of every grid.
    #[serde(default = "default_multiplier")]
    pub resolution_multiplier: u32,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            resolution_multiplier: 1,
            output: None,
            constants: ConstantsConfig::default(),
            tolerances: Tolerances::default(),
            checks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub name: String,
    /// Negative control: the check is predicted to fail.
    #[serde(default)]
    pub expect_failure: bool,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Required by every kind except `pi_singular` and `constants`.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub field: FieldSpec,
    /// Keys overriding the global `[constants]` table for this check.
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub constants: toml::Table,
    pub run: CheckKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub side: u32,
    pub per_unit: u32,
    #[serde(default = "dirichlet")]
    pub boundary: Boundary,
}

fn dirichlet() -> Boundary {
    Boundary::Dirichlet
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum FieldSpec {
    #[default]
    Identity,
    Scalar {
        value: f64,
    },
    /// Row-major `d×d` matrix on every cell.
    Constant {
        matrix: Vec<f64>,
    },
    Checkerboard {
        lo: f64,
        hi: f64,
    },
    /// `base + amp·sin(freq·Σx)`; Lipschitz bound `amp·freq·√d`.
    Smooth {
        base: f64,
        amp: f64,
        freq: f64,
    },
    MollifiedCheckerboard {
        lo: f64,
        hi: f64,
        ell: u32,
        eps: f64,
    },
    /// A field dump written by `MatrixField::write_dump`.
    Dump {
        path: PathBuf,
    },
}

fn default_period() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    #[serde(default = "default_period")]
    pub period: f64,
    pub radius: f64,
    #[serde(default = "midpoint")]
    pub centers: CenterMode,
}

fn midpoint() -> CenterMode {
    CenterMode::Midpoint
}

/// Node field `W` for lifting runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum WSpec {
    /// Tent of height 1 and radius `radius` around every centre.
    Tent { radius: f64 },
    /// Indicator of the ball union.
    Indicator,
    /// `offset + tent`.
    ShiftedTent { radius: f64, offset: f64 },
    Constant { value: f64 },
}

fn default_samples() -> usize {
    1000
}

fn default_wegner_samples() -> usize {
    500
}

fn default_steps() -> usize {
    8
}

fn default_k() -> usize {
    3
}

fn default_final_tol() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum CheckKind {
    /// Lowest `k` eigenpairs with residuals.
    Eigensolve {
        #[serde(default = "default_k")]
        k: usize,
    },
    ReverseCaccioppoli {
        x0: Vec<f64>,
        r: f64,
        e_minus: f64,
        #[serde(default = "default_k")]
        k: usize,
    },
    /// Window `[E₋, E₊]` from the constants.
    UcpFunction {
        sequence: SequenceSpec,
        #[serde(default)]
        v_bound: f64,
    },
    /// Window `(E₋, E₊)` from the constants.
    UcpGradient {
        sequence: SequenceSpec,
        variant: GradientVariant,
    },
    NeumannZeroMode {
        sequence: SequenceSpec,
    },
    /// Cubes of the given sides, each with the grid's resolution.
    NeumannTrend {
        sides: Vec<u32>,
        radius: f64,
    },
    Projector {
        sequence: SequenceSpec,
        /// Defaults to `κ′(δ)`.
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    /// Window `(E₋, E₊)`, `K₁` and `K₂` from the constants.
    Lifting {
        sequence: SequenceSpec,
        w: WSpec,
        horizon: f64,
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default = "default_k")]
        count: usize,
        variant: LiftingVariant,
    },
    /// Window `[E₋, E₊]` from the constants; the grid's field is the background.
    Wegner {
        sites: SequenceSpec,
        c_minus: f64,
        c_plus: f64,
        delta_plus: f64,
        shape: BumpShape,
        distribution: SiteDistribution,
        energy: f64,
        epsilon: f64,
        #[serde(default = "default_wegner_samples")]
        samples: usize,
        #[serde(default)]
        variant: Option<WegnerVariant>,
        #[serde(default)]
        c_weyl: Option<f64>,
        #[serde(default)]
        slope_band: Option<(f64, f64)>,
    },
    Weyl {
        sides: Vec<u32>,
        e_plus: f64,
        #[serde(default)]
        c_weyl: Option<f64>,
    },
    /// Partial-integration bound with `Φ(λ) = λ`; needs no grid.
    PiSingular {
        distribution: SiteDistribution,
        a: f64,
        b: f64,
        epsilon: f64,
    },
    Scaling {
        sequence: SequenceSpec,
        #[serde(default = "default_k")]
        k: usize,
        rel_tol: f64,
    },
    Mollify {
        eps: f64,
        ells: Vec<u32>,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_final_tol")]
        final_tol: f64,
    },
    /// Every constant for the configuration.
    Constants {
        #[serde(default)]
        v_norm: f64,
    },
}

impl CheckKind {
    pub fn needs_grid(&self) -> bool {
        !matches!(self, CheckKind::PiSingular { .. } | CheckKind::Constants { .. })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            CheckKind::Eigensolve { .. } => "eigensolve",
            CheckKind::ReverseCaccioppoli { .. } => "reverse_caccioppoli",
            CheckKind::UcpFunction { .. } => "ucp_function",
            CheckKind::UcpGradient { .. } => "ucp_gradient",
            CheckKind::NeumannZeroMode { .. } => "neumann_zero_mode",
            CheckKind::NeumannTrend { .. } => "neumann_trend",
            CheckKind::Projector { .. } => "projector",
            CheckKind::Lifting { .. } => "lifting",
            CheckKind::Wegner { .. } => "wegner",
            CheckKind::Weyl { .. } => "weyl",
            CheckKind::PiSingular { .. } => "pi_singular",
            CheckKind::Scaling { .. } => "scaling",
            CheckKind::Mollify { .. } => "mollify",
            CheckKind::Constants { .. } => "constants",
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration serializes")
    }

    /// Constants for check `i`: the global table with the check's keys applied.
    pub fn constants_for(&self, i: usize) -> Result<ConstantsConfig, ConfigError> {
        let check = &self.checks[i];
        if check.constants.is_empty() {
            return Ok(self.constants.clone());
        }
        let mut table = toml::Table::try_from(&self.constants).expect("constants serialize to a table");
        for (k, v) in &check.constants {
            table.insert(k.clone(), v.clone());
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| ConfigError::new(format!("checks[{i}].constants"), e.to_string()))
    }

    /// Seed of check `i`: its own, or the master seed offset by its position.
    pub fn seed_for(&self, i: usize) -> u64 {
        self.checks[i].seed.unwrap_or_else(|| self.seed.wrapping_add(i as u64))
    }

    /// A copy with every default made explicit: per-check seeds are filled in
    /// and the resolution multiplier is folded into the grids.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        for i in 0..out.checks.len() {
            out.checks[i].seed = Some(self.seed_for(i));
            if let Some(g) = out.checks[i].grid.as_mut() {
                g.per_unit *= self.resolution_multiplier;
            }
        }
        out.resolution_multiplier = 1;
        out
    }

    /// Cross-field validation; errors name the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.resolution_multiplier == 0 {
            return Err(ConfigError::new("resolution_multiplier", "must be at least 1"));
        }
        validate_constants(&self.constants, "constants")?;
        if self.tolerances.tol < 0.0 || self.tolerances.kappa_disc < 0.0 {
            return Err(ConfigError::new("tolerances", "tolerances must be non-negative"));
        }
        if self.checks.is_empty() {
            return Err(ConfigError::new("checks", "no checks configured"));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, c) in self.checks.iter().enumerate() {
            let at = |field: &str| format!("checks[{i}].{field}");
            if c.name.is_empty() || !c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch)) {
                return Err(ConfigError::new(at("name"), "use letters, digits, '-', '_' or '.'"));
            }
            if !names.insert(c.name.as_str()) {
                return Err(ConfigError::new(at("name"), format!("duplicate check name `{}`", c.name)));
            }
            let cfg = self.constants_for(i)?;
            validate_constants(&cfg, &at("constants"))?;
            match (&c.grid, c.run.needs_grid()) {
                (Some(grid), _) => {
                    validate_grid(grid, &at("grid"))?;
                    validate_field(&c.field, grid.dim, &at("field"))?;
                    validate_kind(&c.run, grid, &cfg, &at("run"))?;
                }
                (None, true) => {
                    return Err(ConfigError::new(at("grid"), format!("required for `{}`", c.run.tag())));
                }
                (None, false) => validate_gridless(&c.run, &at("run"))?,
            }
        }
        Ok(())
    }
}

fn validate_constants(cfg: &ConstantsConfig, path: &str) -> Result<(), ConfigError> {
    if !(cfg.e_minus < cfg.e_plus) {
        return Err(ConfigError::new(
            format!("{path}.e_minus"),
            format!("window needs E₋ < E₊, got E₋ = {} and E₊ = {}", cfg.e_minus, cfg.e_plus),
        ));
    }
    cfg.validate().map_err(|e| match e {
        divlab::Error::InvalidParameter { name, reason } => ConfigError::new(format!("{path}.{name}"), reason),
        other => ConfigError::new(path, other.to_string()),
    })
}

fn validate_grid(g: &GridSpec, path: &str) -> Result<(), ConfigError> {
    if !(1..=3).contains(&g.dim) {
        return Err(ConfigError::new(format!("{path}.dim"), format!("dimension {} outside 1..=3", g.dim)));
    }
    if g.side == 0 {
        return Err(ConfigError::new(format!("{path}.side"), "must be at least 1"));
    }
    if g.per_unit == 0 {
        return Err(ConfigError::new(format!("{path}.per_unit"), "must be at least 1"));
    }
    Ok(())
}

fn validate_field(f: &FieldSpec, dim: usize, path: &str) -> Result<(), ConfigError> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 {
            Ok(())
        } else {
            Err(ConfigError::new(format!("{path}.{name}"), format!("must be positive, got {v}")))
        }
    };
    match f {
        FieldSpec::Identity | FieldSpec::Dump { .. } => Ok(()),
        FieldSpec::Scalar { value } => positive("value", *value),
        FieldSpec::Constant { matrix } => {
            if matrix.len() == dim * dim {
                Ok(())
            } else {
                Err(ConfigError::new(format!("{path}.matrix"), format!("need {} entries for d = {dim}", dim * dim)))
            }
        }
        FieldSpec::Checkerboard { lo, hi } | FieldSpec::MollifiedCheckerboard { lo, hi, .. } => {
            positive("lo", *lo)?;
            if hi < lo {
                return Err(ConfigError::new(format!("{path}.hi"), format!("need hi ≥ lo = {lo}")));
            }
            if let FieldSpec::MollifiedCheckerboard { ell, eps, .. } = f {
                if *ell == 0 {
                    return Err(ConfigError::new(format!("{path}.ell"), "must be at least 1"));
                }
                if !(*eps > 0.0 && eps < lo) {
                    return Err(ConfigError::new(format!("{path}.eps"), format!("need 0 < eps < lo = {lo}")));
                }
            }
            Ok(())
        }
        FieldSpec::Smooth { base, amp, .. } => {
            if amp.abs() < *base {
                Ok(())
            } else {
                Err(ConfigError::new(format!("{path}.amp"), format!("need |amp| < base = {base} for ellipticity")))
            }
        }
    }
}

fn validate_sequence(s: &SequenceSpec, grid: &GridSpec, path: &str) -> Result<(), ConfigError> {
    if !(s.period > 0.0) {
        return Err(ConfigError::new(format!("{path}.period"), "G must be positive"));
    }
    if !(s.radius > 0.0 && s.radius < s.period / 2.0) {
        return Err(ConfigError::new(
            format!("{path}.radius"),
            format!("need 0 < δ < G/2 = {}, got δ = {}", s.period / 2.0, s.radius),
        ));
    }
    let cells = f64::from(grid.side) / s.period;
    if (cells - cells.round()).abs() > 1e-9 {
        return Err(ConfigError::new(
            format!("{path}.period"),
            format!("G = {} does not tile the cube side {}", s.period, grid.side),
        ));
    }
    Ok(())
}

fn validate_gridless(k: &CheckKind, path: &str) -> Result<(), ConfigError> {
    match k {
        CheckKind::PiSingular { a, b, epsilon, .. } => {
            if !(a < b) {
                return Err(ConfigError::new(format!("{path}.b"), "need a < b"));
            }
            if !(*epsilon > 0.0) {
                return Err(ConfigError::new(format!("{path}.epsilon"), "must be positive"));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn validate_kind(k: &CheckKind, grid: &GridSpec, cfg: &ConstantsConfig, path: &str) -> Result<(), ConfigError> {
    let field = |name: &str| format!("{path}.{name}");
    match k {
        CheckKind::Eigensolve { k } | CheckKind::Scaling { k, .. } | CheckKind::Mollify { k, .. } if *k == 0 => {
            Err(ConfigError::new(field("k"), "must be at least 1"))
        }
        CheckKind::Eigensolve { .. } | CheckKind::Constants { .. } => Ok(()),
        CheckKind::ReverseCaccioppoli { x0, r, e_minus, .. } => {
            if x0.len() != grid.dim {
                return Err(ConfigError::new(field("x0"), format!("need {} coordinates", grid.dim)));
            }
            if !(*r > 0.0) {
                return Err(ConfigError::new(field("r"), "must be positive"));
            }
            if !(*e_minus > 0.0) {
                return Err(ConfigError::new(field("e_minus"), "must be positive"));
            }
            Ok(())
        }
        CheckKind::UcpFunction { sequence, .. }
        | CheckKind::UcpGradient { sequence, .. }
        | CheckKind::NeumannZeroMode { sequence } => validate_sequence(sequence, grid, &field("sequence")),
        CheckKind::NeumannTrend { sides, radius } => {
            if sides.len() < 2 || sides.contains(&0) {
                return Err(ConfigError::new(field("sides"), "need at least two positive sides"));
            }
            if !(*radius > 0.0 && *radius < 0.5) {
                return Err(ConfigError::new(field("radius"), "need 0 < δ < 1/2"));
            }
            Ok(())
        }
        CheckKind::Projector { sequence, lambda, samples } => {
            validate_sequence(sequence, grid, &field("sequence"))?;
            if *samples == 0 {
                return Err(ConfigError::new(field("samples"), "must be at least 1"));
            }
            if let Some(l) = lambda {
                let cfg = ConstantsConfig { delta: sequence.radius, ..cfg.clone() };
                let kp = divlab::bounds::kappa_prime(&cfg, sequence.radius);
                if *l > kp {
                    return Err(ConfigError::new(field("lambda"), format!("need λ ≤ κ′ = {kp:.6e}")));
                }
            }
            Ok(())
        }
        CheckKind::Lifting { sequence, horizon, steps, count, w, .. } => {
            validate_sequence(sequence, grid, &field("sequence"))?;
            if !(*horizon > 0.0) {
                return Err(ConfigError::new(field("horizon"), "T must be positive"));
            }
            if *steps == 0 || *count == 0 {
                return Err(ConfigError::new(field("steps"), "steps and count must be at least 1"));
            }
            match w {
                WSpec::Tent { radius } | WSpec::ShiftedTent { radius, .. } if !(*radius > 0.0) => {
                    Err(ConfigError::new(field("w.radius"), "must be positive"))
                }
                WSpec::Constant { value } if *value < 0.0 => {
                    Err(ConfigError::new(field("w.value"), "W must be non-negative"))
                }
                _ => Ok(()),
            }
        }
        CheckKind::Wegner { sites, energy, epsilon, samples, slope_band, .. } => {
            validate_sequence(sites, grid, &field("sites"))?;
            if (sites.period - 1.0).abs() > 1e-12 {
                return Err(ConfigError::new(field("sites.period"), "alloy sites need G = 1"));
            }
            if !(*epsilon > 0.0) {
                return Err(ConfigError::new(field("epsilon"), "must be positive"));
            }
            if *samples == 0 {
                return Err(ConfigError::new(field("samples"), "must be at least 1"));
            }
            if energy - 3.0 * epsilon < cfg.e_minus || energy + 3.0 * epsilon > cfg.e_plus {
                return Err(ConfigError::new(
                    field("energy"),
                    format!("[E − 3ε, E + 3ε] must lie in [E₋, E₊] = [{}, {}]", cfg.e_minus, cfg.e_plus),
                ));
            }
            if let Some((lo, hi)) = slope_band {
                if lo > hi {
                    return Err(ConfigError::new(field("slope_band"), "lower end exceeds upper end"));
                }
            }
            Ok(())
        }
        CheckKind::Weyl { sides, e_plus, .. } => {
            if sides.is_empty() || sides.contains(&0) {
                return Err(ConfigError::new(field("sides"), "need positive sides"));
            }
            if !(*e_plus > 0.0) {
                return Err(ConfigError::new(field("e_plus"), "must be positive"));
            }
            Ok(())
        }
        CheckKind::PiSingular { .. } => validate_gridless(k, path),
        CheckKind::Scaling { sequence, rel_tol, .. } => {
            validate_sequence(sequence, grid, &field("sequence"))?;
            if !(*rel_tol >= 0.0) {
                return Err(ConfigError::new(field("rel_tol"), "must be non-negative"));
            }
            Ok(())
        }
        CheckKind::Mollify { eps, ells, .. } => {
            if ells.is_empty() || ells.contains(&0) {
                return Err(ConfigError::new(field("ells"), "need positive kernel indices"));
            }
            if !(*eps > 0.0) {
                return Err(ConfigError::new(field("eps"), "must be positive"));
            }
            Ok(())
        }
    }
}
