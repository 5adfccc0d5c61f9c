use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bounds::Provenance;
use crate::fields::MatrixField;
use crate::lattice::GridShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Hypotheses not met; nothing was compared.
    Skipped,
    /// Nothing to compare (for example an empty spectral window); counts as a pass.
    Vacuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub name: String,
    pub value: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub grid: Option<GridShape>,
    pub field_sha256: Option<String>,
    pub seeds: Vec<u64>,
    pub parameters: serde_json::Value,
}

/// Outcome of one executable inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    /// The inequality in symbols, e.g. `‖∇ψ‖²_S ≥ C ‖ψ‖²`.
    pub statement: String,
    pub inputs: Inputs,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs − rhs` for lower bounds, `rhs − lhs` for upper bounds.
    pub margin: f64,
    pub passed: bool,
    pub status: Status,
    /// Expected to fail; a failure is the predicted outcome.
    pub negative_control: bool,
    pub quantities: Vec<Quantity>,
    pub rows: Vec<BTreeMap<String, f64>>,
    pub notes: Vec<String>,
    pub wall_time_ms: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl CheckReport {
    pub(crate) fn new(name: &str, statement: &str) -> Self {
        CheckReport {
            name: name.into(),
            statement: statement.into(),
            inputs: Inputs::default(),
            lhs: f64::NAN,
            rhs: f64::NAN,
            margin: f64::NAN,
            passed: false,
            status: Status::Fail,
            negative_control: false,
            quantities: Vec::new(),
            rows: Vec::new(),
            notes: Vec::new(),
            wall_time_ms: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub(crate) fn field(mut self, field: &MatrixField) -> Self {
        self.inputs.grid = Some(field.grid().shape());
        self.inputs.field_sha256 = Some(field.hash());
        self
    }

    pub(crate) fn seeds(mut self, seeds: &[u64]) -> Self {
        self.inputs.seeds = seeds.to_vec();
        self
    }

    pub(crate) fn params(mut self, p: serde_json::Value) -> Self {
        self.inputs.parameters = p;
        self
    }

    pub(crate) fn quantity(&mut self, name: &str, value: f64, provenance: Provenance) {
        self.quantities.push(Quantity { name: name.into(), value, provenance });
    }

    pub(crate) fn observed(&mut self, name: &str, value: f64) {
        self.quantity(name, value, Provenance::Observed);
    }

    pub(crate) fn constant(&mut self, name: &str, value: f64) {
        self.quantity(name, value, Provenance::Constant);
    }

    pub(crate) fn configured(&mut self, name: &str, value: f64) {
        self.quantity(name, value, Provenance::Configured);
    }

    pub(crate) fn row(&mut self, entries: &[(&str, f64)]) {
        self.rows.push(entries.iter().map(|(k, v)| (k.to_string(), *v)).collect());
    }

    pub(crate) fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn stop(&mut self) {
        if let Some(t) = self.started.take() {
            self.wall_time_ms = t.elapsed().as_secs_f64() * 1e3;
        }
    }

    /// Lower-bound check `lhs ≥ rhs`; `passed` already includes any allowance.
    pub(crate) fn finish_lower(mut self, lhs: f64, rhs: f64, passed: bool) -> Self {
        self.lhs = lhs;
        self.rhs = rhs;
        self.margin = lhs - rhs;
        self.set(passed);
        self
    }

    /// Upper-bound check `lhs ≤ rhs`.
    pub(crate) fn finish_upper(mut self, lhs: f64, rhs: f64, passed: bool) -> Self {
        self.lhs = lhs;
        self.rhs = rhs;
        self.margin = rhs - lhs;
        self.set(passed);
        self
    }

    pub(crate) fn finish_with(mut self, status: Status) -> Self {
        self.status = status;
        self.passed = matches!(status, Status::Pass | Status::Vacuous);
        self.stop();
        self
    }

    fn set(&mut self, passed: bool) {
        self.passed = passed;
        self.status = if passed { Status::Pass } else { Status::Fail };
        self.stop();
    }

    pub fn quantity_value(&self, name: &str) -> Option<f64> {
        self.quantities.iter().find(|q| q.name == name).map(|q| q.value)
    }

    /// Whether the outcome matches expectations (failures of negative controls count as success).
    pub fn as_expected(&self) -> bool {
        match self.status {
            Status::Skipped => !self.negative_control,
            _ => self.passed != self.negative_control,
        }
    }

    /// Copy with the wall time cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut c = self.clone();
        c.wall_time_ms = 0.0;
        c
    }
}
