//! Executes a [`RunConfig`] and writes its reports.
//!
//! Output layout:
//! - `resolved_config.toml`: the configuration with every default filled in
//! - `checks/NN_<name>.json`: one structured report per check
//! - `checks/NN_<name>.rows.tsv`: the report's table, when it has one
//! - `summary.tsv`: one line per check
//! - `manifest.json`: completed items, rewritten after each one finishes

use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use divlab::bounds::{constants_report, kappa_prime, ConstantsConfig, ConstantsReport};
use divlab::fields::{
    checkerboard, constant_field, identity_field, mollify, scalar_constant, scalar_field, tent_field, AlloyModel,
};
use divlab::lattice::{ball_mask, equidistributed_sequence, make_grid, CenterMode, EquidistributedSeq, Grid};
use divlab::operator::{assemble, DiscreteOperator};
use divlab::spectral::{eigensolve, lifting_curve, Request};
use divlab::verify::{
    lifting_check, mollification_convergence, neumann_trend_check, neumann_zero_mode_check, pi_singular_check,
    projector_ucp_check, reverse_caccioppoli_check, scaling_check, spectrum_report, ucp_function_check,
    ucp_gradient_check, wegner_mc, weyl_check, CheckReport, MollifyOptions, Tolerances, WegnerOptions,
    WegnerVariant,
};
use divlab::MatrixField;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{CheckKind, CheckSpec, FieldSpec, GridSpec, RunConfig, SequenceSpec, WSpec};

/// Outcome of one configured check.
#[derive(Debug, Clone, Serialize)]
pub struct ItemResult {
    pub index: usize,
    pub name: String,
    pub kind: String,
    pub seed: u64,
    pub expect_failure: bool,
    /// `pass`, `fail`, `skipped`, `vacuous` or `error`.
    pub status: String,
    pub passed: bool,
    /// Passed, or failed as predicted for a negative control.
    pub as_expected: bool,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub margin: Option<f64>,
    pub error: Option<String>,
    pub wall_time_ms: f64,
    pub file: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub items: Vec<ItemResult>,
    pub wall_time: Duration,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn all_as_expected(&self) -> bool {
        self.items.iter().all(|i| i.as_expected)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_as_expected() {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; the machine's parallelism when absent.
    pub workers: Option<usize>,
    /// Soft wall-time budget; exceeding it only prints a warning.
    pub budget: Option<Duration>,
}

enum Output {
    Check(CheckReport),
    Constants(ConstantsReport),
}

#[derive(Serialize)]
struct Manifest<'a> {
    status: &'a str,
    total: usize,
    resolved_config: &'a str,
    summary: Option<&'a str>,
    completed: Vec<&'a ItemResult>,
    wall_time_s: Option<f64>,
    budget_exceeded: Option<bool>,
}

fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn file_stem(index: usize, name: &str) -> String {
    format!("{index:02}_{name}")
}

/// Validate, resolve and run every check of `cfg`, writing reports to `out`.
///
/// Validation failures are returned as [`crate::ConfigError`] inside the error.
pub fn execute(cfg: &RunConfig, out: &Path, opts: &RunOptions) -> anyhow::Result<RunSummary> {
    cfg.validate()?;
    let resolved = cfg.resolved();
    let start = Instant::now();
    fs::create_dir_all(out.join("checks")).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join("resolved_config.toml"), &resolved.to_toml())?;

    let total = resolved.checks.len();
    let done: Mutex<Vec<ItemResult>> = Mutex::new(Vec::new());
    let write_manifest = |items: &[ItemResult], finished: Option<(f64, bool)>| -> anyhow::Result<()> {
        let mut completed: Vec<&ItemResult> = items.iter().collect();
        completed.sort_by_key(|i| i.index);
        let m = Manifest {
            status: if finished.is_some() { "complete" } else { "running" },
            total,
            resolved_config: "resolved_config.toml",
            summary: finished.map(|_| "summary.tsv"),
            completed,
            wall_time_s: finished.map(|f| f.0),
            budget_exceeded: finished.map(|f| f.1),
        };
        write_atomic(&out.join("manifest.json"), &serde_json::to_string_pretty(&m)?)
    };
    write_manifest(&[], None)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build()?;
    let results: anyhow::Result<Vec<ItemResult>> = pool.install(|| {
        (0..total)
            .into_par_iter()
            .map(|i| {
                let item = run_item(&resolved, i, out)?;
                let mut guard = done.lock().map_err(|_| anyhow!("manifest lock poisoned"))?;
                guard.push(item.clone());
                write_manifest(&guard, None)?;
                Ok(item)
            })
            .collect()
    });
    let items = results?;
    write_atomic(&out.join("summary.tsv"), &summary_table(&items))?;
    let wall = start.elapsed();
    let over = opts.budget.is_some_and(|b| wall > b);
    if over {
        eprintln!(
            "warning: run took {:.0} s, over the {:.0} s budget",
            wall.as_secs_f64(),
            opts.budget.unwrap_or_default().as_secs_f64()
        );
    }
    write_manifest(&items, Some((wall.as_secs_f64(), over)))?;
    Ok(RunSummary { items, wall_time: wall, out_dir: out.to_path_buf() })
}

fn summary_table(items: &[ItemResult]) -> String {
    let mut s = String::from("index\tname\tkind\tstatus\tas_expected\texpect_failure\tlhs\trhs\tmargin\twall_time_ms\n");
    let num = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for i in items {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.1}\n",
            i.index,
            i.name,
            i.kind,
            i.status,
            i.as_expected,
            i.expect_failure,
            num(i.lhs),
            num(i.rhs),
            num(i.margin),
            i.wall_time_ms
        ));
    }
    s
}

fn rows_table(rep: &CheckReport) -> Option<String> {
    if rep.rows.is_empty() {
        return None;
    }
    let mut keys: Vec<&str> = Vec::new();
    let mut seen = BTreeSet::new();
    for row in &rep.rows {
        for k in row.keys() {
            if seen.insert(k.as_str()) {
                keys.push(k);
            }
        }
    }
    let mut s = keys.join("\t");
    s.push('\n');
    for row in &rep.rows {
        let cells: Vec<String> = keys.iter().map(|k| row.get(*k).map(|v| format!("{v:e}")).unwrap_or_default()).collect();
        s.push_str(&cells.join("\t"));
        s.push('\n');
    }
    Some(s)
}

fn run_item(cfg: &RunConfig, index: usize, out: &Path) -> anyhow::Result<ItemResult> {
    let spec = &cfg.checks[index];
    let seed = cfg.seed_for(index);
    let stem = file_stem(index, &spec.name);
    let started = Instant::now();
    let outcome = run_check(cfg, index, seed);
    let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut item = ItemResult {
        index,
        name: spec.name.clone(),
        kind: spec.run.tag().to_string(),
        seed,
        expect_failure: spec.expect_failure,
        status: "error".into(),
        passed: false,
        as_expected: false,
        lhs: None,
        rhs: None,
        margin: None,
        error: None,
        wall_time_ms,
        file: format!("checks/{stem}.json"),
    };
    let report = match &outcome {
        Ok(Output::Check(rep)) => {
            let expect_failure = spec.expect_failure || rep.negative_control;
            item.status = serde_json::to_value(rep.status)?.as_str().unwrap_or("fail").to_string();
            item.passed = rep.passed;
            item.as_expected = rep.passed != expect_failure;
            item.lhs = Some(rep.lhs);
            item.rhs = Some(rep.rhs);
            item.margin = Some(rep.margin);
            if let Some(table) = rows_table(rep) {
                write_atomic(&out.join(format!("checks/{stem}.rows.tsv")), &table)?;
            }
            serde_json::to_value(rep)?
        }
        Ok(Output::Constants(rep)) => {
            item.status = "pass".into();
            item.passed = true;
            item.as_expected = !spec.expect_failure;
            serde_json::to_value(rep)?
        }
        Err(e) => {
            item.error = Some(format!("{e:#}"));
            serde_json::Value::Null
        }
    };
    let doc = json!({
        "name": spec.name,
        "kind": item.kind,
        "seed": seed,
        "expect_failure": spec.expect_failure,
        "as_expected": item.as_expected,
        "error": item.error,
        "report": report,
    });
    write_atomic(&out.join(&item.file), &serde_json::to_string_pretty(&doc)?)?;
    Ok(item)
}

fn build_grid(spec: &GridSpec) -> anyhow::Result<Grid> {
    Ok(make_grid(spec.dim, spec.side, spec.per_unit, spec.boundary)?)
}

pub fn build_field(spec: &FieldSpec, grid: &Grid) -> anyhow::Result<MatrixField> {
    Ok(match spec {
        FieldSpec::Identity => identity_field(grid),
        FieldSpec::Scalar { value } => scalar_constant(grid, *value)?,
        FieldSpec::Constant { matrix } => constant_field(grid, matrix)?,
        FieldSpec::Checkerboard { lo, hi } => checkerboard(grid, *lo, *hi)?,
        FieldSpec::Smooth { base, amp, freq } => {
            let (base, amp, freq) = (*base, *amp, *freq);
            let lip = amp.abs() * freq.abs() * (grid.dim() as f64).sqrt();
            scalar_field(grid, move |x| base + amp * (freq * x.iter().sum::<f64>()).sin())?.with_lipschitz(lip)
        }
        FieldSpec::MollifiedCheckerboard { lo, hi, ell, eps } => mollify(&checkerboard(grid, *lo, *hi)?, *ell, *eps)?,
        FieldSpec::Dump { path } => {
            let file = fs::File::open(path).with_context(|| format!("opening field dump {}", path.display()))?;
            MatrixField::read_dump(grid, BufReader::new(file))?
        }
    })
}

fn build_sequence(spec: &SequenceSpec, grid: &Grid) -> anyhow::Result<EquidistributedSeq> {
    Ok(equidistributed_sequence(grid, spec.period, spec.radius, &spec.centers)?)
}

fn build_w(spec: &WSpec, grid: &Grid, seq: &EquidistributedSeq) -> anyhow::Result<Vec<f64>> {
    Ok(match spec {
        WSpec::Tent { radius } => tent_field(grid, seq, *radius),
        WSpec::ShiftedTent { radius, offset } => tent_field(grid, seq, *radius).iter().map(|w| w + offset).collect(),
        WSpec::Indicator => {
            let mask = ball_mask(grid, seq)?;
            (0..grid.node_count()).map(|n| if mask.contains_node(n) { 1.0 } else { 0.0 }).collect()
        }
        WSpec::Constant { value } => vec![*value; grid.node_count()],
    })
}

/// Operators for the same grid and field recipe on cubes of several sides.
fn operators_for_sides(spec: &CheckSpec, grid: &GridSpec, sides: &[u32]) -> anyhow::Result<Vec<DiscreteOperator>> {
    sides
        .iter()
        .map(|&side| {
            let g = build_grid(&GridSpec { side, ..grid.clone() })?;
            Ok(assemble(&build_field(&spec.field, &g)?)?)
        })
        .collect()
}

/// `[lo, hi]` as a half-open request that still contains `hi`.
fn closed(lo: f64, hi: f64) -> Request {
    Request::Interval { lo, hi: hi + 1e-12 * hi.abs().max(1.0) }
}

fn run_check(cfg: &RunConfig, index: usize, seed: u64) -> anyhow::Result<Output> {
    let spec = &cfg.checks[index];
    let constants: ConstantsConfig = cfg.constants_for(index)?;
    let tol: &Tolerances = &cfg.tolerances;
    let grid_spec = spec.grid.as_ref();
    let setup = || -> anyhow::Result<(Grid, MatrixField)> {
        let g = build_grid(grid_spec.ok_or_else(|| anyhow!("grid missing"))?)?;
        let f = build_field(&spec.field, &g)?;
        Ok((g, f))
    };
    let lowest = |op: &DiscreteOperator, k: usize| eigensolve(op, Request::Lowest(k.min(op.dim())));
    let report = match &spec.run {
        CheckKind::Eigensolve { k } => {
            let (_, f) = setup()?;
            let op = assemble(&f)?;
            spectrum_report(&op, &lowest(&op, *k)?)
        }
        CheckKind::ReverseCaccioppoli { x0, r, e_minus, k } => {
            let (_, f) = setup()?;
            let op = assemble(&f)?;
            reverse_caccioppoli_check(&op, &lowest(&op, *k)?, x0, *r, *e_minus, tol)?
        }
        CheckKind::UcpFunction { sequence, v_bound } => {
            let (g, f) = setup()?;
            let op = assemble(&f)?;
            let seq = build_sequence(sequence, &g)?;
            let s = eigensolve(&op, closed(constants.e_minus, constants.e_plus))?;
            ucp_function_check(&op, &s, &seq, constants.e_minus, constants.e_plus, *v_bound, &constants, tol)?
        }
        CheckKind::UcpGradient { sequence, variant } => {
            let (g, f) = setup()?;
            let op = assemble(&f)?;
            let seq = build_sequence(sequence, &g)?;
            let s = eigensolve(&op, Request::Interval { lo: constants.e_minus, hi: constants.e_plus })?;
            ucp_gradient_check(&op, &s, &seq, &constants, *variant, tol)?
        }
        CheckKind::NeumannZeroMode { sequence } => {
            let (g, f) = setup()?;
            let op = assemble(&f)?;
            let seq = build_sequence(sequence, &g)?;
            neumann_zero_mode_check(&op, &lowest(&op, 2)?, &seq, &constants, tol)?
        }
        CheckKind::NeumannTrend { sides, radius } => {
            let ops = operators_for_sides(spec, grid_spec.ok_or_else(|| anyhow!("grid missing"))?, sides)?;
            neumann_trend_check(&ops, *radius, &CenterMode::Midpoint)?
        }
        CheckKind::Projector { sequence, lambda, samples } => {
            let (g, f) = setup()?;
            let op = assemble(&f)?;
            let seq = build_sequence(sequence, &g)?;
            let lambda = lambda.unwrap_or_else(|| {
                let aligned = ConstantsConfig { theta_minus: constants.theta_minus.min(f.theta_minus()), ..constants.clone() };
                kappa_prime(&aligned, sequence.radius)
            });
            let s = eigensolve(&op, Request::Interval { lo: -1.0, hi: lambda })?;
            projector_ucp_check(&op, &s, &seq, lambda, *samples, seed, &constants, tol)?
        }
        CheckKind::Lifting { sequence, w, horizon, steps, count, variant } => {
            let (g, f) = setup()?;
            let seq = build_sequence(sequence, &g)?;
            let w = build_w(w, &g, &seq)?;
            let count = (*count).min(g.unknown_count());
            let curve = lifting_curve(&f, &w, *horizon, *steps, count)?;
            lifting_check(&f, &w, &curve, &seq, &constants, *variant, tol)?
        }
        CheckKind::Wegner {
            sites,
            c_minus,
            c_plus,
            delta_plus,
            shape,
            distribution,
            energy,
            epsilon,
            samples,
            variant,
            c_weyl,
            slope_band,
        } => {
            let (g, f) = setup()?;
            let seq = build_sequence(sites, &g)?;
            let model =
                AlloyModel::new(f, seq, *c_minus, *c_plus, *delta_plus, *shape, vec![distribution.clone()])?;
            let opts = WegnerOptions {
                n_samples: *samples,
                seed,
                variant: variant.unwrap_or(WegnerVariant::Dirichlet),
                c_weyl: *c_weyl,
                slope_band: *slope_band,
                ..Default::default()
            };
            wegner_mc(&model, *energy, *epsilon, &opts, &constants, tol)?
        }
        CheckKind::Weyl { sides, e_plus, c_weyl } => {
            let ops = operators_for_sides(spec, grid_spec.ok_or_else(|| anyhow!("grid missing"))?, sides)?;
            weyl_check(&ops, *e_plus, *c_weyl)?
        }
        CheckKind::PiSingular { distribution, a, b, epsilon } => {
            pi_singular_check(distribution, |x| x, *a, *b, *epsilon)?
        }
        CheckKind::Scaling { sequence, k, rel_tol } => {
            let (g, f) = setup()?;
            scaling_check(&f, &build_sequence(sequence, &g)?, *k, *rel_tol)?
        }
        CheckKind::Mollify { eps, ells, k, final_tol } => {
            let (_, f) = setup()?;
            mollification_convergence(&f, *eps, ells, *k, &MollifyOptions { final_tol: *final_tol })?
        }
        CheckKind::Constants { v_norm } => return Ok(Output::Constants(constants_report(&constants, *v_norm)?)),
    };
    Ok(Output::Check(report))
}
