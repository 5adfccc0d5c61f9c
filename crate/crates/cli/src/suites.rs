//! Curated desk-scale configurations, one per family of checks.

use std::time::Duration;

use anyhow::{bail, Context};

use crate::config::{CheckKind, RunConfig};

pub const SUITE_NAMES: [&str; 6] = ["ucp", "lifting", "wegner", "scaling", "mollify", "all"];

/// Soft wall-time budget of the `all` suite.
pub const ALL_BUDGET: Duration = Duration::from_secs(30 * 60);

const SOURCES: [(&str, &str); 5] = [
    ("ucp", include_str!("../suites/ucp.toml")),
    ("lifting", include_str!("../suites/lifting.toml")),
    ("wegner", include_str!("../suites/wegner.toml")),
    ("scaling", include_str!("../suites/scaling.toml")),
    ("mollify", include_str!("../suites/mollify.toml")),
];

fn parse(name: &str, text: &str) -> anyhow::Result<RunConfig> {
    RunConfig::from_toml(text).with_context(|| format!("built-in suite `{name}`"))
}

/// The configuration of suite `name`, with Monte Carlo sample counts replaced
/// by `samples` when given.
pub fn suite_config(name: &str, samples: Option<usize>) -> anyhow::Result<RunConfig> {
    let mut cfg = match name {
        "all" => {
            let mut all = RunConfig::default();
            for (n, text) in SOURCES {
                all.checks.extend(parse(n, text)?.checks);
            }
            all
        }
        _ => match SOURCES.iter().find(|(n, _)| *n == name) {
            Some((n, text)) => parse(n, text)?,
            None => bail!("unknown suite `{name}`; valid suites: {}", SUITE_NAMES.join(", ")),
        },
    };
    if let Some(s) = samples {
        for c in &mut cfg.checks {
            match &mut c.run {
                CheckKind::Wegner { samples, .. } | CheckKind::Projector { samples, .. } => *samples = s,
                _ => {}
            }
        }
    }
    Ok(cfg)
}

/// Soft budget for suite `name`.
pub fn budget(name: &str) -> Option<Duration> {
    (name == "all").then_some(ALL_BUDGET)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_validates() {
        for name in SUITE_NAMES {
            suite_config(name, None).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn all_is_the_union() {
        let total: usize = SOURCES.iter().map(|(n, _)| suite_config(n, None).unwrap().checks.len()).sum();
        assert_eq!(suite_config("all", None).unwrap().checks.len(), total);
    }

    #[test]
    fn unknown_suite_lists_names() {
        let err = suite_config("nope", None).unwrap_err().to_string();
        assert!(err.contains("ucp, lifting, wegner, scaling, mollify, all"), "{err}");
    }

    #[test]
    fn sample_override() {
        let cfg = suite_config("wegner", Some(10)).unwrap();
        assert!(cfg.checks.iter().any(|c| matches!(c.run, CheckKind::Wegner { samples: 10, .. })));
    }
}
