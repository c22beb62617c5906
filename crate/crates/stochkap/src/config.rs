//! Run configuration document: the reactor model, the solver settings, and
//! an optional output directory, parsed from JSON with strict schemas.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driver::SolverSettings;
use crate::error::{Error, Result};
use crate::reactor::ReactorConfig;

/// Everything a run needs, as one JSON document. An empty document (or
/// `{}`) yields the full reference configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub reactor: ReactorConfig,
    pub solver: SolverSettings,
    /// Output directory; command-line flags take precedence.
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.reactor.validate()?;
        self.solver.validate()?;
        Ok(())
    }

    /// Canonical pretty JSON rendering: `parse_config_str(to_json(c))`
    /// round-trips.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parses and validates a configuration document from a string. Empty or
/// whitespace-only input means the reference defaults.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let trimmed = text.trim();
    let cfg: RunConfig = if trimmed.is_empty() {
        RunConfig::default()
    } else {
        serde_json::from_str(trimmed)
            .map_err(|e| Error::Config(format!("configuration document: {e}")))?
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read configuration {}: {e}", path.display()))
    })?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_reference_defaults() {
        for text in ["", "   \n", "{}"] {
            let cfg = parse_config_str(text).unwrap();
            assert_eq!(cfg.reactor.length, 100.0);
            assert_eq!(cfg.reactor.n_elements, 40);
            assert_eq!(cfg.reactor.conductivity, 100.0);
            assert_eq!(cfg.reactor.t_inf, 390.0);
            assert_eq!(cfg.reactor.e_f, 3.0e-11);
            assert_eq!(cfg.reactor.sigma_f_ref, 0.0075);
            assert_eq!(cfg.reactor.d_ref, 2.2);
            assert_eq!(cfg.reactor.nu, 2.2);
            assert_eq!(cfg.reactor.source, 5.0e11);
            assert_eq!(cfg.reactor.t_ref, 390.0);
            assert_eq!(cfg.reactor.t_max, 1000.0);
            assert_eq!(cfg.reactor.h_spec.mean, 0.17);
            assert_eq!(cfg.reactor.h_spec.cov, 0.1);
            assert_eq!(cfg.reactor.h_spec.corr_length, 15.0);
            assert_eq!(cfg.reactor.h_spec.n_terms, 10);
            assert_eq!(cfg.reactor.sigma_spec.mean, 0.0195);
            assert_eq!(cfg.reactor.sigma_spec.corr_length, 50.0);
            assert_eq!(cfg.reactor.sigma_spec.n_terms, 2);
            assert_eq!(cfg.solver.p, 4);
            assert_eq!(cfg.solver.eps1, 0.01);
            assert_eq!(cfg.solver.eps2, 0.01);
            assert_eq!(cfg.solver.max_outer_iters, 20);
            assert!(cfg.out_dir.is_none());
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let err = parse_config_str(r#"{"reactor": {"lenght": 10}}"#).unwrap_err();
        assert!(err.to_string().contains("lenght"), "{err}");
        let err = parse_config_str(
            r#"{"reactor": {"h_spec":
                {"mean": 0.17, "cov": 0.1, "corr_length": -1.0, "n_terms": 10}}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("h_spec.corr_length"), "{err}");
        let err = parse_config_str(r#"{"solver": {"eps1": 1.5}}"#).unwrap_err();
        assert!(err.to_string().contains("eps1"), "{err}");
        let err = parse_config_str(r#"{"unrelated": 1}"#).unwrap_err();
        assert!(err.to_string().contains("unrelated"), "{err}");
    }

    #[test]
    fn overrides_apply_and_round_trip() {
        let cfg = parse_config_str(
            r#"{"solver": {"mc_samples": 100000, "p": 3}, "out_dir": "runs/a"}"#,
        )
        .unwrap();
        assert_eq!(cfg.solver.mc_samples, 100_000);
        assert_eq!(cfg.solver.p, 3);
        assert_eq!(cfg.out_dir.as_deref(), Some("runs/a"));
        let text = cfg.to_json().unwrap();
        let back = parse_config_str(&text).unwrap();
        assert_eq!(text, back.to_json().unwrap());
    }

    #[test]
    fn file_parsing_reports_path() {
        let err = parse_config(Path::new("/nonexistent/cfg.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cfg.json"), "{err}");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"reactor": {"n_elements": 10}}"#).unwrap();
        let cfg = parse_config(&path).unwrap();
        assert_eq!(cfg.reactor.n_elements, 10);
    }
}
