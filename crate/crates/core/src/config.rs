//! Run configuration: a flat JSON document plus command-line overrides.
//!
//! ```json
//! {
//!   "family": { "name": "gaussian", "mean": 0.0, "var": 1.0 },
//!   "lambda": 0.5, "x": 0.0, "a": 1.0,
//!   "seed": 42, "paths": 100000, "max_steps": 1000000,
//!   "rel_tol": 1e-9, "u_grid": "0:10:0.1", "delta": 0.5, "cap": 4.0
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cumulant::validate_lambda;
use crate::error::{FptError, Result};
use crate::innovations::{Family, InnovationSpec};
use crate::passage::PassageProblem;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_PATHS: u64 = 100_000;
pub const DEFAULT_REL_TOL: f64 = 1e-9;
pub const DEFAULT_U_GRID: &str = "0:10:0.1";
pub const DEFAULT_DELTA: f64 = 0.5;
pub const DEFAULT_CAP: f64 = 4.0;

/// The config file as written. Every field except `family` and `lambda`
/// is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub family: Option<Family>,
    pub lambda: Option<f64>,
    pub x: Option<f64>,
    pub a: Option<f64>,
    pub seed: Option<u64>,
    pub paths: Option<u64>,
    pub max_steps: Option<u64>,
    pub rel_tol: Option<f64>,
    pub u_grid: Option<String>,
    pub delta: Option<f64>,
    /// Cap `H` for the upper bound.
    pub cap: Option<f64>,
    /// Truncation level `N` for the certificate; chosen automatically when absent.
    pub n_cap: Option<f64>,
    /// States `y` for the harmonicity table.
    pub validate_y: Option<Vec<f64>>,
    /// Orders `v > 0` of `N_v` in the harmonicity table.
    pub n_orders: Option<Vec<f64>>,
    /// Orders `v < 0` of `W_v` in the harmonicity table.
    pub w_orders: Option<Vec<f64>>,
    /// Also write per-path `(tau, overshoot)` rows from `simulate`.
    pub dump_paths: Option<bool>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<u64>,
    pub max_steps: Option<u64>,
    pub rel_tol: Option<f64>,
    pub u_grid: Option<String>,
    pub delta: Option<f64>,
    pub cap: Option<f64>,
}

/// `LO:HI:STEP`, inclusive of `HI` up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub fn parse(s: &str) -> Result<Self> {
        let err = |message: &str| FptError::Config { path: "u_grid".into(), message: message.into() };
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(err("expected LO:HI:STEP"));
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| err(&format!("`{p}` is not a number")));
        let (lo, hi, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(err("need LO <= HI and STEP > 0"));
        }
        if lo < 0.0 {
            return Err(err("grid must lie in u >= 0"));
        }
        if (hi - lo) / step > 1e7 {
            return Err(err("grid has more than 1e7 points"));
        }
        Ok(Self { lo, hi, step })
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

/// Fully resolved configuration, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub family: Family,
    pub lambda: f64,
    pub x: Option<f64>,
    pub a: Option<f64>,
    pub seed: u64,
    pub paths: u64,
    pub max_steps: u64,
    pub rel_tol: f64,
    pub u_grid: String,
    pub delta: f64,
    pub cap: f64,
    pub n_cap: Option<f64>,
    pub validate_y: Option<Vec<f64>>,
    pub n_orders: Vec<f64>,
    pub w_orders: Vec<f64>,
    pub dump_paths: bool,
}

fn config_err(path: &str, message: impl Into<String>) -> FptError {
    FptError::Config { path: path.into(), message: message.into() }
}

pub fn read_config_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| FptError::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ConfigFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(&path, e.into_inner().to_string())
    })
}

impl RunConfig {
    /// Merges overrides into the file, fills defaults and validates.
    pub fn resolve(file: ConfigFile, flags: &Overrides) -> Result<Self> {
        let family = file.family.ok_or_else(|| config_err("family", "missing field"))?;
        let lambda = file.lambda.ok_or_else(|| config_err("lambda", "missing field"))?;
        let cfg = Self {
            family,
            lambda,
            x: file.x,
            a: file.a,
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            paths: flags.paths.or(file.paths).unwrap_or(DEFAULT_PATHS),
            max_steps: flags.max_steps.or(file.max_steps).unwrap_or(crate::montecarlo::DEFAULT_MAX_STEPS),
            rel_tol: flags.rel_tol.or(file.rel_tol).unwrap_or(DEFAULT_REL_TOL),
            u_grid: flags.u_grid.clone().or(file.u_grid).unwrap_or_else(|| DEFAULT_U_GRID.into()),
            delta: flags.delta.or(file.delta).unwrap_or(DEFAULT_DELTA),
            cap: flags.cap.or(file.cap).unwrap_or(DEFAULT_CAP),
            n_cap: file.n_cap,
            validate_y: file.validate_y,
            n_orders: file.n_orders.unwrap_or_else(|| vec![0.5, 1.0, 2.0]),
            w_orders: file.w_orders.unwrap_or_else(|| vec![-0.1, -0.4]),
            dump_paths: file.dump_paths.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        validate_lambda(self.lambda)?;
        self.spec()?;
        Grid::parse(&self.u_grid)?;
        if self.paths == 0 {
            return Err(FptError::invalid("paths >= 1"));
        }
        if self.max_steps == 0 {
            return Err(FptError::invalid("max_steps >= 1"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(FptError::invalid("0 < rel_tol < 1"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(FptError::invalid("0 < delta <= 1"));
        }
        if !self.cap.is_finite() {
            return Err(FptError::invalid("cap must be finite"));
        }
        if self.n_orders.iter().any(|&v| !(v > 0.0)) {
            return Err(FptError::invalid("n_orders must be positive"));
        }
        if self.w_orders.iter().any(|&v| !(v < 0.0 && v > -1.0)) {
            return Err(FptError::invalid("w_orders must lie in (-1, 0)"));
        }
        if let (Some(x), Some(a)) = (self.x, self.a) {
            PassageProblem::new(self.spec()?, self.lambda, x, a)?;
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<InnovationSpec> {
        InnovationSpec::new(self.family.clone())
    }

    /// The passage problem; `x` defaults to 0, `a` is required.
    pub fn problem(&self) -> Result<PassageProblem> {
        let a = self.a.ok_or_else(|| config_err("a", "missing field (required by this subcommand)"))?;
        PassageProblem::new(self.spec()?, self.lambda, self.x.unwrap_or(0.0), a)
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        Ok(Grid::parse(&self.u_grid)?.points())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"family": {"name": "gaussian", "mean": 0, "var": 1}, "lambda": 0.5, "x": 0, "a": 1}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::resolve(parse_config_str(MINIMAL).unwrap(), &Overrides::default()).unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.max_steps, 1_000_000);
        assert_eq!(cfg.rel_tol, 1e-9);
        assert_eq!(cfg.problem().unwrap().a, 1.0);
    }

    #[test]
    fn lambda_outside_unit_interval_names_the_rule() {
        let text = MINIMAL.replace("0.5", "1.2");
        let err = RunConfig::resolve(parse_config_str(&text).unwrap(), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("0 < λ < 1"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn flags_override_file() {
        let text = MINIMAL.replace("\"lambda\"", "\"seed\": 42, \"lambda\"");
        let flags = Overrides { seed: Some(7), ..Default::default() };
        assert_eq!(RunConfig::resolve(parse_config_str(&text).unwrap(), &flags).unwrap().seed, 7);
    }

    #[test]
    fn schema_errors_carry_the_field_path() {
        let err = parse_config_str(r#"{"family": {"name": "gaussian", "mean": 0, "vr": 1}}"#).unwrap_err();
        match err {
            FptError::Config { path, .. } => assert_eq!(path, "family"),
            e => panic!("{e:?}"),
        }
        let err = parse_config_str(r#"{"lambda": 0.5, "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = parse_config_str(r#"{"lambda": "half"}"#).unwrap_err();
        assert!(matches!(err, FptError::Config { ref path, .. } if path == "lambda"));
    }

    #[test]
    fn family_invariants_are_checked() {
        let text = r#"{"family": {"name": "two_point", "up": -1, "down": 1, "p": 0.5}, "lambda": 0.5}"#;
        assert!(RunConfig::resolve(parse_config_str(text).unwrap(), &Overrides::default()).is_err());
    }

    #[test]
    fn grids() {
        let g = Grid::parse("0:10:0.1").unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 101);
        assert!((pts[100] - 10.0).abs() < 1e-12);
        assert!(Grid::parse("1:0:0.1").is_err());
        assert!(Grid::parse("0:1").is_err());
        assert!(Grid::parse("-1:1:0.5").is_err());
    }
}
