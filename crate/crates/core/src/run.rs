//! Subcommand orchestration and report files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::cumulant::LimitCumulant;
use crate::error::{FptError, Result};
use crate::martingale::{TransformKind, Transforms};
use crate::montecarlo::{simulate_passage, simulate_paths};
use crate::passage::{
    exponential_certificate, feasibility_report, identity_e_tau, identity_nodes, lower_bound_e_tau, upper_bound_e_tau,
    IDENTITY_REL_TOL,
};
use crate::quadrature::QuadratureOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Phi,
    Simulate,
    Bounds,
    IdentityCheck,
    Certificate,
    Validate,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Phi => "phi",
            Subcommand::Simulate => "simulate",
            Subcommand::Bounds => "bounds",
            Subcommand::IdentityCheck => "identity-check",
            Subcommand::Certificate => "certificate",
            Subcommand::Validate => "validate",
        }
    }
}

pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.csv";
pub const PATHS_FILE: &str = "paths.csv";

/// What a run produced. `result` holds every numeric output; timing is
/// kept apart so reruns compare equal field by field.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub config: RunConfig,
    pub seed: u64,
    pub result: Value,
    pub wall_clock_seconds: f64,
}

struct Output {
    result: Value,
    table: Option<String>,
    paths: Option<String>,
}

/// Runs one subcommand and writes its files into `out_dir`.
pub fn run_subcommand(cfg: &RunConfig, which: Subcommand, out_dir: &Path) -> Result<Report> {
    let start = Instant::now();
    let output = match which {
        Subcommand::Phi => run_phi(cfg)?,
        Subcommand::Simulate => run_simulate(cfg)?,
        Subcommand::Bounds => run_bounds(cfg)?,
        Subcommand::IdentityCheck => run_identity_check(cfg)?,
        Subcommand::Certificate => run_certificate(cfg)?,
        Subcommand::Validate => run_validate(cfg)?,
    };
    let report = Report {
        tool: "fpt",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: which.name(),
        config: cfg.clone(),
        seed: cfg.seed,
        result: output.result,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| FptError::Io(e.to_string()))?;
    write_file(&out_dir.join(REPORT_FILE), &json)?;
    if let Some(table) = output.table {
        write_file(&out_dir.join(TABLE_FILE), &table)?;
    }
    if let Some(paths) = output.paths {
        write_file(&out_dir.join(PATHS_FILE), &paths)?;
    }
    Ok(report)
}

fn io_err(path: &Path, e: std::io::Error) -> FptError {
    FptError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &PathBuf, contents: &str) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(contents.as_bytes()).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// Round-trip decimal rendering (17 significant digits).
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn quad_opts(cfg: &RunConfig) -> QuadratureOptions {
    QuadratureOptions::default().with_rel_tol(cfg.rel_tol)
}

fn run_phi(cfg: &RunConfig) -> Result<Output> {
    let lc = LimitCumulant::new(cfg.spec()?, cfg.lambda)?;
    let grid = cfg.grid()?;
    let mut table = String::from("u,phi,abs_err\n");
    let mut rows = Vec::with_capacity(grid.len());
    for &u in &grid {
        let p = lc.phi(u)?;
        table.push_str(&format!("{},{},{}\n", num(u), num(p.value), num(p.abs_err)));
        rows.push(json!({"u": u, "phi": p.value, "abs_err": p.abs_err}));
    }
    let residual = lc.check_functional_equation(&grid)?;
    Ok(Output {
        result: json!({"mode": lc.mode(), "functional_equation_residual": residual, "rows": rows}),
        table: Some(table),
        paths: None,
    })
}

fn run_simulate(cfg: &RunConfig) -> Result<Output> {
    let p = cfg.problem()?;
    let sample = simulate_paths(&p, cfg.paths, cfg.max_steps, cfg.seed)?;
    let summary = sample.summarize(&cfg.grid()?);
    let paths = if cfg.dump_paths {
        let mut buf = Vec::new();
        sample.write_csv(&mut buf).map_err(|e| FptError::Io(e.to_string()))?;
        Some(String::from_utf8(buf).expect("csv is ascii"))
    } else {
        None
    };
    Ok(Output { result: json!({"feasibility": feasibility_report(&p), "simulation": summary}), table: None, paths })
}

fn run_bounds(cfg: &RunConfig) -> Result<Output> {
    let p = cfg.problem()?;
    let feasibility = feasibility_report(&p);
    if !feasibility.crossing_possible {
        return Err(FptError::NoCrossing);
    }
    let opts = quad_opts(cfg);
    let lower = lower_bound_e_tau(&p, &opts)?;
    let upper = upper_bound_e_tau(&p, cfg.cap, &opts)?;
    Ok(Output {
        result: json!({"feasibility": feasibility, "lower_bound": lower, "upper_bound": upper, "cap": cfg.cap}),
        table: None,
        paths: None,
    })
}

fn run_identity_check(cfg: &RunConfig) -> Result<Output> {
    let p = cfg.problem()?;
    let plan = identity_nodes(&p, &QuadratureOptions::default().with_rel_tol(IDENTITY_REL_TOL.max(cfg.rel_tol)))?;
    let summary = simulate_passage(&p, cfg.paths, cfg.max_steps, cfg.seed, &plan.nodes)?;
    let identity = identity_e_tau(&p, &plan, &summary.mgf_nodes)?;
    let mc = summary.e_tau_hat.ok_or_else(|| FptError::Precondition("no path crossed the level".into()))?;
    let discrepancy = identity.value - mc.value;
    let combined = (identity.total_err().powi(2) + mc.std_err.powi(2)).sqrt();
    let in_se = (combined > 0.0).then(|| discrepancy / combined);
    Ok(Output {
        result: json!({
            "feasibility": feasibility_report(&p),
            "identity": identity,
            "e_tau_hat": mc,
            "discrepancy": discrepancy,
            "combined_std_err": combined,
            "discrepancy_in_std_errs": in_se,
            "n_censored": summary.n_censored,
            "valid": summary.n_censored == 0,
            "n_paths": summary.n_paths,
        }),
        table: None,
        paths: None,
    })
}

fn run_certificate(cfg: &RunConfig) -> Result<Output> {
    let p = cfg.problem()?;
    let cert = exponential_certificate(&p, cfg.delta, cfg.n_cap, &quad_opts(cfg))?;
    let summary = simulate_passage(&p, cfg.paths, cfg.max_steps, cfg.seed, &[])?;
    let worst = summary.survival_curve.iter().map(|&(n, s)| s / cert.survival_bound(n)).fold(0.0, f64::max);
    Ok(Output {
        result: json!({
            "feasibility": feasibility_report(&p),
            "certificate": cert,
            "empirical_check": {
                "n_paths": summary.n_paths,
                "max_survival_over_bound": worst,
                "survival_curve": summary.survival_curve,
            },
        }),
        table: None,
        paths: None,
    })
}

fn run_validate(cfg: &RunConfig) -> Result<Output> {
    let spec = cfg.spec()?;
    let lc = LimitCumulant::new(spec.clone(), cfg.lambda)?;
    let fe = lc.check_functional_equation(&cfg.grid()?)?;
    let ys = match &cfg.validate_y {
        Some(ys) => ys.clone(),
        None => {
            let level = match spec.upper_bound() {
                Some(h) => h / (1.0 - cfg.lambda),
                None => cfg.a.unwrap_or(1.0),
            };
            vec![-2.0, 0.0, 0.5 * level]
        }
    };
    let tr = Transforms::with_options(lc, quad_opts(cfg));
    let mut orders: Vec<(TransformKind, f64)> = cfg.n_orders.iter().map(|&v| (TransformKind::N, v)).collect();
    orders.push((TransformKind::H, 0.0));
    orders.extend(cfg.w_orders.iter().map(|&v| (TransformKind::W, v)));
    let mut table = String::from("kind,y,v,f_y,lhs,rhs,residual,relative\n");
    let mut rows = Vec::new();
    for &(kind, v) in &orders {
        for &y in &ys {
            let r = tr.check_harmonic(kind, y, v)?;
            table.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                kind.label(),
                num(y),
                num(v),
                num(r.f_y),
                num(r.lhs),
                num(r.rhs),
                num(r.residual),
                num(r.relative)
            ));
            rows.push(r);
        }
    }
    let worst = rows.iter().map(|r| r.relative).fold(0.0, f64::max);
    Ok(Output {
        result: json!({"functional_equation_residual": fe, "max_relative_residual": worst, "rows": to_value(&rows)}),
        table: Some(table),
        paths: None,
    })
}
