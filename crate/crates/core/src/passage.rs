//! Passage-time answers: the exact identity for `E tau_a`, lower and upper
//! bounds, feasibility verdicts and the exponential tail certificate.

use std::collections::HashMap;

use serde::Serialize;

use crate::cumulant::{validate_lambda, LimitCumulant};
use crate::error::{FptError, Result};
use crate::innovations::{Family, InnovationSpec};
use crate::martingale::{negative_order_limit, Transforms};
use crate::montecarlo::{MgfNode, SimulationSummary};
use crate::quadrature::{integrate_log_scale, kronrod_nodes, kronrod_weights, QuadratureOptions};
use crate::special::CompensatedSum;

/// The chain `X_n = lambda X_{n-1} + eta_n` from `X_0 = x` and the level `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageProblem {
    pub spec: InnovationSpec,
    pub lambda: f64,
    pub x: f64,
    pub a: f64,
}

impl PassageProblem {
    pub fn new(spec: InnovationSpec, lambda: f64, x: f64, a: f64) -> Result<Self> {
        validate_lambda(lambda)?;
        if !x.is_finite() || !a.is_finite() {
            return Err(FptError::invalid("x and a must be finite"));
        }
        if a < x {
            return Err(FptError::invalid("a >= x"));
        }
        Ok(Self { spec, lambda, x, a })
    }

    /// `a (1 - lambda)`: one step can cross from below only if `eta` exceeds it.
    pub fn crossing_threshold(&self) -> f64 {
        self.a * (1.0 - self.lambda)
    }

    fn transforms(&self, spec: InnovationSpec, opts: &QuadratureOptions) -> Result<Transforms> {
        Ok(Transforms::with_options(LimitCumulant::new(spec, self.lambda)?, *opts))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// `H/(1-lambda) <= a` for an upper bound `H` of the innovation: the
    /// chain never exceeds `a`.
    pub certain_infinite: bool,
    /// `P(eta > a(1-lambda)) > 0`.
    pub crossing_possible: bool,
    /// `E ln(1 + |eta|) < inf` and crossing is possible, so `E tau_a < inf`.
    pub finite_mean: bool,
    pub innovation_sup: Option<f64>,
    /// `H/(1-lambda)`, the supremum of the stationary support.
    pub stationary_sup: Option<f64>,
    pub crossing_threshold: f64,
}

pub fn feasibility_report(p: &PassageProblem) -> FeasibilityReport {
    let sup = p.spec.upper_bound();
    let theta = sup.map(|h| h / (1.0 - p.lambda));
    let crossing_possible = p.spec.exceeds_with_positive_probability(p.crossing_threshold());
    FeasibilityReport {
        certain_infinite: !crossing_possible,
        crossing_possible,
        // every registered family has a logarithmic moment
        finite_mean: crossing_possible,
        innovation_sup: sup,
        stationary_sup: theta,
        crossing_threshold: p.crossing_threshold(),
    }
}

fn require_crossing(p: &PassageProblem) -> Result<()> {
    if feasibility_report(p).crossing_possible {
        Ok(())
    } else {
        Err(FptError::NoCrossing)
    }
}

/// Value with an absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bound {
    pub value: f64,
    pub abs_err: f64,
}

/// `H(a) - H(x)`.
pub fn lower_bound_e_tau(p: &PassageProblem, opts: &QuadratureOptions) -> Result<Bound> {
    require_crossing(p)?;
    if p.x == p.a {
        return Ok(Bound { value: 0.0, abs_err: 0.0 });
    }
    let tr = p.transforms(p.spec.clone(), opts)?;
    let ha = tr.eval_h(p.a)?;
    let hx = tr.eval_h(p.x)?;
    Ok(Bound { value: ha.value - hx.value, abs_err: ha.abs_err + hx.abs_err })
}

/// `H~(lambda a + H) - H~(x)` under the innovation capped at `h_cap`, with
/// `H` the supremum of the capped law.
pub fn upper_bound_e_tau(p: &PassageProblem, h_cap: f64, opts: &QuadratureOptions) -> Result<Bound> {
    require_crossing(p)?;
    if !(h_cap > p.crossing_threshold()) {
        return Err(FptError::Precondition(format!(
            "cap {h_cap} must exceed a(1 - lambda) = {}",
            p.crossing_threshold()
        )));
    }
    let capped = p.spec.cap_above(h_cap)?;
    let h_eff = capped.upper_bound().expect("capped law is bounded");
    let tr = p.transforms(capped, opts)?;
    let top = tr.eval_h(p.lambda * p.a + h_eff)?;
    let hx = tr.eval_h(p.x)?;
    Ok(Bound { value: top.value - hx.value, abs_err: top.abs_err + hx.abs_err })
}

/// Quadrature nodes at which the identity needs `E e^{u X_tau}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityPlan {
    /// Node `u` values, ordered.
    pub nodes: Vec<f64>,
    /// Weights in `t = ln u`.
    pub weights: Vec<f64>,
    /// Upper end `y` of the proxy `(e^{uy} - e^{ux}) e^{-phi}` used to place nodes.
    pub proxy_level: f64,
    /// Quadrature error of the proxy integral.
    pub proxy_abs_err: f64,
}

impl IdentityPlan {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Default relative tolerance for the identity node plan.
pub const IDENTITY_REL_TOL: f64 = 1e-8;

/// Plans the identity quadrature before any simulation: the adaptive
/// partition of a proxy integrand that bounds the true one from above,
/// `X_tau <= lambda a + sup eta` (or `a + 4 sd` for unbounded laws).
pub fn identity_nodes(p: &PassageProblem, opts: &QuadratureOptions) -> Result<IdentityPlan> {
    require_crossing(p)?;
    let proxy_level = match p.spec.upper_bound() {
        Some(h) => p.lambda * p.a + h,
        None => p.a + 4.0 * spread(&p.spec),
    };
    let lc = LimitCumulant::new(p.spec.clone(), p.lambda)?;
    let x = p.x;
    let q = integrate_log_scale(
        |t: f64| {
            let u = t.exp();
            let phi = lc.phi_value(u)?;
            Ok((u * proxy_level - phi).exp() - (u * x - phi).exp())
        },
        opts,
    )?;
    if !q.result.converged {
        return Err(FptError::Quadrature("identity proxy integral did not converge".into()));
    }
    let mut pairs = Vec::with_capacity(q.panels.len() * 15);
    for &(a, b) in &q.panels {
        let nodes = kronrod_nodes(a, b);
        let weights = kronrod_weights(a, b);
        pairs.extend(nodes.iter().zip(weights.iter()).map(|(t, w)| (t.exp(), *w)));
    }
    pairs.sort_by(|l, r| l.0.total_cmp(&r.0));
    Ok(IdentityPlan {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
        proxy_level,
        proxy_abs_err: q.result.abs_err,
    })
}

fn spread(spec: &InnovationSpec) -> f64 {
    match spec.moments().and_then(|m| m.variance) {
        Some(v) if v > 0.0 => v.sqrt(),
        _ => match spec.family() {
            Family::Stable { alpha, scale, .. } => scale.powf(1.0 / alpha),
            _ => 1.0,
        },
    }
}

/// Nodes whose empirical MGF has a relative standard error above this are clipped.
pub const CLIP_REL_SE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityValue {
    pub value: f64,
    /// Node standard errors propagated linearly.
    pub std_err: f64,
    /// Systematic error from clipped nodes.
    pub clip_err: f64,
    /// Quadrature error carried over from the plan.
    pub quad_err: f64,
    pub n_nodes: usize,
    pub n_clipped: usize,
}

impl IdentityValue {
    /// Standard error to compare against an independent estimate.
    pub fn total_err(&self) -> f64 {
        (self.std_err * self.std_err + self.clip_err * self.clip_err).sqrt() + self.quad_err
    }
}

/// Evaluates `E tau_a = (1/ln(1/lambda)) int (E e^{u X_tau} - e^{ux}) e^{-phi(u)} u^{-1} du`
/// with the empirical MGF plugged in at the planned nodes.
pub fn identity_e_tau(p: &PassageProblem, plan: &IdentityPlan, mgf: &[MgfNode]) -> Result<IdentityValue> {
    let lc = LimitCumulant::new(p.spec.clone(), p.lambda)?;
    let scale = 1.0 / (1.0 / p.lambda).ln();
    let by_bits: HashMap<u64, &MgfNode> = mgf.iter().map(|m| (m.u.to_bits(), m)).collect();
    let sup = p.spec.upper_bound();
    let mut value = CompensatedSum::new();
    let (mut std_err, mut clip_err) = (0.0, 0.0);
    let mut n_clipped = 0;
    for (&u, &w) in plan.nodes.iter().zip(plan.weights.iter()) {
        let node = by_bits.get(&u.to_bits()).copied().or_else(|| mgf.iter().find(|m| (m.u - u).abs() <= 1e-12 * u));
        let node = node.ok_or(FptError::Coverage { u })?;
        let phi = lc.phi_value(u)?;
        let weight = w * scale;
        // every term carries e^{-phi(u)} inside the exponent
        let start = (u * p.x - phi).exp();
        let noisy = !(node.std_err <= CLIP_REL_SE * node.mean.abs());
        if noisy {
            n_clipped += 1;
            match sup {
                Some(h) => {
                    let lo = (u * p.a - phi).exp();
                    let hi = (u * (p.lambda * p.a + h) - phi).exp();
                    value.add(weight * (0.5 * (lo + hi) - start));
                    clip_err += weight.abs() * 0.5 * (hi - lo);
                }
                None => {
                    let g = (node.log_scale - phi).exp();
                    let contribution = weight * (node.mean * g - start);
                    value.add(contribution);
                    clip_err += contribution.abs() + weight.abs() * node.std_err * g;
                }
            }
        } else {
            let g = (node.log_scale - phi).exp();
            value.add(weight * (node.mean * g - start));
            std_err += weight.abs() * node.std_err * g;
        }
    }
    Ok(IdentityValue {
        value: value.value(),
        std_err,
        clip_err,
        quad_err: plan.proxy_abs_err,
        n_nodes: plan.len(),
        n_clipped,
    })
}

/// Certified `E e^{alpha tau} <= c_bound`, hence `P(tau > n) <= c_bound e^{-alpha n}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentialCertificate {
    pub v_star: f64,
    pub alpha: f64,
    pub c_bound: f64,
    pub n_cap_used: f64,
    /// `P(eta >= N)`, the atom of the truncated law.
    pub atom_mass: f64,
    pub c_at_start: f64,
    pub c_at_top: f64,
    pub sweep: Vec<SweepRow>,
}

impl ExponentialCertificate {
    pub fn survival_bound(&self, n: u64) -> f64 {
        self.c_bound * (-self.alpha * n as f64).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub v: f64,
    /// `1 + 2 v |C(lambda a + N, 0)| > 0`
    pub admissible: bool,
    /// Both `W_v` inequalities verified numerically.
    pub verified: bool,
}

/// Tail mass required of the truncation level `N`.
pub const N_CAP_MIN_MASS: f64 = 1e-3;
pub const SWEEP_POINTS: usize = 64;

/// Smallest `N = a(1-lambda) + k s/4`, `s` the innovation spread, with
/// `P(eta > N) >= 1e-3`.
pub fn default_n_cap(p: &PassageProblem) -> Result<f64> {
    let step = 0.25 * spread(&p.spec);
    for k in 1..=400 {
        let n = p.crossing_threshold() + k as f64 * step;
        if p.spec.tail_mass(n)? >= N_CAP_MIN_MASS {
            return Ok(n);
        }
    }
    Err(FptError::InfeasibleTruncation { level: p.crossing_threshold() + step })
}

/// Sweeps `v` from `-delta (1 - 1e-3)` towards `-1e-4` and certifies the
/// first (largest `alpha`) order for which
/// `W_v(x) >= -2|C(x,0)| + 1/v` and `W_v(lambda a + N) <= 2|C(lambda a + N,0)| + 1/v < 0`
/// under the floored law. The bound carries over to the original chain
/// because flooring lowers every innovation.
pub fn exponential_certificate(
    p: &PassageProblem,
    delta: f64,
    n_cap: Option<f64>,
    opts: &QuadratureOptions,
) -> Result<ExponentialCertificate> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(FptError::invalid("0 < delta <= 1"));
    }
    if delta > negative_order_limit(&p.spec) {
        return Err(FptError::Precondition(format!("E (eta^-)^delta is infinite for delta = {delta}")));
    }
    require_crossing(p)?;
    if p.spec.tail_mass(p.crossing_threshold())? <= 0.0 {
        return Err(FptError::NoCrossing);
    }
    let n = match n_cap {
        Some(n) if n > p.crossing_threshold() => n,
        Some(n) => {
            return Err(FptError::Precondition(format!(
                "N = {n} must exceed a(1 - lambda) = {}",
                p.crossing_threshold()
            )))
        }
        None => default_n_cap(p)?,
    };
    let floored = p.spec.floor_positive(n)?;
    let atom_mass = p.spec.tail_mass(n)?;
    let tr = p.transforms(floored, opts)?;
    let top = p.lambda * p.a + n;
    let c_x = tr.eval_c(p.x)?.value;
    let c_top = tr.eval_c(top)?.value;
    let lo = (delta * (1.0 - 1e-3)).ln();
    let hi = 1e-4f64.ln();
    let mut sweep = Vec::with_capacity(SWEEP_POINTS);
    let mut found = None;
    for k in 0..SWEEP_POINTS {
        let v = -(lo + (hi - lo) * k as f64 / (SWEEP_POINTS - 1) as f64).exp();
        let admissible = 1.0 + 2.0 * v * c_top.abs() > 0.0;
        let mut verified = false;
        if admissible && found.is_none() {
            let w_x = tr.eval_w(p.x, v)?;
            let w_top = tr.eval_w(top, v)?;
            let upper_top = 2.0 * c_top.abs() + 1.0 / v;
            verified = w_x.value - w_x.abs_err >= -2.0 * c_x.abs() + 1.0 / v
                && w_top.value + w_top.abs_err <= upper_top
                && upper_top < 0.0;
            if verified {
                found = Some(v);
            }
        }
        sweep.push(SweepRow { v, admissible, verified });
    }
    let v = found.ok_or(FptError::CertificateInfeasible)?;
    Ok(ExponentialCertificate {
        v_star: v,
        alpha: -v * (1.0 / p.lambda).ln(),
        c_bound: (1.0 - 2.0 * v * c_x.abs()) / (1.0 + 2.0 * v * c_top.abs()),
        n_cap_used: n,
        atom_mass,
        c_at_start: c_x,
        c_at_top: c_top,
        sweep,
    })
}

/// Everything known about one passage problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassageReport {
    pub feasibility: FeasibilityReport,
    pub identity_value: Option<IdentityValue>,
    pub lower_bound: Option<Bound>,
    pub upper_bound: Option<Bound>,
    pub certificate: Option<ExponentialCertificate>,
    pub mc_summary: Option<SimulationSummary>,
}
