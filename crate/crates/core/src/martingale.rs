//! Martingale transforms of the AR(1) chain.
//!
//! For `v > 0`, `lambda^{vn} N_v(X_n)` is a martingale with
//! `N_v(y) = int_0^inf e^{uy - phi(u)} u^{v-1} du`; `H(X_n) - n` is one with
//! `H(y) = (1/ln(1/lambda)) int_0^inf (e^{uy} - 1) e^{-phi(u)} u^{-1} du`;
//! and for `v < 0`, `lambda^{vn} W_v(X_n)` is one with
//! `W_v(y) = int_0^inf (e^{uy - phi(u)} - 1) u^{v-1} du`.
//! All are evaluated with the log-scale engine in [`crate::quadrature`].

use gauss_quad::GaussHermite;
use serde::Serialize;

use crate::cumulant::LimitCumulant;
use crate::error::{FptError, Result};
use crate::innovations::{Family, InnovationSpec, Law, PieceMap};
use crate::quadrature::{integrate_finite, integrate_log_scale, QuadratureOptions, QuadratureResult, TailDiagnostic};
use crate::special::normal_pdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// `N_v`, `v > 0`
    N,
    /// `H`, `v = 0`
    H,
    /// `W_v`, `v < 0`
    W,
}

impl TransformKind {
    pub fn label(self) -> &'static str {
        match self {
            TransformKind::N => "N",
            TransformKind::H => "H",
            TransformKind::W => "W",
        }
    }
}

/// Outcome of the integrability test for `int_1^inf e^{uy - phi(u)} u^{v-1} du`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrabilityVerdict {
    pub holds: bool,
    /// Probe at which the verdict was read off.
    pub witness_u: f64,
    /// `d/dt` of the log integrand in `t = ln u` at the witness,
    /// i.e. `u (y - phi'(u)) + v`.
    pub log_slope: f64,
}

/// Margin on the log-slope separating decay from growth.
const SLOPE_EPS: f64 = 1e-3;

/// Supremum of admissible `delta` with `E (eta^-)^delta < inf`: the orders
/// `v` of `W_v` must lie in `(-delta, 0)`.
pub fn negative_order_limit(spec: &InnovationSpec) -> f64 {
    match spec.family() {
        Family::Stable { alpha, .. } if *alpha < 1.0 => *alpha,
        _ => 1.0,
    }
}

/// Evaluator of the transforms for one limit cumulant.
#[derive(Debug, Clone)]
pub struct Transforms {
    lc: LimitCumulant,
    opts: QuadratureOptions,
    log_inv_lambda: f64,
}

impl Transforms {
    pub fn new(lc: LimitCumulant) -> Self {
        Self::with_options(lc, QuadratureOptions::default())
    }

    pub fn with_options(lc: LimitCumulant, opts: QuadratureOptions) -> Self {
        let log_inv_lambda = (1.0 / lc.lambda()).ln();
        Self { lc, opts, log_inv_lambda }
    }

    pub fn cumulant(&self) -> &LimitCumulant {
        &self.lc
    }

    pub fn options(&self) -> &QuadratureOptions {
        &self.opts
    }

    /// Decides convergence from the log-slope `g(u) = u (y - phi'(u)) + v`
    /// of the integrand in `t = ln u` on probes `u = 10^{k/2}`, `k <= 10`.
    /// Convex `phi` makes `y - phi'` nonincreasing, so a slope below `-eps`
    /// with `y < phi'` stays there.
    pub fn check_integrability(&self, y: f64, v: f64) -> Result<IntegrabilityVerdict> {
        let probes: Vec<f64> = (0..=10).map(|k| 10f64.powf(k as f64 / 2.0)).collect();
        let mut rows = Vec::with_capacity(probes.len());
        for &u in &probes {
            let s = y - self.lc.phi_derivative(u)?;
            rows.push((u, s, u * s + v));
        }
        let (u_max, s_max, g_max) = *rows.last().unwrap();
        let g_prev = rows[rows.len() - 2].2;
        if s_max <= 0.0 && g_max <= -SLOPE_EPS {
            let first = rows.iter().rposition(|r| !(r.1 <= 0.0 && r.2 <= -SLOPE_EPS)).map_or(0, |i| i + 1);
            let (u, _, g) = rows[first];
            return Ok(IntegrabilityVerdict { holds: true, witness_u: u, log_slope: g });
        }
        if g_max > -SLOPE_EPS && g_max >= g_prev {
            return Ok(IntegrabilityVerdict { holds: false, witness_u: u_max, log_slope: g_max });
        }
        if s_max > 0.0 && g_max > 0.0 {
            return Ok(IntegrabilityVerdict { holds: false, witness_u: u_max, log_slope: g_max });
        }
        Err(FptError::Indeterminate { y, v })
    }

    fn require_integrable(&self, y: f64, v: f64) -> Result<()> {
        let verdict = self.check_integrability(y, v)?;
        if verdict.holds {
            Ok(())
        } else {
            Err(FptError::Divergent { y, v, witness_u: verdict.witness_u, log_slope: verdict.log_slope })
        }
    }

    fn finish(&self, y: f64, v: f64, q: QuadratureResult) -> Result<QuadratureResult> {
        if q.tail_diagnostic == TailDiagnostic::Diverged {
            return Err(FptError::Divergent { y, v, witness_u: self.opts.u_max, log_slope: f64::NAN });
        }
        Ok(q)
    }

    pub fn eval_n(&self, y: f64, v: f64) -> Result<QuadratureResult> {
        if !(v > 0.0) {
            return Err(FptError::Precondition(format!("N_v needs v > 0, got {v}")));
        }
        self.require_integrable(y, v)?;
        let lc = &self.lc;
        let q = integrate_log_scale(
            |t: f64| {
                let u = t.exp();
                Ok((u * y - lc.phi_value(u)? + v * t).exp())
            },
            &self.opts,
        )?;
        self.finish(y, v, q.result)
    }

    pub fn eval_h(&self, y: f64) -> Result<QuadratureResult> {
        if y == 0.0 {
            return Ok(QuadratureResult::exact(0.0));
        }
        self.require_integrable(y.max(0.0), 0.0)?;
        let lc = &self.lc;
        let scale = 1.0 / self.log_inv_lambda;
        let q = integrate_log_scale(
            |t: f64| {
                let u = t.exp();
                let phi = lc.phi_value(u)?;
                let uy = u * y;
                let bracket = if uy < 1.0 { uy.exp_m1() * (-phi).exp() } else { (uy - phi).exp() - (-phi).exp() };
                Ok(scale * bracket)
            },
            &self.opts,
        )?;
        self.finish(y, 0.0, q.result)
    }

    pub fn eval_w(&self, y: f64, v: f64) -> Result<QuadratureResult> {
        let delta = negative_order_limit(self.lc.spec());
        if !(v < 0.0 && v > -delta) {
            return Err(FptError::Precondition(format!("W_v needs v in (-{delta}, 0), got {v}")));
        }
        self.require_integrable(y, v)?;
        let lc = &self.lc;
        let q = integrate_log_scale(
            |t: f64| {
                let u = t.exp();
                Ok((u * y - lc.phi_value(u)?).exp_m1() * (v * t).exp())
            },
            &self.opts,
        )?;
        self.finish(y, v, q.result)
    }

    /// `C(y, 0)`.
    pub fn eval_c(&self, y: f64) -> Result<QuadratureResult> {
        self.eval_c_order(y, 0.0)
    }

    /// `C(y, v) = int_0^1 (e^{uy-phi} - 1) u^{v-1} du + int_1^inf e^{uy-phi} u^{v-1} du`
    /// for `v in (-delta, 0]`; `W_v = C(y, v) + 1/v`.
    pub fn eval_c_order(&self, y: f64, v: f64) -> Result<QuadratureResult> {
        let delta = negative_order_limit(self.lc.spec());
        if !(v <= 0.0 && v > -delta) {
            return Err(FptError::Precondition(format!("C(y, v) needs v in (-{delta}, 0], got {v}")));
        }
        self.require_integrable(y, v)?;
        let lc = &self.lc;
        let q = integrate_log_scale(
            |t: f64| {
                let u = t.exp();
                let e = u * y - lc.phi_value(u)?;
                Ok(if t < 0.0 { e.exp_m1() * (v * t).exp() } else { (e + v * t).exp() })
            },
            &self.opts,
        )?;
        self.finish(y, v, q.result)
    }

    pub fn eval(&self, kind: TransformKind, y: f64, v: f64) -> Result<QuadratureResult> {
        match kind {
            TransformKind::N => self.eval_n(y, v),
            TransformKind::H => self.eval_h(y),
            TransformKind::W => self.eval_w(y, v),
        }
    }

    fn value(&self, kind: TransformKind, y: f64, v: f64) -> Result<f64> {
        let q = self.eval(kind, y, v)?;
        if !q.converged {
            return Err(FptError::Quadrature(format!(
                "{} at y = {y}, v = {v} missed tolerance (abs_err {})",
                kind.label(),
                q.abs_err
            )));
        }
        Ok(q.value)
    }

    /// Residual of the harmonic equation `E f(lambda y + eta) lambda^v = f(y)`
    /// (`N`, `W`) or `E H(lambda y + eta) = H(y) + 1`.
    pub fn check_harmonic(&self, kind: TransformKind, y: f64, v: f64) -> Result<HarmonicResidual> {
        let lambda = self.lc.lambda();
        let f_y = self.value(kind, y, v)?;
        let shift = lambda * y;
        let expectation = expect(self.lc.spec(), lambda, |eta| self.value(kind, shift + eta, v))?;
        let (lhs, rhs) = match kind {
            TransformKind::H => (expectation, f_y + 1.0),
            _ => (expectation * lambda.powf(v), f_y),
        };
        let residual = (lhs - rhs).abs();
        Ok(HarmonicResidual { kind, y, v, f_y, lhs, rhs, residual, relative: residual / (f_y.abs() + 1.0) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicResidual {
    pub kind: TransformKind,
    pub y: f64,
    pub v: f64,
    pub f_y: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// `residual / (|f(y)| + 1)`
    pub relative: f64,
}

/// Gauss-Hermite order used for Gaussian expectations.
pub const HERMITE_NODES: usize = 64;

/// Hermite abscissae beyond this carry weight below `e^{-60}`; skipping them
/// keeps the transforms away from overflow.
const HERMITE_CUTOFF: f64 = 7.75;

/// `E g(eta)` under the innovation law: exact atom sums, Hermite quadrature
/// for Gaussians, adaptive quadrature on the continuous pieces of truncated
/// Gaussians.
pub fn expect<F>(spec: &InnovationSpec, lambda: f64, g: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    expect_with_nodes(spec, lambda, HERMITE_NODES, g)
}

pub fn expect_with_nodes<F>(spec: &InnovationSpec, lambda: f64, nodes: usize, g: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    match spec.law() {
        Law::Atoms(atoms) => atoms.iter().try_fold(0.0, |acc, &(x, p)| Ok(acc + p * g(x)?)),
        Law::Gaussian { mean, sd } => {
            // Transforms such as N_v grow like the inverse Gaussian weight at
            // rate lambda, so the product decays on the wider scale sd/lambda.
            let width = sd / lambda.max(0.5);
            let rule = GaussHermite::new(nodes).map_err(|e| FptError::Quadrature(e.to_string()))?;
            let mut acc = 0.0;
            for &(x, w) in rule.as_node_weight_pairs() {
                if x.abs() > HERMITE_CUTOFF {
                    continue;
                }
                let eta = mean + std::f64::consts::SQRT_2 * width * x;
                let density = normal_pdf((eta - mean) / sd) / sd;
                acc += w * (x * x).exp() * density * std::f64::consts::SQRT_2 * width * g(eta)?;
            }
            Ok(acc)
        }
        Law::PiecewiseGaussian { mean, sd, pieces, .. } => {
            let reach = 12.0 * sd / lambda.max(0.5);
            let mut acc = 0.0;
            for piece in pieces {
                match piece.map {
                    PieceMap::Const(c) => acc += piece.log_prob.exp() * g(c)?,
                    PieceMap::Identity => {
                        let lo = piece.lo.max(mean - reach);
                        let hi = piece.hi.min(mean + reach);
                        if lo < hi {
                            let (val, _) = integrate_finite(
                                |eta| Ok(normal_pdf((eta - mean) / sd) / sd * g(eta)?),
                                lo,
                                hi,
                                1e-10,
                                1e-14,
                            )?;
                            acc += val;
                        }
                    }
                }
            }
            Ok(acc)
        }
        Law::Stable { .. } => {
            Err(FptError::Unsupported("expectations under non-Gaussian stable laws (no density available)".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn transforms(spec: InnovationSpec, lambda: f64) -> Transforms {
        Transforms::new(LimitCumulant::new(spec, lambda).unwrap())
    }

    fn gaussian() -> Transforms {
        transforms(InnovationSpec::gaussian(0.0, 1.0).unwrap(), 0.5)
    }

    fn det() -> Transforms {
        transforms(InnovationSpec::deterministic(1.0).unwrap(), 0.5)
    }

    #[test]
    fn integrability_examples() {
        assert!(gaussian().check_integrability(10.0, 1.0).unwrap().holds);
        assert!(!det().check_integrability(3.0, 1.0).unwrap().holds);
        assert!(det().check_integrability(1.9, 1.0).unwrap().holds);
        let st = transforms(InnovationSpec::stable(0.5, 1.0, 0.0).unwrap(), 0.5);
        assert!(st.check_integrability(-1.0, 0.0).unwrap().holds);
        assert!(!st.check_integrability(0.0, 0.0).unwrap().holds);
        assert!(!st.check_integrability(1.0, 0.0).unwrap().holds);
    }

    #[test]
    fn boundary_of_linear_growth() {
        // y = theta: the integrand is u^{v-1}, integrable at infinity iff v < 0
        assert!(!det().check_integrability(2.0, 0.0).unwrap().holds);
        assert!(det().check_integrability(2.0, -0.5).unwrap().holds);
    }

    #[test]
    fn n_examples() {
        let b: f64 = 2.0 / 3.0;
        assert_relative_eq!(gaussian().eval_n(0.0, 1.0).unwrap().value, 0.5 * (PI / b).sqrt(), max_relative = 1e-9);
        assert_relative_eq!(det().eval_n(0.0, 1.0).unwrap().value, 0.5, max_relative = 1e-10);
        assert_relative_eq!(det().eval_n(1.0, 2.0).unwrap().value, 1.0, max_relative = 1e-10);
        assert!(matches!(det().eval_n(3.0, 1.0), Err(FptError::Divergent { .. })));
        assert!(matches!(det().eval_n(0.0, 0.0), Err(FptError::Precondition(_))));
    }

    #[test]
    fn h_examples() {
        assert_eq!(gaussian().eval_h(0.0).unwrap().value, 0.0);
        assert_relative_eq!(det().eval_h(1.0).unwrap().value, 1.0, max_relative = 1e-9);
        assert_relative_eq!(det().eval_h(1.75).unwrap().value, 3.0, max_relative = 1e-9);
        // Frullani for negative arguments: log(2/3)/log 2
        assert_relative_eq!(det().eval_h(-1.0).unwrap().value, (2.0f64 / 3.0).ln() / 2f64.ln(), max_relative = 1e-9);
    }

    #[test]
    fn w_and_c_examples() {
        let w = det().eval_w(1.0, -0.5).unwrap();
        assert_relative_eq!(w.value, -2.0 * PI.sqrt(), max_relative = 1e-9);
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        assert_relative_eq!(det().eval_c(1.0).unwrap().value, -EULER_GAMMA, max_relative = 1e-9);
        assert!(matches!(det().eval_w(1.0, -1.5), Err(FptError::Precondition(_))));
        assert!(matches!(det().eval_w(1.0, 0.1), Err(FptError::Precondition(_))));
    }

    #[test]
    fn w_decomposes_into_c_plus_pole() {
        let g = gaussian();
        for v in [-0.1, -0.01] {
            let w = g.eval_w(0.3, v).unwrap();
            let c = g.eval_c_order(0.3, v).unwrap();
            assert!((w.value - 1.0 / v - c.value).abs() <= w.abs_err + c.abs_err + 1e-12);
        }
    }

    #[test]
    fn gaussian_w_against_tighter_reference() {
        let g = gaussian();
        let tight = Transforms::with_options(g.cumulant().clone(), QuadratureOptions::default().with_rel_tol(1e-10));
        let w = g.eval_w(0.0, -0.5).unwrap();
        let r = tight.eval_w(0.0, -0.5).unwrap();
        assert!(w.value < 0.0);
        assert!((w.value - r.value).abs() <= w.abs_err + r.abs_err);
    }

    #[test]
    fn harmonic_examples() {
        let r = det().check_harmonic(TransformKind::H, 0.0, 0.0).unwrap();
        assert!(r.residual < 1e-8);
        let r = gaussian().check_harmonic(TransformKind::N, 0.0, 1.0).unwrap();
        assert!(r.residual < 1e-6, "{r:?}");
        let tp = transforms(InnovationSpec::two_point(1.0, -1.0, 0.5).unwrap(), 0.5);
        let r = tp.check_harmonic(TransformKind::W, 0.0, -0.4).unwrap();
        assert!(r.residual < 1e-6, "{r:?}");
    }

    #[test]
    fn harmonic_on_truncated_gaussian() {
        let spec = InnovationSpec::gaussian(0.0, 1.0).unwrap().cap_above(1.5).unwrap();
        let t = transforms(spec, 0.5);
        let r = t.check_harmonic(TransformKind::H, 0.5, 0.0).unwrap();
        assert!(r.relative < 1e-6, "{r:?}");
    }

    #[test]
    fn hermite_64_agrees_with_128() {
        let spec = InnovationSpec::gaussian(0.0, 1.0).unwrap();
        let g = gaussian();
        let f = |eta: f64| g.eval_n(eta, 1.0).map(|q| q.value);
        let a = expect_with_nodes(&spec, 0.5, 64, f).unwrap();
        let b = expect_with_nodes(&spec, 0.5, 128, f).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-9);
    }

    #[test]
    fn stable_expectations_are_unsupported() {
        let spec = InnovationSpec::stable(1.5, 1.0, 0.0).unwrap();
        assert!(matches!(expect(&spec, 0.5, |_| Ok(1.0)), Err(FptError::Unsupported(_))));
    }
}
