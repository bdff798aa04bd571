//! Limit cumulant `phi(u) = sum_{k>=0} psi(lambda^k u)`.
//!
//! `phi` is the cumulant of the stationary law `Theta = sum lambda^k eta_{k+1}`
//! and satisfies `phi(u) = phi(lambda u) + psi(u)`. Stable and Gaussian laws
//! (and point masses) have closed forms; everything else is summed as a
//! series with a geometric tail bound.

use serde::Serialize;

use crate::error::{FptError, Result};
use crate::innovations::{Family, InnovationSpec};
use crate::special::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CumulantMode {
    Series,
    ClosedFormStable,
    ClosedFormDeterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesControls {
    /// Summation stops once the geometric tail bound drops below this.
    pub abs_term_floor: f64,
    pub k_max: usize,
}

impl Default for SeriesControls {
    fn default() -> Self {
        Self { abs_term_floor: 1e-12, k_max: 10_000 }
    }
}

/// `phi(u)` with an absolute error bound (zero for closed forms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiValue {
    pub value: f64,
    pub abs_err: f64,
}

/// Evaluator of `phi` bound to an innovation law and `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitCumulant {
    spec: InnovationSpec,
    lambda: f64,
    mode: CumulantMode,
    controls: SeriesControls,
    closed: Option<ClosedForm>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ClosedForm {
    /// `mean u/(1-l) + sign C u^alpha/(1-l^alpha)`
    Stable {
        alpha: f64,
        signed_scale: f64,
        mean: f64,
    },
    Linear {
        value: f64,
    },
}

pub fn validate_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(FptError::invalid("0 < λ < 1"))
    }
}

impl LimitCumulant {
    /// Picks a closed form when the family has one, the series otherwise.
    pub fn new(spec: InnovationSpec, lambda: f64) -> Result<Self> {
        let mode = match spec.family() {
            Family::Gaussian { .. } | Family::Stable { .. } => CumulantMode::ClosedFormStable,
            Family::Deterministic { .. } => CumulantMode::ClosedFormDeterministic,
            _ => CumulantMode::Series,
        };
        Self::with_mode(spec, lambda, mode)
    }

    pub fn with_mode(spec: InnovationSpec, lambda: f64, mode: CumulantMode) -> Result<Self> {
        validate_lambda(lambda)?;
        let closed = match (mode, spec.family()) {
            (CumulantMode::Series, _) => None,
            (CumulantMode::ClosedFormStable, Family::Gaussian { mean, var }) => {
                Some(ClosedForm::Stable { alpha: 2.0, signed_scale: 0.5 * var, mean: *mean })
            }
            (CumulantMode::ClosedFormStable, Family::Stable { alpha, scale, mean }) => {
                Some(ClosedForm::Stable { alpha: *alpha, signed_scale: (alpha - 1.0).signum() * scale, mean: *mean })
            }
            (CumulantMode::ClosedFormDeterministic, Family::Deterministic { value }) => {
                Some(ClosedForm::Linear { value: *value })
            }
            (mode, family) => {
                return Err(FptError::invalid(format!("{mode:?} is not available for {family:?}")));
            }
        };
        Ok(Self { spec, lambda, mode, controls: SeriesControls::default(), closed })
    }

    pub fn with_controls(mut self, controls: SeriesControls) -> Self {
        self.controls = controls;
        self
    }

    pub fn spec(&self) -> &InnovationSpec {
        &self.spec
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mode(&self) -> CumulantMode {
        self.mode
    }

    pub fn controls(&self) -> SeriesControls {
        self.controls
    }

    pub fn psi(&self, u: f64) -> f64 {
        self.spec.psi(u)
    }

    /// Same law and `lambda`, series mode.
    pub fn as_series(&self) -> Self {
        Self { mode: CumulantMode::Series, closed: None, ..self.clone() }
    }

    pub fn phi(&self, u: f64) -> Result<PhiValue> {
        if !(u >= 0.0) {
            return Err(FptError::Precondition(format!("phi needs u >= 0, got {u}")));
        }
        if u == 0.0 {
            return Ok(PhiValue { value: 0.0, abs_err: 0.0 });
        }
        let l = self.lambda;
        match self.closed {
            Some(ClosedForm::Stable { alpha, signed_scale, mean }) => Ok(PhiValue {
                value: mean * u / (1.0 - l) + signed_scale * u.powf(alpha) / (1.0 - l.powf(alpha)),
                abs_err: 0.0,
            }),
            Some(ClosedForm::Linear { value }) => Ok(PhiValue { value: value * u / (1.0 - l), abs_err: 0.0 }),
            None => self.phi_series(u),
        }
    }

    pub fn phi_value(&self, u: f64) -> Result<f64> {
        self.phi(u).map(|p| p.value)
    }

    /// Terms are summed until `k >= k_min(u)` (early terms may change sign
    /// when `psi` dips below zero) and the tail bound
    /// `|term| r/(1-r)`, with `r` the observed term ratio clamped to
    /// `[lambda, 1)`, is below the floor.
    fn phi_series(&self, u: f64) -> Result<PhiValue> {
        let l = self.lambda;
        let k_min = (u.max(1.0).ln() / (1.0 / l).ln()).ceil() as usize + 8;
        let mut sum = CompensatedSum::new();
        let mut prev = f64::NAN;
        let mut scale = u;
        for k in 0..self.controls.k_max {
            let term = self.spec.psi(scale);
            if !term.is_finite() {
                return Err(FptError::SeriesDivergence { u, terms: k });
            }
            sum.add(term);
            if k + 1 >= k_min {
                if term == 0.0 {
                    return Ok(PhiValue { value: sum.value(), abs_err: 0.0 });
                }
                let ratio = (term / prev).abs();
                if ratio < 1.0 {
                    let r = ratio.max(l);
                    let tail = term.abs() * r / (1.0 - r);
                    if tail < self.controls.abs_term_floor {
                        return Ok(PhiValue { value: sum.value(), abs_err: tail });
                    }
                }
            }
            prev = term;
            scale = u * l.powi(k as i32 + 1);
        }
        Err(FptError::SeriesDivergence { u, terms: self.controls.k_max })
    }

    /// `phi'(u)`: analytic for closed forms, central difference otherwise.
    pub fn phi_derivative(&self, u: f64) -> Result<f64> {
        let l = self.lambda;
        match self.closed {
            Some(ClosedForm::Stable { alpha, signed_scale, mean }) => {
                Ok(mean / (1.0 - l) + signed_scale * alpha * u.powf(alpha - 1.0) / (1.0 - l.powf(alpha)))
            }
            Some(ClosedForm::Linear { value }) => Ok(value / (1.0 - l)),
            None => {
                let h = 1e-4 * u.max(1e-3);
                let lo = (u - h).max(0.0);
                let hi = u + h;
                Ok((self.phi_value(hi)? - self.phi_value(lo)?) / (hi - lo))
            }
        }
    }

    /// `max |phi(u) - phi(lambda u) - psi(u)|` over the grid.
    pub fn check_functional_equation(&self, grid: &[f64]) -> Result<f64> {
        grid.iter().try_fold(0.0f64, |acc, &u| {
            let r = (self.phi_value(u)? - self.phi_value(self.lambda * u)? - self.psi(u)).abs();
            Ok(acc.max(r))
        })
    }

    /// Large-`u` growth of `phi`: linear (bounded innovations) or faster.
    pub fn slope_probe(&self, probes: &[f64]) -> Result<SlopeReport> {
        if probes.is_empty() || probes.windows(2).any(|w| w[1] <= w[0]) || probes[0] <= 0.0 {
            return Err(FptError::Precondition("slope probes must be positive and strictly increasing".into()));
        }
        let u_max = *probes.last().unwrap();
        if u_max < 1e3 {
            return Err(FptError::Precondition("largest slope probe must be at least 1e3".into()));
        }
        let theoretical_slope = self.spec.upper_bound().map(|h| h / (1.0 - self.lambda));
        let mut rows = Vec::with_capacity(probes.len());
        for &u in probes {
            let phi_over_u = self.phi_value(u)? / u;
            rows.push(SlopeProbe { u, phi_over_u, delta_over_u: theoretical_slope.map(|s| s - phi_over_u) });
        }
        let last = rows.last().unwrap().phi_over_u;
        let reference = rows.iter().rev().find(|r| r.u <= u_max / 10.0).unwrap_or(&rows[0]).phi_over_u;
        let increasing = rows.windows(2).all(|w| w[1].phi_over_u > w[0].phi_over_u);
        let superlinear = reference > 0.0 && last >= 2.0 * reference && increasing;
        let delta_nonneg_nonincreasing = theoretical_slope.map(|_| {
            let d: Vec<f64> = rows.iter().map(|r| r.delta_over_u.unwrap()).collect();
            d.iter().all(|&x| x >= 0.0) && d.windows(2).all(|w| w[1] <= w[0])
        });
        Ok(SlopeReport {
            slope_estimate: last,
            theoretical_slope,
            superlinear,
            delta_nonneg_nonincreasing,
            probes: rows,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeProbe {
    pub u: f64,
    pub phi_over_u: f64,
    /// `theoretical_slope - phi(u)/u`, i.e. `Delta(u)/u`.
    pub delta_over_u: Option<f64>,
}

/// Outcome of [`LimitCumulant::slope_probe`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeReport {
    /// `phi(u_max)/u_max`.
    pub slope_estimate: f64,
    /// `H/(1-lambda)` when the innovation is bounded above by `H`.
    pub theoretical_slope: Option<f64>,
    /// `phi(u)/u` at least doubled over the last decade and rose at every probe.
    pub superlinear: bool,
    pub delta_nonneg_nonincreasing: Option<bool>,
    pub probes: Vec<SlopeProbe>,
}

/// Mean `m/(1-lambda)` and variance `Var(eta)/(1-lambda^2)` of the stationary
/// law, when the innovation moments exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationaryMoments {
    pub mean: f64,
    pub variance: Option<f64>,
}

pub fn stationary_reference(spec: &InnovationSpec, lambda: f64) -> Option<StationaryMoments> {
    let m = spec.moments()?;
    Some(StationaryMoments { mean: m.mean / (1.0 - lambda), variance: m.variance.map(|v| v / (1.0 - lambda * lambda)) })
}
