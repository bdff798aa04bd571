//! Innovation laws driving the AR(1) recursion.
//!
//! The registry is closed: Gaussian, deterministic, two-point, spectrally
//! negative stable, and the two truncations (cap above, floor the positive
//! part) wrapped around any of those. Each law carries both its cumulant
//! `psi(u) = ln E exp(u eta)` and a sampler, and the two are kept consistent
//! by construction: truncations act on a base draw, so wrapped samples are
//! pathwise coupled with the base.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FptError, Result};
use crate::special::{gaussian_interval_prob, gaussian_log_partial_mgf, log_sum_exp, normal_pdf, normal_sf};

/// Default moment order for the negative-part diagnostic.
pub const DEFAULT_NEG_MOMENT_DELTA: f64 = 0.5;

/// Minimum sample size accepted by [`InnovationSpec::diagnostics`].
pub const MIN_DIAGNOSTIC_DRAWS: usize = 10_000;

/// Innovation family as written in configs.
///
/// `Stable` has cumulant `mean*u + sgn(alpha - 1) * scale * u^alpha`; with
/// `alpha = 2` it is the Gaussian with variance `2*scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Gaussian { mean: f64, var: f64 },
    Deterministic { value: f64 },
    TwoPoint { up: f64, down: f64, p: f64 },
    Stable { alpha: f64, scale: f64, mean: f64 },
    CappedAbove { base: Box<Family>, cap: f64 },
    FlooredPositive { base: Box<Family>, level: f64 },
}

impl Family {
    pub fn gaussian(mean: f64, var: f64) -> Self {
        Family::Gaussian { mean, var }
    }

    pub fn deterministic(value: f64) -> Self {
        Family::Deterministic { value }
    }

    pub fn two_point(up: f64, down: f64, p: f64) -> Self {
        Family::TwoPoint { up, down, p }
    }

    pub fn stable(alpha: f64, scale: f64, mean: f64) -> Self {
        Family::Stable { alpha, scale, mean }
    }

    fn label(&self) -> String {
        match self {
            Family::Gaussian { .. } => "gaussian".into(),
            Family::Deterministic { .. } => "deterministic".into(),
            Family::TwoPoint { .. } => "two_point".into(),
            Family::Stable { alpha, .. } => format!("stable(alpha={alpha})"),
            Family::CappedAbove { base, .. } => format!("capped_above({})", base.label()),
            Family::FlooredPositive { base, .. } => format!("floored_positive({})", base.label()),
        }
    }
}

/// Pointwise nondecreasing map applied to a base draw.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Truncation {
    /// `min(eta, cap)`
    Cap(f64),
    /// `eta` if `eta <= 0`, `level` if `eta >= level`, otherwise 0.
    Floor(f64),
}

impl Truncation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Truncation::Cap(h) => x.min(h),
            Truncation::Floor(n) => {
                if x <= 0.0 {
                    x
                } else if x >= n {
                    n
                } else {
                    0.0
                }
            }
        }
    }

    fn breakpoints(self) -> Vec<f64> {
        match self {
            Truncation::Cap(h) => vec![h],
            Truncation::Floor(n) => vec![0.0, n],
        }
    }
}

fn apply_all(ops: &[Truncation], x: f64) -> f64 {
    ops.iter().fold(x, |acc, op| op.apply(acc))
}

/// How a wrapped Gaussian maps one interval of base values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum PieceMap {
    Identity,
    Const(f64),
}

/// `(lo, hi]` slice of the base Gaussian with its image under the truncations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub map: PieceMap,
    pub log_prob: f64,
}

/// Resolved law used for all analytic work.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Law {
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// Finite support: `(value, probability)` pairs.
    Atoms(Vec<(f64, f64)>),
    Stable {
        alpha: f64,
        scale: f64,
        mean: f64,
    },
    /// A Gaussian pushed through cap/floor truncations.
    PiecewiseGaussian {
        mean: f64,
        sd: f64,
        pieces: Vec<Piece>,
        /// First four cumulants, for the Taylor branch of `psi` near zero.
        cumulants: [f64; 4],
        /// Magnitude bound on the effective support, sets the Taylor cutoff.
        scale: f64,
    },
}

/// `psi` switches to its quartic Taylor polynomial once `u * scale` drops
/// below this; the remainder is then below `1e-17 * u * scale`.
const SMALL_ARGUMENT: f64 = 1e-4;

/// An innovation family together with its resolved law.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationSpec {
    family: Family,
    base: Family,
    ops: Vec<Truncation>,
    law: Law,
}

/// Monte Carlo (or exact) moment diagnostics of an innovation law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailDiagnostics {
    /// Estimate of `E ln(1 + |eta|)`.
    pub log_moment: f64,
    pub log_moment_se: f64,
    /// `(delta, estimate of E (eta^-)^delta)`.
    pub neg_moment_delta: (f64, f64),
    pub neg_moment_se: f64,
    /// `H` with `eta <= H` almost surely, if any.
    pub upper_bound: Option<f64>,
    pub exact: bool,
}

/// Mean and (when finite) variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: Option<f64>,
}

impl InnovationSpec {
    pub fn new(family: Family) -> Result<Self> {
        validate(&family)?;
        let (base, ops) = flatten(&family);
        let law = resolve(&base, &ops)?;
        Ok(Self { family, base, ops, law })
    }

    pub fn gaussian(mean: f64, var: f64) -> Result<Self> {
        Self::new(Family::gaussian(mean, var))
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        Self::new(Family::deterministic(value))
    }

    pub fn two_point(up: f64, down: f64, p: f64) -> Result<Self> {
        Self::new(Family::two_point(up, down, p))
    }

    pub fn stable(alpha: f64, scale: f64, mean: f64) -> Result<Self> {
        Self::new(Family::stable(alpha, scale, mean))
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub(crate) fn law(&self) -> &Law {
        &self.law
    }

    /// `E exp(u eta) < inf` for every `u >= 0`. Holds for every registered
    /// family: none has a heavy right tail.
    pub fn mgf_domain_note(&self) -> bool {
        true
    }

    /// Cumulant `psi(u) = ln E exp(u eta)` for `u >= 0`.
    pub fn psi(&self, u: f64) -> f64 {
        debug_assert!(u >= 0.0, "psi is defined on u >= 0");
        if u == 0.0 {
            return 0.0;
        }
        match &self.law {
            Law::Gaussian { mean, sd } => mean * u + 0.5 * sd * sd * u * u,
            Law::Atoms(atoms) => {
                if let [(x, _)] = atoms.as_slice() {
                    return x * u;
                }
                if atoms.iter().all(|(x, _)| (u * x).abs() <= 0.5) {
                    // ln(1 + sum p (e^{ux} - 1)) keeps relative accuracy as u -> 0
                    return atoms.iter().map(|&(x, p)| p * (u * x).exp_m1()).sum::<f64>().ln_1p();
                }
                let terms: Vec<f64> = atoms.iter().map(|&(x, p)| p.ln() + u * x).collect();
                log_sum_exp(&terms)
            }
            Law::Stable { alpha, scale, mean } => mean * u + (alpha - 1.0).signum() * scale * u.powf(*alpha),
            Law::PiecewiseGaussian { mean, sd, pieces, cumulants, scale } => {
                if u * scale < SMALL_ARGUMENT {
                    let [k1, k2, k3, k4] = *cumulants;
                    return u * (k1 + u * (k2 / 2.0 + u * (k3 / 6.0 + u * k4 / 24.0)));
                }
                let terms: Vec<f64> = pieces
                    .iter()
                    .map(|pc| match pc.map {
                        PieceMap::Identity => gaussian_log_partial_mgf(*mean, *sd, u, pc.lo, pc.hi),
                        PieceMap::Const(c) => u * c + pc.log_prob,
                    })
                    .collect();
                log_sum_exp(&terms)
            }
        }
    }

    /// Essential supremum of the support, when finite.
    pub fn upper_bound(&self) -> Option<f64> {
        let base_sup = match &self.base {
            Family::Gaussian { .. } => None,
            Family::Deterministic { value } => Some(*value),
            Family::TwoPoint { up, .. } => Some(*up),
            Family::Stable { alpha, mean, .. } => (*alpha < 1.0).then_some(*mean),
            Family::CappedAbove { .. } | Family::FlooredPositive { .. } => unreachable!("flattened"),
        };
        self.ops.iter().fold(base_sup, |sup, op| match (*op, sup) {
            (Truncation::Cap(h), None) => Some(h),
            (Truncation::Floor(n), None) => Some(n),
            (op, Some(s)) => Some(op.apply(s)),
        })
    }

    /// Whether `P(eta > t) > 0`.
    pub fn exceeds_with_positive_probability(&self, t: f64) -> bool {
        match self.upper_bound() {
            None => true,
            Some(h) => t < h,
        }
    }

    /// `P(eta > t)`. Exact for every family except stable laws with
    /// `alpha < 2`, where it is estimated from `2e5` draws of a fixed stream.
    pub fn tail_mass(&self, t: f64) -> Result<f64> {
        match &self.law {
            Law::Gaussian { mean, sd } => Ok(normal_sf((t - mean) / sd)),
            Law::Atoms(atoms) => Ok(atoms.iter().filter(|(x, _)| *x > t).map(|(_, p)| p).sum()),
            Law::PiecewiseGaussian { mean, sd, pieces, .. } => Ok(pieces
                .iter()
                .map(|pc| match pc.map {
                    PieceMap::Identity => gaussian_interval_prob(*mean, *sd, pc.lo.max(t), pc.hi),
                    PieceMap::Const(c) if c > t => pc.log_prob.exp(),
                    PieceMap::Const(_) => 0.0,
                })
                .sum()),
            Law::Stable { alpha, mean, .. } => {
                if *alpha < 1.0 && t >= *mean {
                    return Ok(0.0);
                }
                let mut rng = crate::rng::stream(crate::rng::derive_seed(0, "tail-mass"), 0);
                let n = 200_000;
                let hits = self.sample(&mut rng, n)?.into_iter().filter(|&x| x > t).count();
                Ok(hits as f64 / n as f64)
            }
        }
    }

    /// Mean and variance when they exist.
    pub fn moments(&self) -> Option<Moments> {
        match &self.law {
            Law::Gaussian { mean, sd } => Some(Moments { mean: *mean, variance: Some(sd * sd) }),
            Law::Atoms(atoms) => {
                let m: f64 = atoms.iter().map(|(x, p)| x * p).sum();
                let v: f64 = atoms.iter().map(|(x, p)| p * (x - m) * (x - m)).sum();
                Some(Moments { mean: m, variance: Some(v) })
            }
            Law::Stable { alpha, scale, mean } => {
                if *alpha == 2.0 {
                    Some(Moments { mean: *mean, variance: Some(2.0 * scale) })
                } else if *alpha > 1.0 {
                    Some(Moments { mean: *mean, variance: None })
                } else {
                    None
                }
            }
            Law::PiecewiseGaussian { cumulants, .. } => {
                Some(Moments { mean: cumulants[0], variance: Some(cumulants[1].max(0.0)) })
            }
        }
    }

    /// One draw. Wrapped families transform a base draw, so two specs
    /// sharing a base consume identical randomness.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let x = match &self.base {
            Family::Gaussian { mean, var } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + var.sqrt() * z
            }
            Family::Deterministic { value } => *value,
            Family::TwoPoint { up, down, p } => {
                if rng.random::<f64>() < *p {
                    *up
                } else {
                    *down
                }
            }
            Family::Stable { alpha, scale, mean } => {
                if *alpha <= 1.0 {
                    return Err(FptError::UnsupportedSampler { family: self.family.label() });
                }
                draw_stable_negative(*alpha, *scale, *mean, rng)
            }
            Family::CappedAbove { .. } | Family::FlooredPositive { .. } => unreachable!("flattened"),
        };
        Ok(apply_all(&self.ops, x))
    }

    /// `n` i.i.d. draws from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    /// Law of `min(eta, cap)`.
    pub fn cap_above(&self, cap: f64) -> Result<Self> {
        if !cap.is_finite() {
            return Err(FptError::invalid("cap must be finite"));
        }
        let family = match &self.family {
            Family::Deterministic { value } => Family::deterministic(value.min(cap)),
            Family::TwoPoint { up, down, p } => {
                if cap >= *up {
                    self.family.clone()
                } else if cap > *down {
                    Family::two_point(cap, *down, *p)
                } else {
                    Family::deterministic(cap)
                }
            }
            other => Family::CappedAbove { base: Box::new(other.clone()), cap },
        };
        Self::new(family)
    }

    /// Law of `-eta^- + level * 1{eta >= level}`: negative values kept,
    /// values in `(0, level)` sent to zero, the rest collapsed onto `level`.
    pub fn floor_positive(&self, level: f64) -> Result<Self> {
        if !(level > 0.0 && level.is_finite()) {
            return Err(FptError::invalid("floor level N must be positive and finite"));
        }
        if self.tail_mass(level)? <= 0.0 {
            return Err(FptError::InfeasibleTruncation { level });
        }
        let op = Truncation::Floor(level);
        let family = match &self.family {
            Family::Deterministic { value } => Family::deterministic(op.apply(*value)),
            Family::TwoPoint { up, down, p } => {
                let (hi, lo) = (op.apply(*up), op.apply(*down));
                if hi > lo {
                    Family::two_point(hi, lo, *p)
                } else {
                    Family::deterministic(hi)
                }
            }
            other => Family::FlooredPositive { base: Box::new(other.clone()), level },
        };
        Self::new(family)
    }

    /// Moment diagnostics; exact for finite-support laws, otherwise
    /// estimated from `n >= 1e4` draws.
    pub fn diagnostics<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, delta: f64) -> Result<TailDiagnostics> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(FptError::invalid("delta must lie in (0, 1]"));
        }
        let upper_bound = self.upper_bound();
        if let Law::Atoms(atoms) = &self.law {
            let log_moment = atoms.iter().map(|(x, p)| p * x.abs().ln_1p()).sum();
            let neg = atoms.iter().map(|(x, p)| p * (-x).max(0.0).powf(delta)).sum();
            return Ok(TailDiagnostics {
                log_moment,
                log_moment_se: 0.0,
                neg_moment_delta: (delta, neg),
                neg_moment_se: 0.0,
                upper_bound,
                exact: true,
            });
        }
        if n < MIN_DIAGNOSTIC_DRAWS {
            return Err(FptError::Precondition(format!("diagnostics need n >= {MIN_DIAGNOSTIC_DRAWS}")));
        }
        let draws = self.sample(rng, n)?;
        let (log_moment, log_moment_se) = mean_and_se(draws.iter().map(|x| x.abs().ln_1p()), n);
        let (neg, neg_se) = mean_and_se(draws.iter().map(|x| (-x).max(0.0).powf(delta)), n);
        Ok(TailDiagnostics {
            log_moment,
            log_moment_se,
            neg_moment_delta: (delta, neg),
            neg_moment_se: neg_se,
            upper_bound,
            exact: false,
        })
    }
}

fn mean_and_se(values: impl Iterator<Item = f64>, n: usize) -> (f64, f64) {
    let (mut s, mut s2) = (0.0, 0.0);
    for v in values {
        s += v;
        s2 += v * v;
    }
    let nf = n as f64;
    let mean = s / nf;
    let var = ((s2 / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Chambers-Mallows-Stuck draw from the totally left-skewed stable law with
/// `ln E exp(u eta) = mean*u + scale*u^alpha`, `alpha in (1, 2]`.
fn draw_stable_negative<R: Rng + ?Sized>(alpha: f64, scale: f64, mean: f64, rng: &mut R) -> f64 {
    let beta = -1.0_f64;
    let half_pi_alpha = FRAC_PI_2 * alpha;
    let sigma = (scale * half_pi_alpha.cos().abs()).powf(1.0 / alpha);
    let tan = half_pi_alpha.tan();
    let b = (beta * tan).atan() / alpha;
    let s = (1.0 + beta * beta * tan * tan).powf(0.5 / alpha);
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    let x = s * (alpha * (v + b)).sin() / v.cos().powf(1.0 / alpha)
        * ((v - alpha * (v + b)).cos() / w).powf((1.0 - alpha) / alpha);
    mean + sigma * x
}

fn validate(family: &Family) -> Result<()> {
    let finite = |x: f64, what: &str| {
        if x.is_finite() {
            Ok(())
        } else {
            Err(FptError::invalid(format!("{what} must be finite")))
        }
    };
    match family {
        Family::Gaussian { mean, var } => {
            finite(*mean, "mean")?;
            if !(*var > 0.0 && var.is_finite()) {
                return Err(FptError::invalid("gaussian: var > 0"));
            }
        }
        Family::Deterministic { value } => finite(*value, "value")?,
        Family::TwoPoint { up, down, p } => {
            finite(*up, "up")?;
            finite(*down, "down")?;
            if !(*p > 0.0 && *p < 1.0) {
                return Err(FptError::invalid("two_point: 0 < p < 1"));
            }
            if down >= up {
                return Err(FptError::invalid("two_point: down < up"));
            }
        }
        Family::Stable { alpha, scale, mean } => {
            finite(*mean, "mean")?;
            let in_range = (*alpha > 0.0 && *alpha < 1.0) || (*alpha > 1.0 && *alpha <= 2.0);
            if !in_range {
                return Err(FptError::invalid("stable: alpha in (0, 1) or (1, 2]"));
            }
            if !(*scale > 0.0 && scale.is_finite()) {
                return Err(FptError::invalid("stable: scale > 0"));
            }
        }
        Family::CappedAbove { base, cap } => {
            finite(*cap, "cap")?;
            validate(base)?;
        }
        Family::FlooredPositive { base, level } => {
            if !(*level > 0.0 && level.is_finite()) {
                return Err(FptError::invalid("floored_positive: level N > 0"));
            }
            validate(base)?;
        }
    }
    Ok(())
}

/// Splits a family tree into its primitive base and the truncations applied
/// to it, innermost first.
fn flatten(family: &Family) -> (Family, Vec<Truncation>) {
    match family {
        Family::CappedAbove { base, cap } => {
            let (b, mut ops) = flatten(base);
            ops.push(Truncation::Cap(*cap));
            (b, ops)
        }
        Family::FlooredPositive { base, level } => {
            let (b, mut ops) = flatten(base);
            ops.push(Truncation::Floor(*level));
            (b, ops)
        }
        other => (other.clone(), Vec::new()),
    }
}

fn resolve(base: &Family, ops: &[Truncation]) -> Result<Law> {
    let atoms = |pairs: Vec<(f64, f64)>| {
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (x, p) in pairs {
            let y = apply_all(ops, x);
            match merged.iter_mut().find(|(z, _)| *z == y) {
                Some(slot) => slot.1 += p,
                None => merged.push((y, p)),
            }
        }
        merged.sort_by(|a, b| a.0.total_cmp(&b.0));
        Law::Atoms(merged)
    };
    let gaussian = |mean: f64, sd: f64| {
        if ops.is_empty() {
            Law::Gaussian { mean, sd }
        } else {
            let pieces = gaussian_pieces(mean, sd, ops);
            let cumulants = piecewise_cumulants(mean, sd, &pieces);
            let scale = pieces
                .iter()
                .map(|pc| match pc.map {
                    PieceMap::Const(c) => c.abs(),
                    PieceMap::Identity => mean.abs() + 12.0 * sd,
                })
                .fold(1.0, f64::max);
            Law::PiecewiseGaussian { mean, sd, pieces, cumulants, scale }
        }
    };
    Ok(match base {
        Family::Gaussian { mean, var } => gaussian(*mean, var.sqrt()),
        Family::Deterministic { value } => atoms(vec![(*value, 1.0)]),
        Family::TwoPoint { up, down, p } => atoms(vec![(*down, 1.0 - p), (*up, *p)]),
        Family::Stable { alpha, scale, mean } => {
            if *alpha == 2.0 {
                gaussian(*mean, (2.0 * scale).sqrt())
            } else if ops.is_empty() {
                Law::Stable { alpha: *alpha, scale: *scale, mean: *mean }
            } else {
                return Err(FptError::Unsupported(
                    "truncation of a stable law with alpha < 2 (no closed-form density)".into(),
                ));
            }
        }
        Family::CappedAbove { .. } | Family::FlooredPositive { .. } => unreachable!("flattened"),
    })
}

/// Cumulants 1..4 of a truncated Gaussian law from its raw moments.
fn piecewise_cumulants(mean: f64, sd: f64, pieces: &[Piece]) -> [f64; 4] {
    let mut raw = [0.0f64; 5];
    for pc in pieces {
        let p = pc.log_prob.exp();
        match pc.map {
            PieceMap::Const(c) => {
                for (k, r) in raw.iter_mut().enumerate() {
                    *r += p * c.powi(k as i32);
                }
            }
            PieceMap::Identity => {
                // E[z^k; a < z <= b] for the standardized variable, by the
                // recurrence M_k = (k-1) M_{k-2} + a^{k-1} pdf(a) - b^{k-1} pdf(b)
                let a = (pc.lo - mean) / sd;
                let b = (pc.hi - mean) / sd;
                let edge = |z: f64, k: i32| if z.is_finite() { z.powi(k) * normal_pdf(z) } else { 0.0 };
                let mut z = [0.0f64; 5];
                z[0] = p;
                z[1] = edge(a, 0) - edge(b, 0);
                for k in 2..5 {
                    z[k] = (k as f64 - 1.0) * z[k - 2] + edge(a, k as i32 - 1) - edge(b, k as i32 - 1);
                }
                // binomial expansion of (mean + sd z)^k
                for (k, r) in raw.iter_mut().enumerate() {
                    *r += z[..=k]
                        .iter()
                        .enumerate()
                        .map(|(j, zj)| binomial(k, j) * mean.powi((k - j) as i32) * sd.powi(j as i32) * zj)
                        .sum::<f64>();
                }
            }
        }
    }
    let m1 = raw[1];
    let c2 = raw[2] - m1 * m1;
    let c3 = raw[3] - 3.0 * m1 * raw[2] + 2.0 * m1.powi(3);
    let mu4 = raw[4] - 4.0 * m1 * raw[3] + 6.0 * m1 * m1 * raw[2] - 3.0 * m1.powi(4);
    [m1, c2, c3, mu4 - 3.0 * c2 * c2]
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Between consecutive breakpoints the composed truncation is either the
/// identity or a constant; classify each interval by probing it.
fn gaussian_pieces(mean: f64, sd: f64, ops: &[Truncation]) -> Vec<Piece> {
    let mut cuts: Vec<f64> = ops.iter().flat_map(|op| op.breakpoints()).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(cuts);
    edges.push(f64::INFINITY);
    let mut pieces: Vec<Piece> = Vec::new();
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (p, q) = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => (lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo)),
            (false, true) => (hi - 2.0, hi - 1.0),
            (true, false) => (lo + 1.0, lo + 2.0),
            (false, false) => (-1.0, 1.0),
        };
        let (fp, fq) = (apply_all(ops, p), apply_all(ops, q));
        let map = if fp == p && fq == q { PieceMap::Identity } else { PieceMap::Const(fp) };
        let log_prob = gaussian_log_partial_mgf(mean, sd, 0.0, lo, hi);
        // merge neighbours with the same constant image
        if let Some(last) = pieces.last_mut() {
            if last.map == map && matches!(map, PieceMap::Const(_)) {
                last.hi = hi;
                last.log_prob = log_sum_exp(&[last.log_prob, log_prob]);
                continue;
            }
        }
        pieces.push(Piece { lo, hi, map, log_prob });
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    #[test]
    fn psi_examples() {
        assert_eq!(InnovationSpec::gaussian(0.0, 1.0).unwrap().psi(2.0), 2.0);
        assert_eq!(InnovationSpec::deterministic(1.0).unwrap().psi(3.0), 3.0);
        assert_eq!(InnovationSpec::stable(2.0, 0.5, 0.0).unwrap().psi(1.0), 0.5);
        let tp = InnovationSpec::two_point(1.0, -1.0, 0.5).unwrap();
        assert_eq!(tp.psi(0.0), 0.0);
        assert_relative_eq!(tp.psi(0.7), 0.7f64.cosh().ln(), max_relative = 1e-14);
        let st = InnovationSpec::stable(0.5, 1.0, 0.2).unwrap();
        assert_relative_eq!(st.psi(4.0), 0.8 - 2.0, max_relative = 1e-14);
    }

    #[test]
    fn invariants_rejected() {
        assert!(InnovationSpec::gaussian(0.0, 0.0).is_err());
        assert!(InnovationSpec::two_point(1.0, 1.0, 0.5).is_err());
        assert!(InnovationSpec::two_point(1.0, -1.0, 1.0).is_err());
        assert!(InnovationSpec::stable(1.0, 1.0, 0.0).is_err());
        assert!(InnovationSpec::stable(2.5, 1.0, 0.0).is_err());
        assert!(InnovationSpec::stable(1.5, -1.0, 0.0).is_err());
    }

    #[test]
    fn deterministic_sampling() {
        let d = InnovationSpec::deterministic(1.0).unwrap();
        assert_eq!(d.sample(&mut stream(1, 0), 3).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let g = InnovationSpec::gaussian(0.0, 1.0).unwrap();
        let a = g.sample(&mut stream(42, 0), 100).unwrap();
        let b = g.sample(&mut stream(42, 0), 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_point_sample_mean() {
        let tp = InnovationSpec::two_point(1.0, -1.0, 0.5).unwrap();
        let n = 1_000_000;
        let m = tp.sample(&mut stream(3, 0), n).unwrap().iter().sum::<f64>() / n as f64;
        assert!(m.abs() < 4e-3, "mean {m}");
    }

    #[test]
    fn small_alpha_stable_refuses_to_sample() {
        let st = InnovationSpec::stable(0.5, 1.0, 0.0).unwrap();
        assert!(matches!(st.draw(&mut stream(0, 0)), Err(FptError::UnsupportedSampler { .. })));
    }

    #[test]
    fn stable_sampler_matches_cumulant() {
        // E exp(u eta) = exp(m u + C u^alpha); e^{2u eta} is integrable so the
        // empirical MGF has a finite standard error.
        let spec = InnovationSpec::stable(1.5, 0.7, 0.1).unwrap();
        let n = 400_000;
        let draws = spec.sample(&mut stream(11, 0), n).unwrap();
        for &u in &[0.3, 0.6] {
            let vals: Vec<f64> = draws.iter().map(|x| (u * x).exp()).collect();
            let (m, se) = mean_and_se(vals.iter().copied(), n);
            let expected = spec.psi(u).exp();
            assert!((m - expected).abs() < 4.0 * se, "u={u}: {m} vs {expected} (se {se})");
        }
        // alpha = 2 is the Gaussian with variance 2C
        let g = InnovationSpec::stable(2.0, 0.5, 0.0).unwrap();
        let draws = g.sample(&mut stream(12, 0), n).unwrap();
        let (_, var) = {
            let m = draws.iter().sum::<f64>() / n as f64;
            (m, draws.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64)
        };
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn cap_examples() {
        let d = InnovationSpec::deterministic(2.0).unwrap().cap_above(1.0).unwrap();
        assert_eq!(d.family(), &Family::deterministic(1.0));
        let tp = InnovationSpec::two_point(1.0, -1.0, 0.5).unwrap();
        assert_eq!(tp.cap_above(1.0).unwrap(), tp);
    }

    #[test]
    fn capped_gaussian_derivative_at_zero_is_truncated_mean() {
        let capped = InnovationSpec::gaussian(0.0, 1.0).unwrap().cap_above(0.0).unwrap();
        let h = 1e-6;
        let slope = capped.psi(h) / h;
        let expected = -1.0 / (2.0 * PI).sqrt();
        assert!((slope - expected).abs() < 1e-5, "{slope} vs {expected}");
        let m = capped.moments().unwrap();
        assert_relative_eq!(m.mean, expected, max_relative = 1e-12);
    }

    #[test]
    fn floor_examples() {
        let tp = InnovationSpec::two_point(2.0, -1.0, 0.5).unwrap().floor_positive(1.0).unwrap();
        assert_eq!(tp.family(), &Family::two_point(1.0, -1.0, 0.5));
        let g = InnovationSpec::gaussian(0.0, 1.0).unwrap().floor_positive(1.0).unwrap();
        let atom = match g.law() {
            Law::PiecewiseGaussian { pieces, .. } => {
                pieces.iter().find(|p| p.map == PieceMap::Const(1.0)).map(|p| p.log_prob.exp()).unwrap()
            }
            _ => unreachable!(),
        };
        assert_relative_eq!(atom, 0.158_655_253_931_457_05, max_relative = 1e-12);
        assert_eq!(g.upper_bound(), Some(1.0));
        let err = InnovationSpec::deterministic(-1.0).unwrap().floor_positive(1.0);
        assert_eq!(err, Err(FptError::InfeasibleTruncation { level: 1.0 }));
    }

    #[test]
    fn floored_psi_is_linear_minus_g() {
        let n = 1.0;
        let fl = InnovationSpec::gaussian(0.0, 1.0).unwrap().floor_positive(n).unwrap();
        let mut prev_ratio = f64::INFINITY;
        for k in -2..=5 {
            let u = 10f64.powi(k);
            let g = u * n - fl.psi(u);
            assert!(g >= -1e-12, "g({u}) = {g}");
            let ratio = g / u;
            assert!(ratio < prev_ratio);
            prev_ratio = ratio;
        }
        assert!(prev_ratio < 1e-4);
    }

    #[test]
    fn diagnostics_exact_for_atoms() {
        let d = InnovationSpec::deterministic(1.0).unwrap();
        let diag = d.diagnostics(&mut stream(0, 0), 0, 0.5).unwrap();
        assert_eq!(diag.log_moment, 2f64.ln());
        assert_eq!(diag.neg_moment_delta, (0.5, 0.0));
        assert_eq!(diag.upper_bound, Some(1.0));
        let tp = InnovationSpec::two_point(1.0, -3.0, 0.5).unwrap();
        let diag = tp.diagnostics(&mut stream(0, 0), 0, 0.5).unwrap();
        assert_relative_eq!(diag.log_moment, 0.5 * 2f64.ln() + 0.5 * 4f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn diagnostics_need_enough_draws() {
        let g = InnovationSpec::gaussian(0.0, 1.0).unwrap();
        assert!(g.diagnostics(&mut stream(0, 0), 100, 0.5).is_err());
        let diag = g.diagnostics(&mut stream(0, 0), 20_000, 0.5).unwrap();
        assert_eq!(diag.upper_bound, None);
        assert!(diag.log_moment > 0.0 && diag.neg_moment_delta.1 > 0.0);
    }

    #[test]
    fn nested_truncations_compose() {
        let base = InnovationSpec::gaussian(0.0, 1.0).unwrap();
        let spec = base.cap_above(2.0).unwrap().floor_positive(1.0).unwrap();
        assert_eq!(spec.upper_bound(), Some(1.0));
        // mass at 1 is P(eta >= 1) whether or not the cap at 2 was applied first
        assert_relative_eq!(spec.tail_mass(0.5).unwrap(), normal_sf(1.0), max_relative = 1e-12);
        let mut a = stream(5, 0);
        let mut b = stream(5, 0);
        for _ in 0..1000 {
            let x = base.draw(&mut a).unwrap();
            let y = spec.draw(&mut b).unwrap();
            assert!(y <= x);
        }
    }
}
