//! Monte Carlo oracle: passage times, overshoots, stationary draws and
//! empirical martingale drifts.
//!
//! Path `i` always draws from stream `i` of the run seed, and every
//! reduction folds over paths in index order, so results do not depend on
//! the number of worker threads.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FptError, Result};
use crate::innovations::InnovationSpec;
use crate::martingale::{TransformKind, Transforms};
use crate::passage::PassageProblem;
use crate::rng;
use crate::special::CompensatedSum;

/// Default step cap for a single path.
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

impl Estimate {
    /// Sample mean and its standard error, two-pass.
    pub fn from_sample(xs: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let (n, sum) = xs.clone().fold((0usize, CompensatedSum::new()), |(n, mut s), x| {
            s.add(x);
            (n + 1, s)
        });
        if n == 0 {
            return None;
        }
        let mean = sum.value() / n as f64;
        let mut ss = CompensatedSum::new();
        for x in xs {
            ss.add((x - mean) * (x - mean));
        }
        let var = if n > 1 { ss.value() / (n - 1) as f64 } else { 0.0 };
        Some(Self { value: mean, std_err: (var / n as f64).sqrt() })
    }
}

/// `E e^{u X_tau}` at one node, stored as `mean * e^{log_scale}` so that
/// large `u` does not overflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MgfNode {
    pub u: f64,
    pub mean: f64,
    pub std_err: f64,
    pub log_scale: f64,
}

impl MgfNode {
    pub fn unscaled(u: f64, mean: f64, std_err: f64) -> Self {
        Self { u, mean, std_err, log_scale: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub n_paths: u64,
    pub n_crossed: u64,
    pub n_censored: u64,
    pub max_steps: u64,
    /// Mean of `tau` over crossed paths.
    pub e_tau_hat: Option<Estimate>,
    /// `(n, P(tau > n))` for `n = 0..=max observed tau`, plus a final row at
    /// `max_steps` when paths were censored.
    pub survival_curve: Vec<(u64, f64)>,
    pub overshoot_mean: Option<Estimate>,
    pub min_overshoot: Option<f64>,
    pub mgf_nodes: Vec<MgfNode>,
    pub seed: u64,
}

impl SimulationSummary {
    pub fn censored_fraction(&self) -> f64 {
        self.n_censored as f64 / self.n_paths as f64
    }
}

/// `tau = None` marks a censored path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub tau: Option<u64>,
    pub x_tau: f64,
}

/// Raw per-path outcomes of a passage simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageSample {
    pub seed: u64,
    pub max_steps: u64,
    pub level: f64,
    pub outcomes: Vec<PathOutcome>,
}

/// Runs `n_paths` independent paths of the chain from `x` until it exceeds `a`.
pub fn simulate_paths(p: &PassageProblem, n_paths: u64, max_steps: u64, seed: u64) -> Result<PassageSample> {
    if n_paths == 0 || max_steps == 0 {
        return Err(FptError::Precondition("n_paths and max_steps must be at least 1".into()));
    }
    p.spec.draw(&mut rng::stream(seed, 0))?;
    let outcomes = (0..n_paths)
        .into_par_iter()
        .map(|i| run_path(p, max_steps, &mut rng::stream(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PassageSample { seed, max_steps, level: p.a, outcomes })
}

fn run_path(p: &PassageProblem, max_steps: u64, rng: &mut rng::StreamRng) -> Result<PathOutcome> {
    let mut x = p.x;
    if x > p.a {
        return Ok(PathOutcome { tau: Some(0), x_tau: x });
    }
    for n in 1..=max_steps {
        x = p.lambda * x + p.spec.draw(rng)?;
        if x > p.a {
            return Ok(PathOutcome { tau: Some(n), x_tau: x });
        }
    }
    Ok(PathOutcome { tau: None, x_tau: f64::NAN })
}

impl PassageSample {
    pub fn crossed(&self) -> impl Iterator<Item = (u64, f64)> + Clone + '_ {
        self.outcomes.iter().filter_map(|o| o.tau.map(|t| (t, o.x_tau)))
    }

    pub fn summarize(&self, mgf_u_nodes: &[f64]) -> SimulationSummary {
        let n_paths = self.outcomes.len() as u64;
        let n_crossed = self.crossed().count() as u64;
        let n_censored = n_paths - n_crossed;
        let max_tau = self.crossed().map(|(t, _)| t).max().unwrap_or(0);
        let mut counts = vec![0u64; max_tau as usize + 1];
        for (t, _) in self.crossed() {
            counts[t as usize] += 1;
        }
        let mut survival_curve = Vec::with_capacity(counts.len() + 1);
        let mut remaining = n_paths;
        for (n, c) in counts.iter().enumerate() {
            remaining -= c;
            survival_curve.push((n as u64, remaining as f64 / n_paths as f64));
        }
        if n_censored > 0 && self.max_steps > max_tau {
            survival_curve.push((self.max_steps, n_censored as f64 / n_paths as f64));
        }
        let x_tau: Vec<f64> = self.crossed().map(|(_, x)| x).collect();
        let x_max = x_tau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mgf_nodes = mgf_u_nodes
            .par_iter()
            .map(|&u| {
                let log_scale = if u * x_max > 0.0 { u * x_max } else { 0.0 };
                let e = Estimate::from_sample(x_tau.iter().map(|&x| (u * x - log_scale).exp()))
                    .unwrap_or(Estimate { value: f64::NAN, std_err: f64::NAN });
                MgfNode { u, mean: e.value, std_err: e.std_err, log_scale }
            })
            .collect();
        SimulationSummary {
            n_paths,
            n_crossed,
            n_censored,
            max_steps: self.max_steps,
            e_tau_hat: Estimate::from_sample(self.crossed().map(|(t, _)| t as f64)),
            survival_curve,
            overshoot_mean: Estimate::from_sample(x_tau.iter().map(|x| x - self.level)),
            min_overshoot: x_tau.iter().map(|x| x - self.level).min_by(f64::total_cmp),
            mgf_nodes,
            seed: self.seed,
        }
    }

    /// Writes `path,tau,overshoot` rows; censored paths have empty fields.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "path,tau,overshoot")?;
        for (i, o) in self.outcomes.iter().enumerate() {
            match o.tau {
                Some(t) => writeln!(w, "{i},{t},{:.16e}", o.x_tau - self.level)?,
                None => writeln!(w, "{i},,")?,
            }
        }
        Ok(())
    }
}

pub fn simulate_passage(
    p: &PassageProblem,
    n_paths: u64,
    max_steps: u64,
    seed: u64,
    mgf_u_nodes: &[f64],
) -> Result<SimulationSummary> {
    Ok(simulate_paths(p, n_paths, max_steps, seed)?.summarize(mgf_u_nodes))
}

/// Horizon `K` with `lambda^K scale / (1 - lambda) < 1e-8`, `scale` the innovation
/// standard deviation (or `|c|` for a point mass, the stable scale
/// `C^{1/alpha}` without a variance).
pub fn default_horizon(spec: &InnovationSpec, lambda: f64) -> usize {
    let scale = match spec.moments() {
        Some(m) => match m.variance {
            Some(v) if v > 0.0 => v.sqrt(),
            Some(_) => m.mean.abs(),
            None => stable_scale(spec),
        },
        None => stable_scale(spec),
    };
    let scale = if scale > 0.0 { scale } else { 1.0 };
    ((1e-8 * (1.0 - lambda) / scale).ln() / lambda.ln()).ceil().max(1.0) as usize
}

fn stable_scale(spec: &InnovationSpec) -> f64 {
    match spec.family() {
        crate::innovations::Family::Stable { alpha, scale, .. } => scale.powf(1.0 / alpha),
        _ => 1.0,
    }
}

/// Draws of `sum_{k < K} lambda^k eta_{k+1}`, the stationary law truncated
/// at `K = k_horizon` terms.
pub fn simulate_stationary(
    spec: &InnovationSpec,
    lambda: f64,
    n_draws: u64,
    k_horizon: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    spec.draw(&mut rng::stream(seed, 0))?;
    (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i);
            let mut weight = 1.0;
            let mut acc = CompensatedSum::new();
            for _ in 0..k_horizon {
                acc.add(weight * spec.draw(&mut r)?);
                weight *= lambda;
            }
            Ok(acc.value())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    KsResult { statistic: d, p_value: kolmogorov_q((ne + 0.12 + 0.11 / ne) * d) }
}

/// `Q(t) = 2 sum_{k>=1} (-1)^{k-1} e^{-2 k^2 t^2}`
fn kolmogorov_q(t: f64) -> f64 {
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * t * t).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftRow {
    pub n: usize,
    /// `E M_n - M_0`
    pub drift: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleDrift {
    pub kind: TransformKind,
    pub v: f64,
    pub y0: f64,
    pub rows: Vec<DriftRow>,
    pub max_abs_drift: f64,
    /// Largest `|drift| / std_err` (zero-drift rows with zero error count as 0).
    pub max_abs_z: f64,
    /// Paths dropped because a state left the admissible domain.
    pub escaped: u64,
    /// Largest interpolation error seen on check points (0 for direct evaluation).
    pub interpolation_error: f64,
}

/// Chebyshev points used when the transform is tabulated.
const TABLE_NODES: usize = 128;
/// Above this many distinct states the transform is tabulated.
const DIRECT_EVAL_LIMIT: usize = 256;

/// Simulates `M_n = lambda^{vn} f(X_n)` (or `H(X_n) - n`) from `X_0 = y0`
/// and reports the estimated drift `E M_n - M_0` for `n = 1..=n_steps`.
pub fn empirical_martingale_check(
    tr: &Transforms,
    kind: TransformKind,
    v: f64,
    y0: f64,
    n_paths: u64,
    n_steps: usize,
    seed: u64,
) -> Result<MartingaleDrift> {
    let lc = tr.cumulant();
    let spec = lc.spec();
    let lambda = lc.lambda();
    let sup_domain = spec.upper_bound().map(|h| h / (1.0 - lambda)).unwrap_or(f64::INFINITY);
    if !(y0 < sup_domain) {
        return Err(FptError::Precondition(format!("start {y0} is outside the transform domain")));
    }
    spec.draw(&mut rng::stream(seed, 0))?;
    let paths: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i);
            let mut x = y0;
            let mut states = Vec::with_capacity(n_steps);
            for _ in 0..n_steps {
                x = lambda * x + spec.draw(&mut r)?;
                states.push(x);
            }
            Ok(states)
        })
        .collect::<Result<_>>()?;
    let (kept, escaped): (Vec<&Vec<f64>>, Vec<&Vec<f64>>) =
        paths.iter().partition(|s| s.iter().all(|&x| x < sup_domain));
    let f = |y: f64| -> Result<f64> {
        let q = tr.eval(kind, y, v)?;
        Ok(q.value)
    };
    let (table, interpolation_error) = StateTable::build(kept.iter().flat_map(|s| s.iter().copied()), &f)?;
    let m0 = f(y0)?;
    let mut rows = Vec::with_capacity(n_steps);
    for n in 1..=n_steps {
        let values: Vec<f64> = kept
            .iter()
            .map(|s| {
                let fx = table.eval(s[n - 1]);
                match kind {
                    TransformKind::H => fx - n as f64,
                    _ => lambda.powf(v * n as f64) * fx,
                }
            })
            .collect();
        let e = Estimate::from_sample(values.iter().copied())
            .ok_or_else(|| FptError::Precondition("every path left the domain".into()))?;
        rows.push(DriftRow { n, drift: e.value - m0, std_err: e.std_err });
    }
    let max_abs_drift = rows.iter().map(|r| r.drift.abs()).fold(0.0, f64::max);
    let max_abs_z =
        rows.iter().map(|r| if r.drift == 0.0 { 0.0 } else { r.drift.abs() / r.std_err }).fold(0.0, f64::max);
    Ok(MartingaleDrift {
        kind,
        v,
        y0,
        rows,
        max_abs_drift,
        max_abs_z,
        escaped: escaped.len() as u64,
        interpolation_error,
    })
}

/// Transform values on the visited states: exact lookups when there are
/// few distinct states, barycentric Chebyshev interpolation otherwise.
enum StateTable {
    Exact(HashMap<u64, f64>),
    Chebyshev { nodes: Vec<f64>, values: Vec<f64> },
}

impl StateTable {
    fn build<I, F>(states: I, f: &F) -> Result<(Self, f64)>
    where
        I: Iterator<Item = f64>,
        F: Fn(f64) -> Result<f64> + Sync,
    {
        let mut distinct: HashMap<u64, f64> = HashMap::new();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in states {
            lo = lo.min(x);
            hi = hi.max(x);
            if distinct.len() <= DIRECT_EVAL_LIMIT {
                distinct.entry(x.to_bits()).or_insert(x);
            }
        }
        if distinct.len() <= DIRECT_EVAL_LIMIT {
            let mut exact = HashMap::with_capacity(distinct.len());
            for (bits, x) in distinct {
                exact.insert(bits, f(x)?);
            }
            return Ok((StateTable::Exact(exact), 0.0));
        }
        let nodes: Vec<f64> = (0..=TABLE_NODES)
            .map(|j| {
                let c = (std::f64::consts::PI * j as f64 / TABLE_NODES as f64).cos();
                0.5 * (lo + hi) + 0.5 * (hi - lo) * c
            })
            .collect();
        let values = nodes.par_iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
        let table = StateTable::Chebyshev { nodes, values };
        let mut worst = 0.0f64;
        for k in 0..8 {
            let x = lo + (hi - lo) * (k as f64 + 0.37) / 8.0;
            let exact = f(x)?;
            worst = worst.max((table.eval(x) - exact).abs() / (exact.abs() + 1.0));
        }
        Ok((table, worst))
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            StateTable::Exact(map) => map[&x.to_bits()],
            StateTable::Chebyshev { nodes, values } => {
                let n = nodes.len() - 1;
                let (mut num, mut den) = (0.0, 0.0);
                for j in 0..=n {
                    let d = x - nodes[j];
                    if d == 0.0 {
                        return values[j];
                    }
                    let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
                    if j == 0 || j == n {
                        w *= 0.5;
                    }
                    num += w / d * values[j];
                    den += w / d;
                }
                num / den
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cumulant::LimitCumulant;

    fn problem(spec: InnovationSpec, lambda: f64, x: f64, a: f64) -> PassageProblem {
        PassageProblem::new(spec, lambda, x, a).unwrap()
    }

    #[test]
    fn deterministic_passage_is_exact() {
        let p = problem(InnovationSpec::deterministic(1.0).unwrap(), 0.5, 0.0, 1.5);
        let s = simulate_passage(&p, 100, 1000, 1, &[1.0]).unwrap();
        assert_eq!(s.n_crossed, 100);
        assert_eq!(s.e_tau_hat.unwrap().value, 3.0);
        assert_eq!(s.e_tau_hat.unwrap().std_err, 0.0);
        assert_eq!(s.survival_curve, vec![(0, 1.0), (1, 1.0), (2, 1.0), (3, 0.0)]);
        let m = s.mgf_nodes[0];
        assert!((m.mean * m.log_scale.exp() - 1.75f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn bounded_case_is_fully_censored() {
        let p = problem(InnovationSpec::deterministic(1.0).unwrap(), 0.5, 0.0, 3.0);
        let s = simulate_passage(&p, 10, 10_000, 1, &[]).unwrap();
        assert_eq!(s.n_crossed, 0);
        assert_eq!(s.censored_fraction(), 1.0);
        assert_eq!(s.e_tau_hat, None);
        assert_eq!(s.survival_curve.last(), Some(&(10_000, 1.0)));
    }

    #[test]
    fn first_step_symmetry() {
        let p = problem(InnovationSpec::gaussian(0.0, 1.0).unwrap(), 0.5, 0.0, 0.0);
        let n = 200_000;
        let s = simulate_passage(&p, n, 1000, 11, &[]).unwrap();
        let p1 = 1.0 - s.survival_curve[1].1;
        assert!((p1 - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
        assert!(s.min_overshoot.unwrap() >= 0.0);
    }

    #[test]
    fn survival_curve_is_nonincreasing_and_censoring_consistent() {
        let p = problem(InnovationSpec::two_point(1.0, -1.0, 0.2).unwrap(), 0.5, 0.0, 1.0);
        let s = simulate_passage(&p, 5000, 8, 3, &[]).unwrap();
        assert!(s.survival_curve.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!(s.n_censored > 0);
        assert_eq!(s.survival_curve.last().unwrap().1, s.censored_fraction());
    }

    #[test]
    fn stationary_deterministic() {
        let spec = InnovationSpec::deterministic(1.0).unwrap();
        let k = default_horizon(&spec, 0.5);
        let th = simulate_stationary(&spec, 0.5, 10, k, 0).unwrap();
        assert!(th.iter().all(|t| (t - 2.0).abs() < 1e-8));
    }

    #[test]
    fn ks_detects_shift_and_accepts_same_law() {
        let spec = InnovationSpec::gaussian(0.0, 1.0).unwrap();
        let a = spec.sample(&mut rng::stream(1, 0), 5000).unwrap();
        let b = spec.sample(&mut rng::stream(2, 0), 5000).unwrap();
        assert!(ks_two_sample(&a, &b).p_value > 0.01);
        let shifted: Vec<f64> = b.iter().map(|x| x + 0.2).collect();
        assert!(ks_two_sample(&a, &shifted).p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_q_reference_values() {
        // scipy.special.kolmogorov
        assert!((kolmogorov_q(1.0) - 0.26999967167735456).abs() < 1e-12);
        assert!((kolmogorov_q(1.36) - 0.049485876755377876).abs() < 1e-12);
    }

    #[test]
    fn deterministic_h_has_no_drift() {
        let tr = Transforms::new(LimitCumulant::new(InnovationSpec::deterministic(1.0).unwrap(), 0.5).unwrap());
        let d = empirical_martingale_check(&tr, TransformKind::H, 0.0, 0.0, 4, 5, 0).unwrap();
        assert_eq!(d.escaped, 0);
        assert!(d.max_abs_drift < 1e-8, "{d:?}");
    }

    #[test]
    fn bounded_states_have_no_drift() {
        // Gaussian transforms grow like e^{3y^2/8}, which gives M_n infinite
        // variance; bounded innovations keep the states, and M_n, bounded.
        let spec = InnovationSpec::two_point(1.0, -1.0, 0.5).unwrap();
        let tr = Transforms::new(LimitCumulant::new(spec, 0.5).unwrap());
        for (kind, v) in [(TransformKind::H, 0.0), (TransformKind::N, 1.0), (TransformKind::W, -0.4)] {
            let d = empirical_martingale_check(&tr, kind, v, 0.0, 20_000, 5, 5).unwrap();
            assert!(d.max_abs_z < 3.5, "{d:?}");
            assert_eq!(d.interpolation_error, 0.0);
        }
        let capped = InnovationSpec::gaussian(0.0, 1.0).unwrap().cap_above(1.0).unwrap();
        let tr = Transforms::new(LimitCumulant::new(capped, 0.5).unwrap());
        let d = empirical_martingale_check(&tr, TransformKind::H, 0.0, 0.0, 50_000, 5, 7).unwrap();
        assert!(d.max_abs_z < 3.5, "{d:?}");
        assert!(d.interpolation_error < 1e-4, "{d:?}");
    }
}
