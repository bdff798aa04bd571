//! Improper integrals over `(0, inf)`.
//!
//! The integrand is handed over in logarithmic coordinates: with `u = e^t`
//! the caller supplies `h(t) = f(e^t) e^t`. Panels march outward from
//! `t = 0` in both directions until the integrand has visibly decayed, the
//! remaining tails are extrapolated from the observed log-slope, and the
//! panel set is then refined adaptively with Gauss-Kronrod 7/15.

use serde::Serialize;

use crate::error::{FptError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailDiagnostic {
    Decayed,
    TruncatedAtUmax,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureResult {
    /// `NaN` when the integrand diverged.
    pub value: f64,
    pub abs_err: f64,
    pub converged: bool,
    pub tail_diagnostic: TailDiagnostic,
}

impl QuadratureResult {
    pub(crate) fn exact(value: f64) -> Self {
        Self { value, abs_err: 0.0, converged: true, tail_diagnostic: TailDiagnostic::Decayed }
    }

    pub fn rel_err(&self) -> f64 {
        if self.value == 0.0 {
            if self.abs_err == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.abs_err / self.value.abs()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper panels stop here even if the integrand has not decayed.
    pub u_max: f64,
    pub max_panels: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-9, abs_tol: 1e-12, u_max: 1e5, max_panels: 4000 }
    }
}

impl QuadratureOptions {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }
}

// QUADPACK values, kept at full published precision
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Abscissae of the 15-point Kronrod rule mapped onto `[a, b]`.
pub fn kronrod_nodes(a: f64, b: f64) -> [f64; 15] {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut out = [0.0; 15];
    for j in 0..7 {
        out[2 * j] = c - r * XGK[j];
        out[2 * j + 1] = c + r * XGK[j];
    }
    out[14] = c;
    out
}

/// Kronrod weights matching [`kronrod_nodes`].
pub fn kronrod_weights(a: f64, b: f64) -> [f64; 15] {
    let r = 0.5 * (b - a);
    let mut out = [0.0; 15];
    for j in 0..7 {
        out[2 * j] = r * WGK[j];
        out[2 * j + 1] = r * WGK[j];
    }
    out[14] = r * WGK[7];
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Panel {
    pub a: f64,
    pub b: f64,
    pub value: f64,
    pub err: f64,
}

/// One Gauss-Kronrod 7/15 panel with the QUADPACK error heuristic.
pub(crate) fn gk15<F>(h: &mut F, a: f64, b: f64) -> Result<Panel>
where
    F: FnMut(f64) -> Result<f64>,
{
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = h(c)?;
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_k = kron.abs();
    let mut fv = [(0.0, 0.0); 7];
    for j in 0..7 {
        let dx = r * XGK[j];
        let f1 = h(c - dx)?;
        let f2 = h(c + dx)?;
        fv[j] = (f1, f2);
        kron += WGK[j] * (f1 + f2);
        abs_k += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kron;
    let mut asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((fv[j].0 - mean).abs() + (fv[j].1 - mean).abs());
    }
    let value = kron * r;
    let resabs = abs_k * r.abs();
    let resasc = asc * r.abs();
    let mut err = ((kron - gauss) * r).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    if !value.is_finite() || !err.is_finite() {
        return Err(FptError::Quadrature(format!("non-finite integrand on [{a}, {b}] (log scale)")));
    }
    Ok(Panel { a, b, value, err })
}

/// Adaptive GK15 over a finite interval.
pub fn integrate_finite<F>(mut f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut panels = vec![gk15(&mut f, a, b)?];
    refine(&mut f, &mut panels, 0.0, rel_tol, abs_tol, 2000)?;
    Ok((panels.iter().map(|p| p.value).sum(), panels.iter().map(|p| p.err).sum()))
}

/// Bisects the worst panel until the summed error meets the tolerance.
/// Returns whether it did.
fn refine<F>(h: &mut F, panels: &mut Vec<Panel>, fixed_err: f64, rel_tol: f64, abs_tol: f64, max: usize) -> Result<bool>
where
    F: FnMut(f64) -> Result<f64>,
{
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum::<f64>() + fixed_err;
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(true);
        }
        if panels.len() >= max {
            return Ok(false);
        }
        let (i, worst) =
            panels.iter().enumerate().max_by(|x, y| x.1.err.total_cmp(&y.1.err)).map(|(i, p)| (i, *p)).unwrap();
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b || worst.err <= f64::EPSILON * worst.value.abs() {
            return Ok(false);
        }
        panels[i] = gk15(h, worst.a, mid)?;
        panels.push(gk15(h, mid, worst.b)?);
    }
}

/// Integral of `h(t)` over the real line, where `h(t) = f(e^t) e^t` for the
/// target integrand `f` on `(0, inf)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogScaleIntegral {
    pub result: QuadratureResult,
    /// Final panel partition in `t`, ordered left to right.
    pub panels: Vec<(f64, f64)>,
}

/// Lowest `t` visited; `e^t` is still a normal number here.
const T_FLOOR: f64 = -700.0;

pub fn integrate_log_scale<F>(mut h: F, opts: &QuadratureOptions) -> Result<LogScaleIntegral>
where
    F: FnMut(f64) -> Result<f64>,
{
    let t_max = opts.u_max.ln();
    let small = |total: f64| opts.abs_tol.max(opts.rel_tol * total.abs()) * 1e-2;
    let mut panels: Vec<Panel> = Vec::new();
    let mut tail_err = 0.0;
    let mut tail_value = 0.0;
    let mut diagnostic = TailDiagnostic::Decayed;

    // Right of t = 0. The integrand decays at least exponentially in u
    // once past its peak, so fixed-width panels suffice.
    let width = 0.5;
    let mut t: f64 = 0.0;
    let mut prev = f64::INFINITY;
    loop {
        let b = (t + width).min(t_max);
        let p = gk15(&mut h, t, b)?;
        panels.push(p);
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let h_end = h(b)?.abs();
        let decreasing = p.value.abs() <= prev;
        prev = p.value.abs();
        if decreasing && h_end <= small(total) && p.value.abs() <= small(total) * (b - t).max(1.0) {
            // Super-exponential decay: one more panel width bounds the rest.
            tail_err += h_end * width;
            break;
        }
        if b >= t_max {
            if h_end > 0.0 {
                // Power-law decay in u is exponential in t: extrapolate.
                match extrapolate(&mut h, b, -1.0)? {
                    Some((rest, spread)) => {
                        tail_value += rest;
                        tail_err += spread;
                        diagnostic = TailDiagnostic::TruncatedAtUmax;
                    }
                    None => return Ok(diverged(panels)),
                }
            }
            break;
        }
        t = b;
    }

    // Left of t = 0: h behaves like A e^{kappa t} with kappa > 0, so
    // widths grow geometrically and the rest is extrapolated as h/kappa.
    let mut t: f64 = 0.0;
    let mut width: f64 = 1.0;
    let mut steps = 0usize;
    loop {
        let a = (t - width).max(T_FLOOR);
        panels.push(gk15(&mut h, a, t)?);
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let h_a = h(a)?;
        if h_a == 0.0 {
            break;
        }
        match extrapolate(&mut h, a, 1.0)? {
            Some((rest, spread)) if rest.abs() <= small(total) || a <= T_FLOOR => {
                tail_value += rest;
                tail_err += spread;
                break;
            }
            None if a <= T_FLOOR => return Ok(diverged(panels)),
            _ => {}
        }
        t = a;
        steps += 1;
        if steps.is_multiple_of(2) {
            width = (width * 2.0).min(64.0);
        }
    }

    let converged = refine(&mut h, &mut panels, tail_err, opts.rel_tol, opts.abs_tol, opts.max_panels)?;
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut sum = crate::special::CompensatedSum::new();
    for p in &panels {
        sum.add(p.value);
    }
    sum.add(tail_value);
    let abs_err = panels.iter().map(|p| p.err).sum::<f64>() + tail_err;
    Ok(LogScaleIntegral {
        result: QuadratureResult { value: sum.value(), abs_err, converged, tail_diagnostic: diagnostic },
        panels: panels.iter().map(|p| (p.a, p.b)).collect(),
    })
}

/// Tail beyond `edge` of an integrand behaving like `A e^{-kappa |t|}`,
/// with the slope read off one and two units inward (`inward` = +-1).
/// Returns `(value, error)` or `None` when the integrand is not decaying.
fn extrapolate<F>(h: &mut F, edge: f64, inward: f64) -> Result<Option<(f64, f64)>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let h0 = h(edge)?;
    let h1 = h(edge + inward)?;
    let h2 = h(edge + 2.0 * inward)?;
    if h0 == 0.0 {
        return Ok(Some((0.0, 0.0)));
    }
    let kappa = (h1.abs() / h0.abs()).ln();
    if h1.signum() != h0.signum() || !(kappa > 0.0) {
        return Ok(None);
    }
    let rest = h0 / kappa;
    let kappa2 = (h2.abs() / h1.abs()).ln();
    let spread = if kappa2 > 0.0 && h2.signum() == h1.signum() { (rest - h0 / kappa2).abs() } else { rest.abs() };
    Ok(Some((rest, 2.0 * spread)))
}

fn diverged(panels: Vec<Panel>) -> LogScaleIntegral {
    LogScaleIntegral {
        result: QuadratureResult {
            value: f64::NAN,
            abs_err: f64::INFINITY,
            converged: false,
            tail_diagnostic: TailDiagnostic::Diverged,
        },
        panels: panels.iter().map(|p| (p.a, p.b)).collect(),
    }
}
