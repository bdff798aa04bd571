//! Scalar special functions shared by the cumulant and quadrature code.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::{erf, erfc};

/// Scaled complementary error function `exp(x^2) * erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x < 0.0 {
        // 2 exp(x^2) - erfcx(-x); overflows to +inf for x below about -26.6
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 5.0 {
        return (x * x).exp() * erfc(x);
    }
    // Continued fraction 1/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))),
    // evaluated backward.
    let mut t = x;
    for n in (1..=60).rev() {
        t = x + 0.5 * n as f64 / t;
    }
    1.0 / (PI.sqrt() * t)
}

/// Natural log of the standard normal CDF, accurate deep into the left tail.
pub fn log_ndtr(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if z > 5.0 {
        return (-0.5 * erfc(z * FRAC_1_SQRT_2)).ln_1p();
    }
    if z > -5.0 {
        return (0.5 * erfc(-z * FRAC_1_SQRT_2)).ln();
    }
    -0.5 * z * z + (0.5 * erfcx(-z * FRAC_1_SQRT_2)).ln()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `ln E[exp(u*eta); lo < eta <= hi]` for `eta ~ N(mean, sd^2)`.
///
/// The exponential tilt shifts the mean to `mean + sd^2 u`; the partial
/// expectation is `exp(mean u + sd^2 u^2 / 2) (Phi(b) - Phi(a))`. When the
/// tilted mass sits outside the interval the large quadratic terms cancel
/// analytically against the Gaussian tail, so the result is evaluated via
/// `erfcx` around the nearer endpoint.
pub fn gaussian_log_partial_mgf(mean: f64, sd: f64, u: f64, lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return f64::NEG_INFINITY;
    }
    let tilted = mean + sd * sd * u;
    let a = (lo - tilted) / sd;
    let b = (hi - tilted) / sd;
    if b <= 0.0 {
        let beta = -b * FRAC_1_SQRT_2;
        let far =
            if a == f64::NEG_INFINITY { 0.0 } else { erfcx(-a * FRAC_1_SQRT_2) * (-0.5 * (a - b) * (a + b)).exp() };
        let bracket = 0.5 * (erfcx(beta) - far);
        if bracket <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let d = hi - mean;
        u * hi - d * d / (2.0 * sd * sd) + bracket.ln()
    } else if a >= 0.0 {
        let alpha = a * FRAC_1_SQRT_2;
        let far = if b == f64::INFINITY { 0.0 } else { erfcx(b * FRAC_1_SQRT_2) * (-0.5 * (b - a) * (b + a)).exp() };
        let bracket = 0.5 * (erfcx(alpha) - far);
        if bracket <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let d = lo - mean;
        u * lo - d * d / (2.0 * sd * sd) + bracket.ln()
    } else {
        let mass = 0.5 * (erf(b * FRAC_1_SQRT_2) + erf(-a * FRAC_1_SQRT_2));
        mean * u + 0.5 * sd * sd * u * u + mass.ln()
    }
}

/// `P(lo < eta <= hi)` for `eta ~ N(mean, sd^2)`.
pub fn gaussian_interval_prob(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    gaussian_log_partial_mgf(mean, sd, 0.0, lo, hi).exp()
}

/// `ln sum exp(x_i)`, ignoring `-inf` entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn erfcx_branches_agree_at_the_switch() {
        let direct = 25.0f64.exp() * erfc(5.0);
        assert_relative_eq!(erfcx(5.0), direct, max_relative = 1e-12);
        assert_relative_eq!(erfcx(0.0), 1.0, max_relative = 1e-15);
        // asymptotic 1/(x sqrt(pi)) (1 - 1/(2x^2))
        let x = 1e4;
        assert_relative_eq!(erfcx(x), (1.0 - 0.5 / (x * x)) / (x * PI.sqrt()), max_relative = 1e-12);
    }

    #[test]
    fn erfcx_continued_fraction_matches_direct_product() {
        for &x in &[5.5f64, 8.0, 12.0, 20.0, 25.0] {
            let direct = (x * x).exp() * erfc(x);
            assert_relative_eq!(erfcx(x), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn log_ndtr_tail() {
        assert_relative_eq!(log_ndtr(0.0), 0.5f64.ln(), max_relative = 1e-15);
        // Phi(-10) = 7.619853024160527e-24
        assert_relative_eq!(log_ndtr(-10.0), 7.619853024160527e-24f64.ln(), max_relative = 1e-12);
        assert!(log_ndtr(40.0) == 0.0 || log_ndtr(40.0).abs() < 1e-300);
        assert_relative_eq!(log_ndtr(-40.0), -804.608_442_013_753_8, max_relative = 1e-14);
    }

    #[test]
    fn partial_mgf_full_line_is_gaussian_mgf() {
        for &u in &[0.0, 0.5, 3.0, 40.0] {
            let v = gaussian_log_partial_mgf(0.3, 1.7, u, f64::NEG_INFINITY, f64::INFINITY);
            assert_relative_eq!(v, 0.3 * u + 0.5 * 1.7 * 1.7 * u * u, max_relative = 1e-14);
        }
    }

    #[test]
    fn partial_mgf_pieces_add_up() {
        for &u in &[0.0, 0.2, 2.0, 9.0, 60.0] {
            let whole = gaussian_log_partial_mgf(0.0, 1.0, u, f64::NEG_INFINITY, f64::INFINITY);
            let parts = [
                gaussian_log_partial_mgf(0.0, 1.0, u, f64::NEG_INFINITY, -0.5),
                gaussian_log_partial_mgf(0.0, 1.0, u, -0.5, 1.0),
                gaussian_log_partial_mgf(0.0, 1.0, u, 1.0, f64::INFINITY),
            ];
            assert_relative_eq!(log_sum_exp(&parts), whole, max_relative = 1e-12, epsilon = 1e-13);
        }
    }

    #[test]
    fn partial_mgf_half_line_closed_form() {
        // E[e^{u eta}; eta <= 0] = e^{u^2/2} Phi(-u)
        for &u in &[0.1f64, 1.0, 4.0] {
            let expected = (0.5 * u * u).exp() * normal_cdf(-u);
            let got = gaussian_log_partial_mgf(0.0, 1.0, u, f64::NEG_INFINITY, 0.0).exp();
            assert_relative_eq!(got, expected, max_relative = 1e-12);
        }
        // far tail stays finite where the naive product would overflow
        let u = 1e4;
        let got = gaussian_log_partial_mgf(0.0, 1.0, u, f64::NEG_INFINITY, 0.0);
        assert!(got.is_finite());
        assert_relative_eq!(got, (0.5 * erfcx(u * FRAC_1_SQRT_2)).ln(), max_relative = 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s: CompensatedSum = [1e16, 1.0, -1e16, 1.0].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }
}
