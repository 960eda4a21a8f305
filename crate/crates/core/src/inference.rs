//! Online inference for the median: directional confidence intervals from the
//! plug-in CLT variance x₀ᵀS̄⁻¹Σ̄S̄⁻¹x₀ and the Wald-type chi-squared test
//! Z_n = n·(m̃ − m₀)ᵀ H̄* Σ̄⁻¹ H̄* (m̃ − m₀).
//!
//! Quantile functions are implemented locally: the standard-normal inverse
//! CDF uses a rational approximation refined by one Halley step against an
//! erfc-based CDF; the chi-squared inverse uses safeguarded Newton on the
//! regularized incomplete gamma (series + Lentz continued fraction).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::quad_form;

/// Directional confidence interval x₀ᵀm ∈ center ± half_width.
#[derive(Debug, Clone)]
pub struct ConfidenceInterval {
    pub direction: DVector<f64>,
    pub center: f64,
    pub half_width: f64,
    pub level: f64,
    pub n: usize,
}

impl ConfidenceInterval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower() && value <= self.upper()
    }
}

/// Outcome of the chi-squared test of `m = m_test`.
#[derive(Debug, Clone)]
pub struct TestResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub reject: bool,
    pub level: f64,
}

/// Confidence interval for x₀ᵀm at the given level.
///
/// `s_bar_inv` is the inverse of the *unregularized* curvature average S̄_n
/// and `sigma_bar` the covariance average Σ̄_n, both driven at the same
/// estimator as `m_tilde`.
pub fn confidence_interval(
    m_tilde: &DVector<f64>,
    s_bar_inv: &DMatrix<f64>,
    sigma_bar: &DMatrix<f64>,
    x0: &DVector<f64>,
    level: f64,
    n: usize,
) -> Result<ConfidenceInterval> {
    let p = m_tilde.len();
    if x0.len() != p || s_bar_inv.nrows() != p || sigma_bar.nrows() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: x0.len(),
        });
    }
    if n == 0 {
        return Err(Error::Config("confidence interval requires n >= 1".into()));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Domain("confidence level must lie in (0, 1)"));
    }
    if x0.norm() == 0.0 {
        return Err(Error::InvalidDirection);
    }
    let v = s_bar_inv * x0;
    let variance_form = quad_form(&v, sigma_bar)?;
    if !(variance_form > 0.0) {
        return Err(Error::NumericalDegeneracy(
            "variance quadratic form is not positive",
        ));
    }
    let z = normal_quantile((1.0 + level) / 2.0)?;
    Ok(ConfidenceInterval {
        direction: x0.clone(),
        center: x0.dot(m_tilde),
        half_width: z * variance_form.sqrt() / (n as f64).sqrt(),
        level,
        n,
    })
}

/// Chi-squared test of H₀: m = m_test at significance `alpha`.
pub fn chi_square_test(
    m_tilde: &DVector<f64>,
    h_star: &DMatrix<f64>,
    sigma_bar_inv: &DMatrix<f64>,
    m_test: &DVector<f64>,
    n: usize,
    alpha: f64,
) -> Result<TestResult> {
    let p = m_tilde.len();
    if m_test.len() != p || h_star.nrows() != p || sigma_bar_inv.nrows() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: m_test.len(),
        });
    }
    if n == 0 {
        return Err(Error::Config("test requires n >= 1".into()));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Domain("significance level must lie in (0, 1)"));
    }
    let diff = m_tilde - m_test;
    let v = h_star * diff;
    let statistic = n as f64 * quad_form(&v, sigma_bar_inv)?;
    let threshold = chi_square_quantile(1.0 - alpha, p)?;
    Ok(TestResult {
        statistic,
        dof: p,
        p_value: 1.0 - chi_square_cdf(statistic, p),
        reject: statistic > threshold,
        level: alpha,
    })
}

// ---------------------------------------------------------------------------
// special functions
// ---------------------------------------------------------------------------

/// ln Γ(x) for x > 0 (Lanczos, g = 7, 9 terms; ~15 significant digits).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64 - 1.0);
    }
    let t = x + 6.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x - 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x) by power series (x < a + 1).
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut n = 1.0;
    loop {
        term *= x / (a + n);
        sum += term;
        if term.abs() < sum.abs() * 1e-16 || n > 500.0 {
            break;
        }
        n += 1.0;
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by Lentz continued fraction
/// (x >= a + 1).
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma P(a, x) for a > 0, x >= 0.
fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_continued_fraction(a, x)
    }
}

/// Complementary error function via erfc(x) = Q(1/2, x²) for x >= 0.
fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x == 0.0 {
        1.0
    } else {
        let x2 = x * x;
        if x2 < 1.5 {
            1.0 - gamma_p_series(0.5, x2)
        } else {
            gamma_q_continued_fraction(0.5, x2)
        }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal inverse CDF, accurate to well below 1e-8.
///
/// Rational initial approximation (central/tail split) followed by one Halley
/// refinement against [`normal_cdf`].
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(0.0 < q && q < 1.0) {
        return Err(Error::Domain("quantile argument must lie in (0, 1)"));
    }
    if q == 0.5 {
        return Ok(0.0);
    }

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const Q_LOW: f64 = 0.02425;

    let mut x = if q < Q_LOW {
        let t = (-2.0 * q.ln()).sqrt();
        (((((C[0] * t + C[1]) * t + C[2]) * t + C[3]) * t + C[4]) * t + C[5])
            / ((((D[0] * t + D[1]) * t + D[2]) * t + D[3]) * t + 1.0)
    } else if q <= 1.0 - Q_LOW {
        let t = q - 0.5;
        let r = t * t;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * t
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let t = (-2.0 * (1.0 - q).ln()).sqrt();
        -(((((C[0] * t + C[1]) * t + C[2]) * t + C[3]) * t + C[4]) * t + C[5])
            / ((((D[0] * t + D[1]) * t + D[2]) * t + D[3]) * t + 1.0)
    };

    // Halley refinement
    let err = normal_cdf(x) - q;
    let u = err * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x -= u / (1.0 + x * u / 2.0);
    Ok(x)
}

/// Chi-squared CDF with `dof` degrees of freedom.
pub fn chi_square_cdf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_p(dof as f64 / 2.0, x / 2.0)
}

/// Chi-squared inverse CDF, accurate to well below 1e-8.
///
/// Wilson-Hilferty initial guess, then safeguarded Newton on the CDF with the
/// density as derivative and bisection fallback.
pub fn chi_square_quantile(q: f64, dof: usize) -> Result<f64> {
    if !(0.0 < q && q < 1.0) {
        return Err(Error::Domain("quantile argument must lie in (0, 1)"));
    }
    if dof == 0 {
        return Err(Error::Domain("degrees of freedom must be >= 1"));
    }
    let k = dof as f64;
    let z = normal_quantile(q)?;
    let wh = k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3);
    let mut x = if wh.is_finite() && wh > 0.0 { wh } else { k * q };

    // bracket
    let mut lo = 0.0;
    let mut hi = x.max(k) * 2.0 + 10.0;
    while chi_square_cdf(hi, dof) < q {
        hi *= 2.0;
    }
    let ln_norm = -(k / 2.0) * 2f64.ln() - ln_gamma(k / 2.0);
    for _ in 0..200 {
        let f = chi_square_cdf(x, dof) - q;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if f.abs() < 1e-15 {
            break;
        }
        let log_pdf = ln_norm + (k / 2.0 - 1.0) * x.ln() - x / 2.0;
        let pdf = log_pdf.exp();
        let mut next = if pdf > 0.0 { x - f / pdf } else { 0.5 * (lo + hi) };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-13 * (1.0 + x.abs()) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(0.5) - 0.5723649429247001).abs() < 1e-12);
        assert!(ln_gamma(1.0).abs() < 1e-12);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(10.0) - 362880f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn normal_quantile_frozen_values() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.975).unwrap() - 1.959963984540054).abs() < 1e-8);
        assert!((normal_quantile(0.025).unwrap() + 1.959963984540054).abs() < 1e-8);
        assert!((normal_quantile(0.9999).unwrap() - 3.719016485455709).abs() < 1e-8);
        assert!((normal_quantile(1e-9).unwrap() + 5.9978070150076865).abs() < 1e-7);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn chi_square_quantile_frozen_values() {
        // dof = 2 has the closed form -2·ln(1 - q)
        assert!((chi_square_quantile(0.95, 2).unwrap() - 5.991464547107982).abs() < 1e-8);
        assert!((chi_square_quantile(0.95, 10).unwrap() - 18.307038053275146).abs() < 1e-8);
        assert!((chi_square_quantile(0.5, 1).unwrap() - 0.454936423119572).abs() < 1e-8);
        assert!((chi_square_quantile(0.99, 30).unwrap() - 50.89218131151707).abs() < 1e-8);
        assert!((chi_square_quantile(0.001, 7).unwrap() - 0.598493752375376).abs() < 1e-8);
        assert!(chi_square_quantile(1.5, 3).is_err());
        assert!(chi_square_quantile(0.5, 0).is_err());
    }

    #[test]
    fn quantiles_round_trip_their_cdfs() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..200 {
            let q: f64 = rng.random_range(1e-6..1.0 - 1e-6);
            let z = normal_quantile(q).unwrap();
            assert!((normal_cdf(z) - q).abs() < 1e-8, "normal round trip at q={q}");
            let dof = rng.random_range(1..40);
            let x = chi_square_quantile(q, dof).unwrap();
            assert!(
                (chi_square_cdf(x, dof) - q).abs() < 1e-8,
                "chi2 round trip at q={q}, dof={dof}"
            );
        }
    }

    #[test]
    fn ci_half_width_matches_frozen_quantile() {
        let p = 3;
        let m = DVector::zeros(p);
        let eye = DMatrix::identity(p, p);
        let e1 = DVector::from_fn(p, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let ci = confidence_interval(&m, &eye, &eye, &e1, 0.95, 100).unwrap();
        assert!((ci.half_width - 0.1959963984540054).abs() < 1e-9);
        assert_eq!(ci.center, 0.0);

        // 1/√n scaling: quadrupling n halves the width
        let ci4 = confidence_interval(&m, &eye, &eye, &e1, 0.95, 400).unwrap();
        assert!((ci4.half_width - ci.half_width / 2.0).abs() < 1e-12);

        // homogeneity in x0
        let ci2 = confidence_interval(&m, &eye, &eye, &(2.0 * &e1), 0.95, 100).unwrap();
        assert!((ci2.half_width - 2.0 * ci.half_width).abs() < 1e-12);
    }

    #[test]
    fn ci_rejects_zero_direction_and_zero_variance() {
        let p = 2;
        let m = DVector::zeros(p);
        let eye = DMatrix::identity(p, p);
        assert!(matches!(
            confidence_interval(&m, &eye, &eye, &DVector::zeros(p), 0.95, 10),
            Err(Error::InvalidDirection)
        ));
        let zero = DMatrix::zeros(p, p);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            confidence_interval(&m, &eye, &zero, &e1, 0.95, 10),
            Err(Error::NumericalDegeneracy(_))
        ));
    }

    #[test]
    fn test_statistic_zero_at_the_estimate() {
        let p = 4;
        let m = DVector::from_fn(p, |i, _| i as f64);
        let eye = DMatrix::identity(p, p);
        let res = chi_square_test(&m, &eye, &eye, &m, 50, 0.05).unwrap();
        assert_eq!(res.statistic, 0.0);
        assert!(!res.reject);
        assert_eq!(res.p_value, 1.0);
        assert_eq!(res.dof, p);
    }

    #[test]
    fn test_rejects_far_point_with_small_p_value() {
        let p = 3;
        let m = DVector::zeros(p);
        let eye = DMatrix::identity(p, p);
        let far = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let res = chi_square_test(&m, &eye, &eye, &far, 1000, 0.05).unwrap();
        assert!(res.statistic > 100.0);
        assert!(res.reject);
        assert!(res.p_value < 1e-6);
    }

    #[test]
    fn test_statistic_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let p = 4;
        let raw = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let q = raw.qr().q();

        let m = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let m_test = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let g = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let h_star = DMatrix::identity(p, p) + &g * g.transpose();
        let g2 = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let sigma_inv = DMatrix::identity(p, p) + &g2 * g2.transpose();

        let z1 = chi_square_test(&m, &h_star, &sigma_inv, &m_test, 123, 0.05)
            .unwrap()
            .statistic;
        let z2 = chi_square_test(
            &(&q * &m),
            &(&q * &h_star * q.transpose()),
            &(&q * &sigma_inv * q.transpose()),
            &(&q * &m_test),
            123,
            0.05,
        )
        .unwrap()
        .statistic;
        assert!((z1 - z2).abs() < 1e-10 * (1.0 + z1.abs()));
    }

    #[test]
    fn statistic_positive_definite_in_the_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let p = 3;
        let eye = DMatrix::identity(p, p);
        for _ in 0..50 {
            let m = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
            let mt = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
            let res = chi_square_test(&m, &eye, &eye, &mt, 10, 0.05).unwrap();
            if (&m - &mt).norm() > 0.0 {
                assert!(res.statistic > 0.0);
            }
        }
    }
}
