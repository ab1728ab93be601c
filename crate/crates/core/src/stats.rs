//! Student's t distribution and the one-sample t-test used on bootstrap
//! replicate diffs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{mean, sample_variance, Real};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
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

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        // reflection
        let pi = T::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(LANCZOS_COEF[0]);
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc = acc + T::lit(c) / (x + T::from_usize_lossy(i));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf<T: Real>(a: T, b: T, x: T) -> T {
    let tiny = T::min_positive_value() / T::epsilon();
    let eps = T::epsilon();
    let one = T::one();
    let two = T::lit(2.0);
    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = one / d;
    let mut h = d;
    for m in 1..=10_000usize {
        let m = T::from_usize_lossy(m);
        let m2 = two * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        h = h * d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        let del = d * c;
        h = h * del;
        if (del - one).abs() <= eps {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta<T: Real>(a: T, b: T, x: T) -> T {
    assert!(
        a > T::zero() && b > T::zero(),
        "beta parameters must be positive"
    );
    if x <= T::zero() {
        return T::zero();
    }
    if x >= T::one() {
        return T::one();
    }
    let one = T::one();
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (one - x).ln();
    let front = ln_front.exp();
    if x < (a + one) / (a + b + T::lit(2.0)) {
        front * beta_cf(a, b, x) / a
    } else {
        one - front * beta_cf(b, a, one - x) / b
    }
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t with `df`
/// degrees of freedom.
pub fn student_t_two_sided_p<T: Real>(t: T, df: T) -> T {
    if t.is_nan() {
        return T::nan();
    }
    if t.is_infinite() {
        return T::zero();
    }
    let half = T::lit(0.5);
    let x = df / (df + t * t);
    regularized_incomplete_beta(df * half, half, x)
}

/// Student's t cumulative distribution function.
pub fn student_t_cdf<T: Real>(t: T, df: T) -> T {
    let tail = student_t_two_sided_p(t, df) * T::lit(0.5);
    if t >= T::zero() {
        T::one() - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest<T> {
    /// Infinite for a degenerate sample whose mean differs from `mu0`.
    pub t_stat: T,
    pub p_value: T,
    pub df: usize,
    /// Zero sample variance; the p-value is 0 or 1 by convention.
    pub degenerate: bool,
}

/// Two-sided one-sample t-test of `mean(samples) == mu0`.
pub fn t_test_one_sample<T: Real>(samples: &[T], mu0: T) -> Result<TTest<T>> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "t-test needs at least 2 samples".into(),
        ));
    }
    let n = samples.len();
    let m = mean(samples);
    let var = sample_variance(samples);
    let df = n - 1;
    if var <= T::zero() {
        let differs = m != mu0;
        let t_stat = if differs {
            (m - mu0).signum() * T::infinity()
        } else {
            T::zero()
        };
        return Ok(TTest {
            t_stat,
            p_value: if differs { T::zero() } else { T::one() },
            df,
            degenerate: true,
        });
    }
    let se = (var / T::from_usize_lossy(n)).sqrt();
    let t_stat = (m - mu0) / se;
    Ok(TTest {
        t_stat,
        p_value: student_t_two_sided_p(t_stat, T::from_usize_lossy(df)),
        df,
        degenerate: false,
    })
}
