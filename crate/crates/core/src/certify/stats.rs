//! Gaussian quantiles, the regularized incomplete Beta function, and the confidence bounds
//! built on them. Everything here is `f64`.

use crate::error::{HycasError, Result};

/// Standard normal CDF.
pub fn gauss_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn gauss_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF: a rational initial guess refined by Halley steps.
pub fn inv_gauss_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(HycasError::InvalidArgument(format!("probability {p} outside (0, 1)")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Work on the lower tail and mirror, which keeps the result exactly antisymmetric.
    if p > 0.5 {
        return Ok(-lower_tail_quantile(1.0 - p));
    }
    Ok(lower_tail_quantile(p))
}

fn lower_tail_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    let mut x = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    for _ in 0..3 {
        let e = gauss_cdf(x) - p;
        let u = e / gauss_pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Regularized incomplete Beta function `I_x(a, b)` by Lentz's continued fraction.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
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
    h
}

/// Bisection on `[lo, hi]` for the point where the increasing `f` crosses `target`.
fn bisect(mut lo: f64, mut hi: f64, target: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact one-sided lower confidence bound on a binomial proportion at level `1 - alpha`:
/// the `p` solving `P[Bin(n, p) >= m] = alpha`, i.e. `I_p(m, n - m + 1) = alpha`.
pub fn clopper_pearson_lower(m: u64, n: u64, alpha: f64) -> Result<f64> {
    if m > n || n == 0 {
        return Err(HycasError::InvalidArgument(format!("need 0 <= m <= n and n > 0, got m={m}, n={n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HycasError::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    if m == 0 {
        return Ok(0.0);
    }
    if m == n {
        return Ok(alpha.powf(1.0 / n as f64));
    }
    let (a, b) = (m as f64, (n - m + 1) as f64);
    Ok(bisect(0.0, 1.0, alpha, 1e-13, |p| reg_inc_beta(p, a, b)))
}

/// Student-t CDF with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    let tail = 0.5 * reg_inc_beta(dof / (dof + t * t), 0.5 * dof, 0.5);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Student-t quantile by bisection.
pub fn student_t_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || dof <= 0.0 {
        return Err(HycasError::InvalidArgument(format!("bad t quantile request p={p}, dof={dof}")));
    }
    let mut hi = 1.0;
    while student_t_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    let mut lo = -1.0;
    while student_t_cdf(lo, dof) > p {
        lo *= 2.0;
    }
    Ok(bisect(lo, hi, p, 1e-12, |t| student_t_cdf(t, dof)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_roundtrip_and_symmetry() {
        for &p in &[1e-12, 1e-6, 0.001, 0.02, 0.3, 0.5, 0.77, 0.975, 0.999999] {
            let x = inv_gauss_cdf(p).unwrap();
            assert!((gauss_cdf(x) - p).abs() < 1e-9, "p={p}");
            if 1.0 - (1.0 - p) == p {
                assert_eq!(x, -inv_gauss_cdf(1.0 - p).unwrap());
            }
        }
        assert_eq!(inv_gauss_cdf(0.5).unwrap(), 0.0);
        assert!(inv_gauss_cdf(0.0).is_err());
        assert!(inv_gauss_cdf(1.0).is_err());
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, b) = 1 - (1 - x)^b and I_x(a, 1) = x^a.
        for &x in &[0.1, 0.5, 0.9] {
            assert!((reg_inc_beta(x, 1.0, 3.0) - (1.0 - (1.0f64 - x).powi(3))).abs() < 1e-13);
            assert!((reg_inc_beta(x, 4.0, 1.0) - x.powi(4)).abs() < 1e-13);
        }
    }

    #[test]
    fn clopper_pearson_edges() {
        assert_eq!(clopper_pearson_lower(0, 10, 0.05).unwrap(), 0.0);
        assert!((clopper_pearson_lower(100, 100, 0.001).unwrap() - 0.001f64.powf(0.01)).abs() < 1e-15);
        assert!(clopper_pearson_lower(11, 10, 0.05).is_err());
    }

    #[test]
    fn t_quantile_matches_cauchy() {
        // One degree of freedom is the Cauchy distribution.
        let q = student_t_quantile(0.9, 1.0).unwrap();
        assert!((q - (std::f64::consts::PI * 0.4).tan()).abs() < 1e-9);
    }
}
