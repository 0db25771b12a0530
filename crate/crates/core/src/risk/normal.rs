//! Standard normal distribution function and its inverse.
//!
//! The CDF uses the Cephes rational approximations of `erf`/`erfc`; the
//! quantile starts from Acklam's rational approximation and takes one Newton
//! step against that CDF, which brings the absolute error well below 1e-9.

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// Standard normal distribution function `Phi(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let x = z * std::f64::consts::FRAC_1_SQRT_2;
    if x.abs() < 1.0 {
        0.5 + 0.5 * erf(x)
    } else if x > 0.0 {
        1.0 - 0.5 * erfc(x)
    } else {
        0.5 * erfc(-x)
    }
}

/// Upper tail `1 - Phi(z)` without cancellation for large `z`.
pub fn normal_sf(z: f64) -> f64 {
    normal_cdf(-z)
}

/// `Phi^{-1}(p)` for `p` in the open unit interval.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain("p", p, "(0, 1)"));
    }
    Ok(quantile_unchecked(p))
}

#[allow(clippy::excessive_precision)]
pub(crate) fn quantile_unchecked(p: f64) -> f64 {
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
    const P_LOW: f64 = 0.02425;

    if p == 0.5 {
        return 0.0;
    }
    // Work in the lower half and reflect; Phi^{-1}(1-p) = -Phi^{-1}(p).
    let (q, upper) = if p > 0.5 { (1.0 - p, true) } else { (p, false) };
    let mut z = if q > P_LOW {
        let u = q - 0.5;
        let r = u * u;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * u
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let s = (-2.0 * q.ln()).sqrt();
        (((((C[0] * s + C[1]) * s + C[2]) * s + C[3]) * s + C[4]) * s + C[5])
            / ((((D[0] * s + D[1]) * s + D[2]) * s + D[3]) * s + 1.0)
    };
    // Newton refinement on the lower tail, where Phi(z) is computed without cancellation.
    let pdf = normal_pdf(z);
    if pdf > 0.0 {
        z -= (normal_cdf(z) - q) / pdf;
    }
    if upper {
        -z
    } else {
        z
    }
}

#[allow(clippy::excessive_precision)]
fn erf(x: f64) -> f64 {
    const T: [f64; 5] = [
        9.60497373987051638749e0,
        9.00260197203842689217e1,
        2.23200534594684319226e3,
        7.00332514112805075473e3,
        5.55923013010394962768e4,
    ];
    const U: [f64; 5] = [
        3.35617141647503099647e1,
        5.21357949780152679795e2,
        4.59432382970980127987e3,
        2.26290000613890934246e4,
        4.92673942608635921086e4,
    ];
    if x.abs() > 1.0 {
        return 1.0 - erfc(x);
    }
    let z = x * x;
    x * polevl(z, &T) / p1evl(z, &U)
}

#[allow(clippy::excessive_precision)]
fn erfc(a: f64) -> f64 {
    const P: [f64; 9] = [
        2.46196981473530512524e-10,
        5.64189564831068821977e-1,
        7.46321056442269912687e0,
        4.86371970985681366614e1,
        1.96520832956077098242e2,
        5.26445194995477358631e2,
        9.34528527171957607540e2,
        1.02755188689515710272e3,
        5.57535335369399327526e2,
    ];
    const Q: [f64; 8] = [
        1.32281951154744992508e1,
        8.67072140885989742329e1,
        3.54937778887819891062e2,
        9.75708501743205489753e2,
        1.82390916687909736289e3,
        2.24633760818710981792e3,
        1.65666309194161350182e3,
        5.57535340817727675546e2,
    ];
    const R: [f64; 6] = [
        5.64189583547755073984e-1,
        1.27536670759978104416e0,
        5.01905042251180477414e0,
        6.16021097993053585195e0,
        7.40974269950448939160e0,
        2.97886665372100240670e0,
    ];
    const S: [f64; 6] = [
        2.26052863220117276590e0,
        9.39603524938001434673e0,
        1.20489539808096656605e1,
        1.70814450747565897222e1,
        9.60896809063285878198e0,
        3.36907645100081516050e0,
    ];
    const MAXLOG: f64 = 7.09782712893383996843e2;

    let x = a.abs();
    if x < 1.0 {
        return 1.0 - erf(a);
    }
    if a * a > MAXLOG {
        return if a < 0.0 { 2.0 } else { 0.0 };
    }
    let e = expx2_neg(x);
    let (p, q) = if x < 8.0 {
        (polevl(x, &P), p1evl(x, &Q))
    } else {
        (polevl(x, &R), p1evl(x, &S))
    };
    let y = e * p / q;
    if a < 0.0 {
        2.0 - y
    } else {
        y
    }
}

/// `exp(-x^2)` with the square split so that rounding in `x^2` is not amplified.
fn expx2_neg(x: f64) -> f64 {
    const M: f64 = 128.0;
    let m = (M * x + 0.5).floor() / M;
    let f = x - m;
    let u = m * m;
    let u1 = 2.0 * m * f + f * f;
    (-u).exp() * (-u1).exp()
}

fn polevl(x: f64, coeffs: &[f64]) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

fn p1evl(x: f64, coeffs: &[f64]) -> f64 {
    coeffs[1..].iter().fold(x + coeffs[0], |acc, &c| acc * x + c)
}
