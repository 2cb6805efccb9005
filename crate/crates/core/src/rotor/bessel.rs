//! Modified Bessel functions of the first kind, integer order.
//!
//! Every term of the ascending series of `I_n(x)` is positive, so the sum has
//! no cancellation and stays accurate to a few ulps over the whole supported
//! domain. The leading factor `(x/2)^n / n!` is accumulated with a separate
//! binary exponent so large orders underflow gracefully instead of
//! producing NaN.

use crate::error::{Result, RotorError};

/// Largest order accepted by [`bessel_i`].
pub const MAX_ORDER: i64 = 200_000;
/// Largest argument accepted by [`bessel_i`].
pub const MAX_ARG: f64 = 100.0;

/// `I_order(x)` for `0 <= x <= 100` and `|order| <= 2e5`.
pub fn bessel_i(order: i64, x: f64) -> Result<f64> {
    if !(x >= 0.0) || x > MAX_ARG {
        return Err(RotorError::Domain(format!(
            "bessel_i argument {x} outside [0, {MAX_ARG}]"
        )));
    }
    if order.abs() > MAX_ORDER {
        return Err(RotorError::Domain(format!(
            "bessel_i order {order} exceeds {MAX_ORDER}"
        )));
    }
    Ok(series(order.unsigned_abs(), x))
}

/// `I_order(x)` for any real `x` in `[-100, 100]`, via `I_n(-x) = (-1)^n I_n(x)`.
///
/// Arguments of the form `2κ cos(θ/2)` turn negative once `θ` leaves
/// `[-π, π]`; callers in this crate use this entry point for them.
pub(crate) fn bessel_i_signed(order: i64, x: f64) -> f64 {
    let n = order.unsigned_abs();
    let v = series(n, x.abs());
    if x < 0.0 && n % 2 == 1 {
        -v
    } else {
        v
    }
}

/// `I_0(x) .. I_nmax(x)` in one vector.
pub(crate) fn bessel_i_table(nmax: usize, x: f64) -> Vec<f64> {
    (0..=nmax as u64).map(|n| series(n, x.abs())).collect()
}

fn series(n: u64, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let half = 0.5 * x;

    // (x/2)^n / n! as mant * 2^exp
    let mut mant = 1.0_f64;
    let mut exp: i64 = 0;
    for j in 1..=n {
        mant *= half / j as f64;
        if mant < 1e-150 || mant > 1e150 {
            let (m, e) = frexp(mant);
            mant = m;
            exp += e;
        }
        // sum below is bounded by e^x < 2^145, so this is a certain underflow
        if exp < -1300 && (j as f64) > half * half {
            return 0.0;
        }
    }

    let q = half * half;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut k = 0.0_f64;
    let nf = n as f64;
    loop {
        k += 1.0;
        let ratio = q / (k * (k + nf));
        term *= ratio;
        sum += term;
        if ratio < 1.0 && term < 1e-17 * sum {
            break;
        }
    }
    ldexp(mant * sum, exp)
}

fn frexp(v: f64) -> (f64, i64) {
    if v == 0.0 || !v.is_finite() {
        return (v, 0);
    }
    let bits = v.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    if raw_exp == 0 {
        // subnormal: renormalize first
        let (m, e) = frexp(v * 2f64.powi(64));
        return (m, e - 64);
    }
    let e = raw_exp - 1022;
    let m = f64::from_bits((bits & !(0x7ff << 52)) | (1022 << 52));
    (m, e)
}

fn ldexp(mut v: f64, mut e: i64) -> f64 {
    while e > 1000 {
        v *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        v *= 2f64.powi(-1000);
        e += 1000;
        if v == 0.0 {
            return 0.0;
        }
    }
    v * 2f64.powi(e as i32)
}
