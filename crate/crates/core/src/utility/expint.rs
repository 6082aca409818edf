//! Exponential integral `E1(x) = Γ(0, x) = ∫_x^∞ e^{-t}/t dt`.
//!
//! Power series below `x = 1`, modified-Lentz continued fraction above.
//! The continued fraction yields `e^x E1(x)` directly, which is the form the
//! Rayleigh-averaged rate needs: for large `x` it never forms `e^x`, and for
//! small `x` the series result is multiplied by an `e^x` close to one.

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const MAX_TERMS: usize = 10_000;
const TINY: f64 = 1e-300;

/// `Γ(0, x)` for `x > 0`. Underflows to 0 for large `x`.
pub fn exp_gamma0(x: f64) -> Result<f64> {
    check(x)?;
    Ok(if x <= 1.0 {
        e1_series(x)
    } else {
        (-x).exp() * scaled_e1_fraction(x)
    })
}

/// `e^x Γ(0, x)` for `x > 0`, evaluated without forming either factor
/// separately when that would overflow or underflow.
pub fn scaled_exp_gamma0(x: f64) -> Result<f64> {
    check(x)?;
    Ok(scaled_unchecked(x))
}

pub(crate) fn scaled_unchecked(x: f64) -> f64 {
    if x <= 1.0 {
        x.exp() * e1_series(x)
    } else {
        scaled_e1_fraction(x)
    }
}

fn check(x: f64) -> Result<()> {
    if x > 0.0 && !x.is_nan() {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "incomplete gamma argument",
            value: x,
            expected: "x > 0",
        })
    }
}

fn e1_series(x: f64) -> f64 {
    // E1(x) = -γ - ln x - Σ_{k>=1} (-x)^k / (k k!)
    let mut sum = -x.ln() - EULER_GAMMA;
    let mut fact = 1.0;
    for k in 1..MAX_TERMS {
        let k = k as f64;
        fact *= -x / k;
        let term = -fact / k;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            break;
        }
    }
    sum
}

fn scaled_e1_fraction(x: f64) -> f64 {
    // e^x E1(x) = 1/(x+1- 1/(x+3- 4/(x+5- ...)))
    let mut b = x + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_TERMS {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    h
}
