//! Sufficient trajectory length and iteration count from the main guarantee.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeBound {
    /// `ceil` of the trajectory-length bound, saturated at `u64::MAX`.
    pub t_bound: u64,
    /// Unrounded trajectory-length bound.
    pub t_real: f64,
    /// Set when `t_real` does not fit in a `u64` (or overflowed `f64`).
    pub t_saturated: bool,
    pub k_bound: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub eps: f64,
    pub delta: f64,
    pub m: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_obs: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Trajectory length
/// `T = 8 A^{2m} (m+1)^2 / (alpha^2 S^2 beta^{2m} eps^2) * ln(24 A^{2m+1} O^{2m} / delta)`
/// and value-iteration count `K = max(1, ceil(ln(2(1-gamma)/eps) / (1-gamma)))`.
pub fn theoretical_sample_size(p: &BoundParams) -> Result<SampleSizeBound> {
    if !(p.eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {}", p.eps)));
    }
    if !(p.delta > 0.0 && p.delta < 1.0) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1), got {}", p.delta)));
    }
    if !(p.alpha > 0.0 && p.beta > 0.0) {
        return Err(Error::Parameter("alpha and beta must be positive".into()));
    }
    if !(p.gamma > 0.0 && p.gamma < 1.0) {
        return Err(Error::Parameter(format!("gamma must lie in (0, 1), got {}", p.gamma)));
    }
    if p.m == 0 || p.n_states == 0 || p.n_actions == 0 || p.n_obs == 0 {
        return Err(Error::Parameter("m, S, A and O must be positive".into()));
    }
    let two_m = 2 * p.m as i32;
    let a = p.n_actions as f64;
    let numer = 8.0 * a.powi(two_m) * ((p.m + 1) as f64).powi(2);
    let denom = p.alpha.powi(2) * (p.n_states as f64).powi(2) * p.beta.powi(two_m) * p.eps.powi(2);
    // ln(24 A^{2m+1} O^{2m} / delta) expanded so it cannot overflow
    let log_term = 24f64.ln() + (two_m + 1) as f64 * a.ln() + two_m as f64 * (p.n_obs as f64).ln()
        - p.delta.ln();
    let t_real = numer / denom * log_term;
    // f64 only screens for saturation; the ceilings come from exact arithmetic
    let (t_bound, t_saturated) = if !t_real.is_finite() || t_real >= 2f64.powi(70) {
        (u64::MAX, true)
    } else {
        exact::t_ceil(p)
    };

    let k_real = (2.0 * (1.0 - p.gamma) / p.eps).ln() / (1.0 - p.gamma);
    let k_bound = if k_real >= 2f64.powi(70) {
        u64::MAX
    } else {
        exact::k_ceil(p).0.max(1)
    };
    Ok(SampleSizeBound { t_bound, t_real, t_saturated, k_bound })
}

mod exact {
    //! Fixed-point evaluation with `FRAC` fractional bits, so that ceilings
    //! are exact even where f64 cannot represent every integer.

    use num_bigint::BigInt;
    use num_traits::{One, Signed, ToPrimitive, Zero};

    use super::BoundParams;

    const FRAC: u64 = 192;

    /// `x = mantissa * 2^exp`, exactly, for finite positive `x`.
    fn dyadic(x: f64) -> (BigInt, i64) {
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        if exp == 0 {
            (BigInt::from(frac), -1074)
        } else {
            (BigInt::from(frac | (1u64 << 52)), exp - 1075)
        }
    }

    /// `2 atanh(z)` for `z = num / den` in `[0, 1/3]`, scaled by `2^FRAC`.
    fn two_atanh(num: &BigInt, den: &BigInt) -> BigInt {
        let z = (num << FRAC) / den;
        let z2 = (&z * &z) >> FRAC;
        let mut power = z;
        let mut sum = BigInt::zero();
        let mut k = 1u32;
        while !power.is_zero() {
            sum += &power / k;
            power = (&power * &z2) >> FRAC;
            k += 2;
        }
        sum << 1
    }

    /// `ln(num / den)` scaled by `2^FRAC`, for positive integers.
    fn ln_ratio(num: &BigInt, den: &BigInt) -> BigInt {
        // num / den = 2^k * y with y in [1, 2)
        let mut k = num.bits() as i64 - den.bits() as i64;
        let scaled = |k: i64| if k >= 0 { (num.clone(), den << k as u64) } else { (num << (-k) as u64, den.clone()) };
        let (mut n, mut d) = scaled(k);
        if n < d {
            k -= 1;
            (n, d) = scaled(k);
        }
        let ln2 = two_atanh(&BigInt::one(), &BigInt::from(3));
        let ln_y = two_atanh(&(&n - &d), &(&n + &d));
        ln2 * k + ln_y
    }

    /// `ceil(num / den)` for positive `den`.
    fn ceil_div(num: &BigInt, den: &BigInt) -> BigInt {
        let q = num / den;
        if &q * den < *num {
            q + 1
        } else {
            q
        }
    }

    fn saturate(x: BigInt) -> (u64, bool) {
        match x.to_u64() {
            Some(v) => (v, false),
            None => (u64::MAX, true),
        }
    }

    fn pow(base: usize, e: usize) -> BigInt {
        num_traits::pow(BigInt::from(base), e)
    }

    /// Write `value * 2^exp` as a fraction of integers.
    fn with_exp(value: BigInt, exp: i64) -> (BigInt, BigInt) {
        if exp >= 0 {
            (value << exp as u64, BigInt::one())
        } else {
            (value, BigInt::one() << (-exp) as u64)
        }
    }

    pub(super) fn t_ceil(p: &BoundParams) -> (u64, bool) {
        let two_m = 2 * p.m;
        let numer = pow(p.n_actions, two_m) * 8 * pow(p.m + 1, 2);
        let (ma, ea) = dyadic(p.alpha);
        let (mb, eb) = dyadic(p.beta);
        let (me, ee) = dyadic(p.eps);
        let denom = ma.pow(2) * pow(p.n_states, 2) * mb.pow(two_m as u32) * me.pow(2);
        let denom_exp = 2 * ea + two_m as i64 * eb + 2 * ee;

        let (md, ed) = dyadic(p.delta);
        let (ln_num, ln_den) = with_exp(pow(p.n_actions, two_m + 1) * pow(p.n_obs, two_m) * 24, -ed);
        let log_term = ln_ratio(&ln_num, &(ln_den * md));

        // T = numer * log_term / (denom * 2^denom_exp * 2^FRAC)
        let (num, den) = with_exp(numer * log_term, -denom_exp - FRAC as i64);
        saturate(ceil_div(&num, &(den * denom)))
    }

    pub(super) fn k_ceil(p: &BoundParams) -> (u64, bool) {
        // 1 - gamma = gap / 2^-eg, exact because gamma is dyadic with eg < 0
        let (mg, eg) = dyadic(p.gamma);
        let one = BigInt::one() << (-eg) as u64;
        let gap = &one - mg;
        let (me, ee) = dyadic(p.eps);
        // 2 (1 - gamma) / eps = (2 gap) / (one * me * 2^ee)
        let (num, den) = with_exp(gap.clone() * 2, -ee);
        let den = den * &one * me;
        if num <= den {
            return (1, false);
        }
        let ln = ln_ratio(&num, &den);
        debug_assert!(ln.is_positive());
        saturate(ceil_div(&(ln * one), &(gap << FRAC)))
    }
}
