//! Helpers shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_traits::{Float, One, Signed, ToPrimitive, Zero};
use rand::Rng;

use superstate::rng::StreamRng;
use superstate::{probe_env, random_pomdp, BoundParams, ModelKind, SuperstateModel, TabularPomdp};

/// Probe followed by 20 random POMDPs with entrywise floors of 0.05.
pub fn audit_models() -> Vec<(String, TabularPomdp)> {
    let mut out = vec![("probe".to_string(), probe_env(0.95).unwrap())];
    for i in 0..20u64 {
        let (s, a, o) = (2 + (i % 3) as usize, 2 + (i % 2) as usize, 2 + ((i / 2) % 3) as usize);
        out.push((format!("random#{i}(S={s},A={a},O={o})"), random_pomdp(s, a, o, 0.05, 0.05, 1000 + i).unwrap()));
    }
    out
}

/// A POMDP whose observation reveals the hidden state (S = O = 3, A = 2).
pub fn perfect_observation_pomdp(seed: u64) -> TabularPomdp {
    let mut file = random_pomdp(3, 2, 3, 0.0, 0.0, seed).unwrap().to_file();
    for (s, rows) in file.obs.iter_mut().enumerate() {
        for row in rows.iter_mut() {
            for (o, p) in row.iter_mut().enumerate() {
                *p = if o == s { 1.0 } else { 0.0 };
            }
        }
    }
    TabularPomdp::from_file(file).unwrap()
}

/// Shift every live transition entry and reward by `U(-eps, eps)`, then
/// clamp and renormalize.
pub fn perturb(model: &SuperstateModel, eps: f64, rng: &mut StreamRng) -> SuperstateModel {
    let idx = model.index().clone();
    let (nw, na, no) = (idx.size(), idx.n_actions(), idx.n_obs());
    let mut probs = vec![0.0; nw * na * no];
    let mut reward = vec![0.0; nw * na];
    let reachable: Vec<bool> = (0..nw).map(|w| model.is_reachable(w)).collect();
    let visited: Vec<bool> = (0..nw * na).map(|i| model.is_visited(i / na, i % na)).collect();
    for w in 0..nw {
        for a in 0..na {
            if !(reachable[w] && visited[w * na + a]) {
                continue;
            }
            let row: Vec<f64> = model.row(w, a).iter().map(|p| (p + rng.gen_range(-eps..=eps)).max(0.0)).collect();
            let total: f64 = row.iter().sum();
            probs[(w * na + a) * no..(w * na + a + 1) * no].copy_from_slice(&row.iter().map(|p| p / total).collect::<Vec<_>>());
            reward[w * na + a] = (model.reward(w, a) + rng.gen_range(-eps..=eps)).clamp(-1.0, 1.0);
        }
    }
    SuperstateModel::from_parts(idx, probs, reward, reachable, visited, ModelKind::Estimated).unwrap()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

// ---------------------------------------------------------------------------
// Independent big-integer evaluation of the sample-size formulas.
// Logarithms are found by Newton's method on a Taylor-series exponential.

const BITS: u64 = 320;

/// Exact rational `num / den`, `den > 0`.
#[derive(Clone, Debug)]
struct Ratio {
    num: BigInt,
    den: BigInt,
}

impl Ratio {
    fn int(n: u64) -> Self {
        Ratio { num: BigInt::from(n), den: BigInt::one() }
    }

    fn from_f64(x: f64) -> Self {
        let (mantissa, exp, sign) = x.integer_decode();
        assert!(sign > 0);
        let m = BigInt::from(mantissa);
        if exp >= 0 {
            Ratio { num: m << exp as usize, den: BigInt::one() }
        } else {
            Ratio { num: m, den: BigInt::one() << (-exp) as usize }
        }
    }

    fn mul(&self, o: &Ratio) -> Ratio {
        Ratio { num: &self.num * &o.num, den: &self.den * &o.den }
    }

    fn div(&self, o: &Ratio) -> Ratio {
        Ratio { num: &self.num * &o.den, den: &self.den * &o.num }
    }

    fn pow(&self, e: usize) -> Ratio {
        (0..e).fold(Ratio::int(1), |acc, _| acc.mul(self))
    }

    /// Fixed-point value with `BITS` fractional bits (floor).
    fn fixed(&self) -> BigInt {
        (&self.num << BITS as usize) / &self.den
    }
}

fn fixed_exp(y: &BigInt) -> BigInt {
    let one = BigInt::one() << BITS as usize;
    let halvings = (y.abs().bits() as i64 - BITS as i64 + 12).max(0) as usize;
    let r = y >> halvings;
    let mut term = one.clone();
    let mut sum = one.clone();
    let mut k = 1u32;
    loop {
        term = ((&term * &r) >> BITS as usize) / k;
        if term.is_zero() {
            break;
        }
        sum += &term;
        k += 1;
    }
    for _ in 0..halvings {
        sum = (&sum * &sum) >> BITS as usize;
    }
    sum
}

/// `ln x` for `x >= 1`, fixed point.
fn fixed_ln(x: &Ratio) -> BigInt {
    let one = BigInt::one() << BITS as usize;
    let guess = x.num.to_f64().unwrap().ln() - x.den.to_f64().unwrap().ln();
    let mut y = Ratio::from_f64(guess.max(1e-300)).fixed();
    let xf = x.fixed();
    for _ in 0..8 {
        // y <- y + x e^{-y} - 1
        let e = fixed_exp(&y);
        let step = (&xf << BITS as usize) / e - &one;
        y += step;
    }
    y
}

fn ceil_ratio(num: &BigInt, den: &BigInt) -> BigInt {
    let (q, r) = (num / den, num % den);
    if r.is_positive() {
        q + 1
    } else {
        q
    }
}

/// `(t_bound, t_saturated, k_bound)` computed independently of the library.
pub fn oracle_sample_size(p: &BoundParams) -> (u64, bool, u64) {
    let two_m = 2 * p.m;
    let numer = Ratio::int(8).mul(&Ratio::int(p.n_actions as u64).pow(two_m)).mul(&Ratio::int((p.m + 1) as u64).pow(2));
    let denom = Ratio::from_f64(p.alpha)
        .pow(2)
        .mul(&Ratio::int(p.n_states as u64).pow(2))
        .mul(&Ratio::from_f64(p.beta).pow(two_m))
        .mul(&Ratio::from_f64(p.eps).pow(2));
    let log_arg = Ratio::int(24)
        .mul(&Ratio::int(p.n_actions as u64).pow(two_m + 1))
        .mul(&Ratio::int(p.n_obs as u64).pow(two_m))
        .div(&Ratio::from_f64(p.delta));
    let ln = fixed_ln(&log_arg);
    let front = numer.div(&denom);
    let t = ceil_ratio(&(&front.num * ln), &(&front.den << BITS as usize));
    let (t_bound, t_sat) = match t.to_u64() {
        Some(v) => (v, false),
        None => (u64::MAX, true),
    };

    let gamma = Ratio::from_f64(p.gamma);
    let one_minus = Ratio { num: &gamma.den - &gamma.num, den: gamma.den.clone() };
    let k_arg = Ratio::int(2).mul(&one_minus).div(&Ratio::from_f64(p.eps));
    let k = if k_arg.num <= k_arg.den {
        1
    } else {
        let ln = fixed_ln(&k_arg);
        let k = ceil_ratio(&(ln * &one_minus.den), &(&one_minus.num << BITS as usize));
        k.to_u64().unwrap_or(u64::MAX).max(1)
    };
    (t_bound, t_sat, k)
}
