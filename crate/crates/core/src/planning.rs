//! Value iteration on superstate models, greedy window policies and exact or
//! simulated policy evaluation.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::{sample_categorical, RewardTiming, TabularPomdp};
use crate::rng::stream;
use crate::model::{fmt_sig, SuperstateModel};
use crate::window::WindowIndex;

/// Residual at which iterative policy evaluation stops.
pub const EVAL_RESIDUAL: f64 = 1e-12;

/// Largest product chain `S * |W|` that [`pomdp_policy_value`] will build.
pub const MAX_PRODUCT_STATES: usize = 1 << 26;

const MAX_EVAL_SWEEPS: usize = 1_000_000;

/// Action values indexed `[window][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    idx: WindowIndex,
    values: Vec<f64>,
    iterations: usize,
}

impl QTable {
    pub fn zeros(idx: &WindowIndex) -> Self {
        Self { idx: idx.clone(), values: vec![0.0; idx.size() * idx.n_actions()], iterations: 0 }
    }

    pub fn from_values(idx: &WindowIndex, values: Vec<f64>) -> Result<Self> {
        if values.len() != idx.size() * idx.n_actions() {
            return Err(Error::Parameter("Q-table size does not match the window index".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("Q-table has non-finite entries".into()));
        }
        Ok(Self { idx: idx.clone(), values, iterations: 0 })
    }

    pub fn index(&self) -> &WindowIndex {
        &self.idx
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, w: usize, a: usize) -> f64 {
        self.values[w * self.idx.n_actions() + a]
    }

    pub fn row(&self, w: usize) -> &[f64] {
        let na = self.idx.n_actions();
        &self.values[w * na..(w + 1) * na]
    }

    /// Add `c` to every entry.
    pub fn shifted(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v + c).collect(), ..self.clone() }
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// CSV dump: `window,action,q_value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window,action,q_value\n");
        for w in 0..self.idx.size() {
            let name = self.idx.decode(w).to_string();
            for (a, q) in self.row(w).iter().enumerate() {
                let _ = writeln!(out, "{name},{a},{}", fmt_sig(*q));
            }
        }
        out
    }
}

/// Deterministic stationary policy over windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPolicy {
    idx: WindowIndex,
    actions: Vec<usize>,
}

impl WindowPolicy {
    pub fn new(idx: &WindowIndex, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != idx.size() {
            return Err(Error::Parameter("policy size does not match the window index".into()));
        }
        if let Some(a) = actions.iter().find(|&&a| a >= idx.n_actions()) {
            return Err(Error::Parameter(format!("policy action {a} out of range")));
        }
        Ok(Self { idx: idx.clone(), actions })
    }

    /// Every window takes `action`.
    pub fn constant(idx: &WindowIndex, action: usize) -> Result<Self> {
        Self::new(idx, vec![action; idx.size()])
    }

    /// Uniformly random deterministic policy (for tests and audits).
    pub fn random(idx: &WindowIndex, seed: u64) -> Self {
        let mut rng = stream(seed);
        let actions = (0..idx.size()).map(|_| rng.gen_range(0..idx.n_actions())).collect();
        Self { idx: idx.clone(), actions }
    }

    pub fn index(&self) -> &WindowIndex {
        &self.idx
    }

    pub fn m(&self) -> usize {
        self.idx.m()
    }

    pub fn action(&self, w: usize) -> usize {
        self.actions[w]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    /// CSV dump: `window,chosen_action`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window,chosen_action\n");
        for (w, a) in self.actions.iter().enumerate() {
            let _ = writeln!(out, "{},{a}", self.idx.decode(w));
        }
        out
    }
}

fn check_gamma(gamma: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { (0.0..1.0).contains(&gamma) } else { gamma > 0.0 && gamma < 1.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::Parameter(format!("discount {gamma} out of range")))
    }
}

fn state_values(model: &SuperstateModel, q: &[f64]) -> Vec<f64> {
    let na = model.n_actions();
    q.chunks(na).map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// One synchronous Bellman optimality backup of `q` into `out`.
fn backup(model: &SuperstateModel, gamma: f64, q: &[f64], out: &mut [f64]) {
    let idx = model.index();
    let (na, no) = (idx.n_actions(), idx.n_obs());
    let v = state_values(model, q);
    let probs = model.probs();
    let rewards = model.rewards();
    let reachable = model.reachable_flags();
    out.par_chunks_mut(na).enumerate().for_each(|(w, row)| {
        if !reachable[w] {
            row.copy_from_slice(&q[w * na..(w + 1) * na]);
            return;
        }
        for (a, slot) in row.iter_mut().enumerate() {
            let base = (w * na + a) * no;
            let mut future = 0.0;
            for o in 0..no {
                let p = probs[base + o];
                if p != 0.0 {
                    future += p * v[idx.successor(w, a, o)];
                }
            }
            *slot = rewards[w * na + a] + gamma * future;
        }
    });
}

/// `K` synchronous backups
/// `Q_k(w, a) = r(w, a) + gamma * sum_{w'} P(w' | w, a) max_{a'} Q_{k-1}(w', a')`.
pub fn value_iteration(model: &SuperstateModel, gamma: f64, k: usize, q0: &QTable) -> Result<QTable> {
    Ok(value_iteration_traced(model, gamma, k, q0)?.0)
}

/// Like [`value_iteration`], also returning `||Q_k - Q_{k-1}||_inf` for each step.
pub fn value_iteration_traced(
    model: &SuperstateModel,
    gamma: f64,
    k: usize,
    q0: &QTable,
) -> Result<(QTable, Vec<f64>)> {
    check_gamma(gamma, false)?;
    if q0.index() != model.index() {
        return Err(Error::Parameter("initial Q-table does not match the model".into()));
    }
    let mut cur = q0.values.clone();
    let mut next = vec![0.0; cur.len()];
    let mut residuals = Vec::with_capacity(k);
    for _ in 0..k {
        backup(model, gamma, &cur, &mut next);
        residuals.push(cur.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        std::mem::swap(&mut cur, &mut next);
    }
    Ok((QTable { idx: q0.idx.clone(), values: cur, iterations: q0.iterations + k }, residuals))
}

/// Iterate from zero until the backup residual drops to `residual`.
pub fn value_iteration_to_residual(model: &SuperstateModel, gamma: f64, residual: f64) -> Result<QTable> {
    check_gamma(gamma, false)?;
    let mut cur = vec![0.0; model.n_windows() * model.n_actions()];
    let mut next = vec![0.0; cur.len()];
    for k in 1..=MAX_EVAL_SWEEPS {
        backup(model, gamma, &cur, &mut next);
        let diff = cur.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut cur, &mut next);
        if diff <= residual {
            return Ok(QTable { idx: model.index().clone(), values: cur, iterations: k });
        }
    }
    Err(Error::Numeric(format!("value iteration did not reach residual {residual}")))
}

/// Q-values closer than this to the row maximum count as tied. Without it,
/// values that differ only by rounding noise could swap order under a constant
/// shift.
pub const GREEDY_TIE_TOL: f64 = 1e-10;

/// Per-window argmax; ties (within [`GREEDY_TIE_TOL`]) go to the lowest
/// action index.
pub fn greedy(q: &QTable) -> WindowPolicy {
    let actions = (0..q.idx.size())
        .map(|w| {
            let row = q.row(w);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter().position(|&v| v >= max - GREEDY_TIE_TOL).unwrap_or(0)
        })
        .collect();
    WindowPolicy { idx: q.idx.clone(), actions }
}

/// Exact value of `pi` at every window of the superstate model, solving
/// `v = r_pi + gamma P_pi v` by fixed-point sweeps to [`EVAL_RESIDUAL`].
pub fn superstate_policy_values(model: &SuperstateModel, pi: &WindowPolicy, gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma, true)?;
    if pi.index() != model.index() {
        return Err(Error::Parameter("policy and model use different window indices".into()));
    }
    let idx = model.index();
    let no = idx.n_obs();
    let nw = idx.size();
    let mut v = vec![0.0; nw];
    let mut next = vec![0.0; nw];
    for _ in 0..MAX_EVAL_SWEEPS {
        next.par_iter_mut().enumerate().for_each(|(w, slot)| {
            if !model.is_reachable(w) {
                *slot = 0.0;
                return;
            }
            let a = pi.action(w);
            let row = model.row(w, a);
            let mut future = 0.0;
            for o in 0..no {
                if row[o] != 0.0 {
                    future += row[o] * v[idx.successor(w, a, o)];
                }
            }
            *slot = model.reward(w, a) + gamma * future;
        });
        let diff = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        if diff <= EVAL_RESIDUAL {
            return Ok(v);
        }
    }
    Err(Error::Numeric("policy evaluation did not converge".into()))
}

/// `V^m(pi)`: superstate value started from the empty window.
pub fn superstate_policy_value(model: &SuperstateModel, pi: &WindowPolicy, gamma: f64) -> Result<f64> {
    Ok(superstate_policy_values(model, pi, gamma)?[0])
}

/// `V(pi)` in the POMDP, solved exactly on the product chain over
/// `(hidden state, window)` started from `init_dist ⊗ {∅}`.
pub fn pomdp_policy_value(pomdp: &TabularPomdp, pi: &WindowPolicy, gamma: f64) -> Result<f64> {
    check_gamma(gamma, true)?;
    let idx = pi.index();
    if idx.n_actions() != pomdp.n_actions() || idx.n_obs() != pomdp.n_obs() {
        return Err(Error::Parameter("policy alphabet does not match the POMDP".into()));
    }
    let ns = pomdp.n_states();
    let nw = idx.size();
    let total = ns.checked_mul(nw).filter(|&n| n <= MAX_PRODUCT_STATES).ok_or(Error::Capacity {
        what: "product chain",
        required: ns as u128 * nw as u128,
    })?;
    let no = idx.n_obs();
    let current = pomdp.reward_timing() == RewardTiming::CurrentObservation;
    // v[w * S + s]
    let mut v = vec![0.0; total];
    let mut next = vec![0.0; total];
    for _ in 0..MAX_EVAL_SWEEPS {
        next.par_chunks_mut(ns).enumerate().for_each(|(w, row)| {
            let a = pi.action(w);
            let r_prev = idx.last_obs(w).map_or(0.0, |o| pomdp.reward(o, a));
            for (s, slot) in row.iter_mut().enumerate() {
                let trans = pomdp.trans_row(s, a);
                let mut total = if current { 0.0 } else { r_prev };
                for o in 0..no {
                    let po = pomdp.obs(s, a, o);
                    if po == 0.0 {
                        continue;
                    }
                    let succ = &v[idx.successor(w, a, o) * ns..][..ns];
                    let inner: f64 = trans.iter().zip(succ).map(|(p, x)| p * x).sum();
                    let r_now = if current { pomdp.reward(o, a) } else { 0.0 };
                    total += po * (r_now + gamma * inner);
                }
                *slot = total;
            }
        });
        let diff = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        if diff <= EVAL_RESIDUAL {
            return Ok(pomdp.init_dist().iter().zip(&v[..ns]).map(|(mu, x)| mu * x).sum());
        }
    }
    Err(Error::Numeric("POMDP policy evaluation did not converge".into()))
}

/// Optimal superstate value to within `tol`, with the greedy policy achieving it.
pub fn optimal_superstate_value(model: &SuperstateModel, gamma: f64, tol: f64) -> Result<(f64, WindowPolicy)> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    let q = value_iteration_to_residual(model, gamma, tol * (1.0 - gamma) / (2.0 * gamma))?;
    let pi = greedy(&q);
    let v = superstate_policy_value(model, &pi, gamma)?;
    Ok((v, pi))
}

/// Horizon after which discounted rewards contribute less than `1e-4` in total.
pub fn truncation_horizon(gamma: f64) -> usize {
    ((1e-4 * (1.0 - gamma)).ln() / gamma.ln()).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub episodes: usize,
    pub horizon: usize,
}

fn summarize(returns: &[f64], horizon: usize) -> MonteCarloEstimate {
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    MonteCarloEstimate { mean, std_err: (var / n).sqrt(), episodes: returns.len(), horizon }
}

/// Truncated discounted returns of `pi` simulated in the POMDP.
pub fn monte_carlo_pomdp_value(
    pomdp: &TabularPomdp,
    pi: &WindowPolicy,
    gamma: f64,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if episodes == 0 {
        return Err(Error::Parameter("need at least one episode".into()));
    }
    let idx = pi.index();
    if idx.n_actions() != pomdp.n_actions() || idx.n_obs() != pomdp.n_obs() {
        return Err(Error::Parameter("policy alphabet does not match the POMDP".into()));
    }
    let mut rng = stream(seed);
    let returns: Vec<f64> = (0..episodes)
        .map(|_| {
            let mut s = sample_categorical(&mut rng, pomdp.init_dist());
            let mut w = 0;
            let mut ret = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                let a = pi.action(w);
                let o = sample_categorical(&mut rng, pomdp.obs_row(s, a));
                let r = match pomdp.reward_timing() {
                    RewardTiming::PreviousObservation => idx.last_obs(w).map_or(0.0, |prev| pomdp.reward(prev, a)),
                    RewardTiming::CurrentObservation => pomdp.reward(o, a),
                };
                ret += disc * r;
                s = sample_categorical(&mut rng, pomdp.trans_row(s, a));
                w = idx.successor(w, a, o);
                disc *= gamma;
            }
            ret
        })
        .collect();
    Ok(summarize(&returns, horizon))
}

/// Truncated discounted returns of `pi` simulated on the superstate chain.
pub fn monte_carlo_superstate_value(
    model: &SuperstateModel,
    pi: &WindowPolicy,
    gamma: f64,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if episodes == 0 {
        return Err(Error::Parameter("need at least one episode".into()));
    }
    let idx = model.index();
    let mut rng = stream(seed);
    let returns: Vec<f64> = (0..episodes)
        .map(|_| {
            let mut w = 0;
            let mut ret = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                let a = pi.action(w);
                ret += disc * model.reward(w, a);
                let row = model.row(w, a);
                if row.iter().all(|&p| p == 0.0) {
                    break;
                }
                let o = sample_categorical(&mut rng, row);
                w = idx.successor(w, a, o);
                disc *= gamma;
            }
            ret
        })
        .collect();
    Ok(summarize(&returns, horizon))
}
