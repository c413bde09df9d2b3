//! Empirical estimation of the superstate model from one trajectory.
//!
//! At step `t` the agent's window `w_t` holds the pairs strictly before `t`,
//! the conditioned action is `a_t`, the reward is `r_t`, and the successor
//! is `shift_append(w_t, a_t, o_t)`. Two counting schemes are offered:
//!
//! * [`CountingScheme::CurrentWindow`] credits only the agent's own window
//!   `w_t` at each step, so every step is one visit.
//! * [`CountingScheme::AllSuffixes`] credits every window that matches the
//!   recent history, i.e. each suffix of `w_t` of length `0..=|w_t|`. Windows
//!   shorter than `m` then get visited throughout the trajectory rather than
//!   only during its first `m` steps. Under the default reward timing the
//!   empty suffix is credited reward 0 after the first step, matching the
//!   superstate reward of `∅`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::{RewardTiming, Trajectory};
use crate::model::{fmt_sig, ModelKind, SuperstateModel};
use crate::window::WindowIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingScheme {
    CurrentWindow,
    #[default]
    AllSuffixes,
}

impl std::str::FromStr for CountingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" | "current_window" => Ok(Self::CurrentWindow),
            "suffix" | "all_suffixes" => Ok(Self::AllSuffixes),
            _ => Err(Error::Parameter(format!("unknown counting scheme {s:?}"))),
        }
    }
}

/// Visit, transition and reward accumulators per `(window, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsModel {
    idx: WindowIndex,
    scheme: CountingScheme,
    visit: Vec<u64>,
    /// `trans_count[(w * A + a) * O + o]` counts moves to `successor(w, a, o)`.
    trans_count: Vec<u64>,
    reward_sum: Vec<f64>,
    steps: usize,
}

impl CountsModel {
    fn empty(idx: &WindowIndex, scheme: CountingScheme) -> Self {
        let pairs = idx.size() * idx.n_actions();
        Self {
            idx: idx.clone(),
            scheme,
            visit: vec![0; pairs],
            trans_count: vec![0; pairs * idx.n_obs()],
            reward_sum: vec![0.0; pairs],
            steps: 0,
        }
    }

    fn record(&mut self, w: usize, a: usize, o: usize, r: f64) {
        let slot = w * self.idx.n_actions() + a;
        self.visit[slot] += 1;
        self.trans_count[slot * self.idx.n_obs() + o] += 1;
        self.reward_sum[slot] += r;
    }

    pub fn index(&self) -> &WindowIndex {
        &self.idx
    }

    pub fn scheme(&self) -> CountingScheme {
        self.scheme
    }

    /// Trajectory length consumed.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn visits(&self, w: usize, a: usize) -> u64 {
        self.visit[w * self.idx.n_actions() + a]
    }

    /// Count of observed moves `(w, a) -> successor(w, a, o)`.
    pub fn trans_count(&self, w: usize, a: usize, o: usize) -> u64 {
        self.trans_count[(w * self.idx.n_actions() + a) * self.idx.n_obs() + o]
    }

    pub fn reward_sum(&self, w: usize, a: usize) -> f64 {
        self.reward_sum[w * self.idx.n_actions() + a]
    }

    pub fn total_visits(&self) -> u64 {
        self.visit.iter().sum()
    }

    /// Normalize counts into an estimated model; unvisited pairs get a zero
    /// row and zero reward.
    pub fn to_model(&self) -> SuperstateModel {
        let (nw, na, no) = (self.idx.size(), self.idx.n_actions(), self.idx.n_obs());
        let mut probs = vec![0.0; nw * na * no];
        let mut reward = vec![0.0; nw * na];
        let mut visited = vec![false; nw * na];
        for slot in 0..nw * na {
            let n = self.visit[slot];
            if n == 0 {
                continue;
            }
            visited[slot] = true;
            let nf = n as f64;
            for o in 0..no {
                probs[slot * no + o] = self.trans_count[slot * no + o] as f64 / nf;
            }
            reward[slot] = (self.reward_sum[slot] / nf).clamp(-1.0, 1.0);
        }
        SuperstateModel::from_parts(self.idx.clone(), probs, reward, vec![true; nw], visited, ModelKind::Estimated)
            .expect("normalized counts satisfy the model invariants")
    }

    /// CSV dump: `window,action,visits,successor,count,reward_mean` for visited pairs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window,action,visits,successor,count,reward_mean\n");
        let (na, no) = (self.idx.n_actions(), self.idx.n_obs());
        for w in 0..self.idx.size() {
            let name = self.idx.decode(w).to_string();
            for a in 0..na {
                let n = self.visits(w, a);
                if n == 0 {
                    continue;
                }
                let mean = fmt_sig(self.reward_sum(w, a) / n as f64);
                for o in 0..no {
                    let next = self.idx.decode(self.idx.successor(w, a, o));
                    let _ = writeln!(out, "{name},{a},{n},{next},{},{mean}", self.trans_count(w, a, o));
                }
            }
        }
        out
    }
}

fn check_alphabet(traj: &Trajectory, idx: &WindowIndex) -> Result<()> {
    let bad_a = traj.actions.iter().any(|&a| a >= idx.n_actions());
    let bad_o = traj.observations.iter().any(|&o| o >= idx.n_obs());
    if bad_a || bad_o || traj.observations.len() != traj.len() || traj.rewards.len() != traj.len() {
        return Err(Error::Parameter("trajectory does not match the window alphabet".into()));
    }
    Ok(())
}

/// Single pass crediting the agent's own window at each step.
pub fn count_windows(traj: &Trajectory, idx: &WindowIndex) -> Result<CountsModel> {
    count_windows_with(traj, idx, CountingScheme::CurrentWindow)
}

pub fn count_windows_with(traj: &Trajectory, idx: &WindowIndex, scheme: CountingScheme) -> Result<CountsModel> {
    count_windows_timed(traj, idx, scheme, RewardTiming::PreviousObservation)
}

/// Counting with the reward timing of the generating POMDP. Only the
/// previous-observation timing pins the empty window's reward to 0.
pub fn count_windows_timed(
    traj: &Trajectory,
    idx: &WindowIndex,
    scheme: CountingScheme,
    timing: RewardTiming,
) -> Result<CountsModel> {
    check_alphabet(traj, idx)?;
    let empty_reward_is_zero = timing == RewardTiming::PreviousObservation;
    let mut counts = CountsModel::empty(idx, scheme);
    counts.steps = traj.len();
    match scheme {
        CountingScheme::CurrentWindow => {
            let mut w = 0;
            for t in 0..traj.len() {
                let (a, o) = (traj.actions[t], traj.observations[t]);
                counts.record(w, a, o, traj.rewards[t]);
                w = idx.successor(w, a, o);
            }
        }
        CountingScheme::AllSuffixes => {
            // suffixes[k] is the index of the length-k suffix of the current window
            let m = idx.m();
            let mut suffixes = vec![0usize; m + 1];
            let mut next = vec![0usize; m + 1];
            for t in 0..traj.len() {
                let (a, o) = (traj.actions[t], traj.observations[t]);
                let live = t.min(m);
                // r_t pairs a_t with o_{t-1}, which the empty suffix does not
                // contain; the empty window's reward is 0 by convention
                let r_empty = if t == 0 || !empty_reward_is_zero { traj.rewards[t] } else { 0.0 };
                counts.record(0, a, o, r_empty);
                for &w in &suffixes[1..=live] {
                    counts.record(w, a, o, traj.rewards[t]);
                }
                for k in 1..=(live + 1).min(m) {
                    next[k] = idx.successor(suffixes[k - 1], a, o);
                }
                std::mem::swap(&mut suffixes, &mut next);
                suffixes[0] = 0;
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationError {
    /// `max |P^m - P̂^m|` over visited `(w, a)` and their successors.
    pub p_err: f64,
    /// `max |r^m - r̂^m|` over visited `(w, a)`.
    pub r_err: f64,
    /// Reachable `(w, a)` pairs never visited.
    pub unvisited: usize,
    /// `p_err` restricted to full-length windows.
    pub p_err_full: f64,
}

pub fn estimation_error(est: &SuperstateModel, exact: &SuperstateModel) -> Result<EstimationError> {
    if est.index() != exact.index() {
        return Err(Error::Parameter("models are built on different window indices".into()));
    }
    if exact.kind() != ModelKind::Exact {
        return Err(Error::Parameter("reference model must be exact".into()));
    }
    let idx = exact.index();
    let mut out = EstimationError { p_err: 0.0, r_err: 0.0, unvisited: 0, p_err_full: 0.0 };
    for w in (0..idx.size()).filter(|&w| exact.is_reachable(w)) {
        let full = idx.len_of(w) == idx.m();
        for a in 0..idx.n_actions() {
            if !est.is_visited(w, a) {
                out.unvisited += 1;
                continue;
            }
            for (p, q) in est.row(w, a).iter().zip(exact.row(w, a)) {
                let d = (p - q).abs();
                out.p_err = out.p_err.max(d);
                if full {
                    out.p_err_full = out.p_err_full.max(d);
                }
            }
            out.r_err = out.r_err.max((est.reward(w, a) - exact.reward(w, a)).abs());
        }
    }
    Ok(out)
}
