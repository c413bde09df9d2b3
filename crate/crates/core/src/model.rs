//! Superstate MDP over windows: storage, exact construction from a POMDP and
//! the window-versus-history transition gap auditor.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{belief_update, fold_pairs, BeliefVector};
use crate::error::{Error, Result};
use crate::pomdp::{RewardTiming, TabularPomdp};
use crate::window::{Window, WindowIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Exact,
    Estimated,
}

/// Transition and reward tables over windows.
///
/// Each `(w, a)` row has exactly `O` candidate successors,
/// `successor(w, a, o)` for `o in 0..O`, so rows are stored densely over
/// observations: `probs[(w * A + a) * O + o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperstateModel {
    idx: WindowIndex,
    probs: Vec<f64>,
    reward: Vec<f64>,
    reachable: Vec<bool>,
    visited: Vec<bool>,
    kind: ModelKind,
}

impl SuperstateModel {
    /// Assemble a model from raw tables, checking the row invariants.
    ///
    /// Rows of reachable, visited pairs must sum to 1 within 1e-9; all other
    /// rows must be identically zero.
    pub fn from_parts(
        idx: WindowIndex,
        probs: Vec<f64>,
        reward: Vec<f64>,
        reachable: Vec<bool>,
        visited: Vec<bool>,
        kind: ModelKind,
    ) -> Result<Self> {
        let (nw, na, no) = (idx.size(), idx.n_actions(), idx.n_obs());
        if probs.len() != nw * na * no || reward.len() != nw * na || reachable.len() != nw || visited.len() != nw * na {
            return Err(Error::Parameter("superstate table sizes do not match the window index".into()));
        }
        for w in 0..nw {
            for a in 0..na {
                let row = &probs[(w * na + a) * no..(w * na + a + 1) * no];
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::Validation(format!("row ({}, a{a}) has an invalid entry", idx.decode(w))));
                }
                let sum: f64 = row.iter().sum();
                let live = reachable[w] && visited[w * na + a];
                if live && (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Validation(format!("row ({}, a{a}) sums to {sum}", idx.decode(w))));
                }
                if !live && sum != 0.0 {
                    return Err(Error::Validation(format!("inactive row ({}, a{a}) is not zero", idx.decode(w))));
                }
                let r = reward[w * na + a];
                if !(-1.0..=1.0).contains(&r) {
                    return Err(Error::Validation(format!("reward ({}, a{a}) = {r} outside [-1, 1]", idx.decode(w))));
                }
            }
        }
        Ok(Self { idx, probs, reward, reachable, visited, kind })
    }

    pub fn index(&self) -> &WindowIndex {
        &self.idx
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n_windows(&self) -> usize {
        self.idx.size()
    }

    pub fn n_actions(&self) -> usize {
        self.idx.n_actions()
    }

    pub fn n_obs(&self) -> usize {
        self.idx.n_obs()
    }

    /// Probabilities of the `O` successors of `(w, a)`, indexed by observation.
    pub fn row(&self, w: usize, a: usize) -> &[f64] {
        let no = self.n_obs();
        let base = (w * self.n_actions() + a) * no;
        &self.probs[base..base + no]
    }

    /// Dense lookup `P(w' | w, a)`; zero for anything that is not a successor.
    pub fn trans(&self, w: usize, a: usize, next: usize) -> f64 {
        (0..self.n_obs())
            .filter(|&o| self.idx.successor(w, a, o) == next)
            .map(|o| self.row(w, a)[o])
            .sum()
    }

    pub fn reward(&self, w: usize, a: usize) -> f64 {
        self.reward[w * self.n_actions() + a]
    }

    pub fn is_reachable(&self, w: usize) -> bool {
        self.reachable[w]
    }

    pub fn is_visited(&self, w: usize, a: usize) -> bool {
        self.visited[w * self.n_actions() + a]
    }

    /// Reachable `(w, a)` pairs with no data behind them.
    pub fn unvisited_count(&self) -> usize {
        (0..self.n_windows())
            .filter(|&w| self.reachable[w])
            .map(|w| (0..self.n_actions()).filter(|&a| !self.is_visited(w, a)).count())
            .sum()
    }

    pub(crate) fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub(crate) fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub(crate) fn reachable_flags(&self) -> &[bool] {
        &self.reachable
    }

    /// CSV dump: `window,action,successor,probability,reward`, one line per
    /// `(w, a, o)` of every reachable window.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window,action,successor,probability,reward\n");
        for w in (0..self.n_windows()).filter(|&w| self.reachable[w]) {
            let name = self.idx.decode(w).to_string();
            for a in 0..self.n_actions() {
                for (o, p) in self.row(w, a).iter().enumerate() {
                    let next = self.idx.decode(self.idx.successor(w, a, o));
                    let _ = writeln!(out, "{name},{a},{next},{},{}", fmt_sig(*p), fmt_sig(self.reward(w, a)));
                }
            }
        }
        out
    }
}

/// Format with 12 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let s = format!("{:.*e}", 11, x);
    // parse back through f64 to drop trailing zeros from the mantissa
    let v: f64 = s.parse().unwrap_or(x);
    format!("{v}")
}

/// Beliefs `b(· | w)` from `prior` for every window, `None` when `Z(w) = 0`.
pub fn all_window_beliefs(pomdp: &TabularPomdp, idx: &WindowIndex, prior: &BeliefVector) -> Vec<Option<BeliefVector>> {
    let mut beliefs: Vec<Option<BeliefVector>> = vec![None; idx.size()];
    beliefs[0] = Some(prior.clone());
    for n in 1..=idx.m() {
        let range = idx.length_range(n);
        let (done, rest) = beliefs.split_at_mut(range.start);
        let done = &*done;
        rest[..range.len()].par_iter_mut().enumerate().for_each(|(i, slot)| {
            let w = range.start + i;
            let parent = idx.prefix(w).expect("non-empty window has a prefix");
            let pair = idx.last_pair(w).expect("non-empty window has a last pair");
            *slot = done[parent]
                .as_ref()
                .and_then(|b| belief_update(pomdp, b, pair.action, pair.obs).ok());
        });
    }
    beliefs
}

/// Exact superstate MDP with beliefs started from the POMDP's initial distribution.
///
/// The reward of `(w, a)` is `reward[last obs of w][a]` (0 for the empty
/// window) under the default timing, and the belief-weighted expected reward
/// of the next observation under [`RewardTiming::CurrentObservation`].
pub fn build_exact(pomdp: &TabularPomdp, m: usize) -> Result<SuperstateModel> {
    build_exact_with_prior(pomdp, m, &BeliefVector::prior(pomdp))
}

pub fn build_exact_with_prior(pomdp: &TabularPomdp, m: usize, prior: &BeliefVector) -> Result<SuperstateModel> {
    if prior.len() != pomdp.n_states() {
        return Err(Error::Parameter("prior dimension does not match the POMDP".into()));
    }
    let idx = WindowIndex::build(pomdp.n_actions(), pomdp.n_obs(), m)?;
    let (nw, na, no) = (idx.size(), idx.n_actions(), idx.n_obs());
    let beliefs = all_window_beliefs(pomdp, &idx, prior);
    let mut probs = vec![0.0; nw * na * no];
    let mut reward = vec![0.0; nw * na];
    let reachable: Vec<bool> = beliefs.iter().map(Option::is_some).collect();
    probs
        .par_chunks_mut(na * no)
        .zip(reward.par_chunks_mut(na))
        .enumerate()
        .for_each(|(w, (prow, rrow))| {
            let Some(b) = &beliefs[w] else { return };
            let last = idx.last_obs(w);
            for a in 0..na {
                let next_obs = b.observation_probs(pomdp, a);
                rrow[a] = match pomdp.reward_timing() {
                    RewardTiming::PreviousObservation => last.map_or(0.0, |o| pomdp.reward(o, a)),
                    RewardTiming::CurrentObservation => {
                        next_obs.iter().enumerate().map(|(o, p)| p * pomdp.reward(o, a)).sum::<f64>().clamp(-1.0, 1.0)
                    }
                };
                prow[a * no..(a + 1) * no].copy_from_slice(&next_obs);
            }
        });
    let visited: Vec<bool> = (0..nw * na).map(|i| reachable[i / na]).collect();
    SuperstateModel::from_parts(idx, probs, reward, reachable, visited, ModelKind::Exact)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub history_len: usize,
    pub window_len: usize,
    /// `max_{a,o} |P^m(w' | w, a) - P^inf(h' | h, a)|`.
    pub gap: f64,
    /// `(1 - rho)^m`.
    pub bound: f64,
    pub pass: bool,
}

/// Compare next-observation probabilities under the full-history belief of
/// `h` with those under the window belief of its last `w_len` pairs.
pub fn lemma1_gap(pomdp: &TabularPomdp, m: usize, h: &Window, w_len: usize) -> Result<GapReport> {
    if h.len() < m || w_len > m {
        return Err(Error::Parameter(format!(
            "need |h| >= m >= w_len (|h| = {}, m = {m}, w_len = {w_len})",
            h.len()
        )));
    }
    let prior = BeliefVector::prior(pomdp);
    let hist_b = fold_pairs(pomdp, &prior, h.pairs())?;
    let win_b = fold_pairs(pomdp, &prior, &h.pairs()[h.len() - w_len..])?;
    let mut gap: f64 = 0.0;
    for a in 0..pomdp.n_actions() {
        let ph = hist_b.observation_probs(pomdp, a);
        let pw = win_b.observation_probs(pomdp, a);
        for (x, y) in ph.iter().zip(&pw) {
            gap = gap.max((x - y).abs());
        }
    }
    let bound = (1.0 - pomdp.validate().rho).powi(m as i32);
    Ok(GapReport { history_len: h.len(), window_len: w_len, gap, bound, pass: gap <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{sample_history, window_belief};
    use crate::pomdp::{probe, probe_env, random_pomdp};
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rows_sum_to_one_and_use_legal_successors() {
        let p = random_pomdp(3, 2, 3, 0.05, 0.05, 9).unwrap();
        let model = build_exact(&p, 2).unwrap();
        let idx = model.index().clone();
        for w in 0..idx.size() {
            assert!(model.is_reachable(w));
            for a in 0..2 {
                assert_abs_diff_eq!(model.row(w, a).iter().sum::<f64>(), 1.0, epsilon = 1e-9);
                let want_len = (idx.len_of(w) + 1).min(2);
                let mut total = 0.0;
                for next in 0..idx.size() {
                    let pr = model.trans(w, a, next);
                    if idx.len_of(next) != want_len {
                        assert_eq!(pr, 0.0);
                    }
                    let succ = idx.decode(next);
                    let legal = (0..3).any(|o| idx.shift_append(&idx.decode(w), a, o) == succ);
                    if !legal {
                        assert_eq!(pr, 0.0);
                    }
                    total += pr;
                }
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn matches_window_belief_definition() {
        let p = random_pomdp(2, 2, 2, 0.1, 0.1, 3).unwrap();
        let model = build_exact(&p, 3).unwrap();
        let idx = model.index();
        let prior = BeliefVector::prior(&p);
        for w in 0..idx.size() {
            let b = window_belief(&p, &prior, &idx.decode(w)).unwrap();
            for a in 0..2 {
                for o in 0..2 {
                    let expect: f64 = (0..2).map(|s| b[s] * p.obs(s, a, o)).sum();
                    assert_abs_diff_eq!(model.row(w, a)[o], expect, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn probe_examples() {
        use probe::*;
        let p = probe_env(0.95).unwrap();
        for m in 1..=3 {
            let model = build_exact(&p, m).unwrap();
            let idx = model.index();
            let next = idx.encode(&Window::from(vec![(PROBE, O1)])).unwrap();
            assert_abs_diff_eq!(model.trans(0, PROBE, next), 0.5, epsilon = 1e-15);
            assert_eq!(model.reward(0, A1), 0.0);
        }
        let model = build_exact(&p, 1).unwrap();
        let w = model.index().encode(&Window::from(vec![(PROBE, O1)])).unwrap();
        assert_eq!(model.reward(w, A1), 1.0);
        assert_eq!(model.reward(w, A2), -1.0);
        assert_eq!(model.unvisited_count(), 0);
        assert_eq!(model.kind(), ModelKind::Exact);
    }

    #[test]
    fn zero_observation_entries_make_windows_unreachable() {
        let p = TabularPomdp::new(
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]]],
            vec![vec![0.5], vec![0.5]],
            vec![0.5, 0.5],
            0.9,
        )
        .unwrap();
        let model = build_exact(&p, 2).unwrap();
        let idx = model.index();
        let never = idx.encode(&Window::from(vec![(0, 1)])).unwrap();
        assert!(!model.is_reachable(never));
        assert!(model.row(never, 0).iter().all(|&x| x == 0.0));
        assert!(model.is_reachable(idx.encode(&Window::from(vec![(0, 0), (0, 0)])).unwrap()));
    }

    #[test]
    fn csv_dump_shape() {
        let p = probe_env(0.95).unwrap();
        let model = build_exact(&p, 1).unwrap();
        let csv = model.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "window,action,successor,probability,reward");
        assert_eq!(lines.len(), 1 + 7 * 3 * 2);
        assert_eq!(lines[1], "∅,0,a0o0,0.5,0");
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(0.5), "0.5");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig(-1.0), "-1");
        assert_eq!(fmt_sig(123456.7890123456), "123456.789012");
    }

    #[test]
    fn gap_vanishes_when_history_is_the_window() {
        let p = probe_env(0.95).unwrap();
        let mut rng = stream(5);
        for m in 1..=3 {
            let h = sample_history(&p, m, &mut rng);
            let r = lemma1_gap(&p, m, &h, m).unwrap();
            assert_eq!(r.gap, 0.0);
            assert!(r.pass);
        }
    }

    #[test]
    fn gap_within_bound_on_probe() {
        let p = probe_env(0.95).unwrap();
        let mut rng = stream(6);
        for _ in 0..50 {
            let h = sample_history(&p, 8, &mut rng);
            let r = lemma1_gap(&p, 3, &h, 3).unwrap();
            assert!(r.pass, "{r:?}");
            assert_abs_diff_eq!(r.bound, (1.0f64 - 0.0025).powi(3), epsilon = 1e-15);
        }
    }

    #[test]
    fn gap_is_zero_under_uniform_transitions() {
        let p = random_pomdp(3, 2, 2, 1.0 / 3.0, 0.1, 2).unwrap();
        let mut rng = stream(7);
        let h = sample_history(&p, 6, &mut rng);
        assert!(lemma1_gap(&p, 2, &h, 2).unwrap().gap < 1e-15);
        assert!(lemma1_gap(&p, 7, &h, 1).is_err());
        assert!(lemma1_gap(&p, 2, &h, 3).is_err());
    }
}
