//! Dense enumeration of action-observation windows of length at most `m`.
//!
//! Windows are indexed length-major: index 0 is the empty window, then all
//! windows of length 1, then length 2, and so on. Within a length, windows are
//! ordered lexicographically by pairs, where a pair `(a, o)` has digit
//! `a * O + o` and the oldest pair is the most significant digit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub action: usize,
    pub obs: usize,
}

impl Pair {
    pub fn new(action: usize, obs: usize) -> Self {
        Self { action, obs }
    }
}

/// A sequence of action-observation pairs, oldest first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window(pub Vec<Pair>);

impl Window {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.0
    }

    pub fn last_obs(&self) -> Option<usize> {
        self.0.last().map(|p| p.obs)
    }
}

impl From<Vec<(usize, usize)>> for Window {
    fn from(v: Vec<(usize, usize)>) -> Self {
        Self(v.into_iter().map(|(a, o)| Pair::new(a, o)).collect())
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("∅");
        }
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "a{}o{}", p.action, p.obs)?;
        }
        Ok(())
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "∅" || s.is_empty() {
            return Ok(Window::empty());
        }
        let bad = || Error::Parameter(format!("malformed window text {s:?}"));
        let mut pairs = Vec::new();
        for tok in s.split('|') {
            let rest = tok.strip_prefix('a').ok_or_else(bad)?;
            let (a, o) = rest.split_once('o').ok_or_else(bad)?;
            pairs.push(Pair::new(a.parse().map_err(|_| bad())?, o.parse().map_err(|_| bad())?));
        }
        Ok(Window(pairs))
    }
}

/// Bijection between windows of length `0..=m` and dense indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowIndex {
    m: usize,
    n_actions: usize,
    n_obs: usize,
    n_pairs: usize,
    /// `offsets[n]` is the first index of length-`n` windows; `offsets[m + 1]` is the size.
    offsets: Vec<usize>,
    /// `powers[n] = (A*O)^n`.
    powers: Vec<usize>,
}

impl WindowIndex {
    pub fn build(n_actions: usize, n_obs: usize, m: usize) -> Result<Self> {
        if n_actions == 0 || n_obs == 0 || m == 0 {
            return Err(Error::Parameter(format!(
                "window index needs A >= 1, O >= 1, m >= 1 (got A={n_actions}, O={n_obs}, m={m})"
            )));
        }
        let required = Self::required_size(n_actions, n_obs, m);
        let n_pairs = n_actions
            .checked_mul(n_obs)
            .ok_or(Error::Capacity { what: "window index", required })?;
        let mut offsets = Vec::with_capacity(m + 2);
        let mut powers = Vec::with_capacity(m + 1);
        let mut total = 0usize;
        let mut pow = 1usize;
        for n in 0..=m {
            if n > 0 {
                pow = pow
                    .checked_mul(n_pairs)
                    .ok_or(Error::Capacity { what: "window index", required })?;
            }
            powers.push(pow);
            offsets.push(total);
            total = total
                .checked_add(pow)
                .ok_or(Error::Capacity { what: "window index", required })?;
        }
        offsets.push(total);
        Ok(Self { m, n_actions, n_obs, n_pairs, offsets, powers })
    }

    /// Closed-form `sum_{n=0}^{m} (A*O)^n`, saturating at `u128::MAX`.
    pub fn required_size(n_actions: usize, n_obs: usize, m: usize) -> u128 {
        let k = (n_actions as u128).saturating_mul(n_obs as u128);
        let mut total: u128 = 0;
        let mut pow: u128 = 1;
        for n in 0..=m {
            if n > 0 {
                pow = pow.saturating_mul(k);
            }
            total = total.saturating_add(pow);
        }
        total
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn size(&self) -> usize {
        self.offsets[self.m + 1]
    }

    /// Index range occupied by windows of length `n`.
    pub fn length_range(&self, n: usize) -> std::ops::Range<usize> {
        self.offsets[n]..self.offsets[n + 1]
    }

    pub fn len_of(&self, idx: usize) -> usize {
        debug_assert!(idx < self.size());
        // offsets is sorted and short; a linear scan beats binary search for m <= 8
        let mut n = 0;
        while idx >= self.offsets[n + 1] {
            n += 1;
        }
        n
    }

    fn digit(&self, a: usize, o: usize) -> usize {
        a * self.n_obs + o
    }

    pub fn encode(&self, w: &Window) -> Result<usize> {
        if w.len() > self.m {
            return Err(Error::Parameter(format!("window {w} longer than m = {}", self.m)));
        }
        let mut rank = 0usize;
        for p in w.pairs() {
            if p.action >= self.n_actions || p.obs >= self.n_obs {
                return Err(Error::Parameter(format!("pair a{}o{} out of range", p.action, p.obs)));
            }
            rank = rank * self.n_pairs + self.digit(p.action, p.obs);
        }
        Ok(self.offsets[w.len()] + rank)
    }

    pub fn decode(&self, idx: usize) -> Window {
        let n = self.len_of(idx);
        let mut rank = idx - self.offsets[n];
        let mut pairs = vec![Pair::new(0, 0); n];
        for slot in pairs.iter_mut().rev() {
            let d = rank % self.n_pairs;
            rank /= self.n_pairs;
            *slot = Pair::new(d / self.n_obs, d % self.n_obs);
        }
        Window(pairs)
    }

    /// Index of `shift_append(decode(idx), a, o)` without materializing windows.
    pub fn successor(&self, idx: usize, action: usize, obs: usize) -> usize {
        let n = self.len_of(idx);
        let rank = idx - self.offsets[n];
        let d = self.digit(action, obs);
        if n < self.m {
            self.offsets[n + 1] + rank * self.n_pairs + d
        } else {
            self.offsets[self.m] + (rank % self.powers[self.m - 1]) * self.n_pairs + d
        }
    }

    /// Index of the window with its newest pair removed; `None` for the empty window.
    pub fn prefix(&self, idx: usize) -> Option<usize> {
        let n = self.len_of(idx);
        if n == 0 {
            return None;
        }
        let rank = idx - self.offsets[n];
        Some(self.offsets[n - 1] + rank / self.n_pairs)
    }

    /// Newest pair of the window at `idx`.
    pub fn last_pair(&self, idx: usize) -> Option<Pair> {
        let n = self.len_of(idx);
        if n == 0 {
            return None;
        }
        let d = (idx - self.offsets[n]) % self.n_pairs;
        Some(Pair::new(d / self.n_obs, d % self.n_obs))
    }

    pub fn last_obs(&self, idx: usize) -> Option<usize> {
        self.last_pair(idx).map(|p| p.obs)
    }

    /// Append `(a, o)` to `w`, dropping the oldest pair when the result would exceed `m`.
    pub fn shift_append(&self, w: &Window, action: usize, obs: usize) -> Window {
        debug_assert!(w.len() <= self.m);
        let mut pairs = w.0.clone();
        pairs.push(Pair::new(action, obs));
        if pairs.len() > self.m {
            pairs.remove(0);
        }
        Window(pairs)
    }

    /// Window read by the agent at 1-based step `t`: pairs `max(1, t-m) ..= t-1`.
    pub fn window_at(&self, traj: &Trajectory, t: usize) -> Window {
        assert!(t >= 1 && t <= traj.len() + 1, "step {t} outside 1..={}", traj.len() + 1);
        let end = t - 1;
        let start = end.saturating_sub(self.m);
        Window(
            (start..end)
                .map(|i| Pair::new(traj.actions[i], traj.observations[i]))
                .collect(),
        )
    }

    /// Index of [`window_at`](Self::window_at).
    pub fn window_index_at(&self, traj: &Trajectory, t: usize) -> usize {
        let end = t - 1;
        let start = end.saturating_sub(self.m);
        let mut idx = 0;
        for i in start..end {
            idx = self.successor(idx, traj.actions[i], traj.observations[i]);
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes() {
        assert_eq!(WindowIndex::build(3, 2, 2).unwrap().size(), 43);
        assert_eq!(WindowIndex::build(1, 1, 4).unwrap().size(), 5);
        let idx = WindowIndex::build(2, 2, 1).unwrap();
        assert_eq!(idx.size(), 5);
        assert_eq!(idx.decode(0), Window::empty());
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(matches!(WindowIndex::build(0, 2, 1), Err(Error::Parameter(_))));
        assert!(matches!(WindowIndex::build(2, 2, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn capacity_error_reports_required_count() {
        match WindowIndex::build(1 << 20, 1 << 20, 8) {
            Err(Error::Capacity { required, .. }) => assert!(required > u64::MAX as u128),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn ordering_is_length_major_then_lexicographic() {
        let idx = WindowIndex::build(2, 2, 2).unwrap();
        let all: Vec<Window> = (0..idx.size()).map(|i| idx.decode(i)).collect();
        for pair in all.windows(2) {
            let (x, y) = (&pair[0], &pair[1]);
            assert!(x.len() < y.len() || (x.len() == y.len() && x.0 < y.0));
        }
        assert_eq!(idx.decode(1), Window::from(vec![(0, 0)]));
        assert_eq!(idx.decode(2), Window::from(vec![(0, 1)]));
        assert_eq!(idx.decode(3), Window::from(vec![(1, 0)]));
    }

    #[test]
    fn shift_append_examples() {
        let idx = WindowIndex::build(3, 2, 2).unwrap();
        let w = Window::from(vec![(0, 0), (1, 1)]);
        assert_eq!(idx.shift_append(&w, 2, 0), Window::from(vec![(1, 1), (2, 0)]));
        assert_eq!(idx.shift_append(&Window::empty(), 1, 1), Window::from(vec![(1, 1)]));
    }

    #[test]
    fn window_text_form() {
        let w = Window::from(vec![(0, 1), (2, 0)]);
        assert_eq!(w.to_string(), "a0o1|a2o0");
        assert_eq!(Window::empty().to_string(), "∅");
        assert_eq!("a0o1|a2o0".parse::<Window>().unwrap(), w);
        assert_eq!("∅".parse::<Window>().unwrap(), Window::empty());
        assert!("b0o1".parse::<Window>().is_err());
    }

    #[test]
    fn successor_fan_out_is_o_distinct_windows() {
        let idx = WindowIndex::build(3, 2, 2).unwrap();
        for w in 0..idx.size() {
            for a in 0..3 {
                let mut succ: Vec<usize> = (0..2).map(|o| idx.successor(w, a, o)).collect();
                succ.sort_unstable();
                succ.dedup();
                assert_eq!(succ.len(), 2);
            }
        }
    }

    proptest! {
        #[test]
        fn encode_decode_bijection(a in 1usize..4, o in 1usize..4, m in 1usize..4) {
            let idx = WindowIndex::build(a, o, m).unwrap();
            prop_assert_eq!(idx.size() as u128, WindowIndex::required_size(a, o, m));
            prop_assert!(idx.size() <= 2 * (a * o).pow(m as u32) || a * o == 1);
            for i in 0..idx.size() {
                let w = idx.decode(i);
                prop_assert_eq!(idx.encode(&w).unwrap(), i);
                prop_assert_eq!(idx.len_of(i), w.len());
                prop_assert_eq!(idx.last_obs(i), w.last_obs());
            }
        }

        #[test]
        fn successor_matches_shift_append(
            seq in proptest::collection::vec((0usize..3, 0usize..2), 0..12),
            m in 1usize..4,
        ) {
            let idx = WindowIndex::build(3, 2, m).unwrap();
            let mut w = Window::empty();
            let mut i = 0;
            for (t, &(a, o)) in seq.iter().enumerate() {
                let next = idx.shift_append(&w, a, o);
                prop_assert_eq!(next.len(), (w.len() + 1).min(m));
                prop_assert_eq!(next.len(), (t + 1).min(m));
                i = idx.successor(i, a, o);
                prop_assert_eq!(idx.encode(&next).unwrap(), i);
                if next.len() > 0 && next.len() < m {
                    prop_assert_eq!(idx.prefix(i), Some(idx.encode(&w).unwrap()));
                }
                w = next;
            }
        }
    }
}
