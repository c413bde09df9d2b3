//! Tabular POMDP representation, assumption checks, built-in environments and
//! trajectory sampling.
//!
//! Reward timing defaults to [`RewardTiming::PreviousObservation`]: the reward
//! at step `t` pairs the current action with the previous observation,
//! `r_t = reward[o_{t-1}][a_t]`, and `r_1 = 0`. Under this convention a window
//! policy has the same value in the POMDP as in the superstate MDP.
//! [`RewardTiming::CurrentObservation`] instead pays `reward[o_t][a_t]` for the
//! observation emitted after acting, which the agent cannot see beforehand.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planning::WindowPolicy;
use crate::rng::{stream, StreamRng};

/// Absolute tolerance on row sums. Rows off by less are renormalized on load.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Probe action indices.
pub mod probe {
    pub const PROBE: usize = 0;
    pub const A1: usize = 1;
    pub const A2: usize = 2;
    pub const O1: usize = 0;
    pub const O2: usize = 1;
}

/// Which observation the reward at step `t` is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardTiming {
    /// `r_t = reward[o_{t-1}][a_t]`, `r_1 = 0`.
    #[default]
    PreviousObservation,
    /// `r_t = reward[o_t][a_t]`.
    CurrentObservation,
}

impl std::str::FromStr for RewardTiming {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "previous" | "previous_observation" => Ok(Self::PreviousObservation),
            "current" | "current_observation" => Ok(Self::CurrentObservation),
            _ => Err(Error::Parameter(format!("unknown reward timing {s:?}"))),
        }
    }
}

/// Interchange form; also the JSON file schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PomdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_obs: usize,
    pub trans: Vec<Vec<Vec<f64>>>,
    pub obs: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub init_dist: Vec<f64>,
    pub discount: f64,
    #[serde(default, skip_serializing_if = "is_default_timing")]
    pub reward_timing: RewardTiming,
}

fn is_default_timing(t: &RewardTiming) -> bool {
    *t == RewardTiming::default()
}

/// Finite POMDP with action-dependent observation kernel.
///
/// `trans[s][a][s']`, `obs[s][a][o]`, `reward[o][a]`. The observation at step
/// `t` is emitted from the state at step `t` under the action taken at `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabularPomdp {
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    trans: Vec<Vec<Vec<f64>>>,
    obs: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    init_dist: Vec<f64>,
    discount: f64,
    reward_timing: RewardTiming,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub assumption1_ok: bool,
    pub assumption2_ok: bool,
}

impl StabilityReport {
    pub fn assumptions_hold(&self) -> bool {
        self.assumption1_ok && self.assumption2_ok
    }
}

fn check_distribution(row: &mut [f64], what: impl Fn() -> String) -> Result<()> {
    if let Some(x) = row.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::Validation(format!("{} has invalid entry {x}", what())));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::Validation(format!("{} sums to {sum}", what())));
    }
    // leave last-ulp rounding alone so that save/load round trips are exact
    if (sum - 1.0).abs() > 1e-12 {
        row.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(())
}

impl TabularPomdp {
    /// Build and check a POMDP. Rows within [`ROW_SUM_TOL`] of a distribution
    /// are renormalized; anything further off is a validation error.
    pub fn new(
        mut trans: Vec<Vec<Vec<f64>>>,
        mut obs: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        mut init_dist: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        let n_states = init_dist.len();
        let n_actions = reward.first().map_or(0, Vec::len);
        let n_obs = reward.len();
        if n_states == 0 || n_actions == 0 || n_obs == 0 {
            return Err(Error::Validation("empty state, action or observation set".into()));
        }
        if trans.len() != n_states || obs.len() != n_states {
            return Err(Error::Validation(format!(
                "kernels must have {n_states} state rows (trans {}, obs {})",
                trans.len(),
                obs.len()
            )));
        }
        for s in 0..n_states {
            if trans[s].len() != n_actions || obs[s].len() != n_actions {
                return Err(Error::Validation(format!("state {s}: expected {n_actions} action rows")));
            }
            for a in 0..n_actions {
                if trans[s][a].len() != n_states {
                    return Err(Error::Validation(format!("trans[{s}][{a}] has wrong length")));
                }
                if obs[s][a].len() != n_obs {
                    return Err(Error::Validation(format!("obs[{s}][{a}] has wrong length")));
                }
                check_distribution(&mut trans[s][a], || format!("trans[{s}][{a}]"))?;
                check_distribution(&mut obs[s][a], || format!("obs[{s}][{a}]"))?;
            }
        }
        for (o, row) in reward.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::Validation(format!("reward[{o}] has wrong length")));
            }
            for (a, &r) in row.iter().enumerate() {
                if !(-1.0..=1.0).contains(&r) {
                    return Err(Error::Validation(format!("reward[{o}][{a}] = {r} outside [-1, 1]")));
                }
            }
        }
        check_distribution(&mut init_dist, || "init_dist".to_string())?;
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Validation(format!("discount {discount} outside (0, 1)")));
        }
        Ok(Self {
            n_states,
            n_actions,
            n_obs,
            trans,
            obs,
            reward,
            init_dist,
            discount,
            reward_timing: RewardTiming::default(),
        })
    }

    pub fn from_file(file: PomdpFile) -> Result<Self> {
        let declared = (file.n_states, file.n_actions, file.n_obs);
        let p = Self::new(file.trans, file.obs, file.reward, file.init_dist, file.discount)?
            .with_reward_timing(file.reward_timing);
        if declared != (p.n_states, p.n_actions, p.n_obs) {
            return Err(Error::Validation(format!(
                "declared sizes {declared:?} do not match tables ({}, {}, {})",
                p.n_states, p.n_actions, p.n_obs
            )));
        }
        Ok(p)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Resolve a built-in name (`probe`) or a JSON file path.
    pub fn from_source(source: &str, discount: Option<f64>) -> Result<Self> {
        let p = match source {
            "probe" => probe_env(discount.unwrap_or(0.95))?,
            path => Self::load(path)?,
        };
        match discount {
            Some(g) if g != p.discount => p.with_discount(g),
            _ => Ok(p),
        }
    }

    pub fn to_file(&self) -> PomdpFile {
        PomdpFile {
            n_states: self.n_states,
            n_actions: self.n_actions,
            n_obs: self.n_obs,
            trans: self.trans.clone(),
            obs: self.obs.clone(),
            reward: self.reward.clone(),
            init_dist: self.init_dist.clone(),
            discount: self.discount,
            reward_timing: self.reward_timing,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Validation(format!("discount {discount} outside (0, 1)")));
        }
        self.discount = discount;
        Ok(self)
    }

    pub fn with_reward_timing(mut self, timing: RewardTiming) -> Self {
        self.reward_timing = timing;
        self
    }

    pub fn reward_timing(&self) -> RewardTiming {
        self.reward_timing
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }
    pub fn discount(&self) -> f64 {
        self.discount
    }
    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }
    pub fn trans_row(&self, s: usize, a: usize) -> &[f64] {
        &self.trans[s][a]
    }
    pub fn obs_row(&self, s: usize, a: usize) -> &[f64] {
        &self.obs[s][a]
    }
    pub fn trans(&self, s: usize, a: usize, next: usize) -> f64 {
        self.trans[s][a][next]
    }
    pub fn obs(&self, s: usize, a: usize, o: usize) -> f64 {
        self.obs[s][a][o]
    }
    pub fn reward(&self, o: usize, a: usize) -> f64 {
        self.reward[o][a]
    }

    /// Exhaustive minimum scan for the minorization constants.
    pub fn validate(&self) -> StabilityReport {
        let alpha = self.trans.iter().flatten().flatten().copied().fold(f64::INFINITY, f64::min);
        let beta = self.obs.iter().flatten().flatten().copied().fold(f64::INFINITY, f64::min);
        let rho = self.n_states as f64 * alpha * beta;
        StabilityReport {
            alpha,
            beta,
            rho,
            assumption1_ok: alpha > 0.0,
            assumption2_ok: beta > 0.0,
        }
    }
}

/// The two-state probing environment.
///
/// States persist with probability 0.95. Probing reveals the state with
/// probability 0.95 and otherwise emits a uniform observation; the two
/// guessing actions reveal it with probability 0.05 only. Guessing the state
/// right pays 1, wrong pays -1, probing pays 0.
pub fn probe_env(discount: f64) -> Result<TabularPomdp> {
    use probe::*;
    let trans = (0..2)
        .map(|s| (0..3).map(|_| (0..2).map(|t| if t == s { 0.95 } else { 0.05 }).collect()).collect())
        .collect();
    let obs = (0..2)
        .map(|s| {
            (0..3)
                .map(|a| {
                    // reveal probability plus half of the uniform remainder
                    let (right, wrong) = if a == PROBE { (0.975, 0.025) } else { (0.525, 0.475) };
                    (0..2).map(|o| if o == s { right } else { wrong }).collect()
                })
                .collect()
        })
        .collect();
    let mut reward = vec![vec![0.0; 3]; 2];
    reward[O1][A1] = 1.0;
    reward[O2][A2] = 1.0;
    reward[O1][A2] = -1.0;
    reward[O2][A1] = -1.0;
    TabularPomdp::new(trans, obs, reward, vec![0.5, 0.5], discount)
}

fn random_row(rng: &mut StreamRng, len: usize, floor: f64) -> Vec<f64> {
    // exponential spacings give a uniform draw from the simplex
    let raw: Vec<f64> = (0..len).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let slack = 1.0 - len as f64 * floor;
    raw.iter().map(|x| floor + slack * (x / total)).collect()
}

/// Seeded random POMDP whose kernels respect the given entrywise floors.
pub fn random_pomdp(
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    alpha_floor: f64,
    beta_floor: f64,
    seed: u64,
) -> Result<TabularPomdp> {
    if n_states == 0 || n_actions == 0 || n_obs == 0 {
        return Err(Error::Parameter("S, A and O must be positive".into()));
    }
    if alpha_floor < 0.0 || n_states as f64 * alpha_floor > 1.0 + 1e-12 {
        return Err(Error::Parameter(format!("alpha floor {alpha_floor} infeasible for S = {n_states}")));
    }
    if beta_floor < 0.0 || n_obs as f64 * beta_floor > 1.0 + 1e-12 {
        return Err(Error::Parameter(format!("beta floor {beta_floor} infeasible for O = {n_obs}")));
    }
    let mut rng = stream(seed);
    let trans = (0..n_states)
        .map(|_| (0..n_actions).map(|_| random_row(&mut rng, n_states, alpha_floor)).collect())
        .collect();
    let obs = (0..n_states)
        .map(|_| (0..n_actions).map(|_| random_row(&mut rng, n_obs, beta_floor)).collect())
        .collect();
    let reward = (0..n_obs)
        .map(|_| (0..n_actions).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let init = random_row(&mut rng, n_states, 0.0);
    TabularPomdp::new(trans, obs, reward, init, 0.95)
}

/// A single rollout. `hidden_states` is for diagnostics only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub actions: Vec<usize>,
    pub observations: Vec<usize>,
    pub rewards: Vec<f64>,
    pub seed: u64,
    pub hidden_states: Option<Vec<usize>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PolicySpec<'a> {
    Uniform,
    Window(&'a WindowPolicy),
}

pub(crate) fn sample_categorical(rng: &mut StreamRng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum; take the last
    // index with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

impl TabularPomdp {
    pub fn sample_trajectory(&self, policy: PolicySpec<'_>, len: usize, seed: u64) -> Result<Trajectory> {
        if len == 0 {
            return Err(Error::Parameter("trajectory length must be at least 1".into()));
        }
        if let PolicySpec::Window(pi) = policy {
            let idx = pi.index();
            if idx.n_actions() != self.n_actions || idx.n_obs() != self.n_obs {
                return Err(Error::Parameter(format!(
                    "policy alphabet (A={}, O={}) does not match POMDP (A={}, O={})",
                    idx.n_actions(),
                    idx.n_obs(),
                    self.n_actions,
                    self.n_obs
                )));
            }
        }
        let mut rng = stream(seed);
        let mut traj = Trajectory {
            actions: Vec::with_capacity(len),
            observations: Vec::with_capacity(len),
            rewards: Vec::with_capacity(len),
            seed,
            hidden_states: Some(Vec::with_capacity(len)),
        };
        let states = traj.hidden_states.as_mut().unwrap();
        let mut s = sample_categorical(&mut rng, &self.init_dist);
        let mut window = 0usize;
        let mut prev_obs: Option<usize> = None;
        for _ in 0..len {
            let a = match policy {
                PolicySpec::Uniform => rng.gen_range(0..self.n_actions),
                PolicySpec::Window(pi) => pi.action(window),
            };
            let o = sample_categorical(&mut rng, &self.obs[s][a]);
            let r = match self.reward_timing {
                RewardTiming::PreviousObservation => prev_obs.map_or(0.0, |po| self.reward[po][a]),
                RewardTiming::CurrentObservation => self.reward[o][a],
            };
            states.push(s);
            traj.actions.push(a);
            traj.observations.push(o);
            traj.rewards.push(r);
            if let PolicySpec::Window(pi) = policy {
                window = pi.index().successor(window, a, o);
            }
            prev_obs = Some(o);
            s = sample_categorical(&mut rng, &self.trans[s][a]);
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform_pomdp(s: usize, a: usize, o: usize, reward: f64) -> TabularPomdp {
        TabularPomdp::new(
            vec![vec![vec![1.0 / s as f64; s]; a]; s],
            vec![vec![vec![1.0 / o as f64; o]; a]; s],
            vec![vec![reward; a]; o],
            vec![1.0 / s as f64; s],
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn probe_constants() {
        use probe::*;
        let p = probe_env(0.95).unwrap();
        for a in 0..3 {
            assert_eq!(p.trans(0, a, 0), 0.95);
        }
        assert_abs_diff_eq!(p.obs(0, PROBE, O1), 0.975, epsilon = 1e-15);
        assert_abs_diff_eq!(p.obs(0, A1, O1), 0.525, epsilon = 1e-15);
        assert_abs_diff_eq!(p.obs(1, A2, O1), 0.475, epsilon = 1e-15);
        assert_eq!(p.reward(O1, A1), 1.0);
        assert_eq!(p.reward(O2, A2), 1.0);
        assert_eq!(p.reward(O1, A2), -1.0);
        assert_eq!(p.reward(O2, PROBE), 0.0);
    }

    #[test]
    fn probe_stability_constants() {
        let r = probe_env(0.95).unwrap().validate();
        assert_abs_diff_eq!(r.alpha, 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(r.beta, 0.025, epsilon = 1e-15);
        assert_abs_diff_eq!(r.rho, 0.0025, epsilon = 1e-15);
        assert!(r.assumptions_hold());
    }

    #[test]
    fn uniform_kernels_report() {
        let r = uniform_pomdp(4, 2, 2, 0.0).validate();
        assert_eq!((r.alpha, r.beta, r.rho), (0.25, 0.5, 0.5));
        assert_eq!(r, uniform_pomdp(4, 2, 2, 0.0).validate());
    }

    #[test]
    fn zero_transition_fails_assumption1() {
        let mut f = uniform_pomdp(2, 1, 2, 0.0).to_file();
        f.trans[0][0] = vec![1.0, 0.0];
        let r = TabularPomdp::from_file(f).unwrap().validate();
        assert_eq!(r.alpha, 0.0);
        assert!(!r.assumption1_ok);
        assert_eq!(r.rho, 0.0);
    }

    #[test]
    fn structural_errors_name_the_row() {
        let mut f = uniform_pomdp(2, 2, 2, 0.0).to_file();
        f.obs[1][0] = vec![0.6, 0.6];
        let err = TabularPomdp::from_file(f).unwrap_err().to_string();
        assert!(err.contains("obs[1][0]"), "{err}");

        let mut f = uniform_pomdp(2, 2, 2, 0.0).to_file();
        f.reward[0][1] = 1.5;
        assert!(TabularPomdp::from_file(f).unwrap_err().to_string().contains("reward[0][1]"));

        let f = uniform_pomdp(2, 2, 2, 0.0).to_file();
        assert!(TabularPomdp::new(f.trans, f.obs, f.reward, f.init_dist, 1.0).is_err());
    }

    #[test]
    fn near_unit_rows_are_renormalized() {
        let mut f = uniform_pomdp(2, 1, 2, 0.0).to_file();
        f.trans[0][0] = vec![0.5 + 4e-10, 0.5];
        let p = TabularPomdp::from_file(f).unwrap();
        assert_abs_diff_eq!(p.trans_row(0, 0).iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let p = probe_env(0.9).unwrap();
        let q = TabularPomdp::from_json_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn random_pomdp_floors_and_determinism() {
        let p = random_pomdp(3, 2, 2, 0.1, 0.1, 7).unwrap();
        let r = p.validate();
        assert!(r.alpha >= 0.1 && r.beta >= 0.1);
        assert_eq!(p, random_pomdp(3, 2, 2, 0.1, 0.1, 7).unwrap());
        assert_ne!(p, random_pomdp(3, 2, 2, 0.1, 0.1, 8).unwrap());

        let u = random_pomdp(2, 1, 2, 0.5, 0.5, 1).unwrap();
        for s in 0..2 {
            assert_eq!(u.trans_row(s, 0), &[0.5, 0.5]);
            assert_eq!(u.obs_row(s, 0), &[0.5, 0.5]);
        }
        assert!(random_pomdp(3, 2, 2, 0.4, 0.1, 1).is_err());
        assert!(random_pomdp(3, 2, 2, 0.1, 0.6, 1).is_err());
    }

    #[test]
    fn reward_timing_convention() {
        let p = uniform_pomdp(3, 2, 2, 0.5);
        let t = p.sample_trajectory(PolicySpec::Uniform, 5, 3).unwrap();
        assert_eq!(t.rewards, vec![0.0, 0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn current_observation_timing() {
        let p = probe_env(0.95).unwrap().with_reward_timing(RewardTiming::CurrentObservation);
        let t = p.sample_trajectory(PolicySpec::Uniform, 200, 11).unwrap();
        for i in 0..t.len() {
            assert_eq!(t.rewards[i], p.reward(t.observations[i], t.actions[i]));
        }
        let q = TabularPomdp::from_json_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(q.reward_timing(), RewardTiming::CurrentObservation);
        assert!(!probe_env(0.95).unwrap().to_json().unwrap().contains("reward_timing"));
    }

    #[test]
    fn rewards_pair_previous_observation_with_current_action() {
        let p = probe_env(0.95).unwrap();
        let t = p.sample_trajectory(PolicySpec::Uniform, 200, 11).unwrap();
        for i in 1..t.len() {
            assert_eq!(t.rewards[i], p.reward(t.observations[i - 1], t.actions[i]));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = probe_env(0.95).unwrap();
        let a = p.sample_trajectory(PolicySpec::Uniform, 500, 9).unwrap();
        assert_eq!(a, p.sample_trajectory(PolicySpec::Uniform, 500, 9).unwrap());
        assert_ne!(a, p.sample_trajectory(PolicySpec::Uniform, 500, 10).unwrap());
        assert!(p.sample_trajectory(PolicySpec::Uniform, 0, 9).is_err());
    }

    #[test]
    fn uniform_action_frequencies() {
        let p = probe_env(0.95).unwrap();
        let t = p.sample_trajectory(PolicySpec::Uniform, 10_000, 1).unwrap();
        for a in 0..3 {
            let f = t.actions.iter().filter(|&&x| x == a).count() as f64 / 1e4;
            assert!((f - 1.0 / 3.0).abs() < 0.02, "action {a}: {f}");
        }
    }

    #[test]
    fn hidden_transitions_match_kernel() {
        let p = probe_env(0.95).unwrap();
        let t = p.sample_trajectory(PolicySpec::Uniform, 200_000, 2).unwrap();
        let s = t.hidden_states.as_ref().unwrap();
        let mut counts = [[0usize; 2]; 2];
        for w in s.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        for from in 0..2 {
            let n = (counts[from][0] + counts[from][1]) as f64;
            let stay = counts[from][from] as f64 / n;
            let se = (0.95 * 0.05 / n).sqrt();
            assert!((stay - 0.95).abs() < 3.0 * se, "state {from}: {stay}");
        }
    }
}
