//! Exact Bayesian filtering over histories and windows, and the filter
//! stability audit.

use std::ops::Index;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::{sample_categorical, TabularPomdp};
use crate::rng::stream;
use crate::window::{Pair, Window};

/// Posterior over hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefVector(Vec<f64>);

impl BeliefVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Parameter("belief has a negative or non-finite entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("belief sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, s: usize) -> Self {
        let mut v = vec![0.0; n];
        v[s] = 1.0;
        Self(v)
    }

    pub fn prior(pomdp: &TabularPomdp) -> Self {
        Self(pomdp.init_dist().to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Predictive probability of each observation when taking `action` now.
    pub fn observation_probs(&self, pomdp: &TabularPomdp, action: usize) -> Vec<f64> {
        let mut out = vec![0.0; pomdp.n_obs()];
        for (s, &bs) in self.0.iter().enumerate() {
            if bs == 0.0 {
                continue;
            }
            for (o, &po) in pomdp.obs_row(s, action).iter().enumerate() {
                out[o] += bs * po;
            }
        }
        out
    }
}

impl Index<usize> for BeliefVector {
    type Output = f64;

    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

/// One filter step: condition the current state on `obs` emitted under
/// `action`, then push through the transition kernel.
///
/// `b'(s') ∝ Σ_s b(s) · obs[s][a][o] · trans[s][a][s']`
pub fn belief_update(pomdp: &TabularPomdp, b: &BeliefVector, action: usize, obs: usize) -> Result<BeliefVector> {
    let n = pomdp.n_states();
    let mut next = vec![0.0; n];
    for s in 0..n {
        let weight = b.0[s] * pomdp.obs(s, action, obs);
        if weight == 0.0 {
            continue;
        }
        for (t, &p) in pomdp.trans_row(s, action).iter().enumerate() {
            next[t] += weight * p;
        }
    }
    let z: f64 = next.iter().sum();
    if !(z > 0.0) {
        return Err(Error::Filtering { action, obs });
    }
    next.iter_mut().for_each(|x| *x /= z);
    Ok(BeliefVector(next))
}

/// Belief over the state at the end of `w`, starting from `prior` at its
/// beginning. Also serves for full histories.
pub fn window_belief(pomdp: &TabularPomdp, prior: &BeliefVector, w: &Window) -> Result<BeliefVector> {
    fold_pairs(pomdp, prior, w.pairs()).map_err(|e| match e {
        Error::Filtering { .. } => Error::UnreachableWindow(w.to_string()),
        e => e,
    })
}

pub(crate) fn fold_pairs(pomdp: &TabularPomdp, prior: &BeliefVector, pairs: &[Pair]) -> Result<BeliefVector> {
    let mut b = prior.clone();
    for p in pairs {
        b = belief_update(pomdp, &b, p.action, p.obs)?;
    }
    Ok(b)
}

pub fn tv_distance(b: &BeliefVector, b2: &BeliefVector) -> Result<f64> {
    if b.len() != b2.len() {
        return Err(Error::Parameter(format!("belief dimensions differ: {} vs {}", b.len(), b2.len())));
    }
    Ok(0.5 * b.0.iter().zip(&b2.0).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Sample a history of the given length by rolling the POMDP forward under
/// uniformly random actions.
pub fn sample_history(pomdp: &TabularPomdp, len: usize, rng: &mut crate::rng::StreamRng) -> Window {
    let mut s = sample_categorical(rng, pomdp.init_dist());
    let mut pairs = Vec::with_capacity(len);
    for _ in 0..len {
        let a = rng.gen_range(0..pomdp.n_actions());
        let o = sample_categorical(rng, pomdp.obs_row(s, a));
        pairs.push(Pair::new(a, o));
        s = sample_categorical(rng, pomdp.trans_row(s, a));
    }
    Window(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// History pairs examined (excluding skipped ones).
    pub pairs: usize,
    /// Largest observed `TV(after) / TV(before)` over pairs with `TV(before) > 0`.
    pub max_ratio: f64,
    /// Contraction factor being certified, `1 - S·alpha·beta`.
    pub bound: f64,
    pub pass: bool,
    pub skipped: usize,
    /// Number of `(pair, a, o)` checks that broke the bound.
    pub violations: usize,
    pub checks: usize,
}

/// Sample `n_pairs` pairs of histories (lengths `0..=max_len`) and, for every
/// action-observation pair, check
/// `TV(update(b,a,o), update(b',a,o)) <= (1 - rho) TV(b, b') + 1e-12`.
pub fn contraction_audit(pomdp: &TabularPomdp, n_pairs: usize, max_len: usize, seed: u64) -> Result<AuditReport> {
    let report = pomdp.validate();
    if !report.assumptions_hold() {
        return Err(Error::Parameter(format!(
            "contraction audit requires alpha > 0 and beta > 0 (alpha = {}, beta = {})",
            report.alpha, report.beta
        )));
    }
    let bound = 1.0 - report.rho;
    let prior = BeliefVector::prior(pomdp);
    let mut rng = stream(seed);
    let mut out = AuditReport { pairs: 0, max_ratio: 0.0, bound, pass: true, skipped: 0, violations: 0, checks: 0 };
    for _ in 0..n_pairs {
        let l1 = rng.gen_range(0..=max_len);
        let l2 = rng.gen_range(0..=max_len);
        let h1 = sample_history(pomdp, l1, &mut rng);
        let h2 = sample_history(pomdp, l2, &mut rng);
        let (b1, b2) = match (window_belief(pomdp, &prior, &h1), window_belief(pomdp, &prior, &h2)) {
            (Ok(x), Ok(y)) => (x, y),
            _ => {
                out.skipped += 1;
                continue;
            }
        };
        out.pairs += 1;
        let before = tv_distance(&b1, &b2)?;
        for a in 0..pomdp.n_actions() {
            for o in 0..pomdp.n_obs() {
                let after = tv_distance(&belief_update(pomdp, &b1, a, o)?, &belief_update(pomdp, &b2, a, o)?)?;
                out.checks += 1;
                if before > 0.0 {
                    out.max_ratio = out.max_ratio.max(after / before);
                }
                if after > bound * before + 1e-12 {
                    out.violations += 1;
                    out.pass = false;
                }
            }
        }
    }
    Ok(out)
}
