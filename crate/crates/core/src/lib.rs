//! Finite-window policy learning for tabular POMDPs.
//!
//! A single uniformly random trajectory is condensed into an empirical model
//! of the superstate MDP, whose states are the last `m` action-observation
//! pairs. Value iteration on that model yields a window policy. Exact belief
//! filters, exact superstate and POMDP policy evaluation, and Monte-Carlo
//! cross-checks make every step auditable.

pub mod belief;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod planning;
pub mod pomdp;
pub mod rng;
pub mod sample_size;
pub mod model;
pub mod window;

pub use belief::{belief_update, contraction_audit, tv_distance, window_belief, AuditReport, BeliefVector};
pub use error::{Error, Result};
pub use estimation::{count_windows, count_windows_timed, count_windows_with, estimation_error, CountingScheme, CountsModel, EstimationError};
pub use planning::{
    greedy, optimal_superstate_value, pomdp_policy_value, superstate_policy_value, value_iteration, QTable,
    WindowPolicy,
};
pub use pomdp::{probe_env, random_pomdp, PolicySpec, RewardTiming, StabilityReport, TabularPomdp, Trajectory};
pub use sample_size::{theoretical_sample_size, BoundParams, SampleSizeBound};
pub use model::{build_exact, lemma1_gap, GapReport, ModelKind, SuperstateModel};
pub use window::{Pair, Window, WindowIndex};
