//! Nuisance estimation: behavior policy, q-functions and state ratios, the
//! compatible nuisance set, and controlled misspecification.

pub mod corrupt;
pub mod estimate;
pub mod set;
pub mod stats;

pub use corrupt::{add_noise, corrupt, derive_seed, perturb_logits, CorruptionSpec, CorruptionTarget};
pub use estimate::{
    estimate_pi_b, estimate_q_stationary, estimate_v_direct, estimate_w_lambda, estimate_w_model_based,
    estimate_w_regression, estimate_w_star, fitted_q_iteration, pi_b_from_episode_stats, pi_b_from_stats,
    train_finite, train_finite_from_stats, train_stationary, train_stationary_from_stats, FiniteTrainOptions,
    PiBMode, WMethod, MOMENT_TOL,
};
pub use set::{Diagnostics, NuisanceFile, NuisanceSet};
pub use stats::{population_transition_stats, transition_stats, EpisodeStats, SampleStats};
