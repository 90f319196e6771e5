//! Decision-process model, policies, datasets, simulation and exact oracles.

pub mod data;
pub mod exact;
pub mod model;
pub mod policy;
pub mod simulate;

pub use data::{Dataset, DatasetKind, Step, Trajectory, TransitionTuple};
pub use exact::{
    exact_discounted_visitation, exact_marginals_finite, exact_q_v_discounted, exact_q_v_finite,
    exact_value_discounted, exact_value_finite, stationary_distribution, DiscountedValues,
    FiniteValues,
};
pub use model::{Flavor, RewardAtom, RewardDist, SparseRow, TabularDecisionProcess, PROB_TOL, SOLVER_TOL};
pub use policy::StochasticPolicy;
pub use simulate::{sample_initial_pairs, simulate_finite, simulate_iid_transitions, simulate_stationary};
