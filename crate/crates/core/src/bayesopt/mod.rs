//! Gaussian-process Bayesian optimization over a hyperparameter box.

pub mod acquisition;
pub mod design;
pub mod gp;
pub mod linalg;
pub mod tune;

pub use acquisition::{expected_improvement, propose_next, Proposal, ProposalSearch};
pub use design::{latin_hypercube, HyperBox};
pub use gp::{
    fit_kernel_mle, gp_posterior, log_marginal_likelihood, Kernel, MleBounds, MleFit, Observation, Posterior,
};
pub use tune::{tune, GridPoint, HistoryEntry, TuneConfig, TuneResult, TuneSummary};
