//! Simulation library for closed-loop attention enhancement.
//!
//! A synthetic reader's gaze moves between visual states as a semi-Markov
//! process whose parameters depend on the visual aid currently on screen.
//! Each fixed-length generation stage is scored with a cumulative attention
//! level, quantized into an attention state, and fed to a tabular Q-learner
//! that picks the next aid. An outer Gaussian-process Bayesian optimizer
//! tunes the loop's hyperparameters against phishing-recognition accuracy
//! produced by a calibrated synthetic judgment model.
//!
//! Modules, bottom-up:
//!
//! * [`gaze`] visual states, semi-Markov dynamics, trajectories
//! * [`attention`] CAL / AAL / QAAL, pupil traces, score fitting
//! * [`policy`] Q-table, ε-greedy selection, learning rates
//! * [`judgment`] synthetic judgment oracle and the accuracy metric
//! * [`bayesopt`] GP regression, expected improvement, the tuning loop
//! * [`harness`] per-session and population loops, configuration, reports

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod bayesopt;
pub mod error;
pub mod fixtures;
pub mod gaze;
pub mod harness;
pub mod judgment;
pub mod policy;
pub mod rng;

pub use attention::{AttentionConfig, Quantizer, ScoreTable};
pub use bayesopt::{HyperBox, Kernel, Observation};
pub use error::{Error, Result};
pub use gaze::{GazeDynamics, VisualAid, VisualState, VsTrajectory};
pub use harness::{ExperimentConfig, RunReport, SessionResult};
pub use judgment::{Judgment, JudgmentModel};
pub use policy::{LearningParams, QTable};
