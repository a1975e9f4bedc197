//! Simulator and analytics for run-length-certified single-shot measurement learning.
//!
//! A learner holds a unitary control `U`, consumes one copy of an unknown pure
//! state per shot, measures `U|psi>` in the computational basis and records a
//! single success/failure bit. Failures rotate the control in a random
//! two-level subspace with a step that shrinks with the length of the success
//! run just ended; `M_H` consecutive recorded successes halt the trial.
//!
//! Modules:
//! - [`qstate`]: dense states, unitaries, Haar sampling, fidelity, subspace rotations.
//! - [`noise`]: label-corruption channels.
//! - [`learner`]: the single-trial loop.
//! - [`runstats`]: closed-form run statistics and the Markov-chain oracle.
//! - [`montecarlo`]: reproducible batch experiments and estimators.
//! - [`experiment`]: experiment files and result serialization.

pub mod error;
pub mod experiment;
pub mod learner;
pub mod montecarlo;
pub mod noise;
pub mod qstate;
pub mod runstats;

pub use error::{Result, SsmlError};
pub use learner::{
    bestcase_certification_trial, born_measure, run_trial, run_trial_with, ssml_step,
    LearnerState, SsmlConfig, StepRecord, Target, TrialHooks, TrialResult,
};
pub use noise::{corrupt_label, NoiseModel};
pub use qstate::{
    embed_su2_rotation, fidelity, haar_random_state, haar_random_unitary, StateVector,
    UnitaryMatrix,
};
pub use runstats::{CertificateQuery, RunQuery, RunStatsReport};
