//! The single-trial learning loop: Born-rule shot, label channel,
//! failure-triggered subspace rotation, consecutive-success counter and halting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsmlError};
use crate::noise::{corrupt_label, NoiseModel};
use crate::qstate::{
    fidelity, haar_random_state, haar_random_unitary, StateVector, SubspaceRotation,
    UnitaryMatrix,
};

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_BETA: f64 = 0.5;

/// Tolerance on the Born probabilities summing to one before renormalization.
pub const PROB_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmlConfig {
    pub d: usize,
    /// Halting threshold: number of consecutive recorded successes that ends a trial.
    pub mh: u64,
    pub alpha: f64,
    pub beta: f64,
    pub noise: NoiseModel,
    /// Censoring cap on shots per trial.
    pub max_shots: u64,
    pub seed: u64,
    /// Rotate in span{e_0, e_k} with k the observed failure outcome rather than a uniform k.
    pub multi_failure: bool,
}

impl SsmlConfig {
    pub fn new(d: usize, mh: u64, seed: u64) -> Self {
        Self {
            d,
            mh,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            noise: NoiseModel::None,
            max_shots: 1_000_000,
            seed,
            multi_failure: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(SsmlError::param(format!("dimension d = {} must be >= 2", self.d)));
        }
        if self.mh < 1 {
            return Err(SsmlError::param("halting threshold must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(SsmlError::param(format!("alpha = {} must be > 0", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(SsmlError::param(format!("beta = {} must be > 0", self.beta)));
        }
        if self.max_shots < self.mh {
            return Err(SsmlError::param(format!(
                "max_shots = {} must be >= halting threshold {}",
                self.max_shots, self.mh
            )));
        }
        self.noise.validate()
    }

    /// Step size after a failure that ended a run of `run_before` recorded successes.
    pub fn step_size(&self, run_before: u64) -> f64 {
        self.alpha * ((run_before + 1) as f64).powf(-self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub control: UnitaryMatrix,
    /// Consecutive recorded successes.
    pub run: u64,
    pub shots: u64,
    /// Test hook: failures still reset the counter but never move the control.
    pub frozen: bool,
}

impl LearnerState {
    pub fn new(control: UnitaryMatrix) -> Self {
        Self {
            control,
            run: 0,
            shots: 0,
            frozen: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedUpdate {
    pub k: usize,
    pub omega: f64,
}

/// What happened on one shot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub outcome: usize,
    /// Success probability of the control used for this shot.
    pub fidelity: f64,
    pub recorded_success: bool,
    /// Counter value before this shot.
    pub run_before: u64,
    pub update: Option<AppliedUpdate>,
}

fn born_probabilities(u: &UnitaryMatrix, psi: &StateVector) -> Result<Vec<f64>> {
    let image = u.apply(psi)?;
    let mut probs: Vec<f64> = image.iter().map(|a| a.norm_sqr()).collect();
    let total: f64 = probs.iter().sum();
    if !total.is_finite() || (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(SsmlError::NumericIntegrity(format!(
            "Born probabilities sum to {total}"
        )));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding gap above the cumulative sum: take the last
    // outcome with nonzero weight.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Projective measurement of `U psi` in the computational basis. Outcome 0 is success.
pub fn born_measure<R: Rng + ?Sized>(
    u: &UnitaryMatrix,
    psi: &StateVector,
    rng: &mut R,
) -> Result<usize> {
    let probs = born_probabilities(u, psi)?;
    Ok(sample_index(&probs, rng))
}

/// One shot of the loop. On a recorded failure the control is rotated by
/// `alpha (M_S + 1)^(-beta)` with the pre-reset counter `M_S`, then the counter resets.
pub fn ssml_step<R: Rng + ?Sized>(
    state: &mut LearnerState,
    psi: &StateVector,
    cfg: &SsmlConfig,
    rng: &mut R,
) -> Result<StepRecord> {
    let probs = born_probabilities(&state.control, psi)?;
    let outcome = sample_index(&probs, rng);
    let recorded_success = corrupt_label(outcome == 0, cfg.noise, rng);
    let run_before = state.run;
    state.shots += 1;

    let mut update = None;
    if recorded_success {
        state.run += 1;
    } else {
        let d = cfg.d;
        let k = if cfg.multi_failure && outcome != 0 {
            outcome
        } else if d == 2 {
            1
        } else {
            rng.random_range(1..d)
        };
        let omega = cfg.step_size(run_before);
        if !state.frozen {
            SubspaceRotation::random(k, omega, rng).apply_left(&mut state.control)?;
        }
        update = Some(AppliedUpdate { k, omega });
        state.run = 0;
    }

    Ok(StepRecord {
        outcome,
        fidelity: probs[0],
        recorded_success,
        run_before,
        update,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingTime {
    pub eps: f64,
    /// First shot whose control had infidelity <= `eps`, if any before termination.
    pub shot: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub halted: bool,
    /// Stopping time, or `max_shots` when censored.
    pub shots: u64,
    /// Infidelity of the final control.
    pub epsilon_t: f64,
    /// Lengths of success runs ended by a recorded failure (zero-length runs
    /// included). The terminating run is not listed.
    pub run_lengths: Vec<u64>,
    pub hitting_times: Vec<HittingTime>,
    pub recorded_successes: u64,
}

/// The unknown state of a trial.
#[derive(Debug, Clone)]
pub enum Target {
    Given(StateVector),
    /// Draw a Haar-random state from the trial stream.
    Haar,
}

/// Overrides for oracle comparisons.
#[derive(Debug, Clone, Default)]
pub struct TrialHooks {
    pub initial_control: Option<UnitaryMatrix>,
    pub freeze_control: bool,
    /// Also stop once this many runs have completed (censoring flag set).
    pub stop_after_runs: Option<usize>,
}

pub fn run_trial<R: Rng + ?Sized>(
    cfg: &SsmlConfig,
    target: &Target,
    eps_levels: &[f64],
    rng: &mut R,
) -> Result<TrialResult> {
    run_trial_with(cfg, target, eps_levels, rng, &TrialHooks::default())
}

/// Runs shots until `mh` consecutive recorded successes or `max_shots`.
pub fn run_trial_with<R: Rng + ?Sized>(
    cfg: &SsmlConfig,
    target: &Target,
    eps_levels: &[f64],
    rng: &mut R,
    hooks: &TrialHooks,
) -> Result<TrialResult> {
    cfg.validate()?;
    let psi = match target {
        Target::Given(psi) => {
            if psi.dim() != cfg.d {
                return Err(SsmlError::Shape {
                    expected: cfg.d,
                    actual: psi.dim(),
                });
            }
            psi.clone()
        }
        Target::Haar => haar_random_state(cfg.d, rng)?,
    };
    let control = match &hooks.initial_control {
        Some(u) => {
            if u.dim() != cfg.d {
                return Err(SsmlError::Shape {
                    expected: cfg.d,
                    actual: u.dim(),
                });
            }
            u.clone()
        }
        None => haar_random_unitary(cfg.d, rng)?,
    };
    let mut state = LearnerState::new(control);
    state.frozen = hooks.freeze_control;

    let mut hitting_times: Vec<HittingTime> = eps_levels
        .iter()
        .map(|&eps| HittingTime { eps, shot: None })
        .collect();
    let mut run_lengths = Vec::new();
    let mut recorded_successes = 0;
    let mut halted = false;

    while state.shots < cfg.max_shots {
        let record = ssml_step(&mut state, &psi, cfg, rng)?;
        let infidelity = 1.0 - record.fidelity;
        for hit in hitting_times.iter_mut().filter(|h| h.shot.is_none()) {
            if infidelity <= hit.eps {
                hit.shot = Some(state.shots);
            }
        }
        if record.recorded_success {
            recorded_successes += 1;
        } else {
            run_lengths.push(record.run_before);
            if hooks.stop_after_runs.is_some_and(|n| run_lengths.len() >= n) {
                break;
            }
        }
        if state.run == cfg.mh {
            halted = true;
            break;
        }
    }

    let f = StateVector::basis(cfg.d, 0)?;
    let epsilon_t = 1.0 - fidelity(&state.control, &psi, &f)?;
    Ok(TrialResult {
        halted,
        shots: state.shots,
        epsilon_t,
        run_lengths,
        hitting_times,
        recorded_successes,
    })
}

/// I.i.d. Bernoulli(`p`) record halted at `mh` consecutive successes.
///
/// Models certification under a perfect control, so `epsilon_t` is reported as 0.
pub fn bestcase_certification_trial<R: Rng + ?Sized>(
    mh: u64,
    p: f64,
    max_shots: u64,
    rng: &mut R,
) -> Result<TrialResult> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(SsmlError::param(format!("success probability {p} must lie in (0, 1]")));
    }
    if mh < 1 {
        return Err(SsmlError::param("halting threshold must be >= 1"));
    }
    let mut shots = 0;
    let mut run = 0;
    let mut recorded_successes = 0;
    let mut run_lengths = Vec::new();
    while shots < max_shots {
        shots += 1;
        if rng.random::<f64>() < p {
            run += 1;
            recorded_successes += 1;
            if run == mh {
                return Ok(TrialResult {
                    halted: true,
                    shots,
                    epsilon_t: 0.0,
                    run_lengths,
                    hitting_times: Vec::new(),
                    recorded_successes,
                });
            }
        } else {
            run_lengths.push(run);
            run = 0;
        }
    }
    Ok(TrialResult {
        halted: false,
        shots,
        epsilon_t: 0.0,
        run_lengths,
        hitting_times: Vec::new(),
        recorded_successes,
    })
}
