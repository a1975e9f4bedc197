//! Classical label-corruption channels acting on the recorded success bit.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsmlError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "q", rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    None,
    /// Binary symmetric channel: each recorded label flipped with probability `q < 1/2`.
    Bsc(f64),
    /// True successes recorded as failures with probability `q < 1`; failures are faithful.
    FalseNegative(f64),
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::Bsc(q) if (0.0..0.5).contains(&q) => Ok(()),
            NoiseModel::Bsc(q) => Err(SsmlError::param(format!(
                "BSC flip probability {q} must lie in [0, 0.5)"
            ))),
            NoiseModel::FalseNegative(q) if (0.0..1.0).contains(&q) => Ok(()),
            NoiseModel::FalseNegative(q) => Err(SsmlError::param(format!(
                "false-negative probability {q} must lie in [0, 1)"
            ))),
        }
    }

    /// The flip probability, 0 for the noiseless channel.
    pub fn q(&self) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Bsc(q) | NoiseModel::FalseNegative(q) => q,
        }
    }

    /// Probability that a shot is recorded as a success when the true success
    /// probability is `fidelity`.
    pub fn effective_success(&self, fidelity: f64) -> f64 {
        match *self {
            NoiseModel::None => fidelity,
            NoiseModel::Bsc(q) => q + (1.0 - 2.0 * q) * fidelity,
            NoiseModel::FalseNegative(q) => (1.0 - q) * fidelity,
        }
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseModel::None => write!(f, "none"),
            NoiseModel::Bsc(q) => write!(f, "bsc:{q}"),
            NoiseModel::FalseNegative(q) => write!(f, "fn:{q}"),
        }
    }
}

impl FromStr for NoiseModel {
    type Err = SsmlError;

    /// Parses `none`, `bsc:Q` or `fn:Q`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(NoiseModel::None);
        }
        let (kind, q) = s
            .split_once(':')
            .ok_or_else(|| SsmlError::param(format!("unrecognized noise model '{s}'")))?;
        let q: f64 = q
            .trim()
            .parse()
            .map_err(|_| SsmlError::param(format!("bad noise probability in '{s}'")))?;
        let model = match kind.trim().to_ascii_lowercase().as_str() {
            "bsc" => NoiseModel::Bsc(q),
            "fn" => NoiseModel::FalseNegative(q),
            other => return Err(SsmlError::param(format!("unknown noise kind '{other}'"))),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Passes the true label through the channel.
pub fn corrupt_label<R: Rng + ?Sized>(true_success: bool, noise: NoiseModel, rng: &mut R) -> bool {
    match noise {
        NoiseModel::None => true_success,
        NoiseModel::Bsc(q) => {
            if rng.random::<f64>() < q {
                !true_success
            } else {
                true_success
            }
        }
        NoiseModel::FalseNegative(q) => true_success && rng.random::<f64>() >= q,
    }
}
