//! Errors carried to `main`, each with its exit code.
//!
//! 0 success, 2 usage or validation, 3 data or I/O, 4 numerical failure.

use std::fmt;

use maha_core::ensemble::EnsembleError;
use maha_core::estimator::EstimatorError;
use maha_core::featureio::FeatureIoError;
use maha_core::metrics::MetricsError;
use maha_core::scorer::ScoreError;
use maha_core::synth::SynthError;

pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERICAL: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub type Result<T, E = Failure> = std::result::Result<T, E>;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: DATA,
            message: message.into(),
        }
    }

    /// Prefixes the message, keeping the code.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self {
            code: self.code,
            message: format!("{what}: {}", self.message),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn with(code: u8, e: impl fmt::Display) -> Failure {
    Failure {
        code,
        message: e.to_string(),
    }
}

impl From<FeatureIoError> for Failure {
    fn from(e: FeatureIoError) -> Self {
        with(if e.is_validation() { USAGE } else { DATA }, e)
    }
}

impl From<EstimatorError> for Failure {
    fn from(e: EstimatorError) -> Self {
        let code = match &e {
            _ if e.is_numerical() => NUMERICAL,
            EstimatorError::LabelOutOfRange { .. } | EstimatorError::InvalidFloorScale(_) => USAGE,
            _ => DATA,
        };
        with(code, e)
    }
}

impl From<ScoreError> for Failure {
    fn from(e: ScoreError) -> Self {
        let code = match e {
            ScoreError::InvalidSelection(_) => USAGE,
            ScoreError::NonFinite { .. } => NUMERICAL,
            _ => DATA,
        };
        with(code, e)
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        with(
            if matches!(e, MetricsError::BadTarget(_)) {
                USAGE
            } else {
                DATA
            },
            e,
        )
    }
}

impl From<EnsembleError> for Failure {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::Score(s) => s.into(),
            EnsembleError::Metrics(m) => m.into(),
            EnsembleError::Config(_)
            | EnsembleError::NoCandidates
            | EnsembleError::LabelOutOfRange { .. } => with(USAGE, e),
            _ => with(DATA, e),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(_) => with(USAGE, e),
            SynthError::FeatureIo(f) => f.into(),
            SynthError::Score(s) => s.into(),
            _ => with(DATA, e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        with(DATA, e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        with(DATA, e)
    }
}
