use std::fmt;

use crate::engine::TrajectoryRecord;

pub type Result<T> = std::result::Result<T, Error>;

/// Named closed-loop hypotheses. Validation failures always carry one of these
/// so that a rejected scenario says *which* assumption it broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    ConnectedGraph,
    FormationConsistency,
    PassiveAgent,
    SkewSymmetricExosystem,
    ObservableReference,
    ObservableDisturbance,
    ConstantExosignals,
    NonsingularOutputMaps,
    TreeGraph,
    HarmonicStructure,
    ConstantInputMap,
    OutputEqualsState,
    QuadraticDissipation,
    HurwitzEstimator,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Hypothesis::ConnectedGraph => "connected graph",
            Hypothesis::FormationConsistency => {
                "formation consistency (z* must lie in the range of B^T (x) I_p)"
            }
            Hypothesis::PassiveAgent => "strictly passive agent dynamics",
            Hypothesis::SkewSymmetricExosystem => "skew-symmetric exosystem matrix",
            Hypothesis::ObservableReference => "observable reference exosystem pair (Gamma_v, Phi)",
            Hypothesis::ObservableDisturbance => "observable disturbance exosystem pair (Gamma_d, Phi_d)",
            Hypothesis::ConstantExosignals => {
                "constant reference velocity and disturbances (Phi = 0, Phi_d = 0)"
            }
            Hypothesis::NonsingularOutputMaps => "nonsingular exosystem output maps",
            Hypothesis::TreeGraph => "tree graph (harmonic disturbance rejection requires a tree)",
            Hypothesis::HarmonicStructure => {
                "harmonic disturbance structure (rotation blocks with nonzero frequency, nonzero output rows)"
            }
            Hypothesis::ConstantInputMap => "constant input map g",
            Hypothesis::OutputEqualsState => "passive output equal to the agent state",
            Hypothesis::QuadraticDissipation => "dissipation bounded below by |xi|^2",
            Hypothesis::HurwitzEstimator => "Hurwitz estimation-error matrix",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("agent model rejected: {0}")]
    AgentRejected(String),

    #[error("hypothesis violated: {hypothesis}: {detail}")]
    Hypothesis { hypothesis: Hypothesis, detail: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("missing {0}")]
    Missing(String),

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error("integration blow-up at t = {t}: non-finite state")]
    IntegrationBlowup {
        t: f64,
        last_record: Option<Box<TrajectoryRecord>>,
    },

    #[error("scenario schema error: {0}")]
    Schema(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn hypothesis(hypothesis: Hypothesis, detail: impl Into<String>) -> Self {
        Error::Hypothesis {
            hypothesis,
            detail: detail.into(),
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// The violated hypothesis, if this is a validation failure.
    pub fn violated_hypothesis(&self) -> Option<Hypothesis> {
        match self {
            Error::Hypothesis { hypothesis, .. } => Some(*hypothesis),
            _ => None,
        }
    }
}
