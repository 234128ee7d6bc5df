use thiserror::Error;

use crate::estimation::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },

    #[error("degenerate rate constants k2={k2}, k3={k3}, k4={k4}: (k2+k3+k4)^2 <= 4*k2*k4")]
    DegenerateParams { k2: f64, k3: f64, k4: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("region `{id}`: {source}")]
    Region {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("quadrature did not reach tolerance {tol:e} (error estimate {estimate:e}) within {evaluations} evaluations")]
    QuadratureFailure {
        tol: f64,
        estimate: f64,
        evaluations: usize,
    },

    #[error("ODE state became non-finite at t={t}")]
    NonFiniteState { t: f64 },

    #[error("mixing model given without a whole-blood curve")]
    MissingWholeBlood,

    #[error("basis matrix is ill-conditioned (condition estimate {condition:e} > {threshold:e})")]
    IllConditioned { condition: f64, threshold: f64 },

    #[error("insufficient samples: have {have}, need at least {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("no start reached the residual tolerance (best sse {:e})", best.sse)]
    NoConvergence { best: Box<FitResult> },

    #[error("scale resolution failed from every start: {0}")]
    NoSolution(String),

    #[error("whole-blood sample system is rank deficient: {0}")]
    RankDeficient(String),

    #[error("exhausted {0} redraws while sampling a configuration")]
    ExhaustedRedraws(usize),

    #[error("identifiability hypothesis not met: {0}")]
    HypothesisUnmet(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps `self` with the region it concerns, unless it already names one.
    pub fn in_region(self, id: &str) -> Self {
        match self {
            e @ Error::Region { .. } => e,
            other => Error::Region {
                id: id.to_owned(),
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, looking through region context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Region { source, .. } => source.root(),
            other => other,
        }
    }
}
