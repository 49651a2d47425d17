use thiserror::Error;

/// Errors produced by the sampling, transform, and oracle machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("polynomial is not quartic (degree {0})")]
    NonQuartic(usize),

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("requested {requested} states but the potential binds only {bound}")]
    UnboundedSpectrumRequest { requested: usize, bound: usize },

    #[error(
        "spectral truncation too severe: exp(-beta*(E_max - E_0)) = {tail:.3e} >= {limit:.1e}; \
         increase the state count"
    )]
    TruncationTooSevere { tail: f64, limit: f64 },

    #[error("potential is not confining; the path-integral sampler refuses it")]
    NonConfiningPotential,

    #[error("Metropolis acceptance {rate:.3} outside [0.2, 0.8] after auto-tuning")]
    AcceptanceOutOfRange { rate: f64 },

    #[error("fit rejected: {0}")]
    FitRejected(String),

    #[error("integrand not localized: the fitted centroid potential does not confine")]
    IntegrandNotLocalized,

    #[error("Q = {q} not attained by dw/dJ on the source grid [{lo}, {hi}]; widen the J grid")]
    QOutOfRange { q: f64, lo: f64, hi: f64 },

    #[error("generating function not convex at the origin (w''(0) = {0:.3e})")]
    NonConvexAtOrigin(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
