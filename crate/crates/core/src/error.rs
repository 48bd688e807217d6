use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("horizon must be positive and at least one step, got horizon {horizon} with step {dt}")]
    InvalidHorizon { horizon: f64, dt: f64 },
    #[error("squared Bessel initial state must be nonnegative, got {0}")]
    NegativeInitial(f64),
    #[error("volatility must be positive, got {0}")]
    NonPositiveVolatility(f64),
    #[error("invalid rate function: {0}")]
    InvalidRate(String),
    #[error("Laplace parameter must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("lattice truncation left no atoms")]
    EmptySupport,
    #[error("density support is incompatible with the {model} state space")]
    UnsupportedDensityModelPair { model: &'static str },
    #[error("contract terms invalid: {0}")]
    InvalidTerms(String),
    #[error("horizon {horizon} leaves a discounting tail of {bound:e}, above tolerance {tolerance:e}")]
    TailBoundViolated { horizon: f64, bound: f64, tolerance: f64 },
    #[error("premium denominator {value:e} is within three standard errors ({std_error:e}) of zero")]
    DegenerateDenominator { value: f64, std_error: f64 },
    #[error("surrender rate negative on {fraction:.4} of visited states (threshold {threshold})")]
    NegativeRateEncountered { fraction: f64, threshold: f64 },
    #[error("backend {backend} cannot price model {model}: {reason}")]
    BackendMismatch { backend: &'static str, model: &'static str, reason: String },
    #[error("region {region}: killing plus discount rate {total} is not positive")]
    NonHyperbolicRegion { region: usize, total: f64 },
    #[error("matching system is singular or ill-conditioned (condition estimate {0:e})")]
    SingularSystem(f64),
    #[error("exponents do not admit the explicit L(0) inverse")]
    DegenerateAlphas,
    #[error("perturbative solve needs equally spaced knots")]
    NonUniformKnots,
    #[error("quadrature did not reach tolerance: estimate {estimate:e}, error {error:e}")]
    QuadratureNonConvergence { estimate: f64, error: f64 },
    #[error("hypergeometric series diverges for |z| = {0}")]
    SeriesDiverges(f64),
    #[error("hypergeometric denominator parameter hits a pole at term {0}")]
    PoleInB(usize),
    #[error("2SB configuration invalid at p = {p}: {reason}")]
    InvalidConfigAtP { p: f64, reason: String },
    #[error("initial measure has lattice N = {measure}, cohort has N = {cohort}")]
    LatticeMismatch { measure: usize, cohort: usize },
    #[error("Monte Carlo budget invalid: {0}")]
    InvalidBudget(String),
}
