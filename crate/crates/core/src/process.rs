//! Personal-state diffusions, killing rates and path functionals.
//!
//! Two state processes are supported: Brownian motion with drift
//! `X_t = x0 + a W_t + b t` and the two-dimensional squared Bessel process
//! `dX = 2 sqrt(X) dW + 2 dt`. Both are simulated exactly in law on a uniform
//! grid; time integrals of killing rates use left-endpoint Riemann sums so that
//! the exponential-clock killing time and the Feynman-Kac weight describe the
//! same discretised functional.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffusionKind {
    BrownianDrift { volatility: f64, drift: f64 },
    SquaredBessel2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionSpec {
    kind: DiffusionKind,
    x0: f64,
}

impl DiffusionSpec {
    pub fn brownian_drift(volatility: f64, drift: f64, x0: f64) -> Result<Self> {
        if !(volatility > 0.0 && volatility.is_finite()) {
            return Err(Error::NonPositiveVolatility(volatility));
        }
        if !drift.is_finite() || !x0.is_finite() {
            return Err(Error::InvalidTerms("drift and initial state must be finite".into()));
        }
        Ok(Self { kind: DiffusionKind::BrownianDrift { volatility, drift }, x0 })
    }

    pub fn squared_bessel2(x0: f64) -> Result<Self> {
        if !(x0 >= 0.0) || !x0.is_finite() {
            return Err(Error::NegativeInitial(x0));
        }
        Ok(Self { kind: DiffusionKind::SquaredBessel2, x0 })
    }

    pub fn kind(&self) -> DiffusionKind {
        self.kind
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// Same dynamics started from `x0`.
    pub fn started_at(&self, x0: f64) -> Result<Self> {
        match self.kind {
            DiffusionKind::BrownianDrift { volatility, drift } => Self::brownian_drift(volatility, drift, x0),
            DiffusionKind::SquaredBessel2 => Self::squared_bessel2(x0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            DiffusionKind::BrownianDrift { .. } => "brownian-drift",
            DiffusionKind::SquaredBessel2 => "squared-bessel-2",
        }
    }

    /// Whether the state space is `[0, inf)` rather than the whole line.
    pub fn nonnegative_states(&self) -> bool {
        matches!(self.kind, DiffusionKind::SquaredBessel2)
    }
}

/// Incremental exact-in-law simulator for one path.
///
/// The squared Bessel process is carried as the squared norm of a planar
/// Brownian motion started at `(sqrt(x0), 0)`.
#[derive(Debug, Clone)]
pub struct Stepper {
    kind: DiffusionKind,
    x: f64,
    b1: f64,
    b2: f64,
    dt: f64,
    sqrt_dt: f64,
}

impl Stepper {
    pub fn new(model: &DiffusionSpec, dt: f64) -> Self {
        let (b1, b2) = match model.kind {
            DiffusionKind::SquaredBessel2 => (model.x0.sqrt(), 0.0),
            DiffusionKind::BrownianDrift { .. } => (0.0, 0.0),
        };
        Self { kind: model.kind, x: model.x0, b1, b2, dt, sqrt_dt: dt.sqrt() }
    }

    #[inline]
    pub fn state(&self) -> f64 {
        self.x
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        self.advance(rng, self.dt, self.sqrt_dt)
    }

    /// Advance by an arbitrary `h > 0` (used for the partial last step).
    pub fn step_by<R: Rng + ?Sized>(&mut self, rng: &mut R, h: f64) -> f64 {
        self.advance(rng, h, h.sqrt())
    }

    #[inline]
    fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R, h: f64, sqrt_h: f64) -> f64 {
        match self.kind {
            DiffusionKind::BrownianDrift { volatility, drift } => {
                let z: f64 = rng.sample(StandardNormal);
                self.x += drift * h + volatility * sqrt_h * z;
            }
            DiffusionKind::SquaredBessel2 => {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                self.b1 += sqrt_h * z1;
                self.b2 += sqrt_h * z2;
                self.x = self.b1 * self.b1 + self.b2 * self.b2;
            }
        }
        self.x
    }
}

/// A path sampled on the uniform grid `t_k = k * dt`, `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dt: f64,
    times: Vec<f64>,
    states: Vec<f64>,
}

impl Path {
    /// Builds a path from states on a uniform grid with step `dt`.
    pub fn from_states(dt: f64, states: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::NonPositiveStep(dt));
        }
        if states.is_empty() {
            return Err(Error::InvalidHorizon { horizon: 0.0, dt });
        }
        let times = (0..states.len()).map(|k| k as f64 * dt).collect();
        Ok(Self { dt, times, states })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("paths are nonempty")
    }

    /// Every `stride`-th grid point, i.e. the same path on a coarser grid.
    pub fn subsample(&self, stride: usize) -> Path {
        let stride = stride.max(1);
        let states = self.states.iter().step_by(stride).copied().collect();
        Path::from_states(self.dt * stride as f64, states).expect("subsample of a valid path")
    }
}

/// Simulates `model` on `[0, horizon]`.
///
/// The grid has `K = round(horizon / dt)` steps of length `horizon / K`, so the
/// step equals `dt` whenever `dt` divides the horizon.
pub fn simulate_path(model: &DiffusionSpec, dt: f64, horizon: f64, rng: &RngStream) -> Result<Path> {
    simulate_path_with(model, dt, horizon, &mut rng.generator())
}

pub fn simulate_path_with<R: Rng + ?Sized>(model: &DiffusionSpec, dt: f64, horizon: f64, rng: &mut R) -> Result<Path> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::NonPositiveStep(dt));
    }
    if !(horizon > 0.0) || dt > horizon * (1.0 + 1e-12) {
        return Err(Error::InvalidHorizon { horizon, dt });
    }
    if model.nonnegative_states() && model.x0 < 0.0 {
        return Err(Error::NegativeInitial(model.x0));
    }
    let steps = ((horizon / dt).round() as usize).max(1);
    let h = horizon / steps as f64;
    let mut stepper = Stepper::new(model, h);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(stepper.state());
    for _ in 0..steps {
        states.push(stepper.step(rng));
    }
    Path::from_states(h, states)
}

/// Killing-rate function of the personal state.
#[derive(Debug, Clone, PartialEq)]
pub enum RateFunction {
    /// `values[i]` on `(knots[i-1], knots[i]]` with `knots[-1] = -inf`, `knots[M-1] = +inf`.
    Step { knots: Vec<f64>, values: Vec<f64> },
    /// `slope * x + intercept`, evaluated as is.
    Affine { slope: f64, intercept: f64 },
}

impl RateFunction {
    pub fn step(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != knots.len() + 1 {
            return Err(Error::InvalidRate(format!(
                "{} knots need {} values, got {}",
                knots.len(),
                knots.len() + 1,
                values.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidRate("knots must be finite and strictly increasing".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidRate("step values must be finite and nonnegative".into()));
        }
        Ok(Self::Step { knots, values })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::step(Vec::new(), vec![value])
    }

    pub fn affine(slope: f64, intercept: f64) -> Result<Self> {
        if !slope.is_finite() || !intercept.is_finite() {
            return Err(Error::InvalidRate("affine coefficients must be finite".into()));
        }
        Ok(Self::Affine { slope, intercept })
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Step { knots, values } => values[knots.partition_point(|&k| k < x)],
            Self::Affine { slope, intercept } => slope * x + intercept,
        }
    }

    /// The constant value when the rate does not depend on the state.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Self::Step { values, .. } if values.iter().all(|v| *v == values[0]) => Some(values[0]),
            Self::Affine { slope, intercept } if *slope == 0.0 => Some(*intercept),
            _ => None,
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    /// Region index (0-based) of `x` for step rates.
    pub fn region_of(&self, x: f64) -> Option<usize> {
        match self {
            Self::Step { knots, .. } => Some(knots.partition_point(|&k| k < x)),
            Self::Affine { .. } => None,
        }
    }
}

/// An affine map `p -> constant + slope * p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub constant: f64,
    pub slope: f64,
}

impl AffineMap {
    pub const fn new(constant: f64, slope: f64) -> Self {
        Self { constant, slope }
    }

    #[inline]
    pub fn eval(&self, p: f64) -> f64 {
        self.constant + self.slope * p
    }
}

/// Surrender-rate family `D(x, p)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SurrenderFamily {
    /// Step rate sharing `knots`, region `i` at rate `offsets[i] + sensitivities[i] * p`.
    AffineInP { knots: Vec<f64>, offsets: Vec<f64>, sensitivities: Vec<f64> },
    /// `D(x, p) = phi(p) x + rho(p)` as used with the squared Bessel model.
    Affine2SB { phi: AffineMap, rho: AffineMap },
}

impl SurrenderFamily {
    pub fn affine_in_p(knots: Vec<f64>, offsets: Vec<f64>, sensitivities: Vec<f64>) -> Result<Self> {
        if offsets.len() != sensitivities.len() {
            return Err(Error::InvalidRate("offsets and sensitivities differ in length".into()));
        }
        if sensitivities.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::InvalidRate("sensitivities must be nonnegative".into()));
        }
        // validates knots, offset count and offset signs
        RateFunction::step(knots.clone(), offsets.clone())?;
        Ok(Self::AffineInP { knots, offsets, sensitivities })
    }

    /// State-independent surrender rate `offset + sensitivity * p`.
    pub fn constant_in_x(offset: f64, sensitivity: f64) -> Result<Self> {
        Self::affine_in_p(Vec::new(), vec![offset], vec![sensitivity])
    }

    pub fn affine_2sb(phi: AffineMap, rho: AffineMap) -> Result<Self> {
        let finite = [phi.constant, phi.slope, rho.constant, rho.slope].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidRate("phi and rho coefficients must be finite".into()));
        }
        Ok(Self::Affine2SB { phi, rho })
    }

    /// The surrender rate at premium level `p`.
    pub fn at(&self, p: f64) -> RateFunction {
        match self {
            Self::AffineInP { knots, offsets, sensitivities } => RateFunction::Step {
                knots: knots.clone(),
                values: offsets.iter().zip(sensitivities).map(|(m, b)| m + b * p).collect(),
            },
            Self::Affine2SB { phi, rho } => RateFunction::Affine { slope: phi.eval(p), intercept: rho.eval(p) },
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        match self {
            Self::AffineInP { offsets, sensitivities, .. } => offsets.iter().chain(sensitivities).all(|v| *v == 0.0),
            Self::Affine2SB { phi, rho } => [phi.constant, phi.slope, rho.constant, rho.slope] == [0.0; 4],
        }
    }
}

/// Left-endpoint Riemann sum of `rate` along the path.
pub fn integrated_rate(path: &Path, rate: &RateFunction) -> f64 {
    let states = path.states();
    let sum: f64 = states[..states.len() - 1].iter().map(|&x| rate.eval(x)).sum();
    sum * path.dt()
}

/// Feynman-Kac weight `exp(-sum of integrated rates)`.
pub fn fk_weight(path: &Path, rates: &[RateFunction]) -> f64 {
    let total: f64 = rates.iter().map(|r| integrated_rate(path, r)).sum();
    (-total).exp()
}

/// Exponential clock: fires once the accumulated rate integral exceeds an
/// independent unit-exponential threshold.
#[derive(Debug, Clone, Copy)]
pub struct ExpClock {
    threshold: f64,
    accumulated: f64,
}

impl ExpClock {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self { threshold: rng.sample(Exp1), accumulated: 0.0 }
    }

    pub fn with_threshold(threshold: f64) -> Self {
        Self { threshold, accumulated: 0.0 }
    }

    /// Adds `rate * h`. When the clock fires inside this increment, returns
    /// the fraction of `h` elapsed at the crossing (linear interpolation).
    #[inline]
    pub fn advance(&mut self, rate: f64, h: f64) -> Option<f64> {
        let inc = rate * h;
        let before = self.accumulated;
        self.accumulated += inc;
        if inc > 0.0 && self.accumulated >= self.threshold {
            Some(((self.threshold - before) / inc).clamp(0.0, 1.0))
        } else {
            None
        }
    }

    pub fn accumulated(&self) -> f64 {
        self.accumulated
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// First grid time at which the left Riemann integral of `rate` crosses an
/// independent `Exp(1)` draw; `+inf` when it never does on the path.
pub fn sample_killing_time(path: &Path, rate: &RateFunction, rng: &RngStream) -> f64 {
    sample_killing_time_with(path, rate, &mut rng.generator())
}

pub fn sample_killing_time_with<R: Rng + ?Sized>(path: &Path, rate: &RateFunction, rng: &mut R) -> f64 {
    let mut clock = ExpClock::new(rng);
    let states = path.states();
    for (x, t) in states.iter().zip(&path.times()[1..]) {
        if clock.advance(rate.eval(*x), path.dt()).is_some() {
            return *t;
        }
    }
    f64::INFINITY
}

/// `E[exp(-lambda * int_0^t X_s ds) | X_0 = x0]` for the 2-d squared Bessel process
/// `dX = 2 sqrt(X) dW + 2 dt`:
///
/// ```text
/// exp(-x0 (s/2) tanh(s t)) / cosh(s t),   s = sqrt(2 lambda)
/// ```
pub fn bessel_laplace_exact(x0: f64, lambda: f64, t: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveLambda(lambda));
    }
    if !(x0 >= 0.0) {
        return Err(Error::NegativeInitial(x0));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidHorizon { horizon: t, dt: 0.0 });
    }
    let s = (2.0 * lambda).sqrt();
    let u = s * t;
    // 1/cosh(u) written to avoid overflow for large u
    let e = (-2.0 * u).exp();
    let sech = 2.0 * (-u).exp() / (1.0 + e);
    Ok((-0.5 * x0 * s * u.tanh()).exp() * sech)
}
