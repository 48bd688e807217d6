//! Initial measures, empirical measures and the large-cohort limit.
//!
//! A cohort of `N` insured starts from profiles on the lattice `Z / N`. As
//! `N` grows the lattice measure converges to a limit density `f`, and the
//! expected proportion of in-force insured in a set `A` converges to
//! `int E^y[1_A(X_t) exp(-int_0^t V(X_s) ds)] f(y) dy`, which is what
//! [`limit_occupancy`] estimates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::montecarlo::{self, Estimate, McBudget};
use crate::process::{DiffusionKind, DiffusionSpec, ExpClock, RateFunction, Stepper};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub enum LimitDensity {
    Exponential {
        rate: f64,
    },
    Gaussian {
        mean: f64,
        std_dev: f64,
    },
    /// Piecewise-uniform density; `masses[i]` spread over `[edges[i], edges[i + 1])`.
    Histogram {
        edges: Vec<f64>,
        masses: Vec<f64>,
    },
}

impl LimitDensity {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidDensity(format!("exponential rate must be positive, got {rate}")));
        }
        Ok(Self::Exponential { rate })
    }

    pub fn gaussian(mean: f64, std_dev: f64) -> Result<Self> {
        if !(std_dev > 0.0 && std_dev.is_finite()) || !mean.is_finite() {
            return Err(Error::InvalidDensity(format!(
                "gaussian needs finite mean and positive sd, got {mean}, {std_dev}"
            )));
        }
        Ok(Self::Gaussian { mean, std_dev })
    }

    pub fn histogram(edges: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if edges.len() != masses.len() + 1 || masses.is_empty() {
            return Err(Error::InvalidDensity("histogram needs one more edge than masses".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDensity("histogram edges must be finite and increasing".into()));
        }
        if masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::InvalidDensity("histogram masses must be nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDensity(format!("histogram masses sum to {total}, not 1")));
        }
        Ok(Self::Histogram { edges, masses })
    }

    fn normal(mean: f64, std_dev: f64) -> Normal {
        Normal::new(mean, std_dev).expect("validated at construction")
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    rate * (-rate * x).exp()
                }
            }
            Self::Gaussian { mean, std_dev } => Self::normal(*mean, *std_dev).pdf(x),
            Self::Histogram { edges, masses } => {
                if x < edges[0] || x >= edges[edges.len() - 1] {
                    return 0.0;
                }
                let i = edges.partition_point(|&e| e <= x) - 1;
                masses[i] / (edges[i + 1] - edges[i])
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Self::Gaussian { mean, std_dev } => Self::normal(*mean, *std_dev).cdf(x),
            Self::Histogram { edges, masses } => {
                if x <= edges[0] {
                    return 0.0;
                }
                let mut acc = 0.0;
                for (i, m) in masses.iter().enumerate() {
                    let (a, b) = (edges[i], edges[i + 1]);
                    if x >= b {
                        acc += m;
                    } else {
                        acc += m * (x - a) / (b - a);
                        break;
                    }
                }
                acc.min(1.0)
            }
        }
    }

    /// Mass of the half-open interval `[a, b)`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        (self.cdf(b) - self.cdf(a)).max(0.0)
    }

    /// Inverse distribution function on `(0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Self::Exponential { rate } => -(-u).ln_1p() / rate,
            Self::Gaussian { mean, std_dev } => Self::normal(*mean, *std_dev).inverse_cdf(u),
            Self::Histogram { edges, masses } => {
                let mut acc = 0.0;
                for (i, m) in masses.iter().enumerate() {
                    if *m > 0.0 && (u < acc + m || i == masses.len() - 1) {
                        let frac = ((u - acc) / m).clamp(0.0, 1.0);
                        return edges[i] + frac * (edges[i + 1] - edges[i]);
                    }
                    acc += m;
                }
                edges[edges.len() - 1]
            }
        }
    }

    /// Infimum of the support.
    pub fn support_min(&self) -> f64 {
        match self {
            Self::Exponential { .. } => 0.0,
            Self::Gaussian { .. } => f64::NEG_INFINITY,
            Self::Histogram { edges, masses } => {
                let first = masses.iter().position(|m| *m > 0.0).unwrap_or(0);
                edges[first]
            }
        }
    }

    /// Support boundaries and breakpoints where the density is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Exponential { .. } => vec![0.0],
            Self::Gaussian { .. } => Vec::new(),
            Self::Histogram { edges, .. } => edges.clone(),
        }
    }

    /// Interval outside which the density carries at most `tail` mass.
    pub fn effective_support(&self, tail: f64) -> (f64, f64) {
        match self {
            Self::Exponential { .. } => (0.0, self.quantile(1.0 - tail)),
            Self::Gaussian { .. } => (self.quantile(0.5 * tail), self.quantile(1.0 - 0.5 * tail)),
            Self::Histogram { edges, .. } => (edges[0], edges[edges.len() - 1]),
        }
    }

    pub fn check_model(&self, model: &DiffusionSpec) -> Result<()> {
        if model.nonnegative_states() && self.support_min() < 0.0 {
            return Err(Error::UnsupportedDensityModelPair { model: model.name() });
        }
        Ok(())
    }
}

/// Lattice initial measure `mu_N` on `Z / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialMeasure {
    n: usize,
    atoms: Vec<(i64, f64)>,
    cumulative: Vec<f64>,
}

impl InitialMeasure {
    /// Builds a measure from explicit `(k, weight)` atoms at `k / n`; weights are renormalized.
    pub fn from_atoms(n: usize, mut atoms: Vec<(i64, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDensity("lattice N must be positive".into()));
        }
        atoms.retain(|(_, w)| *w > 0.0);
        if atoms.iter().any(|(_, w)| !w.is_finite()) {
            return Err(Error::InvalidDensity("atom weights must be finite".into()));
        }
        if atoms.is_empty() {
            return Err(Error::EmptySupport);
        }
        atoms.sort_by_key(|(k, _)| *k);
        atoms.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        let total: f64 = atoms.iter().map(|(_, w)| w).sum();
        for a in &mut atoms {
            a.1 /= total;
        }
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|(_, w)| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self { n, atoms, cumulative })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `(k / N, weight)` pairs in increasing order of position.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.n as f64;
        self.atoms.iter().map(move |(k, w)| (*k as f64 / n, *w))
    }

    pub fn lattice_indices(&self) -> impl Iterator<Item = i64> + '_ {
        self.atoms.iter().map(|(k, _)| *k)
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }

    pub fn expectation<H: Fn(f64) -> f64>(&self, h: H) -> f64 {
        self.atoms().map(|(x, w)| w * h(x)).sum()
    }

    /// Position drawn by inverting the cumulative weights at `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.atoms.len() - 1);
        self.atoms[i].0 as f64 / self.n as f64
    }
}

/// Lattice measure whose atom at `k / N` carries the density mass of the
/// cell `[(k - 1/2) / N, (k + 1/2) / N)`, truncated to a window holding at
/// least `1 - truncation_mass` of `f` and renormalized.
pub fn build_lattice_measure(f: &LimitDensity, n: usize, truncation_mass: f64) -> Result<InitialMeasure> {
    if n == 0 {
        return Err(Error::InvalidDensity("lattice N must be positive".into()));
    }
    if !(truncation_mass > 0.0 && truncation_mass < 1.0) {
        return Err(Error::InvalidDensity(format!("truncation mass must lie in (0, 1), got {truncation_mass}")));
    }
    let nf = n as f64;
    let (lo, hi) = match f {
        LimitDensity::Histogram { .. } => f.effective_support(0.0),
        _ => (f.quantile(0.5 * truncation_mass).max(f.support_min()), f.quantile(1.0 - 0.5 * truncation_mass)),
    };
    let k_lo = (lo * nf + 0.5).floor() as i64;
    let k_hi = (hi * nf + 0.5).ceil() as i64;
    let atoms = (k_lo..=k_hi)
        .map(|k| {
            let centre = k as f64;
            (k, f.mass((centre - 0.5) / nf, (centre + 0.5) / nf))
        })
        .collect();
    InitialMeasure::from_atoms(n, atoms)
}

/// Initial-state law for Monte Carlo estimators.
///
/// Every law samples by inversion of a single uniform, so estimators that
/// share path substreams share initial draws as well (common random numbers
/// across `N`).
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Point(f64),
    Density(LimitDensity),
    Lattice(InitialMeasure),
}

impl InitialLaw {
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Self::Point(x) => *x,
            Self::Density(f) => f.quantile(u),
            Self::Lattice(m) => m.quantile(u),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        self.quantile(u)
    }

    /// Cohort size the law stands for; `None` for the limit density.
    pub fn cohort_size(&self) -> Option<usize> {
        match self {
            Self::Point(_) => Some(1),
            Self::Density(_) => None,
            Self::Lattice(m) => Some(m.n()),
        }
    }

    pub fn check_model(&self, model: &DiffusionSpec) -> Result<()> {
        let bad = match self {
            Self::Point(x) => model.nonnegative_states() && *x < 0.0,
            Self::Density(f) => return f.check_model(model),
            Self::Lattice(m) => model.nonnegative_states() && m.atoms().any(|(x, _)| x < 0.0),
        };
        if bad {
            Err(Error::UnsupportedDensityModelPair { model: model.name() })
        } else {
            Ok(())
        }
    }
}

/// State-space interval used by empirical measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub include_hi: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self { lo, hi, include_hi: true }
    }

    /// `[lo, hi)`.
    pub fn half_open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, include_hi: false }
    }

    pub fn whole_line() -> Self {
        Self::closed(f64::NEG_INFINITY, f64::INFINITY)
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && (x < self.hi || (self.include_hi && x == self.hi))
    }

    fn overlaps(&self, other: &Interval) -> bool {
        let (a, b) = if self.lo <= other.lo { (self, other) } else { (other, self) };
        b.lo < a.hi || (b.lo == a.hi && a.include_hi)
    }
}

/// `v^N(t, A)` over a partition: in-force counts per interval, normalized by `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub t: f64,
    pub counts: Vec<usize>,
    pub n: usize,
}

impl EmpiricalMeasure {
    pub fn proportions(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum::<usize>() as f64 / self.n as f64
    }
}

/// Counts live (`Some`) states per interval. Killed agents are `None`.
///
/// The partition intervals must be pairwise disjoint.
pub fn empirical_measure(t: f64, states: &[Option<f64>], n: usize, partition: &[Interval]) -> EmpiricalMeasure {
    debug_assert!(
        partition.iter().enumerate().all(|(i, a)| partition[i + 1..].iter().all(|b| !a.overlaps(b))),
        "partition intervals overlap"
    );
    let counts = partition.iter().map(|a| states.iter().flatten().filter(|&&x| a.contains(x)).count()).collect();
    EmpiricalMeasure { t, counts, n }
}

/// Simulates one cohort drawn from `mu` up to time `t` and returns each
/// agent's state, `None` once killed at rate `v`.
pub fn simulate_cohort_states(
    mu: &InitialMeasure,
    model: &DiffusionSpec,
    v: &RateFunction,
    t: f64,
    dt: f64,
    stream: RngStream,
) -> Result<Vec<Option<f64>>> {
    let (steps, h) = grid(t, dt)?;
    (0..mu.n())
        .map(|i| {
            let mut rng = stream.substream(i as u64).generator();
            let x0 = mu.quantile(rng.gen());
            let mut stepper = Stepper::new(&model.started_at(x0)?, h);
            let mut clock = ExpClock::new(&mut rng);
            for _ in 0..steps {
                if clock.advance(v.eval(stepper.state()), h).is_some() {
                    return Ok(None);
                }
                stepper.step(&mut rng);
            }
            Ok(Some(stepper.state()))
        })
        .collect()
}

pub(crate) fn grid(t: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep(dt));
    }
    if t == 0.0 {
        return Ok((0, dt));
    }
    let steps = ((t / dt).round() as usize).max(1);
    Ok((steps, t / steps as f64))
}

/// Monte Carlo estimate of `int E^y[1_A(X_t) exp(-int_0^t V)] f(y) dy`.
pub fn limit_occupancy(
    f: &LimitDensity,
    model: &DiffusionSpec,
    v: &RateFunction,
    t: f64,
    set: &Interval,
    budget: &McBudget,
) -> Result<Estimate> {
    f.check_model(model)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidHorizon { horizon: t, dt: budget.dt });
    }
    if t == 0.0 {
        // continuous densities put no mass on the endpoints
        return Ok(Estimate::exact(f.mass(set.lo, set.hi)));
    }
    budget.validate()?;
    let (steps, h) = grid(t, budget.dt)?;
    let m = montecarlo::collect(budget.paths, 1, budget.stream, |_, rng, out| {
        let y = f.quantile(rng.gen());
        let start = model.started_at(y).expect("support checked");
        let mut stepper = Stepper::new(&start, h);
        let mut integral = 0.0;
        for _ in 0..steps {
            integral += v.eval(stepper.state()) * h;
            stepper.step(rng);
        }
        out[0] = if set.contains(stepper.state()) { (-integral).exp() } else { 0.0 };
    });
    Ok(m.estimate(0))
}

fn brownian_params(model: &DiffusionSpec) -> Result<(f64, f64)> {
    match model.kind() {
        DiffusionKind::BrownianDrift { volatility, drift } => Ok((volatility, drift)),
        DiffusionKind::SquaredBessel2 => Err(Error::BackendMismatch {
            backend: "adjoint",
            model: model.name(),
            reason: "the adjoint process is only available in closed form for Brownian motion with drift".into(),
        }),
    }
}

/// Density at `x` of `int q(t, y, .) f(y) dy` for Brownian motion with drift,
/// estimated by sampling `y ~ f` and evaluating the Gaussian kernel exactly.
pub fn forward_density(f: &LimitDensity, model: &DiffusionSpec, t: f64, x: f64, budget: &McBudget) -> Result<Estimate> {
    let (a, b) = brownian_params(model)?;
    budget.validate()?;
    let kernel = LimitDensity::normal(0.0, a * t.sqrt());
    let m = montecarlo::collect(budget.paths, 1, budget.stream, |_, rng, out| {
        let y = f.quantile(rng.gen());
        out[0] = kernel.pdf(x - y - b * t);
    });
    Ok(m.estimate(0))
}

/// `E[f(X*_t) | X*_0 = x]` for the adjoint process `X* = a W - b t`.
pub fn adjoint_density(f: &LimitDensity, model: &DiffusionSpec, t: f64, x: f64, budget: &McBudget) -> Result<Estimate> {
    let (a, b) = brownian_params(model)?;
    budget.validate()?;
    let m = montecarlo::collect(budget.paths, 1, budget.stream, |_, rng: &mut ChaCha8Rng, out| {
        let z: f64 = rng.sample(StandardNormal);
        out[0] = f.pdf(x + a * t.sqrt() * z - b * t);
    });
    Ok(m.estimate(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_lattice_is_normalized() {
        let f = LimitDensity::exponential(1.0).unwrap();
        let mu = build_lattice_measure(&f, 10, 1e-6).unwrap();
        assert!((mu.total_mass() - 1.0).abs() < 1e-12);
        assert!(mu.atoms().all(|(x, w)| x >= 0.0 && w > 0.0));
        assert!(mu.lattice_indices().all(|k| k >= 0));
    }

    #[test]
    fn degenerate_histogram_single_atom() {
        let n = 20;
        let half = 0.5 / n as f64;
        let f = LimitDensity::histogram(vec![-half, half], vec![1.0]).unwrap();
        let mu = build_lattice_measure(&f, n, 1e-6).unwrap();
        assert_eq!(mu.len(), 1);
        let (x, w) = mu.atoms().next().unwrap();
        assert_eq!(x, 0.0);
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lattice_rejects_bad_arguments() {
        let f = LimitDensity::exponential(1.0).unwrap();
        assert!(build_lattice_measure(&f, 0, 1e-6).is_err());
        assert!(build_lattice_measure(&f, 10, 0.0).is_err());
        assert_eq!(InitialMeasure::from_atoms(3, vec![(0, 0.0)]), Err(Error::EmptySupport));
    }

    #[test]
    fn density_validation() {
        assert!(LimitDensity::exponential(0.0).is_err());
        assert!(LimitDensity::gaussian(0.0, -1.0).is_err());
        assert!(LimitDensity::histogram(vec![0.0, 1.0], vec![0.5]).is_err());
        assert!(LimitDensity::histogram(vec![0.0, 1.0, 0.5], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let ds = [
            LimitDensity::exponential(2.0).unwrap(),
            LimitDensity::gaussian(1.0, 0.5).unwrap(),
            LimitDensity::histogram(vec![0.0, 1.0, 3.0], vec![0.25, 0.75]).unwrap(),
        ];
        for d in &ds {
            for u in [0.01, 0.3, 0.5, 0.9, 0.999] {
                assert!((d.cdf(d.quantile(u)) - u).abs() < 1e-9, "{d:?} {u}");
            }
        }
    }

    #[test]
    fn lattice_quantile_follows_weights() {
        let mu = InitialMeasure::from_atoms(2, vec![(0, 0.25), (1, 0.75)]).unwrap();
        assert_eq!(mu.quantile(0.1), 0.0);
        assert_eq!(mu.quantile(0.3), 0.5);
        assert_eq!(mu.quantile(0.999_999), 0.5);
    }

    #[test]
    fn empirical_counts() {
        let states = [Some(0.1), Some(0.2), None, Some(5.0)];
        let em = empirical_measure(1.0, &states, 4, &[Interval::closed(0.0, 1.0)]);
        assert_eq!(em.proportions(), vec![0.5]);
        let dead = [None, None, None];
        let em = empirical_measure(1.0, &dead, 3, &[Interval::closed(0.0, 1.0), Interval::half_open(2.0, 3.0)]);
        assert_eq!(em.proportions(), vec![0.0, 0.0]);
        assert!(em.total() <= 1.0);
    }

    #[test]
    fn interval_overlap_rules() {
        assert!(Interval::closed(0.0, 1.0).overlaps(&Interval::closed(1.0, 2.0)));
        assert!(!Interval::half_open(0.0, 1.0).overlaps(&Interval::closed(1.0, 2.0)));
    }

    #[test]
    fn occupancy_at_time_zero_is_initial_mass() {
        let f = LimitDensity::exponential(1.0).unwrap();
        let m = DiffusionSpec::squared_bessel2(0.0).unwrap();
        let v = RateFunction::constant(1.0).unwrap();
        let b = McBudget::new(10, 0.1, RngStream::new(1, 1));
        let e = limit_occupancy(&f, &m, &v, 0.0, &Interval::half_open(0.0, 1.0), &b).unwrap();
        assert!((e.value - (1.0 - (-1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn gaussian_density_rejected_for_bessel() {
        let f = LimitDensity::gaussian(0.0, 1.0).unwrap();
        let m = DiffusionSpec::squared_bessel2(0.0).unwrap();
        let v = RateFunction::constant(1.0).unwrap();
        let b = McBudget::new(10, 0.1, RngStream::new(1, 1));
        assert!(matches!(
            limit_occupancy(&f, &m, &v, 1.0, &Interval::whole_line(), &b),
            Err(Error::UnsupportedDensityModelPair { .. })
        ));
    }
}
