//! Expected returns, premiums and break-even search.
//!
//! Monte Carlo returns are per capita; multiply by the cohort size with
//! [`ReturnEstimate::scaled`]. Discounted time integrals
//! `int_0^inf e^{-rt} h(t) dt` are estimated as `E[h(τ)] / r`, `τ ~ Exp(r)`.
//! Every path draws its initial point, its `τ` and its increments from its
//! own substream in that order, so estimates at different premiums or
//! different initial laws share random numbers.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::bessel2sb::{self, Bessel2Config};
use crate::bm_step::{self, StepSurrenderModel};
use crate::error::{Error, Result};
use crate::montecarlo::{self, Estimate, McBudget, Moments};
use crate::process::{AffineMap, DiffusionKind, DiffusionSpec, RateFunction, Stepper, SurrenderFamily};
use crate::thermo::{InitialLaw, LimitDensity};

/// Integrated killing beyond which the survival weight is zero in `f64`.
const UNDERFLOW: f64 = 800.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractTerms {
    pub sum_insured: f64,
    pub discount: f64,
    pub premium: f64,
}

impl ContractTerms {
    pub fn new(sum_insured: f64, discount: f64, premium: f64) -> Result<Self> {
        let t = Self { sum_insured, discount, premium };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sum_insured >= 0.0 && self.sum_insured.is_finite()) {
            return Err(Error::InvalidTerms(format!("sum insured must be nonnegative, got {}", self.sum_insured)));
        }
        if !(self.discount > 0.0 && self.discount.is_finite()) {
            return Err(Error::InvalidTerms(format!("discount rate must be positive, got {}", self.discount)));
        }
        if !(self.premium >= 0.0 && self.premium.is_finite()) {
            return Err(Error::InvalidTerms(format!("premium must be nonnegative, got {}", self.premium)));
        }
        Ok(())
    }

    pub fn with_premium(self, premium: f64) -> Self {
        Self { premium, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Mc,
    BmStep,
    Bessel2Sb,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mc => "mc",
            Self::BmStep => "bm-step",
            Self::Bessel2Sb => "bessel",
        }
    }

    pub fn is_analytic(self) -> bool {
        self != Self::Mc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnEstimate {
    pub value: f64,
    pub std_error: f64,
    pub backend: Backend,
}

impl ReturnEstimate {
    pub fn analytic(value: f64, backend: Backend) -> Self {
        Self { value, std_error: 0.0, backend }
    }

    pub fn mc(e: Estimate) -> Self {
        Self { value: e.value, std_error: e.std_error, backend: Backend::Mc }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self { value: self.value * factor, std_error: self.std_error * factor.abs(), ..self }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.value, std_error: self.std_error }
    }
}

/// State process with mortality `V` and an optional surrender family `D(., p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KillingModel {
    pub model: DiffusionSpec,
    pub mortality: RateFunction,
    pub surrender: Option<SurrenderFamily>,
}

impl KillingModel {
    pub fn without_surrender(model: DiffusionSpec, mortality: RateFunction) -> Self {
        Self { model, mortality, surrender: None }
    }

    pub fn surrender_at(&self, p: f64) -> Option<RateFunction> {
        self.surrender.as_ref().filter(|f| !f.is_identically_zero()).map(|f| f.at(p))
    }
}

/// Path quantities at an independent `τ ~ Exp(r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTimeSample {
    pub tau: f64,
    pub state: f64,
    pub int_mortality: f64,
    pub int_surrender: f64,
    pub negative_points: u64,
    pub visited_points: u64,
    underflow: bool,
}

impl ExpTimeSample {
    /// `exp(-int_0^τ (V + D))`.
    pub fn weight(&self) -> f64 {
        if self.underflow {
            0.0
        } else {
            (-(self.int_mortality + self.int_surrender)).exp()
        }
    }
}

/// Runs `X` from `x0` to `τ ~ Exp(r)` with left-endpoint rate integrals on
/// steps of `dt`; the last partial step ends exactly at `τ`.
pub fn sample_to_exp_time<R: Rng + ?Sized>(
    start: &DiffusionSpec,
    v: &RateFunction,
    d: Option<&RateFunction>,
    r: f64,
    dt: f64,
    rng: &mut R,
) -> ExpTimeSample {
    let tau: f64 = rng.sample::<f64, _>(Exp1) / r;
    let mut stepper = Stepper::new(start, dt);
    let mut out = ExpTimeSample {
        tau,
        state: start.x0(),
        int_mortality: 0.0,
        int_surrender: 0.0,
        negative_points: 0,
        visited_points: 0,
        underflow: false,
    };
    let mut t = 0.0;
    loop {
        let x = stepper.state();
        let remaining = tau - t;
        let h = remaining.min(dt);
        out.int_mortality += v.eval(x) * h;
        if let Some(d) = d {
            let rate = d.eval(x);
            out.visited_points += 1;
            if rate < 0.0 {
                out.negative_points += 1;
            }
            out.int_surrender += rate * h;
        }
        if remaining <= dt {
            if h > 0.0 {
                stepper.step_by(rng, h);
            }
            break;
        }
        if out.int_mortality + out.int_surrender > UNDERFLOW {
            out.underflow = true;
            break;
        }
        stepper.step(rng);
        t += dt;
    }
    out.state = stepper.state();
    out
}

fn start_at(model: &DiffusionSpec, x0: f64) -> DiffusionSpec {
    model.started_at(x0).expect("initial law checked against the model")
}

fn check_inputs(km: &KillingModel, law: &InitialLaw, r: f64, budget: &McBudget) -> Result<()> {
    budget.validate()?;
    law.check_model(&km.model)?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidTerms(format!("discount rate must be positive, got {r}")));
    }
    Ok(())
}

/// Per-path statistics `(W/r, V(X_τ) W/r)` plus the negative-rate counts.
struct ContinuousMoments {
    moments: Moments,
    negative: u64,
    visited: u64,
}

fn continuous_moments(
    km: &KillingModel,
    d: Option<&RateFunction>,
    law: &InitialLaw,
    r: f64,
    budget: &McBudget,
) -> Result<ContinuousMoments> {
    check_inputs(km, law, r, budget)?;
    let negative = AtomicU64::new(0);
    let visited = AtomicU64::new(0);
    let moments = montecarlo::collect(budget.paths, 2, budget.stream, |_, rng: &mut ChaCha8Rng, out| {
        let x0 = law.quantile(rng.gen());
        let s = sample_to_exp_time(&start_at(&km.model, x0), &km.mortality, d, r, budget.dt, rng);
        let w = s.weight();
        out[0] = w / r;
        out[1] = km.mortality.eval(s.state) * w / r;
        if s.visited_points > 0 {
            negative.fetch_add(s.negative_points, Ordering::Relaxed);
            visited.fetch_add(s.visited_points, Ordering::Relaxed);
        }
    });
    Ok(ContinuousMoments { moments, negative: negative.into_inner(), visited: visited.into_inner() })
}

/// Per-capita `R_c`: `E_x[int e^{-rt} (p - A V(X_t)) e^{-int_0^t V} dt]`.
pub fn expected_return_continuous(
    terms: &ContractTerms,
    km: &KillingModel,
    law: &InitialLaw,
    budget: &McBudget,
) -> Result<ReturnEstimate> {
    terms.validate()?;
    let m = continuous_moments(km, None, law, terms.discount, budget)?;
    Ok(ReturnEstimate::mc(m.moments.linear(&[terms.premium, -terms.sum_insured])))
}

fn ratio_premium(m: &Moments, num: &[f64], den: &[f64]) -> Result<Estimate> {
    let denom = m.linear(den);
    if !(denom.value > 3.0 * denom.std_error) || denom.value <= 0.0 {
        return Err(Error::DegenerateDenominator { value: denom.value, std_error: denom.std_error });
    }
    Ok(m.ratio(num, den))
}

/// Break-even `p_c = A E[int e^{-rt} V e^{-int V}] / E[int e^{-rt} e^{-int V}]`.
pub fn premium_continuous(
    sum_insured: f64,
    discount: f64,
    km: &KillingModel,
    law: &InitialLaw,
    budget: &McBudget,
) -> Result<Estimate> {
    ContractTerms::new(sum_insured, discount, 0.0)?;
    let m = continuous_moments(km, None, law, discount, budget)?;
    ratio_premium(&m.moments, &[0.0, sum_insured], &[1.0, 0.0])
}

/// Fraction of visited path points where the surrender rate was negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativeRateDiagnostic {
    pub fraction: f64,
    pub threshold: f64,
}

/// Per-capita `R_s`: `E_x[int e^{-rt} (p - A V(X_t)) e^{-int_0^t (V + D(., p))} dt]`.
pub fn expected_return_surrender(
    terms: &ContractTerms,
    km: &KillingModel,
    law: &InitialLaw,
    budget: &McBudget,
    negative_threshold: f64,
) -> Result<(ReturnEstimate, NegativeRateDiagnostic)> {
    terms.validate()?;
    let d = km.surrender_at(terms.premium);
    let m = continuous_moments(km, d.as_ref(), law, terms.discount, budget)?;
    let fraction = if m.visited == 0 { 0.0 } else { m.negative as f64 / m.visited as f64 };
    let diag = NegativeRateDiagnostic { fraction, threshold: negative_threshold };
    if fraction > negative_threshold {
        return Err(Error::NegativeRateEncountered { fraction, threshold: negative_threshold });
    }
    let est = m.moments.linear(&[terms.premium, -terms.sum_insured]);
    Ok((ReturnEstimate::mc(est), diag))
}

/// Monte Carlo resolvents `(z_V(y), z_1(y))` with killing `V + D`.
pub fn resolvent_mc(
    model: &DiffusionSpec,
    mortality: &RateFunction,
    surrender: Option<&RateFunction>,
    discount: f64,
    y: f64,
    budget: &McBudget,
) -> Result<(Estimate, Estimate)> {
    let km = KillingModel::without_surrender(*model, mortality.clone());
    let m = continuous_moments(&km, surrender, &InitialLaw::Point(y), discount, budget)?;
    Ok((m.moments.estimate(1), m.moments.estimate(0)))
}

/// Horizon for the discrete model, in whole periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteHorizon {
    pub periods: usize,
    pub tail_tolerance: f64,
}

impl DiscreteHorizon {
    /// `e^{-rT} N (p + A) / (1 - e^{-r})`.
    pub fn tail_bound(&self, terms: &ContractTerms, cohort: usize) -> f64 {
        let r = terms.discount;
        (-r * self.periods as f64).exp() * cohort as f64 * (terms.premium + terms.sum_insured) / (1.0 - (-r).exp())
    }

    pub fn check(&self, terms: &ContractTerms, cohort: usize) -> Result<()> {
        let bound = self.tail_bound(terms, cohort);
        if bound > self.tail_tolerance {
            return Err(Error::TailBoundViolated {
                horizon: self.periods as f64,
                bound,
                tolerance: self.tail_tolerance,
            });
        }
        Ok(())
    }

    /// Smallest horizon meeting the tolerance.
    pub fn for_tolerance(terms: &ContractTerms, cohort: usize, tail_tolerance: f64) -> Self {
        let r = terms.discount;
        let scale = cohort as f64 * (terms.premium + terms.sum_insured) / (1.0 - (-r).exp());
        let periods = if scale <= tail_tolerance { 0 } else { ((scale / tail_tolerance).ln() / r).ceil() as usize };
        Self { periods, tail_tolerance }
    }
}

/// Per-path `(sum_t e^{-rt} W_t, sum_t e^{-rt} deaths in (t-1, t])`, `t = 0..=T`.
fn discrete_moments(
    km: &KillingModel,
    d: Option<&RateFunction>,
    law: &InitialLaw,
    r: f64,
    periods: usize,
    budget: &McBudget,
) -> Result<Moments> {
    check_inputs(km, law, r, budget)?;
    let sub = ((1.0 / budget.dt).round() as usize).max(1);
    let h = 1.0 / sub as f64;
    Ok(montecarlo::collect(budget.paths, 2, budget.stream, |_, rng: &mut ChaCha8Rng, out| {
        let x0 = law.quantile(rng.gen());
        let mut stepper = Stepper::new(&start_at(&km.model, x0), h);
        let mut w = 1.0;
        let (mut revenue, mut expenditure) = (0.0, 0.0);
        for t in 0..=periods {
            let disc = (-r * t as f64).exp();
            revenue += disc * w;
            if t == periods || w < 1e-300 {
                break;
            }
            let mut deaths = 0.0;
            for _ in 0..sub {
                let x = stepper.state();
                let v = km.mortality.eval(x);
                let total = v + d.map_or(0.0, |d| d.eval(x));
                let exit = -(-total * h).exp_m1();
                deaths += if total != 0.0 { w * exit * v / total } else { w * v * h };
                w *= 1.0 - exit;
                stepper.step(rng);
            }
            expenditure += disc * (-r).exp() * deaths;
        }
        out[0] = revenue;
        out[1] = expenditure;
    }))
}

/// Per-capita `R_d = sum_t e^{-rt} E[v_t(p) - c_t]` truncated at the horizon.
pub fn expected_return_discrete(
    terms: &ContractTerms,
    km: &KillingModel,
    law: &InitialLaw,
    horizon: &DiscreteHorizon,
    budget: &McBudget,
) -> Result<ReturnEstimate> {
    terms.validate()?;
    horizon.check(terms, law.cohort_size().unwrap_or(1))?;
    let d = km.surrender_at(terms.premium);
    let m = discrete_moments(km, d.as_ref(), law, terms.discount, horizon.periods, budget)?;
    Ok(ReturnEstimate::mc(m.linear(&[terms.premium, -terms.sum_insured])))
}

/// Break-even `p_d`: discounted expected claims over discounted expected in-force counts.
pub fn premium_discrete(
    sum_insured: f64,
    discount: f64,
    km: &KillingModel,
    law: &InitialLaw,
    horizon: &DiscreteHorizon,
    budget: &McBudget,
) -> Result<Estimate> {
    let terms = ContractTerms::new(sum_insured, discount, 0.0)?;
    horizon.check(&terms, law.cohort_size().unwrap_or(1))?;
    let m = discrete_moments(km, None, law, discount, horizon.periods, budget)?;
    ratio_premium(&m, &[0.0, sum_insured], &[1.0, 0.0])
}

/// Everything needed to evaluate `VAR_s(p)` on any backend.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrenderSetup {
    pub killing: KillingModel,
    pub law: InitialLaw,
    pub sum_insured: f64,
    pub discount: f64,
    pub budget: McBudget,
    pub negative_threshold: f64,
}

impl SurrenderSetup {
    pub fn step_model(&self) -> Result<StepSurrenderModel> {
        let mismatch = |reason: &str| Error::BackendMismatch {
            backend: Backend::BmStep.name(),
            model: self.killing.model.name(),
            reason: reason.into(),
        };
        if !matches!(self.killing.model.kind(), DiffusionKind::BrownianDrift { .. }) {
            return Err(mismatch("needs Brownian motion with drift"));
        }
        if !matches!(self.killing.mortality, RateFunction::Step { .. }) {
            return Err(mismatch("needs step mortality"));
        }
        if matches!(self.killing.surrender, Some(SurrenderFamily::Affine2SB { .. })) {
            return Err(mismatch("needs a step surrender family"));
        }
        Ok(StepSurrenderModel {
            model: self.killing.model,
            mortality: self.killing.mortality.clone(),
            surrender: self.killing.surrender.clone(),
            discount: self.discount,
            sum_insured: self.sum_insured,
        })
    }

    pub fn bessel_config(&self) -> Result<Bessel2Config> {
        let mismatch = |reason: &str| Error::BackendMismatch {
            backend: Backend::Bessel2Sb.name(),
            model: self.killing.model.name(),
            reason: reason.into(),
        };
        if self.killing.model.kind() != DiffusionKind::SquaredBessel2 {
            return Err(mismatch("needs the 2-d squared Bessel process"));
        }
        let (m, n) = match self.killing.mortality {
            RateFunction::Affine { slope, intercept } => (slope, intercept),
            RateFunction::Step { .. } => return Err(mismatch("needs affine mortality")),
        };
        let zero = AffineMap::new(0.0, 0.0);
        let (phi, rho) = match &self.killing.surrender {
            None => (zero, zero),
            Some(SurrenderFamily::Affine2SB { phi, rho }) => (*phi, *rho),
            Some(SurrenderFamily::AffineInP { .. }) => return Err(mismatch("needs an affine surrender family")),
        };
        let gamma = match &self.law {
            InitialLaw::Density(LimitDensity::Exponential { rate }) => *rate,
            _ => return Err(mismatch("needs an exponential limit density")),
        };
        let cfg = Bessel2Config { m, n, phi, rho, gamma, sum_insured: self.sum_insured, discount: self.discount };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `VAR_s(p)`, per capita, on the chosen backend.
pub fn var_surrender(p: f64, backend: Backend, setup: &SurrenderSetup) -> Result<ReturnEstimate> {
    match backend {
        Backend::Mc => {
            let terms = ContractTerms::new(setup.sum_insured, setup.discount, p)?;
            let (est, _) =
                expected_return_surrender(&terms, &setup.killing, &setup.law, &setup.budget, setup.negative_threshold)?;
            Ok(est)
        }
        Backend::BmStep => {
            let model = setup.step_model()?;
            let value = match &setup.law {
                InitialLaw::Density(f) => bm_step::var_bm(p, &model, f)?,
                InitialLaw::Lattice(mu) => bm_step::rs_bm_lattice(p, &model, mu)? / mu.n() as f64,
                InitialLaw::Point(y) => {
                    let (zv, z1) = bm_step::solve_resolvents(&model.config_at(p)?)?;
                    p * z1.eval(*y) - setup.sum_insured * zv.eval(*y)
                }
            };
            Ok(ReturnEstimate::analytic(value, backend))
        }
        Backend::Bessel2Sb => {
            let cfg = setup.bessel_config()?;
            Ok(ReturnEstimate::analytic(bessel2sb::var_bessel(p, &cfg, bessel2sb::DEFAULT_TOL)?, backend))
        }
    }
}

/// Root search controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSpec {
    pub p_max_initial: f64,
    pub growth: f64,
    pub grid_size: usize,
    pub tolerance: f64,
    pub max_expansions: usize,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self { p_max_initial: 1.0, growth: 2.0, grid_size: 16, tolerance: 1e-10, max_expansions: 12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootStatus {
    Unique,
    Multiple,
    NoneFound,
}

impl RootStatus {
    pub fn name(self) -> &'static str {
        match self {
            Self::Unique => "UNIQUE",
            Self::Multiple => "MULTIPLE",
            Self::NoneFound => "NONE_FOUND",
        }
    }
}

/// One scanned grid cell and the signs of the objective at its ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketEntry {
    pub lo: f64,
    pub hi: f64,
    pub sign_lo: i8,
    pub sign_hi: i8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub value: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootReport {
    pub roots: Vec<Root>,
    pub bracket_log: Vec<BracketEntry>,
    pub status: RootStatus,
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Scans `[0, p_max]` on a uniform grid, extending the range geometrically
/// until a sign change appears, then bisects every sign-change cell.
pub fn solve_premium<F>(mut objective: F, search: &SearchSpec) -> Result<RootReport>
where
    F: FnMut(f64) -> Result<ReturnEstimate>,
{
    if !(search.p_max_initial > 0.0) || !(search.growth > 1.0) || search.grid_size < 1 || !(search.tolerance > 0.0) {
        return Err(Error::InvalidTerms("search needs p_max > 0, growth > 1, grid_size >= 1, tolerance > 0".into()));
    }
    let mut log = Vec::new();
    let mut cells: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut exact = Vec::new();
    let (mut lo, mut hi) = (0.0, search.p_max_initial);
    let mut f_lo = objective(lo)?.value;
    if f_lo == 0.0 {
        exact.push(Root { value: 0.0, bracket_lo: 0.0, bracket_hi: 0.0, residual: 0.0 });
    }
    for expansion in 0..=search.max_expansions {
        let step = (hi - lo) / search.grid_size as f64;
        for k in 0..search.grid_size {
            let a = lo + step * k as f64;
            let b = if k + 1 == search.grid_size { hi } else { lo + step * (k + 1) as f64 };
            let f_b = objective(b)?.value;
            log.push(BracketEntry { lo: a, hi: b, sign_lo: sign(f_lo), sign_hi: sign(f_b) });
            if f_b == 0.0 {
                exact.push(Root { value: b, bracket_lo: a, bracket_hi: b, residual: 0.0 });
            } else if f_lo != 0.0 && sign(f_lo) != sign(f_b) {
                cells.push((a, b, f_lo, f_b));
            }
            f_lo = f_b;
        }
        if !cells.is_empty() || !exact.is_empty() || expansion == search.max_expansions {
            break;
        }
        lo = hi;
        hi *= search.growth;
    }
    let mut roots = exact;
    for (a0, b0, fa0, _) in cells {
        let (mut a, mut b, mut fa) = (a0, b0, fa0);
        let mut found = None;
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let fm = objective(mid)?.value;
            if fm.abs() <= search.tolerance {
                found = Some(Root { value: mid, bracket_lo: a0, bracket_hi: b0, residual: fm });
                break;
            }
            if !(mid > a && mid < b) {
                break;
            }
            if sign(fm) == sign(fa) {
                a = mid;
                fa = fm;
            } else {
                b = mid;
            }
        }
        roots.extend(found);
    }
    roots.sort_by(|x, y| x.value.total_cmp(&y.value));
    let status = match roots.len() {
        0 => RootStatus::NoneFound,
        1 => RootStatus::Unique,
        _ => RootStatus::Multiple,
    };
    Ok(RootReport { roots, bracket_log: log, status })
}
