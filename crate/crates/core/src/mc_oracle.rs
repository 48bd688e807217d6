//! Brute-force cohort simulation.
//!
//! Every agent carries its own state path and two independent exponential
//! clocks, one for death at rate `V` and one for surrender at rate `D(., p)`.
//! Crossing times are linearly interpolated inside a step; if both clocks
//! fire in the same step the agent dies. Surrender is absorbing.

use rand::Rng;

use crate::error::{Error, Result};
use crate::montecarlo::{self, Estimate, McBudget};
use crate::pricing::{ContractTerms, KillingModel, ReturnEstimate};
use crate::process::{DiffusionSpec, ExpClock, RateFunction, Stepper};
use crate::rng::RngStream;
use crate::thermo::InitialMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerMode {
    /// Premiums collected from in-force agents at `t = 0, 1, 2, ...`; a death
    /// in `(t-1, t]` is paid at `t`.
    Discrete,
    /// Premiums paid continuously while in force; claims paid at death.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Discrete,
    Continuous,
    Surrender,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentRecord {
    pub initial: f64,
    /// Death time, `+inf` if not observed before the horizon or after surrender.
    pub death: f64,
    /// Surrender time, `+inf` if not observed.
    pub surrender: f64,
}

impl AgentRecord {
    pub fn exit_time(&self) -> f64 {
        self.death.min(self.surrender)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortLedger {
    pub n: usize,
    pub discounted_revenue: f64,
    pub discounted_expenditure: f64,
    /// Discounted revenue per unit premium.
    pub annuity: f64,
    pub agents: Vec<AgentRecord>,
}

impl CohortLedger {
    pub fn net(&self) -> f64 {
        self.discounted_revenue - self.discounted_expenditure
    }

    pub fn in_force_at(&self, t: f64) -> usize {
        self.agents.iter().filter(|a| a.exit_time() > t).count()
    }
}

/// Cohort inputs shared by all replications.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSetup {
    pub terms: ContractTerms,
    pub killing: KillingModel,
    pub mu: InitialMeasure,
    pub horizon: f64,
    pub dt: f64,
}

fn agent_times<R: Rng + ?Sized>(
    start: &DiffusionSpec,
    v: &RateFunction,
    d: Option<&RateFunction>,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> (f64, f64) {
    let mut death_clock = ExpClock::new(rng);
    let mut surrender_clock = ExpClock::new(rng);
    // constant rates need no path
    if let (Some(lam), Some(mu)) = (v.as_constant(), d.map_or(Some(0.0), |d| d.as_constant())) {
        let crossing = |clock: &ExpClock, rate: f64| if rate > 0.0 { clock.threshold() / rate } else { f64::INFINITY };
        let zeta = crossing(&death_clock, lam);
        let xi = crossing(&surrender_clock, mu);
        return match (zeta <= horizon, xi <= horizon) {
            (true, _) if zeta <= xi => (zeta, f64::INFINITY),
            (_, true) => (f64::INFINITY, xi),
            _ => (f64::INFINITY, f64::INFINITY),
        };
    }
    let mut stepper = Stepper::new(start, dt);
    let mut t = 0.0;
    while t < horizon {
        let h = dt.min(horizon - t);
        let x = stepper.state();
        let died = death_clock.advance(v.eval(x), h);
        let quit = d.and_then(|d| surrender_clock.advance(d.eval(x), h));
        if let Some(frac) = died {
            return (t + frac * h, f64::INFINITY);
        }
        if let Some(frac) = quit {
            return (f64::INFINITY, t + frac * h);
        }
        stepper.step_by(rng, h);
        t += h;
    }
    (f64::INFINITY, f64::INFINITY)
}

fn check_setup(n: usize, setup: &CohortSetup) -> Result<()> {
    if setup.mu.n() != n {
        return Err(Error::LatticeMismatch { measure: setup.mu.n(), cohort: n });
    }
    setup.terms.validate()?;
    if !(setup.dt > 0.0) {
        return Err(Error::NonPositiveStep(setup.dt));
    }
    if !(setup.horizon > 0.0) {
        return Err(Error::InvalidHorizon { horizon: setup.horizon, dt: setup.dt });
    }
    for (x, _) in setup.mu.atoms() {
        setup.killing.model.started_at(x)?;
    }
    Ok(())
}

/// Simulates one cohort of `n` agents drawn from `mu`.
pub fn simulate_cohort(n: usize, setup: &CohortSetup, mode: LedgerMode, stream: RngStream) -> Result<CohortLedger> {
    if n == 0 {
        return Ok(CohortLedger {
            n,
            discounted_revenue: 0.0,
            discounted_expenditure: 0.0,
            annuity: 0.0,
            agents: vec![],
        });
    }
    check_setup(n, setup)?;
    let ContractTerms { sum_insured: a, discount: r, premium: p } = setup.terms;
    let d = setup.killing.surrender_at(p);
    let mut ledger = CohortLedger {
        n,
        discounted_revenue: 0.0,
        discounted_expenditure: 0.0,
        annuity: 0.0,
        agents: Vec::with_capacity(n),
    };
    for j in 0..n {
        let mut rng = stream.substream(j as u64).generator();
        let x0 = setup.mu.quantile(rng.gen());
        let start = setup.killing.model.started_at(x0)?;
        let (death, surrender) =
            agent_times(&start, &setup.killing.mortality, d.as_ref(), setup.horizon, setup.dt, &mut rng);
        let agent = AgentRecord { initial: x0, death, surrender };
        let end = agent.exit_time().min(setup.horizon);
        let (annuity, claim) = match mode {
            LedgerMode::Continuous => {
                (-(-r * end).exp_m1() / r, if death.is_finite() { (-r * death).exp() } else { 0.0 })
            }
            LedgerMode::Discrete => {
                // premiums at integer t <= horizon with t < exit time
                let cap = setup.horizon.floor() + 1.0;
                let count = agent.exit_time().ceil().min(cap);
                let annuity = -(-r * count).exp_m1() / -(-r).exp_m1();
                let claim = if death.is_finite() { (-r * death.ceil()).exp() } else { 0.0 };
                (annuity, claim)
            }
        };
        ledger.annuity += annuity;
        ledger.discounted_revenue += p * annuity;
        ledger.discounted_expenditure += a * claim;
        ledger.agents.push(agent);
    }
    debug_assert!(ledger.discounted_expenditure <= a * n as f64 * (1.0 + 1e-12));
    Ok(ledger)
}

fn ledger_mode(mode: OracleMode) -> LedgerMode {
    match mode {
        OracleMode::Discrete => LedgerMode::Discrete,
        OracleMode::Continuous | OracleMode::Surrender => LedgerMode::Continuous,
    }
}

fn mode_setup(setup: &CohortSetup, mode: OracleMode) -> CohortSetup {
    let mut s = setup.clone();
    if mode != OracleMode::Surrender {
        s.killing.surrender = None;
    }
    s
}

fn replicate(
    setup: &CohortSetup,
    mode: OracleMode,
    replications: usize,
    stream: RngStream,
) -> Result<montecarlo::Moments> {
    if replications < 2 {
        return Err(Error::InvalidBudget(format!("need at least 2 replications, got {replications}")));
    }
    let s = mode_setup(setup, mode);
    let n = s.mu.n();
    check_setup(n, &s)?;
    Ok(montecarlo::collect(replications, 2, stream, |i, _, out| {
        let ledger = simulate_cohort(n, &s, ledger_mode(mode), stream.substream(i as u64)).expect("validated above");
        out[0] = ledger.annuity;
        out[1] = ledger.discounted_expenditure;
    }))
}

/// Mean and standard error of the cohort's net discounted value `R(N, p)`.
pub fn oracle_return(
    setup: &CohortSetup,
    mode: OracleMode,
    replications: usize,
    stream: RngStream,
) -> Result<ReturnEstimate> {
    let m = replicate(setup, mode, replications, stream)?;
    Ok(ReturnEstimate::mc(m.linear(&[setup.terms.premium, -1.0])))
}

/// Break-even premium of the cohort: expected discounted claims over the
/// expected discounted annuity. Surrender is ignored.
pub fn oracle_premium(
    setup: &CohortSetup,
    mode: OracleMode,
    replications: usize,
    stream: RngStream,
) -> Result<Estimate> {
    let mode = if mode == OracleMode::Surrender { OracleMode::Continuous } else { mode };
    let m = replicate(setup, mode, replications, stream)?;
    let den = m.estimate(0);
    if !(den.value > 3.0 * den.std_error) {
        return Err(Error::DegenerateDenominator { value: den.value, std_error: den.std_error });
    }
    Ok(m.ratio(&[0.0, 1.0], &[1.0, 0.0]))
}

/// Two estimators of `E[e^{-rζ} 1_{ζ <= t}]` for the killing time `ζ` at rate `V`.
///
/// `lhs` samples `ζ` with the interpolated clock. `rhs` integrates
/// `e^{-rs} V(X_s) exp(-Λ_s)` over `[0, t]` on the same grid, where `Λ` is the
/// piecewise-linear integrated rate; each cell is integrated exactly.
pub fn lemma_a1_check(
    model: &DiffusionSpec,
    v: &RateFunction,
    r: f64,
    t: f64,
    x0: f64,
    budget: &McBudget,
) -> Result<(Estimate, Estimate)> {
    if !(t >= 0.0) {
        return Err(Error::InvalidHorizon { horizon: t, dt: budget.dt });
    }
    if t == 0.0 {
        return Ok((Estimate::exact(0.0), Estimate::exact(0.0)));
    }
    budget.validate()?;
    let start = model.started_at(x0)?;
    let steps = ((t / budget.dt).round() as usize).max(1);
    let h = t / steps as f64;
    let m = montecarlo::collect(budget.paths, 2, budget.stream, |_, rng, out| {
        let mut clock = ExpClock::new(rng);
        let mut stepper = Stepper::new(&start, h);
        let mut zeta = f64::INFINITY;
        let mut lambda = 0.0;
        let mut rhs = 0.0;
        for k in 0..steps {
            let s = k as f64 * h;
            let rate = v.eval(stepper.state());
            let k_rate = r + rate;
            let cell = if k_rate > 0.0 { -(-k_rate * h).exp_m1() / k_rate } else { h };
            rhs += (-r * s - lambda).exp() * rate * cell;
            lambda += rate * h;
            if zeta.is_infinite() {
                if let Some(frac) = clock.advance(rate, h) {
                    zeta = s + frac * h;
                }
            }
            stepper.step(rng);
        }
        out[0] = if zeta <= t { (-r * zeta).exp() } else { 0.0 };
        out[1] = rhs;
    });
    Ok((m.estimate(0), m.estimate(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::SurrenderFamily;

    fn lattice_at_zero(n: usize) -> InitialMeasure {
        InitialMeasure::from_atoms(n, vec![(0, 1.0)]).unwrap()
    }

    fn setup(lam: f64, a: f64, p: f64) -> CohortSetup {
        CohortSetup {
            terms: ContractTerms::new(a, 0.05, p).unwrap(),
            killing: KillingModel::without_surrender(
                DiffusionSpec::brownian_drift(1.0, 0.0, 0.0).unwrap(),
                RateFunction::constant(lam).unwrap(),
            ),
            mu: lattice_at_zero(50),
            horizon: 700.0,
            dt: 0.01,
        }
    }

    #[test]
    fn empty_and_zero_claims() {
        let s = setup(0.1, 1.0, 0.1);
        let l = simulate_cohort(0, &s, LedgerMode::Continuous, RngStream::new(1, 0)).unwrap();
        assert_eq!((l.discounted_revenue, l.discounted_expenditure), (0.0, 0.0));
        let s0 = setup(0.1, 0.0, 0.1);
        let l = simulate_cohort(50, &s0, LedgerMode::Continuous, RngStream::new(1, 0)).unwrap();
        assert_eq!(l.discounted_expenditure, 0.0);
        assert!(matches!(
            simulate_cohort(40, &s, LedgerMode::Continuous, RngStream::new(1, 0)),
            Err(Error::LatticeMismatch { measure: 50, cohort: 40 })
        ));
    }

    #[test]
    fn expenditure_bounded_by_an() {
        let s = setup(0.3, 2.0, 0.1);
        for seed in 0..20 {
            for mode in [LedgerMode::Continuous, LedgerMode::Discrete] {
                let l = simulate_cohort(50, &s, mode, RngStream::new(seed, 1)).unwrap();
                assert!(l.discounted_expenditure <= 2.0 * 50.0);
            }
        }
    }

    #[test]
    fn constant_rate_continuous_matches_closed_form() {
        // R_c(N, p) = N (p - A λ) / (λ + r)
        let s = setup(0.2, 1.0, 0.1);
        let est = oracle_return(&s, OracleMode::Continuous, 200, RngStream::new(4, 0)).unwrap();
        let exact = 50.0 * (0.1 - 0.2) / 0.25;
        assert!(est.estimate().within(exact, 3.0), "{est:?} vs {exact}");
    }

    #[test]
    fn constant_rate_discrete_premium() {
        let s = setup(0.1, 1.0, 0.0);
        let est = oracle_premium(&s, OracleMode::Discrete, 400, RngStream::new(5, 0)).unwrap();
        let exact = (1.0 - (-0.1f64).exp()) * (-0.05f64).exp();
        assert!(est.within(exact, 3.0), "{est:?} vs {exact}");
    }

    #[test]
    fn clocks_end_contract_once() {
        let mut s = setup(0.2, 1.0, 0.1);
        s.killing.mortality = RateFunction::step(vec![0.0], vec![0.1, 0.4]).unwrap();
        s.killing.surrender = Some(SurrenderFamily::constant_in_x(0.2, 0.0).unwrap());
        s.horizon = 50.0;
        let l = simulate_cohort(50, &s, LedgerMode::Continuous, RngStream::new(8, 0)).unwrap();
        assert!(l.agents.iter().all(|a| !(a.death.is_finite() && a.surrender.is_finite())));
        assert!(l.agents.iter().any(|a| a.surrender.is_finite()));
    }

    #[test]
    fn lemma_zero_horizon() {
        let b = McBudget::new(10, 0.01, RngStream::new(1, 1));
        let m = DiffusionSpec::brownian_drift(1.0, 0.0, 0.0).unwrap();
        let (l, r) = lemma_a1_check(&m, &RateFunction::constant(0.2).unwrap(), 0.05, 0.0, 0.0, &b).unwrap();
        assert_eq!((l.value, r.value), (0.0, 0.0));
    }

    #[test]
    fn lemma_constant_rhs_is_exact() {
        let b = McBudget::new(10, 0.01, RngStream::new(1, 1));
        let m = DiffusionSpec::brownian_drift(1.0, 0.0, 0.0).unwrap();
        let (_, r) = lemma_a1_check(&m, &RateFunction::constant(0.2).unwrap(), 0.05, 5.0, 0.0, &b).unwrap();
        let exact = 0.2 / 0.25 * (1.0 - (-1.25f64).exp());
        assert!((r.value - exact).abs() < 1e-12);
    }
}
