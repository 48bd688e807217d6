use surrender_core::bm_step::{rs_bm_lattice, StepSurrenderModel};
use surrender_core::mc_oracle::*;
use surrender_core::montecarlo::McBudget;
use surrender_core::pricing::{ContractTerms, KillingModel};
use surrender_core::process::{DiffusionSpec, RateFunction, SurrenderFamily};
use surrender_core::rng::RngStream;
use surrender_core::thermo::{build_lattice_measure, LimitDensity};

fn step_setup(p: f64) -> (CohortSetup, StepSurrenderModel) {
    let model = DiffusionSpec::brownian_drift(1.0, 0.0, 0.0).unwrap();
    let v = RateFunction::step(vec![0.0], vec![0.3, 0.9]).unwrap();
    let d = SurrenderFamily::affine_in_p(vec![0.0], vec![0.2, 0.05], vec![0.5, 0.2]).unwrap();
    let mu = build_lattice_measure(&LimitDensity::gaussian(0.0, 0.5).unwrap(), 20, 1e-6).unwrap();
    let setup = CohortSetup {
        terms: ContractTerms::new(1.0, 0.4, p).unwrap(),
        killing: KillingModel { model, mortality: v.clone(), surrender: Some(d.clone()) },
        mu,
        horizon: 60.0,
        dt: 2e-3,
    };
    let analytic = StepSurrenderModel { model, mortality: v, surrender: Some(d), discount: 0.4, sum_insured: 1.0 };
    (setup, analytic)
}

#[test]
fn cohort_return_matches_the_lattice_resolvent_sum() {
    for p in [0.0, 0.6] {
        let (setup, analytic) = step_setup(p);
        let est = oracle_return(&setup, OracleMode::Surrender, 600, RngStream::new(50, 0)).unwrap();
        let exact = rs_bm_lattice(p, &analytic, &setup.mu).unwrap();
        assert!(est.estimate().within(exact, 3.0), "p={p}: {est:?} vs {exact}");
    }
}

#[test]
fn standard_error_halves_with_four_times_the_replications() {
    let (setup, _) = step_setup(0.3);
    let small = oracle_return(&setup, OracleMode::Continuous, 200, RngStream::new(51, 0)).unwrap();
    let large = oracle_return(&setup, OracleMode::Continuous, 400, RngStream::new(51, 0)).unwrap();
    let ratio = small.std_error / large.std_error;
    assert!((ratio - 2f64.sqrt()).abs() < 0.25 * 2f64.sqrt(), "ratio {ratio}");
}

#[test]
fn oracle_is_reproducible() {
    let (setup, _) = step_setup(0.3);
    let a = oracle_return(&setup, OracleMode::Surrender, 50, RngStream::new(52, 0)).unwrap();
    let b = oracle_return(&setup, OracleMode::Surrender, 50, RngStream::new(52, 0)).unwrap();
    assert_eq!(a, b);
    let c = oracle_return(&setup, OracleMode::Surrender, 50, RngStream::new(52, 1)).unwrap();
    assert_ne!(a.value, c.value);
}

#[test]
fn ledger_exits_are_consistent() {
    let (setup, _) = step_setup(0.3);
    let ledger = simulate_cohort(20, &setup, LedgerMode::Continuous, RngStream::new(53, 0)).unwrap();
    assert_eq!(ledger.agents.len(), 20);
    assert_eq!(ledger.in_force_at(0.0), 20);
    for a in &ledger.agents {
        assert!(!(a.death.is_finite() && a.surrender.is_finite()));
    }
    assert!(ledger.discounted_expenditure <= 20.0);
}

#[test]
fn lemma_estimators_agree_for_constant_and_step_rates() {
    let model = DiffusionSpec::brownian_drift(1.0, 0.1, 0.0).unwrap();
    let (r, t) = (0.3, 2.0);
    let budget = McBudget::new(20_000, 1e-2, RngStream::new(54, 0));

    let lam = 0.5;
    let (lhs, rhs) = lemma_a1_check(&model, &RateFunction::constant(lam).unwrap(), r, t, 0.0, &budget).unwrap();
    let exact = lam / (r + lam) * (1.0 - (-(r + lam) * t).exp());
    assert!((rhs.value - exact).abs() < 1e-12);
    assert!(lhs.within(exact, 3.0), "{lhs:?} vs {exact}");

    let v = RateFunction::step(vec![-0.5, 0.5], vec![0.1, 0.4, 1.2]).unwrap();
    let (lhs, rhs) = lemma_a1_check(&model, &v, r, t, 0.2, &budget).unwrap();
    let se = lhs.std_error.hypot(rhs.std_error);
    assert!((lhs.value - rhs.value).abs() <= 3.0 * se, "{lhs:?} vs {rhs:?}");
}
