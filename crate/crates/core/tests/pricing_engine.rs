use surrender_core::bm_step::{var_bm, StepSurrenderModel};
use surrender_core::montecarlo::McBudget;
use surrender_core::pricing::*;
use surrender_core::process::{DiffusionSpec, RateFunction, SurrenderFamily};
use surrender_core::rng::RngStream;
use surrender_core::thermo::{InitialLaw, LimitDensity};
use surrender_core::Error;

fn bm() -> DiffusionSpec {
    DiffusionSpec::brownian_drift(1.0, 0.1, 0.0).unwrap()
}

fn step_v() -> RateFunction {
    RateFunction::step(vec![-0.5, 0.5], vec![0.05, 0.2, 0.6]).unwrap()
}

fn law() -> InitialLaw {
    InitialLaw::Density(LimitDensity::gaussian(0.0, 0.5).unwrap())
}

fn budget(paths: usize, id: u64) -> McBudget {
    McBudget::new(paths, 5e-3, RngStream::new(31, id))
}

#[test]
fn return_is_affine_in_premium() {
    let km = KillingModel::without_surrender(bm(), step_v());
    let b = budget(4_000, 1);
    let at = |p: f64| expected_return_continuous(&ContractTerms::new(1.0, 0.3, p).unwrap(), &km, &law(), &b).unwrap();
    let (r0, r1, r2) = (at(0.0), at(0.5), at(1.0));
    let mid = 0.5 * (r0.value + r2.value);
    assert!((r1.value - mid).abs() <= 3.0 * (r1.std_error + r0.std_error + r2.std_error));
    // shared paths make the collinearity exact up to rounding
    assert!((r1.value - mid).abs() < 1e-12);
    assert!(r0.value < 0.0 && r1.value > r0.value && r2.value > r1.value);
}

#[test]
fn scaling_sum_insured_and_premium_scales_the_return() {
    let km = KillingModel::without_surrender(bm(), step_v());
    let b = budget(4_000, 2);
    let base = expected_return_continuous(&ContractTerms::new(1.0, 0.3, 0.2).unwrap(), &km, &law(), &b).unwrap();
    let big = expected_return_continuous(&ContractTerms::new(3.0, 0.3, 0.6).unwrap(), &km, &law(), &b).unwrap();
    assert!((big.value - 3.0 * base.value).abs() < 1e-12);
    assert!((big.std_error - 3.0 * base.std_error).abs() < 1e-12);

    let setup = |a: f64| SurrenderSetup {
        killing: KillingModel::without_surrender(bm(), step_v()),
        law: law(),
        sum_insured: a,
        discount: 0.3,
        budget: b,
        negative_threshold: 0.0,
    };
    let x = var_surrender(0.2, Backend::BmStep, &setup(1.0)).unwrap().value;
    let y = var_surrender(0.6, Backend::BmStep, &setup(3.0)).unwrap().value;
    assert!((y - 3.0 * x).abs() < 1e-8 * x.abs().max(1.0));
}

#[test]
fn zero_surrender_reduces_to_the_plain_model() {
    let b = budget(4_000, 3);
    let terms = ContractTerms::new(1.0, 0.3, 0.25).unwrap();
    let plain = KillingModel::without_surrender(bm(), step_v());
    let zero = KillingModel {
        surrender: Some(SurrenderFamily::affine_in_p(vec![], vec![0.0], vec![0.0]).unwrap()),
        ..plain.clone()
    };
    let a = expected_return_continuous(&terms, &plain, &law(), &b).unwrap();
    let (s, diag) = expected_return_surrender(&terms, &zero, &law(), &b, 0.0).unwrap();
    assert_eq!(a.value, s.value);
    assert_eq!(diag.fraction, 0.0);

    let setup = |km: KillingModel| SurrenderSetup {
        killing: km,
        law: law(),
        sum_insured: 1.0,
        discount: 0.3,
        budget: b,
        negative_threshold: 0.0,
    };
    for p in [0.0, 0.3, 1.0] {
        let x = var_surrender(p, Backend::BmStep, &setup(plain.clone())).unwrap().value;
        let y = var_surrender(p, Backend::BmStep, &setup(zero.clone())).unwrap().value;
        assert_eq!(x, y);
    }
}

#[test]
fn step_backend_matches_monte_carlo_with_two_regions() {
    let setup = SurrenderSetup {
        killing: KillingModel {
            model: bm(),
            mortality: RateFunction::step(vec![0.0], vec![0.1, 0.5]).unwrap(),
            surrender: Some(SurrenderFamily::affine_in_p(vec![0.0], vec![0.2, 0.0], vec![0.1, 0.3]).unwrap()),
        },
        law: law(),
        sum_insured: 1.0,
        discount: 0.5,
        budget: budget(20_000, 4),
        negative_threshold: 0.0,
    };
    for p in [0.0, 0.4] {
        let analytic = var_surrender(p, Backend::BmStep, &setup).unwrap();
        let mc = var_surrender(p, Backend::Mc, &setup).unwrap();
        assert!(mc.estimate().within(analytic.value, 3.0), "p={p}: {mc:?} vs {analytic:?}");
    }
}

#[test]
fn step_premium_matches_monte_carlo_premium() {
    let km = KillingModel::without_surrender(bm(), step_v());
    let f = LimitDensity::gaussian(0.0, 0.5).unwrap();
    let model =
        StepSurrenderModel { model: bm(), mortality: step_v(), surrender: None, discount: 0.5, sum_insured: 1.0 };
    let report = solve_premium(
        |p| Ok(ReturnEstimate::analytic(var_bm(p, &model, &f)?, Backend::BmStep)),
        &SearchSpec::default(),
    )
    .unwrap();
    assert_eq!(report.status, RootStatus::Unique);
    let root = report.roots[0].value;
    let mc = premium_continuous(1.0, 0.5, &km, &law(), &budget(20_000, 5)).unwrap();
    assert!(mc.within(root, 3.0), "{mc:?} vs {root}");
}

#[test]
fn constant_rates_give_a_unique_root_regardless_of_surrender() {
    for mu in [0.0, 0.2, 1.5] {
        let setup = SurrenderSetup {
            killing: KillingModel {
                model: bm(),
                mortality: RateFunction::constant(0.1).unwrap(),
                surrender: Some(SurrenderFamily::constant_in_x(mu, 0.0).unwrap()),
            },
            law: law(),
            sum_insured: 2.0,
            discount: 0.05,
            budget: budget(1, 0),
            negative_threshold: 0.0,
        };
        let report = solve_premium(|p| var_surrender(p, Backend::BmStep, &setup), &SearchSpec::default()).unwrap();
        assert_eq!(report.status, RootStatus::Unique);
        assert!((report.roots[0].value - 0.2).abs() < 1e-8);
        assert!(report.roots[0].residual.abs() <= 1e-10);
    }
}

#[test]
fn strictly_negative_objective_reports_none_found() {
    let spec = SearchSpec { max_expansions: 5, ..SearchSpec::default() };
    let report = solve_premium(|p| Ok(ReturnEstimate::analytic(-1.0 - p, Backend::BmStep)), &spec).unwrap();
    assert_eq!(report.status, RootStatus::NoneFound);
    assert!(report.roots.is_empty());
    assert_eq!(report.bracket_log.len(), 6 * spec.grid_size);
    assert!(report.bracket_log.iter().all(|e| e.sign_lo == -1 && e.sign_hi == -1));
    assert_eq!(report.bracket_log.last().unwrap().hi, 32.0);
}

#[test]
fn every_root_sits_in_a_logged_sign_change() {
    let report = solve_premium(
        |p| Ok(ReturnEstimate::analytic((p - 0.3) * (p - 0.7) * (p - 2.1), Backend::Bessel2Sb)),
        &SearchSpec { p_max_initial: 3.0, ..SearchSpec::default() },
    )
    .unwrap();
    assert_eq!(report.status, RootStatus::Multiple);
    assert_eq!(report.roots.len(), 3);
    for root in &report.roots {
        let cell = report.bracket_log.iter().find(|e| e.lo == root.bracket_lo && e.hi == root.bracket_hi).unwrap();
        assert_eq!(cell.sign_lo * cell.sign_hi, -1);
        assert!(root.residual.abs() <= 1e-10);
    }
}

#[test]
fn discrete_constant_rate_premium_and_immortal_cohort() {
    let km = KillingModel::without_surrender(bm(), RateFunction::constant(0.1).unwrap());
    let terms = ContractTerms::new(1.0, 0.05, 0.0).unwrap();
    let horizon = DiscreteHorizon::for_tolerance(&terms, 1, 1e-8);
    let p = premium_discrete(1.0, 0.05, &km, &law(), &horizon, &budget(200, 6)).unwrap();
    let exact = (1.0 - (-0.1f64).exp()) * (-0.05f64).exp();
    assert!((p.value - exact).abs() < 1e-6, "{p:?} vs {exact}");
    assert!((p.value - 0.0905).abs() < 5e-4);

    let immortal = KillingModel::without_surrender(bm(), RateFunction::constant(0.0).unwrap());
    let terms = ContractTerms::new(1.0, 0.05, 0.3).unwrap();
    let horizon = DiscreteHorizon::for_tolerance(&terms, 1, 1e-8);
    let ret = expected_return_discrete(&terms, &immortal, &law(), &horizon, &budget(50, 7)).unwrap();
    let annuity = 0.3 * (1.0 - (-0.05 * horizon.periods as f64).exp()) / (1.0 - (-0.05f64).exp());
    assert!((ret.value - annuity).abs() < 1e-9 * annuity);
}

#[test]
fn short_horizon_violates_the_tail_bound() {
    let km = KillingModel::without_surrender(bm(), RateFunction::constant(0.1).unwrap());
    let terms = ContractTerms::new(1.0, 0.05, 0.1).unwrap();
    let horizon = DiscreteHorizon { periods: 10, tail_tolerance: 1e-6 };
    assert!(matches!(
        expected_return_discrete(&terms, &km, &law(), &horizon, &budget(10, 8)),
        Err(Error::TailBoundViolated { .. })
    ));
}

#[test]
fn heavy_discounting_is_governed_by_the_premium_gap() {
    let km = KillingModel::without_surrender(bm(), RateFunction::constant(0.1).unwrap());
    for p in [0.05, 0.15] {
        let terms = ContractTerms::new(1.0, 50.0, p).unwrap();
        let r = expected_return_continuous(&terms, &km, &law(), &budget(20_000, 9)).unwrap();
        let lead = (p - 0.1) / 50.0;
        assert_eq!(r.value.signum(), lead.signum());
        assert!((r.value - lead).abs() < 0.01 * lead.abs());
    }
}

#[test]
fn premiums_are_positive_and_vanish_without_claims() {
    let km = KillingModel::without_surrender(bm(), step_v());
    let p = premium_continuous(1.0, 0.3, &km, &law(), &budget(4_000, 10)).unwrap();
    assert!(p.value > 0.0);
    let zero = KillingModel::without_surrender(bm(), RateFunction::constant(0.0).unwrap());
    let p0 = premium_continuous(1.0, 0.3, &zero, &law(), &budget(1_000, 11)).unwrap();
    assert_eq!(p0.value, 0.0);
}

#[test]
fn mismatched_backends_name_both_sides() {
    let setup = SurrenderSetup {
        killing: KillingModel::without_surrender(DiffusionSpec::squared_bessel2(0.0).unwrap(), step_v()),
        law: InitialLaw::Density(LimitDensity::exponential(1.0).unwrap()),
        sum_insured: 1.0,
        discount: 0.05,
        budget: budget(10, 12),
        negative_threshold: 0.0,
    };
    let err = var_surrender(0.1, Backend::BmStep, &setup).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("bm-step") && msg.contains(setup.killing.model.name()), "{msg}");
    assert!(matches!(var_surrender(0.1, Backend::Bessel2Sb, &setup), Err(Error::BackendMismatch { .. })));
}
