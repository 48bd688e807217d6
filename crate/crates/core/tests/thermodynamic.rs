use surrender_core::bm_step::{rs_bm_lattice, var_bm, StepSurrenderModel};
use surrender_core::montecarlo::{self, McBudget};
use surrender_core::pricing::{solve_premium, Backend, ReturnEstimate, SearchSpec};
use surrender_core::process::{DiffusionSpec, RateFunction};
use surrender_core::quad;
use surrender_core::rng::RngStream;
use surrender_core::thermo::*;

type TestFn = fn(f64) -> f64;

fn smoothed_indicator(x: f64) -> f64 {
    // 1 on [0, 1], linear ramps of width 0.1 on either side
    ((x + 0.1) / 0.1).clamp(0.0, 1.0).min(((1.1 - x) / 0.1).clamp(0.0, 1.0))
}

#[test]
fn lattice_expectations_converge_for_three_test_functions() {
    let f = LimitDensity::exponential(1.0).unwrap();
    let hs: [(&str, TestFn); 3] = [("exp", |x| (-x).exp()), ("sin", f64::sin), ("ramp", smoothed_indicator)];
    for (name, h) in hs {
        let target = quad::integrate_pieces(&|x| h(x) * f.pdf(x), &[0.0, 0.9, 1.0, 1.1, 1.2, 60.0], 1e-13).unwrap();
        let errors: Vec<f64> = [10, 100, 1000]
            .iter()
            .map(|&n| {
                let mu = build_lattice_measure(&f, n, 1e-9).unwrap();
                assert!((mu.total_mass() - 1.0).abs() < 1e-12);
                (mu.expectation(h) - target).abs()
            })
            .collect();
        assert!(errors[2] < errors[0], "{name}: {errors:?}");
        if name == "exp" {
            // monotone with 10% slack
            assert!(errors[1] <= 1.1 * errors[0] && errors[2] <= 1.1 * errors[1], "{errors:?}");
        }
    }
}

#[test]
fn occupancy_limits_for_constant_rates() {
    let f = LimitDensity::gaussian(0.0, 1.0).unwrap();
    let model = DiffusionSpec::brownian_drift(1.0, 0.2, 0.0).unwrap();
    let budget = McBudget::new(4_000, 1e-2, RngStream::new(40, 0));
    let all = Interval::whole_line();
    let zero = limit_occupancy(&f, &model, &RateFunction::constant(0.0).unwrap(), 1.5, &all, &budget).unwrap();
    assert_eq!(zero.value, 1.0);
    let lam = limit_occupancy(&f, &model, &RateFunction::constant(0.4).unwrap(), 1.5, &all, &budget).unwrap();
    assert!((lam.value - (-0.6f64).exp()).abs() < 1e-12);
}

#[test]
fn cohort_occupancy_mean_matches_the_limit() {
    let f = LimitDensity::gaussian(0.0, 1.0).unwrap();
    let (a, b, lam, t) = (1.0, 0.3, 0.5, 1.0);
    let model = DiffusionSpec::brownian_drift(a, b, 0.0).unwrap();
    let v = RateFunction::constant(lam).unwrap();
    let set = Interval::closed(0.0, 1.0);
    let mu = build_lattice_measure(&f, 50, 1e-9).unwrap();
    let m = montecarlo::collect(200, 1, RngStream::new(41, 0), |i, _, out| {
        let states = simulate_cohort_states(&mu, &model, &v, t, 1e-2, RngStream::new(41, 1 + i as u64)).unwrap();
        out[0] = empirical_measure(t, &states, mu.n(), &[set]).total();
    });
    let est = m.estimate(0);
    // X_t | y ~ N(y + bt, a^2 t) and y ~ N(0, 1): X_t ~ N(bt, 1 + a^2 t)
    let x = LimitDensity::gaussian(b * t, (1.0 + a * a * t).sqrt()).unwrap();
    let exact = (-lam * t).exp() * x.mass(0.0, 1.0);
    // the lattice projection of f adds a small bias
    assert!((est.value - exact).abs() <= 3.0 * est.std_error + 2e-3, "{est:?} vs {exact}");
}

#[test]
fn empirical_totals_shrink_over_time() {
    let f = LimitDensity::exponential(1.0).unwrap();
    let model = DiffusionSpec::brownian_drift(1.0, 0.0, 0.0).unwrap();
    let v = RateFunction::step(vec![1.0], vec![0.2, 0.8]).unwrap();
    let mu = build_lattice_measure(&f, 40, 1e-9).unwrap();
    let partition = [
        Interval::half_open(f64::NEG_INFINITY, 0.0),
        Interval::half_open(0.0, 2.0),
        Interval::half_open(2.0, f64::INFINITY),
    ];
    let mean_total = |t: f64| {
        let m = montecarlo::collect(200, 1, RngStream::new(42, 0), |i, _, out| {
            let states = simulate_cohort_states(&mu, &model, &v, t, 1e-2, RngStream::new(42, 1 + i as u64)).unwrap();
            let e = empirical_measure(t, &states, mu.n(), &partition);
            assert!(e.total() <= 1.0);
            out[0] = e.total();
        });
        m.estimate(0)
    };
    let (early, late) = (mean_total(0.5), mean_total(2.0));
    assert!(early.value - late.value > -3.0 * (early.std_error.hypot(late.std_error)));
    assert!(late.value < early.value);
}

#[test]
fn adjoint_process_reproduces_the_forward_density() {
    let f = LimitDensity::gaussian(0.5, 0.7).unwrap();
    let model = DiffusionSpec::brownian_drift(0.8, 0.6, 0.0).unwrap();
    let budget = McBudget::new(20_000, 1e-2, RngStream::new(43, 0));
    for (i, x) in [-1.0, 0.0, 0.8, 1.5, 2.5].into_iter().enumerate() {
        let fwd = forward_density(&f, &model, 1.0, x, &budget.with_stream(RngStream::new(43, 2 * i as u64))).unwrap();
        let adj =
            adjoint_density(&f, &model, 1.0, x, &budget.with_stream(RngStream::new(43, 2 * i as u64 + 1))).unwrap();
        let se = fwd.std_error.hypot(adj.std_error);
        assert!((fwd.value - adj.value).abs() <= 3.0 * se, "x={x}: {fwd:?} vs {adj:?}");
    }
}

#[test]
fn lattice_premium_approaches_the_density_premium() {
    let f = LimitDensity::exponential(1.0).unwrap();
    let model = StepSurrenderModel {
        model: DiffusionSpec::brownian_drift(1.0, 0.2, 0.0).unwrap(),
        mortality: RateFunction::step(vec![0.5, 1.5], vec![0.02, 0.1, 0.4]).unwrap(),
        surrender: None,
        discount: 0.1,
        sum_insured: 1.0,
    };
    let search = SearchSpec::default();
    let limit = solve_premium(|p| Ok(ReturnEstimate::analytic(var_bm(p, &model, &f)?, Backend::BmStep)), &search)
        .unwrap()
        .roots[0]
        .value;
    let mut prev = f64::INFINITY;
    for n in [10, 100, 1000] {
        let mu = build_lattice_measure(&f, n, 1e-9).unwrap();
        let root =
            solve_premium(|p| Ok(ReturnEstimate::analytic(rs_bm_lattice(p, &model, &mu)?, Backend::BmStep)), &search)
                .unwrap()
                .roots[0]
                .value;
        let gap = (root - limit).abs();
        assert!(gap < prev, "N={n}: gap {gap} not below {prev}");
        prev = gap;
    }
    assert!(prev < 1e-5);
}
