use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surrender_core::bm_step::*;
use surrender_core::montecarlo::McBudget;
use surrender_core::pricing::resolvent_mc;
use surrender_core::process::{DiffusionSpec, RateFunction};
use surrender_core::rng::RngStream;

fn uniform_config(delta: f64) -> StepModelConfig {
    StepModelConfig::new(1.0, 0.3, vec![-delta, 0.0, delta], vec![0.1, 0.4, 0.2, 0.9], vec![0.05, 0.0, 0.3, 0.1], 0.2)
        .unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn fitted_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn perturbative_error_shrinks_at_the_expected_order() {
    let deltas = [0.4, 0.2, 0.1, 0.05];
    for order in 0..=2u32 {
        let errors: Vec<f64> = deltas
            .iter()
            .map(|&d| {
                let cfg = uniform_config(d);
                let sys = assemble_system(&cfg).unwrap();
                let dense = sys.matrix.clone().lu().solve(&sys.rhs_v).unwrap();
                let approx = perturbative_solve(&cfg, &sys.rhs_v, order).unwrap();
                max_abs_diff(dense.as_slice(), approx.as_slice())
            })
            .collect();
        let slope = fitted_slope(&deltas, &errors);
        assert!(slope >= order as f64 + 0.5, "order {order}: slope {slope}, errors {errors:?}");
    }
}

#[test]
fn uniform_matrix_matches_expansion_at_zero_spacing_limit() {
    let cfg = uniform_config(1e-7);
    let sys = assemble_system(&cfg).unwrap();
    let l0 = l0_matrix(&cfg).unwrap();
    assert!((&sys.matrix - &l0).amax() < 1e-5);
}

#[test]
fn explicit_inverse_is_two_sided_for_random_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let m = rng.gen_range(3..=12usize);
        let knots: Vec<f64> = (0..m - 1).map(|k| k as f64 * 0.3).collect();
        let mort: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..2.0)).collect();
        let surr: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let cfg = StepModelConfig::new(
            rng.gen_range(0.2..2.0),
            rng.gen_range(-1.0..1.0),
            knots,
            mort,
            surr,
            rng.gen_range(0.01..0.5),
        )
        .unwrap();
        let l0 = l0_matrix(&cfg).unwrap();
        let inv = l0_inverse(&cfg).unwrap();
        let id = DMatrix::<f64>::identity(l0.nrows(), l0.ncols());
        assert!((&l0 * &inv - &id).amax() < 1e-10);
        assert!((&inv * &l0 - &id).amax() < 1e-10);
    }
}

#[test]
fn finite_difference_residual_away_from_knots() {
    let cfg = StepModelConfig::new(
        0.8,
        -0.2,
        vec![-1.0, 0.0, 1.5],
        vec![0.05, 0.3, 0.1, 0.7],
        vec![0.2, 0.0, 0.05, 0.1],
        0.1,
    )
    .unwrap();
    let (zv, z1) = solve_resolvents(&cfg).unwrap();
    let (a, b) = (cfg.volatility(), cfg.drift());
    let h = 1e-5;
    for (sol, is_v) in [(&zv, true), (&z1, false)] {
        for &y in &[-2.5, -0.6, -0.2, 0.4, 1.0, 2.2, 4.0] {
            let j = cfg.region_of(y);
            let k = cfg.total_rate(j);
            let source = if is_v { cfg.mortality()[j] } else { 1.0 };
            // the region constant has zero derivatives; difference only the exponentials
            let g = |x: f64| sol.homogeneous(j, x);
            let (gm, g0, gp) = (g(y - h), g(y), g(y + h));
            let d1 = (gp - gm) / (2.0 * h);
            let d2 = (gp - 2.0 * g0 + gm) / (h * h);
            let residual = 0.5 * a * a * d2 + b * d1 - k * g0;
            let scale = (k * sol.eval(y)).abs() + source;
            assert!(residual.abs() <= 1e-6 * scale, "y={y}: residual {residual} scale {scale}");
        }
    }
}

#[test]
fn knot_matching_residuals_are_tiny() {
    for m in 2..=8 {
        let knots: Vec<f64> = (1..m).map(|k| -1.0 + 0.4 * k as f64).collect();
        let mort: Vec<f64> = (0..m).map(|i| 0.05 + 0.1 * i as f64).collect();
        let surr: Vec<f64> = (0..m).map(|i| 0.3 / (1.0 + i as f64)).collect();
        let cfg = StepModelConfig::new(1.2, 0.1, knots, mort, surr, 0.05).unwrap();
        let (zv, z1) = solve_resolvents(&cfg).unwrap();
        assert!(zv.matching_residual() <= 1e-9);
        assert!(z1.matching_residual() <= 1e-9);
    }
}

#[test]
fn resolvents_are_bounded_by_their_constant_envelopes() {
    let cfg = uniform_config(0.5);
    let (zv, z1) = solve_resolvents(&cfg).unwrap();
    let kmin = (0..cfg.regions()).map(|i| cfg.total_rate(i)).fold(f64::INFINITY, f64::min);
    for k in -40..=40 {
        let y = k as f64 * 0.1;
        let (v, one) = (zv.eval(y), z1.eval(y));
        assert!(v > 0.0 && one > 0.0 && one <= 1.0 / kmin + 1e-12);
        // z_V <= sup V * z_1
        assert!(v <= 0.9 * one + 1e-12);
    }
}

#[test]
fn monte_carlo_agrees_on_a_two_region_model() {
    let model = DiffusionSpec::brownian_drift(1.0, 0.0, 0.0).unwrap();
    let v = RateFunction::step(vec![0.0], vec![0.2, 0.8]).unwrap();
    let cfg = StepModelConfig::from_rates(&model, &v, &RateFunction::constant(0.0).unwrap(), 1.0).unwrap();
    let (zv, z1) = solve_resolvents(&cfg).unwrap();
    let budget = McBudget::new(20_000, 2e-3, RngStream::new(5, 2));
    let (mv, m1) = resolvent_mc(&model, &v, None, 1.0, 0.3, &budget).unwrap();
    assert!(mv.within(zv.eval(0.3), 4.0), "{mv:?} vs {}", zv.eval(0.3));
    assert!(m1.within(z1.eval(0.3), 4.0), "{m1:?} vs {}", z1.eval(0.3));
}
