//! Oracle-versus-analytic checks on the configured model.

use surrender_core::bessel2sb::{i_gamma_quadrature, i_gamma_series};
use surrender_core::bm_step::{solve_resolvents_with, ResolventSolution, StepModelConfig};
use surrender_core::mc_oracle::lemma_a1_check;
use surrender_core::montecarlo::{self, Estimate};
use surrender_core::pricing::{premium_continuous, resolvent_mc, var_surrender, Backend};
use surrender_core::process::{bessel_laplace_exact, fk_weight, simulate_path_with, DiffusionSpec, RateFunction};
use surrender_core::thermo::{build_lattice_measure, InitialLaw};

use crate::commands::{num, opt, Report, Table};
use crate::config::{PremiumMode, Scenario};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Skipped,
}

impl Status {
    fn name(self) -> &'static str {
        match self {
            Self::Pass => "PASS",
            Self::Fail => "FAIL",
            Self::Skipped => "SKIPPED",
        }
    }
}

struct Check {
    name: &'static str,
    status: Status,
    discrepancy: Option<f64>,
    tolerance: f64,
    detail: String,
}

impl Check {
    fn measured(name: &'static str, discrepancy: f64, tolerance: f64, detail: String) -> Self {
        let status = if discrepancy <= tolerance { Status::Pass } else { Status::Fail };
        Self { name, status, discrepancy: Some(discrepancy), tolerance, detail }
    }

    fn skipped(name: &'static str, tolerance: f64, why: &str) -> Self {
        Self { name, status: Status::Skipped, discrepancy: None, tolerance, detail: why.into() }
    }

    fn errored(name: &'static str, tolerance: f64, e: impl std::fmt::Display) -> Self {
        Self { name, status: Status::Fail, discrepancy: None, tolerance, detail: e.to_string() }
    }
}

fn z_score(est: &Estimate, target: f64) -> f64 {
    let diff = (est.value - target).abs();
    if est.std_error > 0.0 {
        diff / est.std_error
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

const NO_PATHS: &str = "zero simulation budget";

/// Runs every applicable check; exit status is success iff nothing failed.
pub fn validate(s: &Scenario) -> Result<Report, CliError> {
    let mut checks = Vec::new();
    step_checks(s, &mut checks);
    checks.push(bessel_series());
    checks.push(bessel_matched_rate());
    checks.push(bessel_closed_form(s));
    checks.push(bessel_laplace(s));
    checks.push(lemma(s));
    checks.push(n_sweep(s));

    let mut t = Table::new(&["check", "status", "discrepancy", "tolerance", "detail"]);
    for c in &checks {
        t.row([
            c.name.to_string(),
            c.status.name().to_string(),
            opt(c.discrepancy),
            num(c.tolerance),
            c.detail.clone(),
        ]);
    }
    let success = checks.iter().all(|c| c.status != Status::Fail);
    Ok(Report { csv: t.finish(), success })
}

fn first_premium(s: &Scenario) -> f64 {
    s.premiums.first().copied().unwrap_or(0.0)
}

fn step_checks(s: &Scenario, out: &mut Vec<Check>) {
    const KNOT: &str = "step_knot_residual";
    const ODE: &str = "step_ode_residual";
    const MC: &str = "step_resolvent_vs_mc";
    let z = s.validation.z_limit;
    let p = first_premium(s);
    let solved = s
        .setup()
        .step_model()
        .and_then(|m| m.config_at(p))
        .and_then(|cfg| solve_resolvents_with(&cfg, s.particular_form()).map(|sol| (cfg, sol)));
    let (cfg, (zv, z1)) = match solved {
        Ok(v) => v,
        Err(e @ surrender_core::Error::BackendMismatch { .. }) => {
            let why = format!("not applicable: {e}");
            out.push(Check::skipped(KNOT, 1e-9, &why));
            out.push(Check::skipped(ODE, 1e-6, &why));
            out.push(Check::skipped(MC, z, &why));
            return;
        }
        Err(e) => {
            out.push(Check::errored(KNOT, 1e-9, &e));
            out.push(Check::errored(ODE, 1e-6, &e));
            out.push(Check::errored(MC, z, &e));
            return;
        }
    };
    let knot = zv.matching_residual().max(z1.matching_residual());
    out.push(Check::measured(KNOT, knot, 1e-9, format!("{} knots", cfg.knots().len())));
    let ode = ode_residual(&cfg, &zv, &z1);
    out.push(Check::measured(ODE, ode, 1e-6, "central differences with h = 1e-5".into()));

    if s.mc.paths == 0 {
        out.push(Check::skipped(MC, z, NO_PATHS));
        return;
    }
    let d = s.killing.surrender_at(p);
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (i, &y) in s.validation.points.iter().enumerate() {
        let budget = s.budget(100 + i as u64);
        match resolvent_mc(&s.killing.model, &s.killing.mortality, d.as_ref(), s.discount, y, &budget) {
            Ok((mv, m1)) => {
                let (a, b) = (z_score(&mv, zv.eval(y)), z_score(&m1, z1.eval(y)));
                worst = worst.max(a).max(b);
                detail.push(format!("y={y}: zV {a:.2}σ z1 {b:.2}σ"));
            }
            Err(e) => {
                out.push(Check::errored(MC, z, e));
                return;
            }
        }
    }
    out.push(Check::measured(MC, worst, z, detail.join("; ")));
}

/// Largest relative residual of `a²/2 z'' + b z' - k z + source` at one
/// interior point per region, differencing only the exponential part.
fn ode_residual(cfg: &StepModelConfig, zv: &ResolventSolution, z1: &ResolventSolution) -> f64 {
    let (a, b) = (cfg.volatility(), cfg.drift());
    let knots = cfg.knots();
    let h = 1e-5;
    let mut samples = Vec::new();
    match (knots.first(), knots.last()) {
        (Some(&lo), Some(&hi)) => {
            samples.push(lo - 1.0);
            samples.extend(knots.windows(2).map(|w| 0.5 * (w[0] + w[1])));
            samples.push(hi + 1.0);
        }
        _ => samples.push(0.0),
    }
    let mut worst: f64 = 0.0;
    for (sol, use_mortality) in [(zv, true), (z1, false)] {
        for &y in &samples {
            let j = cfg.region_of(y);
            let k = cfg.total_rate(j);
            let source = if use_mortality { cfg.mortality()[j] } else { 1.0 };
            let particular = sol.regions()[j].particular;
            let g = |x: f64| sol.homogeneous(j, x);
            let (gm, g0, gp) = (g(y - h), g(y), g(y + h));
            let d1 = (gp - gm) / (2.0 * h);
            let d2 = (gp - 2.0 * g0 + gm) / (h * h);
            let residual = 0.5 * a * a * d2 + b * d1 - k * (g0 + particular) + source;
            worst = worst.max(residual.abs() / ((k * sol.eval(y)).abs() + source));
        }
    }
    worst
}

const GRID: [f64; 5] = [0.05, 0.3, 1.0, 2.5, 8.0];

fn bessel_series() -> Check {
    const NAME: &str = "bessel_series_vs_quadrature";
    let mut worst: f64 = 0.0;
    for &g in &GRID {
        for &c in &GRID {
            for &l in &GRID {
                match (i_gamma_series(g, c, l, 1e-13), i_gamma_quadrature(g, c, l, 1e-13)) {
                    (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
                    (Err(e), _) | (_, Err(e)) => return Check::errored(NAME, 1e-8, e),
                }
            }
        }
    }
    Check::measured(NAME, worst, 1e-8, "125-point grid".into())
}

fn bessel_matched_rate() -> Check {
    const NAME: &str = "bessel_matched_rate";
    let mut worst: f64 = 0.0;
    for &l in &GRID {
        for &c in &GRID {
            let s = (2.0 * l).sqrt();
            match i_gamma_series(s, c, l, 1e-14) {
                Ok(v) => worst = worst.max((v - 1.0 / (s * (c + s))).abs()),
                Err(e) => return Check::errored(NAME, 1e-12, e),
            }
        }
    }
    Check::measured(NAME, worst, 1e-12, "gamma = sqrt(2 lambda)".into())
}

fn bessel_closed_form(s: &Scenario) -> Check {
    const NAME: &str = "bessel_closed_form_vs_mc";
    let z = s.validation.z_limit;
    if let Err(e) = s.setup().bessel_config() {
        return Check::skipped(NAME, z, &format!("not applicable: {e}"));
    }
    if s.mc.paths == 0 {
        return Check::skipped(NAME, z, NO_PATHS);
    }
    let premiums = if s.premiums.is_empty() { vec![0.0] } else { s.premiums.clone() };
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (i, &p) in premiums.iter().enumerate() {
        let mut setup = s.setup();
        setup.budget = s.budget(200 + i as u64);
        let pair =
            var_surrender(p, Backend::Bessel2Sb, &setup).and_then(|a| Ok((a, var_surrender(p, Backend::Mc, &setup)?)));
        match pair {
            Ok((a, m)) => {
                let zs = z_score(&m.estimate(), a.value);
                worst = worst.max(zs);
                detail.push(format!("p={p}: {zs:.2}σ"));
            }
            Err(e) => return Check::errored(NAME, z, e),
        }
    }
    Check::measured(NAME, worst, z, detail.join("; "))
}

/// Largest step the Laplace check uses; the left-point rate sum is biased by
/// roughly `lambda t dt` relative.
const LAPLACE_DT: f64 = 5e-4;

fn bessel_laplace(s: &Scenario) -> Check {
    const NAME: &str = "bessel_laplace_vs_mc";
    let z = s.validation.z_limit;
    if !s.killing.model.nonnegative_states() {
        return Check::skipped(NAME, z, "not applicable: model is not the squared Bessel process");
    }
    if s.mc.paths == 0 {
        return Check::skipped(NAME, z, NO_PATHS);
    }
    let mut worst: f64 = 0.0;
    let dt = s.mc.dt.min(LAPLACE_DT);
    let mut detail = vec![format!("dt={dt}")];
    for (i, (x0, lambda, t)) in [(0.0, 1.0, 1.0), (1.0, 1.0, 1.0), (2.0, 0.5, 0.5)].into_iter().enumerate() {
        let model = DiffusionSpec::squared_bessel2(x0).expect("nonnegative start");
        let rate = [RateFunction::affine(lambda, 0.0).expect("finite")];
        let m = montecarlo::collect(s.mc.paths, 1, s.budget(300 + i as u64).stream, |_, rng, out| {
            let path = simulate_path_with(&model, dt, t, rng).expect("validated step");
            out[0] = fk_weight(&path, &rate);
        });
        let exact = bessel_laplace_exact(x0, lambda, t).expect("valid point");
        let zs = z_score(&m.estimate(0), exact);
        worst = worst.max(zs);
        detail.push(format!("x0={x0} lambda={lambda} t={t}: {zs:.2}σ"));
    }
    Check::measured(NAME, worst, z, detail.join("; "))
}

fn lemma(s: &Scenario) -> Check {
    const NAME: &str = "killing_time_estimators";
    let z = s.validation.z_limit;
    if s.mc.paths == 0 {
        return Check::skipped(NAME, z, NO_PATHS);
    }
    let x0 = s.law.quantile(0.5);
    let t = s.validation.lemma_horizon;
    let v = &s.killing.mortality;
    let (lhs, rhs) = match lemma_a1_check(&s.killing.model, v, s.discount, t, x0, &s.budget(400)) {
        Ok(pair) => pair,
        Err(e) => return Check::errored(NAME, z, e),
    };
    let se = lhs.std_error.hypot(rhs.std_error);
    let mut worst = z_score(&Estimate { value: lhs.value - rhs.value, std_error: se }, 0.0);
    let mut detail = format!("x0={x0} t={t}: direct {} vs integrated {}", num(lhs.value), num(rhs.value));
    if let Some(lam) = v.as_constant() {
        let r = s.discount;
        let exact = lam / (r + lam) * (1.0 - (-(r + lam) * t).exp());
        let zc = z_score(&lhs, exact);
        worst = worst.max(zc);
        detail.push_str(&format!("; closed form {} at {zc:.2}σ", num(exact)));
    }
    Check::measured(NAME, worst, z, detail)
}

fn n_sweep(s: &Scenario) -> Check {
    const NAME: &str = "n_sweep_convergence";
    let Some(f) = s.density.clone() else {
        return Check::skipped(NAME, 0.0, "not applicable: no initial density");
    };
    if s.mode != PremiumMode::Continuous {
        return Check::skipped(NAME, 0.0, "not applicable: discrete premium mode");
    }
    if s.mc.paths == 0 {
        return Check::skipped(NAME, 0.0, NO_PATHS);
    }
    let premium = |law: &InitialLaw| premium_continuous(s.sum_insured, s.discount, &s.killing, law, &s.budget(500));
    let limit = match premium(&InitialLaw::Density(f.clone())) {
        Ok(p) => p.value,
        Err(e) => return Check::errored(NAME, 0.0, e),
    };
    let mut gaps = Vec::new();
    for &n in &s.sweep.n_values {
        let gap = build_lattice_measure(&f, n, s.sweep.truncation)
            .and_then(|mu| premium(&InitialLaw::Lattice(mu)))
            .map(|p| (p.value - limit).abs());
        match gap {
            Ok(g) => gaps.push(g),
            Err(e) => return Check::errored(NAME, 0.0, e),
        }
    }
    // discrepancy: largest increase of the gap from one N to the next
    let worst_increase = gaps.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let detail =
        s.sweep.n_values.iter().zip(&gaps).map(|(n, g)| format!("N={n}: {}", num(*g))).collect::<Vec<_>>().join("; ");
    let status = match gaps.len() {
        0 | 1 => Status::Skipped,
        _ if worst_increase < 0.0 => Status::Pass,
        _ => Status::Fail,
    };
    Check { name: NAME, status, discrepancy: (gaps.len() > 1).then_some(worst_increase), tolerance: 0.0, detail }
}
