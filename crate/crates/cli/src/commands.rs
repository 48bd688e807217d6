use surrender_core::pricing::{
    expected_return_discrete, premium_continuous, premium_discrete, solve_premium, var_surrender, Backend,
    ReturnEstimate, RootReport, RootStatus,
};
use surrender_core::thermo::{build_lattice_measure, InitialLaw};

use crate::config::{PremiumMode, Scenario};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Price,
    Solve,
    Validate,
    SweepN,
}

/// CSV text plus whether every check passed (always true outside `validate`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub csv: String,
    pub success: bool,
}

pub(crate) struct Table(csv::Writer<Vec<u8>>);

impl Table {
    pub(crate) fn new(header: &[&str]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Self(w)
    }

    pub(crate) fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        self.0.write_record(fields.into_iter().collect::<Vec<_>>()).expect("in-memory write");
    }

    pub(crate) fn finish(self) -> String {
        String::from_utf8(self.0.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }
}

/// Shortest round-trip decimal, switching to exponent form for very small or
/// large magnitudes; never locale dependent.
pub(crate) fn num(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Per-capita expected return at premium `p` under `law`.
fn evaluate(s: &Scenario, law: &InitialLaw, p: f64) -> Result<ReturnEstimate, CliError> {
    match s.mode {
        PremiumMode::Continuous => var_surrender(p, s.backend, &s.setup_with(law.clone())),
        PremiumMode::Discrete => {
            expected_return_discrete(&s.terms(p), &s.killing, law, &s.horizon(p, law), &s.budget(0))
        }
    }
    .map_err(CliError::from_core)
}

/// `p,value,std_error,backend`, one row per configured premium.
pub fn price(s: &Scenario) -> Result<Report, CliError> {
    s.check_backend()?;
    let mut t = Table::new(&["p", "value", "std_error", "backend"]);
    for &p in &s.premiums {
        let est = evaluate(s, &s.law, p)?;
        t.row([num(p), num(est.value), num(est.std_error), est.backend.name().to_string()]);
    }
    Ok(Report { csv: t.finish(), success: true })
}

/// Root search on the return under `law`, keeping the first evaluation
/// failure with its own classification.
fn search(s: &Scenario, law: &InitialLaw) -> Result<RootReport, CliError> {
    let mut failure = None;
    let report = solve_premium(
        |p| {
            evaluate(s, law, p).map_err(|e| {
                let msg = e.to_string();
                failure.get_or_insert(e);
                surrender_core::Error::InvalidTerms(msg)
            })
        },
        &s.search,
    );
    match (report, failure) {
        (Ok(r), _) => Ok(r),
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(CliError::from_core(e)),
    }
}

/// `root,bracket_lo,bracket_hi,residual,status`; a lone status row when no root is found.
pub fn solve(s: &Scenario) -> Result<Report, CliError> {
    s.check_backend()?;
    let report = search(s, &s.law)?;
    let mut t = Table::new(&["root", "bracket_lo", "bracket_hi", "residual", "status"]);
    let status = report.status.name().to_string();
    if report.status == RootStatus::NoneFound {
        t.row([String::new(), String::new(), String::new(), String::new(), status.clone()]);
    }
    for r in &report.roots {
        t.row([num(r.value), num(r.bracket_lo), num(r.bracket_hi), num(r.residual), status.clone()]);
    }
    Ok(Report { csv: t.finish(), success: true })
}

/// Break-even premium under `law`: a single ratio estimate where one exists
/// (simulation without surrender), otherwise the first root of the return.
fn break_even(s: &Scenario, law: &InitialLaw) -> Result<(Option<f64>, Option<f64>, &'static str), CliError> {
    let no_surrender = s.killing.surrender.as_ref().is_none_or(|f| f.is_identically_zero());
    if s.backend == Backend::Mc && no_surrender {
        let est = match s.mode {
            PremiumMode::Continuous => premium_continuous(s.sum_insured, s.discount, &s.killing, law, &s.budget(0)),
            PremiumMode::Discrete => premium_discrete(
                s.sum_insured,
                s.discount,
                &s.killing,
                law,
                &s.horizon(s.sum_insured, law),
                &s.budget(0),
            ),
        }
        .map_err(CliError::from_core)?;
        return Ok((Some(est.value), Some(est.std_error), "RATIO"));
    }
    let report = search(s, law)?;
    let se = if s.backend.is_analytic() { Some(0.0) } else { None };
    Ok((report.roots.first().map(|r| r.value), se, report.status.name()))
}

/// `n,premium,std_error,gap,status`: break-even premium per lattice size and
/// for the limit density (`n = inf`), all on shared random numbers.
pub fn sweep_n(s: &Scenario) -> Result<Report, CliError> {
    s.check_backend()?;
    let f = s.density.clone().ok_or_else(|| CliError::Config("sweep-n needs an initial density or lattice".into()))?;
    let limit_law = InitialLaw::Density(f.clone());
    let (limit, limit_se, limit_status) = break_even(s, &limit_law)?;
    let mut t = Table::new(&["n", "premium", "std_error", "gap", "status"]);
    for &n in &s.sweep.n_values {
        let mu = build_lattice_measure(&f, n, s.sweep.truncation).map_err(CliError::from_core)?;
        let (p, se, status) = break_even(s, &InitialLaw::Lattice(mu))?;
        let gap = p.zip(limit).map(|(a, b)| (a - b).abs());
        t.row([n.to_string(), opt(p), opt(se), opt(gap), status.to_string()]);
    }
    t.row(["inf".to_string(), opt(limit), opt(limit_se), opt(limit.map(|_| 0.0)), limit_status.to_string()]);
    Ok(Report { csv: t.finish(), success: true })
}
