//! JSON run configuration. Field-by-field documentation lives in `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use surrender_core::bm_step::ParticularForm;
use surrender_core::montecarlo::McBudget;
use surrender_core::pricing::{Backend, ContractTerms, DiscreteHorizon, KillingModel, SearchSpec, SurrenderSetup};
use surrender_core::process::{AffineMap, DiffusionSpec, RateFunction, SurrenderFamily};
use surrender_core::rng::RngStream;
use surrender_core::thermo::{build_lattice_measure, InitialLaw, LimitDensity};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub mortality: RateSpec,
    #[serde(default)]
    pub surrender: Option<SurrenderSpec>,
    pub initial: InitialSpec,
    pub contract: ContractSpec,
    #[serde(default)]
    pub premiums: Vec<f64>,
    #[serde(default)]
    pub backend: BackendChoice,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub validation: ValidationSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    BrownianDrift { volatility: f64, drift: f64 },
    SquaredBessel2,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    Constant { value: f64 },
    Step { knots: Vec<f64>, values: Vec<f64> },
    Affine { slope: f64, intercept: f64 },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSpec {
    pub constant: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurrenderSpec {
    /// `D(x, p) = offsets[i] + sensitivities[i] p` on step region `i`.
    Step { knots: Vec<f64>, offsets: Vec<f64>, sensitivities: Vec<f64> },
    /// `D(x, p) = offset + sensitivity p`.
    Constant { offset: f64, sensitivity: f64 },
    /// `D(x, p) = phi(p) x + rho(p)`.
    #[serde(rename = "affine_2sb")]
    Affine2Sb { phi: AffineSpec, rho: AffineSpec },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Exponential { rate: f64 },
    Gaussian { mean: f64, std_dev: f64 },
    Histogram { edges: Vec<f64>, masses: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Point { x: f64 },
    Density { density: DensitySpec },
    Lattice { n: usize, truncation: f64, density: DensitySpec },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiumMode {
    #[default]
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSpec {
    pub sum_insured: f64,
    pub discount: f64,
    #[serde(default)]
    pub mode: PremiumMode,
    #[serde(default = "default_tail_tolerance")]
    pub tail_tolerance: f64,
}

fn default_tail_tolerance() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
pub enum BackendChoice {
    #[default]
    #[serde(rename = "mc")]
    #[value(name = "mc")]
    Mc,
    #[serde(rename = "bm-step")]
    #[value(name = "bm-step")]
    BmStep,
    #[serde(rename = "bessel")]
    #[value(name = "bessel")]
    Bessel,
}

impl From<BackendChoice> for Backend {
    fn from(b: BackendChoice) -> Self {
        match b {
            BackendChoice::Mc => Backend::Mc,
            BackendChoice::BmStep => Backend::BmStep,
            BackendChoice::Bessel => Backend::Bessel2Sb,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSpec {
    pub paths: usize,
    pub dt: f64,
    pub negative_rate_threshold: f64,
}

impl Default for McSpec {
    fn default() -> Self {
        Self { paths: 100_000, dt: 1e-3, negative_rate_threshold: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub p_max_initial: f64,
    pub growth: f64,
    pub grid_size: usize,
    pub tolerance: f64,
    pub max_expansions: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let s = SearchSpec::default();
        Self {
            p_max_initial: s.p_max_initial,
            growth: s.growth,
            grid_size: s.grid_size,
            tolerance: s.tolerance,
            max_expansions: s.max_expansions,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub n_values: Vec<usize>,
    pub truncation: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { n_values: vec![10, 100, 1000], truncation: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticularChoice {
    #[default]
    Exact,
    Halved,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSpec {
    /// Particular solution used by the step-model check.
    pub particular_form: ParticularChoice,
    /// States at which step resolvents are compared with simulation.
    pub points: Vec<f64>,
    /// Horizon for the killing-time estimator comparison.
    pub lemma_horizon: f64,
    /// Acceptance band in standard errors.
    pub z_limit: f64,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        Self {
            particular_form: ParticularChoice::Exact,
            points: vec![-1.5, -0.5, 0.0, 0.5, 1.5],
            lemma_horizon: 2.0,
            z_limit: 3.0,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("bad config: {e}")))
    }
}

/// A configuration resolved into core types.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub killing: KillingModel,
    pub law: InitialLaw,
    /// Limit density behind `law`, if any.
    pub density: Option<LimitDensity>,
    pub sum_insured: f64,
    pub discount: f64,
    pub mode: PremiumMode,
    pub tail_tolerance: f64,
    pub premiums: Vec<f64>,
    pub backend: Backend,
    pub mc: McSpec,
    pub search: SearchSpec,
    pub sweep: SweepSpec,
    pub validation: ValidationSpec,
    pub seed: u64,
}

fn density(spec: &DensitySpec) -> surrender_core::Result<LimitDensity> {
    match spec {
        DensitySpec::Exponential { rate } => LimitDensity::exponential(*rate),
        DensitySpec::Gaussian { mean, std_dev } => LimitDensity::gaussian(*mean, *std_dev),
        DensitySpec::Histogram { edges, masses } => LimitDensity::histogram(edges.clone(), masses.clone()),
    }
}

fn rate(spec: &RateSpec) -> surrender_core::Result<RateFunction> {
    match spec {
        RateSpec::Constant { value } => RateFunction::constant(*value),
        RateSpec::Step { knots, values } => RateFunction::step(knots.clone(), values.clone()),
        RateSpec::Affine { slope, intercept } => RateFunction::affine(*slope, *intercept),
    }
}

fn surrender(spec: &SurrenderSpec) -> surrender_core::Result<SurrenderFamily> {
    match spec {
        SurrenderSpec::Step { knots, offsets, sensitivities } => {
            SurrenderFamily::affine_in_p(knots.clone(), offsets.clone(), sensitivities.clone())
        }
        SurrenderSpec::Constant { offset, sensitivity } => SurrenderFamily::constant_in_x(*offset, *sensitivity),
        SurrenderSpec::Affine2Sb { phi, rho } => SurrenderFamily::affine_2sb(
            AffineMap::new(phi.constant, phi.slope),
            AffineMap::new(rho.constant, rho.slope),
        ),
    }
}

impl Scenario {
    pub fn resolve(cfg: &RunConfig) -> Result<Self, CliError> {
        let model = match cfg.model {
            ModelSpec::BrownianDrift { volatility, drift } => DiffusionSpec::brownian_drift(volatility, drift, 0.0),
            ModelSpec::SquaredBessel2 => DiffusionSpec::squared_bessel2(0.0),
        }
        .map_err(CliError::config)?;
        let killing = KillingModel {
            model,
            mortality: rate(&cfg.mortality).map_err(CliError::config)?,
            surrender: cfg.surrender.as_ref().map(surrender).transpose().map_err(CliError::config)?,
        };
        let (law, dens) = match &cfg.initial {
            InitialSpec::Point { x } => (InitialLaw::Point(*x), None),
            InitialSpec::Density { density: d } => {
                let f = density(d).map_err(CliError::config)?;
                (InitialLaw::Density(f.clone()), Some(f))
            }
            InitialSpec::Lattice { n, truncation, density: d } => {
                let f = density(d).map_err(CliError::config)?;
                let mu = build_lattice_measure(&f, *n, *truncation).map_err(CliError::config)?;
                (InitialLaw::Lattice(mu), Some(f))
            }
        };
        law.check_model(&model).map_err(CliError::config)?;
        ContractTerms::new(cfg.contract.sum_insured, cfg.contract.discount, 0.0).map_err(CliError::config)?;
        if !(cfg.contract.tail_tolerance > 0.0) {
            return Err(CliError::Config("contract.tail_tolerance must be positive".into()));
        }
        if cfg.premiums.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(CliError::Config("premiums must be finite and nonnegative".into()));
        }
        if cfg.mc.paths > 0 {
            McBudget::new(cfg.mc.paths, cfg.mc.dt, RngStream::new(cfg.seed, 0)).validate().map_err(CliError::config)?;
        }
        if !(cfg.mc.negative_rate_threshold >= 0.0 && cfg.mc.negative_rate_threshold <= 1.0) {
            return Err(CliError::Config("mc.negative_rate_threshold must lie in [0, 1]".into()));
        }
        let s = cfg.search;
        let search = SearchSpec {
            p_max_initial: s.p_max_initial,
            growth: s.growth,
            grid_size: s.grid_size,
            tolerance: s.tolerance,
            max_expansions: s.max_expansions,
        };
        if !(search.p_max_initial > 0.0 && search.growth > 1.0 && search.grid_size >= 1 && search.tolerance > 0.0) {
            return Err(CliError::Config(
                "search needs p_max_initial > 0, growth > 1, grid_size >= 1, tolerance > 0".into(),
            ));
        }
        if cfg.sweep.n_values.contains(&0) || !(cfg.sweep.truncation > 0.0 && cfg.sweep.truncation < 1.0) {
            return Err(CliError::Config("sweep needs positive n_values and truncation in (0, 1)".into()));
        }
        Ok(Self {
            killing,
            law,
            density: dens,
            sum_insured: cfg.contract.sum_insured,
            discount: cfg.contract.discount,
            mode: cfg.contract.mode,
            tail_tolerance: cfg.contract.tail_tolerance,
            premiums: cfg.premiums.clone(),
            backend: cfg.backend.into(),
            mc: cfg.mc,
            search,
            sweep: cfg.sweep.clone(),
            validation: cfg.validation.clone(),
            seed: cfg.seed,
        })
    }

    pub fn budget(&self, stream_id: u64) -> McBudget {
        McBudget::new(self.mc.paths, self.mc.dt, RngStream::new(self.seed, stream_id))
    }

    pub fn setup_with(&self, law: InitialLaw) -> SurrenderSetup {
        SurrenderSetup {
            killing: self.killing.clone(),
            law,
            sum_insured: self.sum_insured,
            discount: self.discount,
            budget: self.budget(0),
            negative_threshold: self.mc.negative_rate_threshold,
        }
    }

    pub fn setup(&self) -> SurrenderSetup {
        self.setup_with(self.law.clone())
    }

    pub fn terms(&self, p: f64) -> ContractTerms {
        ContractTerms { sum_insured: self.sum_insured, discount: self.discount, premium: p }
    }

    pub fn horizon(&self, p: f64, law: &InitialLaw) -> DiscreteHorizon {
        DiscreteHorizon::for_tolerance(&self.terms(p), law.cohort_size().unwrap_or(1), self.tail_tolerance)
    }

    pub fn particular_form(&self) -> ParticularForm {
        match self.validation.particular_form {
            ParticularChoice::Exact => ParticularForm::Exact,
            ParticularChoice::Halved => ParticularForm::Halved,
        }
    }

    /// Rejects backend/model pairs before any work is dispatched.
    pub fn check_backend(&self) -> Result<(), CliError> {
        let setup = self.setup();
        match self.backend {
            Backend::Mc => Ok(()),
            _ if self.mode == PremiumMode::Discrete => Err(CliError::config(surrender_core::Error::BackendMismatch {
                backend: self.backend.name(),
                model: self.killing.model.name(),
                reason: "the discrete premium model is priced by simulation only".into(),
            })),
            Backend::BmStep => setup.step_model().map(|_| ()).map_err(CliError::config),
            Backend::Bessel2Sb => setup.bessel_config().map(|_| ()).map_err(CliError::config),
        }
    }
}
