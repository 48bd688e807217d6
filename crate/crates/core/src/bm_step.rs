//! Analytic backend for Brownian motion with drift and step killing rates.
//!
//! With `X = a W + b t` and rates constant on the regions
//! `(y_{i-1}, y_i]`, the discounted resolvents
//!
//! ```text
//! z_V(y) = int_0^inf e^{-rt} E^y[V(X_t) e^{-int_0^t (V + D)}] dt
//! z_1(y) = int_0^inf e^{-rt} E^y[e^{-int_0^t (V + D)}] dt
//! ```
//!
//! are, on each region, a constant plus two exponentials `e^{alpha_{i,+-} y}`.
//! The `2(M-1)` free amplitudes follow from `C^1` matching at the knots.
//!
//! Unknowns are stored anchored at the knot where each exponential is
//! largest inside its region: the `+` term of region `i` at its right knot,
//! the `-` term at its left knot. In these variables every entry of the
//! matching matrix is at most one in magnitude and, for equally spaced knots
//! with spacing `delta`, the matrix is `L(delta)`, which the perturbative
//! solver expands around `delta = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::process::{DiffusionKind, DiffusionSpec, RateFunction, SurrenderFamily};
use crate::quad;
use crate::thermo::{InitialMeasure, LimitDensity};

/// Largest tolerated 1-norm condition estimate of the matching matrix.
const MAX_CONDITION: f64 = 1e12;

/// Piecewise-constant model at a fixed premium level.
#[derive(Debug, Clone, PartialEq)]
pub struct StepModelConfig {
    volatility: f64,
    drift: f64,
    knots: Vec<f64>,
    mortality: Vec<f64>,
    surrender: Vec<f64>,
    discount: f64,
}

impl StepModelConfig {
    pub fn new(
        volatility: f64,
        drift: f64,
        knots: Vec<f64>,
        mortality: Vec<f64>,
        surrender: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if !(volatility > 0.0 && volatility.is_finite()) {
            return Err(Error::NonPositiveVolatility(volatility));
        }
        if !drift.is_finite() || !(discount > 0.0 && discount.is_finite()) {
            return Err(Error::InvalidTerms("drift must be finite and discount positive".into()));
        }
        if mortality.len() != knots.len() + 1 || surrender.len() != mortality.len() {
            return Err(Error::InvalidRate("one mortality and one surrender value per region".into()));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidRate("knots must be finite and strictly increasing".into()));
        }
        if mortality.iter().chain(&surrender).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidRate("step rates must be finite and nonnegative".into()));
        }
        let cfg = Self { volatility, drift, knots, mortality, surrender, discount };
        for i in 0..cfg.regions() {
            let total = cfg.total_rate(i);
            if !(total > 0.0) {
                return Err(Error::NonHyperbolicRegion { region: i, total });
            }
        }
        Ok(cfg)
    }

    /// Builds the configuration for `X = a W + b t` from step mortality and
    /// surrender rates, merging their knot sets.
    pub fn from_rates(
        model: &DiffusionSpec,
        mortality: &RateFunction,
        surrender: &RateFunction,
        discount: f64,
    ) -> Result<Self> {
        let (a, b) = match model.kind() {
            DiffusionKind::BrownianDrift { volatility, drift } => (volatility, drift),
            DiffusionKind::SquaredBessel2 => {
                return Err(Error::BackendMismatch {
                    backend: "bm-step",
                    model: model.name(),
                    reason: "needs Brownian motion with drift".into(),
                })
            }
        };
        let knots_of = |r: &RateFunction| match r {
            RateFunction::Step { knots, .. } => Ok(knots.clone()),
            RateFunction::Affine { .. } => Err(Error::BackendMismatch {
                backend: "bm-step",
                model: model.name(),
                reason: "needs step killing rates".into(),
            }),
        };
        let mut knots = knots_of(mortality)?;
        knots.extend(knots_of(surrender)?);
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        // each region (k_{i-1}, k_i] contains its right knot; the last one contains k_last + 1
        let probes: Vec<f64> =
            knots.iter().copied().chain(std::iter::once(knots.last().map_or(0.0, |k| k + 1.0))).collect();
        let lam = probes.iter().map(|&y| mortality.eval(y)).collect();
        let mu = probes.iter().map(|&y| surrender.eval(y)).collect();
        Self::new(a, b, knots, lam, mu, discount)
    }

    pub fn regions(&self) -> usize {
        self.mortality.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn mortality(&self) -> &[f64] {
        &self.mortality
    }

    pub fn surrender(&self) -> &[f64] {
        &self.surrender
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn volatility(&self) -> f64 {
        self.volatility
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    /// `lambda_i + mu_i + r`.
    pub fn total_rate(&self, region: usize) -> f64 {
        self.mortality[region] + self.surrender[region] + self.discount
    }

    pub fn region_of(&self, y: f64) -> usize {
        self.knots.partition_point(|&k| k < y)
    }

    /// Common spacing of the knots, if they are equally spaced.
    pub fn uniform_spacing(&self) -> Option<f64> {
        match self.knots.len() {
            0 | 1 => Some(0.0),
            _ => {
                let d = self.knots[1] - self.knots[0];
                let uniform = self.knots.windows(2).all(|w| ((w[1] - w[0]) - d).abs() <= 1e-9 * d.abs().max(1e-300));
                uniform.then_some(d)
            }
        }
    }
}

/// `(alpha_{i,+}, alpha_{i,-})`, the roots of `a^2/2 s^2 + b s - (lambda_i + mu_i + r) = 0`.
pub fn alpha_coeffs(config: &StepModelConfig, region: usize) -> Result<(f64, f64)> {
    let (a, b) = (config.volatility, config.drift);
    let total = config.total_rate(region);
    let disc = b * b + 2.0 * a * a * total;
    if !(total > 0.0) || !(disc > 0.0) {
        return Err(Error::NonHyperbolicRegion { region, total });
    }
    let root = disc.sqrt();
    let a2 = a * a;
    // cancellation-free pair: alpha_+ alpha_- = -2 total / a^2
    let (plus, minus) = if b <= 0.0 {
        let plus = (-b + root) / a2;
        (plus, -2.0 * total / (a2 * plus))
    } else {
        let minus = (-b - root) / a2;
        (-2.0 * total / (a2 * minus), minus)
    };
    Ok((plus, minus))
}

/// Which constant particular solution to use on each region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParticularForm {
    /// `gamma_i = lambda_i / (lambda_i + mu_i + r)`, the constant solving the region ODE.
    #[default]
    Exact,
    /// `lambda_i / (2 (lambda_i + mu_i + r))`; kept only to show that the
    /// Monte Carlo oracle rejects it.
    Halved,
}

/// `(gamma_i, gamma~_i)` with `gamma~_i = 1 / (lambda_i + mu_i + r)` and `gamma_i = lambda_i gamma~_i`.
pub fn particular_terms(config: &StepModelConfig, region: usize) -> (f64, f64) {
    particular_terms_with(config, region, ParticularForm::Exact)
}

pub fn particular_terms_with(config: &StepModelConfig, region: usize, form: ParticularForm) -> (f64, f64) {
    let tilde = 1.0 / config.total_rate(region);
    let gamma = config.mortality[region] * tilde;
    match form {
        ParticularForm::Exact => (gamma, tilde),
        ParticularForm::Halved => (0.5 * gamma, tilde),
    }
}

/// The matching system in anchored variables.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    /// `2(M-1)` square matrix: value rows then derivative rows; columns are
    /// the `-` amplitudes of regions `2..=M` then the `+` amplitudes of regions `1..M`.
    pub matrix: DMatrix<f64>,
    /// Right-hand side for `z_V`: `(gamma_2 - gamma_1, ..., gamma_M - gamma_{M-1}, 0, ..., 0)`.
    pub rhs_v: DVector<f64>,
    /// Right-hand side for `z_1`.
    pub rhs_1: DVector<f64>,
    /// `alpha_{i,-}` for regions `2..=M` (the `-` block diagonal).
    pub alpha_minus: Vec<f64>,
    /// `alpha_{i,+}` for regions `1..M` (the `+` block diagonal).
    pub alpha_plus: Vec<f64>,
    knots: Vec<f64>,
}

impl BlockSystem {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Matrix acting on the raw coefficients
    /// `(C_{2,-}, ..., C_{M,-}, C_{1,+}, ..., C_{M-1,+})`.
    pub fn raw_matrix(&self) -> DMatrix<f64> {
        let n = self.knots.len();
        let mut m = self.matrix.clone();
        for k in 0..n {
            let minus = -(self.alpha_minus[k] * self.knots[k]).exp();
            let plus = (self.alpha_plus[k] * self.knots[k]).exp();
            m.column_mut(k).scale_mut(minus);
            m.column_mut(n + k).scale_mut(plus);
        }
        m
    }
}

pub fn assemble_system(config: &StepModelConfig) -> Result<BlockSystem> {
    assemble_system_with(config, ParticularForm::Exact)
}

pub fn assemble_system_with(config: &StepModelConfig, form: ParticularForm) -> Result<BlockSystem> {
    let m = config.regions();
    let n = m - 1;
    let alphas = (0..m).map(|i| alpha_coeffs(config, i)).collect::<Result<Vec<_>>>()?;
    let alpha_minus: Vec<f64> = (0..n).map(|k| alphas[k + 1].1).collect();
    let alpha_plus: Vec<f64> = (0..n).map(|k| alphas[k].0).collect();
    let y = &config.knots;
    let mut matrix = DMatrix::zeros(2 * n, 2 * n);
    let mut rhs_v = DVector::zeros(2 * n);
    let mut rhs_1 = DVector::zeros(2 * n);
    for i in 0..n {
        let (value, slope) = (i, n + i);
        matrix[(value, i)] = 1.0;
        matrix[(slope, i)] = alpha_minus[i];
        matrix[(value, n + i)] = 1.0;
        matrix[(slope, n + i)] = alpha_plus[i];
        if i > 0 {
            let decay = (alpha_minus[i - 1] * (y[i] - y[i - 1])).exp();
            matrix[(value, i - 1)] = -decay;
            matrix[(slope, i - 1)] = -alpha_minus[i - 1] * decay;
        }
        if i + 1 < n {
            let decay = (-alpha_plus[i + 1] * (y[i + 1] - y[i])).exp();
            matrix[(value, n + i + 1)] = -decay;
            matrix[(slope, n + i + 1)] = -alpha_plus[i + 1] * decay;
        }
        let (g0, t0) = particular_terms_with(config, i, form);
        let (g1, t1) = particular_terms_with(config, i + 1, form);
        rhs_v[value] = g1 - g0;
        rhs_1[value] = t1 - t0;
    }
    Ok(BlockSystem { matrix, rhs_v, rhs_1, alpha_minus, alpha_plus, knots: y.clone() })
}

/// One region of a resolvent: `particular + plus_amp e^{alpha_+ (y - right)} + minus_amp e^{alpha_- (y - left)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionTerms {
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub particular: f64,
    pub plus_amp: f64,
    pub minus_amp: f64,
}

/// Piecewise-exponential resolvent.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventSolution {
    knots: Vec<f64>,
    regions: Vec<RegionTerms>,
}

impl ResolventSolution {
    fn from_anchored(
        system: &BlockSystem,
        config: &StepModelConfig,
        x: &DVector<f64>,
        particular: &[f64],
    ) -> Result<Self> {
        let m = config.regions();
        let n = m - 1;
        let regions = (0..m)
            .map(|j| {
                let (alpha_plus, alpha_minus) = alpha_coeffs(config, j)?;
                Ok(RegionTerms {
                    alpha_plus,
                    alpha_minus,
                    particular: particular[j],
                    plus_amp: if j < n { x[n + j] } else { 0.0 },
                    minus_amp: if j > 0 { -x[j - 1] } else { 0.0 },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        debug_assert_eq!(system.knots, config.knots);
        Ok(Self { knots: config.knots.clone(), regions })
    }

    pub fn regions(&self) -> &[RegionTerms] {
        &self.regions
    }

    /// Raw coefficients `(C_{i,+}, C_{i,-})` of `C e^{alpha y}` per region.
    /// `C_{1,-} = C_{M,+} = 0`. May overflow for knots far from the origin.
    pub fn coefficients(&self) -> Vec<(f64, f64)> {
        let m = self.regions.len();
        self.regions
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let plus = if j + 1 < m { r.plus_amp * (-r.alpha_plus * self.knots[j]).exp() } else { 0.0 };
                let minus = if j > 0 { r.minus_amp * (-r.alpha_minus * self.knots[j - 1]).exp() } else { 0.0 };
                (plus, minus)
            })
            .collect()
    }

    /// `(z, z', z'')` evaluated with the terms of region `j`.
    pub fn eval_in_region(&self, j: usize, y: f64) -> (f64, f64, f64) {
        let r = &self.regions[j];
        let mut out = (r.particular, 0.0, 0.0);
        if j + 1 < self.regions.len() {
            let e = r.plus_amp * (r.alpha_plus * (y - self.knots[j])).exp();
            out.0 += e;
            out.1 += r.alpha_plus * e;
            out.2 += r.alpha_plus * r.alpha_plus * e;
        }
        if j > 0 {
            let e = r.minus_amp * (r.alpha_minus * (y - self.knots[j - 1])).exp();
            out.0 += e;
            out.1 += r.alpha_minus * e;
            out.2 += r.alpha_minus * r.alpha_minus * e;
        }
        out
    }

    /// Exponential part of region `j` alone, without the particular constant.
    pub fn homogeneous(&self, j: usize, y: f64) -> f64 {
        let r = &self.regions[j];
        let mut h = 0.0;
        if j + 1 < self.regions.len() {
            h += r.plus_amp * (r.alpha_plus * (y - self.knots[j])).exp();
        }
        if j > 0 {
            h += r.minus_amp * (r.alpha_minus * (y - self.knots[j - 1])).exp();
        }
        h
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.eval_in_region(self.knots.partition_point(|&k| k < y), y).0
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.eval_in_region(self.knots.partition_point(|&k| k < y), y).1
    }

    /// Largest relative jump of value or slope across the knots.
    pub fn matching_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, &y) in self.knots.iter().enumerate() {
            let (l0, l1, _) = self.eval_in_region(i, y);
            let (r0, r1, _) = self.eval_in_region(i + 1, y);
            worst = worst.max((l0 - r0).abs() / (1.0 + l0.abs())).max((l1 - r1).abs() / (1.0 + l1.abs()));
        }
        worst
    }
}

/// `(z_V, z_1)` by a dense LU solve of the matching system.
pub fn solve_resolvents(config: &StepModelConfig) -> Result<(ResolventSolution, ResolventSolution)> {
    solve_resolvents_with(config, ParticularForm::Exact)
}

pub fn solve_resolvents_with(
    config: &StepModelConfig,
    form: ParticularForm,
) -> Result<(ResolventSolution, ResolventSolution)> {
    let system = assemble_system_with(config, form)?;
    let (xv, x1) = if system.dim() == 0 {
        (DVector::zeros(0), DVector::zeros(0))
    } else {
        let lu = system.matrix.clone().lu();
        let inv = lu.try_inverse().ok_or(Error::SingularSystem(f64::INFINITY))?;
        let cond = one_norm(&system.matrix) * one_norm(&inv);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::SingularSystem(cond));
        }
        let lu = system.matrix.clone().lu();
        let xv = lu.solve(&system.rhs_v).ok_or(Error::SingularSystem(cond))?;
        let x1 = lu.solve(&system.rhs_1).ok_or(Error::SingularSystem(cond))?;
        (xv, x1)
    };
    finish(config, &system, form, &xv, &x1)
}

fn finish(
    config: &StepModelConfig,
    system: &BlockSystem,
    form: ParticularForm,
    xv: &DVector<f64>,
    x1: &DVector<f64>,
) -> Result<(ResolventSolution, ResolventSolution)> {
    let (gv, g1): (Vec<f64>, Vec<f64>) = (0..config.regions()).map(|i| particular_terms_with(config, i, form)).unzip();
    Ok((
        ResolventSolution::from_anchored(system, config, xv, &gv)?,
        ResolventSolution::from_anchored(system, config, x1, &g1)?,
    ))
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn block_diagonals(config: &StepModelConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = config.regions();
    let alphas = (0..m).map(|i| alpha_coeffs(config, i)).collect::<Result<Vec<_>>>()?;
    let a = (0..m - 1).map(|k| alphas[k + 1].1).collect();
    let b = (0..m - 1).map(|k| alphas[k].0).collect();
    Ok((a, b))
}

fn from_blocks(tl: &DMatrix<f64>, tr: &DMatrix<f64>, bl: &DMatrix<f64>, br: &DMatrix<f64>) -> DMatrix<f64> {
    let n = tl.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(tl);
    m.view_mut((0, n), (n, n)).copy_from(tr);
    m.view_mut((n, 0), (n, n)).copy_from(bl);
    m.view_mut((n, n), (n, n)).copy_from(br);
    m
}

/// `L(0) = [[I - J^T, I - J], [(I - J^T) a, (I - J) b]]` with
/// `a = diag(alpha_{2,-}..alpha_{M,-})`, `b = diag(alpha_{1,+}..alpha_{M-1,+})`.
pub fn l0_matrix(config: &StepModelConfig) -> Result<DMatrix<f64>> {
    l_derivative(config, 0)
}

/// `d^k L / d delta^k` at `delta = 0`; `k = 0` gives `L(0)`.
pub fn l_derivative(config: &StepModelConfig, k: u32) -> Result<DMatrix<f64>> {
    let (a, b) = block_diagonals(config)?;
    let n = a.len();
    let mut tl = DMatrix::zeros(n, n);
    let mut tr = DMatrix::zeros(n, n);
    let mut bl = DMatrix::zeros(n, n);
    let mut br = DMatrix::zeros(n, n);
    if k == 0 {
        for i in 0..n {
            tl[(i, i)] = 1.0;
            tr[(i, i)] = 1.0;
            bl[(i, i)] = a[i];
            br[(i, i)] = b[i];
        }
    }
    let kk = k as i32;
    for i in 1..n {
        // J^T e^{a delta} below the diagonal, J e^{-b delta} above it
        tl[(i, i - 1)] = -a[i - 1].powi(kk);
        bl[(i, i - 1)] = -a[i - 1].powi(kk + 1);
        tr[(i - 1, i)] = -(-b[i]).powi(kk);
        br[(i - 1, i)] = -(-b[i]).powi(kk) * b[i];
    }
    Ok(from_blocks(&tl, &tr, &bl, &br))
}

/// Closed-form inverse of `L(0)`.
///
/// With `K = (I - J)^{-1} (I - J^T)`, `A_1 = (b K - K a)^{-1}` and
/// `A_2 = (a K^{-1} - K^{-1} b)^{-1}`:
///
/// ```text
/// L(0)^{-1} = [[ A_1 b (I - J)^{-1},   -A_1 (I - J)^{-1}   ],
///              [ A_2 a (I - J^T)^{-1}, -A_2 (I - J^T)^{-1} ]]
/// ```
///
/// `A_1` and `A_2` are sparse (one dense column plus a shifted diagonal) and
/// are written out entrywise.
pub fn l0_inverse(config: &StepModelConfig) -> Result<DMatrix<f64>> {
    let (a, b) = block_diagonals(config)?;
    let n = a.len();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    // s = alpha_{1,+} - alpha_{M,-}; d_i = alpha_{i,+} - alpha_{i,-} for interior regions
    let s = b[0] - a[n - 1];
    let d: Vec<f64> = (1..n).map(|k| b[k] - a[k - 1]).collect();
    if !(s.is_finite() && s != 0.0) || d.iter().any(|v| !(v.is_finite() && *v != 0.0)) {
        return Err(Error::DegenerateAlphas);
    }
    let mut a1 = DMatrix::zeros(n, n);
    for i in 1..n {
        a1[(i - 1, 0)] = (b[i] - a[n - 1]) / (d[i - 1] * s);
        a1[(i - 1, i)] = -1.0 / d[i - 1];
    }
    a1[(n - 1, 0)] = 1.0 / s;

    let mut a2 = DMatrix::zeros(n, n);
    a2[(0, n - 1)] = -1.0 / s;
    for i in 1..n {
        a2[(i, i - 1)] = 1.0 / d[i - 1];
        a2[(i, n - 1)] = (a[i - 1] - b[0]) / (s * d[i - 1]);
    }

    let upper_ones = DMatrix::from_fn(n, n, |i, j| if j >= i { 1.0 } else { 0.0 });
    let lower_ones = upper_ones.transpose();
    let bd = DMatrix::from_diagonal(&DVector::from_vec(b));
    let ad = DMatrix::from_diagonal(&DVector::from_vec(a));
    let tl = &a1 * &bd * &upper_ones;
    let tr = -(&a1 * &upper_ones);
    let bl = &a2 * &ad * &lower_ones;
    let br = -(&a2 * &lower_ones);
    Ok(from_blocks(&tl, &tr, &bl, &br))
}

/// Truncated expansion `sum_{k <= order} delta^k x_k` of the solution of
/// `L(delta) x = c`, with `x_0 = L(0)^{-1} c` and
/// `x_k = -L(0)^{-1} sum_{j < k} L^{(k-j)}(0) x_j / (k-j)!`.
pub fn perturbative_solve(config: &StepModelConfig, rhs: &DVector<f64>, order: u32) -> Result<DVector<f64>> {
    let delta = config.uniform_spacing().ok_or(Error::NonUniformKnots)?;
    let inv = l0_inverse(config)?;
    let derivs = (1..=order).map(|k| l_derivative(config, k)).collect::<Result<Vec<_>>>()?;
    let mut terms: Vec<DVector<f64>> = vec![&inv * rhs];
    let mut factorial = vec![1.0];
    for k in 1..=order as usize {
        factorial.push(factorial[k - 1] * k as f64);
    }
    for k in 1..=order as usize {
        let mut acc = DVector::zeros(rhs.len());
        for (j, xj) in terms.iter().enumerate() {
            acc += &derivs[k - j - 1] * xj / factorial[k - j];
        }
        terms.push(-(&inv * acc));
    }
    let mut out = DVector::zeros(rhs.len());
    let mut pow = 1.0;
    for t in &terms {
        out += t * pow;
        pow *= delta;
    }
    Ok(out)
}

/// `(z_V, z_1)` with the amplitudes from [`perturbative_solve`].
pub fn solve_resolvents_perturbative(
    config: &StepModelConfig,
    order: u32,
) -> Result<(ResolventSolution, ResolventSolution)> {
    let system = assemble_system(config)?;
    let xv = perturbative_solve(config, &system.rhs_v, order)?;
    let x1 = perturbative_solve(config, &system.rhs_1, order)?;
    finish(config, &system, ParticularForm::Exact, &xv, &x1)
}

/// Brownian-drift model with step mortality and an optional step surrender family.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSurrenderModel {
    pub model: DiffusionSpec,
    pub mortality: RateFunction,
    pub surrender: Option<SurrenderFamily>,
    pub discount: f64,
    pub sum_insured: f64,
}

impl StepSurrenderModel {
    pub fn config_at(&self, p: f64) -> Result<StepModelConfig> {
        let d = match &self.surrender {
            Some(fam @ SurrenderFamily::AffineInP { .. }) => fam.at(p),
            Some(SurrenderFamily::Affine2SB { .. }) => {
                return Err(Error::BackendMismatch {
                    backend: "bm-step",
                    model: self.model.name(),
                    reason: "surrender family must be a step family".into(),
                })
            }
            None => RateFunction::constant(0.0)?,
        };
        StepModelConfig::from_rates(&self.model, &self.mortality, &d, self.discount)
    }
}

/// `VAR_s(p) = int f(x) (p z_1(x) - A z_V(x)) dx` by adaptive quadrature.
pub fn var_bm(p: f64, model: &StepSurrenderModel, f: &LimitDensity) -> Result<f64> {
    let cfg = model.config_at(p)?;
    let (zv, z1) = solve_resolvents(&cfg)?;
    let (lo, hi) = f.effective_support(1e-10);
    let mut points: Vec<f64> = vec![lo, hi];
    points.extend(cfg.knots().iter().chain(f.breakpoints().iter()).filter(|&&k| k > lo && k < hi));
    points.sort_by(f64::total_cmp);
    points.dedup();
    let a = model.sum_insured;
    let integrand = |x: f64| f.pdf(x) * (p * z1.eval(x) - a * zv.eval(x));
    quad::integrate_pieces(&integrand, &points, 1e-9)
}

/// `R_s(N, p) = N sum_k mu_N(k/N) (p z_1(k/N) - A z_V(k/N))`.
pub fn rs_bm_lattice(p: f64, model: &StepSurrenderModel, mu: &InitialMeasure) -> Result<f64> {
    let cfg = model.config_at(p)?;
    let (zv, z1) = solve_resolvents(&cfg)?;
    let a = model.sum_insured;
    Ok(mu.n() as f64 * mu.expectation(|x| p * z1.eval(x) - a * zv.eval(x)))
}
