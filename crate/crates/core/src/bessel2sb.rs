//! Closed-form backend for the 2-d squared Bessel model.
//!
//! Mortality `V(x) = m x + n`, surrender `D(x, p) = φ(p) x + ϱ(p)` and an
//! exponential limit density `f(x) = γ e^{-γx}`. With `λ = m + φ(p)`,
//! `c = r + n + ϱ(p)` and `s = sqrt(2λ)`,
//!
//! ```text
//! VAR_s(p) = -A m / λ + γ (p - A n + A m c / λ) I_γ(c, λ)
//! I_γ(c, λ) = int_0^inf e^{-ct} int_0^inf e^{-γx} E^x[e^{-λ int_0^t X}] dx dt
//!           = int_0^inf e^{-ct} / (γ cosh(st) + (s/2) sinh(st)) dt
//! ```

use crate::error::{Error, Result};
use crate::process::AffineMap;
use crate::quad;

/// Default truncation tolerance for series and quadrature.
pub const DEFAULT_TOL: f64 = 1e-12;

const MAX_TERMS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bessel2Config {
    pub m: f64,
    pub n: f64,
    pub phi: AffineMap,
    pub rho: AffineMap,
    pub gamma: f64,
    pub sum_insured: f64,
    pub discount: f64,
}

impl Bessel2Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0) || !self.n.is_finite() {
            return Err(Error::InvalidRate(format!("mortality slope must be positive, got m = {}", self.m)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidDensity(format!("exponential rate must be positive, got {}", self.gamma)));
        }
        if !(self.sum_insured > 0.0) || !(self.discount > 0.0) {
            return Err(Error::InvalidTerms("sum insured and discount must be positive".into()));
        }
        Ok(())
    }

    /// `λ(p) = m + φ(p)`.
    pub fn lambda(&self, p: f64) -> f64 {
        self.m + self.phi.eval(p)
    }

    /// `c(p) = r + n + ϱ(p)`.
    pub fn c(&self, p: f64) -> f64 {
        self.discount + self.n + self.rho.eval(p)
    }

    /// `(λ(p), c(p))`, both required positive.
    pub fn parameters_at(&self, p: f64) -> Result<(f64, f64)> {
        self.validate()?;
        let (lambda, c) = (self.lambda(p), self.c(p));
        if !(lambda > 0.0) {
            return Err(Error::InvalidConfigAtP { p, reason: format!("m + φ(p) = {lambda} is not positive") });
        }
        if !(c > 0.0) {
            return Err(Error::InvalidConfigAtP { p, reason: format!("r + n + ϱ(p) = {c} is not positive") });
        }
        Ok((lambda, c))
    }
}

/// Rising factorial `(x)_j`.
pub fn pochhammer(x: f64, j: u32) -> f64 {
    (0..j).map(|k| x + k as f64).product()
}

/// `F(1, a, b; z) = sum_j (a)_j / (b)_j z^j` for `|z| < 1`, summed until the
/// geometric tail bound drops below `tol`.
pub fn hyp2f1_first_unit(a: f64, b: f64, z: f64, tol: f64) -> Result<f64> {
    if !(z.abs() < 1.0) {
        return Err(Error::SeriesDiverges(z.abs()));
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 0..MAX_TERMS {
        let jf = j as f64;
        if a + jf == 0.0 {
            return Ok(sum);
        }
        if b + jf == 0.0 {
            return Err(Error::PoleInB(j));
        }
        term *= (a + jf) / (b + jf) * z;
        sum += term;
        // |t_{k+1} / t_k| <= |z| max(1, |(a+j+1)/(b+j+1)|) for every k > j once b + j + 1 > 0
        let next = jf + 1.0;
        if b + next > 0.0 {
            let rho = z.abs() * ((a + next) / (b + next)).abs().max(1.0);
            if rho < 1.0 && term.abs() * rho / (1.0 - rho) < tol {
                return Ok(sum);
            }
        }
    }
    Err(Error::SeriesDiverges(z.abs()))
}

fn displayed_integrand(gamma: f64, c: f64, s: f64, t: f64) -> f64 {
    // e^{-ct} / (γ cosh(st) + s sinh(st)) without overflow
    let e = (-2.0 * s * t).exp();
    2.0 * (-(c + s) * t).exp() / ((gamma + s) + (gamma - s) * e)
}

fn check_positive(gamma: f64, c: f64, lambda: f64) -> Result<()> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveLambda(lambda));
    }
    if !(gamma > 0.0) || !(c > 0.0) {
        return Err(Error::InvalidTerms(format!("need γ > 0 and c > 0, got γ = {gamma}, c = {c}")));
    }
    Ok(())
}

/// `int_0^inf e^{-ct} / (γ cosh(st) + s sinh(st)) dt` by adaptive quadrature,
/// truncated where the envelope `2 e^{-(c+s)t} / (γ+s)` falls below `tol`.
pub fn i_gamma_quadrature(gamma: f64, c: f64, lambda: f64, tol: f64) -> Result<f64> {
    check_positive(gamma, c, lambda)?;
    let s = (2.0 * lambda).sqrt();
    let k = c + s;
    let env0 = 2.0 / (gamma + s);
    let horizon = ((env0 / tol).ln() / k).max(1.0 / k);
    // split at multiples of the decay length so each piece is well resolved
    let mut points = vec![0.0];
    let mut t = 0.25 / k;
    while t < horizon {
        points.push(t);
        t *= 2.0;
    }
    points.push(horizon);
    quad::integrate_pieces(&|t| displayed_integrand(gamma, c, s, t), &points, 0.1 * tol)
}

/// The same integral as the series `sum_{j>=0} (-q)^j 2 / ((γ+s)(c+(2j+1)s))`,
/// `q = (γ-s)/(γ+s)`.
pub fn i_gamma_series(gamma: f64, c: f64, lambda: f64, tol: f64) -> Result<f64> {
    check_positive(gamma, c, lambda)?;
    let s = (2.0 * lambda).sqrt();
    let q = (gamma - s) / (gamma + s);
    if !(q.abs() < 1.0) {
        return Err(Error::SeriesDiverges(q.abs()));
    }
    let lead = 2.0 / (gamma + s);
    let mut sum = 0.0;
    let mut power = 1.0;
    for j in 0..MAX_TERMS {
        let term = lead * power / (c + (2 * j + 1) as f64 * s);
        sum += term;
        if q == 0.0 {
            return Ok(sum);
        }
        power *= -q;
        let next = (lead * power / (c + (2 * j + 3) as f64 * s)).abs();
        if next / (1.0 - q.abs()) < tol {
            return Ok(sum);
        }
    }
    Err(Error::SeriesDiverges(q.abs()))
}

/// The same integral through `2/((γ+s)(c+s)) F(1, a, a+1; -q)`, `a = (c+s)/(2s)`.
pub fn i_gamma_hypergeometric(gamma: f64, c: f64, lambda: f64, tol: f64) -> Result<f64> {
    check_positive(gamma, c, lambda)?;
    let s = (2.0 * lambda).sqrt();
    let q = (gamma - s) / (gamma + s);
    let a = (c + s) / (2.0 * s);
    let pref = 2.0 / ((gamma + s) * (c + s));
    Ok(pref * hyp2f1_first_unit(a, a + 1.0, -q, tol / pref)?)
}

/// An alternative hypergeometric closed form
/// `(F(1, (1+c)/(2s) - 2, (1+c)/(2s) - 1; -q) - 1/(c+s)) / (γ s + 2λ)`.
/// It does not agree with the integral; kept for validation reports.
pub fn i_gamma_alternate(gamma: f64, c: f64, lambda: f64, tol: f64) -> Result<f64> {
    check_positive(gamma, c, lambda)?;
    let s = (2.0 * lambda).sqrt();
    let q = (gamma - s) / (gamma + s);
    let a = (1.0 + c) / (2.0 * s);
    let f = hyp2f1_first_unit(a - 2.0, a - 1.0, -q, tol)?;
    Ok((f - 1.0 / (c + s)) / (gamma * s + 2.0 * lambda))
}

/// Series evaluation with quadrature fallback.
fn displayed_integral(gamma: f64, c: f64, lambda: f64, tol: f64) -> Result<f64> {
    i_gamma_series(gamma, c, lambda, tol).or_else(|_| i_gamma_quadrature(gamma, c, lambda, tol))
}

/// `I_γ(c, λ)`, the Exp(γ)-weighted discounted Laplace transform of the
/// occupation integral. Since the x-integral gives `2/(2γ cosh + s sinh)`,
/// this is twice the displayed integral at `2γ`.
pub fn i_gamma(gamma: f64, c: f64, lambda: f64, tol: f64) -> Result<f64> {
    Ok(2.0 * displayed_integral(2.0 * gamma, c, lambda, 0.5 * tol)?)
}

/// `VAR_s(p)` in closed form.
pub fn var_bessel(p: f64, config: &Bessel2Config, tol: f64) -> Result<f64> {
    let (lambda, c) = config.parameters_at(p)?;
    let (a, m, n, g) = (config.sum_insured, config.m, config.n, config.gamma);
    let i = i_gamma(g, c, lambda, tol)?;
    Ok(-a * m / lambda + g * (p - a * n + a * m * c / lambda) * i)
}

/// Alternative assembly `Am/λ + (γp + Amc/λ - γAn) I_alt`, for validation reports.
pub fn var_bessel_alternate(p: f64, config: &Bessel2Config, tol: f64) -> Result<f64> {
    let (lambda, c) = config.parameters_at(p)?;
    let (a, m, n, g) = (config.sum_insured, config.m, config.n, config.gamma);
    let i = i_gamma_alternate(g, c, lambda, tol)?;
    Ok(a * m / lambda + (g * p + a * m * c / lambda - g * a * n) * i)
}

/// `P(X_τ > x)` for `X_0 ~ Exp(γ)` and an independent `τ ~ Exp(r)`.
/// Uses `X_t ~ Exp(γ / (1 + 2γt))`.
pub fn running_state_tail(gamma: f64, discount: f64, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(1.0);
    }
    let f = |t: f64| discount * (-discount * t - x * gamma / (1.0 + 2.0 * gamma * t)).exp();
    let horizon = 40.0 / discount;
    let points: Vec<f64> = (0..=40).map(|k| horizon * (k as f64 / 40.0).powi(2)).collect();
    quad::integrate_pieces(&f, &points, 1e-14)
}

/// `D(x, p) >= 0` checked up to the `1 - tail` quantile of the discounted
/// running state distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityReport {
    pub quantile: f64,
    pub min_rate: f64,
    pub holds: bool,
}

pub fn surrender_positivity(p: f64, config: &Bessel2Config, tail: f64) -> Result<PositivityReport> {
    config.validate()?;
    let (mut lo, mut hi) = (0.0, 1.0 / config.gamma);
    while running_state_tail(config.gamma, config.discount, hi)? > tail {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if running_state_tail(config.gamma, config.discount, mid)? > tail {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 * hi {
            break;
        }
    }
    let (phi, rho) = (config.phi.eval(p), config.rho.eval(p));
    let min_rate = rho.min(phi * hi + rho);
    Ok(PositivityReport { quantile: hi, min_rate, holds: min_rate >= 0.0 })
}
