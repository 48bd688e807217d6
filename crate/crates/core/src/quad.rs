//! Adaptive quadrature on finite intervals.
//!
//! Thin layer over the double-exponential rule of the `quadrature` crate:
//! the piece with the largest error estimate is bisected until the total
//! meets the target.

use crate::error::{Error, Result};

const MAX_PIECES: usize = 4000;

/// Integral of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Tolerances below the roundoff level of the integral are raised to it.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (value, err) = adaptive(f, a, b, tol);
    if err <= tol && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::QuadratureNonConvergence { estimate: value, error: err })
    }
}

/// Integral over `[points[0], points[last]]`, split at every interior point.
/// Use this when `f` has kinks or jumps at known locations.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: &F, points: &[f64], tol: f64) -> Result<f64> {
    let pieces = points.len().saturating_sub(1).max(1) as f64;
    points.windows(2).map(|w| integrate(f, w[0], w[1], tol / pieces)).sum()
}

/// Global adaptive scheme: always bisect the piece with the largest error.
/// Returns the estimate and an error that is either below `tol` or reports failure.
fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let rule = |lo: f64, hi: f64| {
        let out = quadrature::integrate(f, lo, hi, tol);
        (lo, hi, out.integral, out.error_estimate)
    };
    let mut pieces = vec![rule(a, b)];
    loop {
        let value: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        let scale: f64 = pieces.iter().map(|p| p.2.abs()).sum();
        let floor = 64.0 * f64::EPSILON * scale;
        if err <= tol.max(floor) {
            return (value, err.min(tol));
        }
        if pieces.len() >= MAX_PIECES || !value.is_finite() {
            return (value, err);
        }
        let worst = (0..pieces.len()).max_by(|&i, &j| pieces[i].3.total_cmp(&pieces[j].3)).unwrap();
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            return (value, err);
        }
        pieces.push(rule(lo, mid));
        pieces.push(rule(mid, hi));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_exponential() {
        let v = integrate(&|x: f64| x * x, 0.0, 3.0, 1e-12).unwrap();
        assert!((v - 9.0).abs() < 1e-11);
        let v = integrate(&|x: f64| (-x).exp(), 0.0, 40.0, 1e-12).unwrap();
        assert!((v - (1.0 - (-40f64).exp())).abs() < 1e-11);
    }

    #[test]
    fn piecewise_integrand() {
        let f = |x: f64| if x <= 1.0 { 1.0 } else { 3.0 };
        let v = integrate_pieces(&f, &[0.0, 1.0, 2.0], 1e-12).unwrap();
        assert!((v - 4.0).abs() < 1e-11);
    }
}
