//! The one-dimensional problem: drift known to sit in a single coordinate.
//!
//! The optimal rule stops when `Φ ≥ φ*`, where `φ*` is the unique root of
//! `F = G` on `(λ/c, ∞)`. Since `F(φ) = e^{ψ} g(φ)` and
//! `G(φ) = (μ²/2c) e^{ψ}` with the same exponent, the root solves
//! `g(φ*) = μ²/(2c)`; bisection runs on that well-scaled difference and the
//! reported residual is `|F − G|` with `F` integrated directly.
//!
//! Only `λ, μ, c` of the parameters are read. For channel `i` of a
//! two-dimensional problem pass [`ProblemParams::marginal`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mayer::{reduced_g, weighted_g_integral};
use crate::params::ProblemParams;
use crate::quad::{integrate_with_breaks, QuadratureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary1D {
    pub phi_star: f64,
    pub residual: f64,
    pub bracket: (f64, f64),
}

/// `V̂` of the one-dimensional problem for a solved threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Value1D {
    pub phi_star: f64,
    pub params: ProblemParams,
}

impl Value1D {
    pub fn new(b1: &Boundary1D, params: &ProblemParams) -> Self {
        Self {
            phi_star: b1.phi_star,
            params: *params,
        }
    }

    pub fn eval(&self, phi: f64, quad: &QuadratureSpec) -> Result<f64> {
        value_at(phi, self.phi_star, &self.params, quad)
    }
}

/// `F(φ) = e^{−κ} ∫₀^φ (1+s) s^{κ−1} e^{−κ/s} ds`.
pub fn f_of(phi: f64, kappa: f64) -> Result<f64> {
    if !(phi.is_finite() && phi >= 0.0) {
        return Err(Error::DomainError(format!("F needs phi >= 0, got {phi}")));
    }
    if phi == 0.0 {
        return Ok(0.0);
    }
    let log_f = |s: f64| -kappa + s.ln_1p() + (kappa - 1.0) * s.ln() - kappa / s;
    // below s = κ/740 the integrand is under the smallest double
    let start = (kappa / 740.0).min(phi);
    let mut breaks = vec![start];
    let mut right = start;
    while right * 2.0 < phi {
        right *= 2.0;
        breaks.push(right);
    }
    breaks.push(phi);
    let r = integrate_with_breaks(|s| log_f(s).exp(), &breaks, &QuadratureSpec::tight())?;
    Ok(r.value)
}

/// `G(φ) = (μ²/2c) e^{κ(log φ − (1+φ)/φ)}`.
pub fn g_of(phi: f64, kappa: f64, mu: f64, c: f64) -> f64 {
    if phi <= 0.0 {
        return 0.0;
    }
    0.5 * mu * mu / c * (kappa * (phi.ln() - (1.0 + phi) / phi)).exp()
}

/// Sign-equivalent, well-scaled form of `F − G`.
fn scaled_difference(phi: f64, kappa: f64, target: f64) -> Result<f64> {
    let (g, _) = reduced_g(phi, kappa, &QuadratureSpec::tight())?;
    Ok(g - target)
}

/// The threshold `φ*`: bracket expansion from `(λ/c, 2λ/c)` and bisection to
/// relative argument tolerance `tol`.
pub fn solve_phi_star(params: &ProblemParams, tol: f64) -> Result<Boundary1D> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("root tolerance must be positive, got {tol}")));
    }
    let kappa = params.kappa();
    let target = 0.5 * params.mu * params.mu / params.c;
    let ratio = params.lambda_over_c();
    let mut lo = ratio * (1.0 + 1e-6);
    let mut hi = 2.0 * ratio;
    let f_lo = scaled_difference(lo, kappa, target)?;
    let mut f_hi = scaled_difference(hi, kappa, target)?;
    if f_lo >= 0.0 {
        return Err(Error::BracketFailure {
            lo,
            hi,
            f_lo,
            f_hi,
        });
    }
    while f_hi <= 0.0 {
        if hi > 1e12 * ratio.max(1.0) {
            return Err(Error::BracketFailure {
                lo,
                hi,
                f_lo,
                f_hi,
            });
        }
        lo = hi;
        hi *= 2.0;
        f_hi = scaled_difference(hi, kappa, target)?;
    }
    let bracket = (lo, hi);
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if scaled_difference(mid, kappa, target)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let phi_star = 0.5 * (lo + hi);
    let residual = (f_of(phi_star, kappa)? - g_of(phi_star, kappa, params.mu, params.c)).abs();
    Ok(Boundary1D {
        phi_star,
        residual,
        bracket,
    })
}

fn value_at(phi: f64, phi_star: f64, params: &ProblemParams, quad: &QuadratureSpec) -> Result<f64> {
    if !(phi.is_finite() && phi >= 0.0) {
        return Err(Error::DomainError(format!("value needs phi >= 0, got {phi}")));
    }
    if phi >= phi_star {
        return Ok(0.0);
    }
    let w = weighted_g_integral(phi, phi_star, params.kappa(), quad)?;
    let linear = -(phi_star - phi) / (params.c * (1.0 + phi_star));
    Ok(linear + 2.0 / (params.mu * params.mu) * (1.0 + phi) * w.value)
}

/// `V̂(φ)`: zero on `[φ*, ∞)`, the solution of the free-boundary problem below.
pub fn value_1d(phi: f64, b1: &Boundary1D, params: &ProblemParams, quad: &QuadratureSpec) -> Result<f64> {
    value_at(phi, b1.phi_star, params, quad)
}

/// Residual of `L V̂ − λV̂ = −(φ − λ/c)` with central differences of step `h`.
pub fn ode_residual_1d(phi: f64, b1: &Boundary1D, params: &ProblemParams, h: f64) -> Result<f64> {
    if !(h > 0.0 && phi > h && phi < b1.phi_star - 2.0 * h) {
        return Err(Error::DomainError(format!(
            "1-D residual needs h < phi < phi* - 2h, got phi = {phi}, phi* = {}",
            b1.phi_star
        )));
    }
    let quad = QuadratureSpec::tight();
    let v = |x: f64| value_1d(x, b1, params, &quad);
    let (v0, vp, vm) = (v(phi)?, v(phi + h)?, v(phi - h)?);
    let d1 = (vp - vm) / (2.0 * h);
    let d2 = (vp - 2.0 * v0 + vm) / (h * h);
    let lhs = params.lambda * (1.0 + phi) * d1 + 0.5 * params.mu * params.mu * phi * phi * d2 - params.lambda * v0;
    Ok((lhs + phi - params.lambda_over_c()).abs())
}

/// Second-order one-sided difference quotient of `V̂` at `φ*` from the left.
pub fn smooth_fit_derivative(b1: &Boundary1D, params: &ProblemParams, h: f64) -> Result<f64> {
    let quad = QuadratureSpec::tight();
    let s = b1.phi_star;
    let v1 = value_1d(s - h, b1, params, &quad)?;
    let v2 = value_1d(s - 2.0 * h, b1, params, &quad)?;
    Ok((3.0 * 0.0 - 4.0 * v1 + v2) / (2.0 * h))
}
