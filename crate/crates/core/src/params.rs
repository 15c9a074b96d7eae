//! Problem parameters and the shared domain types.
//!
//! A detection problem is the tuple `(λ, μ, c, p1, p2, π)`: the rate of the
//! exponential change-point prior, the post-change drift, the delay cost rate,
//! the probabilities that the drift appears in coordinate 1 or 2, and the prior
//! mass of a change already at time zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One instance of the detection problem.
///
/// Construct with [`ProblemParams::new`] or pass a raw value through
/// [`validate_params`]; both enforce `p2 = 1 − p1` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub lambda: f64,
    pub mu: f64,
    pub c: f64,
    pub p1: f64,
    pub p2: f64,
    pub pi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// `2λ/μ²`
    pub kappa: f64,
    /// `2 p1/μ²`
    pub nu1: f64,
    /// `2 p2/μ²`
    pub nu2: f64,
    /// Starting value `π/(1−π)` of both posterior ratio coordinates.
    pub phi0_init: f64,
}

/// A point of the state space `[0,∞) × [0,∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub phi1: f64,
    pub phi2: f64,
}

impl Point2 {
    pub fn new(phi1: f64, phi2: f64) -> Result<Self> {
        if !phi1.is_finite() || !phi2.is_finite() || phi1 < 0.0 || phi2 < 0.0 {
            return Err(Error::DomainError(format!(
                "point ({phi1}, {phi2}) is outside [0,inf) x [0,inf)"
            )));
        }
        Ok(Self { phi1, phi2 })
    }

    /// Both coordinates equal, as for the start `(Φ0, Φ0)` of the initial problem.
    pub fn diagonal(phi: f64) -> Result<Self> {
        Self::new(phi, phi)
    }
}

/// Checks a raw parameter tuple and normalizes `p2 := 1 − p1`.
pub fn validate_params(raw: ProblemParams) -> Result<ProblemParams> {
    let fields = [
        ("lambda", raw.lambda),
        ("mu", raw.mu),
        ("c", raw.c),
        ("p1", raw.p1),
        ("pi", raw.pi),
    ];
    for (name, value) in fields {
        if !value.is_finite() {
            return Err(Error::NonFinite { name });
        }
    }
    if raw.lambda <= 0.0 {
        return Err(Error::NonPositiveRate {
            name: "lambda",
            value: raw.lambda,
        });
    }
    if raw.c <= 0.0 {
        return Err(Error::NonPositiveRate {
            name: "c",
            value: raw.c,
        });
    }
    if raw.mu == 0.0 {
        return Err(Error::ZeroDrift);
    }
    if !(0.0..1.0).contains(&raw.pi) {
        return Err(Error::PriorOutOfRange {
            name: "pi",
            value: raw.pi,
        });
    }
    if !(0.0..=1.0).contains(&raw.p1) {
        return Err(Error::PriorOutOfRange {
            name: "p1",
            value: raw.p1,
        });
    }
    Ok(ProblemParams {
        p2: 1.0 - raw.p1,
        ..raw
    })
}

impl ProblemParams {
    pub fn new(lambda: f64, mu: f64, c: f64, p1: f64, pi: f64) -> Result<Self> {
        validate_params(ProblemParams {
            lambda,
            mu,
            c,
            p1,
            p2: 1.0 - p1,
            pi,
        })
    }

    /// The parameter set of the caption of the reference figure:
    /// `μ = λ = c = 1`, `p1 = p2 = 1/2`, `π = 0`.
    pub fn symmetric_unit() -> Self {
        Self::new(1.0, 1.0, 1.0, 0.5, 0.0).expect("valid constants")
    }

    /// The one-dimensional problem with all drift on a single coordinate.
    pub fn one_dim(lambda: f64, mu: f64, c: f64) -> Result<Self> {
        Self::new(lambda, mu, c, 1.0, 0.0)
    }

    pub fn derived(&self) -> DerivedConstants {
        let mu2 = self.mu * self.mu;
        DerivedConstants {
            kappa: 2.0 * self.lambda / mu2,
            nu1: 2.0 * self.p1 / mu2,
            nu2: 2.0 * self.p2 / mu2,
            phi0_init: self.pi / (1.0 - self.pi),
        }
    }

    pub fn kappa(&self) -> f64 {
        2.0 * self.lambda / (self.mu * self.mu)
    }

    pub fn lambda_over_c(&self) -> f64 {
        self.lambda / self.c
    }

    /// `π/(1−π)`, the common starting value of `Φ¹` and `Φ²`.
    pub fn phi0_init(&self) -> f64 {
        self.pi / (1.0 - self.pi)
    }

    /// True when one of the coordinates carries all the prior mass of the drift.
    pub fn is_degenerate(&self) -> bool {
        self.p1 == 0.0 || self.p1 == 1.0
    }

    pub fn with_pi(&self, pi: f64) -> Result<Self> {
        validate_params(ProblemParams { pi, ..*self })
    }

    /// The one-dimensional problem seen by coordinate `i` alone after pulling
    /// `p_i` in front of the cost: same `λ, μ`, delay cost `p_i c`.
    pub fn marginal(&self, channel: usize) -> Result<Self> {
        let p = match channel {
            1 => self.p1,
            2 => self.p2,
            _ => return Err(Error::DomainError(format!("no channel {channel}"))),
        };
        Self::one_dim(self.lambda, self.mu, p * self.c)
    }

    /// Running cost `L(φ1, φ2) = p1 φ1 + p2 φ2 − λ/c`.
    #[inline]
    pub fn lagrangian(&self, phi1: f64, phi2: f64) -> f64 {
        self.p1 * phi1 + self.p2 * phi2 - self.lambda / self.c
    }
}

/// Running cost `L` at a point of the state space.
pub fn lagrangian_l(p: Point2, params: &ProblemParams) -> f64 {
    params.lagrangian(p.phi1, p.phi2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_parameters_derive_expected_constants() {
        let p = ProblemParams::new(1.0, 1.0, 1.0, 0.5, 0.0).unwrap();
        let d = p.derived();
        assert_eq!(d.kappa, 2.0);
        assert_eq!(d.nu1, 1.0);
        assert_eq!(d.nu2, 1.0);
        assert_eq!(d.phi0_init, 0.0);
    }

    #[test]
    fn pi_one_is_rejected() {
        let err = ProblemParams::new(1.0, 1.0, 1.0, 0.5, 1.0).unwrap_err();
        assert!(matches!(err, Error::PriorOutOfRange { name: "pi", .. }));
    }

    #[test]
    fn degenerate_channel_probability() {
        let p = ProblemParams::new(2.0, 2.0, 1.0, 1.0, 0.0).unwrap();
        let d = p.derived();
        assert_eq!(d.kappa, 1.0);
        assert_eq!(d.nu1, 0.5);
        assert_eq!(d.nu2, 0.0);
        assert!(p.is_degenerate());
    }

    #[test]
    fn rejects_bad_rates_and_drift() {
        assert!(matches!(
            ProblemParams::new(0.0, 1.0, 1.0, 0.5, 0.0),
            Err(Error::NonPositiveRate { name: "lambda", .. })
        ));
        assert!(matches!(
            ProblemParams::new(1.0, 1.0, -1.0, 0.5, 0.0),
            Err(Error::NonPositiveRate { name: "c", .. })
        ));
        assert!(matches!(
            ProblemParams::new(1.0, 0.0, 1.0, 0.5, 0.0),
            Err(Error::ZeroDrift)
        ));
        assert!(matches!(
            ProblemParams::new(1.0, 1.0, 1.0, 1.5, 0.0),
            Err(Error::PriorOutOfRange { name: "p1", .. })
        ));
        assert!(matches!(
            ProblemParams::new(1.0, 1.0, 1.0, 0.5, -0.1),
            Err(Error::PriorOutOfRange { name: "pi", .. })
        ));
        assert!(matches!(
            ProblemParams::new(f64::NAN, 1.0, 1.0, 0.5, 0.0),
            Err(Error::NonFinite { name: "lambda" })
        ));
    }

    #[test]
    fn validation_normalizes_p2() {
        let raw = ProblemParams {
            lambda: 1.0,
            mu: 1.0,
            c: 1.0,
            p1: 0.3,
            p2: 0.9,
            pi: 0.0,
        };
        let p = validate_params(raw).unwrap();
        assert_eq!(p.p1 + p.p2, 1.0);
        assert_eq!(validate_params(p).unwrap(), p);
    }

    #[test]
    fn lagrangian_examples() {
        let p = ProblemParams::new(1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(lagrangian_l(Point2::new(2.0, 0.0).unwrap(), &p), 1.0);

        let p = ProblemParams::new(3.0, 1.0, 2.0, 0.25, 0.0).unwrap();
        let vertex = p.lambda / (p.p1 * p.c);
        assert!(lagrangian_l(Point2::new(vertex, 0.0).unwrap(), &p).abs() < 1e-15);

        let p = ProblemParams::symmetric_unit();
        assert_eq!(lagrangian_l(Point2::new(1.0, 1.0).unwrap(), &p), 0.0);
    }

    #[test]
    fn lagrangian_symmetric_iff_equal_weights() {
        let sym = ProblemParams::symmetric_unit();
        assert_eq!(sym.lagrangian(0.3, 1.7), sym.lagrangian(1.7, 0.3));
        let asym = ProblemParams::new(1.0, 1.0, 1.0, 0.3, 0.0).unwrap();
        assert_ne!(asym.lagrangian(0.3, 1.7), asym.lagrangian(1.7, 0.3));
    }

    #[test]
    fn points_must_lie_in_quadrant() {
        assert!(Point2::new(-1e-12, 0.0).is_err());
        assert!(Point2::new(0.0, f64::INFINITY).is_err());
        assert!(Point2::new(0.0, 0.0).is_ok());
    }
}
