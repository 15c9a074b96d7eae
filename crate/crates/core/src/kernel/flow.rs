//! Paths of the posterior ratio process under the no-change measure.
//!
//! With `E_t = exp(μB_t + (λ − μ²/2)t)` the process is
//! `Φ_t = E_t (φ + λ ∫₀ᵗ E_s^{-1} ds)`. Over one step the ratio
//! `R = E_{t+h}/E_t` is exact and the trapezoid rule on the integral gives
//!
//! ```text
//! Φ_{t+h} = R Φ_t + λ (h/2)(R + 1),
//! ```
//!
//! which is affine in `Φ_t`. A path is therefore the flow `Φ_t(φ) = φ Y_t + A_t`
//! with `Y = E` and `A = Φ(0)`, and one simulated pair `(Y, A)` serves every
//! starting point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Point2, ProblemParams};
use crate::rng::{domain, normal, par_indexed, StreamId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiPath {
    pub times: Vec<f64>,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub seed: u64,
}

impl PhiPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, f64, f64)> {
        let n = self.times.len();
        (n > 0).then(|| (self.times[n - 1], self.phi1[n - 1], self.phi2[n - 1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Exact,
    Euler,
}

#[inline]
pub fn exact_step(phi: f64, lambda: f64, mu: f64, h: f64, db: f64) -> f64 {
    let r = (mu * db + (lambda - 0.5 * mu * mu) * h).exp();
    r * phi + 0.5 * lambda * h * (r + 1.0)
}

#[inline]
pub fn euler_step(phi: f64, lambda: f64, mu: f64, h: f64, db: f64) -> f64 {
    (phi + lambda * (1.0 + phi) * h + mu * phi * db).max(0.0)
}

pub fn check_time_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.first() != Some(&0.0) {
        return Err(Error::DomainError("time grid must start at 0".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::DomainError("time grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Both coordinates on `t_grid` for raw rates; `lambda = 0` or `mu = 0` are
/// allowed here, unlike in [`ProblemParams`].
pub fn sample_phi_with(
    start: Point2,
    t_grid: &[f64],
    lambda: f64,
    mu: f64,
    stream: StreamId,
    scheme: Scheme,
) -> Result<PhiPath> {
    check_time_grid(t_grid)?;
    let step = match scheme {
        Scheme::Exact => exact_step,
        Scheme::Euler => euler_step,
    };
    let mut rng = stream.rng(domain::KERNEL_FLOW);
    let n = t_grid.len();
    let mut phi1 = Vec::with_capacity(n);
    let mut phi2 = Vec::with_capacity(n);
    let (mut x1, mut x2) = (start.phi1, start.phi2);
    phi1.push(x1);
    phi2.push(x2);
    for w in t_grid.windows(2) {
        let h = w[1] - w[0];
        let sd = h.sqrt();
        let (z1, z2) = (normal(&mut rng), normal(&mut rng));
        x1 = step(x1, lambda, mu, h, sd * z1);
        x2 = step(x2, lambda, mu, h, sd * z2);
        phi1.push(x1);
        phi2.push(x2);
    }
    Ok(PhiPath {
        times: t_grid.to_vec(),
        phi1,
        phi2,
        seed: stream.seed,
    })
}

pub fn sample_phi_exact(start: Point2, t_grid: &[f64], params: &ProblemParams, stream: StreamId) -> Result<PhiPath> {
    sample_phi_with(start, t_grid, params.lambda, params.mu, stream, Scheme::Exact)
}

pub fn sample_phi_euler(start: Point2, t_grid: &[f64], params: &ProblemParams, stream: StreamId) -> Result<PhiPath> {
    sample_phi_with(start, t_grid, params.lambda, params.mu, stream, Scheme::Euler)
}

/// `n` equal steps on `[0, t]`.
pub fn uniform_grid(t: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| t * i as f64 / n as f64).collect()
}

/// Flow pairs `(Y, A)` of both coordinates at a set of times, for many paths.
///
/// Storage is path-major: entry `path * times.len() + j`.
#[derive(Debug, Clone)]
pub struct FlowBundle {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub y1: Vec<f64>,
    pub a1: Vec<f64>,
    pub y2: Vec<f64>,
    pub a2: Vec<f64>,
}

impl FlowBundle {
    #[inline]
    pub fn at(&self, path: usize, j: usize, start: Point2) -> (f64, f64) {
        let k = path * self.times.len() + j;
        (
            start.phi1 * self.y1[k] + self.a1[k],
            start.phi2 * self.y2[k] + self.a2[k],
        )
    }
}

/// Simulates flows at the increasing positive `times` with sub-steps no
/// longer than `dt_max`. The fine step grid is `k·dt_max` plus the requested
/// times, so paths with the same seed share noise across different time sets
/// up to the last common grid point.
pub fn sample_flows(times: &[f64], params: &ProblemParams, n_paths: usize, seed: u64, dt_max: f64) -> Result<FlowBundle> {
    if times.is_empty() || times[0] <= 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DomainError("flow times must be positive and increasing".into()));
    }
    if !(dt_max > 0.0) {
        return Err(Error::DomainError(format!("dt_max must be positive, got {dt_max}")));
    }
    let m = times.len();
    let (lambda, mu) = (params.lambda, params.mu);
    let per_path = par_indexed(n_paths, |p| {
        let mut rng = StreamId::new(seed, p as u64).rng(domain::KERNEL_FLOW);
        let mut out = vec![0.0; 4 * m];
        let (mut y1, mut a1, mut y2, mut a2) = (1.0, 0.0, 1.0, 0.0);
        let mut t = 0.0;
        let mut k = 0u64;
        for (j, &target) in times.iter().enumerate() {
            while t < target {
                let next = ((k + 1) as f64 * dt_max).min(target);
                let h = next - t;
                let sd = h.sqrt();
                let (z1, z2) = (normal(&mut rng), normal(&mut rng));
                let r1 = (mu * sd * z1 + (lambda - 0.5 * mu * mu) * h).exp();
                let r2 = (mu * sd * z2 + (lambda - 0.5 * mu * mu) * h).exp();
                y1 *= r1;
                a1 = r1 * a1 + 0.5 * lambda * h * (r1 + 1.0);
                y2 *= r2;
                a2 = r2 * a2 + 0.5 * lambda * h * (r2 + 1.0);
                if next >= (k + 1) as f64 * dt_max {
                    k += 1;
                }
                t = next;
            }
            out[j] = y1;
            out[m + j] = a1;
            out[2 * m + j] = y2;
            out[3 * m + j] = a2;
        }
        out
    });
    let mut bundle = FlowBundle {
        times: times.to_vec(),
        n_paths,
        y1: Vec::with_capacity(n_paths * m),
        a1: Vec::with_capacity(n_paths * m),
        y2: Vec::with_capacity(n_paths * m),
        a2: Vec::with_capacity(n_paths * m),
    };
    for out in per_path {
        bundle.y1.extend_from_slice(&out[..m]);
        bundle.a1.extend_from_slice(&out[m..2 * m]);
        bundle.y2.extend_from_slice(&out[2 * m..3 * m]);
        bundle.a2.extend_from_slice(&out[3 * m..]);
    }
    Ok(bundle)
}

/// `E[Φ_t] = (1+φ)e^{λt} − 1`.
pub fn mean_oracle(phi: f64, lambda: f64, t: f64) -> f64 {
    (1.0 + phi) * (lambda * t).exp() - 1.0
}
