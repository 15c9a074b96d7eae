//! The two-dimensional stopping boundary `b` and the value function built
//! from it.
//!
//! The stopping set is `D = {φ2 ≥ b(φ1)}` with `b` convex and decreasing, and
//! `b` is the unique curve in its class with
//!
//! ```text
//! ∫₀^∞ e^{−λt} K(t; φ1, b(φ1)) dt = 0   for φ1 ∈ [0, φ0).
//! ```
//!
//! The same integral at any start is `V̂`. See [`picard`] for the solver.

pub mod picard;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::flow::exact_step;
use crate::kernel::{
    discounted_K_integral, AffineCurve, Curve, DensityEngine, DiscountedIntegral, KernelBudget, KernelMethod,
    TimeQuadSpec,
};
use crate::mayer::mayer_m_2d;
use crate::onedim::solve_phi_star;
use crate::params::{Point2, ProblemParams};
use crate::quad::QuadratureSpec;
use crate::rng::{domain, mean_and_se, normal, par_indexed, StreamId};

pub use picard::{cosine_grid, picard_solve, BoundaryGridSpec, PicardSettings};

/// The two lines that enclose `b`, with the one-dimensional thresholds of
/// each channel at delay cost `p_i c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryBounds {
    /// `φ2 = λ/(p2 c) − (p1/p2) φ1`: below it `L < 0`, so the process continues.
    pub lower: AffineCurve,
    /// `φ2 = φ2* − (φ2*/φ1*) φ1`: above it the process stops.
    pub upper: AffineCurve,
    pub phi1_star: f64,
    pub phi2_star: f64,
}

impl BoundaryBounds {
    /// Lower line without clipping at zero.
    pub fn lower_signed(&self, phi1: f64) -> f64 {
        self.lower.intercept + self.lower.slope * phi1
    }

    pub fn upper_signed(&self, phi1: f64) -> f64 {
        self.upper.intercept + self.upper.slope * phi1
    }
}

pub fn boundary_bounds(params: &ProblemParams) -> Result<BoundaryBounds> {
    if !(params.p1 > 0.0 && params.p1 < 1.0) {
        return Err(Error::DomainError(format!("boundary bounds need p1 in (0,1), got {}", params.p1)));
    }
    let phi1_star = solve_phi_star(&params.marginal(1)?, 1e-12)?.phi_star;
    let phi2_star = solve_phi_star(&params.marginal(2)?, 1e-12)?.phi_star;
    Ok(BoundaryBounds {
        lower: AffineCurve {
            intercept: params.lambda / (params.p2 * params.c),
            slope: -params.p1 / params.p2,
        },
        upper: AffineCurve {
            intercept: phi2_star,
            slope: -phi2_star / phi1_star,
        },
        phi1_star,
        phi2_star,
    })
}

pub const BOUNDARY_CSV_SCHEMA: &str = "coorddrift.boundary.v1";

/// A boundary on a grid of `[0, φ1*]`, linear between nodes and zero from
/// `phi_zero` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary2D {
    pub phi1_grid: Vec<f64>,
    pub b_values: Vec<f64>,
    pub phi_zero: f64,
    pub iteration_count: usize,
    pub sup_update: f64,
    pub params: ProblemParams,
    /// Nodes whose last root bracket had no sign change.
    pub flagged: Vec<usize>,
    /// Kernel error at each node carried through to `φ2` units.
    pub node_errors: Vec<f64>,
}

impl Boundary2D {
    /// Builds the boundary from signed node heights; `phi_zero` is the first
    /// zero of their piecewise-linear interpolant.
    pub fn from_signed(phi1_grid: Vec<f64>, signed: &[f64], params: &ProblemParams) -> Self {
        let n = phi1_grid.len();
        let mut phi_zero = phi1_grid[n - 1];
        for i in 0..n {
            if signed[i] <= 0.0 {
                phi_zero = if i == 0 {
                    0.0
                } else {
                    let (x0, x1, y0, y1) = (phi1_grid[i - 1], phi1_grid[i], signed[i - 1], signed[i]);
                    x0 + (x1 - x0) * y0 / (y0 - y1)
                };
                break;
            }
        }
        Self {
            b_values: signed.iter().map(|y| y.max(0.0)).collect(),
            phi1_grid,
            phi_zero,
            iteration_count: 0,
            sup_update: 0.0,
            params: *params,
            flagged: Vec::new(),
            node_errors: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.phi1_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi1_grid.is_empty()
    }

    /// Nodes strictly before `phi_zero` followed by `(phi_zero, 0)`.
    pub fn knots(&self) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(self.len() + 1);
        let mut ys = Vec::with_capacity(self.len() + 1);
        for (x, y) in self.phi1_grid.iter().zip(&self.b_values) {
            if *x < self.phi_zero {
                xs.push(*x);
                ys.push(*y);
            }
        }
        xs.push(self.phi_zero);
        ys.push(0.0);
        (xs, ys)
    }

    /// Largest grid spacing.
    pub fn max_cell(&self) -> f64 {
        self.phi1_grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Second differences as defects against the chord: at each interior
    /// knot, the chord of its neighbours minus `b`. Convexity means all of
    /// them are `≥ 0`; returns the most negative with its location.
    pub fn worst_convexity(&self) -> (f64, f64) {
        let (xs, ys) = self.knots();
        let mut worst = (f64::INFINITY, f64::NAN);
        for i in 1..xs.len().saturating_sub(1) {
            let w = (xs[i] - xs[i - 1]) / (xs[i + 1] - xs[i - 1]);
            let chord = ys[i - 1] + w * (ys[i + 1] - ys[i - 1]);
            let d = chord - ys[i];
            if d < worst.0 {
                worst = (d, xs[i]);
            }
        }
        worst
    }

    /// Checks the structural invariants: nonincreasing, convex within
    /// `tol_convex`, between the two lines and in the class `L(φ1, b) ≥ 0`
    /// on `[0, φ0)`, each within `tol`.
    pub fn check_invariants(&self, bounds: &BoundaryBounds, tol: f64, tol_convex: f64) -> Result<()> {
        for i in 1..self.len() {
            if self.b_values[i] > self.b_values[i - 1] {
                return Err(Error::DomainError(format!(
                    "boundary increases at phi1 = {}",
                    self.phi1_grid[i]
                )));
            }
        }
        let (worst, at) = self.worst_convexity();
        if worst < -tol_convex {
            return Err(Error::ConvexityViolation {
                phi1: at,
                excess: -worst,
            });
        }
        let p = &self.params;
        for (x, y) in self.phi1_grid.iter().zip(&self.b_values) {
            if *y < bounds.lower.height(*x) - tol || *y > bounds.upper.height(*x) + tol {
                return Err(Error::DomainError(format!("boundary leaves the bounding lines at phi1 = {x}")));
            }
            if *x < self.phi_zero && p.lagrangian(*x, *y) < -tol {
                return Err(Error::DomainError(format!("class condition fails at phi1 = {x}")));
            }
        }
        Ok(())
    }

    /// `|b(b(φ1)) − φ1|` at every node before `φ0`; zero for an exact
    /// symmetric boundary.
    pub fn involution_defects(&self) -> Vec<f64> {
        self.phi1_grid
            .iter()
            .filter(|x| **x < self.phi_zero)
            .map(|x| (self.height(self.height(*x)) - x).abs())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# schema: {BOUNDARY_CSV_SCHEMA}\nphi1,b\n");
        for (x, y) in self.phi1_grid.iter().zip(&self.b_values) {
            out.push_str(&format!("{x:.12e},{y:.12e}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("boundary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad boundary JSON: {e}")))
    }
}

impl Curve for Boundary2D {
    fn height(&self, phi1: f64) -> f64 {
        if !(phi1 < self.phi_zero) {
            return 0.0;
        }
        let g = &self.phi1_grid;
        let i = g.partition_point(|x| *x <= phi1).saturating_sub(1);
        let (x0, y0) = (g[i], self.b_values[i]);
        let (x1, y1) = if i + 1 < g.len() && g[i + 1] < self.phi_zero {
            (g[i + 1], self.b_values[i + 1])
        } else {
            (self.phi_zero, 0.0)
        };
        if x1 <= x0 {
            return y0;
        }
        y0 + (y1 - y0) * (phi1 - x0) / (x1 - x0)
    }

    fn zero(&self) -> f64 {
        self.phi_zero
    }
}

/// `V̂ = ∫₀^∞ e^{−λt} K(t; φ) dt` for a solved boundary.
#[derive(Debug, Clone)]
pub struct ValueField2D {
    pub boundary: Boundary2D,
    pub params: ProblemParams,
    pub method: KernelMethod,
    pub budget: KernelBudget,
    pub time_quad: TimeQuadSpec,
}

impl ValueField2D {
    pub fn new(boundary: &Boundary2D, method: KernelMethod, budget: &KernelBudget) -> Self {
        Self {
            params: boundary.params,
            boundary: boundary.clone(),
            method,
            budget: *budget,
            time_quad: TimeQuadSpec::default(),
        }
    }

    pub fn eval(&self, p: Point2) -> Result<DiscountedIntegral> {
        if p.phi2 >= self.boundary.height(p.phi1) {
            // on D the representation vanishes; skip the quadrature noise
            return Ok(DiscountedIntegral {
                value: 0.0,
                std_error: 0.0,
                tail_bound: 0.0,
                method: self.method,
            });
        }
        discounted_K_integral(
            p.phi1,
            p.phi2,
            &self.boundary,
            &self.params,
            &self.time_quad,
            self.method,
            &self.budget,
        )
    }
}

/// The integral representation of `V̂` at `p`, computed even on `D`.
pub fn value_2d(
    p: Point2,
    b: &Boundary2D,
    params: &ProblemParams,
    method: KernelMethod,
    budget: &KernelBudget,
) -> Result<DiscountedIntegral> {
    discounted_K_integral(p.phi1, p.phi2, b, params, &TimeQuadSpec::default(), method, budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialValue {
    pub pi: f64,
    pub value: f64,
    pub std_error: f64,
    /// `V̂(π/(1−π), π/(1−π))`.
    pub v_hat: f64,
}

/// Minimal Bayes risk `(1−π)[1 + c V̂(Φ0, Φ0)]` with `Φ0 = π/(1−π)`.
pub fn value_initial_problem(
    pi: f64,
    b: &Boundary2D,
    params: &ProblemParams,
    method: KernelMethod,
    budget: &KernelBudget,
) -> Result<InitialValue> {
    if !(0.0..1.0).contains(&pi) {
        return Err(Error::PriorOutOfRange { name: "pi", value: pi });
    }
    let phi = pi / (1.0 - pi);
    let v = ValueField2D {
        params: *params,
        ..ValueField2D::new(b, method, budget)
    }
    .eval(Point2::diagonal(phi)?)?;
    Ok(InitialValue {
        pi,
        value: (1.0 - pi) * (1.0 + params.c * v.value),
        std_error: (1.0 - pi) * params.c * v.std_error,
        v_hat: v.value,
    })
}

/// The left side of the boundary equation at every node, `b` frozen.
pub fn fredholm_residual(b: &Boundary2D, params: &ProblemParams) -> Result<Vec<f64>> {
    let top = b.phi1_grid.iter().chain(&b.b_values).fold(0.0f64, |m, x| m.max(*x));
    let engine = DensityEngine::new(params, &PicardSettings::default().budget.grid, &TimeQuadSpec::default(), top)?;
    let rows = par_indexed(b.len(), |i| -> Result<f64> {
        let m1 = engine.marginal(b.phi1_grid[i])?;
        let m2 = engine.marginal(b.b_values[i])?;
        Ok(engine.discounted(&m1, &m2, b))
    });
    rows.into_iter().collect()
}

/// Settings of the path check of `V̂ = E[e^{−λτ_b} M(Φ_τb)] − M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MayerCheck {
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
}

impl Default for MayerCheck {
    fn default() -> Self {
        Self {
            n_paths: 4000,
            seed: 1,
            dt: 1e-3,
            horizon: 10.0,
        }
    }
}

/// `V̂(p)` as `E[e^{−λτ_b} M(Φ_τb)] − M(p)` over simulated paths; returns the
/// estimate and its standard error. Paths still running at the horizon are
/// stopped there.
pub fn value_via_mayer(p: Point2, b: &Boundary2D, params: &ProblemParams, check: &MayerCheck) -> Result<(f64, f64)> {
    let quad = QuadratureSpec::default();
    let m0 = mayer_m_2d(p, params, &quad)?.value;
    let steps = (check.horizon / check.dt).ceil() as usize;
    let (lambda, mu) = (params.lambda, params.mu);
    let per_path = par_indexed(check.n_paths, |i| -> Result<f64> {
        let mut rng = StreamId::new(check.seed, i as u64).rng(domain::VALUE_CHECK);
        let (mut x1, mut x2) = (p.phi1, p.phi2);
        let sd = check.dt.sqrt();
        let mut t = 0.0;
        for _ in 0..steps {
            if x2 >= b.height(x1) {
                break;
            }
            x1 = exact_step(x1, lambda, mu, check.dt, sd * normal(&mut rng));
            x2 = exact_step(x2, lambda, mu, check.dt, sd * normal(&mut rng));
            t += check.dt;
        }
        let m = mayer_m_2d(Point2::new(x1, x2)?, params, &quad)?.value;
        Ok((-lambda * t).exp() * m)
    });
    let xs: Vec<f64> = per_path.into_iter().collect::<Result<_>>()?;
    let (mean, se) = mean_and_se(&xs);
    Ok((mean - m0, se))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ProblemParams {
        ProblemParams::symmetric_unit()
    }

    #[test]
    fn unit_bounds() {
        let bb = boundary_bounds(&unit()).unwrap();
        assert_eq!(bb.lower.intercept, 2.0);
        assert_eq!(bb.lower.slope, -1.0);
        assert_eq!(bb.phi1_star, bb.phi2_star);
        // φ* of the one-dimensional problem at λ/c = 2
        assert!((bb.phi1_star - 2.672_155_471_336_396).abs() < 1e-10);
        assert!(boundary_bounds(&ProblemParams::one_dim(1.0, 1.0, 1.0).unwrap()).is_err());
    }

    fn line_boundary() -> Boundary2D {
        let p = unit();
        let grid = cosine_grid(9, 2.0);
        let signed: Vec<f64> = grid.iter().map(|x| 1.5 - x).collect();
        Boundary2D::from_signed(grid, &signed, &p)
    }

    #[test]
    fn height_interpolates_to_the_zero() {
        let b = line_boundary();
        assert!((b.phi_zero - 1.5).abs() < 1e-14);
        for x in [0.0, 0.3, 1.0, 1.49] {
            assert!((b.height(x) - (1.5 - x)).abs() < 1e-14, "{x}");
        }
        assert_eq!(b.height(1.5), 0.0);
        assert_eq!(b.height(7.0), 0.0);
        let (xs, ys) = b.knots();
        assert_eq!(*xs.last().unwrap(), 1.5);
        assert_eq!(*ys.last().unwrap(), 0.0);
    }

    #[test]
    fn line_is_its_own_reflection() {
        let b = line_boundary();
        assert!(b.involution_defects().iter().all(|d| *d < 1e-12));
        assert!(b.worst_convexity().0.abs() < 1e-12);
    }

    #[test]
    fn concave_boundary_is_rejected() {
        let p = unit();
        let bb = boundary_bounds(&p).unwrap();
        let grid = cosine_grid(17, bb.phi1_star);
        let signed: Vec<f64> = grid
            .iter()
            .map(|x| bb.upper_signed(*x).min(2.3 - 0.3 * x * x))
            .collect();
        let b = Boundary2D::from_signed(grid, &signed, &p);
        assert!(matches!(b.check_invariants(&bb, 1e-9, 1e-3), Err(Error::ConvexityViolation { .. })));
    }

    #[test]
    fn json_round_trip() {
        let b = line_boundary();
        assert_eq!(Boundary2D::from_json(&b.to_json()).unwrap(), b);
        let csv = b.to_csv();
        assert!(csv.starts_with("# schema: coorddrift.boundary.v1\nphi1,b\n"));
        assert_eq!(csv.lines().count(), 2 + b.len());
    }

    #[test]
    fn initial_value_of_an_empty_continuation_region() {
        let p = unit();
        let grid = cosine_grid(5, 1.0);
        let b = Boundary2D::from_signed(grid.clone(), &vec![0.0; 5], &p);
        let v = value_initial_problem(0.3, &b, &p, KernelMethod::DensityQuadrature, &KernelBudget::default()).unwrap();
        assert_eq!(v.value, 0.7);
        assert!(value_initial_problem(1.0, &b, &p, KernelMethod::DensityQuadrature, &KernelBudget::default()).is_err());
    }
}
