//! The kernel `K(t; φ1, φ2) = E[L(Φ_t) I(Φ²_t < b(Φ¹_t))]` and its discounted
//! time integral, by Monte Carlo over exact flows or by quadrature against the
//! finite-difference transition densities. The two coordinates are independent
//! so the density route integrates against the product of marginals:
//!
//! ```text
//! K(t) = Σ_a m₁(a) [ (p1 ψ_a − λ/c) P(Φ²_t < b(ψ_a)) + p2 E[Φ²_t; Φ²_t < b(ψ_a)] ]
//! ```
//!
//! over cells `a` of the first coordinate with `ψ_a < φ0`.

pub mod density;
pub mod flow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Point2, ProblemParams};
use crate::quad::composite_gauss_legendre;
use crate::rng::{mean_and_se, par_indexed};

pub use density::{density_1d_fokker_planck, BelowLookup, Cumulative, PackedCumulative, DensityGrid1D, DensityGridSpec, Level, LogGrid};
pub use flow::{sample_flows, sample_phi_euler, sample_phi_exact, FlowBundle, PhiPath};

/// A boundary `φ2 = b(φ1)`; the continuation region is `{φ2 < b(φ1)}`.
pub trait Curve: Sync {
    /// `b(φ1) ≥ 0`, possibly `+∞`.
    fn height(&self, phi1: f64) -> f64;
    /// Smallest zero of `b`, possibly `+∞`.
    fn zero(&self) -> f64;
    /// Largest `|L|` over the continuation region, possibly `+∞`.
    fn sup_abs_lagrangian(&self, params: &ProblemParams) -> f64 {
        let top = params.p1 * self.zero() + params.p2 * self.height(0.0) - params.lambda_over_c();
        top.max(params.lambda_over_c())
    }
}

/// `b(φ1) = max(0, intercept + slope·φ1)`, e.g. the bounding lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCurve {
    pub intercept: f64,
    pub slope: f64,
}

impl Curve for AffineCurve {
    fn height(&self, phi1: f64) -> f64 {
        (self.intercept + self.slope * phi1).max(0.0)
    }
    fn zero(&self) -> f64 {
        if self.intercept <= 0.0 {
            0.0
        } else if self.slope < 0.0 {
            -self.intercept / self.slope
        } else {
            f64::INFINITY
        }
    }
}

/// `b ≡ h` for a constant `h ≥ 0` (use `+∞` for "always continue").
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantCurve(pub f64);

impl Curve for ConstantCurve {
    fn height(&self, _phi1: f64) -> f64 {
        self.0
    }
    fn zero(&self) -> f64 {
        if self.0 > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMethod {
    MonteCarlo,
    DensityQuadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelBudget {
    pub n_paths: usize,
    pub seed: u64,
    /// Longest sub-step of the simulated flows.
    pub dt_max: f64,
    /// Fail with `BudgetExhausted` when the standard error exceeds this.
    pub target_se: Option<f64>,
    pub grid: DensityGridSpec,
}

impl Default for KernelBudget {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            seed: 1,
            dt_max: 0.01,
            target_se: None,
            grid: DensityGridSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEval {
    pub value: f64,
    pub std_error: f64,
    pub method: KernelMethod,
}

fn indicator(curve: &dyn Curve, phi0: f64, x1: f64, x2: f64) -> bool {
    x1 < phi0 && x2 < curve.height(x1)
}

/// First-coordinate cells inside the region with their resolved levels.
#[derive(Debug, Clone, Default)]
pub struct RegionLevels {
    pub cells: Vec<usize>,
    pub levels: Vec<Level>,
}

impl RegionLevels {
    pub fn new(grid: &LogGrid, curve: &dyn Curve) -> Self {
        let phi0 = curve.zero();
        let mut out = Self::default();
        for a in 0..grid.n {
            let psi = grid.center(a).exp();
            if psi >= phi0 {
                break;
            }
            let level = grid.level(curve.height(psi));
            if level != Level::Nothing {
                out.cells.push(a);
                out.levels.push(level);
            }
        }
        out
    }
}

/// `K` evaluated against one marginal pair on a common grid.
pub fn kernel_from_marginals<C: BelowLookup>(
    grid: &LogGrid,
    m1: &[f64],
    c2: &C,
    region: &RegionLevels,
    params: &ProblemParams,
) -> f64 {
    let ratio = params.lambda_over_c();
    let mut sum = 0.0;
    for (&a, &level) in region.cells.iter().zip(&region.levels) {
        let w = m1[a];
        if w.abs() < NEGLIGIBLE_MASS {
            continue;
        }
        let (cdf, pm) = c2.below(level);
        sum += w * ((params.p1 * grid.cell_psi[a] - ratio) * cdf + params.p2 * pm);
    }
    sum
}

const NEGLIGIBLE_MASS: f64 = 1e-20;

fn density_kernel(t: f64, start: Point2, curve: &dyn Curve, params: &ProblemParams, spec: &DensityGridSpec) -> Result<f64> {
    let max_start = start.phi1.max(start.phi2);
    let grid = LogGrid::for_horizon(params, spec, max_start, t)?;
    let m1 = grid.propagate(start.phi1, &[t])?.pop().expect("one output");
    let m2 = grid.propagate(start.phi2, &[t])?.pop().expect("one output");
    let c2 = Cumulative::new(&grid, &m2);
    Ok(kernel_from_marginals(&grid, &m1, &c2, &RegionLevels::new(&grid, curve), params))
}

/// `K(t; φ1, φ2)` for the continuation region below `b`.
#[allow(non_snake_case)]
pub fn kernel_K(
    t: f64,
    phi1: f64,
    phi2: f64,
    b: &dyn Curve,
    params: &ProblemParams,
    method: KernelMethod,
    budget: &KernelBudget,
) -> Result<KernelEval> {
    if !(t > 0.0) {
        return Err(Error::DomainError(format!("kernel needs t > 0, got {t}")));
    }
    let start = Point2::new(phi1, phi2)?;
    let eval = match method {
        KernelMethod::MonteCarlo => {
            let flows = sample_flows(&[t], params, budget.n_paths, budget.seed, budget.dt_max)?;
            let phi0 = b.zero();
            let xs = par_indexed(budget.n_paths, |i| {
                let (x1, x2) = flows.at(i, 0, start);
                if indicator(b, phi0, x1, x2) {
                    params.lagrangian(x1, x2)
                } else {
                    0.0
                }
            });
            let (value, std_error) = mean_and_se(&xs);
            KernelEval {
                value,
                std_error,
                method,
            }
        }
        KernelMethod::DensityQuadrature => {
            let fine = density_kernel(t, start, b, params, &budget.grid)?;
            let coarse = density_kernel(t, start, b, params, &budget.grid.coarsened())?;
            KernelEval {
                value: fine,
                std_error: (fine - coarse).abs(),
                method,
            }
        }
    };
    if let Some(target) = budget.target_se {
        if eval.std_error > target {
            return Err(Error::BudgetExhausted {
                std_error: eval.std_error,
                target,
            });
        }
    }
    Ok(eval)
}

impl DensityGridSpec {
    /// Half the cells and twice the time step; the coarse half of the
    /// coarse-versus-fine error estimate.
    pub fn coarsened(&self) -> Self {
        Self {
            dy: 2.0 * self.dy,
            max_step: 2.0 * self.max_step,
            ..*self
        }
    }
}

/// Gauss–Legendre panels on `[0, T]`, geometrically graded toward zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeQuadSpec {
    /// Truncation `T`; `None` means `max(5/λ, 5)`.
    pub t_max: Option<f64>,
    pub panels: usize,
    pub order: usize,
}

impl Default for TimeQuadSpec {
    fn default() -> Self {
        Self {
            t_max: None,
            panels: 13,
            order: 8,
        }
    }
}

/// Nodes, weights and discount factors of the time quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeQuadrature {
    pub t_max: f64,
    pub nodes: Vec<f64>,
    /// `w_j e^{−λ t_j}`.
    pub discounted_weights: Vec<f64>,
}

impl TimeQuadSpec {
    pub fn horizon(&self, lambda: f64) -> f64 {
        self.t_max.unwrap_or((5.0 / lambda).max(5.0))
    }

    pub fn build(&self, lambda: f64) -> Result<TimeQuadrature> {
        let t_max = self.horizon(lambda);
        if !(t_max > 0.0) || self.panels == 0 || self.order == 0 {
            return Err(Error::Config(format!("invalid time quadrature {self:?}")));
        }
        let mut breaks = vec![0.0];
        for k in (0..self.panels).rev() {
            breaks.push(t_max * 0.5f64.powi(k as i32));
        }
        let (nodes, w) = composite_gauss_legendre(&breaks, self.order);
        let discounted_weights = nodes.iter().zip(&w).map(|(t, w)| w * (-lambda * t).exp()).collect();
        Ok(TimeQuadrature {
            t_max,
            nodes,
            discounted_weights,
        })
    }
}

/// `∫₀^∞ e^{−λt} K(t) dt` with its truncation bound and sampling or
/// discretisation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountedIntegral {
    pub value: f64,
    pub std_error: f64,
    pub tail_bound: f64,
    pub method: KernelMethod,
}

/// Repeated discounted-kernel evaluations on a fixed time quadrature.
///
/// The density route keeps one log grid for all starts up to `max_start`, so
/// first-coordinate marginals can be cached across calls by the caller.
#[derive(Debug, Clone)]
pub struct DensityEngine {
    pub params: ProblemParams,
    pub grid: LogGrid,
    pub tq: TimeQuadrature,
}

/// Marginal cell masses at every time node.
#[derive(Debug, Clone)]
pub struct Marginal {
    pub start: f64,
    pub masses: Vec<Vec<f64>>,
}

impl DensityEngine {
    pub fn new(params: &ProblemParams, spec: &DensityGridSpec, tq_spec: &TimeQuadSpec, max_start: f64) -> Result<Self> {
        let tq = tq_spec.build(params.lambda)?;
        let grid = LogGrid::for_horizon(params, spec, max_start, tq.t_max)?;
        Ok(Self {
            params: *params,
            grid,
            tq,
        })
    }

    pub fn marginal(&self, start: f64) -> Result<Marginal> {
        Ok(Marginal {
            start,
            masses: self.grid.propagate(start, &self.tq.nodes)?,
        })
    }

    /// `Σ_j w_j e^{−λ t_j} K(t_j)` for given marginals and a resolved region.
    pub fn discounted_with_region(&self, m1: &Marginal, m2: &Marginal, region: &RegionLevels) -> f64 {
        let mut c2 = Cumulative::default();
        let mut sum = 0.0;
        for (j, w) in self.tq.discounted_weights.iter().enumerate() {
            c2.refill(&self.grid, &m2.masses[j]);
            sum += w * kernel_from_marginals(&self.grid, &m1.masses[j], &c2, region, &self.params);
        }
        sum
    }

    pub fn discounted(&self, m1: &Marginal, m2: &Marginal, curve: &dyn Curve) -> f64 {
        self.discounted_with_region(m1, m2, &RegionLevels::new(&self.grid, curve))
    }
}

/// Discounted integral from stored flows: per-path sums, then mean and error.
pub fn discounted_from_flows(flows: &FlowBundle, tq: &TimeQuadrature, start: Point2, curve: &dyn Curve, params: &ProblemParams) -> (f64, f64) {
    let phi0 = curve.zero();
    let m = flows.times.len();
    let per_path = par_indexed(flows.n_paths, |i| {
        let mut s = 0.0;
        for j in 0..m {
            let (x1, x2) = flows.at(i, j, start);
            if indicator(curve, phi0, x1, x2) {
                s += tq.discounted_weights[j] * params.lagrangian(x1, x2);
            }
        }
        s
    });
    mean_and_se(&per_path)
}

#[allow(non_snake_case)]
pub fn discounted_K_integral(
    phi1: f64,
    phi2: f64,
    b: &dyn Curve,
    params: &ProblemParams,
    t_quad_spec: &TimeQuadSpec,
    method: KernelMethod,
    budget: &KernelBudget,
) -> Result<DiscountedIntegral> {
    let start = Point2::new(phi1, phi2)?;
    let tq = t_quad_spec.build(params.lambda)?;
    let tail_bound = b.sup_abs_lagrangian(params) * (-params.lambda * tq.t_max).exp() / params.lambda;
    let (value, std_error) = match method {
        KernelMethod::MonteCarlo => {
            let flows = sample_flows(&tq.nodes, params, budget.n_paths, budget.seed, budget.dt_max)?;
            discounted_from_flows(&flows, &tq, start, b, params)
        }
        KernelMethod::DensityQuadrature => {
            let run = |spec: &DensityGridSpec| -> Result<f64> {
                let engine = DensityEngine::new(params, spec, t_quad_spec, phi1.max(phi2))?;
                let m1 = engine.marginal(phi1)?;
                let m2 = engine.marginal(phi2)?;
                Ok(engine.discounted(&m1, &m2, b))
            };
            let fine = run(&budget.grid)?;
            let coarse = run(&budget.grid.coarsened())?;
            (fine, (fine - coarse).abs())
        }
    };
    if let Some(target) = budget.target_se {
        if std_error > target {
            return Err(Error::BudgetExhausted { std_error, target });
        }
    }
    Ok(DiscountedIntegral {
        value,
        std_error,
        tail_bound,
        method,
    })
}
