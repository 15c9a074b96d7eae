//! Picard iteration for the boundary equation.
//!
//! Freezing `bᵏ` inside `K` and solving `W(φ1, φ2; bᵏ) = 0` in `φ2` alone is
//! degenerate: at the fixed point `W(φ1, ·; b)` is `V̂(φ1, ·)`, which touches
//! zero tangentially at `b(φ1)` and stays zero above it. Each node therefore
//! moves the start and the whole frozen curve together,
//!
//! ```text
//! G_j(s) = W(x_j, bᵏ(x_j) + s; bᵏ + s),    bᵏ⁺¹(x_j) = bᵏ(x_j) + s_j,  G_j(s_j) = 0,
//! ```
//!
//! which has the same fixed points and a transversal root. The curve carries
//! signed heights past its zero `φ0` (linear extension) so that shifting it
//! up or down moves `φ0` continuously.
//!
//! With the density method the first-coordinate marginals are computed once
//! per node. Second-coordinate marginals come from a table of starts uniform
//! in `log(1+φ2)`, filled on demand and interpolated with four-point
//! Lagrange weights; `W` is linear in the second marginal, so this is the
//! same as interpolating `W` in the start.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::density::Level;
use crate::kernel::{
    discounted_K_integral, kernel_from_marginals, sample_flows, DensityEngine, DensityGridSpec, FlowBundle,
    Curve, KernelBudget, KernelMethod, Marginal, PackedCumulative, RegionLevels, TimeQuadSpec, TimeQuadrature,
};
use crate::params::ProblemParams;
use crate::rng::par_indexed;

use super::{boundary_bounds, Boundary2D, BoundaryBounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGridSpec {
    pub nodes: usize,
}

impl Default for BoundaryGridSpec {
    fn default() -> Self {
        Self { nodes: 64 }
    }
}

/// `n` nodes on `[0, end]`, clustered toward both ends.
pub fn cosine_grid(n: usize, end: f64) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| match i {
            0 => 0.0,
            _ if i == n - 1 => end,
            _ => 0.5 * end * (1.0 - (std::f64::consts::PI * i as f64 / last).cos()),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardSettings {
    pub grid: BoundaryGridSpec,
    pub method: KernelMethod,
    pub budget: KernelBudget,
    pub time_quad: TimeQuadSpec,
    /// Stop when no node moves by more than this.
    pub tol_sup: f64,
    pub max_iter: usize,
    /// Allowed dip of `b` below the chord of its neighbours.
    pub tol_convex: f64,
    /// Spacing of the start table in `log(1+φ2)`.
    pub start_step: f64,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self {
            grid: BoundaryGridSpec::default(),
            method: KernelMethod::DensityQuadrature,
            budget: KernelBudget {
                n_paths: 4000,
                grid: DensityGridSpec::default(),
                ..KernelBudget::default()
            },
            time_quad: TimeQuadSpec::default(),
            tol_sup: 1e-3,
            max_iter: 50,
            tol_convex: 5e-3,
            start_step: 0.01,
        }
    }
}

/// Piecewise-linear curve through signed node heights, extended linearly on
/// the right.
#[derive(Debug, Clone)]
struct SignedCurve {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl SignedCurve {
    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = self.x.partition_point(|x| *x <= t).clamp(1, n - 1);
        let (x0, x1, y0, y1) = (self.x[i - 1], self.x[i], self.y[i - 1], self.y[i]);
        y0 + (y1 - y0) * (t - x0) / (x1 - x0)
    }
}

/// Density-method evaluator of `G_j`.
struct DensityTable {
    engine: DensityEngine,
    nodes: Vec<Marginal>,
    du: f64,
    starts: Vec<OnceLock<Vec<PackedCumulative>>>,
}

impl DensityTable {
    fn new(params: &ProblemParams, settings: &PicardSettings, grid: &[f64], top: f64) -> Result<Self> {
        let engine = DensityEngine::new(params, &settings.budget.grid, &settings.time_quad, top)?;
        let nodes = par_indexed(grid.len(), |j| engine.marginal(grid[j]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let du = settings.start_step;
        let count = (top.ln_1p() / du).ceil() as usize + 4;
        Ok(Self {
            engine,
            nodes,
            du,
            starts: (0..count).map(|_| OnceLock::new()).collect(),
        })
    }

    fn column(&self, k: usize) -> Result<&[PackedCumulative]> {
        if let Some(c) = self.starts[k].get() {
            return Ok(c);
        }
        let start = (k as f64 * self.du).exp_m1();
        let m = self.engine.marginal(start)?;
        let packed = m.masses.iter().map(|ms| PackedCumulative::new(&self.engine.grid, ms)).collect();
        Ok(self.starts[k].get_or_init(|| packed))
    }

    /// Curve heights at the first-coordinate cell centres.
    fn base(&self, curve: &SignedCurve) -> Vec<f64> {
        (0..self.engine.grid.n).map(|a| curve.eval(self.engine.grid.center(a).exp())).collect()
    }

    fn region(&self, base: &[f64], s: f64) -> RegionLevels {
        let mut r = RegionLevels::default();
        for (a, h) in base.iter().enumerate() {
            let level = self.engine.grid.level(h + s);
            if level == Level::Nothing {
                if h + s <= 0.0 {
                    break;
                }
                continue;
            }
            r.cells.push(a);
            r.levels.push(level);
        }
        r
    }

    fn eval(&self, node: usize, start: f64, region: &RegionLevels) -> Result<f64> {
        let u = start.max(0.0).ln_1p() / self.du;
        let first = (u.floor() as usize).saturating_sub(1).min(self.starts.len() - 4);
        let r = u - first as f64;
        let mut total = 0.0;
        for (i, wi) in lagrange4(r).into_iter().enumerate() {
            let col = self.column(first + i)?;
            let m1 = &self.nodes[node];
            let mut sum = 0.0;
            for (j, w) in self.engine.tq.discounted_weights.iter().enumerate() {
                sum += w * kernel_from_marginals(&self.engine.grid, &m1.masses[j], &col[j], region, &self.engine.params);
            }
            total += wi * sum;
        }
        Ok(total)
    }
}

/// Weights of the cubic through nodes `0, 1, 2, 3` at position `r`.
fn lagrange4(r: f64) -> [f64; 4] {
    let (a, b, c, d) = (r, r - 1.0, r - 2.0, r - 3.0);
    [-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0]
}

/// Monte Carlo evaluator of `G_j` on one fixed set of flows.
struct FlowTable {
    flows: FlowBundle,
    tq: TimeQuadrature,
}

/// Per-node data of the flow evaluator: for every path and time node the
/// first coordinate's share of `L` and the frozen curve height at it.
struct FlowNode {
    l1: Vec<f64>,
    base: Vec<f64>,
}

impl FlowTable {
    fn node(&self, x: f64, curve: &SignedCurve, params: &ProblemParams) -> FlowNode {
        let ratio = params.lambda_over_c();
        let (l1, base) = self
            .flows
            .y1
            .iter()
            .zip(&self.flows.a1)
            .map(|(y, a)| {
                let x1 = x * y + a;
                (params.p1 * x1 - ratio, curve.eval(x1))
            })
            .unzip();
        FlowNode { l1, base }
    }

    fn eval(&self, node: &FlowNode, start: f64, s: f64, p2: f64) -> (f64, f64) {
        let m = self.flows.times.len();
        let n = self.flows.n_paths;
        let (mut sum, mut sq) = (0.0, 0.0);
        for p in 0..n {
            let mut v = 0.0;
            for j in 0..m {
                let k = p * m + j;
                let x2 = start * self.flows.y2[k] + self.flows.a2[k];
                if x2 < node.base[k] + s {
                    v += self.tq.discounted_weights[j] * (node.l1[k] + p2 * x2);
                }
            }
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = ((sq / n as f64 - mean * mean) * n as f64 / (n - 1).max(1) as f64).max(0.0);
        (mean, (var / n as f64).sqrt())
    }
}

enum Evaluator {
    Density(DensityTable),
    Flows(FlowTable),
}

#[derive(Debug, Clone, Copy)]
struct NodeOutcome {
    /// New signed height, `None` when the node lies beyond the zero.
    value: Option<f64>,
    flagged: bool,
}

/// Bracketed root of an increasing-ish function by the Illinois rule.
fn illinois(mut f: impl FnMut(f64) -> Result<f64>, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, tol: f64) -> Result<f64> {
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() < tol {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let fc = f(c)?;
        if fc == 0.0 {
            return Ok(c);
        }
        if (fc > 0.0) == (fb > 0.0) {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

struct Sweep<'a> {
    params: &'a ProblemParams,
    bounds: &'a BoundaryBounds,
    grid: &'a [f64],
    curve: SignedCurve,
    root_tol: f64,
}

impl Sweep<'_> {
    fn solve_node(&self, j: usize, g: impl Fn(f64) -> Result<f64>) -> Result<NodeOutcome> {
        let h = self.curve.y[j];
        let x = self.grid[j];
        if h <= 0.0 {
            return Ok(NodeOutcome { value: None, flagged: false });
        }
        let floor = self.bounds.lower.height(x);
        let lo = floor - h;
        let hi = self.bounds.upper.height(x) - h;
        if !(hi > lo) {
            return Ok(NodeOutcome {
                value: Some(h + lo),
                flagged: false,
            });
        }
        let (g_lo, g_hi) = (g(lo)?, g(hi)?);
        if !(g_lo.is_finite() && g_hi.is_finite()) {
            return Err(Error::RootBracketFailure {
                phi1: x,
                detail: format!("non-finite kernel integral: {g_lo} at {lo}, {g_hi} at {hi}"),
            });
        }
        if g_lo > 0.0 && g_hi > 0.0 {
            if floor == 0.0 {
                // positive even with the start on the axis: past the zero
                return Ok(NodeOutcome { value: None, flagged: false });
            }
            return Ok(NodeOutcome {
                value: Some(h + lo),
                flagged: true,
            });
        }
        if g_lo < 0.0 && g_hi < 0.0 {
            return Ok(NodeOutcome {
                value: Some(h + hi),
                flagged: true,
            });
        }
        let s = illinois(&g, lo, hi, g_lo, g_hi, self.root_tol)?;
        Ok(NodeOutcome {
            value: Some(h + s),
            flagged: false,
        })
    }
}

/// Pool-adjacent-violators projection onto nonincreasing sequences.
pub fn project_nonincreasing(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m1, n1) = blocks[blocks.len() - 1];
            let (m0, n0) = blocks[blocks.len() - 2];
            if m0 >= m1 {
                break;
            }
            blocks.pop();
            let n = n0 + n1;
            *blocks.last_mut().expect("two blocks") = ((m0 * n0 as f64 + m1 * n1 as f64) / n as f64, n);
        }
    }
    blocks.into_iter().flat_map(|(m, n)| std::iter::repeat_n(m, n)).collect()
}

/// Fills nodes without a root by extending the last two solved nodes to
/// their left; nodes with no solved neighbour keep their old value.
fn extend_unsolved(grid: &[f64], old: &[f64], outcome: &[NodeOutcome]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut solved: Vec<usize> = Vec::new();
    for (i, o) in outcome.iter().enumerate() {
        match o.value {
            Some(v) => {
                out.push(v);
                solved.push(i);
            }
            None => {
                let v = match solved.as_slice() {
                    [.., a, b] => out[*b] + (out[*b] - out[*a]) * (grid[i] - grid[*b]) / (grid[*b] - grid[*a]),
                    _ => old[i],
                };
                out.push(v);
            }
        }
    }
    out
}

/// Solves the boundary equation by Picard iteration from the upper line.
pub fn picard_solve(params: &ProblemParams, settings: &PicardSettings) -> Result<Boundary2D> {
    if !(params.p1 > 0.0 && params.p1 < 1.0) {
        return Err(Error::DomainError(format!("picard_solve needs p1 in (0,1), got {}", params.p1)));
    }
    if settings.grid.nodes < 4 || !(settings.tol_sup > 0.0) || settings.max_iter == 0 {
        return Err(Error::Config(format!("invalid Picard settings {settings:?}")));
    }
    let bounds = boundary_bounds(params)?;
    let grid = cosine_grid(settings.grid.nodes, bounds.phi1_star);
    let top = 1.05 * bounds.phi1_star.max(bounds.phi2_star);
    let evaluator = match settings.method {
        KernelMethod::DensityQuadrature => Evaluator::Density(DensityTable::new(params, settings, &grid, top)?),
        KernelMethod::MonteCarlo => {
            let tq = settings.time_quad.build(params.lambda)?;
            let b = &settings.budget;
            Evaluator::Flows(FlowTable {
                flows: sample_flows(&tq.nodes, params, b.n_paths, b.seed, b.dt_max)?,
                tq,
            })
        }
    };
    let clip = |i: usize, v: f64| v.clamp(bounds.lower_signed(grid[i]), bounds.upper_signed(grid[i]));
    let mut signed: Vec<f64> = grid.iter().map(|x| bounds.upper_signed(*x)).collect();
    let mut previous = signed.clone();
    let mut flagged = Vec::new();
    let mut sup = f64::INFINITY;
    let mut iteration = 0;
    let root_tol = 1e-3 * settings.tol_sup;
    while iteration < settings.max_iter {
        iteration += 1;
        let sweep = Sweep {
            params,
            bounds: &bounds,
            grid: &grid,
            curve: SignedCurve {
                x: grid.clone(),
                y: signed.clone(),
            },
            root_tol,
        };
        let outcomes: Vec<NodeOutcome> = match &evaluator {
            Evaluator::Density(table) => {
                let base = table.base(&sweep.curve);
                par_indexed(grid.len(), |j| {
                    let h = sweep.curve.y[j];
                    sweep.solve_node(j, |s| table.eval(j, h + s, &table.region(&base, s)))
                })
            }
            Evaluator::Flows(table) => par_indexed(grid.len(), |j| {
                let node = table.node(grid[j], &sweep.curve, sweep.params);
                let h = sweep.curve.y[j];
                sweep.solve_node(j, |s| Ok(table.eval(&node, h + s, s, params.p2).0))
            }),
        }
        .into_iter()
        .collect::<Result<_>>()?;
        let extended = extend_unsolved(&grid, &signed, &outcomes);
        let next: Vec<f64> = project_nonincreasing(&extended)
            .into_iter()
            .enumerate()
            .map(|(i, v)| clip(i, v))
            .collect();
        sup = next
            .iter()
            .zip(&signed)
            .map(|(a, b)| (a.max(0.0) - b.max(0.0)).abs())
            .fold(0.0, f64::max);
        flagged = outcomes.iter().enumerate().filter(|(_, o)| o.flagged).map(|(i, _)| i).collect();
        previous = std::mem::replace(&mut signed, next);
        if sup < settings.tol_sup {
            break;
        }
    }
    if sup >= settings.tol_sup {
        return Err(Error::PicardNoConvergence {
            iterations: iteration,
            last_update: sup,
            previous: previous.iter().map(|v| v.max(0.0)).collect(),
            last: signed.iter().map(|v| v.max(0.0)).collect(),
        });
    }
    let mut boundary = Boundary2D::from_signed(grid, &signed, params);
    boundary.iteration_count = iteration;
    boundary.sup_update = sup;
    boundary.flagged = flagged;
    boundary.node_errors = node_errors(&boundary, &signed, params, settings, &evaluator)?;
    boundary.check_invariants(&bounds, 1e-9, settings.tol_convex)?;
    Ok(boundary)
}

/// Kernel error divided by the slope of `G_j` at the root, plus the last
/// Picard update.
fn node_errors(
    b: &Boundary2D,
    signed: &[f64],
    params: &ProblemParams,
    settings: &PicardSettings,
    evaluator: &Evaluator,
) -> Result<Vec<f64>> {
    let curve = SignedCurve {
        x: b.phi1_grid.clone(),
        y: signed.to_vec(),
    };
    let delta: f64 = 0.02;
    let kernel_error = match evaluator {
        Evaluator::Density(_) => {
            // discretisation error from fine against coarse grids at a few nodes
            let n = b.len();
            let probes = [0, n / 3, 2 * n / 3];
            let mut e: f64 = 0.0;
            for &i in &probes {
                let x = b.phi1_grid[i];
                if x >= b.phi_zero {
                    continue;
                }
                let d = discounted_K_integral(
                    x,
                    b.b_values[i],
                    b,
                    params,
                    &settings.time_quad,
                    KernelMethod::DensityQuadrature,
                    &settings.budget,
                )?;
                e = e.max(d.std_error);
            }
            vec![e; b.len()]
        }
        Evaluator::Flows(table) => par_indexed(b.len(), |j| {
            if signed[j] <= 0.0 {
                return 0.0;
            }
            let node = table.node(b.phi1_grid[j], &curve, params);
            table.eval(&node, signed[j], 0.0, params.p2).1
        }),
    };
    let slopes = par_indexed(b.len(), |j| -> Result<f64> {
        if signed[j] <= 0.0 {
            return Ok(f64::INFINITY);
        }
        let h = signed[j];
        let g = |s: f64| -> Result<f64> {
            match evaluator {
                Evaluator::Density(table) => table.eval(j, h + s, &table.region(&table.base(&curve), s)),
                Evaluator::Flows(table) => {
                    let node = table.node(b.phi1_grid[j], &curve, params);
                    Ok(table.eval(&node, h + s, s, params.p2).0)
                }
            }
        };
        let lo = (-delta).max(-h);
        Ok((g(delta)? - g(lo)?) / (delta - lo))
    });
    let mut out = Vec::with_capacity(b.len());
    for (j, slope) in slopes.into_iter().enumerate() {
        let slope = slope?;
        let e = if slope > 0.0 { kernel_error[j] / slope } else { 0.0 };
        out.push(e + b.sup_update);
    }
    Ok(out)
}
