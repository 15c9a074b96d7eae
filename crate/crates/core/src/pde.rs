//! The free-boundary problem as a discrete obstacle problem.
//!
//! With `u = −V̂ ≥ 0` and `A = λ − L_Φ` the value solves the linear
//! complementarity problem
//!
//! ```text
//! u ≥ 0,   A u + L ≥ 0,   u · (A u + L) = 0.
//! ```
//!
//! `L_Φ` is discretised on a tensor grid that is log-spaced in each
//! coordinate plus a node on the axis. Drift terms use forward differences,
//! the upwind side for the positive drift `λ(1+φᵢ)`, so `A` is an M-matrix.
//! On an axis the diffusion vanishes and only the drift remains. The far
//! edges carry `u = 0`; they lie inside the trigon that is known to stop.
//! Projected SOR sweeps against the drift, from the far corner to the origin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fredholm::{boundary_bounds, Boundary2D, BoundaryBounds};
use crate::kernel::Curve;
use crate::params::ProblemParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VIGridSpec {
    /// Nodes per coordinate, the axis node included.
    pub n1: usize,
    pub n2: usize,
    /// First node off the axis.
    pub phi_min: f64,
    /// Truncation of coordinate `i` at `trunc_factor · φi*`.
    pub trunc_factor: f64,
}

impl Default for VIGridSpec {
    fn default() -> Self {
        Self {
            n1: 200,
            n2: 200,
            phi_min: 1e-3,
            trunc_factor: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsorSettings {
    pub omega: f64,
    /// Largest change of a sweep at which to stop.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PsorSettings {
    fn default() -> Self {
        Self {
            omega: 1.0,
            tol: 1e-11,
            max_sweeps: 50_000,
        }
    }
}

/// `0` followed by `n − 1` log-spaced nodes from `lo` to `hi`.
pub fn axis_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let m = n - 1;
    let step = (hi / lo).ln() / (m - 1) as f64;
    std::iter::once(0.0)
        .chain((0..m).map(|k| if k == m - 1 { hi } else { lo * (k as f64 * step).exp() }))
        .collect()
}

/// Row-major `(i, j)` storage: index `i * n2 + j`, `i` along `φ1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VIGrid {
    pub phi1_grid: Vec<f64>,
    pub phi2_grid: Vec<f64>,
    /// `V̂` at the nodes.
    pub values: Vec<f64>,
    pub active_mask: Vec<bool>,
    pub params: ProblemParams,
    pub sweeps: usize,
    pub last_change: f64,
}

/// Five-point stencil of `A` at one node: `diag u₀ − Σ w u_nbr`.
#[derive(Debug, Clone, Copy, Default)]
struct Stencil {
    diag: f64,
    e1: f64,
    w1: f64,
    e2: f64,
    w2: f64,
}

/// `−(λ(1+φ)D⁺ + (μ²/2)φ² D²)` coefficients in one coordinate: returns
/// `(diagonal, forward, backward)` contributions.
fn axis_coefficients(x: &[f64], i: usize, lambda: f64, mu: f64) -> (f64, f64, f64) {
    let phi = x[i];
    let hp = x[i + 1] - phi;
    let drift = lambda * (1.0 + phi) / hp;
    if i == 0 || phi == 0.0 {
        return (drift, drift, 0.0);
    }
    let hm = phi - x[i - 1];
    let d = 0.5 * mu * mu * phi * phi * 2.0 / (hp + hm);
    let fwd = d / hp + drift;
    let bwd = d / hm;
    (fwd + bwd, fwd, bwd)
}

impl VIGrid {
    pub fn n1(&self) -> usize {
        self.phi1_grid.len()
    }

    pub fn n2(&self) -> usize {
        self.phi2_grid.len()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n2() + j
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.idx(i, j)]
    }

    pub fn active(&self, i: usize, j: usize) -> bool {
        self.active_mask[self.idx(i, j)]
    }

    fn stencil(&self, i: usize, j: usize) -> Stencil {
        let p = &self.params;
        let (d1, e1, w1) = axis_coefficients(&self.phi1_grid, i, p.lambda, p.mu);
        let (d2, e2, w2) = axis_coefficients(&self.phi2_grid, j, p.lambda, p.mu);
        Stencil {
            diag: p.lambda + d1 + d2,
            e1,
            w1,
            e2,
            w2,
        }
    }

    /// `(A u + L)` at an interior node, with `u = −V̂`.
    pub fn residual(&self, i: usize, j: usize) -> f64 {
        let s = self.stencil(i, j);
        let u = |a: usize, b: usize| -self.value(a, b);
        let mut r = s.diag * u(i, j) - s.e1 * u(i + 1, j) - s.e2 * u(i, j + 1);
        if i > 0 {
            r -= s.w1 * u(i - 1, j);
        }
        if j > 0 {
            r -= s.w2 * u(i, j - 1);
        }
        r + self.params.lagrangian(self.phi1_grid[i], self.phi2_grid[j])
    }

    /// Largest violation of complementarity over interior nodes: each node
    /// needs `A u + L ≥ −tol`, `u ≥ −tol`, and one of them near zero.
    pub fn complementarity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n1() - 1 {
            for j in 0..self.n2() - 1 {
                let r = self.residual(i, j);
                let u = -self.value(i, j);
                let d = (-r).max(-u).max(r.abs().min(u.abs()));
                worst = worst.max(d);
            }
        }
        worst
    }

    /// True when `(i, j)` active implies `(i+1, j)` and `(i, j+1)` active.
    pub fn is_up_closed(&self) -> bool {
        for i in 0..self.n1() {
            for j in 0..self.n2() {
                if self.active(i, j)
                    && ((i + 1 < self.n1() && !self.active(i + 1, j)) || (j + 1 < self.n2() && !self.active(i, j + 1)))
                {
                    return false;
                }
            }
        }
        true
    }

    /// Nodes contradicting the known regions: active where `L < 0`, or
    /// inactive on or above the line through `(φ1*, 0)` and `(0, φ2*)`.
    pub fn mask_violations(&self, bounds: &BoundaryBounds) -> usize {
        let mut bad = 0;
        for i in 0..self.n1() {
            for j in 0..self.n2() {
                let (x, y) = (self.phi1_grid[i], self.phi2_grid[j]);
                let active = self.active(i, j);
                if (active && self.params.lagrangian(x, y) < 0.0)
                    || (!active && x / bounds.phi1_star + y / bounds.phi2_star >= 1.0)
                {
                    bad += 1;
                }
            }
        }
        bad
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# schema: coorddrift.vigrid.v1\nphi1,phi2,value,active\n");
        for i in 0..self.n1() {
            for j in 0..self.n2() {
                out.push_str(&format!(
                    "{:.12e},{:.12e},{:.12e},{}\n",
                    self.phi1_grid[i],
                    self.phi2_grid[j],
                    self.value(i, j),
                    self.active(i, j) as u8
                ));
            }
        }
        out
    }
}

/// Solves the obstacle problem by projected SOR.
pub fn solve_vi(params: &ProblemParams, spec: &VIGridSpec, psor: &PsorSettings) -> Result<VIGrid> {
    if spec.n1 < 4 || spec.n2 < 4 || !(spec.phi_min > 0.0) {
        return Err(Error::Config(format!("invalid VI grid {spec:?}")));
    }
    if !(psor.omega > 0.0 && psor.omega < 2.0) {
        return Err(Error::Config(format!("PSOR needs omega in (0,2), got {}", psor.omega)));
    }
    if spec.trunc_factor < 1.5 {
        return Err(Error::Config(format!("truncation factor {} below 1.5", spec.trunc_factor)));
    }
    let bounds = boundary_bounds(params)?;
    let t1 = spec.trunc_factor * bounds.phi1_star;
    let t2 = spec.trunc_factor * bounds.phi2_star;
    if !(spec.phi_min < 0.1 * t1.min(t2)) {
        return Err(Error::Config(format!("phi_min {} too close to the truncation", spec.phi_min)));
    }
    let mut grid = VIGrid {
        phi1_grid: axis_grid(spec.n1, spec.phi_min, t1),
        phi2_grid: axis_grid(spec.n2, spec.phi_min, t2),
        values: vec![0.0; spec.n1 * spec.n2],
        active_mask: vec![true; spec.n1 * spec.n2],
        params: *params,
        sweeps: 0,
        last_change: f64::INFINITY,
    };
    let (n1, n2) = (spec.n1, spec.n2);
    // stencils and running costs are fixed; u lives in a separate buffer
    let mut stencils = Vec::with_capacity(n1 * n2);
    let mut cost = Vec::with_capacity(n1 * n2);
    for i in 0..n1 {
        for j in 0..n2 {
            stencils.push(if i + 1 < n1 && j + 1 < n2 {
                grid.stencil(i, j)
            } else {
                Stencil::default()
            });
            cost.push(params.lagrangian(grid.phi1_grid[i], grid.phi2_grid[j]));
        }
    }
    let mut u = vec![0.0; n1 * n2];
    let omega = psor.omega;
    let mut converged = false;
    while grid.sweeps < psor.max_sweeps {
        grid.sweeps += 1;
        let mut change: f64 = 0.0;
        for i in (0..n1 - 1).rev() {
            for j in (0..n2 - 1).rev() {
                let k = i * n2 + j;
                let s = stencils[k];
                let mut rhs = -cost[k] + s.e1 * u[k + n2] + s.e2 * u[k + 1];
                if i > 0 {
                    rhs += s.w1 * u[k - n2];
                }
                if j > 0 {
                    rhs += s.w2 * u[k - 1];
                }
                let gs = rhs / s.diag;
                let new = (u[k] + omega * (gs - u[k])).max(0.0);
                change = change.max((new - u[k]).abs());
                u[k] = new;
            }
        }
        grid.last_change = change;
        if change < psor.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: grid.sweeps,
            last_update: grid.last_change,
        });
    }
    for k in 0..n1 * n2 {
        grid.values[k] = -u[k];
        grid.active_mask[k] = u[k] == 0.0;
    }
    // the continuation region must not reach the truncation edges
    for i in 0..n1 - 1 {
        if !grid.active(i, n2 - 2) {
            return Err(Error::GridTooCoarse(format!(
                "continuation region reaches the phi2 truncation at phi1 = {}",
                grid.phi1_grid[i]
            )));
        }
    }
    for j in 0..n2 - 1 {
        if !grid.active(n1 - 2, j) {
            return Err(Error::GridTooCoarse(format!(
                "continuation region reaches the phi1 truncation at phi2 = {}",
                grid.phi2_grid[j]
            )));
        }
    }
    Ok(grid)
}

/// Zero of `√(−V̂)` extrapolated linearly from the last two inactive nodes
/// `a < b` before the first active node `c`, clamped to `[x_b, x_c]`.
fn sqrt_crossing(xa: f64, va: f64, xb: f64, vb: f64, xc: f64) -> f64 {
    let (sa, sb) = ((-va).max(0.0).sqrt(), (-vb).max(0.0).sqrt());
    if sa <= sb {
        return xb;
    }
    (xb + sb * (xb - xa) / (sa - sb)).clamp(xb, xc)
}

/// First active index of a line of nodes and the crossing before it.
fn line_crossing(x: &[f64], v: impl Fn(usize) -> f64, active: impl Fn(usize) -> bool) -> f64 {
    let n = x.len();
    let Some(c) = (0..n).find(|k| active(*k)) else {
        return x[n - 1];
    };
    match c {
        0 => 0.0,
        1 => x[0] + (x[1] - x[0]) * 0.5,
        _ => sqrt_crossing(x[c - 2], v(c - 2), x[c - 1], v(c - 1), x[c]),
    }
}

/// Boundary from a converged grid: per `φ1` column the crossing into the
/// active set, and `φ0` from the row on the `φ1` axis.
pub fn extract_boundary(grid: &VIGrid) -> Result<Boundary2D> {
    let n1 = grid.n1();
    let cols = n1 - 1;
    let x: Vec<f64> = grid.phi1_grid[..cols].to_vec();
    let mut b = Vec::with_capacity(cols);
    for i in 0..cols {
        b.push(line_crossing(&grid.phi2_grid, |j| grid.value(i, j), |j| grid.active(i, j)));
    }
    for i in 1..cols {
        if b[i] > b[i - 1] {
            let j = grid.phi2_grid.partition_point(|y| *y < b[i]).min(grid.n2() - 1);
            let cell = grid.phi2_grid[j] - grid.phi2_grid[j.saturating_sub(1)];
            if b[i] - b[i - 1] > cell {
                return Err(Error::NonMonotoneExtraction { phi1: x[i] });
            }
            b[i] = b[i - 1];
        }
    }
    let phi0_row = line_crossing(&grid.phi1_grid, |i| grid.value(i, 0), |i| grid.active(i, 0));
    let mut boundary = Boundary2D::from_signed(x, &b, &grid.params);
    let last_positive = boundary
        .phi1_grid
        .iter()
        .zip(&boundary.b_values)
        .filter(|(_, y)| **y > 0.0)
        .map(|(x, _)| *x)
        .fold(0.0, f64::max);
    if phi0_row > last_positive && phi0_row <= boundary.phi_zero {
        boundary.phi_zero = phi0_row;
    }
    boundary.iteration_count = grid.sweeps;
    boundary.sup_update = grid.last_change;
    Ok(boundary)
}

/// One-sided difference quotients of `V̂` across the extracted boundary,
/// from the last inactive node to the first active one in each column and
/// each row; the larger magnitude per column.
pub fn smooth_fit_check(grid: &VIGrid, boundary: &Boundary2D) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..grid.n1() - 1 {
        if grid.phi1_grid[i] >= boundary.phi_zero {
            break;
        }
        let Some(c) = (0..grid.n2()).find(|j| grid.active(i, *j)) else {
            continue;
        };
        if c == 0 {
            continue;
        }
        let d2 = (grid.value(i, c) - grid.value(i, c - 1)) / (grid.phi2_grid[c] - grid.phi2_grid[c - 1]);
        let d1 = match (0..grid.n1()).find(|a| grid.active(*a, c - 1)) {
            Some(a) if a > 0 => {
                (grid.value(a, c - 1) - grid.value(a - 1, c - 1)) / (grid.phi1_grid[a] - grid.phi1_grid[a - 1])
            }
            _ => 0.0,
        };
        out.push(d1.abs().max(d2.abs()));
    }
    out
}

/// Central-difference gradient magnitude of `V̂` at an interior node.
pub fn gradient_norm(grid: &VIGrid, i: usize, j: usize) -> f64 {
    let d1 = (grid.value(i + 1, j) - grid.value(i - 1, j)) / (grid.phi1_grid[i + 1] - grid.phi1_grid[i - 1]);
    let d2 = (grid.value(i, j + 1) - grid.value(i, j - 1)) / (grid.phi2_grid[j + 1] - grid.phi2_grid[j - 1]);
    d1.hypot(d2)
}

fn cell_at(axis: &[f64], y: f64) -> f64 {
    let j = axis.partition_point(|v| *v < y).clamp(1, axis.len() - 1);
    let here = axis[j] - axis[j - 1];
    let next = axis.get(j + 1).map_or(here, |v| v - axis[j]);
    here.max(next)
}

/// Largest `φ2` spacing of the grid around height `y`.
pub fn phi2_cell_at(grid: &VIGrid, y: f64) -> f64 {
    cell_at(&grid.phi2_grid, y)
}

pub fn phi1_cell_at(grid: &VIGrid, x: f64) -> f64 {
    cell_at(&grid.phi1_grid, x)
}

/// Sup-norm agreement of a PDE boundary `pde` with a reference at the
/// reference nodes. Two cells are measured along the curve: two `φ2` cells
/// plus the rise of the reference over two `φ1` cells. Returns the largest
/// ratio of the gap to `max(2 cells, 3 × reference error)`; agreement means
/// a value `≤ 1`.
pub fn agreement_ratio(grid: &VIGrid, pde: &Boundary2D, reference: &Boundary2D) -> f64 {
    let xs = &reference.phi1_grid;
    let ys = &reference.b_values;
    let n = xs.len();
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
        let slope = ((ys[b] - ys[a]) / (xs[b] - xs[a])).abs();
        let cells = 2.0 * (phi2_cell_at(grid, ys[k]) + slope * phi1_cell_at(grid, xs[k]));
        let allowed = cells.max(3.0 * reference.node_errors[k]);
        worst = worst.max((pde.height(xs[k]) - ys[k]).abs() / allowed);
    }
    worst
}
