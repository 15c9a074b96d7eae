//! Transition law of one coordinate of `Φ` by finite differences.
//!
//! In `y = log ψ` the coordinate is a diffusion with drift
//! `a(y) = λ(1 + e^{−y}) − μ²/2` and constant diffusivity `D = μ²/2`. The
//! forward equation is discretised on uniform cells with Scharfetter–Gummel
//! fluxes (exact for the locally frozen drift, monotone at any Péclet number)
//! and zero flux through both ends, so cell masses sum to one exactly. Time
//! stepping is variable-step BDF2 after one backward Euler step, landing on
//! every requested output time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ProblemParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityGridSpec {
    /// Cell width in `log ψ`.
    pub dy: f64,
    /// Lower truncation of `ψ`.
    pub psi_min: f64,
    /// Starting points below this are moved up to it.
    pub start_floor: f64,
    /// Longest time step.
    pub max_step: f64,
}

impl Default for DensityGridSpec {
    fn default() -> Self {
        Self {
            dy: 0.01,
            psi_min: 1e-6,
            start_floor: 1e-5,
            max_step: 0.02,
        }
    }
}

impl DensityGridSpec {
    pub fn coarse() -> Self {
        Self {
            dy: 0.02,
            max_step: 0.04,
            ..Self::default()
        }
    }

    /// Twice the cells and half the time step.
    pub fn refined(&self) -> Self {
        Self {
            dy: 0.5 * self.dy,
            max_step: 0.5 * self.max_step,
            ..*self
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.dy > 0.0 && self.psi_min > 0.0 && self.start_floor >= self.psi_min && self.max_step > 0.0) {
            return Err(Error::Config(format!("invalid density grid {self:?}")));
        }
        Ok(())
    }
}

const FIRST_STEP: f64 = 1e-4;
// while the point mass spreads, steps stay below this fraction of the elapsed time
const RELATIVE_STEP: f64 = 0.1;

/// Upper truncation `max(20, 10(1+φ)e^{λt})`.
pub fn psi_cap(start: f64, lambda: f64, t: f64) -> f64 {
    (10.0 * (1.0 + start) * (lambda * t).exp()).max(20.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid1D {
    pub t: f64,
    /// Cell centres in `ψ`.
    pub psi_grid: Vec<f64>,
    /// Density with respect to `dψ` at the cell centres.
    pub density: Vec<f64>,
    pub mass: f64,
}

impl DensityGrid1D {
    /// Mean of `ψ` under the density (trapezoid rule).
    pub fn mean(&self) -> f64 {
        trapezoid(&self.psi_grid, |i| self.psi_grid[i] * self.density[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# schema: coorddrift.density.v1\npsi,density\n");
        for (x, p) in self.psi_grid.iter().zip(&self.density) {
            out.push_str(&format!("{x:.12e},{p:.12e}\n"));
        }
        out
    }
}

fn trapezoid(x: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    (1..x.len()).map(|i| 0.5 * (x[i] - x[i - 1]) * (f(i) + f(i - 1))).sum()
}

/// `z/(e^z − 1)`.
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// A fixed log grid with its assembled forward operator.
#[derive(Debug, Clone)]
pub struct LogGrid {
    pub y_min: f64,
    pub dy: f64,
    pub n: usize,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    /// `E[ψ | cell]` for a density flat in `y` inside the cell.
    pub cell_psi: Vec<f64>,
    max_step: f64,
    start_floor: f64,
}

impl LogGrid {
    pub fn new(params: &ProblemParams, spec: &DensityGridSpec, psi_max: f64) -> Result<Self> {
        spec.check()?;
        let y_min = spec.psi_min.ln();
        let y_max = psi_max.max(spec.psi_min * 10.0).ln();
        let n = ((y_max - y_min) / spec.dy).ceil() as usize;
        if n < 10 {
            return Err(Error::GridTooCoarse(format!("only {n} cells")));
        }
        let dy = spec.dy;
        let d = 0.5 * params.mu * params.mu;
        let scale = d / (dy * dy);
        // fluxes through interior faces i+1/2, i = 0..n-2
        let mut b_plus = vec![0.0; n - 1];
        let mut b_minus = vec![0.0; n - 1];
        for i in 0..n - 1 {
            let y = y_min + (i + 1) as f64 * dy;
            let a = params.lambda * (1.0 + (-y).exp()) - d;
            let pe = a * dy / d;
            b_plus[i] = bernoulli(pe);
            b_minus[i] = bernoulli(-pe);
        }
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            if i > 0 {
                lower[i] = scale * b_minus[i - 1];
                diag[i] -= scale * b_plus[i - 1];
            }
            if i + 1 < n {
                upper[i] = scale * b_plus[i];
                diag[i] -= scale * b_minus[i];
            }
        }
        let cell_psi = (0..n)
            .map(|i| {
                let lo = y_min + i as f64 * dy;
                lo.exp() * dy.exp_m1() / dy
            })
            .collect();
        Ok(Self {
            y_min,
            dy,
            n,
            lower,
            diag,
            upper,
            cell_psi,
            max_step: spec.max_step,
            start_floor: spec.start_floor,
        })
    }

    /// Grid covering starts up to `max_start` until time `t_end`.
    pub fn for_horizon(params: &ProblemParams, spec: &DensityGridSpec, max_start: f64, t_end: f64) -> Result<Self> {
        Self::new(params, spec, psi_cap(max_start, params.lambda, t_end))
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.y_min + (i as f64 + 0.5) * self.dy
    }

    /// Lower face of cell `i` in `y`.
    #[inline]
    pub fn face(&self, i: usize) -> f64 {
        self.y_min + i as f64 * self.dy
    }

    fn initial(&self, start: f64) -> Vec<f64> {
        let y0 = start.max(self.start_floor).ln();
        let f = ((y0 - self.y_min) / self.dy - 0.5).clamp(0.0, (self.n - 1) as f64);
        let i = (f.floor() as usize).min(self.n - 2);
        let theta = f - i as f64;
        let mut m = vec![0.0; self.n];
        m[i] = 1.0 - theta;
        m[i + 1] = theta;
        m
    }

    /// LU factors of the tridiagonal `α I − h A`.
    fn factor(&self, alpha: f64, h: f64) -> Factored {
        let n = self.n;
        let mut sub = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut beta = alpha - h * self.diag[0];
        inv_pivot[0] = 1.0 / beta;
        for i in 1..n {
            sub[i] = -h * self.lower[i];
            sup[i] = -h * self.upper[i - 1] * inv_pivot[i - 1];
            beta = alpha - h * self.diag[i] - sub[i] * sup[i];
            inv_pivot[i] = 1.0 / beta;
        }
        Factored {
            key: (alpha.to_bits(), h.to_bits()),
            sub,
            sup,
            inv_pivot,
        }
    }

    /// Cell masses at each of the increasing positive `times`, starting from a
    /// point mass at `start`.
    pub fn propagate(&self, start: f64, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        if times.iter().any(|t| !(*t > 0.0)) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::DomainError("output times must be positive and increasing".into()));
        }
        let mut out = Vec::with_capacity(times.len());
        let mut cur = self.initial(start);
        let mut prev: Option<Vec<f64>> = None;
        let mut next = vec![0.0; self.n];
        let mut h_prev = 0.0;
        let mut t = 0.0;
        let mut lu: Option<Factored> = None;
        for &target in times {
            while t < target {
                let cap = if h_prev > 0.0 {
                    self.max_step.min(1.5 * h_prev).min((RELATIVE_STEP * t).max(FIRST_STEP))
                } else {
                    self.max_step.min(FIRST_STEP)
                };
                let remaining = target - t;
                let h = if remaining <= cap {
                    remaining
                } else if remaining < 2.0 * cap {
                    0.5 * remaining
                } else {
                    cap
                };
                let alpha = match &prev {
                    None => {
                        next.copy_from_slice(&cur);
                        1.0
                    }
                    Some(old) => {
                        let w = h / h_prev;
                        let c1 = 1.0 + w;
                        let c2 = w * w / (1.0 + w);
                        for ((n, a), b) in next.iter_mut().zip(&cur).zip(old) {
                            *n = c1 * a - c2 * b;
                        }
                        (1.0 + 2.0 * w) / (1.0 + w)
                    }
                };
                let key = (alpha.to_bits(), h.to_bits());
                if lu.as_ref().map(|f| f.key) != Some(key) {
                    lu = Some(self.factor(alpha, h));
                }
                lu.as_ref().expect("factored").solve(&mut next);
                let recycled = prev.replace(std::mem::replace(&mut cur, std::mem::take(&mut next)));
                next = recycled.unwrap_or_else(|| vec![0.0; self.n]);
                h_prev = h;
                t = if remaining <= cap { target } else { t + h };
            }
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Density with respect to `dψ` from cell masses.
    pub fn to_density(&self, t: f64, masses: &[f64]) -> DensityGrid1D {
        let psi_grid: Vec<f64> = (0..self.n).map(|i| self.center(i).exp()).collect();
        let density: Vec<f64> = masses
            .iter()
            .zip(&psi_grid)
            .map(|(m, psi)| m.max(0.0) / (self.dy * psi))
            .collect();
        let mass = trapezoid(&psi_grid, |i| density[i]);
        DensityGrid1D {
            t,
            psi_grid,
            density,
            mass,
        }
    }
}

struct Factored {
    key: (u64, u64),
    sub: Vec<f64>,
    sup: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl Factored {
    fn solve(&self, x: &mut [f64]) {
        let n = x.len();
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.sub[i] * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.sup[i + 1] * x[i + 1];
        }
    }
}

/// A level `ψ = h` resolved against the grid: the cell holding it and the
/// fraction of that cell's mass and partial mean lying below it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Level {
    Nothing,
    Everything,
    Inside { cell: usize, frac: f64, mean_frac: f64 },
}

impl LogGrid {
    pub fn level(&self, h: f64) -> Level {
        if !(h > 0.0) {
            return Level::Nothing;
        }
        let y = h.ln();
        let f = (y - self.y_min) / self.dy;
        if f <= 0.0 {
            return Level::Nothing;
        }
        if f >= self.n as f64 {
            return Level::Everything;
        }
        let cell = f as usize;
        let lo = self.face(cell).exp();
        Level::Inside {
            cell,
            frac: f - cell as f64,
            mean_frac: (h - lo) / self.dy,
        }
    }
}

/// Cumulative mass and partial mean of one marginal, for lookups at
/// arbitrary levels with piecewise-constant density in `y` inside cells.
#[derive(Debug, Clone, Default)]
pub struct Cumulative {
    cdf: Vec<f64>,
    pm: Vec<f64>,
    masses: Vec<f64>,
}

impl Cumulative {
    pub fn new(grid: &LogGrid, masses: &[f64]) -> Self {
        let mut c = Self::default();
        c.refill(grid, masses);
        c
    }

    /// Rebuilds in place, reusing the buffers.
    pub fn refill(&mut self, grid: &LogGrid, masses: &[f64]) {
        let n = grid.n;
        self.cdf.resize(n + 1, 0.0);
        self.pm.resize(n + 1, 0.0);
        self.masses.clear();
        self.masses.extend_from_slice(masses);
        let (mut cdf, mut pm) = (0.0, 0.0);
        self.cdf[0] = 0.0;
        self.pm[0] = 0.0;
        for i in 0..n {
            cdf += masses[i];
            pm += masses[i] * grid.cell_psi[i];
            self.cdf[i + 1] = cdf;
            self.pm[i + 1] = pm;
        }
    }

    /// `(P(ψ < h), E[ψ; ψ < h])` for a resolved level `h`.
    #[inline]
    pub fn below(&self, level: Level) -> (f64, f64) {
        match level {
            Level::Nothing => (0.0, 0.0),
            Level::Everything => self.total(),
            Level::Inside { cell, frac, mean_frac } => {
                let m = self.masses[cell];
                (self.cdf[cell] + m * frac, self.pm[cell] + m * mean_frac)
            }
        }
    }

    pub fn total(&self) -> (f64, f64) {
        let n = self.masses.len();
        (self.cdf[n], self.pm[n])
    }
}

/// Lookups of `(P(ψ < h), E[ψ; ψ < h])` at resolved levels.
pub trait BelowLookup {
    fn below(&self, level: Level) -> (f64, f64);
}

impl BelowLookup for Cumulative {
    #[inline]
    fn below(&self, level: Level) -> (f64, f64) {
        Cumulative::below(self, level)
    }
}

/// [`Cumulative`] in single precision without the cell masses, for tables of
/// many marginals. Partial means below a level `h` are at most `h`, so the
/// rounding stays relative to the level rather than to the full mean.
#[derive(Debug, Clone, Default)]
pub struct PackedCumulative {
    cdf: Vec<f32>,
    pm: Vec<f32>,
}

impl PackedCumulative {
    pub fn new(grid: &LogGrid, masses: &[f64]) -> Self {
        let n = grid.n;
        let mut cdf = Vec::with_capacity(n + 1);
        let mut pm = Vec::with_capacity(n + 1);
        let (mut c, mut m) = (0.0, 0.0);
        cdf.push(0.0);
        pm.push(0.0);
        for i in 0..n {
            c += masses[i];
            m += masses[i] * grid.cell_psi[i];
            cdf.push(c as f32);
            pm.push(m as f32);
        }
        Self { cdf, pm }
    }
}

impl BelowLookup for PackedCumulative {
    #[inline]
    fn below(&self, level: Level) -> (f64, f64) {
        match level {
            Level::Nothing => (0.0, 0.0),
            Level::Everything => {
                let n = self.cdf.len() - 1;
                (self.cdf[n] as f64, self.pm[n] as f64)
            }
            Level::Inside { cell, frac, mean_frac } => {
                let lo = self.cdf[cell] as f64;
                let m = self.cdf[cell + 1] as f64 - lo;
                (lo + m * frac, self.pm[cell] as f64 + m * mean_frac)
            }
        }
    }
}

/// The transition density of one coordinate started at `start_phi`, at time `t`.
pub fn density_1d_fokker_planck(
    t: f64,
    start_phi: f64,
    params: &ProblemParams,
    grid_spec: &DensityGridSpec,
) -> Result<DensityGrid1D> {
    if !(t > 0.0) {
        return Err(Error::DomainError(format!("density needs t > 0, got {t}")));
    }
    if !(start_phi >= 0.0 && start_phi.is_finite()) {
        return Err(Error::DomainError(format!("start must be >= 0, got {start_phi}")));
    }
    let grid = LogGrid::for_horizon(params, grid_spec, start_phi, t)?;
    let masses = grid.propagate(start_phi, &[t])?.pop().expect("one output");
    let d = grid.to_density(t, &masses);
    if (d.mass - 1.0).abs() > 1e-2 {
        return Err(Error::GridTooCoarse(format!("trapezoid mass {} at t = {t}", d.mass)));
    }
    Ok(d)
}
