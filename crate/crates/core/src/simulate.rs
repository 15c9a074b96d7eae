//! Monte Carlo Bayes risk of detection rules under the original measure.
//!
//! A scenario draws the change time `θ` (an atom `π` at zero, otherwise
//! exponential with rate `λ`) and the channel `β`. Observations are two
//! Brownian paths with drift `μ` switched on in channel `β` from `θ`.
//! Detectors see the observation increments only and decide at grid times.
//!
//! All rules compared in one run read the same scenarios and noise, so
//! paired differences have small variance. Each rule is also monitored on
//! every second grid time; the gap between the two monitoring rates is the
//! step sensitivity of the estimate.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fredholm::Boundary2D;
use crate::kernel::flow::exact_step;
use crate::kernel::{Curve, PhiPath};
use crate::onedim::solve_phi_star;
use crate::params::ProblemParams;
use crate::rng::{domain, mean_and_se, normal, par_indexed, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Change time; `+∞` never occurs for finite rates but is allowed.
    pub theta: f64,
    /// Channel receiving the drift, 1 or 2.
    pub beta: u8,
    pub seed: u64,
    pub index: u64,
}

pub fn sample_scenario(params: &ProblemParams, stream: StreamId) -> Scenario {
    let mut rng = stream.rng(domain::SCENARIO);
    draw_scenario(params, &mut rng, stream)
}

fn draw_scenario(params: &ProblemParams, rng: &mut ChaCha8Rng, stream: StreamId) -> Scenario {
    let theta = if rng.random::<f64>() < params.pi {
        0.0
    } else {
        Exp::new(params.lambda).expect("positive rate").sample(rng)
    };
    let beta = if rng.random::<f64>() < params.p1 { 1 } else { 2 };
    Scenario {
        theta,
        beta,
        seed: stream.seed,
        index: stream.index,
    }
}

/// Cumulative observations `X¹, X²` at times `k·dt`, starting from zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationPath {
    pub dt: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl ObservationPath {
    pub fn steps(&self) -> usize {
        self.x1.len() - 1
    }
}

/// Time within `[t0, t1]` after the change.
#[inline]
fn drift_time(theta: f64, t0: f64, t1: f64) -> f64 {
    (t1 - theta.max(t0)).max(0.0)
}

/// Noise source shared by stored and streamed observations.
struct Increments {
    rng: ChaCha8Rng,
    scenario: Scenario,
    mu: f64,
    dt: f64,
    k: u64,
}

impl Increments {
    fn new(scenario: &Scenario, params: &ProblemParams, dt: f64, stream: StreamId) -> Self {
        Self {
            rng: stream.rng(domain::OBSERVATION),
            scenario: *scenario,
            mu: params.mu,
            dt,
            k: 0,
        }
    }

    fn next(&mut self) -> (f64, f64) {
        let t0 = self.k as f64 * self.dt;
        self.k += 1;
        let t1 = self.k as f64 * self.dt;
        let sd = self.dt.sqrt();
        let mut d1 = sd * normal(&mut self.rng);
        let mut d2 = sd * normal(&mut self.rng);
        let drift = self.mu * drift_time(self.scenario.theta, t0, t1);
        if self.scenario.beta == 1 {
            d1 += drift;
        } else {
            d2 += drift;
        }
        (d1, d2)
    }
}

pub fn simulate_observation(
    scenario: &Scenario,
    params: &ProblemParams,
    dt: f64,
    n_steps: usize,
    stream: StreamId,
) -> Result<ObservationPath> {
    if !(dt > 0.0) {
        return Err(Error::DomainError(format!("observation step must be positive, got {dt}")));
    }
    let mut inc = Increments::new(scenario, params, dt, stream);
    let mut x1 = Vec::with_capacity(n_steps + 1);
    let mut x2 = Vec::with_capacity(n_steps + 1);
    let (mut a, mut b) = (0.0, 0.0);
    x1.push(a);
    x2.push(b);
    for _ in 0..n_steps {
        let (d1, d2) = inc.next();
        a += d1;
        b += d2;
        x1.push(a);
        x2.push(b);
    }
    Ok(ObservationPath { dt, x1, x2 })
}

/// One step of the posterior ratio driven by an observed increment `dx`:
/// `Φ' = RΦ + λ(h/2)(R+1)` with `R = exp(μ dx + (λ − μ²/2)h)`, the trapezoid
/// rule on the time integral written as a recursion.
#[inline]
fn phi_step(phi: f64, lambda: f64, mu: f64, h: f64, dx: f64) -> f64 {
    // the observed increment plays the role of the driving noise
    exact_step(phi, lambda, mu, h, dx)
}

/// `Φ¹, Φ²` along an observation path.
pub fn phi_from_observations(obs: &ObservationPath, params: &ProblemParams) -> PhiPath {
    let start = params.phi0_init();
    let n = obs.x1.len();
    let mut phi1 = Vec::with_capacity(n);
    let mut phi2 = Vec::with_capacity(n);
    let (mut a, mut b) = (start, start);
    phi1.push(a);
    phi2.push(b);
    for k in 1..n {
        a = phi_step(a, params.lambda, params.mu, obs.dt, obs.x1[k] - obs.x1[k - 1]);
        b = phi_step(b, params.lambda, params.mu, obs.dt, obs.x2[k] - obs.x2[k - 1]);
        phi1.push(a);
        phi2.push(b);
    }
    PhiPath {
        times: (0..n).map(|k| k as f64 * obs.dt).collect(),
        phi1,
        phi2,
        seed: 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorRule {
    /// Stop when `Φ² ≥ b(Φ¹)`.
    Optimal2d { boundary: Boundary2D },
    /// Watch one channel with the one-dimensional rule at full drift.
    OneDimSingleChannel { phi_star: f64, channel: u8 },
    /// One-dimensional rule on `Z = (X¹+X²)/√2`, drift `μ/√2`.
    SumRule { phi_star: f64 },
    /// Stop at the first grid time `≥ t`.
    FixedTime { t: f64 },
}

impl DetectorRule {
    pub fn optimal(boundary: &Boundary2D) -> Self {
        Self::Optimal2d {
            boundary: boundary.clone(),
        }
    }

    pub fn single_channel(params: &ProblemParams, channel: u8) -> Result<Self> {
        if channel != 1 && channel != 2 {
            return Err(Error::DomainError(format!("no channel {channel}")));
        }
        let one = ProblemParams::one_dim(params.lambda, params.mu, params.c)?;
        Ok(Self::OneDimSingleChannel {
            phi_star: solve_phi_star(&one, 1e-12)?.phi_star,
            channel,
        })
    }

    pub fn sum_rule(params: &ProblemParams) -> Result<Self> {
        let one = ProblemParams::one_dim(params.lambda, params.mu / std::f64::consts::SQRT_2, params.c)?;
        Ok(Self::SumRule {
            phi_star: solve_phi_star(&one, 1e-12)?.phi_star,
        })
    }

    pub fn stop_at_zero() -> Self {
        Self::FixedTime { t: 0.0 }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Optimal2d { .. } => "optimal".into(),
            Self::OneDimSingleChannel { channel, .. } => format!("single{channel}"),
            Self::SumRule { .. } => "sum".into(),
            Self::FixedTime { t } if *t == 0.0 => "stop-at-zero".into(),
            Self::FixedTime { t } => format!("fixed-{t}"),
        }
    }
}

/// Streaming state of one rule: sees increments, never the scenario.
struct Detector<'a> {
    rule: &'a DetectorRule,
    lambda: f64,
    mu: f64,
    phi1: f64,
    phi2: f64,
    phiz: f64,
}

impl<'a> Detector<'a> {
    fn new(rule: &'a DetectorRule, params: &ProblemParams) -> Self {
        let s = params.phi0_init();
        Self {
            rule,
            lambda: params.lambda,
            mu: params.mu,
            phi1: s,
            phi2: s,
            phiz: s,
        }
    }

    fn observe(&mut self, h: f64, d1: f64, d2: f64) {
        let (l, m) = (self.lambda, self.mu);
        match self.rule {
            DetectorRule::Optimal2d { .. } => {
                self.phi1 = phi_step(self.phi1, l, m, h, d1);
                self.phi2 = phi_step(self.phi2, l, m, h, d2);
            }
            DetectorRule::OneDimSingleChannel { channel, .. } => {
                let d = if *channel == 1 { d1 } else { d2 };
                self.phi1 = phi_step(self.phi1, l, m, h, d);
            }
            DetectorRule::SumRule { .. } => {
                let r2 = std::f64::consts::SQRT_2;
                self.phiz = phi_step(self.phiz, l, m / r2, h, (d1 + d2) / r2);
            }
            DetectorRule::FixedTime { .. } => {}
        }
    }

    fn should_stop(&self, t: f64) -> bool {
        match self.rule {
            DetectorRule::Optimal2d { boundary } => self.phi2 >= boundary.height(self.phi1),
            DetectorRule::OneDimSingleChannel { phi_star, .. } => self.phi1 >= *phi_star,
            DetectorRule::SumRule { phi_star } => self.phiz >= *phi_star,
            DetectorRule::FixedTime { t: stop } => t >= *stop - 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopOutcome {
    pub tau: f64,
    /// False when the path ran out before the rule stopped; `tau` is then
    /// the path end.
    pub stopped: bool,
}

/// First grid time at which the rule stops on a stored observation path.
pub fn run_detector(rule: &DetectorRule, obs: &ObservationPath, params: &ProblemParams) -> StopOutcome {
    let mut d = Detector::new(rule, params);
    if d.should_stop(0.0) {
        return StopOutcome {
            tau: 0.0,
            stopped: true,
        };
    }
    for k in 1..obs.x1.len() {
        d.observe(obs.dt, obs.x1[k] - obs.x1[k - 1], obs.x2[k] - obs.x2[k - 1]);
        let t = k as f64 * obs.dt;
        if d.should_stop(t) {
            return StopOutcome { tau: t, stopped: true };
        }
    }
    StopOutcome {
        tau: obs.steps() as f64 * obs.dt,
        stopped: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSettings {
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
    /// Initial horizon; `None` means `10/λ`.
    pub horizon: Option<f64>,
    /// Horizon doublings allowed while more than 0.1% of paths run on.
    pub max_doublings: usize,
}

impl Default for RiskSettings {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            seed: 1,
            dt: 1e-3,
            horizon: None,
            max_doublings: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    fn of(xs: &[f64]) -> Self {
        let (mean, std_error) = mean_and_se(xs);
        Self { mean, std_error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub rule: String,
    pub n_paths: usize,
    pub false_alarm_prob: Estimate,
    pub expected_delay: Estimate,
    pub bayes_risk: Estimate,
    /// The same paths monitored on every second grid time.
    pub bayes_risk_double_step: Estimate,
    pub dt: f64,
    pub horizon: f64,
    /// Paths still running at the horizon; their delay is capped there.
    pub unstopped: usize,
    /// `c · Σ(horizon − θ)⁺ / n` over unstopped paths: the capped delay
    /// already counted, which the true delay exceeds.
    pub capped_delay_share: f64,
}

/// Per path and rule: `(τ, τ on the doubled step, stopped)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub theta: f64,
    pub beta: u8,
    pub tau: Vec<f64>,
    pub tau_double_step: Vec<f64>,
    pub stopped: Vec<bool>,
}

impl PathOutcome {
    /// `I(τ < θ) + c (τ − θ)⁺` of rule `r`.
    pub fn loss(&self, r: usize, c: f64) -> f64 {
        loss(self.tau[r], self.theta, c)
    }
}

#[inline]
fn loss(tau: f64, theta: f64, c: f64) -> f64 {
    let fa = if tau < theta { 1.0 } else { 0.0 };
    fa + c * (tau - theta).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub rule: String,
    pub baseline: String,
    /// `risk(rule) − risk(baseline)` path by path.
    pub difference: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskComparison {
    pub reports: Vec<RiskReport>,
    /// Every rule against the first one.
    pub paired: Vec<PairedDifference>,
    #[serde(skip)]
    pub outcomes: Vec<PathOutcome>,
}

fn run_path(rules: &[DetectorRule], params: &ProblemParams, settings: &RiskSettings, index: usize, horizon: f64) -> PathOutcome {
    let id = StreamId::new(settings.seed, index as u64);
    let scenario = sample_scenario(params, id);
    let mut inc = Increments::new(&scenario, params, settings.dt, id);
    let n = rules.len();
    let mut fine: Vec<Detector> = rules.iter().map(|r| Detector::new(r, params)).collect();
    let mut coarse: Vec<Detector> = rules.iter().map(|r| Detector::new(r, params)).collect();
    let mut tau = vec![f64::NAN; n];
    let mut tau2 = vec![f64::NAN; n];
    for r in 0..n {
        if fine[r].should_stop(0.0) {
            tau[r] = 0.0;
            tau2[r] = 0.0;
        }
    }
    let steps = (horizon / settings.dt).round() as u64;
    let (mut c1, mut c2) = (0.0, 0.0);
    let mut k = 0u64;
    while k < steps && (tau.iter().chain(&tau2).any(|t| t.is_nan())) {
        let (d1, d2) = inc.next();
        k += 1;
        let t = k as f64 * settings.dt;
        c1 += d1;
        c2 += d2;
        for r in 0..n {
            if tau[r].is_nan() {
                fine[r].observe(settings.dt, d1, d2);
                if fine[r].should_stop(t) {
                    tau[r] = t;
                }
            }
        }
        if k % 2 == 0 {
            for r in 0..n {
                if tau2[r].is_nan() {
                    coarse[r].observe(2.0 * settings.dt, c1, c2);
                    if coarse[r].should_stop(t) {
                        tau2[r] = t;
                    }
                }
            }
            c1 = 0.0;
            c2 = 0.0;
        }
    }
    let end = k as f64 * settings.dt;
    let stopped = tau.iter().map(|t| !t.is_nan()).collect();
    PathOutcome {
        theta: scenario.theta,
        beta: scenario.beta,
        tau: tau.iter().map(|t| if t.is_nan() { end } else { *t }).collect(),
        tau_double_step: tau2.iter().map(|t| if t.is_nan() { end } else { *t }).collect(),
        stopped,
    }
}

/// Bayes risk of each rule over common scenarios and noise.
pub fn estimate_bayes_risk(rules: &[DetectorRule], params: &ProblemParams, settings: &RiskSettings) -> Result<RiskComparison> {
    if settings.n_paths < 1000 {
        return Err(Error::Config(format!("risk estimation needs at least 1000 paths, got {}", settings.n_paths)));
    }
    if rules.is_empty() || !(settings.dt > 0.0) {
        return Err(Error::Config("need at least one rule and a positive step".into()));
    }
    let mut horizon = settings.horizon.unwrap_or(10.0 / params.lambda);
    let mut outcomes = par_indexed(settings.n_paths, |i| run_path(rules, params, settings, i, horizon));
    for _ in 0..settings.max_doublings {
        let running: Vec<usize> = (0..outcomes.len()).filter(|i| outcomes[*i].stopped.iter().any(|s| !s)).collect();
        if running.len() as f64 <= 1e-3 * settings.n_paths as f64 {
            break;
        }
        horizon *= 2.0;
        // same streams, longer paths: the prefix is reproduced exactly
        let redo = par_indexed(running.len(), |k| run_path(rules, params, settings, running[k], horizon));
        for (k, out) in running.into_iter().zip(redo) {
            outcomes[k] = out;
        }
    }
    let c = params.c;
    let reports = rules
        .iter()
        .enumerate()
        .map(|(r, rule)| {
            let fa: Vec<f64> = outcomes.iter().map(|o| if o.tau[r] < o.theta { 1.0 } else { 0.0 }).collect();
            let delay: Vec<f64> = outcomes.iter().map(|o| (o.tau[r] - o.theta).max(0.0)).collect();
            let risk: Vec<f64> = fa.iter().zip(&delay).map(|(f, d)| f + c * d).collect();
            let risk2: Vec<f64> = outcomes.iter().map(|o| loss(o.tau_double_step[r], o.theta, c)).collect();
            let unstopped: Vec<&PathOutcome> = outcomes.iter().filter(|o| !o.stopped[r]).collect();
            RiskReport {
                rule: rule.name(),
                n_paths: settings.n_paths,
                false_alarm_prob: Estimate::of(&fa),
                expected_delay: Estimate::of(&delay),
                bayes_risk: Estimate::of(&risk),
                bayes_risk_double_step: Estimate::of(&risk2),
                dt: settings.dt,
                horizon,
                unstopped: unstopped.len(),
                capped_delay_share: c * unstopped.iter().map(|o| (o.tau[r] - o.theta).max(0.0)).fold(0.0, |a, d| a + d)
                    / settings.n_paths as f64,
            }
        })
        .collect();
    let paired = (1..rules.len())
        .map(|r| {
            let d: Vec<f64> = outcomes.iter().map(|o| o.loss(r, c) - o.loss(0, c)).collect();
            PairedDifference {
                rule: rules[r].name(),
                baseline: rules[0].name(),
                difference: Estimate::of(&d),
            }
        })
        .collect();
    Ok(RiskComparison {
        reports,
        paired,
        outcomes,
    })
}

pub const OUTCOME_CSV_SCHEMA: &str = "coorddrift.outcomes.v1";

/// Per-path outcomes, one row per path and rule.
pub fn outcomes_csv(cmp: &RiskComparison) -> String {
    let mut out = format!("# schema: {OUTCOME_CSV_SCHEMA}\npath,rule,theta,beta,tau,stopped\n");
    for (i, o) in cmp.outcomes.iter().enumerate() {
        for (r, rep) in cmp.reports.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{:.9e},{},{:.9e},{}\n",
                rep.rule, o.theta, o.beta, o.tau[r], o.stopped[r] as u8
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ProblemParams {
        ProblemParams::symmetric_unit()
    }

    #[test]
    fn scenario_law() {
        let p = unit().with_pi(0.3).unwrap();
        let n = 100_000;
        let draws: Vec<Scenario> = (0..n).map(|i| sample_scenario(&p, StreamId::new(5, i))).collect();
        let zero = draws.iter().filter(|s| s.theta == 0.0).count() as f64 / n as f64;
        let ci = 3.0 * (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((zero - 0.3).abs() < ci, "{zero}");
        let one = draws.iter().filter(|s| s.beta == 1).count() as f64 / n as f64;
        assert!((one - 0.5).abs() < 3.0 * (0.25f64 / n as f64).sqrt());

        let p0 = unit();
        let late = (0..n)
            .filter(|i| sample_scenario(&p0, StreamId::new(6, *i)).theta > 1.0)
            .count() as f64
            / n as f64;
        let e = (-1.0f64).exp();
        assert!((late - e).abs() < 3.0 * (e * (1.0 - e) / n as f64).sqrt());

        let all1 = ProblemParams::new(1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert!((0..1000).all(|i| sample_scenario(&all1, StreamId::new(7, i)).beta == 1));
    }

    #[test]
    fn constant_zero_path_closes_the_integral() {
        let p = unit();
        let n = 1000;
        let obs = ObservationPath {
            dt: 1.0 / n as f64,
            x1: vec![0.0; n + 1],
            x2: vec![0.0; n + 1],
        };
        let path = phi_from_observations(&obs, &p);
        let exact = 2.0 * (0.5f64.exp() - 1.0);
        assert!((path.phi1[n] - exact).abs() < 1e-6);
        assert_eq!(path.phi1[0], 0.0);
        let p3 = p.with_pi(0.3).unwrap();
        let path = phi_from_observations(&obs, &p3);
        assert!((path.phi2[0] - 0.3 / 0.7).abs() < 1e-15);
    }

    #[test]
    fn drift_enters_from_theta() {
        let p = unit();
        let s = Scenario {
            theta: 0.0,
            beta: 1,
            seed: 1,
            index: 0,
        };
        let n = 20_000;
        let obs = simulate_observation(&s, &p, 1e-3, n, StreamId::new(1, 0)).unwrap();
        let t = n as f64 * 1e-3;
        // slope of X¹ is μ up to a standard error of 1/√t
        assert!((obs.x1[n] / t - 1.0).abs() < 3.0 / t.sqrt());
        assert!((obs.x2[n] / t).abs() < 3.0 / t.sqrt());
        // straddling step gets a pro-rated drift
        assert!((drift_time(0.25, 0.2, 0.3) - 0.05).abs() < 1e-15);
        assert_eq!(drift_time(5.0, 0.2, 0.3), 0.0);
    }

    #[test]
    fn stop_at_zero_risk_is_prior_mass_of_no_change() {
        let p = unit().with_pi(0.3).unwrap();
        let settings = RiskSettings {
            n_paths: 20_000,
            ..RiskSettings::default()
        };
        let cmp = estimate_bayes_risk(&[DetectorRule::stop_at_zero()], &p, &settings).unwrap();
        let r = &cmp.reports[0];
        assert!((r.bayes_risk.mean - 0.7).abs() < 3.0 * (0.21f64 / 20_000.0).sqrt());
        assert_eq!(r.expected_delay.mean, 0.0);
        assert_eq!(r.bayes_risk.mean, r.false_alarm_prob.mean);
    }

    #[test]
    fn raising_the_threshold_never_stops_earlier() {
        let p = unit();
        let s = sample_scenario(&p, StreamId::new(2, 3));
        let obs = simulate_observation(&s, &p, 1e-3, 20_000, StreamId::new(2, 3)).unwrap();
        let lo = run_detector(&DetectorRule::OneDimSingleChannel { phi_star: 1.0, channel: 1 }, &obs, &p);
        let hi = run_detector(&DetectorRule::OneDimSingleChannel { phi_star: 2.0, channel: 1 }, &obs, &p);
        assert!(hi.tau >= lo.tau);
        let p9 = p.with_pi(0.9).unwrap();
        let now = run_detector(&DetectorRule::OneDimSingleChannel { phi_star: 2.0, channel: 1 }, &obs, &p9);
        assert_eq!(now.tau, 0.0);
    }
}
