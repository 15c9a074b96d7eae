//! `coorddrift`: boundaries, values, simulated risks and solver cross-checks.
//!
//! Every command prints one JSON document on stdout and, with `--out DIR`,
//! writes its CSV and JSON files there. Exit codes: 0 success, 1 solver
//! failure (diagnostic JSON on stdout), 2 usage.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use serde_json::{json, Value};

use coorddrift::fredholm::{
    boundary_bounds, picard_solve, value_2d, value_initial_problem, Boundary2D, PicardSettings,
};
use coorddrift::kernel::{KernelBudget, KernelMethod};
use coorddrift::onedim::solve_phi_star;
use coorddrift::pde::{agreement_ratio, extract_boundary, smooth_fit_check, solve_vi, PsorSettings, VIGridSpec};
use coorddrift::simulate::{estimate_bayes_risk, outcomes_csv, DetectorRule, RiskSettings};
use coorddrift::{Error, Point2, ProblemParams};

use config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "coorddrift", version, about = "Quickest detection of a drift in one of two coordinates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    c: Option<f64>,
    #[arg(long, global = true)]
    p1: Option<f64>,
    #[arg(long, global = true)]
    pi: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Boundary nodes for `boundary`, nodes per axis for `pde-check`.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Picard stopping tolerance on the sup-norm update.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Initial simulation horizon; default 10/λ.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Solve the stopping boundary.
    Boundary {
        /// Threshold of the problem with the drift always in coordinate one.
        #[arg(long)]
        one_dim: bool,
    },
    /// Value at points, or the minimal Bayes risk at `--pi`.
    Value {
        /// Point `phi1,phi2`; repeatable.
        #[arg(long = "at", value_name = "PHI1,PHI2")]
        at: Vec<String>,
        /// Boundary JSON from a previous `boundary` run.
        #[arg(long)]
        boundary: Option<PathBuf>,
    },
    /// Bayes risk of one rule by simulation.
    Simulate {
        /// optimal | sum | single | single2 | stop-at-zero | fixed:T
        #[arg(long)]
        rule: String,
        #[arg(long)]
        boundary: Option<PathBuf>,
        /// Also write per-path outcomes to `outcomes.csv`.
        #[arg(long)]
        outcomes: bool,
    },
    /// Paired risks of several rules on common paths.
    Compare {
        #[arg(long, value_delimiter = ',')]
        rules: Vec<String>,
        #[arg(long)]
        boundary: Option<PathBuf>,
        #[arg(long)]
        outcomes: bool,
    },
    /// Boundary of the discretized variational inequality against the integral-equation boundary.
    PdeCheck {
        #[arg(long)]
        boundary: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Solver(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            Error::NonPositiveRate { .. }
            | Error::ZeroDrift
            | Error::PriorOutOfRange { .. }
            | Error::NonFinite { .. } => Failure::Usage(e.to_string()),
            other => Failure::Solver(other),
        }
    }
}

struct Run {
    file: FileConfig,
    cli: Cli,
}

impl Run {
    fn get<T: std::str::FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, Failure> {
        self.file.pick(key, flag).map_err(Failure::Usage)
    }

    fn required(&self, key: &str, flag: Option<f64>) -> Result<f64, Failure> {
        self.get(key, flag)?
            .ok_or_else(|| Failure::Usage(format!("missing required --{key}")))
    }

    fn params(&self, need_p1: bool) -> Result<ProblemParams, Failure> {
        let lambda = self.required("lambda", self.cli.lambda)?;
        let mu = self.required("mu", self.cli.mu)?;
        let c = self.required("c", self.cli.c)?;
        let p1 = if need_p1 {
            self.required("p1", self.cli.p1)?
        } else {
            self.get("p1", self.cli.p1)?.unwrap_or(1.0)
        };
        let pi = self.get("pi", self.cli.pi)?.unwrap_or(0.0);
        Ok(ProblemParams::new(lambda, mu, c, p1, pi)?)
    }

    fn seed(&self) -> Result<u64, Failure> {
        Ok(self.get("seed", self.cli.seed)?.unwrap_or(1))
    }

    fn out_dir(&self) -> Result<Option<PathBuf>, Failure> {
        let dir: Option<PathBuf> = self.get("out", self.cli.out.clone())?;
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", d.display())))?;
        }
        Ok(dir)
    }

    fn picard_settings(&self) -> Result<PicardSettings, Failure> {
        let mut s = PicardSettings::default();
        if let Some(n) = self.get("grid", self.cli.grid)? {
            s.grid.nodes = n;
        }
        if let Some(t) = self.get("tol", self.cli.tol)? {
            s.tol_sup = t;
        }
        Ok(s)
    }

    /// A boundary file when given, else a fresh solve.
    fn boundary(&self, file: &Option<PathBuf>, params: &ProblemParams) -> Result<Boundary2D, Failure> {
        match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
                let b = Boundary2D::from_json(&text)?;
                let same = [b.params.lambda, b.params.mu, b.params.c, b.params.p1]
                    == [params.lambda, params.mu, params.c, params.p1];
                if !same {
                    return Err(Failure::Usage(format!("{} was solved for other parameters", path.display())));
                }
                Ok(b)
            }
            None => Ok(picard_solve(&params.with_pi(0.0)?, &self.picard_settings()?)?),
        }
    }

    fn risk_settings(&self) -> Result<RiskSettings, Failure> {
        let mut s = RiskSettings {
            seed: self.seed()?,
            horizon: self.get("horizon", self.cli.horizon)?,
            ..RiskSettings::default()
        };
        if let Some(n) = self.get("paths", self.cli.paths)? {
            s.n_paths = n;
        }
        Ok(s)
    }
}

fn write(dir: &Option<PathBuf>, name: &str, text: &str) -> Result<(), Failure> {
    if let Some(d) = dir {
        let path: &Path = d.as_ref();
        std::fs::write(path.join(name), text).map_err(|e| Failure::Usage(format!("cannot write {name}: {e}")))?;
    }
    Ok(())
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes") + "\n"
}

fn parse_rule(name: &str, params: &ProblemParams, optimal: &dyn Fn() -> Result<Boundary2D, Failure>) -> Result<DetectorRule, Failure> {
    Ok(match name.trim() {
        "optimal" => DetectorRule::optimal(&optimal()?),
        "sum" => DetectorRule::sum_rule(params)?,
        "single" | "single1" => DetectorRule::single_channel(params, 1)?,
        "single2" => DetectorRule::single_channel(params, 2)?,
        "stop-at-zero" => DetectorRule::stop_at_zero(),
        other => match other.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(t)) if t >= 0.0 => DetectorRule::FixedTime { t },
            _ => return Err(Failure::Usage(format!("unknown rule {other:?}"))),
        },
    })
}

fn boundary_cmd(run: &Run, one_dim: bool) -> Result<Value, Failure> {
    let out = run.out_dir()?;
    if one_dim {
        let p = run.params(false)?;
        let one = ProblemParams::one_dim(p.lambda, p.mu, p.c)?;
        let b = solve_phi_star(&one, 1e-12)?;
        let v = json!({ "command": "boundary", "one_dim": true, "params": one, "phi_star": b.phi_star, "residual": b.residual });
        write(&out, "boundary_1d.json", &pretty(&v))?;
        return Ok(v);
    }
    let p = run.params(true)?;
    let b = picard_solve(&p.with_pi(0.0)?, &run.picard_settings()?)?;
    write(&out, "boundary.csv", &b.to_csv())?;
    write(&out, "boundary.json", &(b.to_json() + "\n"))?;
    Ok(json!({
        "command": "boundary",
        "one_dim": false,
        "params": b.params,
        "phi_zero": b.phi_zero,
        "iteration_count": b.iteration_count,
        "sup_update": b.sup_update,
        "nodes": b.len(),
        "flagged": b.flagged,
        "phi1": b.phi1_grid,
        "b": b.b_values,
    }))
}

fn value_cmd(run: &Run, at: &[String], file: &Option<PathBuf>) -> Result<Value, Failure> {
    let p = run.params(true)?;
    let out = run.out_dir()?;
    let mut points = Vec::new();
    for s in at {
        let parts: Vec<&str> = s.split(',').collect();
        let xy: Vec<f64> = parts.iter().filter_map(|x| x.trim().parse().ok()).collect();
        if parts.len() != 2 || xy.len() != 2 {
            return Err(Failure::Usage(format!("--at expects phi1,phi2, got {s:?}")));
        }
        points.push(Point2::new(xy[0], xy[1])?);
    }
    let b = run.boundary(file, &p)?;
    let budget = KernelBudget {
        seed: run.seed()?,
        ..KernelBudget::default()
    };
    let base = p.with_pi(0.0)?;
    let mut rows = Vec::new();
    for pt in &points {
        let v = value_2d(*pt, &b, &base, KernelMethod::DensityQuadrature, &budget)?;
        rows.push(json!({ "phi1": pt.phi1, "phi2": pt.phi2, "v_hat": v.value, "std_error": v.std_error, "tail_bound": v.tail_bound }));
    }
    let mut doc = json!({ "command": "value", "params": p, "points": rows });
    if points.is_empty() || run.get::<f64>("pi", run.cli.pi)?.is_some() {
        let iv = value_initial_problem(p.pi, &b, &base, KernelMethod::DensityQuadrature, &budget)?;
        doc["initial"] = json!(iv);
    }
    write(&out, "value.json", &pretty(&doc))?;
    Ok(doc)
}

fn risk_cmd(run: &Run, names: &[String], file: &Option<PathBuf>, outcomes: bool, compare: bool) -> Result<Value, Failure> {
    if compare && names.len() < 2 {
        return Err(Failure::Usage("compare needs at least two rules".into()));
    }
    let p = run.params(true)?;
    let out = run.out_dir()?;
    let optimal = || run.boundary(file, &p);
    let rules = names
        .iter()
        .map(|n| parse_rule(n, &p, &optimal))
        .collect::<Result<Vec<_>, _>>()?;
    let cmp = estimate_bayes_risk(&rules, &p, &run.risk_settings()?)?;
    if outcomes {
        write(&out, "outcomes.csv", &outcomes_csv(&cmp))?;
    }
    let doc = if compare {
        json!({ "command": "compare", "params": p, "reports": cmp.reports, "paired": cmp.paired })
    } else {
        json!({ "command": "simulate", "params": p, "report": cmp.reports[0] })
    };
    write(&out, if compare { "compare.json" } else { "risk.json" }, &pretty(&doc))?;
    Ok(doc)
}

fn pde_check_cmd(run: &Run, file: &Option<PathBuf>) -> Result<(Value, bool), Failure> {
    let p = run.params(true)?.with_pi(0.0)?;
    let out = run.out_dir()?;
    let mut spec = VIGridSpec::default();
    if let Some(n) = run.get("grid", run.cli.grid)? {
        spec.n1 = n;
        spec.n2 = n;
    }
    let reference = run.boundary(file, &p)?;
    let grid = solve_vi(&p, &spec, &PsorSettings::default())?;
    let pde = extract_boundary(&grid)?;
    let bounds = boundary_bounds(&p)?;
    let ratio = agreement_ratio(&grid, &pde, &reference);
    let mask = grid.mask_violations(&bounds);
    let complementarity = grid.complementarity_defect();
    let up_closed = grid.is_up_closed();
    let fit = smooth_fit_check(&grid, &pde).into_iter().fold(0.0f64, f64::max);
    let pass = ratio <= 1.0 && mask == 0 && up_closed && complementarity < 1e-6;
    write(&out, "vigrid.csv", &grid.to_csv())?;
    write(&out, "pde_boundary.csv", &pde.to_csv())?;
    let doc = json!({
        "command": "pde-check",
        "params": p,
        "grid": [spec.n1, spec.n2],
        "sweeps": grid.sweeps,
        "agreement_ratio": ratio,
        "phi_zero_pde": pde.phi_zero,
        "phi_zero_fredholm": reference.phi_zero,
        "mask_violations": mask,
        "up_closed": up_closed,
        "complementarity_defect": complementarity,
        "smooth_fit_max": fit,
        "pass": pass,
    });
    write(&out, "pde_check.json", &pretty(&doc))?;
    Ok((doc, pass))
}

fn dispatch(run: &Run) -> Result<(Value, bool), Failure> {
    match &run.cli.cmd {
        Cmd::Boundary { one_dim } => boundary_cmd(run, *one_dim).map(|v| (v, true)),
        Cmd::Value { at, boundary } => value_cmd(run, at, boundary).map(|v| (v, true)),
        Cmd::Simulate { rule, boundary, outcomes } => {
            risk_cmd(run, std::slice::from_ref(rule), boundary, *outcomes, false).map(|v| (v, true))
        }
        Cmd::Compare { rules, boundary, outcomes } => risk_cmd(run, rules, boundary, *outcomes, true).map(|v| (v, true)),
        Cmd::PdeCheck { boundary } => pde_check_cmd(run, boundary),
    }
}

fn error_kind(e: &Error) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let usage = |msg: String| -> ! { Cli::command().error(ErrorKind::ValueValidation, msg).exit() };
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).unwrap_or_else(|m| usage(m)),
        None => FileConfig::default(),
    };
    let run = Run { file, cli };
    let threads: Option<usize> = run.get("threads", run.cli.threads).unwrap_or_else(|f| match f {
        Failure::Usage(m) => usage(m),
        Failure::Solver(_) => unreachable!(),
    });
    if let Some(n) = threads {
        if n == 0 {
            usage("--threads must be positive".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool starts once");
    }
    match dispatch(&run) {
        Ok((doc, pass)) => {
            print!("{}", pretty(&doc));
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(Failure::Usage(m)) => usage(m),
        Err(Failure::Solver(e)) => {
            print!("{}", pretty(&json!({ "status": "error", "kind": error_kind(&e), "message": e.to_string() })));
            ExitCode::from(1)
        }
    }
}
