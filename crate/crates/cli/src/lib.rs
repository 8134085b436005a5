//! Batch front end for `pnorm-erm`.
//!
//! Exit codes: 0 success, 1 assertion failure (a bound or inequality was
//! violated beyond its slack), 2 configuration or parse error, 3 numerical
//! failure.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use pnorm_erm::bounds::{BoundInputs, BoundReport, Theorem};
use pnorm_erm::constants::{estimate_constants, ConstantOptions};
use pnorm_erm::experiments::run_experiment;
use pnorm_erm::output::{write_atomic, write_json};
use pnorm_erm::selftest::run_selftest;
use pnorm_erm::{fit, Dataset, DistributionSpec, Error, NoiseFamily, SolverOptions};

use config::{CommandName, ConfigError, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "pnorm-erm",
    version,
    about = "p-norm linear regression: ERM, constants, bounds and Monte Carlo campaigns"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration (path); flags override its fields
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed (unsigned 64-bit integer)
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory (path), created if missing
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (count); defaults to the available parallelism
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct SpecArgs {
    /// Dimension of the default spec X ~ N(0, I_d), w* = (1, …, 1) (count); ignored with a config spec
    #[arg(long, value_name = "INT")]
    pub d: Option<usize>,
    /// Gaussian noise standard deviation of the default spec (response units); 0 means realizable
    #[arg(long, value_name = "FLOAT")]
    pub noise_sd: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct SolverArgs {
    /// Stopping tolerance on the gradient norm (relative to the data scale)
    #[arg(long, value_name = "FLOAT")]
    pub tol: Option<f64>,
    /// Newton iteration limit (count)
    #[arg(long, value_name = "INT")]
    pub max_iter: Option<usize>,
    /// Initial smoothing radius for p < 2 (residual units)
    #[arg(long, value_name = "FLOAT")]
    pub mu0: Option<f64>,
    /// Factor by which the smoothing radius shrinks per iteration (dimensionless, > 1)
    #[arg(long, value_name = "FLOAT")]
    pub homotopy_factor: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a dataset and write it as CSV (header x1,…,xd,y)
    GenData {
        /// Number of rows (count)
        #[arg(long, value_name = "INT")]
        n: Option<usize>,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Fit the empirical risk minimizer and print it as JSON
    Fit {
        /// Dataset CSV (path); without it a dataset of --n rows is sampled from the spec
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Loss exponent p > 1 (dimensionless)
        #[arg(long, value_name = "FLOAT")]
        p: Option<f64>,
        /// Rows to sample when no --data is given (count)
        #[arg(long, value_name = "INT")]
        n: Option<usize>,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Estimate H_p, V_p, σ_p², the norm-equivalence constants, c*_p, ε, T* and ρ
    Constants {
        /// Loss exponent p > 1 (dimensionless)
        #[arg(long, value_name = "FLOAT")]
        p: Option<f64>,
        /// Monte Carlo draws (count)
        #[arg(long, value_name = "INT")]
        samples: Option<usize>,
        /// Sphere-search restarts (count)
        #[arg(long, value_name = "INT")]
        restarts: Option<usize>,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Evaluate a closed-form bound and print its value
    Bounds {
        /// Theorem: 1 (p = 2), 3 (realizable), 4 (p > 2) or 5 (1 < p < 2)
        #[arg(long, value_name = "1|3|4|5")]
        theorem: u8,
        /// Loss exponent p > 1 (dimensionless); defaults to 2 for theorems 1 and 3
        #[arg(long, value_name = "FLOAT")]
        p: Option<f64>,
        /// Dimension (count)
        #[arg(long, value_name = "INT")]
        d: usize,
        /// Sample size (count)
        #[arg(long, value_name = "INT")]
        n: u64,
        /// Failure probability δ in (0, 1] (probability)
        #[arg(long, value_name = "FLOAT", default_value_t = 0.1)]
        delta: f64,
        /// Rate functional V_p (squared response units)
        #[arg(long, value_name = "FLOAT", default_value_t = 1.0)]
        v: f64,
        /// σ_p² ≥ 1 (dimensionless)
        #[arg(long, value_name = "FLOAT", default_value_t = 1.0)]
        sigma_sq: f64,
        /// C_{L^p→(L²,p)} for theorem 4 (dimensionless)
        #[arg(long, value_name = "FLOAT", default_value_t = 1.0)]
        c_lp: f64,
        /// C²_{L²→(L²,p)} for theorem 5 (dimensionless)
        #[arg(long, value_name = "FLOAT", default_value_t = 1.0)]
        c_l2: f64,
        /// c*_p = E|r*|^{2(p-2)} for theorem 5 (response units to the power 2(p-2))
        #[arg(long, value_name = "FLOAT", default_value_t = 1.0)]
        c_star: f64,
        /// Small-ball probability ρ in [0, 1) for theorem 3 (probability)
        #[arg(long, value_name = "FLOAT", default_value_t = 0.0)]
        rho: f64,
        /// Print the full report as JSON instead of the bare value
        #[arg(long)]
        json: bool,
    },
    /// Run a Monte Carlo campaign from the config's experiment block
    Experiment {
        /// Loss exponent p > 1 (dimensionless), overrides the config
        #[arg(long, value_name = "FLOAT")]
        p: Option<f64>,
        /// Single sample size replacing the n grid (count)
        #[arg(long, value_name = "INT")]
        n: Option<usize>,
        /// Failure probability δ in (0, 1] (probability)
        #[arg(long, value_name = "FLOAT")]
        delta: Option<f64>,
        /// Trials per sample size (count)
        #[arg(long, value_name = "INT")]
        trials: Option<usize>,
        /// Smoke-test scale: at most 20 trials and 10⁴ Monte Carlo draws
        #[arg(long)]
        quick: bool,
    },
    /// Seeded random checks of the scalar loss inequalities
    Selftest {
        /// 10⁵ draws per suite instead of 10⁶
        #[arg(long)]
        quick: bool,
    },
}

impl Command {
    fn name(&self) -> CommandName {
        match self {
            Self::GenData { .. } => CommandName::GenData,
            Self::Fit { .. } => CommandName::Fit,
            Self::Constants { .. } => CommandName::Constants,
            Self::Bounds { .. } => CommandName::Bounds,
            Self::Experiment { .. } => CommandName::Experiment,
            Self::Selftest { .. } => CommandName::Selftest,
        }
    }
}

/// A failed run with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_CONFIG
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: e.0,
        }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: msg.into(),
    }
}

fn assertion(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_ASSERTION,
        message: msg.into(),
    }
}

struct Context<'a> {
    cfg: RunConfig,
    out: Option<PathBuf>,
    stdout: &'a mut dyn Write,
}

impl Context<'_> {
    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.cfg.seed).unwrap_or(0)
    }

    fn spec(&self, args: &SpecArgs) -> Result<DistributionSpec, Failure> {
        if let Some(spec) = &self.cfg.spec {
            return Ok(spec.clone());
        }
        let d = args.d.unwrap_or(5);
        let sd = args.noise_sd.unwrap_or(1.0);
        let noise = if sd == 0.0 {
            NoiseFamily::None
        } else {
            NoiseFamily::Gaussian { sd }
        };
        let spec = DistributionSpec::gaussian_identity(d, vec![1.0; d], noise);
        spec.validate()?;
        Ok(spec)
    }

    fn solver(&self, args: &SolverArgs) -> SolverOptions {
        let mut s = self.cfg.solver.unwrap_or_default();
        if let Some(v) = args.tol {
            s.tol = v;
        }
        if let Some(v) = args.max_iter {
            s.max_iter = v;
        }
        if args.mu0.is_some() {
            s.mu0 = args.mu0;
        }
        if let Some(v) = args.homotopy_factor {
            s.homotopy_factor = v;
        }
        s
    }

    fn print(&mut self, text: &str) -> Result<(), Failure> {
        writeln!(self.stdout, "{text}")
            .map_err(|e| config_error(format!("cannot write to stdout: {e}")))
    }

    fn print_json<T: serde::Serialize>(&mut self, value: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
        self.print(&text)
    }
}

fn require<T>(value: Option<T>, what: &str) -> Result<T, Failure> {
    value.ok_or_else(|| config_error(format!("missing {what}")))
}

fn gen_data(
    ctx: &mut Context,
    n: Option<usize>,
    spec: &SpecArgs,
    seed: u64,
) -> Result<(), Failure> {
    let spec = ctx.spec(spec)?;
    let n = require(n.or(ctx.cfg.n), "--n (rows to sample)")?;
    let ds = spec.sample(n, seed)?;
    let dir = ctx.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let path = dir.join("data.csv");
    ds.save_csv(&path)?;
    info!("wrote {} rows to {}", n, path.display());
    ctx.print_json(&serde_json::json!({
        "path": path,
        "n": ds.n(),
        "d": ds.d(),
        "seed": seed,
        "fingerprint": ds.fingerprint,
    }))
}

fn fit_cmd(
    ctx: &mut Context,
    data: Option<&Path>,
    p: Option<f64>,
    n: Option<usize>,
    solver: &SolverArgs,
    spec: &SpecArgs,
    seed: u64,
) -> Result<(), Failure> {
    let p = require(p.or(ctx.cfg.p), "--p (loss exponent)")?;
    let ds = match data {
        Some(path) => Dataset::load_csv(path)
            .map_err(|e| config_error(format!("cannot load dataset {}: {e}", path.display())))?,
        None => {
            let n = require(n.or(ctx.cfg.n), "--data or --n")?;
            ctx.spec(spec)?.sample(n, seed)?
        }
    };
    let opts = ctx.solver(solver);
    info!("fitting p = {p} on n = {}, d = {}", ds.n(), ds.d());
    let sol = fit(&ds, p, &opts)?;
    if let Some(dir) = &ctx.out {
        write_json(&dir.join("fit.json"), &sol)?;
    }
    ctx.print_json(&sol)
}

fn constants_cmd(
    ctx: &mut Context,
    p: Option<f64>,
    samples: Option<usize>,
    restarts: Option<usize>,
    spec: &SpecArgs,
    seed: u64,
) -> Result<(), Failure> {
    let p = require(p.or(ctx.cfg.p), "--p (loss exponent)")?;
    let spec = ctx.spec(spec)?;
    let mut opts = ctx.cfg.constants.unwrap_or_default();
    opts.seed = seed;
    if let Some(s) = samples {
        opts.samples = s;
    }
    if let Some(r) = restarts {
        opts.restarts = r;
    }
    let est = estimate_constants(&spec, p, &ConstantOptions { ..opts })?;
    if let Some(dir) = &ctx.out {
        write_json(&dir.join("constants.json"), &est)?;
    }
    ctx.print_json(&est)
}

#[allow(clippy::too_many_arguments)]
fn bounds_cmd(
    ctx: &mut Context,
    theorem: u8,
    p: Option<f64>,
    d: usize,
    n: u64,
    delta: f64,
    inputs: BoundInputs,
    json: bool,
) -> Result<(), Failure> {
    let theorem = Theorem::from_number(theorem)?;
    let p = match (p.or(ctx.cfg.p), theorem) {
        (Some(p), _) => p,
        (None, Theorem::T1 | Theorem::T3) => 2.0,
        (None, _) => return Err(config_error("theorems 4 and 5 need --p")),
    };
    let report = BoundReport::evaluate(theorem, p, d, n, delta, &inputs)?;
    if let Some(dir) = &ctx.out {
        write_atomic(&dir.join("bounds.csv"), |f| report.write_csv(f))?;
    }
    if json {
        ctx.print_json(&report)
    } else {
        ctx.print(&report.bound_value.to_string())
    }
}

fn experiment_cmd(
    ctx: &mut Context,
    p: Option<f64>,
    n: Option<usize>,
    delta: Option<f64>,
    trials: Option<usize>,
    quick: bool,
    seed: Option<u64>,
) -> Result<(), Failure> {
    if ctx.cfg.experiment.is_none() {
        return Err(config_error(
            "experiment needs --config with an `experiment` block",
        ));
    }
    let mut run = ctx.cfg.clone();
    run.seed = seed.or(run.seed);
    run.p = p.or(run.p);
    run.n = n.or(run.n);
    let mut cfg = run.experiment_config()?;
    if let Some(d) = delta {
        cfg.delta = d;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if quick {
        cfg.trials = cfg.trials.min(20);
        cfg.mc.samples = cfg.mc.samples.min(10_000);
    }
    cfg.validate()?;
    info!(
        "running {:?} campaign: p = {}, n = {:?}, {} trials",
        cfg.kind, cfg.p, cfg.n_grid, cfg.trials
    );
    let res = run_experiment(&cfg)?;
    let dir = ctx.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    res.write_to(&dir)?;
    info!("wrote results to {}", dir.display());
    let summary = serde_json::json!({
        "kind": res.kind,
        "passed": res.passed,
        "per_n": res.per_n,
        "slope": res.slope,
        "ratio_at_largest_n": res.ratio_at_largest_n,
        "coverage": res.coverage.iter().map(|c| serde_json::json!({
            "check": c.check,
            "n": c.n,
            "violation_fraction": c.violation_fraction,
            "allowed_fraction": c.allowed_fraction,
            "passed": c.passed,
        })).collect::<Vec<_>>(),
        "derivative": res.derivative.as_ref().map(|d| serde_json::json!({
            "max_grad_rel_err": d.max_grad_rel_err,
            "max_hess_rel_err": d.max_hess_rel_err,
            "passed": d.passed,
        })),
        "failures": res.failures.len(),
        "out": dir,
    });
    ctx.print_json(&summary)?;
    if res.passed {
        Ok(())
    } else {
        Err(assertion(
            "campaign assertion failed: violations exceed the allowed slack",
        ))
    }
}

fn selftest_cmd(ctx: &mut Context, quick: bool, seed: u64) -> Result<(), Failure> {
    let draws = if quick { 100_000 } else { 1_000_000 };
    info!("running scalar inequality suites with {draws} draws each");
    let report = run_selftest(draws, seed)?;
    if let Some(dir) = &ctx.out {
        write_json(&dir.join("selftest.json"), &report)?;
    }
    ctx.print_json(&report)?;
    if report.passed {
        Ok(())
    } else {
        Err(assertion("scalar inequality violated"))
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    let cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.check_command(cli.command.name())?;
    if let Some(w) = cli.global.workers {
        if w == 0 {
            return Err(config_error("--workers must be at least 1"));
        }
        // Fails only if the pool already exists, as in repeated in-process runs.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global();
    }
    let out = cli.global.out.clone().or_else(|| cfg.out.clone());
    let seed_flag = cli.global.seed;
    let mut ctx = Context { cfg, out, stdout };
    let seed = ctx.seed(seed_flag);
    match &cli.command {
        Command::GenData { n, spec } => gen_data(&mut ctx, *n, spec, seed),
        Command::Fit {
            data,
            p,
            n,
            solver,
            spec,
        } => fit_cmd(&mut ctx, data.as_deref(), *p, *n, solver, spec, seed),
        Command::Constants {
            p,
            samples,
            restarts,
            spec,
        } => constants_cmd(&mut ctx, *p, *samples, *restarts, spec, seed),
        Command::Bounds {
            theorem,
            p,
            d,
            n,
            delta,
            v,
            sigma_sq,
            c_lp,
            c_l2,
            c_star,
            rho,
            json,
        } => {
            let inputs = BoundInputs {
                v: *v,
                sigma_p_sq: *sigma_sq,
                c_p_lp: *c_lp,
                c_p_l2: *c_l2,
                c_star_p: *c_star,
                rho: *rho,
            };
            bounds_cmd(&mut ctx, *theorem, *p, *d, *n, *delta, inputs, *json)
        }
        Command::Experiment {
            p,
            n,
            delta,
            trials,
            quick,
        } => experiment_cmd(&mut ctx, *p, *n, *delta, *trials, *quick, seed_flag),
        Command::Selftest { quick } => selftest_cmd(&mut ctx, *quick, seed),
    }
}

/// Parse `args`, run the command and return the exit code. Results go to
/// `stdout`; progress and errors go to standard error.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run_with(args, &mut lock)
}
