//! `contpath` command line: `solve`, `path`, `bench`, `synth` and `validate`.
//!
//! Exit codes: 0 success, 1 usage or data error, 2 budget exhausted (or a
//! target gap left unmet). `validate` also exits 1 when a suite reports a
//! violation.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::active_control::SizeSchedule;
use crate::continuation::{geometric_grid, GeometricGrid, PathPolicy, PolicyKind, DEFAULT_GRID_SIZE};
use crate::data_io::{self, DataSource, Dataset, DatasetSpec, TargetColumn};
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::solver::{run_path_with, InnerMethod, InnerSolverConfig, RunResult, StepRecord, TerminatedBy};
use crate::validation::{run_suites, Suite};

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_BUDGET: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "contpath", version, about = "Lasso paths with certified approximate continuation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the Lasso at one target lambda and print a summary line.
    Solve(RunArgs),
    /// Like `solve`, printing one CSV row per accepted path step.
    Path(RunArgs),
    /// Cross-product of policies, screening and grid sizes, as CSV.
    Bench(BenchArgs),
    /// Write a synthetic dataset in svmlight format.
    Synth(SynthArgs),
    /// Run the randomized invariant suites.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Synthetic data of shape NxP, e.g. 500x1000
    #[arg(long, value_name = "NxP", value_parser = parse_shape)]
    pub synthetic: Option<(usize, usize)>,
    /// Seed of the synthetic generator
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of zero coefficients in the synthetic model
    #[arg(long, default_value_t = 0.8)]
    pub zero_frac: f64,
    /// Standard deviation of the synthetic noise
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Read an svmlight file
    #[arg(long, value_name = "PATH")]
    pub svmlight: Option<PathBuf>,
    /// Read a dense CSV file
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// CSV response column, by 0-based index or header name
    #[arg(long, value_name = "COLUMN", default_value = "0")]
    pub target: String,
    /// The CSV file has a header row
    #[arg(long)]
    pub header: bool,
    /// Scale columns to unit Euclidean norm
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyName {
    Fastpath,
    Simplified,
    Adaptive,
    Geometric,
    Prescribed,
    ActiveSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefineName {
    Fastpath,
    Simplified,
    Adaptive,
    Geometric,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    /// Grid policy
    #[arg(long, value_enum, default_value_t = PolicyName::Fastpath)]
    pub policy: PolicyName,
    /// Contraction rate of fastpath and simplified, in (0, 1)
    #[arg(long)]
    pub r: Option<f64>,
    /// Factor of the adaptive rate, in (0, 1]
    #[arg(long)]
    pub c: Option<f64>,
    /// Number of geometric grid points
    #[arg(long, value_name = "T")]
    pub grid_size: Option<usize>,
    /// Ratio between consecutive geometric grid points
    #[arg(long, conflicts_with = "grid_size")]
    pub ratio: Option<f64>,
    /// Prescribed grid, one lambda per line ('#' starts a comment)
    #[arg(long, value_name = "PATH")]
    pub grid_file: Option<PathBuf>,
    /// Read grid-file values as fractions of lambda_max
    #[arg(long)]
    pub grid_relative: bool,
    /// Policy that inserts points between prescribed grid points
    #[arg(long, value_enum)]
    pub refine: Option<RefineName>,
    /// Active-set size schedule: lars, fixed:K or targets:P1,P2,...
    #[arg(long, value_name = "SCHEDULE")]
    pub sizes: Option<String>,
    /// Target lambda as a fraction of lambda_max
    #[arg(long, default_value_t = 0.01)]
    pub lambda_ratio: f64,
    /// Absolute target lambda (overrides --lambda-ratio)
    #[arg(long, conflicts_with = "lambda_ratio")]
    pub lambda: Option<f64>,
    /// Target duality gap
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Clip targets to lambda_max/1e3 and f(0)/1e8 from below
    #[arg(long)]
    pub clip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    Cd,
    Pg,
}

#[derive(Debug, Args)]
pub struct InnerArgs {
    /// Inner solver: cyclic coordinate descent or proximal gradient
    #[arg(long, value_enum, default_value_t = MethodName::Cd)]
    pub method: MethodName,
    /// Epochs between duality-gap checks
    #[arg(long, default_value_t = 10)]
    pub gap_every: usize,
    /// Epoch budget of one inner solve
    #[arg(long, default_value_t = 100_000)]
    pub max_epochs: usize,
    /// Disable dynamic gap-safe screening
    #[arg(long)]
    pub no_screening: bool,
    /// Disable the pathwise working set
    #[arg(long)]
    pub no_working_set: bool,
    /// Accept iterates whose loss increased
    #[arg(long)]
    pub no_monotone: bool,
    /// Budget of accepted path steps
    #[arg(long, default_value_t = 10_000)]
    pub max_steps: usize,
    /// Accept an iterate once sequential screening saturates
    #[arg(long)]
    pub saturation: bool,
    /// Constant of the saturation rule
    #[arg(long, default_value_t = 1.0)]
    pub saturation_c: f64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub inner: InnerArgs,
    /// Write the JSON trace here
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Report every accepted step on stderr
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Policies to compare
    #[arg(long, value_enum, value_delimiter = ',', default_value = "fastpath,geometric")]
    pub policies: Vec<PolicyName>,
    /// Grid sizes for geometric and prescribed policies
    #[arg(long, value_delimiter = ',', default_value = "10,100")]
    pub grid_sizes: Vec<usize>,
    /// Target gaps
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-4,1e-6,1e-8")]
    pub eps_list: Vec<f64>,
    /// Target lambda as a fraction of lambda_max
    #[arg(long, default_value_t = 0.01)]
    pub lambda_ratio: f64,
    /// Inner solver
    #[arg(long, value_enum, default_value_t = MethodName::Cd)]
    pub method: MethodName,
    /// Write the CSV report here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Shape NxP
    #[arg(long, value_name = "NxP", value_parser = parse_shape)]
    pub synthetic: (usize, usize),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub zero_frac: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Output svmlight file
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Also write the generating coefficients, one per line
    #[arg(long, value_name = "PATH")]
    pub beta_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Random instances per suite
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Seed of the first instance
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Suites to run (default: all)
    #[arg(long, value_delimiter = ',', value_parser = parse_suite)]
    pub suite: Vec<Suite>,
}

fn parse_shape(s: &str) -> std::result::Result<(usize, usize), String> {
    let (n, p) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NxP, got '{s}'"))?;
    let n: usize = n.parse().map_err(|_| format!("bad row count in '{s}'"))?;
    let p: usize = p.parse().map_err(|_| format!("bad column count in '{s}'"))?;
    if n == 0 || p == 0 {
        return Err("shape must be positive".into());
    }
    Ok((n, p))
}

fn parse_suite(s: &str) -> std::result::Result<Suite, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Budget { .. } => EXIT_BUDGET,
                _ => EXIT_USAGE,
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve(args) => cmd_run(&args, false),
        Command::Path(args) => cmd_run(&args, true),
        Command::Bench(args) => cmd_bench(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::Validate(args) => cmd_validate(&args),
    }
}

impl DataArgs {
    pub fn spec(&self) -> Result<DatasetSpec> {
        let given = [self.synthetic.is_some(), self.svmlight.is_some(), self.csv.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(Error::arg("give exactly one of --synthetic, --svmlight, --csv"));
        }
        if self.csv.is_none() && (self.header || self.target != "0") {
            return Err(Error::arg("--header and --target only apply to --csv"));
        }
        let source = if let Some((n, p)) = self.synthetic {
            DataSource::Synthetic { n, p, zero_frac: self.zero_frac, noise_sd: self.noise, seed: self.seed }
        } else if let Some(path) = &self.svmlight {
            DataSource::SvmLight(path.clone())
        } else {
            let target = match self.target.parse::<usize>() {
                Ok(i) => TargetColumn::Index(i),
                Err(_) => TargetColumn::Name(self.target.clone()),
            };
            DataSource::CsvDense { path: self.csv.clone().expect("checked"), target, header: self.header }
        };
        Ok(DatasetSpec { source, normalize_columns: self.normalize })
    }
}

impl PolicyArgs {
    fn check_consistency(&self) -> Result<()> {
        let p = self.policy;
        let refine = self.refine;
        let uses = |names: &[PolicyName], refines: &[RefineName]| {
            names.contains(&p) || (p == PolicyName::Prescribed && refine.is_some_and(|r| refines.contains(&r)))
        };
        let rules: [(bool, &str, bool); 6] = [
            (self.r.is_some(), "--r", uses(&[PolicyName::Fastpath, PolicyName::Simplified], &[RefineName::Fastpath, RefineName::Simplified])),
            (self.c.is_some(), "--c", uses(&[PolicyName::Adaptive], &[RefineName::Adaptive])),
            (
                self.grid_size.is_some() || self.ratio.is_some(),
                "--grid-size/--ratio",
                uses(&[PolicyName::Geometric], &[RefineName::Geometric]),
            ),
            (self.grid_file.is_some() || self.grid_relative, "--grid-file/--grid-relative", p == PolicyName::Prescribed),
            (self.refine.is_some(), "--refine", p == PolicyName::Prescribed),
            (self.sizes.is_some(), "--sizes", p == PolicyName::ActiveSet),
        ];
        for (given, flag, allowed) in rules {
            if given && !allowed {
                return Err(Error::arg(format!("{flag} does not apply to --policy {}", policy_label(p))));
            }
        }
        if p == PolicyName::Prescribed && self.grid_file.is_none() {
            return Err(Error::arg("--policy prescribed needs --grid-file"));
        }
        Ok(())
    }

    fn geometric(&self) -> GeometricGrid {
        match self.ratio {
            Some(s) => GeometricGrid::Ratio(s),
            None => GeometricGrid::Size(self.grid_size.unwrap_or(DEFAULT_GRID_SIZE)),
        }
    }

    fn rate(&self, prob: &Problem) -> f64 {
        self.r.unwrap_or(crate::continuation::DEFAULT_RATE_FACTOR * prob.mu() / prob.nu())
    }

    pub fn build(&self, prob: &Problem) -> Result<PathPolicy> {
        self.check_consistency()?;
        let lambda_max = prob.lambda_max();
        let target = match self.lambda {
            Some(l) => l,
            None => self.lambda_ratio * lambda_max,
        };
        let variant = match self.policy {
            PolicyName::Fastpath => PolicyKind::FastPath { r: self.rate(prob) },
            PolicyName::Simplified => PolicyKind::Simplified { r: self.rate(prob) },
            PolicyName::Adaptive => PolicyKind::AdaptiveR { c: self.c.unwrap_or(1.0) },
            PolicyName::Geometric => PolicyKind::Geometric(self.geometric()),
            PolicyName::ActiveSet => {
                let schedule: SizeSchedule = self.sizes.as_deref().unwrap_or("lars").parse()?;
                PolicyKind::ActiveSetControl(schedule)
            }
            PolicyName::Prescribed => {
                let path = self.grid_file.as_ref().expect("checked");
                let scale = if self.grid_relative { lambda_max } else { 1.0 };
                let grid = read_grid(path)?.into_iter().map(|v| v * scale).collect();
                let refine = self.refine.map(|r| {
                    Box::new(match r {
                        RefineName::Fastpath => PolicyKind::FastPath { r: self.rate(prob) },
                        RefineName::Simplified => PolicyKind::Simplified { r: self.rate(prob) },
                        RefineName::Adaptive => PolicyKind::AdaptiveR { c: self.c.unwrap_or(1.0) },
                        RefineName::Geometric => PolicyKind::Geometric(self.geometric()),
                    })
                });
                PolicyKind::Prescribed { grid, refine }
            }
        };
        let policy = PathPolicy::new(variant, target, self.eps)?;
        Ok(if self.clip { policy.with_clipping(prob) } else { policy })
    }
}

impl InnerArgs {
    pub fn build(&self) -> Result<InnerSolverConfig> {
        let cfg = InnerSolverConfig {
            method: method(self.method),
            gap_check_every: self.gap_every,
            max_epochs: self.max_epochs,
            dynamic_screening: !self.no_screening,
            enforce_monotone_f: !self.no_monotone,
            working_set: !self.no_working_set,
            max_path_steps: self.max_steps,
            stop_on_saturation: self.saturation,
            saturation_c: self.saturation_c,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn method(m: MethodName) -> InnerMethod {
    match m {
        MethodName::Cd => InnerMethod::CyclicCoordinateDescent,
        MethodName::Pg => InnerMethod::ProximalGradient,
    }
}

fn policy_label(p: PolicyName) -> &'static str {
    match p {
        PolicyName::Fastpath => "fastpath",
        PolicyName::Simplified => "simplified",
        PolicyName::Adaptive => "adaptive",
        PolicyName::Geometric => "geometric",
        PolicyName::Prescribed => "prescribed",
        PolicyName::ActiveSet => "active-set",
    }
}

/// One lambda per line; blank lines and `#` comments are skipped.
pub fn read_grid(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut grid = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v = line.parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("bad lambda '{line}'") })?;
        grid.push(v);
    }
    Ok(grid)
}

fn run_one(
    dataset: &Dataset,
    spec: &DatasetSpec,
    policy: &PathPolicy,
    cfg: &InnerSolverConfig,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<RunResult> {
    let mut res = run_path_with(&dataset.problem, policy, cfg, on_step)?;
    res.trace.meta.dataset = spec.label();
    res.trace.meta.seed = spec.seed();
    if !dataset.zero_columns.is_empty() {
        res.trace.meta.notes.push(format!("zero columns left unnormalized: {:?}", dataset.zero_columns));
    }
    Ok(res)
}

fn cmd_run(args: &RunArgs, per_step: bool) -> Result<i32> {
    let spec = args.data.spec()?;
    let dataset = data_io::load(&spec)?;
    let policy = args.policy.build(&dataset.problem)?;
    let cfg = args.inner.build()?;
    let verbose = args.verbose;
    let stdout = std::io::stdout();
    if per_step {
        writeln!(stdout.lock(), "t,lambda,eps_t,gap_local,gap_target,support_size,active_size,epochs")?;
    }
    let mut on_step = |s: &StepRecord| {
        if per_step {
            let _ = writeln!(
                stdout.lock(),
                "{},{:e},{:e},{:e},{:e},{},{},{}",
                s.t,
                s.lambda,
                s.eps_t,
                s.gap_local,
                s.gap_target,
                s.support_size,
                s.active_size,
                s.epochs
            );
        }
        if verbose {
            eprintln!(
                "step {:>4} lambda={:.6e} gap_target={:.3e} support={} epochs={}",
                s.t, s.lambda, s.gap_target, s.support_size, s.epochs
            );
        }
    };
    let start = Instant::now();
    let res = run_one(&dataset, &spec, &policy, &cfg, &mut on_step)?;
    let elapsed = start.elapsed().as_millis();
    if let Some(out) = &args.out {
        data_io::write_trace(&res, out)?;
    }
    let meta = &res.trace.meta;
    let summary = format!(
        "lambda={:e} gap={:e} steps={} epochs={} time_ms={}",
        meta.lambda,
        res.final_gap(),
        res.trace.steps.len() - 1,
        res.trace.total_epochs(),
        elapsed
    );
    if per_step {
        eprintln!("{summary}");
    } else {
        println!("{summary}");
    }
    for note in &meta.notes {
        eprintln!("note: {note}");
    }
    let met = res.final_gap() <= meta.eps && meta.terminated_by != TerminatedBy::BudgetExceeded;
    Ok(if met { EXIT_OK } else { EXIT_BUDGET })
}

#[derive(Debug, Clone)]
struct BenchRow {
    policy: PolicyName,
    screening: bool,
    grid_size: Option<usize>,
    eps: f64,
}

#[derive(Debug, Clone)]
struct BenchOutcome {
    total_epochs: Option<usize>,
    wall_ms: f64,
    final_gap: Option<f64>,
    status: String,
    budget: bool,
}

fn bench_rows(args: &BenchArgs) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for &policy in &args.policies {
        let sizes: Vec<Option<usize>> = match policy {
            PolicyName::Geometric | PolicyName::Prescribed => args.grid_sizes.iter().map(|t| Some(*t)).collect(),
            _ => vec![None],
        };
        for grid_size in sizes {
            for screening in [true, false] {
                for &eps in &args.eps_list {
                    rows.push(BenchRow { policy, screening, grid_size, eps });
                }
            }
        }
    }
    rows
}

fn bench_policy(row: &BenchRow, prob: &Problem, target: f64) -> Result<PathPolicy> {
    let variant = match (row.policy, row.grid_size) {
        (PolicyName::Fastpath, _) => PolicyKind::FastPath { r: crate::continuation::DEFAULT_RATE_FACTOR },
        (PolicyName::Simplified, _) => PolicyKind::Simplified { r: crate::continuation::DEFAULT_RATE_FACTOR },
        (PolicyName::Adaptive, _) => PolicyKind::AdaptiveR { c: 1.0 },
        (PolicyName::ActiveSet, _) => PolicyKind::ActiveSetControl(SizeSchedule::new(crate::active_control::SizeMode::LarsLike)),
        (PolicyName::Geometric, t) => PolicyKind::Geometric(GeometricGrid::Size(t.unwrap_or(DEFAULT_GRID_SIZE))),
        (PolicyName::Prescribed, t) => {
            let grid = geometric_grid(prob.lambda_max(), target, &GeometricGrid::Size(t.unwrap_or(DEFAULT_GRID_SIZE)))?;
            PolicyKind::Prescribed { grid, refine: None }
        }
    };
    PathPolicy::new(variant, target, row.eps)
}

fn bench_one(row: &BenchRow, prob: &Problem, target: f64, method: InnerMethod) -> BenchOutcome {
    let cfg = InnerSolverConfig { method, dynamic_screening: row.screening, working_set: row.screening, ..Default::default() };
    let start = Instant::now();
    let res = bench_policy(row, prob, target).and_then(|policy| run_path_with(prob, &policy, &cfg, &mut |_| {}));
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    match res {
        Ok(res) => {
            let budget = res.trace.meta.terminated_by == TerminatedBy::BudgetExceeded || res.final_gap() > res.trace.meta.eps;
            BenchOutcome {
                total_epochs: Some(res.trace.total_epochs()),
                wall_ms,
                final_gap: Some(res.final_gap()),
                status: if budget { "budget".into() } else { "ok".into() },
                budget,
            }
        }
        Err(e) => BenchOutcome {
            total_epochs: None,
            wall_ms,
            final_gap: None,
            status: format!("error: {e}").replace([',', '\n'], ";"),
            budget: matches!(e, Error::Budget { .. }),
        },
    }
}

fn bench_threads() -> Result<Option<usize>> {
    match std::env::var("CONTPATH_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::arg(format!("CONTPATH_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

/// CSV report of `bench`; row order is fixed by the arguments, not by timing.
pub fn bench_report(args: &BenchArgs) -> Result<(String, bool, bool)> {
    let spec = args.data.spec()?;
    let dataset = data_io::load(&spec)?;
    let prob = &dataset.problem;
    if !(args.lambda_ratio > 0.0 && args.lambda_ratio <= 1.0) {
        return Err(Error::arg("--lambda-ratio must lie in (0, 1]"));
    }
    if args.eps_list.iter().any(|e| !(*e > 0.0)) || args.grid_sizes.contains(&0) {
        return Err(Error::arg("eps values and grid sizes must be positive"));
    }
    let target = args.lambda_ratio * prob.lambda_max();
    let rows = bench_rows(args);
    let m = method(args.method);
    let work = || rows.par_iter().map(|row| bench_one(row, prob, target, m)).collect::<Vec<_>>();
    let outcomes = match bench_threads()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::arg(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut csv = String::from("policy,screening,T,eps,total_epochs,wall_ms,final_gap,status\n");
    let mut all_ok = true;
    let mut any_budget = false;
    for (row, out) in rows.iter().zip(&outcomes) {
        all_ok &= out.status == "ok";
        any_budget |= out.budget;
        let _ = writeln!(
            csv,
            "{},{},{},{:e},{},{:.3},{},{}",
            policy_label(row.policy),
            if row.screening { "on" } else { "off" },
            row.grid_size.map(|t| t.to_string()).unwrap_or_default(),
            row.eps,
            out.total_epochs.map(|e| e.to_string()).unwrap_or_default(),
            out.wall_ms,
            out.final_gap.map(|g| format!("{g:e}")).unwrap_or_default(),
            out.status
        );
    }
    Ok((csv, all_ok, any_budget))
}

fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let (csv, all_ok, any_budget) = bench_report(args)?;
    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(match (all_ok, any_budget) {
        (true, _) => EXIT_OK,
        (false, true) => EXIT_BUDGET,
        (false, false) => EXIT_USAGE,
    })
}

fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let (n, p) = args.synthetic;
    let ds = data_io::generate_synthetic_dataset(n, p, args.zero_frac, args.noise, args.seed)?;
    data_io::write_svmlight(&args.out, ds.problem.x(), ds.problem.y())?;
    if let (Some(path), Some(beta)) = (&args.beta_out, &ds.beta_star) {
        let mut text = String::new();
        for b in beta {
            let _ = writeln!(text, "{b}");
        }
        std::fs::write(path, text)?;
    }
    println!("wrote {} ({n}x{p}, seed {})", args.out.display(), args.seed);
    Ok(EXIT_OK)
}

fn cmd_validate(args: &ValidateArgs) -> Result<i32> {
    if args.trials == 0 {
        return Err(Error::arg("--trials must be at least 1"));
    }
    let suites: Vec<Suite> = if args.suite.is_empty() { Suite::ALL.to_vec() } else { args.suite.clone() };
    let reports = run_suites(&suites, args.trials, args.seed)?;
    let mut violations = 0;
    for rep in &reports {
        println!("{rep}");
        for v in &rep.violations {
            println!("  seed={} {}", v.seed, v.detail);
        }
        violations += rep.violations.len();
    }
    println!("total violations: {violations}");
    Ok(if violations == 0 { EXIT_OK } else { EXIT_USAGE })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("contpath").chain(args.iter().copied()))
    }

    #[test]
    fn shapes() {
        assert_eq!(parse_shape("500x1000").unwrap(), (500, 1000));
        assert!(parse_shape("500").is_err());
        assert!(parse_shape("0x3").is_err());
    }

    #[test]
    fn inconsistent_flags_rejected() {
        let Command::Solve(args) = parse(&["solve", "--synthetic", "5x5", "--policy", "geometric", "--r", "0.3"]).unwrap().command
        else {
            panic!()
        };
        let ds = data_io::load(&args.data.spec().unwrap()).unwrap();
        assert!(args.policy.build(&ds.problem).is_err());
        assert!(parse(&["solve", "--lambda", "1", "--lambda-ratio", "0.1"]).is_err());
    }

    #[test]
    fn exactly_one_source() {
        let Command::Solve(args) = parse(&["solve"]).unwrap().command else { panic!() };
        assert!(args.data.spec().is_err());
    }

    #[test]
    fn bench_row_order_is_fixed() {
        let Command::Bench(args) =
            parse(&["bench", "--synthetic", "5x5", "--policies", "fastpath,geometric", "--eps-list", "1e-2,1e-4"]).unwrap().command
        else {
            panic!()
        };
        let rows = bench_rows(&args);
        // fastpath: 2 screening x 2 eps; geometric: 2 sizes x 2 x 2
        assert_eq!(rows.len(), 4 + 8);
        assert_eq!(rows[0].policy, PolicyName::Fastpath);
        assert!(rows[0].screening && !rows[2].screening);
        assert_eq!(rows[4].grid_size, Some(10));
        assert_eq!(rows[8].grid_size, Some(100));
    }
}
