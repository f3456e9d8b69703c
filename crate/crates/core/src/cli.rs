//! Command-line interface. `solve` handles arbitrary symmetric systems from
//! Matrix Market files or the built-in shifted 2D Laplacian; `fig1`..`fig6`
//! run the model-problem experiments (block vs one-at-a-time solves under
//! various right-hand-side families) and emit CSV reports.
//!
//! Exit codes: 0 when every requested run converged, 2 when a solve stopped
//! at the iteration cap or closed its subspace unconverged, 1 for usage and
//! runtime errors. All output is deterministic for a fixed seed except the
//! `# meta: wall_seconds=` line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::banded_lanczos::{BreakdownEvent, BreakdownPolicy, DependenceKind};
use crate::linops::{BlockVector, CsrSymmetricMatrix, LinAlgError, SymmetricOperator};
use crate::minres::{minres_single, solve, ConvergenceHistory, SolverConfig, SolverError, StopReason};
use crate::precond::{ic0_factorize, Ic0Factor, PrecondError, SplitPreconditionedOperator};
use crate::problems::{
    laplacian_eigenpairs, mm_read, negated_laplacian, shifted_operator_matrix, EigenSelection,
    Eigenpair, EigmixKind, EigmixSpec, Laplacian2dSpec, MmError,
};

/// Decouples right-hand-side draws from the solver's internal random stream,
/// which is seeded with the bare `--seed` value.
const RHS_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Mm(#[from] MmError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Precond(#[from] PrecondError),
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
}

#[derive(Parser)]
#[command(
    name = "block-minres",
    version,
    about = "Minimum-residual solver for symmetric indefinite systems with multiple right-hand sides"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a symmetric system for one or more right-hand sides
    Solve(SolveArgs),
    /// Model problem, ten random right-hand sides: block vs one-at-a-time
    Fig1(Fig1Args),
    /// Block-size sweep: iteration ratio of block vs one-at-a-time solves
    Fig2(Fig2Args),
    /// Dependent pair (second column is the operator image of the first)
    Fig3(Fig3Args),
    /// Canonical first column with a dense or canonical second column
    Fig4(Fig4Args),
    /// Average iterations vs overlap for mixes of small eigenvectors
    Fig5(FigMixArgs),
    /// Average iterations vs overlap for small/large eigenvector mixes
    Fig6(FigMixArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    /// Replace dependent candidates with fresh orthogonal random directions
    Replace,
    /// Retire dependent candidates and continue with a narrower band
    Shrink,
}

impl From<PolicyArg> for BreakdownPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Replace => BreakdownPolicy::RandomReplacement,
            PolicyArg::Shrink => BreakdownPolicy::BlockShrink,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecondArg {
    /// Split incomplete Cholesky: factors -L for the model problem, the
    /// input matrix otherwise
    Ic0,
    /// No preconditioning
    None,
}

#[derive(Args)]
struct SolveArgs {
    /// Matrix Market coordinate file with the symmetric coefficient matrix
    #[arg(long, value_name = "FILE", conflicts_with = "laplacian", required_unless_present = "laplacian")]
    matrix: Option<PathBuf>,
    /// Model problem -L - SIGMA*I on a GRID x GRID mesh
    #[arg(long, num_args = 2, value_names = ["GRID", "SIGMA"])]
    laplacian: Option<Vec<String>>,
    /// Right-hand side: ones | e:<i> | random:<k> | <file> (repeatable)
    #[arg(long, required = true, value_name = "SPEC")]
    rhs: Vec<String>,
    /// Append the solver-side operator applied to the first right-hand side
    #[arg(long = "rhs-apply-A")]
    rhs_apply_a: bool,
    /// Relative residual target (0 disables the convergence test)
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Iteration cap
    #[arg(long, default_value_t = 5000)]
    maxit: usize,
    /// Dependence tolerance of the basis process
    #[arg(long, default_value_t = 1e-8)]
    gamma: f64,
    /// Response to dependent basis candidates
    #[arg(long, value_enum, default_value_t = PolicyArg::Replace)]
    policy: PolicyArg,
    /// Seed for every random draw
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PrecondArg::Ic0)]
    precond: PrecondArg,
    /// Evaluate true residuals every K iterations (0 disables the audit)
    #[arg(long = "true-residual-every", value_name = "K", default_value_t = 0)]
    true_residual_every: usize,
    /// Skip the second orthogonalization pass
    #[arg(long = "no-reorth")]
    no_reorth: bool,
    /// Write the CSV report here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Fig1Args {
    /// Grid side of the model problem
    #[arg(long, default_value_t = 200)]
    grid: usize,
    /// Spectral shift
    #[arg(long, default_value_t = 200.0)]
    sigma: f64,
    /// Number of random right-hand sides
    #[arg(long, default_value_t = 10)]
    nrhs: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 5000)]
    maxit: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Fig2Args {
    #[arg(long, default_value_t = 200)]
    grid: usize,
    #[arg(long, default_value_t = 200.0)]
    sigma: f64,
    /// Block sizes to sweep
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
    pvals: Vec<usize>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 5000)]
    maxit: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Fig3Args {
    #[arg(long, default_value_t = 200)]
    grid: usize,
    #[arg(long, default_value_t = 200.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 5000)]
    maxit: usize,
    #[arg(long, default_value_t = 1e-8)]
    gamma: f64,
    #[arg(long, value_enum, default_value_t = PolicyArg::Replace)]
    policy: PolicyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    /// b1 = e1, b2 = ones
    Left,
    /// b1 = e1, b2 = e2
    Right,
    /// Run both variants
    Both,
}

#[derive(Args)]
struct Fig4Args {
    #[arg(long, default_value_t = 200)]
    grid: usize,
    #[arg(long, default_value_t = 200.0)]
    sigma: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Left)]
    variant: VariantArg,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 5000)]
    maxit: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FigMixArgs {
    /// Grid side (default 50; --paper-scale selects 200)
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value_t = 200.0)]
    sigma: f64,
    /// Trials per overlap value (default 5; --paper-scale selects 100)
    #[arg(long)]
    trials: Option<usize>,
    /// Overlap values m to sweep
    #[arg(long, value_delimiter = ',')]
    mvals: Option<Vec<usize>>,
    /// Full-scale run: grid 200 with 100 trials per overlap value
    #[arg(long = "paper-scale")]
    paper_scale: bool,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 5000)]
    maxit: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// Parses arguments and runs the selected command, returning the process
/// exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        // A closed stdout (e.g. piping into `head`) is not a failure.
        Err(CliError::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Fig1(a) => cmd_fig1(a),
        Command::Fig2(a) => cmd_fig2(a),
        Command::Fig3(a) => cmd_fig3(a),
        Command::Fig4(a) => cmd_fig4(a),
        Command::Fig5(a) => cmd_figmix(a, EigmixKind::SmallSmall, "fig5"),
        Command::Fig6(a) => cmd_figmix(a, EigmixKind::SmallLarge, "fig6"),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing.
// ---------------------------------------------------------------------------

fn open_out(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn meta(w: &mut dyn Write, key: &str, value: impl std::fmt::Display) -> io::Result<()> {
    writeln!(w, "# meta: {key}={value}")
}

fn policy_name(p: BreakdownPolicy) -> &'static str {
    match p {
        BreakdownPolicy::RandomReplacement => "replace",
        BreakdownPolicy::BlockShrink => "shrink",
    }
}

fn stop_reason_name(r: StopReason) -> &'static str {
    match r {
        StopReason::Converged => "converged",
        StopReason::MaxIter => "max_iter",
        StopReason::SubspaceExhausted => "subspace_exhausted",
    }
}

fn event_line(e: &BreakdownEvent) -> String {
    let kind = match e.kind {
        DependenceKind::Exact => "exact",
        DependenceKind::Near => "near",
    };
    format!("{}:{}:{}:h={:e}", e.iteration, kind, policy_name(e.policy), e.h_value)
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn write_solver_meta(w: &mut dyn Write, h: &ConvergenceHistory, prefix: &str) -> io::Result<()> {
    let p = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}_{k}") };
    meta(w, &p("initial_rel"), join(h.initial.iter()))?;
    meta(w, &p("iterations"), h.iterations)?;
    meta(w, &p("stop_reason"), stop_reason_name(h.stop_reason))?;
    meta(w, &p("converged"), join(h.converged.iter()))?;
    meta(w, &p("prefetch_applies"), h.block_applies)?;
    for e in &h.events {
        meta(w, &p("event"), event_line(e))?;
    }
    Ok(())
}

/// One CSV row per (iteration, column) of a run, 1-based on both axes, so a
/// report holds exactly `iterations * columns` data rows.
fn write_history_rows(
    w: &mut dyn Write,
    experiment: &str,
    h: &ConvergenceHistory,
    with_true: bool,
    column_offset: usize,
) -> io::Result<()> {
    let audits: HashMap<usize, &Vec<f64>> =
        h.true_checks.iter().map(|(j, v)| (*j, v)).collect();
    for j in 1..=h.iterations {
        let row = &h.computed[j - 1];
        for (i, value) in row.iter().enumerate() {
            let col = column_offset + i + 1;
            if with_true {
                match audits.get(&j) {
                    Some(t) => writeln!(w, "{experiment},{j},{col},{value},{}", t[i])?,
                    None => writeln!(w, "{experiment},{j},{col},{value},")?,
                }
            } else {
                writeln!(w, "{experiment},{j},{col},{value}")?;
            }
        }
    }
    Ok(())
}

fn residual_header(w: &mut dyn Write, with_true: bool) -> io::Result<()> {
    if with_true {
        writeln!(w, "experiment,iteration,column,computed_rel_resid,true_rel_resid")
    } else {
        writeln!(w, "experiment,iteration,column,computed_rel_resid")
    }
}

fn exit_code(histories: &[&ConvergenceHistory]) -> i32 {
    let all = histories.iter().all(|h| h.converged.iter().all(|&c| c));
    if all {
        0
    } else {
        2
    }
}

fn ones(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

fn canonical(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn random_column(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn read_vector_file(path: &Path, n: usize) -> Result<Vec<f64>, CliError> {
    let content = std::fs::read_to_string(path)?;
    let mut v = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with('%') {
            continue;
        }
        for tok in t.split_whitespace() {
            v.push(tok.parse::<f64>().map_err(|_| {
                CliError::Usage(format!("{}:{}: bad value '{tok}'", path.display(), idx + 1))
            })?);
        }
    }
    if v.len() != n {
        return Err(CliError::Usage(format!(
            "right-hand side {} holds {} values, expected {n}",
            path.display(),
            v.len()
        )));
    }
    Ok(v)
}

fn push_rhs(
    spec: &str,
    n: usize,
    rng: &mut ChaCha8Rng,
    cols: &mut Vec<Vec<f64>>,
) -> Result<(), CliError> {
    if spec == "ones" {
        cols.push(ones(n));
    } else if let Some(rest) = spec.strip_prefix("e:") {
        let i: usize = rest
            .parse()
            .map_err(|_| CliError::Usage(format!("bad canonical index in '{spec}'")))?;
        if i == 0 || i > n {
            return Err(CliError::Usage(format!(
                "canonical index {i} out of range 1..={n}"
            )));
        }
        cols.push(canonical(n, i - 1));
    } else if let Some(rest) = spec.strip_prefix("random:") {
        let k: usize = rest
            .parse()
            .map_err(|_| CliError::Usage(format!("bad column count in '{spec}'")))?;
        if k == 0 {
            return Err(CliError::Usage("random:<k> needs k >= 1".into()));
        }
        for _ in 0..k {
            cols.push(random_column(n, rng));
        }
    } else {
        cols.push(read_vector_file(Path::new(spec), n)?);
    }
    Ok(())
}

fn parse_laplacian(vals: &[String]) -> Result<Laplacian2dSpec, CliError> {
    let grid: usize = vals[0]
        .parse()
        .map_err(|_| CliError::Usage(format!("grid side must be a positive integer, got '{}'", vals[0])))?;
    let sigma: f64 = vals[1]
        .parse()
        .map_err(|_| CliError::Usage(format!("shift must be a number, got '{}'", vals[1])))?;
    Ok(Laplacian2dSpec::new(grid, sigma)?)
}

/// The model problem every experiment runs on: the shifted operator plus the
/// incomplete Cholesky factor of `-L`.
struct Model {
    spec: Laplacian2dSpec,
    a: CsrSymmetricMatrix,
    factor: Ic0Factor,
}

impl Model {
    fn build(grid: usize, sigma: f64) -> Result<Self, CliError> {
        let spec = Laplacian2dSpec::new(grid, sigma)?;
        let a = shifted_operator_matrix(&spec);
        let factor = ic0_factorize(&negated_laplacian(&spec))?;
        Ok(Self { spec, a, factor })
    }

    fn op(&self) -> Result<SplitPreconditionedOperator<'_>, CliError> {
        Ok(SplitPreconditionedOperator::new(&self.a, &self.factor)?)
    }

    fn head_meta(&self, w: &mut dyn Write, experiment: &str) -> io::Result<()> {
        meta(w, "experiment", experiment)?;
        meta(w, "grid", self.spec.grid)?;
        meta(w, "sigma", self.spec.shift)?;
        meta(w, "n", self.spec.n())?;
        meta(w, "precond", "ic0")
    }
}

fn block_config(tol: f64, maxit: usize, seed: u64) -> SolverConfig {
    SolverConfig { tol, max_iter: maxit, seed, ..Default::default() }
}

fn sequential_runs(
    op: &dyn SymmetricOperator,
    cols: &[Vec<f64>],
    config: &SolverConfig,
) -> Result<Vec<ConvergenceHistory>, CliError> {
    cols.iter()
        .map(|b| minres_single(op, b, None, config).map(|(_, h)| h).map_err(CliError::from))
        .collect()
}

/// Caps worker threads at `BLOCK_MINRES_THREADS` when set; results come back
/// indexed by trial, so scheduling never affects output order.
fn run_trials<T: Send>(
    trials: usize,
    f: impl Fn(usize) -> Result<T, CliError> + Sync,
) -> Result<Vec<T>, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("BLOCK_MINRES_THREADS") {
        let t: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "BLOCK_MINRES_THREADS must be a positive integer, got '{raw}'"
                ))
            })?;
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| (0..trials).into_par_iter().map(&f).collect())
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn cmd_solve(args: SolveArgs) -> Result<i32, CliError> {
    let lap_spec = match &args.laplacian {
        Some(vals) => Some(parse_laplacian(vals)?),
        None => None,
    };
    let a = match (&lap_spec, &args.matrix) {
        (Some(spec), _) => shifted_operator_matrix(spec),
        (None, Some(path)) => mm_read(path).map_err(|e| match e {
            MmError::Io(io) => CliError::Usage(format!("{}: {io}", path.display())),
            other => CliError::Mm(other),
        })?,
        (None, None) => unreachable!("clap enforces a matrix source"),
    };
    let n = a.n();

    let factor = match args.precond {
        PrecondArg::Ic0 => Some(match &lap_spec {
            Some(spec) => ic0_factorize(&negated_laplacian(spec))?,
            None => ic0_factorize(&a)?,
        }),
        PrecondArg::None => None,
    };
    let split;
    let op: &dyn SymmetricOperator = match &factor {
        Some(l) => {
            split = SplitPreconditionedOperator::new(&a, l)?;
            &split
        }
        None => &a,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(RHS_STREAM_SALT));
    let mut cols = Vec::new();
    for spec in &args.rhs {
        push_rhs(spec, n, &mut rng, &mut cols)?;
    }
    let mut cols_hat = match &factor {
        Some(l) => {
            let mut out = Vec::with_capacity(cols.len());
            for c in &cols {
                out.push(crate::precond::tri_solve(l, c, false)?);
            }
            out
        }
        None => cols,
    };
    if args.rhs_apply_a {
        let mut extra = vec![0.0; n];
        op.apply_one(&cols_hat[0], &mut extra);
        cols_hat.push(extra);
    }
    let b = BlockVector::from_columns(&cols_hat)?;

    let config = SolverConfig {
        tol: args.tol,
        max_iter: args.maxit,
        gamma: args.gamma,
        policy: args.policy.into(),
        seed: args.seed,
        reorthogonalize: !args.no_reorth,
        true_residual_check_every: args.true_residual_every,
    };
    let (_x, history) = solve(op, &b, None, &config)?;

    let mut w = open_out(&args.out)?;
    meta(&mut w, "experiment", "solve")?;
    match (&lap_spec, &args.matrix) {
        (Some(spec), _) => {
            meta(&mut w, "grid", spec.grid)?;
            meta(&mut w, "sigma", spec.shift)?;
        }
        (None, Some(path)) => meta(&mut w, "matrix", path.display())?,
        (None, None) => unreachable!(),
    }
    meta(&mut w, "n", n)?;
    meta(&mut w, "p", b.p())?;
    meta(&mut w, "tol", format_args!("{:e}", args.tol))?;
    meta(&mut w, "maxit", args.maxit)?;
    meta(&mut w, "gamma", format_args!("{:e}", args.gamma))?;
    meta(&mut w, "policy", policy_name(args.policy.into()))?;
    meta(&mut w, "seed", args.seed)?;
    meta(&mut w, "precond", if factor.is_some() { "ic0" } else { "none" })?;
    meta(&mut w, "reorth", !args.no_reorth)?;
    meta(&mut w, "true_residual_every", args.true_residual_every)?;
    write_solver_meta(&mut w, &history, "")?;
    meta(&mut w, "wall_seconds", history.wall_seconds)?;
    let with_true = args.true_residual_every > 0;
    residual_header(&mut w, with_true)?;
    write_history_rows(&mut w, "solve", &history, with_true, 0)?;
    w.flush()?;
    Ok(exit_code(&[&history]))
}

// ---------------------------------------------------------------------------
// fig1: ten random right-hand sides, block vs one-at-a-time.
// ---------------------------------------------------------------------------

fn cmd_fig1(args: Fig1Args) -> Result<i32, CliError> {
    if args.nrhs == 0 {
        return Err(CliError::Usage("--nrhs must be at least 1".into()));
    }
    let started = Instant::now();
    let model = Model::build(args.grid, args.sigma)?;
    let op = model.op()?;
    let n = model.spec.n();

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(RHS_STREAM_SALT));
    let mut cols_hat = Vec::with_capacity(args.nrhs);
    for _ in 0..args.nrhs {
        cols_hat.push(op.transform_rhs(&random_column(n, &mut rng))?);
    }

    let config = block_config(args.tol, args.maxit, args.seed);
    let b = BlockVector::from_columns(&cols_hat)?;
    let (_x, block) = solve(&op, &b, None, &config)?;
    let seq = sequential_runs(&op, &cols_hat, &config)?;

    let mut w = open_out(&args.out)?;
    model.head_meta(&mut w, "fig1")?;
    meta(&mut w, "nrhs", args.nrhs)?;
    meta(&mut w, "tol", format_args!("{:e}", args.tol))?;
    meta(&mut w, "maxit", args.maxit)?;
    meta(&mut w, "seed", args.seed)?;
    write_solver_meta(&mut w, &block, "block")?;
    meta(&mut w, "sequential_iterations", join(seq.iter().map(|h| h.iterations)))?;
    meta(&mut w, "sequential_total", seq.iter().map(|h| h.iterations).sum::<usize>())?;
    meta(&mut w, "wall_seconds", started.elapsed().as_secs_f64())?;
    residual_header(&mut w, false)?;
    write_history_rows(&mut w, "fig1_block", &block, false, 0)?;
    for (i, h) in seq.iter().enumerate() {
        write_history_rows(&mut w, "fig1_seq", h, false, i)?;
    }
    w.flush()?;

    let mut all: Vec<&ConvergenceHistory> = vec![&block];
    all.extend(seq.iter());
    Ok(exit_code(&all))
}

// ---------------------------------------------------------------------------
// fig2: block-size sweep.
// ---------------------------------------------------------------------------

fn cmd_fig2(args: Fig2Args) -> Result<i32, CliError> {
    if args.pvals.is_empty() {
        return Err(CliError::Usage("--pvals needs at least one block size".into()));
    }
    let started = Instant::now();
    let model = Model::build(args.grid, args.sigma)?;
    let op = model.op()?;
    let n = model.spec.n();
    let config = block_config(args.tol, args.maxit, args.seed);

    let mut rows = Vec::new();
    let mut all_converged = true;
    for &p in &args.pvals {
        if p == 0 || p > n {
            return Err(CliError::Usage(format!("block size {p} out of range 1..={n}")));
        }
        // First column all ones, then leading canonical vectors.
        let mut cols = vec![ones(n)];
        for i in 0..p - 1 {
            cols.push(canonical(n, i));
        }
        let mut cols_hat = Vec::with_capacity(p);
        for c in &cols {
            cols_hat.push(op.transform_rhs(c)?);
        }
        let b = BlockVector::from_columns(&cols_hat)?;
        let (_x, block) = solve(&op, &b, None, &config)?;
        let seq = sequential_runs(&op, &cols_hat, &config)?;
        all_converged &= block.converged.iter().all(|&c| c)
            && seq.iter().all(|h| h.converged.iter().all(|&c| c));
        let seq_total: usize = seq.iter().map(|h| h.iterations).sum();
        rows.push((p, block.iterations, seq_total));
    }

    let mut w = open_out(&args.out)?;
    model.head_meta(&mut w, "fig2")?;
    meta(&mut w, "pvals", join(args.pvals.iter()))?;
    meta(&mut w, "tol", format_args!("{:e}", args.tol))?;
    meta(&mut w, "maxit", args.maxit)?;
    meta(&mut w, "seed", args.seed)?;
    meta(&mut w, "all_converged", all_converged)?;
    meta(&mut w, "wall_seconds", started.elapsed().as_secs_f64())?;
    writeln!(w, "p,block_iters,sequential_iters,ratio")?;
    for (p, bi, si) in rows {
        writeln!(w, "{p},{bi},{si},{}", bi as f64 / si as f64)?;
    }
    w.flush()?;
    Ok(if all_converged { 0 } else { 2 })
}

// ---------------------------------------------------------------------------
// fig3: built-in dependent pair.
// ---------------------------------------------------------------------------

fn cmd_fig3(args: Fig3Args) -> Result<i32, CliError> {
    let started = Instant::now();
    let model = Model::build(args.grid, args.sigma)?;
    let op = model.op()?;
    let n = model.spec.n();

    // Second column is the solver-side operator applied to the first, so the
    // basis sees an exact dependence at its first step.
    let b1 = op.transform_rhs(&canonical(n, 0))?;
    let mut b2 = vec![0.0; n];
    op.apply_one(&b1, &mut b2);
    let cols_hat = vec![b1, b2];

    let config = SolverConfig {
        tol: args.tol,
        max_iter: args.maxit,
        gamma: args.gamma,
        policy: args.policy.into(),
        seed: args.seed,
        ..Default::default()
    };
    let b = BlockVector::from_columns(&cols_hat)?;
    let (_x, block) = solve(&op, &b, None, &config)?;
    let seq = sequential_runs(&op, &cols_hat, &config)?;

    let mut w = open_out(&args.out)?;
    model.head_meta(&mut w, "fig3")?;
    meta(&mut w, "tol", format_args!("{:e}", args.tol))?;
    meta(&mut w, "maxit", args.maxit)?;
    meta(&mut w, "gamma", format_args!("{:e}", args.gamma))?;
    meta(&mut w, "policy", policy_name(args.policy.into()))?;
    meta(&mut w, "seed", args.seed)?;
    write_solver_meta(&mut w, &block, "block")?;
    meta(&mut w, "sequential_iterations", join(seq.iter().map(|h| h.iterations)))?;
    meta(&mut w, "sequential_total", seq.iter().map(|h| h.iterations).sum::<usize>())?;
    meta(&mut w, "wall_seconds", started.elapsed().as_secs_f64())?;
    residual_header(&mut w, false)?;
    write_history_rows(&mut w, "fig3_block", &block, false, 0)?;
    for (i, h) in seq.iter().enumerate() {
        write_history_rows(&mut w, "fig3_seq", h, false, i)?;
    }
    w.flush()?;

    let mut all: Vec<&ConvergenceHistory> = vec![&block];
    all.extend(seq.iter());
    Ok(exit_code(&all))
}

// ---------------------------------------------------------------------------
// fig4: canonical first column, dense or canonical second.
// ---------------------------------------------------------------------------

fn cmd_fig4(args: Fig4Args) -> Result<i32, CliError> {
    let started = Instant::now();
    let model = Model::build(args.grid, args.sigma)?;
    let op = model.op()?;
    let n = model.spec.n();
    let config = block_config(args.tol, args.maxit, args.seed);

    let variants: &[(&str, Vec<Vec<f64>>)] = &match args.variant {
        VariantArg::Left => vec![("left", vec![canonical(n, 0), ones(n)])],
        VariantArg::Right => vec![("right", vec![canonical(n, 0), canonical(n, 1)])],
        VariantArg::Both => vec![
            ("left", vec![canonical(n, 0), ones(n)]),
            ("right", vec![canonical(n, 0), canonical(n, 1)]),
        ],
    };

    let mut results = Vec::new();
    for (name, cols) in variants {
        let mut cols_hat = Vec::with_capacity(cols.len());
        for c in cols {
            cols_hat.push(op.transform_rhs(c)?);
        }
        let b = BlockVector::from_columns(&cols_hat)?;
        let (_x, block) = solve(&op, &b, None, &config)?;
        let seq = sequential_runs(&op, &cols_hat, &config)?;
        results.push((*name, block, seq));
    }

    let mut w = open_out(&args.out)?;
    model.head_meta(&mut w, "fig4")?;
    meta(&mut w, "tol", format_args!("{:e}", args.tol))?;
    meta(&mut w, "maxit", args.maxit)?;
    meta(&mut w, "seed", args.seed)?;
    for (name, block, seq) in &results {
        write_solver_meta(&mut w, block, &format!("block_{name}"))?;
        meta(
            &mut w,
            &format!("sequential_iterations_{name}"),
            join(seq.iter().map(|h| h.iterations)),
        )?;
        meta(
            &mut w,
            &format!("sequential_total_{name}"),
            seq.iter().map(|h| h.iterations).sum::<usize>(),
        )?;
    }
    meta(&mut w, "wall_seconds", started.elapsed().as_secs_f64())?;
    residual_header(&mut w, false)?;
    for (name, block, seq) in &results {
        write_history_rows(&mut w, &format!("fig4_{name}_block"), block, false, 0)?;
        for (i, h) in seq.iter().enumerate() {
            write_history_rows(&mut w, &format!("fig4_{name}_seq"), h, false, i)?;
        }
    }
    w.flush()?;

    let mut all: Vec<&ConvergenceHistory> = Vec::new();
    for (_, block, seq) in &results {
        all.push(block);
        all.extend(seq.iter());
    }
    Ok(exit_code(&all))
}

// ---------------------------------------------------------------------------
// fig5 / fig6: eigenvector-mix sweeps.
// ---------------------------------------------------------------------------

fn cmd_figmix(args: FigMixArgs, kind: EigmixKind, name: &str) -> Result<i32, CliError> {
    let grid = args.grid.unwrap_or(if args.paper_scale { 200 } else { 50 });
    let trials = args.trials.unwrap_or(if args.paper_scale { 100 } else { 5 });
    let mvals = args.mvals.clone().unwrap_or_else(|| match kind {
        EigmixKind::SmallSmall => vec![0, 1, 5, 10, 25, 50, 75, 100],
        EigmixKind::SmallLarge => vec![0, 1, 5, 10, 25, 50, 75, 100, 150, 200],
    });

    let started = Instant::now();
    let model = Model::build(grid, args.sigma)?;
    if model.spec.n() < 400 {
        return Err(CliError::Usage(format!(
            "grid {grid} gives dimension {}, need at least 400 for the eigenvector mixes",
            model.spec.n()
        )));
    }
    for &m in &mvals {
        EigmixSpec { kind, m, trials, seed: args.seed }
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }

    let small = laplacian_eigenpairs(&model.spec, 200, EigenSelection::SmallestMagnitude);
    let large: Vec<Eigenpair> = if kind == EigmixKind::SmallLarge {
        laplacian_eigenpairs(&model.spec, 200, EigenSelection::LargestMagnitude)
    } else {
        Vec::new()
    };

    let mut rows = Vec::new();
    let mut any_unconverged = false;
    for &m in &mvals {
        let spec = EigmixSpec { kind, m, trials, seed: args.seed };
        let outcomes = run_trials(trials, |trial| {
            let op = model.op()?;
            let (b1, b2) = crate::problems::build_eigmix_rhs(&spec, trial, &small, &large);
            let cols_hat = vec![op.transform_rhs(&b1)?, op.transform_rhs(&b2)?];
            let config =
                block_config(args.tol, args.maxit, args.seed.wrapping_add(trial as u64));
            let b = BlockVector::from_columns(&cols_hat)?;
            let (_x, block) = solve(&op, &b, None, &config)?;
            let seq = sequential_runs(&op, &cols_hat, &config)?;
            let converged = block.converged.iter().all(|&c| c)
                && seq.iter().all(|h| h.converged.iter().all(|&c| c));
            let seq_total: usize = seq.iter().map(|h| h.iterations).sum();
            Ok((block.iterations, seq_total, converged))
        })?;
        let block_sum: usize = outcomes.iter().map(|o| o.0).sum();
        let seq_sum: usize = outcomes.iter().map(|o| o.1).sum();
        any_unconverged |= outcomes.iter().any(|o| !o.2);
        rows.push((m, block_sum as f64 / trials as f64, seq_sum as f64 / trials as f64));
    }

    let mut w = open_out(&args.out)?;
    model.head_meta(&mut w, name)?;
    meta(&mut w, "mix", match kind {
        EigmixKind::SmallSmall => "small_small",
        EigmixKind::SmallLarge => "small_large",
    })?;
    meta(&mut w, "trials", trials)?;
    meta(&mut w, "mvals", join(mvals.iter()))?;
    meta(&mut w, "tol", format_args!("{:e}", args.tol))?;
    meta(&mut w, "maxit", args.maxit)?;
    meta(&mut w, "seed", args.seed)?;
    meta(&mut w, "any_unconverged", any_unconverged)?;
    meta(&mut w, "wall_seconds", started.elapsed().as_secs_f64())?;
    writeln!(w, "m,avg_block_iters,avg_sequential_iters")?;
    for (m, ab, asq) in rows {
        writeln!(w, "{m},{ab},{asq}")?;
    }
    w.flush()?;
    Ok(0)
}
