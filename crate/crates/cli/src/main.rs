use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use lsc_core::bench::{run_sweep, run_table1, sweep_csv, table1_csv, AxisGrid, SuccessRule, SweepMethod, SweepSpec, Table1Params};
use lsc_core::error::{LscError, Result};
use lsc_core::io;
use lsc_core::l1_solvers::{oracle_solve, SolverConfig};
use lsc_core::mat_core::DenseMatrix;
use lsc_core::pcp::{default_gamma, pcp_decompose, pcp_outlier_decompose, row_lambda, Lambda};
use lsc_core::randomized::{randomized_decompose, RandomizedResult, SketchConfig};
use lsc_core::sa::{sa_decompose, SaConfig};
use lsc_core::synth::{generate_instance, mix64, ModelParams};
use lsc_core::theory::{lemma1_conditions, theorem2_conditions};

const RESAMPLE_ATTEMPTS: u64 = 3;

#[derive(Parser, Debug)]
#[command(name = "lsc", version, about = "Low-rank + sparse + column-outlier matrix decomposition")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Key-value file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic instance and write it to the output directory.
    Generate(GenerateArgs),
    /// Decompose a data matrix.
    Decompose(DecomposeArgs),
    /// Evaluate the sufficient conditions for one column of an instance.
    Verify(VerifyArgs),
    /// Run a Monte Carlo sweep over one or two model parameters.
    Sweep(SweepArgs),
    /// Sparse-recovery table for outlier pursuit across ranks.
    Table1(Table1Args),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    n1: usize,
    #[arg(long)]
    n2: usize,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 1)]
    clusters: usize,
    #[arg(long, default_value_t = 1.0)]
    outlier_scale: f64,
    /// Put the outliers in the first K columns.
    #[arg(long)]
    leading: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Pcp,
    PcpL12,
    Sa,
    Randomized,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        if let Some(t) = self.tol {
            cfg.rel_tol = t;
        }
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
        cfg
    }
}

#[derive(Args, Debug, Clone)]
struct DetectArgs {
    /// Sparse-representation weight (unit-norm columns).
    #[arg(long)]
    sa_lambda: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    mag_threshold: f64,
    #[arg(long, visible_alias = "fraction-threshold", default_value_t = 0.4)]
    frac_threshold: f64,
}

impl DetectArgs {
    fn config(&self, solver: SolverConfig) -> SaConfig {
        SaConfig {
            lambda: self.sa_lambda,
            mag_threshold: self.mag_threshold,
            outlier_fraction_threshold: self.frac_threshold,
            solver,
            ..SaConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    method: Method,
    /// Data matrix CSV, or an instance directory containing D.csv.
    #[arg(long)]
    input: PathBuf,
    /// Entrywise weight; a number or `auto`. For `sa` it sets the representation weight.
    #[arg(long)]
    lambda: Option<Lambda>,
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    detect: DetectArgs,
    #[arg(long)]
    m1: Option<usize>,
    #[arg(long)]
    m2: Option<usize>,
    #[arg(long)]
    rank_hint: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Condition {
    Lemma1,
    Theorem2,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    condition: Condition,
    /// Instance directory; L.csv plays the role of B and S.csv of S.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = 0)]
    col: usize,
    #[arg(long, default_value_t = 2.0)]
    t1: f64,
    #[arg(long, default_value_t = 2.0)]
    t2: f64,
    /// Sampled directions for the infimum in more than two dimensions.
    #[arg(long, default_value_t = 10_000)]
    dirs: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// JSON sweep specification; the flags below are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// First axis, as `name=v1,v2,...` with name in r, rho, k, n1, n2, m1, m2.
    #[arg(long)]
    axis1: Option<AxisGrid>,
    #[arg(long)]
    axis2: Option<AxisGrid>,
    #[arg(long, default_value = "sa")]
    method: SweepMethod,
    /// outlier_exact, sketch_recovery or log_error_below:<x>.
    #[arg(long, default_value = "outlier_exact")]
    rule: SuccessRule,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 120)]
    n1: usize,
    #[arg(long, default_value_t = 120)]
    n2: usize,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    #[arg(long, default_value_t = 0.01)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    m1: usize,
    #[arg(long, default_value_t = 0)]
    m2: usize,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    detect: DetectArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct Table1Args {
    #[arg(long, default_value_t = 200)]
    n1: usize,
    #[arg(long, default_value_t = 400)]
    n2: usize,
    #[arg(long, default_value_t = 0.01)]
    rho: f64,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,15")]
    ranks: Vec<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match with_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::command().try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Appends `--key value` pairs from the config file for flags not given on the
/// command line. Keys use flag spelling, with `_` accepted for `-`.
fn with_config(mut argv: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let pos = argv.iter().position(|a| a == "--config");
    let path = match pos {
        Some(i) => argv.get(i + 1).ok_or("--config needs a file")?.clone(),
        None => match argv.iter().find_map(|a| a.to_str().and_then(|s| s.strip_prefix("--config="))) {
            Some(p) => p.into(),
            None => return Ok(argv),
        },
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", Path::new(&path).display()))?;
    let given: HashSet<String> = argv
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let cmd = Cli::command();
    let sub_name = argv.iter().skip(1).filter_map(|a| a.to_str()).find(|a| cmd.find_subcommand(a).is_some());
    let flags_of = |c: &clap::Command| -> Vec<(String, bool)> {
        c.get_arguments()
            .filter_map(|a| a.get_long().map(|l| (l.to_string(), matches!(a.get_action(), clap::ArgAction::SetTrue))))
            .collect()
    };
    let mut known = flags_of(&cmd);
    if let Some(sub) = sub_name.and_then(|s| cmd.find_subcommand(s)) {
        known.extend(flags_of(sub));
    }
    let everywhere: HashSet<String> = cmd.get_subcommands().flat_map(|s| flags_of(s).into_iter().map(|(f, _)| f)).collect();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| format!("config line {}: expected key = value", n + 1))?;
        let key = key.replace('_', "-");
        if key == "config" || given.contains(&key) {
            continue;
        }
        match known.iter().find(|(f, _)| *f == key) {
            Some((_, true)) => match value {
                "true" => argv.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(format!("config line {}: '{key}' takes true or false", n + 1)),
            },
            Some((_, false)) => {
                argv.push(format!("--{key}").into());
                argv.push(value.into());
            }
            None if everywhere.contains(&key) => {}
            None => return Err(format!("config line {}: unknown key '{key}'", n + 1)),
        }
    }
    Ok(argv)
}

/// Prints a line, ignoring a closed stdout.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Generate(a) => generate(cli, a),
        Command::Decompose(a) => decompose(cli, a),
        Command::Verify(a) => verify(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Table1(a) => table1(cli, a),
    }
}

fn generate(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    let params = ModelParams {
        sparse_amplitude: a.amplitude,
        num_clusters: a.clusters,
        leading_outliers: a.leading,
        outlier_scale: a.outlier_scale,
        ..ModelParams::new(a.n1, a.n2, a.rank, a.rho, a.k, cli.seed)
    };
    let inst = generate_instance(&params)?;
    io::save_instance(&cli.out, &inst)?;
    emit(&json!({ "out": cli.out, "outliers": inst.outlier_indices }).to_string());
    Ok(())
}

fn decompose(cli: &Cli, a: &DecomposeArgs) -> Result<()> {
    let d = io::load_data(&a.input)?;
    let (n1, n2) = (d.rows(), d.cols());
    let solver = a.solver.config();
    let out = &cli.out;
    let diagnostics = match a.method {
        Method::Pcp => {
            let lambda = a.lambda.unwrap_or(Lambda::Auto).resolve(n1, n2);
            let res = pcp_decompose(&d, lambda, &solver)?;
            io::save_matrix(&out.join("L.csv"), &res.low_rank)?;
            io::save_matrix(&out.join("S.csv"), &res.sparse)?;
            io::save_json(&out.join("outliers.json"), &Vec::<usize>::new())?;
            json!({
                "method": "pcp", "lambda": lambda, "iterations": res.iterations, "converged": res.converged,
                "constraint_residual": res.constraint_residual, "rank": res.reported_rank(), "nnz": res.reported_nnz(),
            })
        }
        Method::PcpL12 => {
            let lambda = a.lambda.map(|l| l.resolve(n1, n2)).unwrap_or_else(|| row_lambda(n1));
            let gamma = a.gamma.unwrap_or_else(|| default_gamma(n1, n2));
            let res = pcp_outlier_decompose(&d, lambda, gamma, &solver)?;
            io::save_matrix(&out.join("L.csv"), &res.low_rank)?;
            io::save_matrix(&out.join("S.csv"), &res.sparse)?;
            io::save_matrix(&out.join("C.csv"), &res.column_part)?;
            let cols = res.reported_columns();
            io::save_json(&out.join("outliers.json"), &cols)?;
            json!({
                "method": "pcp-l12", "lambda": lambda, "gamma": gamma, "iterations": res.iterations,
                "converged": res.converged, "constraint_residual": res.constraint_residual, "rank": res.reported_rank(),
            })
        }
        Method::Sa => {
            let mut cfg = a.detect.config(solver);
            if let Some(Lambda::Value(v)) = a.lambda {
                cfg.lambda = Some(v);
            }
            let dec = sa_decompose(&d, &cfg)?;
            io::save_matrix(&out.join("L.csv"), &dec.low_rank)?;
            io::save_matrix(&out.join("S.csv"), &dec.sparse)?;
            io::save_json(&out.join("outliers.json"), &dec.outliers)?;
            io::write_certificates(fs::File::create(out.join("certificates.csv"))?, &dec.report)?;
            json!({
                "method": "sa", "lambda": dec.report.lambda, "outliers": dec.outliers.len(),
                "all_converged": dec.report.all_converged(), "pcp_iterations": dec.pcp_iterations,
                "pcp_converged": dec.pcp_converged, "pcp_constraint_residual": dec.pcp_constraint_residual,
            })
        }
        Method::Randomized => {
            let (m1, m2) = match (a.m1, a.m2) {
                (Some(m1), Some(m2)) => (m1, m2),
                _ => return Err(LscError::InvalidInput("randomized decomposition needs --m1 and --m2".into())),
            };
            let mut cfg = SketchConfig::new(m1, m2, cli.seed);
            cfg.sa = a.detect.config(solver);
            cfg.rank_hint = a.rank_hint;
            let (res, seed) = randomized_with_retries(&d, cfg)?;
            io::save_matrix(&out.join("L.csv"), &res.low_rank)?;
            io::save_matrix(&out.join("S.csv"), &res.sparse)?;
            io::save_matrix(&out.join("U_hat.csv"), &res.basis_u_hat)?;
            io::save_json(&out.join("outliers.json"), &res.outlier_indices)?;
            json!({ "method": "randomized", "seed": seed, "m1": m1, "m2": m2, "sketch": res.diagnostics })
        }
    };
    io::save_json(&out.join("diagnostics.json"), &diagnostics)?;
    emit(&diagnostics.to_string());
    Ok(())
}

/// Retries a sketch that saw no inliers with derived seeds.
fn randomized_with_retries(d: &DenseMatrix, mut cfg: SketchConfig) -> Result<(RandomizedResult, u64)> {
    let base = cfg.seed;
    let mut attempt = 0;
    loop {
        match randomized_decompose(d, &cfg) {
            Err(LscError::ResampleNeeded { seed, reason }) if attempt < RESAMPLE_ATTEMPTS => {
                attempt += 1;
                eprintln!("seed {seed}: {reason}; resampling");
                cfg.seed = mix64(base, 1000 + attempt);
            }
            other => return other.map(|r| (r, cfg.seed)),
        }
    }
}

fn verify(cli: &Cli, a: &VerifyArgs) -> Result<()> {
    let b = io::load_matrix(&a.instance.join("L.csv"))?;
    let s = io::load_matrix(&a.instance.join("S.csv"))?;
    let report = match a.condition {
        Condition::Lemma1 => lemma1_conditions(&b, &s, a.col, a.t1, a.t2)?,
        Condition::Theorem2 => {
            if a.col >= b.cols() {
                return Err(LscError::InvalidInput(format!("column {} out of range", a.col)));
            }
            let mut v = vec![0.0; b.cols()];
            v[a.col] = 1.0;
            let oracle = oracle_solve(&b, &s, &v, &SolverConfig::default())?;
            theorem2_conditions(&b, &s, &v, &oracle.solution, a.dirs, cli.seed)?
        }
    };
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(cli.out.join("conditions.json"), format!("{text}\n"))?;
    emit(&text);
    Ok(())
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => io::load_json::<SweepSpec>(path)?,
        None => {
            let axis1 = a.axis1.clone().ok_or_else(|| LscError::InvalidInput("sweep needs --axis1 or --spec".into()))?;
            let fixed = ModelParams::new(a.n1, a.n2, a.rank, a.rho, a.k, 0);
            let solver = a.solver.config();
            SweepSpec {
                axis2: a.axis2.clone(),
                trials_per_cell: a.trials,
                base_seed: cli.seed,
                sa: a.detect.config(solver.clone()),
                m1: a.m1,
                m2: a.m2,
                lambda: a.lambda,
                gamma: a.gamma,
                solver,
                ..SweepSpec::new(axis1, fixed, a.method, a.rule)
            }
        }
    };
    let result = run_sweep(&spec)?;
    let csv = sweep_csv(&result);
    fs::write(cli.out.join("sweep.csv"), &csv)?;
    io::save_json(&cli.out.join("sweep.json"), &json!({ "spec": spec, "result": result }))?;
    emit(csv.trim_end());
    Ok(())
}

fn table1(cli: &Cli, a: &Table1Args) -> Result<()> {
    let params = Table1Params {
        n1: a.n1,
        n2: a.n2,
        rho: a.rho,
        num_outliers_k: a.k,
        ranks: a.ranks.clone(),
        seed: cli.seed,
        lambda: a.lambda,
        gamma: a.gamma,
        solver: a.solver.config(),
    };
    let rows = run_table1(&params)?;
    let csv = table1_csv(&rows);
    fs::write(cli.out.join("table1.csv"), &csv)?;
    emit(csv.trim_end());
    Ok(())
}
