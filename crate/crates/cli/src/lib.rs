//! Command-line front end for the `sparse-pca` library.
//!
//! Exit codes: 0 on success, 1 on numerical or input failures (with a JSON
//! diagnostic on stderr), 2 on usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sparse_pca::certificates::{certify_pattern, certify_pattern_scan, exhaustive_sparse_eig, SCAN_POINTS};
use sparse_pca::dspca::{dspca_solve, DspcaConfig};
use sparse_pca::experiments::{
    bound_sweep_with, make_gaussian_gram, make_rank_one_noise, sequential_components, spiked_study,
    BoundSweepOptions, NoiseScale, ScoreMethod, SpikeSigns, SpikedStudy,
};
use sparse_pca::greedy::{penalized_path, PathMethod};
use sparse_pca::io::{
    load_matrix, log_returns, write_atomic, BoundsReport, ComponentReport, InputKind, LoadedMatrix, RunParams,
    RunReport,
};
use sparse_pca::linalg::square_root_factor;
use sparse_pca::{pattern_solution, SparseComponent, SparsityPattern, SpcaError, SymmetricMatrix};

pub const SEED_ENV: &str = "SPARSE_PCA_SEED";

#[derive(Parser, Debug)]
#[command(name = "sparse-pca", version, about = "Sparse principal component analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute one sparse component.
    Solve(SolveArgs),
    /// Variance-versus-cardinality path as CSV.
    Path(PathArgs),
    /// Test a sparsity pattern for global optimality.
    Certify(CertifyArgs),
    /// Extract several components by solving and deflating in turn.
    Deflate(DeflateArgs),
    /// Exhaustive search for the best pattern of a given cardinality.
    Oracle(OracleArgs),
    /// Synthetic experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// CSV file, optionally with a header row of variable names.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "cov")]
    input_kind: KindArg,
    /// Treat a data file as prices and use their log returns.
    #[arg(long)]
    log_returns: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Cov,
    Data,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Dspca,
    Greedy,
    GreedyApprox,
    Threshold,
}

impl MethodArg {
    fn name(self) -> &'static str {
        match self {
            MethodArg::Dspca => "dspca",
            MethodArg::Greedy => "greedy",
            MethodArg::GreedyApprox => "greedy-approx",
            MethodArg::Threshold => "threshold",
        }
    }

    fn path_method(self) -> Option<PathMethod> {
        match self {
            MethodArg::Dspca => None,
            MethodArg::Greedy => Some(PathMethod::GreedyFull),
            MethodArg::GreedyApprox => Some(PathMethod::GreedyApprox { width: 1 }),
            MethodArg::Threshold => Some(PathMethod::Threshold),
        }
    }
}

#[derive(Args, Debug)]
struct Target {
    /// Penalty on the number of nonzero loadings.
    #[arg(long, group = "target")]
    rho: Option<f64>,
    /// Target cardinality.
    #[arg(long, group = "target")]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[command(flatten)]
    target: Target,
    /// Target duality gap for dspca.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PathArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "greedy")]
    method: MethodArg,
    /// Path length (defaults to every variable).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[command(flatten)]
    input: InputArgs,
    /// 1-based variable indices, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pattern: Vec<usize>,
    /// Penalty to test at; the midpoint of the admissible interval by default.
    #[arg(long)]
    rho_star: Option<f64>,
    /// Try evenly spaced penalties across the interval when the default fails.
    #[arg(long)]
    scan: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DeflateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    components: usize,
    #[arg(long, value_enum, default_value = "greedy")]
    method: MethodArg,
    #[command(flatten)]
    target: Target,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum ExperimentCommand {
    /// Support recovery in the spiked covariance model (CSV rows per trial).
    Spiked(SpikedArgs),
    /// Lower and upper bounds on sparse eigenvalues (CSV rows per cardinality).
    Bounds(BoundsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseArg {
    Sample,
    SqrtM,
}

#[derive(Args, Debug)]
struct SpikedArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "25,50,100,200,400")]
    m: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "sample")]
    noise: NoiseArg,
    /// Use positive spike entries instead of random signs.
    #[arg(long)]
    ones: bool,
    /// CSV destination (stdout by default).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary destination.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    Gaussian,
    RankOne,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    family: FamilyArg,
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Rows of the Gaussian factor.
    #[arg(long, default_value_t = 10)]
    q: usize,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 10)]
    grid_points: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Numeric(SpcaError),
}

impl From<SpcaError> for Failure {
    fn from(e: SpcaError) -> Self {
        Failure::Numeric(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numeric(e.into())
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct Diagnostic<'a> {
    error: &'a str,
    message: String,
}

fn error_kind(e: &SpcaError) -> String {
    let debug = format!("{e:?}");
    debug
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or_default()
        .to_string()
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(Failure::Numeric(e)) => {
            let kind = error_kind(&e);
            let diag = Diagnostic {
                error: &kind,
                message: e.to_string(),
            };
            let _ = writeln!(err, "{}", serde_json::to_string(&diag).unwrap_or_default());
            1
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> CmdResult {
    match command {
        Command::Solve(a) => solve(a, out),
        Command::Path(a) => path(a, out),
        Command::Certify(a) => certify(a, out),
        Command::Deflate(a) => deflate(a, out),
        Command::Oracle(a) => oracle(a, out),
        Command::Experiment(ExperimentCommand::Spiked(a)) => experiment_spiked(a, out),
        Command::Experiment(ExperimentCommand::Bounds(a)) => experiment_bounds(a, out),
    }
}

struct Input {
    sigma: SymmetricMatrix,
    names: Option<Vec<String>>,
}

fn read_input(args: &InputArgs) -> CmdResult<Input> {
    let kind = match args.input_kind {
        KindArg::Cov => InputKind::Covariance,
        KindArg::Data => InputKind::Data,
    };
    if args.log_returns && kind != InputKind::Data {
        return Err(Failure::Usage("--log-returns requires --input-kind data".into()));
    }
    let loaded = match load_matrix(&args.input, kind)? {
        LoadedMatrix::Data(d) if args.log_returns => LoadedMatrix::Data(log_returns(&d)?),
        other => other,
    };
    Ok(Input {
        sigma: loaded.covariance()?,
        names: loaded.names().map(<[String]>::to_vec),
    })
}

fn emit(out: &mut dyn Write, dest: Option<&Path>, contents: &str) -> CmdResult {
    match dest {
        Some(p) => write_atomic(p, contents.as_bytes())?,
        None => out.write_all(contents.as_bytes())?,
    }
    Ok(())
}

fn emit_report(out: &mut dyn Write, dest: Option<&Path>, report: &RunReport) -> CmdResult {
    let mut json = report.to_json()?;
    json.push('\n');
    emit(out, dest, &json)
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn check_k(k: usize, n: usize) -> CmdResult {
    if k == 0 || k > n {
        return Err(Failure::Usage(format!("--k must be between 1 and {n}")));
    }
    Ok(())
}

struct Solved {
    component: SparseComponent,
    bounds: BoundsReport,
    iterations: Option<usize>,
}

fn solve_one(
    sigma: &SymmetricMatrix,
    method: MethodArg,
    target: &Target,
    epsilon: f64,
    max_iter: Option<usize>,
) -> CmdResult<Solved> {
    match (method.path_method(), target.rho, target.k) {
        (None, Some(rho), _) => {
            let mut cfg = DspcaConfig::new(rho, epsilon);
            cfg.max_iter = max_iter;
            let res = dspca_solve(sigma, &cfg)?;
            Ok(Solved {
                component: res.component,
                bounds: BoundsReport {
                    gap: Some(res.gap),
                    upper: Some(res.dual_value.max(0.0)),
                    certified: None,
                },
                iterations: Some(res.iterations),
            })
        }
        (None, None, _) => Err(Failure::Usage("dspca needs --rho".into())),
        (Some(pm), Some(rho), _) => {
            let (component, _) = penalized_path(sigma, rho, pm)?;
            let certified = if component.is_zero() {
                None
            } else {
                let a = square_root_factor(sigma)?;
                match certify_pattern(&a, &component.support, Some(rho)) {
                    Ok(r) => Some(r.certified),
                    Err(SpcaError::DegenerateDenominator { .. }) => Some(false),
                    Err(e) => return Err(e.into()),
                }
            };
            Ok(Solved {
                component,
                bounds: BoundsReport {
                    certified,
                    ..Default::default()
                },
                iterations: None,
            })
        }
        (Some(pm), None, Some(k)) => {
            check_k(k, sigma.n())?;
            let path = pm.path(sigma, k)?;
            let component = path
                .component_at(k)
                .cloned()
                .ok_or_else(|| Failure::Usage(format!("path stopped before cardinality {k}")))?;
            let a = square_root_factor(sigma)?;
            let reports = certify_pattern_scan(&a, &component.support, SCAN_POINTS)?;
            Ok(Solved {
                component,
                bounds: BoundsReport {
                    certified: Some(reports.iter().any(|r| r.certified)),
                    ..Default::default()
                },
                iterations: None,
            })
        }
        (Some(_), None, None) => Err(Failure::Usage("either --rho or --k is required".into())),
    }
}

fn solve(args: SolveArgs, out: &mut dyn Write) -> CmdResult {
    let start = Instant::now();
    let input = read_input(&args.input)?;
    let solved = solve_one(&input.sigma, args.method, &args.target, args.epsilon, args.max_iter)?;
    let dspca = args.method == MethodArg::Dspca;
    let report = RunReport {
        method: args.method.name().into(),
        params: RunParams {
            rho: args.target.rho,
            k: args.target.k,
            epsilon: dspca.then_some(args.epsilon),
            iterations: solved.iterations,
            ..Default::default()
        },
        seed: args.seed,
        components: vec![ComponentReport::from_component(&solved.component, input.names.as_deref())],
        bounds: solved.bounds,
        timing_ms: elapsed_ms(start),
    };
    emit_report(out, args.out.as_deref(), &report)
}

fn path(args: PathArgs, out: &mut dyn Write) -> CmdResult {
    let input = read_input(&args.input)?;
    let n = input.sigma.n();
    let k = args.k.unwrap_or(n);
    check_k(k, n)?;
    let pm = args
        .method
        .path_method()
        .ok_or_else(|| Failure::Usage("path supports greedy, greedy-approx and threshold".into()))?;
    let path = pm.path(&input.sigma, k)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cardinality", "variance", "added", "name"])
        .map_err(csv_error)?;
    for (step, (&v, &i)) in path.variances.iter().zip(&path.added).enumerate() {
        let name = input.names.as_ref().map_or("", |n| n[i].as_str());
        w.write_record([
            (step + 1).to_string(),
            v.to_string(),
            (i + 1).to_string(),
            name.to_string(),
        ])
        .map_err(csv_error)?;
    }
    emit(out, args.out.as_deref(), &csv_text(w)?)
}

fn csv_error(e: csv::Error) -> Failure {
    Failure::Numeric(SpcaError::Io(std::io::Error::other(e)))
}

fn csv_text(w: csv::Writer<Vec<u8>>) -> CmdResult<String> {
    let bytes = w.into_inner().map_err(|e| Failure::Numeric(SpcaError::Io(e.into_error())))?;
    String::from_utf8(bytes).map_err(|e| Failure::Numeric(SpcaError::Io(std::io::Error::other(e))))
}

fn certify(args: CertifyArgs, out: &mut dyn Write) -> CmdResult {
    let start = Instant::now();
    let input = read_input(&args.input)?;
    let n = input.sigma.n();
    let pattern = SparsityPattern::from_one_based(&args.pattern, n)?;
    let a = square_root_factor(&input.sigma)?;
    let mut report = certify_pattern(&a, &pattern, args.rho_star)?;
    if !report.certified && args.scan && args.rho_star.is_none() {
        if let Some(r) = certify_pattern_scan(&a, &pattern, SCAN_POINTS)?
            .into_iter()
            .find(|r| r.certified)
        {
            report = r;
        }
    }
    let component = pattern_solution(&input.sigma, &pattern, report.rho_star)?;
    let run = RunReport {
        method: "certify".into(),
        params: RunParams {
            rho_star: Some(report.rho_star),
            ..Default::default()
        },
        seed: None,
        components: vec![ComponentReport::from_component(&component, input.names.as_deref())],
        bounds: BoundsReport {
            gap: report.eig_gap_lhs.map(|l| l - report.eig_gap_rhs),
            upper: report.upper_bound(),
            certified: Some(report.certified),
        },
        timing_ms: elapsed_ms(start),
    };
    emit_report(out, args.out.as_deref(), &run)
}

fn deflate(args: DeflateArgs, out: &mut dyn Write) -> CmdResult {
    let start = Instant::now();
    let input = read_input(&args.input)?;
    if args.components == 0 {
        return Err(Failure::Usage("--components must be at least 1".into()));
    }
    let mut usage = None;
    let components = sequential_components(&input.sigma, args.components, |s| {
        match solve_one(s, args.method, &args.target, args.epsilon, None) {
            Ok(solved) => Ok(solved.component),
            Err(Failure::Numeric(e)) => Err(e),
            Err(Failure::Usage(msg)) => {
                usage = Some(msg);
                Err(SpcaError::InvalidConfig("usage".into()))
            }
        }
    });
    let components = match (components, usage) {
        (_, Some(msg)) => return Err(Failure::Usage(msg)),
        (c, None) => c?,
    };
    let report = RunReport {
        method: format!("deflate-{}", args.method.name()),
        params: RunParams {
            rho: args.target.rho,
            k: args.target.k,
            ..Default::default()
        },
        seed: None,
        components: components
            .iter()
            .map(|c| ComponentReport::from_component(c, input.names.as_deref()))
            .collect(),
        bounds: BoundsReport::default(),
        timing_ms: elapsed_ms(start),
    };
    emit_report(out, args.out.as_deref(), &report)
}

fn oracle(args: OracleArgs, out: &mut dyn Write) -> CmdResult {
    let start = Instant::now();
    let input = read_input(&args.input)?;
    check_k(args.k, input.sigma.n())?;
    let (_, pattern) = exhaustive_sparse_eig(&input.sigma, args.k)?;
    let mut component = pattern_solution(&input.sigma, &pattern, 0.0)?;
    component.penalized_objective = None;
    let report = RunReport {
        method: "exhaustive".into(),
        params: RunParams {
            k: Some(args.k),
            ..Default::default()
        },
        seed: None,
        components: vec![ComponentReport::from_component(&component, input.names.as_deref())],
        bounds: BoundsReport::default(),
        timing_ms: elapsed_ms(start),
    };
    emit_report(out, args.out.as_deref(), &report)
}

fn experiment_spiked(args: SpikedArgs, out: &mut dyn Write) -> CmdResult {
    if args.k == 0 || args.k >= args.n {
        return Err(Failure::Usage("need 1 <= k < n".into()));
    }
    let mut study = SpikedStudy::new(args.n, args.k, args.m.clone(), args.trials, args.seed);
    if let Some(methods) = &args.methods {
        study.methods = methods
            .iter()
            .map(|m| m.parse::<ScoreMethod>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    study.noise = match args.noise {
        NoiseArg::Sample => NoiseScale::SampleMean,
        NoiseArg::SqrtM => NoiseScale::SqrtM,
    };
    if args.ones {
        study.signs = SpikeSigns::Ones;
    }
    let table = spiked_study(&study)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["m", "method", "trial", "seed", "auroc"]).map_err(csv_error)?;
    for r in &table.rows {
        w.write_record([
            r.m.to_string(),
            r.method.name().to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.auroc.to_string(),
        ])
        .map_err(csv_error)?;
    }
    for s in &table.summary {
        w.write_record([
            s.m.to_string(),
            s.method.name().to_string(),
            "mean".to_string(),
            args.seed.to_string(),
            s.mean_auroc.to_string(),
        ])
        .map_err(csv_error)?;
    }
    emit(out, args.out.as_deref(), &csv_text(w)?)?;
    if let Some(p) = &args.summary {
        #[derive(Serialize)]
        struct Summary<'a> {
            study: &'a SpikedStudy,
            summary: &'a [sparse_pca::experiments::StudySummary],
        }
        let json = serde_json::to_string_pretty(&Summary {
            study: &study,
            summary: &table.summary,
        })
        .map_err(SpcaError::from)?;
        write_atomic(p, json.as_bytes())?;
    }
    Ok(())
}

fn experiment_bounds(args: BoundsArgs, out: &mut dyn Write) -> CmdResult {
    let sigma = match args.family {
        FamilyArg::Gaussian => make_gaussian_gram(args.n, args.q, args.seed)?,
        FamilyArg::RankOne => make_rank_one_noise(args.n, args.seed)?,
    };
    let k_max = args.k_max.unwrap_or(args.n);
    check_k(k_max, args.n)?;
    let opts = BoundSweepOptions {
        grid_points: args.grid_points,
        ..Default::default()
    };
    let sweep = bound_sweep_with(&sigma, k_max, &opts)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "k",
        "exhaustive",
        "greedy_full",
        "greedy_approx",
        "dspca_upper",
        "certificate_upper",
        "best_upper",
    ])
    .map_err(csv_error)?;
    for (i, k) in sweep.cardinalities.iter().enumerate() {
        w.write_record([
            k.to_string(),
            sweep.exhaustive[i].to_string(),
            sweep.greedy_full[i].to_string(),
            sweep.greedy_approx[i].to_string(),
            sweep.dspca_upper[i].to_string(),
            sweep.certificate_upper[i].map_or(String::new(), |v| v.to_string()),
            sweep.best_upper(i).to_string(),
        ])
        .map_err(csv_error)?;
    }
    emit(out, args.out.as_deref(), &csv_text(w)?)
}
