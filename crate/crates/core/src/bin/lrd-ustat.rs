use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use lrd_ustat::detect::{detect, DetectConfig};
use lrd_ustat::hermite::{coefficient_table, summability_diagnostic, CoeffOptions, CoeffSource};
use lrd_ustat::kernel::KernelSpec;
use lrd_ustat::limit_law::{
    critical_values, limit_thm1, simulate_fbm, simulate_hermite, uniform_grid, JointHermiteEnsemble, TableCache,
    DEFAULT_GRID_POINTS, DEFAULT_N_AUX, DEFAULT_REPS,
};
use lrd_ustat::lrd_sim::{
    read_values_binary, read_values_csv, simulate_gaussian, subordinate, write_values_binary, write_values_csv,
    CovarianceFamily, LrdParams, Subordinator, TargetLaw,
};
use lrd_ustat::verify::{check_reduction, check_variance, check_weak_convergence, projection, ExperimentReport};
use lrd_ustat::{par, rng, Error, Result};

const DEFAULT_LEVELS: [f64; 3] = [0.9, 0.95, 0.99];

/// Two-sample U-statistic processes for long-range dependent data.
#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(name = "lrd-ustat", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct GlobalOpts {
    /// Random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo replications (subcommand-specific default).
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Quantile levels, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
enum Command {
    /// Simulate a stationary Gaussian LRD path, optionally subordinated.
    Simulate(SimulateArgs),
    /// Hermite coefficients a_kl of a kernel.
    Coeffs(CoeffsArgs),
    /// Sup-type change-point test on a data file.
    Detect(DetectArgs),
    /// Critical values of the limit of a kernel's sup-statistic.
    Limit(LimitArgs),
    /// Monte Carlo checks of the limit theorems.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Re-run the configuration stored in a sidecar file.
    Rerun { sidecar: PathBuf },
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct ModelArgs {
    #[arg(long, default_value = "fgn")]
    family: CovarianceFamily,
    /// Long-memory exponent D ∈ (0, 1).
    #[arg(long = "D")]
    #[serde(rename = "D")]
    d: Option<f64>,
}

impl ModelArgs {
    fn params(&self) -> Result<LrdParams> {
        let d = self
            .d
            .ok_or_else(|| Error::Parameter("--D is required: D ∈ (0, 1) must be supplied".into()))?;
        LrdParams::new(d, self.family)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: usize,
    /// identity, exp[:rate], pareto:shape,scale, laplace[:scale] or uniform:low,high
    #[arg(long, default_value = "identity")]
    subordinator: String,
    /// Output file; `.bin` selects the binary format, anything else CSV.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct CoeffsArgs {
    #[arg(long)]
    kernel: KernelSpec,
    /// Maximal total degree k + l.
    #[arg(long = "Q", default_value_t = 8)]
    q: usize,
    /// quadrature, closedform or montecarlo (default: best available)
    #[arg(long)]
    source: Option<String>,
    #[arg(long, default_value_t = 200)]
    quad_order: usize,
    #[arg(long, default_value_t = 1_000_000)]
    mc_pairs: usize,
    /// Degrees Q at which to report the summability partial sums.
    #[arg(long, value_delimiter = ',')]
    summability: Option<Vec<usize>>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct DetectArgs {
    /// Data file: CSV with a `value` column, or the binary path format.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value = "wilcoxon")]
    kernel: KernelSpec,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid: usize,
    #[arg(long, default_value_t = DEFAULT_N_AUX)]
    n_aux: usize,
    /// Cache directory for limit tables (default: $LRD_USTAT_CACHE).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct LimitArgs {
    #[arg(long)]
    kernel: KernelSpec,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid: usize,
    #[arg(long, default_value_t = DEFAULT_N_AUX)]
    n_aux: usize,
    /// Also write the sample paths as CSV.
    #[arg(long)]
    paths_csv: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "lowercase")]
enum VerifyCommand {
    /// Variance of Σ H_k(ξ_i): exact, asymptotic and Monte Carlo.
    Variance {
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        model: VerifyModel,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Distance between the U-statistic process and its rank-m projection.
    Reduction {
        #[arg(long)]
        kernel: KernelSpec,
        #[command(flatten)]
        model: VerifyModel,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// KS distance between simulated sup-statistics and the limit.
    Weak {
        #[arg(long)]
        kernel: KernelSpec,
        #[command(flatten)]
        model: VerifyModel,
        #[arg(long)]
        n: usize,
        /// Replications of the limit ensemble.
        #[arg(long, default_value_t = 5000)]
        limit_reps: usize,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid: usize,
        /// Drive the limit with a different Hurst index (negative control).
        #[arg(long)]
        hurst_override: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Model arguments for `verify`, where the covariance family defaults to
/// the tweaked power law for the variance check examples.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
struct VerifyModel {
    #[arg(long)]
    family: Option<CovarianceFamily>,
    #[arg(long = "D")]
    #[serde(rename = "D")]
    d: Option<f64>,
}

impl VerifyModel {
    fn params(&self, default_family: CovarianceFamily) -> Result<LrdParams> {
        ModelArgs {
            family: self.family.unwrap_or(default_family),
            d: self.d,
        }
        .params()
    }
}

/// Resolved configuration echoed next to every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    tool: String,
    version: String,
    #[serde(flatten)]
    cli: Cli,
}

fn parse_subordinator(spec: &str) -> Result<Subordinator> {
    let spec = spec.trim().to_ascii_lowercase();
    let (head, arg) = match spec.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (spec.as_str(), None),
    };
    let nums: Vec<f64> = match arg {
        Some(a) => a
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad subordinator parameter '{v}'")))
            })
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let get = |i: usize, default: Option<f64>| {
        nums.get(i)
            .copied()
            .or(default)
            .ok_or_else(|| Error::Parameter(format!("subordinator '{spec}' is missing parameters")))
    };
    match head {
        "identity" => Ok(Subordinator::identity()),
        "exp" | "exponential" => Subordinator::quantile(TargetLaw::Exponential {
            rate: get(0, Some(1.0))?,
        }),
        "pareto" => Subordinator::quantile(TargetLaw::Pareto {
            shape: get(0, None)?,
            scale: get(1, Some(1.0))?,
        }),
        "laplace" => Subordinator::quantile(TargetLaw::Laplace {
            scale: get(0, Some(1.0))?,
        }),
        "uniform" => Subordinator::quantile(TargetLaw::Uniform {
            low: get(0, Some(0.0))?,
            high: get(1, Some(1.0))?,
        }),
        other => Err(Error::Parameter(format!(
            "unknown subordinator '{other}' (expected identity, exp, pareto, laplace or uniform)"
        ))),
    }
}

fn parse_source(s: &str) -> Result<CoeffSource> {
    match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "quadrature" => Ok(CoeffSource::Quadrature),
        "closedform" => Ok(CoeffSource::ClosedForm),
        "montecarlo" | "mc" => Ok(CoeffSource::MonteCarlo),
        other => Err(Error::Parameter(format!("unknown coefficient source '{other}'"))),
    }
}

fn read_data(path: &Path) -> Result<Vec<f64>> {
    let file = BufReader::new(File::open(path)?);
    if path.extension().is_some_and(|e| e == "bin") {
        read_values_binary(file)
    } else {
        read_values_csv(file)
    }
}

fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".run.json");
    PathBuf::from(name)
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Writes `result` to `output` plus its sidecar, or prints both to stdout.
fn emit<T: Serialize>(config: &RunConfig, output: Option<&Path>, result: &T) -> Result<()> {
    match output {
        Some(path) => {
            write_json_file(path, result)?;
            write_json_file(&sidecar_path(path), config)?;
            println!("wrote {}", path.display());
        }
        None => {
            let doc = json!({ "config": config, "result": result });
            let mut out = std::io::stdout().lock();
            writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
        }
    }
    Ok(())
}

fn levels(global: &GlobalOpts) -> Vec<f64> {
    global.levels.clone().unwrap_or_else(|| DEFAULT_LEVELS.to_vec())
}

fn cmd_simulate(config: &RunConfig, args: &SimulateArgs) -> Result<()> {
    let params = args.model.params()?;
    let seed = config.cli.global.seed;
    let path = simulate_gaussian(&params, args.n, seed)?;
    let g = parse_subordinator(&args.subordinator)?;
    let values = subordinate(&path.values, &g)?;
    match &args.output {
        Some(out) => {
            let w = BufWriter::new(File::create(out)?);
            if out.extension().is_some_and(|e| e == "bin") {
                write_values_binary(&values, w)?;
            } else {
                write_values_csv(&values, w)?;
            }
            write_json_file(&sidecar_path(out), config)?;
            println!("wrote {} ({} values)", out.display(), values.len());
        }
        None => write_values_csv(&values, std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_coeffs(config: &RunConfig, args: &CoeffsArgs) -> Result<()> {
    let kernel = args.kernel.build()?;
    let opts = CoeffOptions {
        source: args.source.as_deref().map(parse_source).transpose()?,
        quad_order: args.quad_order,
        mc_pairs: args.mc_pairs,
        seed: config.cli.global.seed,
    };
    let table = coefficient_table(&kernel, args.q, &opts)?;
    let mut doc = serde_json::to_value(table.to_json())?;
    if let Some(qs) = &args.summability {
        let report = summability_diagnostic(&kernel, qs).or_else(|_| summability_diagnostic(&table, qs))?;
        doc["summability"] = serde_json::to_value(report)?;
    }
    emit(config, args.output.as_deref(), &doc)
}

fn cache_for(dir: &Option<PathBuf>) -> Option<TableCache> {
    dir.as_ref().map(TableCache::new).or_else(TableCache::from_env)
}

fn cmd_detect(config: &RunConfig, args: &DetectArgs) -> Result<()> {
    let d = args.model.d.ok_or_else(|| {
        Error::Parameter("--D is required for detection; estimating D from the data is not supported".into())
    })?;
    let kernel = args.kernel.build()?;
    let data = read_data(&args.input)?;
    if data.len() < 2 {
        return Err(Error::Input(format!(
            "{} holds {} observation(s); at least 2 are needed for a split",
            args.input.display(),
            data.len()
        )));
    }
    let cfg = DetectConfig {
        d,
        family: args.model.family,
        levels: levels(&config.cli.global),
        reps: config.cli.global.reps.unwrap_or(DEFAULT_REPS),
        grid_points: args.grid,
        n_aux: args.n_aux,
        seed: config.cli.global.seed,
    };
    let cache = cache_for(&args.cache_dir);
    let report = detect(&data, &kernel, &cfg, cache.as_ref())?;
    for (i, (&level, &cv)) in report
        .critical_values
        .levels
        .iter()
        .zip(&report.critical_values.values)
        .enumerate()
    {
        eprintln!(
            "level {level}: critical value {cv:.6}, statistic {:.6} -> {}",
            report.statistic,
            if report.reject[i] { "reject" } else { "accept" }
        );
    }
    emit(config, args.output.as_deref(), &report)
}

fn cmd_limit(config: &RunConfig, args: &LimitArgs) -> Result<()> {
    let params = args.model.params()?;
    let kernel = args.kernel.build()?;
    let reps = config.cli.global.reps.unwrap_or(DEFAULT_REPS);
    let proj = projection(&kernel, &CoeffOptions::default())?;
    let grid = uniform_grid(args.grid);
    let seed = config.cli.global.seed;
    let joint = if proj.m == 1 {
        JointHermiteEnsemble::from_fbm(simulate_fbm(params.hurst(), &grid, reps, seed)?)
    } else {
        simulate_hermite(proj.m, params.d(), &grid, reps, args.n_aux, seed)?
    };
    let limit = limit_thm1(&proj.diagonal, params.d(), &joint, kernel.name())?;
    if let Some(p) = &args.paths_csv {
        limit.write_csv(BufWriter::new(File::create(p)?))?;
    }
    let table = critical_values(&limit, &levels(&config.cli.global))?;
    let summary = limit.summary(&table.levels)?;
    let doc = json!({
        "descriptor": summary.descriptor,
        "grid": summary.grid,
        "quantiles": summary.quantiles,
        "table": table,
    });
    emit(config, args.output.as_deref(), &doc)
}

fn finish_report(config: &RunConfig, output: Option<&Path>, report: &ExperimentReport) -> Result<()> {
    eprint!("{}", report.text_summary());
    if let Some(out) = output {
        let mut txt = out.as_os_str().to_owned();
        txt.push(".txt");
        std::fs::write(PathBuf::from(txt), report.text_summary())?;
    }
    emit(config, output, report)
}

fn cmd_verify(config: &RunConfig, cmd: &VerifyCommand) -> Result<()> {
    let seed = config.cli.global.seed;
    match cmd {
        VerifyCommand::Variance { k, model, n, output } => {
            let params = model.params(CovarianceFamily::Tweaked)?;
            let reps = config.cli.global.reps.unwrap_or(0);
            let report = check_variance(*k, &params, n, reps, seed)?;
            finish_report(config, output.as_deref(), &report)
        }
        VerifyCommand::Reduction {
            kernel,
            model,
            n,
            output,
        } => {
            let params = model.params(CovarianceFamily::Fgn)?;
            let reps = config.cli.global.reps.unwrap_or(200);
            let report = check_reduction(&kernel.build()?, &params, n, reps, seed)?;
            finish_report(config, output.as_deref(), &report)
        }
        VerifyCommand::Weak {
            kernel,
            model,
            n,
            limit_reps,
            grid,
            hurst_override,
            output,
        } => {
            let params = model.params(CovarianceFamily::Fgn)?;
            let kernel = kernel.build()?;
            let reps = config.cli.global.reps.unwrap_or(1000);
            let proj = projection(&kernel, &CoeffOptions::default())?;
            let g = uniform_grid(*grid);
            let limit_seed = rng::derive_seed(seed, "limit");
            let joint = match (proj.m, hurst_override) {
                (1, h) => {
                    let h = h.unwrap_or(params.hurst());
                    JointHermiteEnsemble::from_fbm(simulate_fbm(h, &g, *limit_reps, limit_seed)?)
                }
                (_, Some(_)) => {
                    return Err(Error::Unsupported(
                        "--hurst-override applies to rank-1 kernels only".into(),
                    ))
                }
                (m, None) => simulate_hermite(m, params.d(), &g, *limit_reps, DEFAULT_N_AUX, limit_seed)?,
            };
            let limit = limit_thm1(&proj.diagonal, params.d(), &joint, kernel.name())?;
            let report = check_weak_convergence(&kernel, &params, *n, reps, &limit, seed)?;
            finish_report(config, output.as_deref(), &report)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(Error::Parameter("--threads must be positive".into()));
        }
        par::set_threads(t);
    }
    if let Command::Rerun { sidecar } = &cli.command {
        let text = std::fs::read_to_string(sidecar)?;
        let stored: RunConfig = serde_json::from_str(&text)?;
        if matches!(stored.cli.command, Command::Rerun { .. }) {
            return Err(Error::Input("sidecar refers to another rerun".into()));
        }
        return run(stored.cli);
    }
    let config = RunConfig {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        cli: cli.clone(),
    };
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(&config, a),
        Command::Coeffs(a) => cmd_coeffs(&config, a),
        Command::Detect(a) => cmd_detect(&config, a),
        Command::Limit(a) => cmd_limit(&config, a),
        Command::Verify(v) => cmd_verify(&config, v),
        Command::Rerun { .. } => unreachable!("handled above"),
    }
}

/// A closed stdout (e.g. piping into `head`) is not an error.
fn is_broken_pipe(e: &Error) -> bool {
    let io = match e {
        Error::Io(io) => Some(io),
        Error::Csv(c) => match c.kind() {
            csv::ErrorKind::Io(io) => Some(io),
            _ => None,
        },
        Error::Json(j) => return j.io_error_kind() == Some(std::io::ErrorKind::BrokenPipe),
        _ => None,
    };
    io.is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
