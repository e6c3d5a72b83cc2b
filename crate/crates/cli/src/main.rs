use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rankmatch::asymptotics::{self, LocalMaxDiagnostic, QuadratureConfig};
use rankmatch::experiments::{self, RunConfig};
use rankmatch::format::to_json_pretty;
use rankmatch::{
    estimate, generate_signal, AsymptoticReport, Error, EstimateResult, Method, NoiseFamily, NoiseModel, RefineOpts,
    Result, Signal, Template,
};
use serde::Serialize;

const QUAD_NODES_VAR: &str = "RANKMATCH_QUAD_NODES";

/// Shift estimation for periodic templates with ranks.
#[derive(Parser)]
#[command(name = "rankmatch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the shift of a template in a signal (one value per line).
    Estimate(EstimateArgs),
    /// Write a synthetic signal and its truth sidecar.
    Generate(GenerateArgs),
    /// Asymptotic variances and relative efficiency for one template and noise.
    Asymptotics(AsymptoticsArgs),
    /// Relative efficiency for templates A, B, C under gaussian, t3 and cauchy noise, as CSV.
    Table1(Table1Args),
    /// Monte Carlo study; writes rows.csv, summary.json and hist.csv.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rank,
    Pearson,
    Both,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Rank => vec![Method::Rank],
            MethodArg::Pearson => vec![Method::Pearson],
            MethodArg::Both => Method::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Gaussian,
    T3,
    Cauchy,
}

impl From<NoiseArg> for NoiseFamily {
    fn from(n: NoiseArg) -> NoiseFamily {
        match n {
            NoiseArg::Gaussian => NoiseFamily::Gaussian,
            NoiseArg::T3 => NoiseFamily::StudentT3,
            NoiseArg::Cauchy => NoiseFamily::Cauchy,
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// Signal CSV, one observation per line.
    signal: PathBuf,
    /// A, B, C or a knots JSON file.
    #[arg(long, default_value = "A")]
    template: String,
    #[arg(long, value_enum, default_value = "rank")]
    method: MethodArg,
    /// Report the best grid shift without refinement.
    #[arg(long)]
    no_refine: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "A")]
    template: String,
    /// Omit for a noiseless signal.
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    theta_star: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Signal CSV to write; the truth goes next to it as `<name>.truth.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AsymptoticsArgs {
    #[arg(long, default_value = "A")]
    template: String,
    #[arg(long, value_enum, default_value = "gaussian")]
    noise: NoiseArg,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Also probe that zero maximizes the population criterion.
    #[arg(long)]
    check_max: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Table1Args {
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    template: Option<String>,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    theta_star: Option<f64>,
    /// Skip the asymptotic report and its predictions.
    #[arg(long)]
    no_asymptotics: bool,
    /// Output directory; summary.json goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Asymptotics(a) => cmd_asymptotics(a),
        Command::Table1(a) => cmd_table1(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn quadrature_config() -> Result<QuadratureConfig> {
    let mut cfg = QuadratureConfig::default();
    if let Ok(raw) = std::env::var(QUAD_NODES_VAR) {
        cfg.x_nodes = match raw.trim().parse::<usize>() {
            Ok(n) if n >= cfg.gl_order => n,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "{QUAD_NODES_VAR} must be an integer of at least {}, got `{raw}`",
                    cfg.gl_order
                )))
            }
        };
    }
    Ok(cfg)
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let template = Template::from_spec(&a.template)?;
    let file = fs::File::open(&a.signal)?;
    let signal = Signal::read_csv(file)?;
    let opts = RefineOpts {
        refine: !a.no_refine,
        ..RefineOpts::default()
    };
    let results: Vec<EstimateResult> = a
        .method
        .methods()
        .into_iter()
        .map(|m| estimate(&signal, &template, m, opts))
        .collect::<Result<_>>()?;
    let json = if results.len() == 1 {
        to_json_pretty(&results[0])?
    } else {
        to_json_pretty(&results)?
    };
    emit(&(json + "\n"), a.out.as_deref())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let template = Template::from_spec(&a.template)?;
    let noise = a.noise.map(|f| NoiseModel::new(f.into(), a.scale)).transpose()?;
    let signal = generate_signal(&template, a.theta_star, a.n, noise.as_ref(), a.seed)?;
    signal.save(&a.out)
}

#[derive(Serialize)]
struct ReportWithCheck {
    report: AsymptoticReport,
    local_max: LocalMaxDiagnostic,
}

fn cmd_asymptotics(a: AsymptoticsArgs) -> Result<()> {
    let template = Template::from_spec(&a.template)?;
    let noise = NoiseModel::new(a.noise.into(), a.scale)?;
    let cfg = quadrature_config()?;
    let report = asymptotics::report_with(&template, &noise, &cfg)?;
    let json = if a.check_max {
        let local_max = asymptotics::verify_local_max(&template, &noise, &cfg);
        to_json_pretty(&ReportWithCheck { report, local_max })?
    } else {
        to_json_pretty(&report)?
    };
    emit(&(json + "\n"), a.out.as_deref())
}

fn cmd_table1(a: Table1Args) -> Result<()> {
    let cfg = QuadratureConfig {
        error_estimate: false,
        ..quadrature_config()?
    };
    let rows = asymptotics::efficiency_table(&cfg)?;
    emit(&asymptotics::table_csv(&rows), a.out.as_deref())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::new("A", NoiseModel::gaussian(1.0)),
    };
    if let Some(t) = a.template {
        cfg.template = t;
    }
    if let Some(f) = a.noise {
        cfg.noise.family = f.into();
    }
    if let Some(s) = a.scale {
        cfg.noise.scale = s;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(m) = a.method {
        cfg.methods = m.methods();
    }
    if let Some(t) = a.theta_star {
        cfg.theta_star = t;
    }
    if a.no_asymptotics {
        cfg.asymptotics = false;
    }
    if std::env::var_os(QUAD_NODES_VAR).is_some() {
        cfg.quadrature.x_nodes = quadrature_config()?.x_nodes;
    }
    let result = experiments::run_monte_carlo(&cfg)?;
    match &a.out {
        Some(dir) => experiments::write_outputs(&result, dir),
        None => emit(&(experiments::summary_json(&result)? + "\n"), None),
    }
}
