//! Reproducible Monte Carlo studies of the shift estimators.
//!
//! Replicate `r` draws its noise from the stream `mix_seed(master_seed, r)`,
//! so results do not depend on how replicates are spread over workers.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{self, AsymptoticReport, QuadratureConfig};
use crate::error::{Error, Result};
use crate::format::{self, fmt_num, parse_num};
use crate::matcher::{estimate, wrap_signed, Method, RefineOpts};
use crate::noise::{mix_seed, NoiseModel};
use crate::sampling::generate_signal;
use crate::templates::Template;

/// Strictly increasing map applied to every generated signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distortion {
    Arctan,
    /// `x³ + x`
    Cubic,
    Exp,
}

impl Distortion {
    pub const ALL: [Distortion; 3] = [Distortion::Arctan, Distortion::Cubic, Distortion::Exp];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Distortion::Arctan => x.atan(),
            Distortion::Cubic => x * x * x + x,
            Distortion::Exp => x.exp(),
        }
    }
}

fn default_n() -> usize {
    2000
}

fn default_reps() -> usize {
    300
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_workers() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `A`, `B`, `C` or a path to a knots JSON file.
    pub template: String,
    pub noise: NoiseModel,
    #[serde(default)]
    pub theta_star: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub distortion: Option<Distortion>,
    /// Attach the asymptotic report and compare against its predictions.
    #[serde(default = "default_true")]
    pub asymptotics: bool,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub refine: RefineOpts,
}

impl RunConfig {
    pub fn new(template: &str, noise: NoiseModel) -> RunConfig {
        RunConfig {
            template: template.to_string(),
            noise,
            theta_star: 0.0,
            n: default_n(),
            reps: default_reps(),
            methods: default_methods(),
            master_seed: 0,
            workers: default_workers(),
            distortion: None,
            asymptotics: true,
            quadrature: QuadratureConfig::default(),
            refine: RefineOpts::default(),
        }
    }

    pub fn from_json_str(json: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        RunConfig::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.reps < 1 {
            return bad("reps must be at least 1".into());
        }
        if self.workers < 1 {
            return bad("workers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.theta_star) {
            return bad(format!("theta_star must lie in [0, 1), got {}", self.theta_star));
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(format!("method `{m}` listed twice"));
            }
        }
        if self.refine.tol.is_nan() || self.refine.tol <= 0.0 {
            return bad("refine.tol must be positive".into());
        }
        if self.quadrature.x_nodes < 1 || self.quadrature.gl_order < 1 || self.quadrature.z_panels < 1 {
            return bad("quadrature node counts must be positive".into());
        }
        self.noise.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub rep: usize,
    pub method: Method,
    pub theta_hat: f64,
    /// Distance on the circle between `theta_hat` and the true shift.
    pub abs_err: f64,
    /// `√n` times the signed error, taken in `(-1/2, 1/2]`.
    pub sqrtn_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub rep: usize,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub replicates: usize,
    pub mean_abs_err: f64,
    pub median_abs_err: f64,
    /// Sample variance of `√n (θ̂ - θ*)`.
    pub var_sqrtn_err: f64,
    #[serde(with = "format::extended_opt")]
    pub predicted_avar: Option<f64>,
    /// Kolmogorov–Smirnov distance to `N(0, predicted_avar)`, when finite.
    pub ks_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub rows: Vec<ReplicateRow>,
    pub failures: Vec<ReplicateFailure>,
    pub summaries: Vec<MethodSummary>,
    pub asymptotics: Option<AsymptoticReport>,
}

impl RunResult {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// `√n` errors of one method, in replicate order.
    pub fn sqrtn_errors(&self, method: Method) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.sqrtn_err)
            .collect()
    }
}

pub fn run_monte_carlo(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let template = Template::from_spec(&config.template)?;
    if template.is_constant() {
        return Err(Error::ConstantTemplate);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {} workers: {e}", config.workers)))?;
    let outcomes: Vec<Vec<std::result::Result<ReplicateRow, ReplicateFailure>>> = pool.install(|| {
        (0..config.reps)
            .into_par_iter()
            .map(|rep| run_replicate(config, &template, rep))
            .collect()
    });

    let mut rows = Vec::with_capacity(config.reps * config.methods.len());
    let mut failures = Vec::new();
    for outcome in outcomes.into_iter().flatten() {
        match outcome {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    if rows.is_empty() {
        let first = failures.first().map(|f| f.error.clone()).unwrap_or_default();
        return Err(Error::AllReplicatesFailed(first));
    }

    let report = if config.asymptotics {
        Some(asymptotics::report_with(&template, &config.noise, &config.quadrature)?)
    } else {
        None
    };
    let summaries = config
        .methods
        .iter()
        .map(|&m| summarize(m, &rows, report.as_ref()))
        .collect();
    Ok(RunResult {
        config: config.clone(),
        rows,
        failures,
        summaries,
        asymptotics: report,
    })
}

fn run_replicate(
    config: &RunConfig,
    template: &Template,
    rep: usize,
) -> Vec<std::result::Result<ReplicateRow, ReplicateFailure>> {
    let seed = mix_seed(config.master_seed, rep as u64);
    let fail = |method, e: Error| ReplicateFailure {
        rep,
        method,
        error: e.to_string(),
    };
    let signal = match generate_signal(template, config.theta_star, config.n, Some(&config.noise), seed) {
        Ok(s) => match config.distortion {
            Some(d) => s.map(|y| d.apply(y)),
            None => s,
        },
        Err(e) => {
            let msg = e.to_string();
            return config
                .methods
                .iter()
                .map(|&m| {
                    Err(ReplicateFailure {
                        rep,
                        method: m,
                        error: msg.clone(),
                    })
                })
                .collect();
        }
    };
    let root_n = (config.n as f64).sqrt();
    config
        .methods
        .iter()
        .map(|&method| {
            let est = estimate(&signal, template, method, config.refine).map_err(|e| fail(method, e))?;
            let err = wrap_signed(est.theta_hat - config.theta_star);
            Ok(ReplicateRow {
                rep,
                method,
                theta_hat: est.theta_hat,
                abs_err: err.abs(),
                sqrtn_err: root_n * err,
            })
        })
        .collect()
}

fn summarize(method: Method, rows: &[ReplicateRow], report: Option<&AsymptoticReport>) -> MethodSummary {
    let mine: Vec<&ReplicateRow> = rows.iter().filter(|r| r.method == method).collect();
    let mut abs: Vec<f64> = mine.iter().map(|r| r.abs_err).collect();
    let errs: Vec<f64> = mine.iter().map(|r| r.sqrtn_err).collect();
    let predicted_avar = report.map(|r| match method {
        Method::Rank => r.avar_rank,
        Method::Pearson => r.avar_pearson,
    });
    let ks = predicted_avar
        .filter(|v| v.is_finite() && *v > 0.0)
        .and_then(|v| ks_distance(&errs, v.sqrt()).ok());
    MethodSummary {
        method,
        replicates: mine.len(),
        mean_abs_err: mean(&abs),
        median_abs_err: median(&mut abs),
        var_sqrtn_err: sample_variance(&errs),
        predicted_avar,
        ks_distance: ks,
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Unbiased sample variance; NaN below two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Kolmogorov–Smirnov distance between the empirical law of `errors` and
/// `N(0, sigma²)`.
pub fn ks_distance(errors: &[f64], sigma: f64) -> Result<f64> {
    if errors.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "need at least 10 values, got {}",
            errors.len()
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    let mut xs = errors.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = 0.5 * libm::erfc(-x / (sigma * std::f64::consts::SQRT_2));
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Empirical efficiency of the rank estimator relative to Pearson.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub rank_var: f64,
    pub pearson_var: f64,
    /// `pearson_var / rank_var`.
    #[serde(with = "format::extended")]
    pub are: f64,
    /// Bootstrap standard error of `are` over paired replicates.
    #[serde(with = "format::extended")]
    pub bootstrap_se: f64,
    pub resamples: usize,
    pub pairs: usize,
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Pearson-to-rank variance ratio of `√n` errors over replicates where both
/// methods succeeded.
pub fn compare_methods(result: &RunResult) -> Result<Efficiency> {
    let by_rep = |m: Method| -> std::collections::BTreeMap<usize, f64> {
        result
            .rows
            .iter()
            .filter(|r| r.method == m)
            .map(|r| (r.rep, r.sqrtn_err))
            .collect()
    };
    let rank = by_rep(Method::Rank);
    let pearson = by_rep(Method::Pearson);
    if rank.is_empty() || pearson.is_empty() {
        return Err(Error::InvalidInput("both methods are needed for a comparison".into()));
    }
    let pairs: Vec<(f64, f64)> = rank
        .iter()
        .filter_map(|(rep, &r)| pearson.get(rep).map(|&p| (r, p)))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::InvalidInput("fewer than two paired replicates".into()));
    }
    let ratio = |sample: &[(f64, f64)]| {
        let r: Vec<f64> = sample.iter().map(|p| p.0).collect();
        let p: Vec<f64> = sample.iter().map(|p| p.1).collect();
        let (vr, vp) = (sample_variance(&r), sample_variance(&p));
        (vr, vp, vp / vr)
    };
    let (rank_var, pearson_var, are) = ratio(&pairs);

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(result.config.master_seed, u64::MAX));
    let mut boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut sample = vec![(0.0, 0.0); pairs.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for s in sample.iter_mut() {
            *s = pairs[rng.random_range(0..pairs.len())];
        }
        boot.push(ratio(&sample).2);
    }
    let bootstrap_se = sample_variance(&boot).sqrt();
    Ok(Efficiency {
        rank_var,
        pearson_var,
        are,
        bootstrap_se,
        resamples: BOOTSTRAP_RESAMPLES,
        pairs: pairs.len(),
    })
}

pub const HIST_BINS: usize = 64;

/// One histogram bin of `√n` errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistBin {
    pub method: Method,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// 64 equal bins over `±4` predicted standard deviations, or empirical ones
/// when the prediction is missing or infinite. Values outside are dropped.
pub fn histogram(result: &RunResult, method: Method) -> Vec<HistBin> {
    let errs = result.sqrtn_errors(method);
    let predicted = result
        .summary(method)
        .and_then(|s| s.predicted_avar)
        .filter(|v| v.is_finite() && *v > 0.0);
    let mut sd = predicted.unwrap_or_else(|| sample_variance(&errs)).sqrt();
    if !(sd > 0.0 && sd.is_finite()) {
        sd = 1.0;
    }
    let (lo, hi) = (-4.0 * sd, 4.0 * sd);
    let width = (hi - lo) / HIST_BINS as f64;
    let mut counts = vec![0usize; HIST_BINS];
    for e in errs {
        if e >= lo && e <= hi {
            counts[(((e - lo) / width) as usize).min(HIST_BINS - 1)] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistBin {
            method,
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count,
        })
        .collect()
}

pub const ROWS_HEADER: [&str; 5] = ["rep", "method", "theta_hat", "abs_err", "sqrtn_err"];

pub fn write_rows_csv<W: std::io::Write>(rows: &[ReplicateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROWS_HEADER)?;
    for r in rows {
        w.write_record([
            r.rep.to_string(),
            r.method.name().to_string(),
            fmt_num(r.theta_hat),
            fmt_num(r.abs_err),
            fmt_num(r.sqrtn_err),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: std::io::Read>(input: R) -> Result<Vec<ReplicateRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let num = |i: usize| {
            parse_num(field(i)).ok_or_else(|| Error::InvalidInput(format!("bad number `{}` in rows", field(i))))
        };
        rows.push(ReplicateRow {
            rep: field(0)
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad rep `{}`", field(0))))?,
            method: field(1).parse()?,
            theta_hat: num(2)?,
            abs_err: num(3)?,
            sqrtn_err: num(4)?,
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    config: &'a RunConfig,
    replicates: usize,
    summaries: &'a [MethodSummary],
    failures: &'a [ReplicateFailure],
    comparison: Option<Efficiency>,
    asymptotics: Option<&'a AsymptoticReport>,
}

pub fn summary_json(result: &RunResult) -> Result<String> {
    let file = SummaryFile {
        config: &result.config,
        replicates: result.config.reps,
        summaries: &result.summaries,
        failures: &result.failures,
        comparison: compare_methods(result).ok(),
        asymptotics: result.asymptotics.as_ref(),
    };
    Ok(format::to_json_pretty(&file)?)
}

pub fn hist_csv(result: &RunResult) -> String {
    let mut out = String::from("method,bin_lo,bin_hi,count\n");
    for &m in &result.config.methods {
        for b in histogram(result, m) {
            out.push_str(&format!(
                "{},{},{},{}\n",
                m.name(),
                fmt_num(b.lo),
                fmt_num(b.hi),
                b.count
            ));
        }
    }
    out
}

/// Writes `rows.csv`, `summary.json` and `hist.csv` into `dir`.
pub fn write_outputs(result: &RunResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_rows_csv(&result.rows, fs::File::create(dir.join("rows.csv"))?)?;
    fs::write(dir.join("summary.json"), summary_json(result)? + "\n")?;
    fs::write(dir.join("hist.csv"), hist_csv(result))?;
    Ok(())
}
