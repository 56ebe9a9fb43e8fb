//! Command-line front end: `fit`, `predict`, `sparsify`, `simulate`, `bench`.
//!
//! Options resolve as flag > config file > default. Every run writes a
//! `run.manifest` next to its outputs echoing the resolved settings.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::bench::{run_grid, CSV_HEADER};
use crate::dataset::{load_dataset, read_matrix_file, Estimator, MultiSourceDataset};
use crate::error::{ErrorKind, Result, SbrError};
use crate::fit::SbrFit;
use crate::gram::GramCache;
use crate::kv::{fmt_f64, fmt_f64_list, KvBlock, KvMap};
use crate::matrix::Matrix;
use crate::pipeline::{fit_dataset, prepare, FitOptions};
use crate::sim::{generate_scenario, metric_correlation, Correlation, Scenario, SimConfig};
use crate::ssbr::{
    adaptive_penalties, build_svd_context, pcr_penalty, solve_general, solve_relaxed, CVariant, Control, KlContext,
    Penalty,
};
use crate::tuning::{on_bound, TuneConfig};

pub const MANIFEST_NAME: &str = "run.manifest";

#[derive(Parser, Debug)]
#[command(name = "sbr", version, about = "Scalable Bayesian regression for multi-source wide data")]
pub struct Cli {
    /// Thread count for the parallel kernels (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Plain-text `key = value` defaults; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest (default: next to the outputs).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tune the shrinkage levels and fit the posterior mode.
    Fit(FitArgs),
    /// Predict from a fit (optionally with sparse coefficients).
    Predict(PredictArgs),
    /// Sparsify a dense fit.
    Sparsify(SparsifyArgs),
    /// Generate a simulated train/test pair and its truth.
    Simulate(SimulateArgs),
    /// Simulate, fit and sparsify over a scenario grid; emits CSV.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Dataset directory (as written by `simulate`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Source matrix as NAME=PATH (CSV or .sbrm); repeat per source.
    #[arg(long = "source", value_name = "NAME=PATH")]
    pub sources: Vec<String>,
    /// Response column (CSV or .sbrm).
    #[arg(long)]
    pub response: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output fit file (default fit.sbr).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// cv | ml | map
    #[arg(long)]
    pub estimator: Option<String>,
    /// Comma-separated λ per source; skips tuning.
    #[arg(long)]
    pub lambda: Option<String>,
    /// CSV dump of every (λ, objective) evaluation.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Directory for spilling per-source Gram matrices.
    #[arg(long)]
    pub gram_cache: Option<PathBuf>,
    /// Columns per panel when computing posterior variances.
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Drop constant columns instead of failing.
    #[arg(long)]
    pub drop_constant: bool,
    /// Seed for the tuning restarts.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra randomized optimizer restarts.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Lower bound on log λ during tuning.
    #[arg(long, allow_hyphen_values = true)]
    pub log_lambda_min: Option<f64>,
    /// Upper bound on log λ during tuning.
    #[arg(long, allow_hyphen_values = true)]
    pub log_lambda_max: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fit file written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Sparse solution whose coefficients replace the posterior mode.
    #[arg(long)]
    pub sparse: Option<PathBuf>,
    /// Prediction CSV (default predictions.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SparsifyArgs {
    /// Fit file written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Training data; required by the general method.
    #[command(flatten)]
    pub data: DataArgs,
    /// Sparse solution file (default sparse.sbr).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// general | relaxed
    #[arg(long)]
    pub method: Option<String>,
    /// none | logn | sqrtn | sqrtlogn
    #[arg(long)]
    pub control: Option<String>,
    /// Penalized-credible-region budget; selects the pCR scalar penalty.
    #[arg(long)]
    pub pcr_xi: Option<f64>,
    /// Scalar penalty; without it (and without --pcr-xi) adaptive weights are used.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// integrated | mean | mode
    #[arg(long)]
    pub c_variant: Option<String>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// sparse | medium | dense
    #[arg(long)]
    pub scenario: Option<String>,
    /// low | high
    #[arg(long)]
    pub correlation: Option<String>,
    /// full | desk
    #[arg(long)]
    pub layout: Option<String>,
    /// Multiplies the expression and SNP widths.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Training sample count (default 100).
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Test sample count.
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default sim).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Comma-separated scenarios.
    #[arg(long)]
    pub scenarios: Option<String>,
    /// Comma-separated correlation levels.
    #[arg(long)]
    pub correlations: Option<String>,
    /// full | desk
    #[arg(long)]
    pub layout: Option<String>,
    /// Multiplies the expression and SNP widths.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Training sample count per replicate.
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Test sample count per replicate.
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Number of replicates per cell.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// First replicate seed.
    #[arg(long)]
    pub seed_start: Option<u64>,
    /// cv | ml | map
    #[arg(long)]
    pub estimator: Option<String>,
    /// Output CSV (default bench.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the CSV to standard output instead of a file.
    #[arg(long)]
    pub stdout_csv: bool,
}

/// Resolves options and records every resolved value for the manifest.
struct Resolver {
    config: KvMap,
    manifest: KvBlock,
}

impl Resolver {
    fn new(config: Option<&Path>) -> Result<Self> {
        let config = match config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| SbrError::io(p, e))?;
                KvMap::parse(&text)?
            }
            None => KvMap::default(),
        };
        Ok(Resolver {
            config,
            manifest: KvBlock::new(),
        })
    }

    fn from_config(&self, key: &str) -> Option<&str> {
        self.config.get(key).or_else(|| self.config.get(&key.replace('_', "-")))
    }

    fn opt_raw<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.from_config(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| SbrError::Config(format!("config key '{key}' has invalid value '{v}'"))),
            None => Ok(None),
        }
    }

    fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let v = self.opt_raw(key, flag)?;
        self.manifest
            .push(key, v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string));
        Ok(v)
    }

    fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let v = self.opt_raw(key, flag)?.unwrap_or(default);
        self.manifest.push(key, &v);
        Ok(v)
    }

    fn flag(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = if flag { true } else { self.opt_raw(key, None)?.unwrap_or(false) };
        self.manifest.push(key, v);
        Ok(v)
    }

    fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let v = flag.or_else(|| self.from_config(key).map(PathBuf::from));
        self.manifest
            .push(key, v.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string()));
        Ok(v)
    }

    fn path_or(&mut self, key: &str, flag: Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let v = flag
            .or_else(|| self.from_config(key).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(default));
        self.manifest.push(key, v.display());
        Ok(v)
    }

    fn record(&mut self, key: &str, value: impl ToString) {
        self.manifest.push(key, value);
    }
}

fn parse_tag<T: FromStr<Err = SbrError>>(s: &str) -> Result<T> {
    s.parse()
}

fn parse_list<T: FromStr<Err = SbrError>>(s: &str) -> Result<Vec<T>> {
    s.split(',').map(|t| t.trim().parse()).collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| SbrError::Config(format!("'{t}' is not a number")))
        })
        .collect()
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| SbrError::io(dir, e)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| SbrError::io(path, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| SbrError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// Source name/path pairs from `--data` or `--source`, plus the response
/// path if one exists.
fn data_paths(args: &DataArgs, r: &mut Resolver) -> Result<(Vec<(String, PathBuf)>, Option<PathBuf>)> {
    let data = r.path("data", args.data.clone())?;
    let response = r.path("response", args.response.clone())?;
    if let Some(dir) = data {
        if !args.sources.is_empty() {
            return Err(SbrError::Config("use either --data or --source, not both".into()));
        }
        let ip = dir.join("sources");
        let index = fs::read_to_string(&ip).map_err(|e| SbrError::io(&ip, e))?;
        let mut out = Vec::new();
        for line in index.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some(name), Some(file)) => out.push((name.to_string(), dir.join(file))),
                _ => {
                    return Err(SbrError::Parse {
                        path: ip.clone(),
                        msg: format!("malformed index line '{line}'"),
                    })
                }
            }
        }
        let y = response.or_else(|| Some(dir.join("y.sbrm")).filter(|p| p.exists()));
        r.record("sources", out.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(","));
        return Ok((out, y));
    }
    if args.sources.is_empty() {
        return Err(SbrError::Config("no input data: pass --data DIR or --source NAME=PATH".into()));
    }
    let mut out = Vec::new();
    for s in &args.sources {
        let (name, path) = s
            .split_once('=')
            .ok_or_else(|| SbrError::Config(format!("--source expects NAME=PATH, got '{s}'")))?;
        out.push((name.to_string(), PathBuf::from(path)));
    }
    r.record("sources", args.sources.join(","));
    Ok((out, response))
}

fn load_training(args: &DataArgs, r: &mut Resolver) -> Result<MultiSourceDataset> {
    let (sources, y) = data_paths(args, r)?;
    let y = y.ok_or_else(|| SbrError::Config("a response is required (--response or y.sbrm in --data)".into()))?;
    load_dataset(&sources, &y)
}

fn configure_workers(workers: Option<usize>) -> Result<()> {
    if let Some(w) = workers {
        if w == 0 {
            return Err(SbrError::Config("--workers must be >= 1".into()));
        }
        // A second call in the same process (tests) keeps the first pool.
        if rayon::ThreadPoolBuilder::new().num_threads(w).build_global().is_err() {
            log::debug!("global thread pool already initialized");
        }
    }
    Ok(())
}

fn write_manifest(path: &Path, command: &str, r: &Resolver, extra: &KvBlock) -> Result<()> {
    let mut h = KvBlock::new();
    h.push("format", "sbr-manifest-1")
        .push("command", command)
        .push("sbr_version", env!("CARGO_PKG_VERSION"))
        .push("fit_format", "sbr-fit-1")
        .push("sparse_format", "sbr-sparse-1")
        .push("matrix_format", "SBRMAT01");
    let text = format!("{}{}{}", h.render(), r.manifest.render(), extra.render());
    write_file(path, text.as_bytes())
}

fn run_fit(args: FitArgs, mut r: Resolver, manifest: Option<PathBuf>) -> Result<()> {
    let out = r.path_or("out", args.out, "fit.sbr")?;
    let estimator: Estimator = parse_tag(&r.get("estimator", args.estimator, "map".to_string())?)?;
    let lambda = r.opt("lambda", args.lambda)?.map(|s| parse_f64_list(&s)).transpose()?;
    let trace = r.path("trace", args.trace)?;
    let gram_cache = r.path("gram_cache", args.gram_cache)?;
    let block_size = r.opt("block_size", args.block_size)?;
    let drop_constant = r.flag("drop_constant", args.drop_constant)?;
    let defaults = TuneConfig::default();
    let seed = r.get("seed", args.seed, defaults.seed)?;
    let restarts = r.get("restarts", args.restarts, defaults.restarts)?;
    let lo = r.get("log_lambda_min", args.log_lambda_min, defaults.log_lambda_bounds.0)?;
    let hi = r.get("log_lambda_max", args.log_lambda_max, defaults.log_lambda_bounds.1)?;
    if estimator == Estimator::User && lambda.is_none() {
        return Err(SbrError::Config("estimator 'user' needs --lambda".into()));
    }
    if let Some(l) = &lambda {
        if let Some(v) = l.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(SbrError::Config(format!("--lambda values must be finite and > 0, got {v}")));
        }
    }
    let raw = load_training(&args.data, &mut r)?;
    if let Some(l) = &lambda {
        if l.len() != raw.k() {
            return Err(SbrError::Config(format!(
                "--lambda has {} values but the data has {} sources",
                l.len(),
                raw.k()
            )));
        }
    }

    let tune_cfg = TuneConfig {
        estimator,
        log_lambda_bounds: (lo, hi),
        restarts,
        seed,
        record_trace: trace.is_some(),
        ..defaults
    };
    if lambda.is_none() {
        tune_cfg.validate()?;
    }
    let opts = FitOptions {
        tune: tune_cfg.clone(),
        lambda,
        block_size,
        drop_constant,
        gram_cache_dir: gram_cache,
        variances: true,
    };
    log::info!("fitting n={} p={} K={}", raw.n(), raw.p(), raw.k());
    let outcome = fit_dataset(raw, &opts)?;
    let fit = &outcome.fit;
    log::info!(
        "stages gram={:.3}s tune={:.3}s mode={:.3}s variances={:.3}s",
        outcome.times.gram.as_secs_f64(),
        outcome.times.tune.as_secs_f64(),
        outcome.times.mode.as_secs_f64(),
        outcome.times.variances.as_secs_f64()
    );
    ensure_parent(&out)?;
    fit.save(&out)?;

    let mut extra = KvBlock::new();
    extra
        .push("n", fit.n)
        .push("p", fit.p())
        .push("K", fit.k())
        .push("lambda_hat", fmt_f64_list(fit.lambda.values()))
        .push("lambda_estimator", fit.lambda.estimator());
    if let Some(t) = &outcome.tune {
        extra
            .push_f64("objective", t.objective_value)
            .push("evals_used", t.evals_used)
            .push("converged", t.converged);
        if let Some(cv) = &t.lambda_cv {
            extra.push("lambda_cv", fmt_f64_list(cv.values()));
        }
        for k in on_bound(&t.lambda_hat, &tune_cfg) {
            log::warn!(
                "lambda for source '{}' sits on the search bound ({}); consider widening --log-lambda-min/--log-lambda-max",
                fit.source_names[k],
                fmt_f64(t.lambda_hat.get(k))
            );
            extra.push("lambda_on_bound", &fit.source_names[k]);
        }
        if let (Some(path), Some(points)) = (&trace, &t.trace) {
            let mut s = String::from("stage");
            for name in &fit.source_names {
                s.push_str(&format!(",lambda_{name}"));
            }
            s.push_str(",objective\n");
            for pt in points {
                s.push_str(&pt.stage.to_string());
                for l in &pt.lambda {
                    s.push(',');
                    s.push_str(&fmt_f64(*l));
                }
                s.push(',');
                s.push_str(&fmt_f64(pt.objective));
                s.push('\n');
            }
            write_file(path, s.as_bytes())?;
        }
    }
    if let Some(lm) = fit.log_marginal {
        extra.push_f64("log_marginal", lm);
    }
    extra.push("fit_sha256", sha256_file(&out)?);
    let mpath = manifest.unwrap_or_else(|| parent_dir(&out).join(MANIFEST_NAME));
    write_manifest(&mpath, "fit", &r, &extra)
}

/// Loads prediction matrices in the fit's source order: by name when every
/// fitted source is present, otherwise positionally.
fn load_prediction_blocks(
    fit: &SbrFit,
    sources: &[(String, PathBuf)],
) -> Result<Vec<Matrix>> {
    if sources.len() != fit.k() {
        return Err(SbrError::mismatch("number of prediction sources", fit.k(), sources.len()));
    }
    let by_name: Option<Vec<&PathBuf>> = fit
        .source_names
        .iter()
        .map(|n| sources.iter().find(|(s, _)| s == n).map(|(_, p)| p))
        .collect();
    let paths: Vec<&PathBuf> = by_name.unwrap_or_else(|| sources.iter().map(|(_, p)| p).collect());
    paths.iter().map(|p| read_matrix_file(p).map(|(m, _)| m)).collect()
}

fn run_predict(args: PredictArgs, mut r: Resolver, manifest: Option<PathBuf>) -> Result<()> {
    let fit_path = args.fit;
    r.record("fit", fit_path.display());
    let sparse = r.path("sparse", args.sparse)?;
    let out = r.path_or("out", args.out, "predictions.csv")?;
    let fit = SbrFit::load(&fit_path)?;
    let (sources, y) = data_paths(&args.data, &mut r)?;
    let blocks = load_prediction_blocks(&fit, &sources)?;
    let refs: Vec<&Matrix> = blocks.iter().collect();
    let pred = match &sparse {
        Some(p) => {
            let s = crate::ssbr::SparseSolution::load(p)?;
            if s.p() != fit.p() {
                return Err(SbrError::mismatch("sparse solution length", fit.p(), s.p()));
            }
            fit.predict_raw_with(&s.gamma_hat, &refs)?
        }
        None => fit.predict_raw(&refs)?,
    };
    let mut text = String::from("prediction\n");
    for v in &pred {
        text.push_str(&fmt_f64(*v));
        text.push('\n');
    }
    write_file(&out, text.as_bytes())?;

    let mut extra = KvBlock::new();
    extra.push("rows", pred.len());
    if let Some(yp) = y {
        let (ym, _) = read_matrix_file(&yp)?;
        let yv = ym.into_vec();
        if yv.len() != pred.len() {
            return Err(SbrError::mismatch("response length", pred.len(), yv.len()));
        }
        match metric_correlation(&pred, &yv) {
            Ok(c) => {
                log::info!("test correlation {c:.4}");
                extra.push_f64("correlation", c);
            }
            Err(_) => {
                extra.push("correlation", "undefined");
            }
        }
    }
    extra.push("predictions_sha256", sha256_file(&out)?);
    let mpath = manifest.unwrap_or_else(|| parent_dir(&out).join(MANIFEST_NAME));
    write_manifest(&mpath, "predict", &r, &extra)
}

fn run_sparsify(args: SparsifyArgs, mut r: Resolver, manifest: Option<PathBuf>) -> Result<()> {
    r.record("fit", args.fit.display());
    let out = r.path_or("out", args.out, "sparse.sbr")?;
    let method = r.get("method", args.method, "relaxed".to_string())?;
    let control: Control = parse_tag(&r.get("control", args.control, Control::default().to_string())?)?;
    let xi = r.opt("pcr_xi", args.pcr_xi)?;
    let alpha = r.opt("alpha", args.alpha)?;
    let variant: CVariant = parse_tag(&r.get("c_variant", args.c_variant, CVariant::default().to_string())?)?;
    if method != "relaxed" && method != "general" {
        return Err(SbrError::Config(format!("unknown method '{method}' (general|relaxed)")));
    }
    let fit = SbrFit::load(&args.fit)?;

    let ctx = match method.as_str() {
        "relaxed" => KlContext::from_fit(&fit, variant)?,
        "general" => {
            let raw = load_training(&args.data, &mut r)?;
            let (data, removed) = prepare(raw, !fit.dropped_columns.is_empty())?;
            if removed != fit.dropped_columns {
                return Err(SbrError::Format(
                    "training data does not match the fit's dropped columns".into(),
                ));
            }
            let cache = GramCache::build(&data);
            build_svd_context(&cache, &data, &fit.lambda, &fit, variant)?
        }
        _ => unreachable!("validated above"),
    };
    let penalty = match (xi, alpha) {
        (Some(_), Some(_)) => return Err(SbrError::Config("--pcr-xi and --alpha are exclusive".into())),
        (Some(xi), None) => Penalty::Scalar(pcr_penalty(xi, &ctx)?),
        (None, Some(a)) => Penalty::Scalar(a),
        (None, None) => Penalty::PerCoefficient(adaptive_penalties(&fit, &fit.lambda)?),
    };
    r.record(
        "penalty",
        match (&penalty, xi) {
            (Penalty::Scalar(_), Some(_)) => "pcr",
            (Penalty::Scalar(_), None) => "scalar",
            (Penalty::PerCoefficient(_), _) => "adaptive",
        },
    );
    let sol = if method == "relaxed" {
        solve_relaxed(&ctx, &penalty, control)?
    } else {
        let f_n = control.factor(fit.n);
        let mut s = solve_general(&ctx, &penalty.scaled(f_n), None)?;
        s.f_n = f_n;
        if !s.converged {
            log::warn!("coordinate descent stopped after {} sweeps without converging", s.sweeps);
        }
        s
    };
    ensure_parent(&out)?;
    sol.save(&out)?;
    eprintln!("sparsity {sol}");

    let mut extra = KvBlock::new();
    extra
        .push("result_method", sol.method)
        .push("nonzero_count", sol.nonzero_count)
        .push("p", sol.p())
        .push_f64("sparsity", sol.sparsity)
        .push_f64("f_n", sol.f_n)
        .push("converged", sol.converged)
        .push("sparse_sha256", sha256_file(&out)?);
    let mpath = manifest.unwrap_or_else(|| parent_dir(&out).join(MANIFEST_NAME));
    write_manifest(&mpath, "sparsify", &r, &extra)
}

fn sim_config(
    r: &mut Resolver,
    layout: Option<String>,
    scale: Option<f64>,
    n_train: Option<usize>,
    n_test: Option<usize>,
    scenario: Scenario,
    correlation: Correlation,
    seed: u64,
) -> Result<SimConfig> {
    let layout = r.get("layout", layout, "full".to_string())?;
    let scale = r.get("scale", scale, 1.0)?;
    let n_train = r.get("n_train", n_train, 100)?;
    let base = match layout.as_str() {
        "full" => SimConfig::full(scenario, correlation, n_train, seed),
        "desk" => SimConfig::desk(scenario, correlation, n_train, seed),
        other => return Err(SbrError::Config(format!("unknown layout '{other}' (full|desk)"))),
    };
    let n_test = r.get("n_test", n_test, base.n_test)?;
    let mut cfg = base.scaled(scale)?;
    cfg.n_test = n_test;
    cfg.snp_block = cfg.snp_block.min(cfg.p_snp);
    cfg.rna_block = cfg.rna_block.min(cfg.p_rna);
    cfg.validate()?;
    Ok(cfg)
}

fn run_simulate(args: SimulateArgs, mut r: Resolver, manifest: Option<PathBuf>) -> Result<()> {
    let scenario: Scenario = parse_tag(&r.get("scenario", args.scenario, "sparse".to_string())?)?;
    let correlation: Correlation = parse_tag(&r.get("correlation", args.correlation, "low".to_string())?)?;
    let seed = r.get("seed", args.seed, 0)?;
    let out = r.path_or("out", args.out, "sim")?;
    let cfg = sim_config(
        &mut r,
        args.layout,
        args.scale,
        args.n_train,
        args.n_test,
        scenario,
        correlation,
        seed,
    )?;
    log::info!("simulating {scenario}/{correlation} n_train={} p={}", cfg.n_train, cfg.p());
    let (train, test, truth) = generate_scenario(&cfg)?;
    train.save_dir(&out.join("train"))?;
    test.save_dir(&out.join("test"))?;
    let truth_path = out.join("truth.sbr");
    truth.save(&truth_path)?;

    let mut extra = cfg.to_kv();
    extra
        .push("p", cfg.p())
        .push("nonzero_count", truth.nonzero_count())
        .push_f64("sigma_eps", truth.sigma_eps)
        .push("truth_sha256", sha256_file(&truth_path)?)
        .push("train_y_sha256", sha256_file(&out.join("train").join("y.sbrm"))?);
    let mpath = manifest.unwrap_or_else(|| out.join(MANIFEST_NAME));
    write_manifest(&mpath, "simulate", &r, &extra)
}

fn run_bench(args: BenchArgs, mut r: Resolver, manifest: Option<PathBuf>) -> Result<()> {
    let scenarios: Vec<Scenario> = parse_list(&r.get("scenarios", args.scenarios, "sparse,medium,dense".to_string())?)?;
    let correlations: Vec<Correlation> = parse_list(&r.get("correlations", args.correlations, "low".to_string())?)?;
    let seeds = r.get("seeds", args.seeds, 10)?;
    let start = r.get("seed_start", args.seed_start, 0)?;
    let estimator: Estimator = parse_tag(&r.get("estimator", args.estimator, "map".to_string())?)?;
    let stdout_csv = r.flag("stdout_csv", args.stdout_csv)?;
    let out = r.path_or("out", args.out, "bench.csv")?;
    if estimator == Estimator::User {
        return Err(SbrError::Config("bench needs a tuned estimator (cv|ml|map)".into()));
    }
    let (layout, scale, n_train, n_test) = (args.layout, args.scale, args.n_train, args.n_test);
    let mut configs = Vec::new();
    let mut first = true;
    for &scen in &scenarios {
        for &corr in &correlations {
            for seed in start..start + seeds {
                // Record the shared layout keys once.
                let cfg = if first {
                    first = false;
                    sim_config(&mut r, layout.clone(), scale, n_train, n_test, scen, corr, seed)?
                } else {
                    let mut quiet = Resolver {
                        config: r.config.clone(),
                        manifest: KvBlock::new(),
                    };
                    sim_config(&mut quiet, layout.clone(), scale, n_train, n_test, scen, corr, seed)?
                };
                configs.push((cfg, scen.to_string(), corr.to_string()));
            }
        }
    }
    let mut extra = KvBlock::new();
    extra.push("rows", configs.len()).push("csv_header", CSV_HEADER);
    if stdout_csv {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        run_grid(&configs, estimator, &mut lock)?;
        lock.flush().map_err(|e| SbrError::io("<stdout>", e))?;
    } else {
        ensure_parent(&out)?;
        let f = fs::File::create(&out).map_err(|e| SbrError::io(&out, e))?;
        let mut w = std::io::BufWriter::new(f);
        run_grid(&configs, estimator, &mut w)?;
        w.flush().map_err(|e| SbrError::io(&out, e))?;
    }
    let mpath = manifest.unwrap_or_else(|| parent_dir(&out).join(MANIFEST_NAME));
    write_manifest(&mpath, "bench", &r, &extra)
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut r = Resolver::new(cli.config.as_deref())?;
    let workers = r.opt("workers", cli.workers)?;
    configure_workers(workers)?;
    match cli.command {
        Command::Fit(a) => run_fit(a, r, cli.manifest),
        Command::Predict(a) => run_predict(a, r, cli.manifest),
        Command::Sparsify(a) => run_sparsify(a, r, cli.manifest),
        Command::Simulate(a) => run_simulate(a, r, cli.manifest),
        Command::Bench(a) => run_bench(a, r, cli.manifest),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code. Failures print `error kind=<k> reason=<text>` to
/// standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand {
                    ErrorKind::Usage.exit_code()
                } else {
                    0
                };
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!(
                "error kind={} reason={}",
                ErrorKind::Usage.as_str(),
                one_line(first.trim_start_matches("error: "))
            );
            return ErrorKind::Usage.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            let kind = e.kind();
            eprintln!("error kind={} reason={}", kind.as_str(), one_line(&e.to_string()));
            kind.exit_code()
        }
    }
}
