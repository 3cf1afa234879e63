//! The `sdtr` command-line tool.
//!
//! Settings come from flags, then from an optional `--config` key-value file,
//! then from defaults. Config keys are the long flag names with `-` replaced
//! by `_` (`max_iter`, `main_features`, ...); simulator keys follow
//! [`SimConfig::apply`].

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::error::Error;
use crate::evaluation::{
    concordance_km, cross_validate_methods, fit_method, run_benchmark, write_curve, BenchmarkOptions,
    Method, MethodSettings,
};
use crate::model_io::{FittedModel, ModelFile};
use crate::shared_o::{select_k, value_estimate_with_error, NuisanceSpec, PropensityVariant};
use crate::sim::{simulate_cohort, Scenario, SimConfig, DRUGS};
use crate::survival::{CensoringChoice, DEFAULT_SURVIVAL_FLOOR};
use crate::trajectories::{load_cohort, CohortDataset, FeatureSpec, LoadOptions};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Run(Error::InvalidInput(_)) => EXIT_USAGE,
            CliError::Run(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "sdtr", version, about = "Shared-parameter treatment regimes for censored multi-stage data")]
pub struct Cli {
    /// Key-value configuration file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "SDTR_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default 1; all cores for `cv` and `benchmark`).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a diabetes cohort and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit one estimator and save the model.
    Fit(FitArgs),
    /// Estimate the value of a saved model on a cohort.
    Evaluate(EvaluateArgs),
    /// Compare methods by repeated two-fold cross-validation.
    Cv(CvArgs),
    /// Simulation benchmark against the optimal rule.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub scenario: Option<u8>,
    /// Number of stages.
    #[arg(long = "T", alias = "horizon")]
    pub horizon: Option<usize>,
    /// Upper end of the uniform censoring law; `inf` disables censoring.
    #[arg(long)]
    pub censor_upper: Option<f64>,
    #[arg(long)]
    pub stage_length: Option<f64>,
    /// Cohort size.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Output CSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Long-format cohort CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Comma-separated main-effect covariates (default: all).
    #[arg(long, value_delimiter = ',')]
    pub main_features: Option<Vec<String>>,
    /// Comma-separated decision covariates (default: all).
    #[arg(long, value_delimiter = ',')]
    pub decision_features: Option<Vec<String>>,
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long)]
    pub delimiter: Option<char>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CensoringKind {
    Km,
    Cox,
    None,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PropensityKind {
    Proportion,
    Logistic,
}

#[derive(Debug, Args)]
pub struct NuisanceArgs {
    #[arg(long, value_enum)]
    pub censoring: Option<CensoringKind>,
    /// Baseline covariates of the Cox censoring model (default: all).
    #[arg(long, value_delimiter = ',')]
    pub cox_regressors: Option<Vec<String>>,
    /// Upper end of a known uniform censoring law.
    #[arg(long = "censor-bound")]
    pub censor_bound: Option<f64>,
    #[arg(long, value_enum)]
    pub propensity: Option<PropensityKind>,
    /// Lower bound on censoring survival probabilities.
    #[arg(long)]
    pub floor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SettingsArgs {
    /// Shared-Q convergence threshold.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Start shared-Q from zero instead of the stagewise fit.
    #[arg(long)]
    pub zero_init: bool,
    /// Shared-O smoothing constant.
    #[arg(long)]
    pub k: Option<f64>,
    /// Shared-O L1 weight.
    #[arg(long)]
    pub l1: Option<f64>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub nuisance: NuisanceArgs,
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// One of cq, csql, csol.
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Choose K for csol by cross-validation over this grid.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Write regime-concordance Kaplan-Meier curves to PREFIX.consistent.csv
    /// and PREFIX.inconsistent.csv.
    #[arg(long)]
    pub km_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub nuisance: NuisanceArgs,
    #[command(flatten)]
    pub settings: SettingsArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// JSON report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub nuisance: NuisanceArgs,
    #[command(flatten)]
    pub settings: SettingsArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Validation patients per replicate.
    #[arg(long)]
    pub validation: Option<usize>,
    /// JSON report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Config file contents and the keys the current command accepts.
struct Config {
    kv: KeyValues,
}

const COMMON_KEYS: [&str; 2] = ["seed", "threads"];
const DATA_KEYS: [&str; 7] = [
    "data",
    "horizon",
    "tau",
    "main_features",
    "decision_features",
    "intercept",
    "delimiter",
];
const NUISANCE_KEYS: [&str; 5] = ["censoring", "cox_regressors", "censor_bound", "propensity", "floor"];
const SETTINGS_KEYS: [&str; 5] = ["epsilon", "max_iter", "zero_init", "k", "l1"];

fn is_sim_key(key: &str) -> bool {
    matches!(key, "horizon" | "T" | "scenario" | "censor_upper" | "stage_length" | "seed" | "n")
        || DRUGS.iter().any(|d| {
            key.strip_prefix("effect_") == Some(d) || key.strip_prefix("rate_") == Some(d)
        })
}

impl Config {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let kv = match path {
            None => KeyValues::default(),
            Some(p) => KeyValues::load(p).map_err(|e| usage(format!("config: {e}")))?,
        };
        Ok(Config { kv })
    }

    fn check(&self, groups: &[&[&str]], sim: bool) -> CliResult<()> {
        for (key, _) in self.kv.iter() {
            let known = COMMON_KEYS.contains(&key)
                || groups.iter().any(|g| g.contains(&key))
                || (sim && is_sim_key(key));
            if !known {
                return Err(usage(format!("unknown config key `{key}`")));
            }
        }
        Ok(())
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        self.kv
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| usage(format!("invalid value `{v}` for config key `{key}`")))
            })
            .transpose()
    }

    fn list<T: FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>> {
        self.kv
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim().parse().map_err(|_| {
                            usage(format!("invalid element `{}` for config key `{key}`", s.trim()))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    fn flag(&self, key: &str) -> CliResult<Option<bool>> {
        self.kv
            .get(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(usage(format!("invalid boolean `{v}` for config key `{key}`"))),
            })
            .transpose()
    }

    fn method(&self, key: &str) -> CliResult<Option<Vec<Method>>> {
        self.kv
            .get(key)
            .map(|v| v.split(',').map(|s| parse_method(s.trim()).map_err(usage)).collect())
            .transpose()
    }

    fn value_enum<T: ValueEnum>(&self, key: &str) -> CliResult<Option<T>> {
        self.kv
            .get(key)
            .map(|v| {
                T::from_str(v, true).map_err(|_| {
                    let valid: Vec<String> = T::value_variants()
                        .iter()
                        .filter_map(|x| x.to_possible_value())
                        .map(|p| p.get_name().to_string())
                        .collect();
                    usage(format!("invalid value `{v}` for `{key}` (valid: {})", valid.join(", ")))
                })
            })
            .transpose()
    }
}

fn or_cfg<T: FromStr>(flag: Option<T>, cfg: &Config, key: &str) -> CliResult<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => cfg.get(key),
    }
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && !v.is_nan() {
        Ok(v)
    } else {
        Err(usage(format!("{name} must be positive, got {v}")))
    }
}

fn nonzero(name: &str, v: usize) -> CliResult<usize> {
    if v > 0 {
        Ok(v)
    } else {
        Err(usage(format!("{name} must be at least 1")))
    }
}

fn resolve_seed(cli: &Cli, cfg: &Config) -> CliResult<u64> {
    Ok(or_cfg(cli.seed, cfg, "seed")?.unwrap_or(0))
}

fn resolve_sim(args: &SimArgs, cfg: &Config, seed: u64) -> CliResult<(SimConfig, usize)> {
    let mut config = SimConfig::default();
    config
        .apply(&cfg.kv.filtered(|k| is_sim_key(k) && k != "n"))
        .map_err(|e| usage(e.to_string()))?;
    if let Some(s) = args.scenario {
        config.scenario = Scenario::try_from(s).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(t) = args.horizon {
        config.horizon = t;
    }
    if let Some(c) = args.censor_upper {
        config.censor_upper = c;
    }
    if let Some(l) = args.stage_length {
        config.stage_length = l;
    }
    config.seed = seed;
    config.validate().map_err(|e| usage(e.to_string()))?;
    let n = match args.n {
        Some(n) => n as usize,
        None => nonzero("n", cfg.get("n")?.unwrap_or(2000))?,
    };
    Ok((config, n))
}

fn echo_sim(config: &SimConfig, n: usize) -> String {
    let mut s = format!(
        "scenario = {}\nT = {}\nn = {n}\ncensor_upper = {}\nstage_length = {}\nseed = {}\n",
        config.scenario.number(),
        config.horizon,
        config.censor_upper,
        config.stage_length,
        config.seed
    );
    for (i, d) in DRUGS.iter().enumerate() {
        s += &format!("effect_{d} = {}\n", config.treatment_effects[i]);
    }
    for (i, d) in DRUGS.iter().enumerate() {
        s += &format!("rate_{d} = {}\n", config.discontinuation_rates[i]);
    }
    s
}

fn delimiter_byte(c: char) -> CliResult<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| usage(format!("delimiter must be one ASCII character, got `{c}`")))
}

fn load_data(args: &DataArgs, cfg: &Config, seed: u64) -> CliResult<CohortDataset> {
    let path: PathBuf = or_cfg(args.data.clone(), cfg, "data")?
        .ok_or_else(|| usage("missing --data"))?;
    let mut options = LoadOptions {
        horizon: or_cfg(args.horizon, cfg, "horizon")?,
        tau: or_cfg(args.tau, cfg, "tau")?.map(|t| positive("tau", t)).transpose()?,
        seed,
        ..LoadOptions::default()
    };
    if let Some(h) = options.horizon {
        nonzero("horizon", h)?;
    }
    if let Some(c) = or_cfg(args.delimiter, cfg, "delimiter")? {
        options.delimiter = delimiter_byte(c)?;
    }
    let cohort = load_cohort(&path, &options).map_err(|e| e.context(path.display().to_string()))?;
    let main = match &args.main_features {
        Some(v) => Some(v.clone()),
        None => cfg.list("main_features")?,
    };
    let decision = match &args.decision_features {
        Some(v) => Some(v.clone()),
        None => cfg.list("decision_features")?,
    };
    let intercept = !args.no_intercept && cfg.flag("intercept")?.unwrap_or(true);
    if main.is_none() && decision.is_none() && intercept {
        return Ok(cohort);
    }
    let main = main.unwrap_or_else(|| cohort.covariate_names.clone());
    let decision = decision.unwrap_or_else(|| cohort.covariate_names.clone());
    let spec = FeatureSpec::uniform(cohort.horizon, &main, &decision, intercept)
        .map_err(|e| usage(e.to_string()))?;
    Ok(cohort.with_feature_spec(spec)?)
}

fn resolve_nuisance(
    args: &NuisanceArgs,
    cfg: &Config,
    covariates: &[String],
    default_bound: Option<f64>,
) -> CliResult<NuisanceSpec> {
    let kind = match args.censoring {
        Some(k) => k,
        None => cfg.value_enum("censoring")?.unwrap_or(CensoringKind::Km),
    };
    let censoring = match kind {
        CensoringKind::Km => CensoringChoice::KaplanMeier,
        CensoringKind::None => CensoringChoice::None,
        CensoringKind::Cox => CensoringChoice::Cox {
            regressors: match &args.cox_regressors {
                Some(r) => r.clone(),
                None => cfg.list("cox_regressors")?.unwrap_or_else(|| covariates.to_vec()),
            },
        },
        CensoringKind::Uniform => {
            let upper = or_cfg(args.censor_bound, cfg, "censor_bound")?
                .or(default_bound)
                .ok_or_else(|| usage("uniform censoring needs --censor-bound"))?;
            CensoringChoice::Uniform {
                upper: positive("censor-bound", upper)?,
            }
        }
    };
    let propensity = match args.propensity {
        Some(p) => p,
        None => cfg.value_enum("propensity")?.unwrap_or(PropensityKind::Proportion),
    };
    let floor = or_cfg(args.floor, cfg, "floor")?.unwrap_or(DEFAULT_SURVIVAL_FLOOR);
    if !(floor > 0.0 && floor <= 1.0) {
        return Err(usage(format!("floor must lie in (0, 1], got {floor}")));
    }
    Ok(NuisanceSpec {
        censoring,
        propensity: match propensity {
            PropensityKind::Proportion => PropensityVariant::StageProportion,
            PropensityKind::Logistic => PropensityVariant::Logistic,
        },
        survival_floor: floor,
    })
}

fn resolve_settings(args: &SettingsArgs, cfg: &Config) -> CliResult<MethodSettings> {
    let mut s = MethodSettings::default();
    if let Some(e) = or_cfg(args.epsilon, cfg, "epsilon")? {
        s.shared_q.epsilon = positive("epsilon", e)?;
    }
    if let Some(m) = or_cfg(args.max_iter, cfg, "max_iter")? {
        s.shared_q.max_iter = nonzero("max-iter", m)?;
        s.shared_o.max_iterations = m;
    }
    s.shared_q.zero_init = args.zero_init || cfg.flag("zero_init")?.unwrap_or(false);
    if let Some(k) = or_cfg(args.k, cfg, "k")? {
        s.shared_o.k = positive("k", k)?;
    }
    if let Some(l) = or_cfg(args.l1, cfg, "l1")? {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(usage(format!("l1 must be non-negative, got {l}")));
        }
        s.shared_o.l1_weight = l;
    }
    Ok(s)
}

fn resolve_methods(flag: &Option<Vec<Method>>, cfg: &Config) -> CliResult<Vec<Method>> {
    let methods = match flag {
        Some(m) => m.clone(),
        None => cfg.method("methods")?.unwrap_or_else(|| Method::ALL.to_vec()),
    };
    if methods.is_empty() {
        return Err(usage("no methods given"));
    }
    Ok(methods)
}

fn write_output(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    parts.join(", ")
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs, cfg: &Config, out: &mut dyn Write) -> CliResult<()> {
    cfg.check(&[&["out"]], true)?;
    let seed = resolve_seed(cli, cfg)?;
    let (config, n) = resolve_sim(&args.sim, cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim = simulate_cohort(&config, n, &mut rng)?;
    let echo = echo_sim(&config, n);
    match or_cfg(args.out.clone(), cfg, "out")? {
        Some(path) => {
            let file = std::fs::File::create(&path)
                .map_err(|e| Error::from(e).context(path.display().to_string()))?;
            sim.dataset.write_csv(std::io::BufWriter::new(file))?;
            write!(out, "{echo}").map_err(Error::from)?;
        }
        None => {
            eprint!("{echo}");
            sim.dataset.write_csv(out)?;
        }
    }
    Ok(())
}

fn cmd_fit(cli: &Cli, args: &FitArgs, cfg: &Config, out: &mut dyn Write) -> CliResult<()> {
    cfg.check(
        &[&DATA_KEYS, &NUISANCE_KEYS, &SETTINGS_KEYS, &["method", "k_grid", "folds", "out"]],
        false,
    )?;
    let method = match args.method {
        Some(m) => m,
        None => match cfg.kv.get("method") {
            Some(v) => parse_method(v).map_err(usage)?,
            None => return Err(usage("missing --method (valid: cq, csql, csol)")),
        },
    };
    let path: PathBuf = or_cfg(args.out.clone(), cfg, "out")?.ok_or_else(|| usage("missing --out"))?;
    let seed = resolve_seed(cli, cfg)?;
    let mut settings = resolve_settings(&args.settings, cfg)?;
    let cohort = load_data(&args.data, cfg, seed)?;
    let nuisance = resolve_nuisance(&args.nuisance, cfg, &cohort.covariate_names, None)?;

    let grid = match &args.k_grid {
        Some(g) => Some(g.clone()),
        None => cfg.list("k_grid")?,
    };
    if let Some(grid) = grid.filter(|_| method == Method::Csol) {
        let folds = or_cfg(args.folds, cfg, "folds")?.unwrap_or(5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sel = select_k(&cohort, &grid, folds, &nuisance, &settings.shared_o, &mut rng)?;
        writeln!(out, "k_grid = {}", fmt_vec(&sel.grid)).map_err(Error::from)?;
        writeln!(out, "k_scores = {}", fmt_vec(&sel.scores)).map_err(Error::from)?;
        settings.shared_o.k = sel.chosen;
    }

    let (cens, prop) = nuisance.fit(&cohort)?;
    let model = fit_method(method, &cohort, &cens, &prop, &settings)?;
    let mut lines = vec![
        format!("method = {}", method.name()),
        format!("subjects = {}", cohort.len()),
        format!("horizon = {}", cohort.horizon),
        format!("tau = {}", cohort.tau),
    ];
    match &model {
        FittedModel::Cq(m) => {
            for (j, d) in m.decision_coefs.iter().enumerate() {
                lines.push(format!("psi_stage_{} = {}", j + 1, fmt_vec(d)));
            }
        }
        FittedModel::Csql(m) => {
            if !m.converged {
                log::warn!("shared-Q did not converge within {} iterations", m.iterations);
            }
            lines.push(format!("converged = {}", m.converged));
            lines.push(format!("iterations = {}", m.iterations));
            lines.push(format!("last_change = {:e}", m.last_change));
            lines.push(format!("damped = {}", m.damped));
            lines.push(format!("psi = {}", fmt_vec(&m.shared_psi)));
        }
        FittedModel::Csol(m) => {
            if !m.converged {
                log::warn!("shared-O did not converge within {} iterations", m.iterations);
            }
            lines.push(format!("converged = {}", m.converged));
            lines.push(format!("iterations = {}", m.iterations));
            lines.push(format!("k = {}", m.smoothing_k));
            lines.push(format!("l1 = {}", m.l1_weight));
            lines.push(format!("objective = {}", m.objective_at_solution));
            lines.push(format!("psi = {}", fmt_vec(&m.psi)));
        }
    }
    ModelFile::new(model, nuisance)
        .save(&path)
        .map_err(|e| e.context(path.display().to_string()))?;
    lines.push(format!("model = {}", path.display()));
    for l in lines {
        writeln!(out, "{l}").map_err(Error::from)?;
    }
    Ok(())
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs, cfg: &Config, out: &mut dyn Write) -> CliResult<()> {
    cfg.check(&[&["model", "data", "tau", "delimiter", "km_out"]], false)?;
    let model_path: PathBuf = or_cfg(args.model.clone(), cfg, "model")?
        .ok_or_else(|| usage("missing --model"))?;
    let data_path: PathBuf = or_cfg(args.data.clone(), cfg, "data")?
        .ok_or_else(|| usage("missing --data"))?;
    let file = ModelFile::load(&model_path)?;
    let spec = file.model.feature_spec().clone();
    let mut options = LoadOptions {
        horizon: Some(spec.horizon()),
        tau: or_cfg(args.tau, cfg, "tau")?.map(|t| positive("tau", t)).transpose()?,
        feature_spec: Some(spec),
        seed: resolve_seed(cli, cfg)?,
        ..LoadOptions::default()
    };
    if let Some(c) = or_cfg(args.delimiter, cfg, "delimiter")? {
        options.delimiter = delimiter_byte(c)?;
    }
    let cohort = load_cohort(&data_path, &options).map_err(|e| e.context(data_path.display().to_string()))?;
    let regime = file.model.regime_for(&cohort.covariate_names)?;
    let (cens, prop) = file.nuisance.fit(&cohort)?;
    let v = value_estimate_with_error(&cohort, regime.as_ref(), &prop, &cens)?;
    let mut lines = vec![
        format!("method = {}", file.model.method_name()),
        format!("subjects = {}", v.n),
        format!("value = {}", v.value),
        format!("std_error = {}", v.std_error),
    ];
    if let Some(prefix) = or_cfg(args.km_out.clone(), cfg, "km_out")? {
        let curves = concordance_km(&cohort, regime.as_ref())?;
        for (name, curve) in [("consistent", &curves.consistent), ("inconsistent", &curves.inconsistent)] {
            let mut p = prefix.clone().into_os_string();
            p.push(format!(".{name}.csv"));
            let p = PathBuf::from(p);
            let mut buf = Vec::new();
            match curve {
                Some(c) => write_curve(c, &mut buf)?,
                None => buf.extend_from_slice(b"time,survival\n"),
            }
            write_output(&p, &String::from_utf8_lossy(&buf))?;
            lines.push(format!("km_{name} = {}", p.display()));
        }
        lines.push(format!("n_consistent = {}", curves.n_consistent));
        lines.push(format!("n_inconsistent = {}", curves.n_inconsistent));
    }
    for l in lines {
        writeln!(out, "{l}").map_err(Error::from)?;
    }
    Ok(())
}

fn cmd_cv(cli: &Cli, args: &CvArgs, cfg: &Config, out: &mut dyn Write) -> CliResult<()> {
    cfg.check(
        &[&DATA_KEYS, &NUISANCE_KEYS, &SETTINGS_KEYS, &["methods", "repeats", "out"]],
        false,
    )?;
    let seed = resolve_seed(cli, cfg)?;
    let methods = resolve_methods(&args.methods, cfg)?;
    let repeats = nonzero("repeats", or_cfg(args.repeats, cfg, "repeats")?.unwrap_or(5))?;
    let settings = resolve_settings(&args.settings, cfg)?;
    let cohort = load_data(&args.data, cfg, seed)?;
    let nuisance = resolve_nuisance(&args.nuisance, cfg, &cohort.covariate_names, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = cross_validate_methods(&cohort, &methods, repeats, &nuisance, &settings, &mut rng)?;
    write!(out, "{}", report.to_table()).map_err(Error::from)?;
    if let Some(path) = or_cfg(args.out.clone(), cfg, "out")? {
        write_output(&path, &(serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"))?;
    }
    Ok(())
}

fn cmd_benchmark(cli: &Cli, args: &BenchmarkArgs, cfg: &Config, out: &mut dyn Write) -> CliResult<()> {
    cfg.check(
        &[
            &NUISANCE_KEYS,
            &SETTINGS_KEYS,
            &["methods", "replicates", "validation", "out"],
        ],
        true,
    )?;
    let seed = resolve_seed(cli, cfg)?;
    let (config, n) = resolve_sim(&args.sim, cfg, seed)?;
    let bound = config.censor_upper.is_finite().then_some(config.censor_upper);
    let opts = BenchmarkOptions {
        n,
        replicates: nonzero("replicates", or_cfg(args.replicates, cfg, "replicates")?.unwrap_or(100))?,
        validation_m: nonzero("validation", or_cfg(args.validation, cfg, "validation")?.unwrap_or(20_000))?,
        methods: resolve_methods(&args.methods, cfg)?,
        nuisance: resolve_nuisance(&args.nuisance, cfg, &crate::sim::covariate_names(), bound)?,
        settings: resolve_settings(&args.settings, cfg)?,
        seed,
    };
    let report = run_benchmark(&config, &opts)?;
    write!(out, "{}", report.to_table()).map_err(Error::from)?;
    if let Some(path) = or_cfg(args.out.clone(), cfg, "out")? {
        write_output(&path, &(serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"))?;
    }
    Ok(())
}

fn init_threads(cli: &Cli, cfg: &Config) -> CliResult<()> {
    let parallel = matches!(cli.command, Command::Cv(_) | Command::Benchmark(_));
    let threads = match or_cfg(cli.threads, cfg, "threads")? {
        Some(0) => return Err(usage("threads must be at least 1")),
        Some(t) => t as usize,
        None if parallel => std::thread::available_parallelism().map_or(1, |n| n.get()),
        None => 1,
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::debug!("thread pool already configured: {e}");
    }
    Ok(())
}

/// Runs a parsed command, writing results to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    init_threads(cli, &cfg)?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, a, &cfg, out),
        Command::Fit(a) => cmd_fit(cli, a, &cfg, out),
        Command::Evaluate(a) => cmd_evaluate(cli, a, &cfg, out),
        Command::Cv(a) => cmd_cv(cli, a, &cfg, out),
        Command::Benchmark(a) => cmd_benchmark(cli, a, &cfg, out),
    }
}

/// Parses `args`, runs the command on standard output and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let result = execute(&cli, &mut out);
    let _ = out.flush();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                log::debug!("caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}
