//! Command-line front end: config parsing, subcommand dispatch, file I/O.
//!
//! A run is described by a [`RunConfig`]: master seed, thread count, and
//! one section of settings per subcommand. Configs come from three layers,
//! later layers overriding earlier ones:
//!
//! 1. built-in defaults,
//! 2. a TOML config file (`--config`), flat keys in one section per
//!    subcommand, unknown keys rejected,
//! 3. command-line flags.
//!
//! The seed falls back through `--seed`, the file, the `LRPR_SEED`
//! environment variable, and finally 0. Every run writes its fully
//! resolved config back out as a `*.manifest.toml` next to its outputs;
//! re-running `lrpr --config foo.manifest.toml` reproduces the run, and
//! identical (config, seed) pairs produce byte-identical outputs. To keep
//! that guarantee, reports never include wall-clock times, and all CSV
//! floats are printed with 17 significant digits.
//!
//! Exit codes: 0 success, 1 config error, 2 numeric failure, 3 assertion
//! failure, 4 I/O error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{LrprError, Result};
use crate::experiments::{
    check_eta_correlation_bounds, check_lemma31, run_lambda_sweep, run_refined_experiment,
    run_scaling_experiment, run_tightness_experiment, write_records_csv, EtaCorrelationReport,
    GridSummary, LambdaSweepParams, ModelKind, NoiseKind, RefinedParams, ScalingParams,
    TightnessParams,
};
use crate::measurement::{AmplitudeObservation, Dims, LowRankTarget, MeasurementEnsemble};
use crate::nets::{build_net_k_r, build_net_n_r_star, NetBuildParams};
use crate::rng::{derive_rng, DOM_CHECK};
use crate::solvers::{
    sign_ambiguous_error, solve_nuclear_ball, solve_nuclear_constrained, solve_nuclear_regularized,
    solve_rank_constrained, SolverConfig, SolverResult,
};
use crate::srip::{
    certify_srip, check_concentration, check_coverage, estimate_mu_p, ConcentrationReport, SetKind,
    MU_FLOOR,
};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubcommandKind {
    Gen,
    Solve,
    Srip,
    Net,
    Bench,
    Check,
}

impl SubcommandKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SubcommandKind::Gen => "gen",
            SubcommandKind::Solve => "solve",
            SubcommandKind::Srip => "srip",
            SubcommandKind::Net => "net",
            SubcommandKind::Bench => "bench",
            SubcommandKind::Check => "check",
        }
    }
}

// Section structs double as the file format: `#[serde(default)]` fills
// missing keys from `Default`, `deny_unknown_fields` rejects typos.

/// Settings for `gen`: synthesize one instance and write it to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub r: usize,
    /// One of `none`, `gaussian`, `constant`, `alternating`.
    pub noise: String,
    pub sigma: f64,
    pub c: f64,
    pub amplitude: f64,
    pub out_dir: PathBuf,
    pub prefix: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 8,
            m: 8,
            p: 640,
            r: 2,
            noise: "none".into(),
            sigma: 0.05,
            c: 0.05,
            amplitude: 1.0,
            out_dir: ".".into(),
            prefix: "instance".into(),
        }
    }
}

/// Settings for `solve`: one instance, synthetic or loaded from files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub r: usize,
    /// File mode: ensemble binary plus observation CSV (target optional,
    /// enables error reporting). Ignores the dims above except `r` when no
    /// target is given.
    pub ensemble: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub obs: Option<PathBuf>,
    /// One of `rank`, `ball`, `reg`, `constrained`.
    pub model: String,
    pub lambda: Option<f64>,
    pub nuclear_radius: Option<f64>,
    pub noise_radius: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
    pub noise: String,
    pub sigma: f64,
    pub c: f64,
    pub amplitude: f64,
    pub out_dir: PathBuf,
    pub name: String,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            n: 8,
            m: 8,
            p: 640,
            r: 2,
            ensemble: None,
            target: None,
            obs: None,
            model: "rank".into(),
            lambda: None,
            nuclear_radius: None,
            noise_radius: None,
            max_iters: 5000,
            tol: 1e-8,
            noise: "none".into(),
            sigma: 0.05,
            c: 0.05,
            amplitude: 1.0,
            out_dir: ".".into(),
            name: "solve".into(),
        }
    }
}

/// Settings for `srip`: certify subset isometry on a fresh ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SripConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub r: usize,
    pub samples: usize,
    /// `U_r` or `N_r_star`.
    pub set: String,
    pub out_dir: PathBuf,
    pub name: String,
}

impl Default for SripConfig {
    fn default() -> Self {
        SripConfig {
            n: 6,
            m: 6,
            p: 768,
            r: 1,
            samples: 500,
            set: "U_r".into(),
            out_dir: ".".into(),
            name: "srip".into(),
        }
    }
}

/// Settings for `net`: build an epsilon-net, optionally verify covering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// `k_r` or `n_r_star`.
    pub kind: String,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub epsilon: f64,
    pub cap: usize,
    pub pool: usize,
    /// 0 skips the covering check.
    pub verify_samples: usize,
    pub out_dir: PathBuf,
    pub name: String,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            kind: "k_r".into(),
            n: 2,
            m: 2,
            r: 1,
            epsilon: 0.5,
            cap: 1_000_000,
            pool: 20_000,
            verify_samples: 10_000,
            out_dir: ".".into(),
            name: "net".into(),
        }
    }
}

/// Settings for `bench`: one of the experiment suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// `scaling`, `tightness`, `refined`, or `lambda`.
    pub suite: String,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    /// Empty picks a per-suite default grid of multiples of `(m+n)r`.
    pub p_grid: Vec<usize>,
    pub trials: usize,
    pub noise: String,
    pub sigma: f64,
    pub c: f64,
    pub amplitude: f64,
    pub model: String,
    /// Aligned-noise classifier threshold (tightness suite).
    pub c0: f64,
    /// Enforced 10%-quantile floor on rho (tightness suite).
    pub floor: Option<f64>,
    /// Measurement count for the lambda suite; 0 picks `16 (m+n) r`.
    pub p: usize,
    /// Empty picks multiples of the threshold (constant noise only).
    pub lambdas: Vec<f64>,
    pub max_iters: usize,
    pub tol: f64,
    pub out_dir: PathBuf,
    /// Empty defaults to the suite name.
    pub name: String,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            suite: "scaling".into(),
            n: 8,
            m: 8,
            r: 2,
            p_grid: vec![],
            trials: 50,
            noise: "gaussian".into(),
            sigma: 0.05,
            c: 0.02,
            amplitude: 1.0,
            model: "rank".into(),
            c0: 0.999,
            floor: None,
            p: 0,
            lambdas: vec![],
            max_iters: 5000,
            tol: 1e-8,
            out_dir: ".".into(),
            name: String::new(),
        }
    }
}

/// Settings for `check`: the proof-identity and constants checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// `all`, `lemma31`, `concentration`, `mu_p`, or `eta_corr`.
    pub which: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub r: usize,
    /// Gaussian noise scale for generated instances.
    pub sigma: f64,
    /// Random instances for the residual-bound check.
    pub instances: usize,
    pub conc_p: usize,
    pub conc_t: f64,
    pub conc_trials: usize,
    pub cov_p: usize,
    pub cov_t: f64,
    pub cov_trials: usize,
    pub mu_trials: usize,
    /// Direction samples for the correlation check.
    pub samples: usize,
    /// `U_r` or `N_r_star`.
    pub set: String,
    pub out_dir: PathBuf,
    pub name: String,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            which: "all".into(),
            n: 4,
            m: 4,
            p: 40,
            r: 2,
            sigma: 0.3,
            instances: 1000,
            conc_p: 200,
            conc_t: 0.3,
            conc_trials: 2000,
            cov_p: 500,
            cov_t: 0.05,
            cov_trials: 5000,
            mu_trials: 20_000,
            samples: 200,
            set: "N_r_star".into(),
            out_dir: ".".into(),
            name: "check".into(),
        }
    }
}

/// Fully resolved run description; also the manifest schema.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: SubcommandKind,
    pub seed: u64,
    /// 0 uses the machine's parallelism.
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen: Option<GenConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub srip: Option<SripConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub net: Option<NetConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckConfig>,
}

impl RunConfig {
    pub fn manifest_string(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| LrprError::Format(format!("manifest serialization failed: {e}")))
    }
}

/// Raw config file: everything optional so flags and defaults can fill in.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub subcommand: Option<SubcommandKind>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub gen: Option<GenConfig>,
    pub solve: Option<SolveConfig>,
    pub srip: Option<SripConfig>,
    pub net: Option<NetConfig>,
    pub bench: Option<BenchConfig>,
    pub check: Option<CheckConfig>,
}

pub fn parse_config_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| LrprError::Config(format!("config file {}: {e}", path.display())))
}

// Command-line surface. Every subcommand flag is optional; absent flags
// fall through to the config file and then to defaults.

#[derive(Debug, Parser)]
#[command(
    name = "lrpr",
    version,
    about = "Low-rank phase retrieval: solvers, certifiers, experiments"
)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (fallbacks: config file, LRPR_SEED, 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = machine parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub cmd: Option<Cmd>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate an instance: ensemble binary, target JSON, observation CSV.
    Gen(GenArgs),
    /// Solve one instance, synthetic or from files.
    Solve(SolveArgs),
    /// Certify empirical subset isometry levels.
    Srip(SripArgs),
    /// Build an epsilon-net and verify covering.
    Net(NetArgs),
    /// Run an experiment suite.
    Bench(BenchArgs),
    /// Run proof-identity and constants checks.
    Check(CheckArgs),
}

#[derive(Debug, Default, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub prefix: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub obs: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub nuclear_radius: Option<f64>,
    #[arg(long)]
    pub noise_radius: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct SripArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub set: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct NetArgs {
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub verify_samples: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub p_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub c0: Option<f64>,
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
    /// Print the trial plan and exit without computing.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Default, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub which: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub conc_p: Option<usize>,
    #[arg(long)]
    pub conc_t: Option<f64>,
    #[arg(long)]
    pub conc_trials: Option<usize>,
    #[arg(long)]
    pub cov_p: Option<usize>,
    #[arg(long)]
    pub cov_t: Option<f64>,
    #[arg(long)]
    pub cov_trials: Option<usize>,
    #[arg(long)]
    pub mu_trials: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub set: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
}

// Overlay an optional flag onto a resolved field.
macro_rules! ov {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}
// Same, for fields that stay optional.
macro_rules! oo {
    ($dst:expr, $src:expr) => {
        if $src.is_some() {
            $dst = $src;
        }
    };
}

fn merge_gen(file: Option<GenConfig>, a: GenArgs) -> GenConfig {
    let mut g = file.unwrap_or_default();
    ov!(g.n, a.n);
    ov!(g.m, a.m);
    ov!(g.p, a.p);
    ov!(g.r, a.r);
    ov!(g.noise, a.noise);
    ov!(g.sigma, a.sigma);
    ov!(g.c, a.c);
    ov!(g.amplitude, a.amplitude);
    ov!(g.out_dir, a.out_dir);
    ov!(g.prefix, a.prefix);
    g
}

fn merge_solve(file: Option<SolveConfig>, a: SolveArgs) -> SolveConfig {
    let mut s = file.unwrap_or_default();
    ov!(s.n, a.n);
    ov!(s.m, a.m);
    ov!(s.p, a.p);
    ov!(s.r, a.r);
    oo!(s.ensemble, a.ensemble);
    oo!(s.target, a.target);
    oo!(s.obs, a.obs);
    ov!(s.model, a.model);
    oo!(s.lambda, a.lambda);
    oo!(s.nuclear_radius, a.nuclear_radius);
    oo!(s.noise_radius, a.noise_radius);
    ov!(s.max_iters, a.max_iters);
    ov!(s.tol, a.tol);
    ov!(s.noise, a.noise);
    ov!(s.sigma, a.sigma);
    ov!(s.c, a.c);
    ov!(s.amplitude, a.amplitude);
    ov!(s.out_dir, a.out_dir);
    ov!(s.name, a.name);
    s
}

fn merge_srip(file: Option<SripConfig>, a: SripArgs) -> SripConfig {
    let mut s = file.unwrap_or_default();
    ov!(s.n, a.n);
    ov!(s.m, a.m);
    ov!(s.p, a.p);
    ov!(s.r, a.r);
    ov!(s.samples, a.samples);
    ov!(s.set, a.set);
    ov!(s.out_dir, a.out_dir);
    ov!(s.name, a.name);
    s
}

fn merge_net(file: Option<NetConfig>, a: NetArgs) -> NetConfig {
    let mut s = file.unwrap_or_default();
    ov!(s.kind, a.kind);
    ov!(s.n, a.n);
    ov!(s.m, a.m);
    ov!(s.r, a.r);
    ov!(s.epsilon, a.epsilon);
    ov!(s.cap, a.cap);
    ov!(s.pool, a.pool);
    ov!(s.verify_samples, a.verify_samples);
    ov!(s.out_dir, a.out_dir);
    ov!(s.name, a.name);
    s
}

fn merge_bench(file: Option<BenchConfig>, a: BenchArgs) -> BenchConfig {
    let mut s = file.unwrap_or_default();
    ov!(s.suite, a.suite);
    ov!(s.n, a.n);
    ov!(s.m, a.m);
    ov!(s.r, a.r);
    ov!(s.p_grid, a.p_grid);
    ov!(s.trials, a.trials);
    ov!(s.noise, a.noise);
    ov!(s.sigma, a.sigma);
    ov!(s.c, a.c);
    ov!(s.amplitude, a.amplitude);
    ov!(s.model, a.model);
    ov!(s.c0, a.c0);
    oo!(s.floor, a.floor);
    ov!(s.p, a.p);
    ov!(s.lambdas, a.lambdas);
    ov!(s.max_iters, a.max_iters);
    ov!(s.tol, a.tol);
    ov!(s.out_dir, a.out_dir);
    ov!(s.name, a.name);
    s
}

fn merge_check(file: Option<CheckConfig>, a: CheckArgs) -> CheckConfig {
    let mut s = file.unwrap_or_default();
    ov!(s.which, a.which);
    ov!(s.n, a.n);
    ov!(s.m, a.m);
    ov!(s.p, a.p);
    ov!(s.r, a.r);
    ov!(s.sigma, a.sigma);
    ov!(s.instances, a.instances);
    ov!(s.conc_p, a.conc_p);
    ov!(s.conc_t, a.conc_t);
    ov!(s.conc_trials, a.conc_trials);
    ov!(s.cov_p, a.cov_p);
    ov!(s.cov_t, a.cov_t);
    ov!(s.cov_trials, a.cov_trials);
    ov!(s.mu_trials, a.mu_trials);
    ov!(s.samples, a.samples);
    ov!(s.set, a.set);
    ov!(s.out_dir, a.out_dir);
    ov!(s.name, a.name);
    s
}

/// Seed precedence: flag, then config file, then `LRPR_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = file {
        return Ok(s);
    }
    match env {
        Some(v) => v.parse::<u64>().map_err(|_| {
            LrprError::Config(format!(
                "LRPR_SEED: expected an unsigned integer, got {v:?}"
            ))
        }),
        None => Ok(0),
    }
}

fn err_field(field: &str, msg: &str) -> LrprError {
    LrprError::Config(format!("{field}: {msg}"))
}

fn require_min(field: &str, v: usize, min: usize) -> Result<()> {
    if v < min {
        return Err(err_field(
            field,
            &format!("must be at least {min}, got {v}"),
        ));
    }
    Ok(())
}

fn parse_model(s: &str) -> Result<ModelKind> {
    match s {
        "rank" => Ok(ModelKind::Rank),
        "ball" => Ok(ModelKind::Ball),
        "reg" => Ok(ModelKind::Reg),
        "constrained" => Ok(ModelKind::Constrained),
        other => Err(err_field(
            "model",
            &format!("unknown model {other:?} (expected rank, ball, reg, constrained)"),
        )),
    }
}

fn parse_noise(noise: &str, sigma: f64, c: f64, amplitude: f64) -> Result<NoiseKind> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(err_field("sigma", &format!("must be >= 0, got {sigma}")));
    }
    if c.is_nan() || c < 0.0 {
        return Err(err_field("c", &format!("must be >= 0, got {c}")));
    }
    if amplitude.is_nan() || amplitude < 0.0 {
        return Err(err_field(
            "amplitude",
            &format!("must be >= 0, got {amplitude}"),
        ));
    }
    match noise {
        "none" => Ok(NoiseKind::None),
        "gaussian" => Ok(NoiseKind::Gaussian { sigma }),
        "constant" => Ok(NoiseKind::Constant { c }),
        "alternating" => Ok(NoiseKind::Alternating { amplitude }),
        "custom" => Err(err_field(
            "noise",
            "custom noise comes from observation files, not the generator",
        )),
        other => Err(err_field(
            "noise",
            &format!("unknown noise {other:?} (expected none, gaussian, constant, alternating)"),
        )),
    }
}

fn parse_set(s: &str) -> Result<SetKind> {
    match s {
        "U_r" | "u_r" => Ok(SetKind::UR),
        "N_r_star" | "n_r_star" => Ok(SetKind::NRStar),
        other => Err(err_field(
            "set",
            &format!("unknown set {other:?} (expected U_r or N_r_star)"),
        )),
    }
}

fn validate_dims(n: usize, m: usize, p: usize, r: usize) -> Result<()> {
    require_min("n", n, 1)?;
    require_min("m", m, 1)?;
    require_min("p", p, 1)?;
    require_min("r", r, 1)?;
    if r > n.min(m) {
        return Err(err_field(
            "r",
            &format!("must be <= min(n, m) = {}, got {r}", n.min(m)),
        ));
    }
    Ok(())
}

/// Per-suite default grid: multiples of `(m+n) r`.
fn default_p_grid(suite: &str, n: usize, m: usize, r: usize) -> Result<Vec<usize>> {
    let unit = (m + n) * r;
    let mults: &[usize] = match suite {
        "scaling" | "tightness" => &[16, 32, 64],
        "refined" => &[16, 32, 64, 128, 256],
        "lambda" => &[],
        other => return Err(err_field("suite", &format!("unknown suite {other:?}"))),
    };
    Ok(mults.iter().map(|k| k * unit).collect())
}

/// Fills suite-dependent defaults so the manifest records concrete values.
fn resolve_bench(mut b: BenchConfig) -> Result<BenchConfig> {
    if b.name.is_empty() {
        b.name = b.suite.clone();
    }
    if b.p_grid.is_empty() {
        b.p_grid = default_p_grid(&b.suite, b.n, b.m, b.r)?;
    }
    if b.suite == "lambda" {
        if b.p == 0 {
            b.p = 16 * (b.m + b.n) * b.r;
        }
        if b.noise == "gaussian" && b.c > 0.0 {
            // The lambda suite defaults to fully aligned noise so the
            // threshold is a deterministic function of the config.
            b.noise = "constant".into();
        }
        if b.lambdas.is_empty() {
            if b.noise != "constant" {
                return Err(err_field("lambdas", "required unless noise = constant"));
            }
            let eta_norm = b.c * (b.p as f64).sqrt();
            let threshold = 2.0 * (2.0 * b.p as f64).sqrt() * eta_norm;
            b.lambdas = [1.05, 2.0, 4.0, 16.0, 64.0]
                .iter()
                .map(|k| k * threshold)
                .collect();
            b.lambdas.push(1e6);
        }
    }
    Ok(b)
}

fn validate_bench(b: &BenchConfig) -> Result<()> {
    require_min("trials", b.trials, 1)?;
    validate_dims(b.n, b.m, b.p.max(1), b.r)?;
    if b.p_grid.is_empty() && b.suite != "lambda" {
        return Err(err_field("p_grid", "needs at least one grid point"));
    }
    parse_model(&b.model)?;
    parse_noise(&b.noise, b.sigma, b.c, b.amplitude)?;
    if !(b.c0 > 0.0 && b.c0 < 1.0) {
        return Err(err_field(
            "c0",
            &format!("must lie in (0, 1), got {}", b.c0),
        ));
    }
    require_min("max_iters", b.max_iters, 1)?;
    if b.tol.is_nan() || b.tol <= 0.0 {
        return Err(err_field("tol", &format!("must be > 0, got {}", b.tol)));
    }
    Ok(())
}

/// Builds the fully resolved [`RunConfig`] from parsed flags, an optional
/// config file, and the environment seed.
pub fn resolve_config(cli: Cli, env_seed: Option<&str>) -> Result<(RunConfig, bool)> {
    let file = match &cli.config {
        Some(path) => parse_config_file(path)?,
        None => FileConfig::default(),
    };
    let seed = resolve_seed(cli.seed, file.seed, env_seed)?;
    let threads = cli.threads.or(file.threads).unwrap_or(0);

    let mut cfg = RunConfig {
        subcommand: SubcommandKind::Solve,
        seed,
        threads,
        gen: file.gen,
        solve: file.solve,
        srip: file.srip,
        net: file.net,
        bench: file.bench,
        check: file.check,
    };
    let mut dry_run = false;

    let sub = match (cli.cmd, file.subcommand) {
        (Some(cmd), _) => cmd,
        (None, Some(kind)) => match kind {
            SubcommandKind::Gen => Cmd::Gen(GenArgs::default()),
            SubcommandKind::Solve => Cmd::Solve(SolveArgs::default()),
            SubcommandKind::Srip => Cmd::Srip(SripArgs::default()),
            SubcommandKind::Net => Cmd::Net(NetArgs::default()),
            SubcommandKind::Bench => Cmd::Bench(BenchArgs::default()),
            SubcommandKind::Check => Cmd::Check(CheckArgs::default()),
        },
        (None, None) => {
            return Err(err_field(
                "subcommand",
                "missing (pass a subcommand or a config file naming one)",
            ));
        }
    };

    match sub {
        Cmd::Gen(a) => {
            cfg.subcommand = SubcommandKind::Gen;
            let g = merge_gen(cfg.gen.take(), a);
            validate_dims(g.n, g.m, g.p, g.r)?;
            parse_noise(&g.noise, g.sigma, g.c, g.amplitude)?;
            cfg.gen = Some(g);
        }
        Cmd::Solve(a) => {
            cfg.subcommand = SubcommandKind::Solve;
            let s = merge_solve(cfg.solve.take(), a);
            validate_dims(s.n, s.m, s.p, s.r)?;
            parse_model(&s.model)?;
            parse_noise(&s.noise, s.sigma, s.c, s.amplitude)?;
            require_min("max_iters", s.max_iters, 1)?;
            if s.tol.is_nan() || s.tol <= 0.0 {
                return Err(err_field("tol", &format!("must be > 0, got {}", s.tol)));
            }
            let file_mode = s.ensemble.is_some() || s.obs.is_some() || s.target.is_some();
            if file_mode && (s.ensemble.is_none() || s.obs.is_none()) {
                return Err(err_field(
                    "ensemble",
                    "file mode needs both ensemble and obs paths",
                ));
            }
            cfg.solve = Some(s);
        }
        Cmd::Srip(a) => {
            cfg.subcommand = SubcommandKind::Srip;
            let s = merge_srip(cfg.srip.take(), a);
            validate_dims(s.n, s.m, s.p, s.r)?;
            require_min("samples", s.samples, 1)?;
            parse_set(&s.set)?;
            cfg.srip = Some(s);
        }
        Cmd::Net(a) => {
            cfg.subcommand = SubcommandKind::Net;
            let s = merge_net(cfg.net.take(), a);
            require_min("n", s.n, 1)?;
            require_min("m", s.m, 1)?;
            require_min("r", s.r, 1)?;
            if s.epsilon.is_nan() || s.epsilon <= 0.0 {
                return Err(err_field(
                    "epsilon",
                    &format!("must be > 0, got {}", s.epsilon),
                ));
            }
            if s.kind != "k_r" && s.kind != "n_r_star" {
                return Err(err_field(
                    "kind",
                    &format!("unknown net kind {:?} (expected k_r or n_r_star)", s.kind),
                ));
            }
            cfg.net = Some(s);
        }
        Cmd::Bench(a) => {
            cfg.subcommand = SubcommandKind::Bench;
            dry_run = a.dry_run;
            let b = resolve_bench(merge_bench(cfg.bench.take(), a))?;
            validate_bench(&b)?;
            cfg.bench = Some(b);
        }
        Cmd::Check(a) => {
            cfg.subcommand = SubcommandKind::Check;
            let s = merge_check(cfg.check.take(), a);
            validate_dims(s.n, s.m, s.p, s.r)?;
            parse_set(&s.set)?;
            match s.which.as_str() {
                "all" | "lemma31" | "concentration" | "mu_p" | "eta_corr" => {}
                other => {
                    return Err(err_field(
                        "which",
                        &format!("unknown check {other:?} (expected all, lemma31, concentration, mu_p, eta_corr)"),
                    ));
                }
            }
            cfg.check = Some(s);
        }
    }
    Ok((cfg, dry_run))
}

/// Flag-level entry used by tests: argv (including program name) plus an
/// explicit environment seed.
pub fn config_from_args(argv: &[&str], env_seed: Option<&str>) -> Result<(RunConfig, bool)> {
    let cli = Cli::try_parse_from(argv).map_err(|e| LrprError::Config(e.to_string()))?;
    resolve_config(cli, env_seed)
}

fn check_out_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(LrprError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", dir.display()),
        )))
    }
}

fn write_manifest(cfg: &RunConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.manifest_string()?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| LrprError::Format(format!("report serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Machine-readable result of a `solve` run. Deliberately excludes wall
/// time and file paths so identical instances give identical bytes.
#[derive(Debug, Serialize)]
pub struct SolveReport {
    pub model: String,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub r: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub objective_initial: f64,
    pub objective_final: f64,
    pub stationarity: f64,
    pub nuclear_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_used: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

fn exec_gen(cfg: &RunConfig, g: &GenConfig) -> Result<()> {
    check_out_dir(&g.out_dir)?;
    let dims = Dims::new(g.n, g.m, g.p, g.r)?;
    let ensemble = MeasurementEnsemble::generate(dims, cfg.seed)?;
    let target = LowRankTarget::random_unit(g.n, g.m, g.r, cfg.seed)?;
    let noise = parse_noise(&g.noise, g.sigma, g.c, g.amplitude)?;
    let eta = noise.generate(g.p, cfg.seed)?;
    let obs = ensemble.observe(&target, eta.as_ref())?;

    write_manifest(cfg, &g.out_dir.join(format!("{}.manifest.toml", g.prefix)))?;
    let ens_path = g.out_dir.join(format!("{}.ens", g.prefix));
    ensemble.write_file(&ens_path)?;
    println!("wrote {}", ens_path.display());
    let target_path = g.out_dir.join(format!("{}.target.json", g.prefix));
    target.write_json(&target_path)?;
    println!("wrote {}", target_path.display());
    let obs_path = g.out_dir.join(format!("{}.obs.csv", g.prefix));
    obs.write_csv(&obs_path)?;
    println!("wrote {}", obs_path.display());
    Ok(())
}

/// Loads or synthesizes the instance a `solve` run works on.
fn solve_instance(
    cfg: &RunConfig,
    s: &SolveConfig,
) -> Result<(
    MeasurementEnsemble,
    Option<LowRankTarget>,
    AmplitudeObservation,
)> {
    match (&s.ensemble, &s.obs) {
        (Some(ens_path), Some(obs_path)) => {
            let target = match &s.target {
                Some(t) => Some(LowRankTarget::read_json(t)?),
                None => None,
            };
            let r = target.as_ref().map_or(s.r, |t| t.r);
            let ensemble = MeasurementEnsemble::read_file(ens_path, r)?;
            if let Some(t) = &target {
                if t.n != ensemble.dims.n || t.m != ensemble.dims.m {
                    return Err(err_field(
                        "target",
                        &format!(
                            "target is {}x{} but the ensemble measures {}x{} matrices",
                            t.n, t.m, ensemble.dims.n, ensemble.dims.m
                        ),
                    ));
                }
            }
            let obs = AmplitudeObservation::read_csv(obs_path)?;
            if obs.y.len() != ensemble.dims.p {
                return Err(err_field(
                    "obs",
                    &format!(
                        "observation has {} rows, ensemble has p={}",
                        obs.y.len(),
                        ensemble.dims.p
                    ),
                ));
            }
            Ok((ensemble, target, obs))
        }
        _ => {
            let dims = Dims::new(s.n, s.m, s.p, s.r)?;
            let ensemble = MeasurementEnsemble::generate(dims, cfg.seed)?;
            let target = LowRankTarget::random_unit(s.n, s.m, s.r, cfg.seed)?;
            let noise = parse_noise(&s.noise, s.sigma, s.c, s.amplitude)?;
            let eta = noise.generate(s.p, cfg.seed)?;
            let obs = ensemble.observe(&target, eta.as_ref())?;
            Ok((ensemble, target.into(), obs))
        }
    }
}

fn exec_solve(cfg: &RunConfig, s: &SolveConfig) -> Result<()> {
    check_out_dir(&s.out_dir)?;
    write_manifest(cfg, &s.out_dir.join(format!("{}.manifest.toml", s.name)))?;

    let (ensemble, target, obs) = solve_instance(cfg, s)?;
    let model = parse_model(&s.model)?;
    let eta_norm = obs.eta.as_ref().map_or(0.0, |e| e.norm());
    let mut solver = SolverConfig {
        max_iters: s.max_iters,
        tol_rel_change: s.tol,
        lambda: s.lambda,
        nuclear_radius: s.nuclear_radius,
        noise_radius: s.noise_radius,
        ..SolverConfig::default()
    };
    match model {
        ModelKind::Ball if solver.nuclear_radius.is_none() => {
            let t = target.as_ref().ok_or_else(|| {
                err_field(
                    "nuclear_radius",
                    "required for model ball when no target is known",
                )
            })?;
            solver.nuclear_radius = Some(t.nuclear_norm());
        }
        ModelKind::Reg if solver.lambda.is_none() => {
            return Err(err_field("lambda", "required for model reg"));
        }
        ModelKind::Constrained if solver.noise_radius.is_none() => {
            solver.noise_radius = Some(eta_norm);
        }
        _ => {}
    }
    let res: SolverResult = match model {
        ModelKind::Rank => solve_rank_constrained(&ensemble, &obs.y, &solver)?,
        ModelKind::Ball => solve_nuclear_ball(&ensemble, &obs.y, &solver)?,
        ModelKind::Reg => solve_nuclear_regularized(&ensemble, &obs.y, &solver)?,
        ModelKind::Constrained => solve_nuclear_constrained(&ensemble, &obs.y, &solver)?,
    };

    let error = target
        .as_ref()
        .map(|t| sign_ambiguous_error(&res.estimate, &t.dense));
    let rho = match error {
        Some(e) if eta_norm > 0.0 => Some(e / (eta_norm / (ensemble.dims.p as f64).sqrt())),
        _ => None,
    };
    let report = SolveReport {
        model: s.model.clone(),
        n: ensemble.dims.n,
        m: ensemble.dims.m,
        p: ensemble.dims.p,
        r: ensemble.dims.r,
        seed: cfg.seed,
        iterations: res.iterations_used,
        converged: res.converged,
        objective_initial: res.objective_history[0],
        objective_final: *res.objective_history.last().expect("nonempty history"),
        stationarity: res.stationarity_residual,
        nuclear_norm: crate::solvers::nuclear_norm(&res.estimate),
        lambda_used: res.lambda_used,
        eta_norm: Some(eta_norm),
        error,
        rho,
    };
    write_json(&report, &s.out_dir.join(format!("{}.json", s.name)))?;
    println!(
        "solve: model={} iterations={} converged={} error={}",
        s.model,
        res.iterations_used,
        res.converged,
        error.map_or_else(|| "unknown".into(), |e| format!("{e:.3e}")),
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SripReport {
    n: usize,
    m: usize,
    p: usize,
    r: usize,
    seed: u64,
    #[serde(flatten)]
    estimate: crate::srip::SripEstimate,
}

fn exec_srip(cfg: &RunConfig, s: &SripConfig) -> Result<()> {
    check_out_dir(&s.out_dir)?;
    write_manifest(cfg, &s.out_dir.join(format!("{}.manifest.toml", s.name)))?;
    let dims = Dims::new(s.n, s.m, s.p, s.r)?;
    let ensemble = MeasurementEnsemble::generate(dims, cfg.seed)?;
    let estimate = certify_srip(&ensemble, s.r, s.samples, parse_set(&s.set)?, cfg.seed)?;
    println!(
        "srip: theta_minus={:.4} theta_plus={:.4} violations={}",
        estimate.theta_minus_hat, estimate.theta_plus_hat, estimate.violations
    );
    let report = SripReport {
        n: s.n,
        m: s.m,
        p: s.p,
        r: s.r,
        seed: cfg.seed,
        estimate,
    };
    write_json(&report, &s.out_dir.join(format!("{}.json", s.name)))
}

fn exec_net(cfg: &RunConfig, s: &NetConfig) -> Result<()> {
    check_out_dir(&s.out_dir)?;
    write_manifest(cfg, &s.out_dir.join(format!("{}.manifest.toml", s.name)))?;
    let params = NetBuildParams {
        epsilon: s.epsilon,
        cap: s.cap,
        pool: s.pool,
        seed: cfg.seed,
    };
    let net = match s.kind.as_str() {
        "k_r" => build_net_k_r(s.n, s.m, s.r, &params)?,
        _ => build_net_n_r_star(s.n, s.m, s.r, &params)?,
    };
    println!(
        "net: kind={} cardinality={} bound={:.3e}",
        s.kind,
        net.cardinality(),
        net.cardinality_bound
    );
    let net_path = s.out_dir.join(format!("{}.net", s.name));
    net.write_file(&net_path)?;
    println!("wrote {}", net_path.display());
    net.write_sidecar(&s.out_dir.join(format!("{}.net.json", s.name)))?;
    println!(
        "wrote {}",
        s.out_dir.join(format!("{}.net.json", s.name)).display()
    );
    if s.verify_samples > 0 {
        let report = crate::nets::verify_covering(&net, s.verify_samples, cfg.seed)?;
        println!(
            "net: covered_fraction={} max_gap={:.4} over {} samples",
            report.covered_fraction, report.max_gap, report.samples
        );
        write_json(&report, &s.out_dir.join(format!("{}.verify.json", s.name)))?;
    }
    Ok(())
}

/// Per-suite summary written next to the records CSV.
#[derive(Debug, Serialize)]
struct BenchSummary {
    suite: String,
    seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    summaries: Vec<GridSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    all_aligned: Option<bool>,
    /// Refined suite: `(p, rate, median error)` per grid point.
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<Vec<(usize, f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    intercept: Option<f64>,
    /// Lambda suite: `(lambda, median error)` per lambda.
    #[serde(skip_serializing_if = "Option::is_none")]
    medians: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_median_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope_vs_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio_at_lambda_min: Option<f64>,
}

impl BenchSummary {
    fn new(suite: &str, seed: u64) -> Self {
        BenchSummary {
            suite: suite.into(),
            seed,
            summaries: vec![],
            all_aligned: None,
            points: None,
            slope: None,
            intercept: None,
            medians: None,
            baseline_median_error: None,
            slope_vs_scale: None,
            ratio_at_lambda_min: None,
        }
    }
}

fn print_plan(b: &BenchConfig) {
    println!(
        "plan: suite={} dims=({},{},{}) model={} noise={}",
        b.suite, b.n, b.m, b.r, b.model, b.noise
    );
    let mut total = 0usize;
    if b.suite == "lambda" {
        for l in &b.lambdas {
            println!("plan: lambda={l:.6e} trials={}", b.trials);
            total += b.trials;
        }
        println!("plan: baseline trials={}", b.trials);
        total += b.trials;
    } else {
        for p in &b.p_grid {
            println!("plan: p={p} trials={}", b.trials);
            total += b.trials;
        }
    }
    println!("plan: total jobs {total}");
}

fn exec_bench(cfg: &RunConfig, b: &BenchConfig, dry_run: bool) -> Result<()> {
    if dry_run {
        print_plan(b);
        return Ok(());
    }
    check_out_dir(&b.out_dir)?;
    write_manifest(cfg, &b.out_dir.join(format!("{}.manifest.toml", b.name)))?;
    let solver = SolverConfig {
        max_iters: b.max_iters,
        tol_rel_change: b.tol,
        ..SolverConfig::default()
    };
    let noise = parse_noise(&b.noise, b.sigma, b.c, b.amplitude)?;
    let model = parse_model(&b.model)?;
    let mut summary = BenchSummary::new(&b.suite, cfg.seed);
    let records = match b.suite.as_str() {
        "scaling" => {
            let res = run_scaling_experiment(&ScalingParams {
                n: b.n,
                m: b.m,
                r: b.r,
                p_grid: b.p_grid.clone(),
                trials: b.trials,
                noise,
                model,
                seed: cfg.seed,
                solver,
            })?;
            summary.summaries = res.summaries;
            res.records
        }
        "tightness" => {
            let res = run_tightness_experiment(&TightnessParams {
                n: b.n,
                m: b.m,
                r: b.r,
                p_grid: b.p_grid.clone(),
                trials: b.trials,
                c: b.c,
                c0: b.c0,
                floor: b.floor,
                seed: cfg.seed,
                solver,
            })?;
            summary.summaries = res.summaries;
            summary.all_aligned = Some(res.all_aligned);
            res.records
        }
        "refined" => {
            let res = run_refined_experiment(&RefinedParams {
                n: b.n,
                m: b.m,
                r: b.r,
                p_grid: b.p_grid.clone(),
                trials: b.trials,
                sigma: b.sigma,
                seed: cfg.seed,
                solver,
            })?;
            summary.points = Some(res.points);
            summary.slope = res.slope;
            summary.intercept = res.intercept;
            res.records
        }
        _ => {
            let res = run_lambda_sweep(&LambdaSweepParams {
                n: b.n,
                m: b.m,
                r: b.r,
                p: b.p,
                lambdas: b.lambdas.clone(),
                trials: b.trials,
                noise,
                seed: cfg.seed,
                solver,
            })?;
            summary.medians = Some(res.medians);
            summary.baseline_median_error = Some(res.baseline_median_error);
            summary.slope_vs_scale = Some(res.slope_vs_scale);
            summary.ratio_at_lambda_min = Some(res.ratio_at_lambda_min);
            res.records
        }
    };
    let csv_path = b.out_dir.join(format!("{}.csv", b.name));
    write_records_csv(&records, &csv_path)?;
    println!("wrote {} ({} records)", csv_path.display(), records.len());
    write_json(
        &summary,
        &b.out_dir.join(format!("{}.summary.json", b.name)),
    )
}

#[derive(Debug, Serialize)]
struct Lemma31CheckOut {
    instances: usize,
    violations: usize,
    min_slack_minus: f64,
    min_slack_plus: f64,
}

#[derive(Debug, Serialize)]
struct MuPoint {
    p: usize,
    mu_hat: f64,
    above_floor: bool,
}

#[derive(Debug, Serialize)]
struct MuOut {
    floor: f64,
    trials: usize,
    points: Vec<MuPoint>,
}

#[derive(Debug, Serialize)]
struct ConcPair {
    concentration: ConcentrationReport,
    coverage: ConcentrationReport,
}

#[derive(Debug, Serialize)]
struct CheckReport {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lemma31: Option<Lemma31CheckOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    concentration: Option<ConcPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu_p: Option<MuOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta_correlation: Option<EtaCorrelationReport>,
}

fn run_lemma31_check(c: &CheckConfig, seed: u64) -> Result<Lemma31CheckOut> {
    use rayon::prelude::*;
    let dims = Dims::new(c.n, c.m, c.p, c.r)?;
    let noise = NoiseKind::Gaussian { sigma: c.sigma };
    let reports: Vec<crate::experiments::Lemma31Report> = (0..c.instances)
        .into_par_iter()
        .map(|k| {
            let s = derive_rng(seed, DOM_CHECK, k as u64, 9).gen::<u64>();
            let ensemble = MeasurementEnsemble::generate(dims, s)?;
            let x0 = LowRankTarget::random_unit(c.n, c.m, c.r, s)?;
            let x = LowRankTarget::random_unit(c.n, c.m, c.r, s.wrapping_add(1))?;
            let eta = noise.generate(c.p, s)?.expect("gaussian noise present");
            check_lemma31(&ensemble, &x.dense, &x0.dense, &eta)
        })
        .collect::<Result<_>>()?;
    Ok(Lemma31CheckOut {
        instances: c.instances,
        violations: reports.iter().filter(|r| !r.pass).count(),
        min_slack_minus: reports
            .iter()
            .map(|r| r.slack_minus)
            .fold(f64::INFINITY, f64::min),
        min_slack_plus: reports
            .iter()
            .map(|r| r.slack_plus)
            .fold(f64::INFINITY, f64::min),
    })
}

fn exec_check(cfg: &RunConfig, c: &CheckConfig) -> Result<()> {
    check_out_dir(&c.out_dir)?;
    write_manifest(cfg, &c.out_dir.join(format!("{}.manifest.toml", c.name)))?;
    let mut report = CheckReport {
        seed: cfg.seed,
        lemma31: None,
        concentration: None,
        mu_p: None,
        eta_correlation: None,
    };
    let all = c.which == "all";
    if all || c.which == "lemma31" {
        let out = run_lemma31_check(c, cfg.seed)?;
        println!(
            "check lemma31: {}/{} violations",
            out.violations, out.instances
        );
        report.lemma31 = Some(out);
    }
    if all || c.which == "concentration" {
        let conc = check_concentration(c.conc_p, c.conc_t, c.conc_trials, cfg.seed)?;
        let cov = check_coverage(c.cov_p, c.cov_t, c.cov_trials, cfg.seed)?;
        println!(
            "check concentration: tail={:.4} bound={:.4}; coverage tail={:.4} bound={:.4}",
            conc.empirical_tail, conc.bound, cov.empirical_tail, cov.bound
        );
        report.concentration = Some(ConcPair {
            concentration: conc,
            coverage: cov,
        });
    }
    if all || c.which == "mu_p" {
        let ps = [1usize, 10, 100, 1000];
        let mut points = Vec::new();
        for &p in &ps {
            let mu = estimate_mu_p(p, c.mu_trials, cfg.seed)?;
            points.push(MuPoint {
                p,
                mu_hat: mu,
                above_floor: mu >= MU_FLOOR,
            });
        }
        println!(
            "check mu_p: {}",
            points
                .iter()
                .map(|pt| format!("mu_{}={:.4}", pt.p, pt.mu_hat))
                .collect::<Vec<_>>()
                .join(" ")
        );
        report.mu_p = Some(MuOut {
            floor: MU_FLOOR,
            trials: c.mu_trials,
            points,
        });
    }
    if all || c.which == "eta_corr" {
        let dims = Dims::new(c.n, c.m, c.p, c.r)?;
        let ensemble = MeasurementEnsemble::generate(dims, cfg.seed)?;
        let eta = NoiseKind::Gaussian { sigma: c.sigma }
            .generate(c.p, cfg.seed)?
            .expect("gaussian noise present");
        let out = check_eta_correlation_bounds(
            &ensemble,
            &eta,
            c.r,
            c.samples,
            parse_set(&c.set)?,
            cfg.seed,
        )?;
        println!(
            "check eta_corr: optimal_t_ratio={:.4} abs_corr_ratio={:.4}",
            out.max_optimal_t_ratio, out.max_abs_corr_ratio
        );
        report.eta_correlation = Some(out);
    }
    write_json(&report, &c.out_dir.join(format!("{}.json", c.name)))
}

/// Runs one resolved config. Pure dispatch: all validation happened in
/// [`resolve_config`].
pub fn dispatch(cfg: &RunConfig, dry_run: bool) -> Result<()> {
    if cfg.threads > 0 {
        // Global pool setup can only happen once per process; a second
        // call (tests, library callers) keeps the existing pool, which
        // never changes results, only scheduling.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    match cfg.subcommand {
        SubcommandKind::Gen => exec_gen(cfg, cfg.gen.as_ref().expect("resolved gen section")),
        SubcommandKind::Solve => {
            exec_solve(cfg, cfg.solve.as_ref().expect("resolved solve section"))
        }
        SubcommandKind::Srip => exec_srip(cfg, cfg.srip.as_ref().expect("resolved srip section")),
        SubcommandKind::Net => exec_net(cfg, cfg.net.as_ref().expect("resolved net section")),
        SubcommandKind::Bench => exec_bench(
            cfg,
            cfg.bench.as_ref().expect("resolved bench section"),
            dry_run,
        ),
        SubcommandKind::Check => {
            exec_check(cfg, cfg.check.as_ref().expect("resolved check section"))
        }
    }
}

/// Process entry: parses argv, resolves the config (reading `LRPR_SEED`
/// from the real environment), dispatches, and maps errors to exit codes.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // Help and version requests arrive as "errors" but exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let env_seed = std::env::var("LRPR_SEED").ok();
    let run =
        resolve_config(cli, env_seed.as_deref()).and_then(|(cfg, dry_run)| dispatch(&cfg, dry_run));
    match run {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(args: &[&str]) -> RunConfig {
        config_from_args(args, None).unwrap().0
    }

    #[test]
    fn minimal_flags_fill_documented_defaults() {
        let c = cfg(&[
            "lrpr", "solve", "--n", "8", "--m", "8", "--r", "2", "--p", "640", "--seed", "1",
            "--model", "rank",
        ]);
        assert_eq!(c.subcommand, SubcommandKind::Solve);
        assert_eq!(c.seed, 1);
        assert_eq!(c.threads, 0);
        let s = c.solve.unwrap();
        assert_eq!((s.n, s.m, s.p, s.r), (8, 8, 640, 2));
        assert_eq!(s.model, "rank");
        assert_eq!(s.noise, "none");
        assert_eq!(s.max_iters, 5000);
        assert_eq!(s.tol, 1e-8);
        assert_eq!(s.out_dir, PathBuf::from("."));
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = config_from_args(&["lrpr", "solve", "--r", "0"], None).unwrap_err();
        assert!(err.to_string().contains("r:"), "message was {err}");
        let err = config_from_args(&["lrpr", "solve", "--model", "nope"], None).unwrap_err();
        assert!(err.to_string().contains("model"), "message was {err}");
        let err = config_from_args(&["lrpr", "bench", "--suite", "bogus"], None).unwrap_err();
        assert!(err.to_string().contains("suite"), "message was {err}");
        // r larger than min(n, m).
        let err = config_from_args(&["lrpr", "solve", "--n", "2", "--m", "2", "--r", "3"], None)
            .unwrap_err();
        assert!(err.to_string().contains("r:"), "message was {err}");
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "subcommand = \"solve\"\n[solve]\nsigmah = 0.1\n").unwrap();
        let err =
            config_from_args(&["lrpr", "--config", path.to_str().unwrap()], None).unwrap_err();
        assert!(err.to_string().contains("sigmah"), "message was {err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn flags_override_file_and_seed_precedence_holds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.toml");
        std::fs::write(
            &path,
            "subcommand = \"solve\"\nseed = 5\n[solve]\nnoise = \"gaussian\"\nsigma = 0.1\n",
        )
        .unwrap();
        let p = path.to_str().unwrap();

        let c = cfg(&["lrpr", "--config", p]);
        assert_eq!(c.seed, 5);
        assert_eq!(c.solve.unwrap().sigma, 0.1);

        let c = cfg(&[
            "lrpr", "--config", p, "--seed", "9", "solve", "--sigma", "0.2",
        ]);
        assert_eq!(c.seed, 9);
        assert_eq!(c.solve.unwrap().sigma, 0.2);

        // Env fills in only when neither flag nor file gives a seed.
        assert_eq!(resolve_seed(None, None, Some("7")).unwrap(), 7);
        assert_eq!(resolve_seed(None, Some(5), Some("7")).unwrap(), 5);
        assert_eq!(resolve_seed(Some(9), Some(5), Some("7")).unwrap(), 9);
        assert_eq!(resolve_seed(None, None, None).unwrap(), 0);
        let err = resolve_seed(None, None, Some("abc")).unwrap_err();
        assert!(err.to_string().contains("LRPR_SEED"));
    }

    #[test]
    fn manifest_round_trips_to_an_identical_config() {
        let dir = tempfile::tempdir().unwrap();
        for args in [
            vec![
                "lrpr", "gen", "--n", "4", "--m", "4", "--p", "64", "--r", "1", "--noise",
                "gaussian", "--seed", "3",
            ],
            vec![
                "lrpr", "bench", "--suite", "lambda", "--trials", "5", "--seed", "2",
            ],
            vec!["lrpr", "check", "--which", "mu_p"],
            vec!["lrpr", "net", "--epsilon", "0.7"],
        ] {
            let (original, _) = config_from_args(&args, None).unwrap();
            let path = dir.path().join("m.toml");
            std::fs::write(&path, original.manifest_string().unwrap()).unwrap();
            let (reparsed, _) =
                config_from_args(&["lrpr", "--config", path.to_str().unwrap()], None).unwrap();
            assert_eq!(original, reparsed);
        }
    }

    #[test]
    fn bench_defaults_are_resolved_concretely() {
        let c = cfg(&[
            "lrpr", "bench", "--suite", "scaling", "--n", "8", "--m", "8", "--r", "2",
        ]);
        let b = c.bench.unwrap();
        assert_eq!(b.p_grid, vec![512, 1024, 2048]);
        assert_eq!(b.name, "scaling");

        let c = cfg(&["lrpr", "bench", "--suite", "lambda"]);
        let b = c.bench.unwrap();
        assert_eq!(b.p, 512);
        assert_eq!(b.noise, "constant");
        assert_eq!(b.lambdas.len(), 6);
        let eta_norm = b.c * (b.p as f64).sqrt();
        let threshold = 2.0 * (2.0 * b.p as f64).sqrt() * eta_norm;
        assert!(b.lambdas[..5].iter().all(|l| *l > threshold));
        assert_eq!(*b.lambdas.last().unwrap(), 1e6);
    }

    #[test]
    fn gen_then_solve_matches_in_process_solve_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let dims = ["--n", "4", "--m", "4", "--p", "96", "--r", "1"];
        let noise = ["--noise", "gaussian", "--sigma", "0.05"];

        let mut gen_args = vec![
            "lrpr",
            "gen",
            "--seed",
            "11",
            "--out-dir",
            d,
            "--prefix",
            "inst",
        ];
        gen_args.extend_from_slice(&dims);
        gen_args.extend_from_slice(&noise);
        let (gcfg, _) = config_from_args(&gen_args, None).unwrap();
        dispatch(&gcfg, false).unwrap();

        let mut synth = vec![
            "lrpr",
            "solve",
            "--seed",
            "11",
            "--out-dir",
            d,
            "--name",
            "a",
        ];
        synth.extend_from_slice(&dims);
        synth.extend_from_slice(&noise);
        let (scfg, _) = config_from_args(&synth, None).unwrap();
        dispatch(&scfg, false).unwrap();

        let ens = format!("{d}/inst.ens");
        let tgt = format!("{d}/inst.target.json");
        let obs = format!("{d}/inst.obs.csv");
        let filed = vec![
            "lrpr",
            "solve",
            "--seed",
            "11",
            "--out-dir",
            d,
            "--name",
            "b",
            "--ensemble",
            &ens,
            "--target",
            &tgt,
            "--obs",
            &obs,
        ];
        let (fcfg, _) = config_from_args(&filed, None).unwrap();
        dispatch(&fcfg, false).unwrap();

        let a = std::fs::read(dir.path().join("a.json")).unwrap();
        let b = std::fs::read(dir.path().join("b.json")).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn exit_codes_follow_error_classes() {
        // Config error: invalid rank.
        assert_eq!(run_cli(["lrpr", "solve", "--r", "0"]), 1);
        // I/O error: missing output directory.
        assert_eq!(
            run_cli([
                "lrpr",
                "solve",
                "--n",
                "3",
                "--m",
                "3",
                "--p",
                "24",
                "--r",
                "1",
                "--out-dir",
                "/nonexistent-lrpr-dir"
            ]),
            4
        );
        // Numeric error: net cardinality cap.
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        assert_eq!(
            run_cli([
                "lrpr",
                "net",
                "--epsilon",
                "0.9",
                "--cap",
                "2",
                "--out-dir",
                d
            ]),
            2
        );
        // Help exits 0.
        assert_eq!(run_cli(["lrpr", "--help"]), 0);
    }

    #[test]
    fn bench_dry_run_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        assert_eq!(
            run_cli([
                "lrpr",
                "bench",
                "--suite",
                "scaling",
                "--dry-run",
                "--out-dir",
                d
            ]),
            0
        );
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let base = tempfile::tempdir().unwrap();
        let mk = |sub: &str| {
            let dir = tempfile::tempdir_in(base.path()).unwrap();
            let d = dir.path().to_str().unwrap().to_string();
            let args: Vec<String> = match sub {
                "bench" => [
                    "lrpr",
                    "bench",
                    "--suite",
                    "scaling",
                    "--n",
                    "3",
                    "--m",
                    "3",
                    "--r",
                    "1",
                    "--p-grid",
                    "48",
                    "--trials",
                    "4",
                    "--seed",
                    "5",
                    "--out-dir",
                    &d,
                    "--name",
                    "run",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                _ => [
                    "lrpr",
                    "check",
                    "--which",
                    "concentration",
                    "--conc-trials",
                    "500",
                    "--cov-trials",
                    "500",
                    "--seed",
                    "5",
                    "--out-dir",
                    &d,
                    "--name",
                    "run",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            };
            let argv: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
            let (c, dry) = config_from_args(&argv, None).unwrap();
            dispatch(&c, dry).unwrap();
            (dir, d.clone())
        };
        for sub in ["bench", "check"] {
            let (dir_a, _) = mk(sub);
            let (dir_b, _) = mk(sub);
            for name in ["run.csv", "run.summary.json", "run.json"] {
                let pa = dir_a.path().join(name);
                if pa.exists() {
                    let a = std::fs::read(&pa).unwrap();
                    let b = std::fs::read(dir_b.path().join(name)).unwrap();
                    assert_eq!(a, b, "{name} differed between identical runs");
                }
            }
        }
    }

    #[test]
    fn subcommand_from_file_alone_works() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            format!("subcommand = \"check\"\nseed = 3\n[check]\nwhich = \"mu_p\"\nmu_trials = 200\nout_dir = \"{d}\"\n"),
        )
        .unwrap();
        assert_eq!(run_cli(["lrpr", "--config", path.to_str().unwrap()]), 0);
        assert!(dir.path().join("check.json").exists());
        // No subcommand anywhere: config error.
        let err = config_from_args(&["lrpr"], None).unwrap_err();
        assert!(err.to_string().contains("subcommand"));
    }
}
