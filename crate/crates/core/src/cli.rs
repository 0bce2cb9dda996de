//! Experiment runner behind the `roughflow` binary.
//!
//! Every subcommand is also an [`Experiment`] value, so a run can be given
//! either as flags or as a JSON config (`--config run.json`) of the form
//! `{"experiment": "sample-fbm", "hurst": 0.4, ...}`. The resolved config is
//! echoed on stdout and written next to the artifacts, so the echo can be fed
//! back as a config to reproduce the run.
//!
//! Artifacts land in `<out>/<experiment>-seed<seed>/` together with a
//! `manifest.json` of SHA-256 hashes. Exit codes: 0 success, 2 invalid
//! config or arguments, 3 numeric failure or failed check.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::controlled::{rde_solve, RoughDriver};
use crate::densitylab::{density_report, yamato_explicit, yamato_fields, DensityConfig, Functional};
use crate::error::{domain, Error, Result};
use crate::fbm::{fmt_f64, FbmSampler, HurstParam, SamplePath, TimeGrid};
use crate::flows::{jacobian_between, jacobian_path, malliavin_derivative, malliavin_via_jacobian};
use crate::increments::{product_element, sewing_check, Increment1};
use crate::liefields::{
    constant_brackets, fields_hash, hormander_rank, is_nilpotent, parse_field_file, PolyVectorField,
};
use crate::norris::{
    block_mean_mc, block_mean_theory, hermite_moments, hermite_samples, norris_dichotomy_mc, s_k, summarize,
    NorrisSetup, TwoScale,
};
use crate::signature::{chen_defect_level2, levy_area, path_signature};
use crate::strichartz::StrichartzSystem;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Largest nilpotency order probed when `--order` is not given.
const MAX_AUTO_ORDER: usize = 6;

#[derive(Debug, Parser)]
#[command(name = "roughflow", version, about = "Rough-path experiments driven by fractional Brownian motion")]
pub struct Cli {
    /// JSON experiment config; replaces the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root directory for artifact folders.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Option<Experiment>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Experiment {
    /// Sample fBm paths to CSV.
    SampleFbm(SampleFbmArgs),
    /// Truncated signature and Lévy area of a path.
    Signature(SignatureArgs),
    /// Sewing bound on synthetic closed 3-increments.
    SewingTest(SewingArgs),
    /// Solve an RDE with the level-2 Taylor scheme.
    Solve(SolveArgs),
    /// Nilpotency, constant-bracket and Hörmander checks.
    CheckFields(CheckFieldsArgs),
    /// Chen–Strichartz solution `exp(Z_t)(a)`.
    Strichartz(StrichartzArgs),
    /// Jacobian flow along one path.
    Jacobian(JacobianArgs),
    /// Malliavin derivative slice `u ↦ D_u y_t`.
    Malliavin(MalliavinArgs),
    /// Hermite and block fourth-variation statistics.
    NorrisStats(NorrisStatsArgs),
    /// Monte-Carlo probe of the Norris dichotomy.
    NorrisMc(NorrisMcArgs),
    /// Kernel density estimate of a linear functional of `y_t`.
    Density(DensityArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridArgs {
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 257)]
    pub n_points: usize,
    /// Mesh `2^-k`; overrides `--n-points`.
    #[arg(long)]
    pub mesh_exp: Option<u32>,
}

impl GridArgs {
    fn resolve(&mut self) -> Result<()> {
        if let Some(k) = self.mesh_exp {
            let steps = self.horizon * 2f64.powi(k as i32);
            if (steps - steps.round()).abs() > 1e-9 || steps < 1.0 {
                return domain(format!("horizon {} is not a multiple of 2^-{k}", self.horizon));
            }
            self.n_points = steps.round() as usize + 1;
        }
        Ok(())
    }

    fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.n_points)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleFbmArgs {
    #[arg(long, default_value_t = 0.4)]
    pub hurst: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 10)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureArgs {
    /// Path CSV (`t,comp_1,...`); an fBm path is sampled when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 0.4)]
    pub hurst: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub level: usize,
    #[arg(long)]
    pub start: Option<f64>,
    #[arg(long)]
    pub end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SewingArgs {
    #[arg(long, default_value_t = 1.2)]
    pub mu: f64,
    #[arg(long, default_value_t = 100)]
    pub elements: usize,
    #[arg(long, default_value_t = 33)]
    pub n_points: usize,
    /// Hurst index of the two fBm factors of each element; must exceed μ/2.
    #[arg(long, default_value_t = 0.7)]
    pub hurst: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveArgs {
    #[arg(long)]
    pub fields: PathBuf,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub initial: Vec<f64>,
    #[arg(long, default_value_t = 0.4)]
    pub hurst: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Output every `stride`-th driver point.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckFieldsArgs {
    pub file: PathBuf,
    /// Check that all brackets of this length vanish.
    #[arg(long)]
    pub nilpotent: Option<usize>,
    /// Point at which to compute the bracket rank.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub hormander: Option<Vec<f64>>,
    /// Check that all brackets of length ≥ 2 are constant.
    #[arg(long)]
    #[serde(default)]
    pub constant_brackets: bool,
    /// Longest bracket considered by the rank and constant checks.
    #[arg(long)]
    pub up_to: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrichartzArgs {
    #[arg(long)]
    pub fields: PathBuf,
    /// Nilpotency order; detected when absent.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub initial: Vec<f64>,
    #[arg(long, default_value_t = 0.4)]
    pub hurst: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Evaluation time (default: horizon).
    #[arg(long)]
    pub time: Option<f64>,
    #[arg(long, default_value_t = 256)]
    pub flow_steps: usize,
    #[arg(long, default_value_t = 10)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobianArgs {
    #[arg(long)]
    pub fields: PathBuf,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub initial: Vec<f64>,
    #[arg(long, default_value_t = 0.4)]
    pub hurst: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    /// RK4 steps per grid segment.
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalliavinArgs {
    #[arg(long)]
    pub fields: PathBuf,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub initial: Vec<f64>,
    #[arg(long, default_value_t = 0.4)]
    pub hurst: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub time: Option<f64>,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NorrisStatsArgs {
    #[arg(long, default_value_t = 0.4)]
    pub hurst: f64,
    /// Number of fine intervals in the Hermite sum.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// `δ = 2^-delta_exp`.
    #[arg(long, default_value_t = 10)]
    pub delta_exp: u32,
    /// `Δ = 2^-block_exp`.
    #[arg(long, default_value_t = 5)]
    pub block_exp: u32,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NorrisMcArgs {
    #[arg(long)]
    pub fields: PathBuf,
    #[arg(long)]
    pub order: Option<usize>,
    /// Components of the probed field `U`, e.g. `0,0,x1^2`.
    #[arg(long, value_delimiter = ',')]
    pub u_field: Vec<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub eta: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub initial: Vec<f64>,
    #[arg(long, default_value_t = 0.4)]
    pub hurst: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0.37)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.34)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub q: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.4, 0.2, 0.1, 0.05])]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityArgs {
    #[arg(long)]
    pub fields: PathBuf,
    /// 1-based component of `y_t`.
    #[arg(long, conflicts_with = "functional")]
    pub component: Option<usize>,
    /// Weights of a linear functional of `y_t`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub functional: Option<Vec<f64>>,
    /// Initial point (default: origin).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub initial: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.4)]
    pub hurst: f64,
    #[arg(long, default_value_t = 1.0)]
    pub time: f64,
    #[arg(long, default_value_t = 129)]
    pub n_points: usize,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 401)]
    pub grid_points: usize,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value_t = 32)]
    pub flow_steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::SampleFbm(_) => "sample-fbm",
            Experiment::Signature(_) => "signature",
            Experiment::SewingTest(_) => "sewing-test",
            Experiment::Solve(_) => "solve",
            Experiment::CheckFields(_) => "check-fields",
            Experiment::Strichartz(_) => "strichartz",
            Experiment::Jacobian(_) => "jacobian",
            Experiment::Malliavin(_) => "malliavin",
            Experiment::NorrisStats(_) => "norris-stats",
            Experiment::NorrisMc(_) => "norris-mc",
            Experiment::Density(_) => "density",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Experiment::SampleFbm(a) => Some(a.seed),
            Experiment::Signature(a) => Some(a.seed),
            Experiment::SewingTest(a) => Some(a.seed),
            Experiment::Solve(a) => Some(a.seed),
            Experiment::CheckFields(_) => None,
            Experiment::Strichartz(a) => Some(a.seed),
            Experiment::Jacobian(a) => Some(a.seed),
            Experiment::Malliavin(a) => Some(a.seed),
            Experiment::NorrisStats(a) => Some(a.seed),
            Experiment::NorrisMc(a) => Some(a.seed),
            Experiment::Density(a) => Some(a.seed),
        }
    }

    /// Artifact folder name, `<experiment>-seed<seed>`.
    pub fn dir_name(&self) -> String {
        match self.seed() {
            Some(s) => format!("{}-seed{s}", self.name()),
            None => self.name().to_string(),
        }
    }

    /// Fill derived values (grid size from `--mesh-exp`).
    pub fn resolve(&mut self) -> Result<()> {
        match self {
            Experiment::SampleFbm(a) => a.grid.resolve(),
            Experiment::Signature(a) => a.grid.resolve(),
            Experiment::Solve(a) => a.grid.resolve(),
            Experiment::Strichartz(a) => a.grid.resolve(),
            Experiment::Jacobian(a) => a.grid.resolve(),
            Experiment::Malliavin(a) => a.grid.resolve(),
            Experiment::NorrisMc(a) => a.grid.resolve(),
            _ => Ok(()),
        }
    }
}

/// Files and summary produced by one experiment.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub summary: Value,
    /// Requested checks that failed; non-empty makes the run exit 3.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub seed: Option<u64>,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parse a JSON experiment config.
pub fn load_config(path: &Path) -> Result<Experiment> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))
}

/// Exit code for an error: 2 for invalid input, 3 for numeric failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } | Error::Json(_) | Error::Validation(_) | Error::Domain(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    run_cli(cli)
}

pub fn run_cli(cli: Cli) -> i32 {
    let experiment = match (&cli.config, cli.command) {
        (Some(path), None) => match load_config(path) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        },
        (None, Some(e)) => e,
        (Some(_), Some(_)) => {
            eprintln!("error: give either --config or a subcommand, not both");
            return EXIT_CONFIG;
        }
        (None, None) => {
            eprintln!("error: no experiment given; see --help");
            return EXIT_CONFIG;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_CONFIG;
        }
        // A second initialisation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(experiment, &cli.out) {
        Ok((dir, outcome)) => {
            if outcome.failures.is_empty() {
                EXIT_OK
            } else {
                for f in &outcome.failures {
                    eprintln!("check failed: {f}");
                }
                eprintln!("artifacts in {}", dir.display());
                EXIT_NUMERIC
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Resolve, execute and write one experiment. Returns the artifact folder.
pub fn run(mut experiment: Experiment, out: &Path) -> Result<(PathBuf, Outcome)> {
    experiment.resolve()?;
    let config = serde_json::to_string_pretty(&experiment)?;
    emit(&config);
    let outcome = execute(&experiment)?;
    let dir = out.join(experiment.dir_name());
    std::fs::create_dir_all(&dir)?;
    let summary = serde_json::to_string_pretty(&outcome.summary)?;
    let mut files = vec![("config.json".to_string(), config + "\n")];
    files.extend(outcome.files.iter().cloned());
    files.push(("summary.json".to_string(), summary.clone() + "\n"));
    let mut entries = Vec::new();
    for (name, content) in &files {
        std::fs::write(dir.join(name), content)?;
        entries.push(ManifestEntry {
            file: name.clone(),
            bytes: content.len(),
            sha256: sha256_hex(content.as_bytes()),
        });
    }
    entries.sort_by(|a, b| a.file.cmp(&b.file));
    let manifest = Manifest {
        experiment: experiment.name().to_string(),
        seed: experiment.seed(),
        files: entries,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    emit(&summary);
    Ok((dir, outcome))
}

/// Print to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

/// Run an experiment without touching the file system.
pub fn execute(experiment: &Experiment) -> Result<Outcome> {
    match experiment {
        Experiment::SampleFbm(a) => run_sample_fbm(a),
        Experiment::Signature(a) => run_signature(a),
        Experiment::SewingTest(a) => run_sewing(a),
        Experiment::Solve(a) => run_solve(a),
        Experiment::CheckFields(a) => run_check_fields(a),
        Experiment::Strichartz(a) => run_strichartz(a),
        Experiment::Jacobian(a) => run_jacobian(a),
        Experiment::Malliavin(a) => run_malliavin(a),
        Experiment::NorrisStats(a) => run_norris_stats(a),
        Experiment::NorrisMc(a) => run_norris_mc(a),
        Experiment::Density(a) => run_density(a),
    }
}

fn load_fields(path: &Path) -> Result<Vec<PolyVectorField>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read fields file {}: {e}", path.display())))?;
    parse_field_file(&text)
}

fn detect_order(fields: &[PolyVectorField], order: Option<usize>) -> Result<usize> {
    if let Some(n) = order {
        return Ok(n);
    }
    for n in 2..=MAX_AUTO_ORDER {
        if is_nilpotent(fields, n)?.0 {
            return Ok(n);
        }
    }
    Err(Error::Precondition(format!(
        "fields are not nilpotent of order ≤ {MAX_AUTO_ORDER}"
    )))
}

fn check_initial(fields: &[PolyVectorField], a: &[f64]) -> Result<()> {
    let m = fields.first().map_or(0, PolyVectorField::dim);
    if a.len() != m {
        return domain(format!("initial point has {} entries, fields live in ℝ^{m}", a.len()));
    }
    Ok(())
}

fn sample_path(hurst: f64, grid: &GridArgs, d: usize, seed: u64, index: u64) -> Result<SamplePath> {
    FbmSampler::new(HurstParam::new(hurst)?, grid.grid()?)?.sample_one(d, seed, index)
}

fn csv_row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(",")
}

fn run_sample_fbm(a: &SampleFbmArgs) -> Result<Outcome> {
    let h = HurstParam::new(a.hurst)?;
    if a.paths == 0 || a.dim == 0 {
        return domain("need at least one path and one component");
    }
    let paths = FbmSampler::new(h, a.grid.grid()?)?.sample(a.dim, a.paths, a.seed)?;
    let mut files: Vec<(String, String)> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("path_{i:04}.csv"), p.to_csv()))
        .collect();
    let meta: Vec<_> = paths.iter().map(|p| p.metadata(None)).collect();
    files.push(("metadata.json".into(), serde_json::to_string_pretty(&meta)? + "\n"));
    let last = a.grid.n_points - 1;
    let ends: Vec<f64> = paths.iter().flat_map(|p| p.row(last).to_vec()).collect();
    let n = ends.len() as f64;
    let var = ends.iter().map(|x| x * x).sum::<f64>() / n;
    let fourth = ends.iter().map(|x| x.powi(4)).sum::<f64>() / n;
    let stderr = ((fourth - var * var) / n).max(0.0).sqrt();
    let series: Vec<(String, Vec<(f64, f64)>)> = paths
        .iter()
        .take(5)
        .map(|p| {
            let pts = p.grid().times().iter().enumerate().map(|(i, &t)| (t, p.value(i, 0))).collect();
            (format!("path {}", p.index()), pts)
        })
        .collect();
    files.push(("paths.svg".into(), svg_plot("fBm sample paths", "t", "B_t", &series)));
    Ok(Outcome {
        files,
        summary: json!({
            "estimate": var,
            "stderr": stderr,
            "n": ends.len(),
            "theory": a.grid.horizon.powf(2.0 * a.hurst),
            "parameters": {"hurst": a.hurst, "horizon": a.grid.horizon, "n_points": a.grid.n_points},
        }),
        failures: vec![],
    })
}

fn run_signature(a: &SignatureArgs) -> Result<Outcome> {
    let p = match &a.input {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Validation(format!("cannot read path file {}: {e}", path.display())))?;
            SamplePath::from_csv(&text)?
        }
        None => sample_path(a.hurst, &a.grid, a.dim, a.seed, 0)?,
    };
    let s = a.start.unwrap_or(0.0);
    let t = a.end.unwrap_or(p.grid().horizon());
    let sig = path_signature(&p, s, t, a.level)?;
    let area = levy_area(&p, s, t)?;
    let mut area_csv = String::from("i,j,area\n");
    for i in 0..p.dim() {
        for j in 0..p.dim() {
            area_csv.push_str(&format!("{},{},{}\n", i + 1, j + 1, fmt_f64(area[(i, j)])));
        }
    }
    let chen = chen_defect_level2(&p)?;
    Ok(Outcome {
        files: vec![
            ("signature.json".into(), serde_json::to_string_pretty(&sig.to_json())? + "\n"),
            ("levy_area.csv".into(), area_csv),
        ],
        summary: json!({
            "interval": [s, t],
            "level": a.level,
            "dim": p.dim(),
            "chen_defect_level2": chen,
        }),
        failures: vec![],
    })
}

fn run_sewing(a: &SewingArgs) -> Result<Outcome> {
    if !(a.hurst > a.mu / 2.0) {
        return domain(format!("element Hurst index {} must exceed μ/2 = {}", a.hurst, a.mu / 2.0));
    }
    let grid = TimeGrid::new(1.0, a.n_points)?;
    let sampler = FbmSampler::new(HurstParam::new(a.hurst)?, grid.clone())?;
    let checks = sewing_trials(&sampler, a.mu, a.elements, a.seed)?;
    let mut csv = String::from("element,norm_h,norm_lambda,ratio,bound,inverse_defect\n");
    for (i, c) in checks.iter().enumerate() {
        csv.push_str(&format!(
            "{i},{}\n",
            csv_row([c.norm_h, c.norm_lambda, c.ratio, c.bound, c.inverse_defect])
        ));
    }
    let max_ratio = checks.iter().map(|c| c.ratio).fold(0.0, f64::max);
    let max_defect = checks.iter().map(|c| c.inverse_defect).fold(0.0, f64::max);
    let bound = crate::increments::sewing_constant(a.mu);
    Ok(Outcome {
        files: vec![("sewing.csv".into(), csv)],
        summary: json!({
            "max_ratio": max_ratio,
            "bound": bound,
            "max_inverse_defect": max_defect,
            "within_bound": max_ratio <= bound + 0.05,
            "n": checks.len(),
        }),
        failures: vec![],
    })
}

/// Sewing checks on `h = δ(f δφ)` with `f`, `φ` the two components of
/// independent 2-dimensional fBm paths.
pub fn sewing_trials(
    sampler: &FbmSampler,
    mu: f64,
    elements: usize,
    seed: u64,
) -> Result<Vec<crate::increments::SewingCheck>> {
    use rayon::prelude::*;
    let grid = sampler.grid().clone();
    (0..elements as u64)
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample_one(2, seed, i)?;
            let f = Increment1::scalar(grid.clone(), p.component(0).values().to_vec())?;
            let phi = Increment1::scalar(grid.clone(), p.component(1).values().to_vec())?;
            sewing_check(&product_element(&f, &phi)?, mu)
        })
        .collect()
}

fn run_solve(a: &SolveArgs) -> Result<Outcome> {
    let fields = load_fields(&a.fields)?;
    check_initial(&fields, &a.initial)?;
    if a.stride == 0 || !(a.grid.n_points - 1).is_multiple_of(a.stride) {
        return domain(format!("stride {} must divide {} grid steps", a.stride, a.grid.n_points - 1));
    }
    let driver_grid = a.grid.grid()?;
    let coarse = driver_grid.coarsen(a.stride)?;
    let order = detect_order(&fields, None).ok();
    let sys = order.map(|n| StrichartzSystem::new(&fields, n)).transpose()?;
    let mut files = Vec::new();
    let mut max_gap: Option<f64> = None;
    for i in 0..a.paths as u64 {
        let p = sample_path(a.hurst, &a.grid, fields.len(), a.seed, i)?;
        let driver = Arc::new(RoughDriver::new(p.clone()));
        let (y, _) = rde_solve(&fields, &a.initial, &driver, &coarse)?;
        if let Some(sys) = &sys {
            let exact = sys.solve(&p, &a.initial, a.grid.horizon, crate::strichartz::DEFAULT_FLOW_STEPS)?;
            let end = y.row(y.len() - 1);
            let gap = exact.iter().zip(end).map(|(x, z)| (x - z).abs()).fold(0.0, f64::max);
            max_gap = Some(max_gap.map_or(gap, |g| g.max(gap)));
        }
        files.push((format!("solution_{i:04}.csv"), y.to_csv()));
    }
    Ok(Outcome {
        files,
        summary: json!({
            "paths": a.paths,
            "fields_hash": fields_hash(&fields),
            "nilpotent_order": order,
            "max_gap_to_strichartz": max_gap,
        }),
        failures: vec![],
    })
}

fn run_check_fields(a: &CheckFieldsArgs) -> Result<Outcome> {
    let fields = load_fields(&a.file)?;
    let m = fields.first().map_or(0, PolyVectorField::dim);
    let up_to = a.up_to.or(a.nilpotent).unwrap_or(3);
    let mut failures = Vec::new();
    let mut report = json!({
        "fields_hash": fields_hash(&fields),
        "dimension": m,
        "n_fields": fields.len(),
        "up_to": up_to,
    });
    if let Some(n) = a.nilpotent {
        let (holds, witness) = is_nilpotent(&fields, n)?;
        if !holds {
            failures.push(format!("nilpotency of order {n}"));
        }
        report["nilpotent"] = json!({
            "order": n,
            "holds": holds,
            "witness": witness.map(|w| w.one_based()),
        });
    }
    if a.constant_brackets {
        let holds = constant_brackets(&fields, up_to)?;
        if !holds {
            failures.push("constant brackets".into());
        }
        report["constant_brackets"] = json!({"holds": holds});
    }
    if let Some(x) = &a.hormander {
        if x.len() != m {
            return domain(format!("Hörmander point has {} entries, fields live in ℝ^{m}", x.len()));
        }
        let rank = hormander_rank(&fields, x, up_to)?;
        if rank < m {
            failures.push(format!("Hörmander rank {rank} < {m}"));
        }
        report["hormander"] = json!({"point": x, "rank": rank, "full": rank == m});
    }
    report["all_pass"] = json!(failures.is_empty());
    Ok(Outcome {
        files: vec![("report.json".into(), serde_json::to_string_pretty(&report)? + "\n")],
        summary: report,
        failures,
    })
}

fn run_strichartz(a: &StrichartzArgs) -> Result<Outcome> {
    let fields = load_fields(&a.fields)?;
    check_initial(&fields, &a.initial)?;
    let sys = StrichartzSystem::new(&fields, detect_order(&fields, a.order)?)?;
    let t = a.time.unwrap_or(a.grid.horizon);
    let is_yamato = fields == yamato_fields();
    let mut psi_csv = String::from("path,word,psi\n");
    let mut sol_csv = String::from("path");
    for k in 1..=sys.dim() {
        sol_csv.push_str(&format!(",y_{k}"));
    }
    sol_csv.push('\n');
    let mut max_gap: Option<f64> = None;
    for i in 0..a.paths as u64 {
        let p = sample_path(a.hurst, &a.grid, fields.len(), a.seed, i)?;
        let sig = path_signature(&p, 0.0, t, sys.order() - 1)?;
        let table = sys.psi_table(&sig)?;
        for (k, level) in table.levels.iter().enumerate() {
            for (idx, v) in level.iter().enumerate() {
                if *v != 0.0 {
                    let w = crate::signature::Word::from_index(idx, k + 1, sys.n_fields());
                    psi_csv.push_str(&format!("{i},{w},{}\n", fmt_f64(*v)));
                }
            }
        }
        let y = sys.solve(&p, &a.initial, t, a.flow_steps)?;
        sol_csv.push_str(&format!("{i},{}\n", csv_row(y.iter().copied())));
        if is_yamato {
            let e = yamato_explicit(&p, &a.initial, t)?;
            let gap = e.iter().zip(&y).map(|(x, z)| (x - z).abs()).fold(0.0, f64::max);
            max_gap = Some(max_gap.map_or(gap, |g| g.max(gap)));
        }
    }
    Ok(Outcome {
        files: vec![("psi.csv".into(), psi_csv), ("solutions.csv".into(), sol_csv)],
        summary: json!({
            "order": sys.order(),
            "time": t,
            "paths": a.paths,
            "fields_hash": sys.fields_hash(),
            "max_gap_to_explicit": max_gap,
        }),
        failures: vec![],
    })
}

fn run_jacobian(a: &JacobianArgs) -> Result<Outcome> {
    let fields = load_fields(&a.fields)?;
    check_initial(&fields, &a.initial)?;
    let sys = StrichartzSystem::new(&fields, detect_order(&fields, a.order)?)?;
    let p = sample_path(a.hurst, &a.grid, fields.len(), a.seed, 0)?;
    let flow = jacobian_path(&sys, &p, &a.initial, a.steps)?;
    let m = sys.dim();
    let mut csv = String::from("t");
    for k in 1..=m {
        csv.push_str(&format!(",y_{k}"));
    }
    for prefix in ["j", "jinv"] {
        for r in 1..=m {
            for c in 1..=m {
                csv.push_str(&format!(",{prefix}_{r}{c}"));
            }
        }
    }
    csv.push('\n');
    for (k, &t) in flow.times().iter().enumerate() {
        let mut row: Vec<f64> = flow.y.row(k).to_vec();
        for mat in [&flow.j[k], &flow.j_inv[k]] {
            for r in 0..m {
                for c in 0..m {
                    row.push(mat[(r, c)]);
                }
            }
        }
        csv.push_str(&format!("{},{}\n", fmt_f64(t), csv_row(row)));
    }
    let last = p.len() - 1;
    let mid = last / 2;
    let direct = &flow.j[last];
    let y_mid: Vec<f64> = flow.y.row(mid).to_vec();
    let tail = jacobian_between(&sys, &p, &y_mid, mid, last, a.steps)?;
    let composed = &tail.j * &flow.j[mid];
    let flow_defect = (direct - composed).abs().max();
    Ok(Outcome {
        files: vec![("jacobian.csv".into(), csv)],
        summary: json!({
            "inverse_defect": flow.inverse_defect(),
            "flow_property_defect": flow_defect,
            "split_time": p.grid().time(mid),
        }),
        failures: vec![],
    })
}

fn run_malliavin(a: &MalliavinArgs) -> Result<Outcome> {
    let fields = load_fields(&a.fields)?;
    check_initial(&fields, &a.initial)?;
    let sys = StrichartzSystem::new(&fields, detect_order(&fields, a.order)?)?;
    let p = sample_path(a.hurst, &a.grid, fields.len(), a.seed, 0)?;
    let t = a.time.unwrap_or(a.grid.horizon);
    let slice = malliavin_derivative(&sys, &p, &a.initial, t, a.steps)?;
    let via_j = malliavin_via_jacobian(&sys, &p, &a.initial, t, a.steps)?;
    Ok(Outcome {
        files: vec![
            ("malliavin.csv".into(), slice.to_csv()),
            ("malliavin_jacobian.csv".into(), via_j.to_csv()),
        ],
        summary: json!({
            "time": t,
            "max_route_difference": slice.max_abs_diff(&via_j),
        }),
        failures: vec![],
    })
}

fn run_norris_stats(a: &NorrisStatsArgs) -> Result<Outcome> {
    let h = HurstParam::new(a.hurst)?;
    let scales = TwoScale::new(2f64.powi(-(a.delta_exp as i32)), 2f64.powi(-(a.block_exp as i32)))?;
    let theory = hermite_moments(a.k, h, 1.0)?;
    let mc = summarize(&hermite_samples(a.k, h, a.samples, a.seed)?);
    let mut sk_csv = String::from("k,s_k,s_k_over_k\n");
    for k in [16usize, 32, 64, 128, 256] {
        let s = s_k(k, h);
        sk_csv.push_str(&format!("{k},{},{}\n", fmt_f64(s), fmt_f64(s / k as f64)));
    }
    let block_theory = block_mean_theory(a.dim, h, &scales);
    let block = block_mean_mc(h, a.dim, &scales, scales.big_delta, a.paths, a.seed)?;
    Ok(Outcome {
        files: vec![("s_k.csv".into(), sk_csv)],
        summary: json!({
            "hermite": {"k": a.k, "theory": theory, "monte_carlo": mc},
            "block_mean": {
                "estimate": block.mean,
                "stderr": block.mean_stderr,
                "n": block.n,
                "theory": block_theory,
                "parameters": {"delta": scales.delta, "big_delta": scales.big_delta, "r": scales.r, "dim": a.dim},
            },
        }),
        failures: vec![],
    })
}

fn run_norris_mc(a: &NorrisMcArgs) -> Result<Outcome> {
    let fields = load_fields(&a.fields)?;
    check_initial(&fields, &a.initial)?;
    let order = detect_order(&fields, a.order)?;
    let comps: Vec<&str> = a.u_field.iter().map(String::as_str).collect();
    let u = PolyVectorField::parse(&comps)?;
    let setup = NorrisSetup {
        hurst: a.hurst,
        horizon: a.grid.horizon,
        n_points: a.grid.n_points,
        gamma: a.gamma,
        alpha: a.alpha,
        q: a.q,
        eps: a.eps.clone(),
        n_paths: a.paths,
        seed: a.seed,
    };
    let table = norris_dichotomy_mc(&fields, order, &u, &a.eta, &a.initial, &setup)?;
    let mut csv = String::from("eps,count,frequency,upper_bound_only\n");
    for r in &table.rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(r.eps),
            r.count,
            fmt_f64(r.frequency),
            r.upper_bound_only
        ));
    }
    let pts: Vec<(f64, f64)> = table.rows.iter().map(|r| (r.eps.ln(), r.frequency.ln())).collect();
    let svg = svg_plot("dichotomy event frequency", "log eps", "log frequency", &[("frequency".into(), pts)]);
    Ok(Outcome {
        files: vec![("dichotomy.csv".into(), csv), ("dichotomy.svg".into(), svg)],
        summary: json!({
            "rows": table.rows,
            "fitted_exponent": table.fitted_exponent,
            "non_increasing": table.non_increasing,
            "parameters": table.setup,
        }),
        failures: vec![],
    })
}

fn run_density(a: &DensityArgs) -> Result<Outcome> {
    let fields = load_fields(&a.fields)?;
    let m = fields.first().map_or(0, PolyVectorField::dim);
    let functional = match (&a.component, &a.functional) {
        (Some(k), None) => Functional::Component(*k),
        (None, Some(w)) => Functional::Linear(w.clone()),
        _ => return domain("give exactly one of --component and --functional"),
    };
    let cfg = DensityConfig {
        hurst: a.hurst,
        t: a.time,
        n_points: a.n_points,
        n_paths: a.paths,
        seed: a.seed,
        initial: a.initial.clone().unwrap_or_else(|| vec![0.0; m]),
        functional,
        grid_points: a.grid_points,
        bandwidth: a.bandwidth,
        flow_steps: a.flow_steps,
    };
    let r = density_report(&fields, &cfg)?;
    let pts: Vec<(f64, f64)> = r.kde.grid.iter().copied().zip(r.kde.values.iter().copied()).collect();
    let svg = svg_plot("kernel density estimate", "x", "density", &[("kde".into(), pts)]);
    Ok(Outcome {
        files: vec![("density.csv".into(), r.kde.to_csv()), ("density.svg".into(), svg)],
        summary: json!({
            "estimate": {"mean": r.mean, "variance": r.variance, "skewness": r.skewness},
            "stderr": {"skewness": r.skewness_stderr},
            "n": r.samples.len(),
            "bandwidth": r.kde.bandwidth,
            "mass": r.mass,
            "modes": r.modes,
            "smoothness": r.smoothness,
            "ks_explicit": r.ks_explicit,
            "hypotheses": r.hypotheses,
            "parameters": r.config,
        }),
        failures: vec![],
    })
}

/// SVG 1.1 line plot with linear axes. Coordinates use the same 17-digit
/// formatting as the CSV files, so output is byte-stable.
pub fn svg_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let finite = series.iter().flat_map(|s| s.1.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut out = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n\
         <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n\
         <text x=\"15\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 15 {})\">{}</text>\n",
        W / 2.0,
        escape(title),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
        W / 2.0,
        H - 10.0,
        escape(xlabel),
        H / 2.0,
        H / 2.0,
        escape(ylabel),
    );
    for (label, v) in [(fmt_f64(x0), (PAD, H - PAD + 15.0)), (fmt_f64(x1), (W - PAD, H - PAD + 15.0))] {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"9\">{label}</text>\n",
            v.0, v.1
        ));
    }
    for (label, y) in [(fmt_f64(y0), H - PAD), (fmt_f64(y1), PAD)] {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"start\" font-size=\"9\">{label}</text>\n",
            PAD + 3.0
        ));
    }
    for (k, (label, pts)) in series.iter().enumerate() {
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{},{}", fmt_f64(sx(x)), fmt_f64(sy(y))))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1\" points=\"{}\"><title>{}</title></polyline>\n",
            COLORS[k % COLORS.len()],
            coords.join(" "),
            escape(label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
