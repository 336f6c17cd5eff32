//! The `homognx` command line: `metrics`, `bias`, `sim` and `validate`.
//!
//! Settings come from flags, then an optional JSON config file (a
//! [`RunConfig`]), then defaults. `HOMOGNX_THREADS` overrides every other
//! source for the worker count. Data is written only to files under the
//! output directory; progress and problems go to stderr.
//!
//! Exit codes: 0 when everything was processed cleanly, 1 when some input
//! was skipped or reported a violation, 2 on a fatal error.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention_bias::{average_profiles, bias_profile, cross_sample_profile, BiasOptions, BiasProfile, ProfileScope};
use crate::error::{Error, Result};
use crate::homogenization_sim::{initial_state, run_sim, PositionalTarget, SimConfig, ValueMapMode};
use crate::mauve::MauveParams;
use crate::metrics::Metric;
use crate::report::{aggregate, emit, Format, LayerMetricSeries};
use crate::tensor_io::{read_container, validate_container, write_stack_as, ActivationStack, AttentionStack, DatasetTag, Dtype, Stack};

pub const THREADS_ENV: &str = "HOMOGNX_THREADS";

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_FATAL: u8 = 2;

/// Relative-grid size used when bias profiles of different lengths meet.
pub const DEFAULT_BIAS_GRID: usize = 100;

/// Metrics computed by `metrics` when none are requested.
pub const DEFAULT_METRICS: [Metric; 7] = [
    Metric::Erank,
    Metric::Mev,
    Metric::Schatten1,
    Metric::Schatten2,
    Metric::SchattenInf,
    Metric::Mauve,
    Metric::Resultant,
];

/// Inclusive `start:stop:step` grid of `λ₂` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Sweep {
    pub fn values(&self) -> Result<Vec<f64>> {
        let Sweep { start, stop, step } = *self;
        if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
            return Err(Error::arg(format!("bad sweep {self}: need start <= stop and step > 0")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        // rounded so that 0:1:0.1 yields 0.3 rather than 0.30000000000000004
        Ok((0..=count).map(|i| round12(start + i as f64 * step)).collect())
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::arg(format!("sweep {s:?}: {e}")))?;
        match parts[..] {
            [start, stop, step] => Ok(Sweep { start, stop, step }),
            _ => Err(Error::arg(format!("sweep {s:?} must look like start:stop:step"))),
        }
    }
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

/// Everything a subcommand needs, after merging flags, config file and defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    /// `None` selects the subcommand's default set.
    pub metrics: Option<Vec<Metric>>,
    pub mauve: MauveParams,
    pub sim: SimConfig,
    pub lambda2_sweep: Option<Sweep>,
    pub init_seed: u64,
    pub skip_prefix: usize,
    pub scope: ProfileScope,
    pub normalized: bool,
    /// Relative grid for combining bias profiles; `None` averages
    /// equal-length profiles position by position.
    pub grid: Option<usize>,
    pub threads: usize,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: Vec::new(),
            out: PathBuf::from("."),
            metrics: None,
            mauve: MauveParams::default(),
            sim: SimConfig::default(),
            lambda2_sweep: None,
            init_seed: 0,
            skip_prefix: 0,
            scope: ProfileScope::default(),
            normalized: false,
            grid: None,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            format: Format::Csv,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn check(&self) -> Result<()> {
        if self.threads < 1 {
            return Err(Error::arg("parallelism must be >= 1"));
        }
        if let Some(p) = self.inputs.iter().find(|p| !p.exists()) {
            return Err(Error::arg(format!("input {} does not exist", p.display())));
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "homognx", version, about = "Token homogenization diagnostics")]
pub struct Cli {
    /// Worker threads; HOMOGNX_THREADS takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer metric series from activation containers.
    Metrics(MetricsArgs),
    /// Positional bias profiles from attention containers.
    Bias(BiasArgs),
    /// Run the attention-mixing simulator.
    Sim(SimArgs),
    /// Check containers and list every violation.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    PerLayer,
    AllLayers,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ValueMapArg {
    Identity,
    RandomContraction,
    RandomOrthogonal,
}

#[derive(Debug, Args)]
pub struct MauveArgs {
    #[arg(long)]
    pub mauve_k: Option<usize>,
    #[arg(long)]
    pub mauve_c: Option<f64>,
    #[arg(long)]
    pub mauve_grid: Option<usize>,
    #[arg(long)]
    pub mauve_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Container files or directories holding `*.homognx` files.
    #[arg(long = "input", short, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Comma-separated: erank, mev, schatten1, schatten2, schatten_inf,
    /// schatten, mauve, resultant, kappa, all.
    #[arg(long)]
    pub metrics: Option<String>,
    #[command(flatten)]
    pub mauve: MauveArgs,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    #[arg(long = "input", short, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Leading key positions left out of the profile.
    #[arg(long)]
    pub skip_prefix: Option<usize>,
    #[arg(long, value_enum)]
    pub scope: Option<ScopeArg>,
    /// Divide each column mass by the number of queries that can reach it.
    #[arg(long)]
    pub normalized: bool,
    /// Combine samples on a relative grid of this many points.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, conflicts_with = "sweep_lambda2")]
    pub lambda2: Option<f64>,
    /// `start:stop:step`, inclusive.
    #[arg(long)]
    pub sweep_lambda2: Option<Sweep>,
    /// `first`, `last` or a token index.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, value_enum)]
    pub value_map: Option<ValueMapArg>,
    #[arg(long)]
    pub residual: bool,
    /// Seed for the per-layer attention and value maps.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for the initial token matrix.
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Extra per-layer metrics on the trajectory.
    #[arg(long)]
    pub metrics: Option<String>,
    #[command(flatten)]
    pub mauve: MauveArgs,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Container files or directories.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

fn parse_target(s: &str) -> Result<PositionalTarget> {
    match s {
        "first" => Ok(PositionalTarget::FirstToken),
        "last" => Ok(PositionalTarget::LastToken),
        j => j
            .parse()
            .map(PositionalTarget::Position)
            .map_err(|_| Error::arg(format!("target {s:?} must be first, last or an index"))),
    }
}

fn format_of(f: FormatArg) -> Format {
    match f {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    }
}

fn apply_mauve(cfg: &mut MauveParams, a: &MauveArgs) {
    if a.mauve_k.is_some() {
        cfg.k = a.mauve_k;
    }
    if let Some(c) = a.mauve_c {
        cfg.c = c;
    }
    if let Some(g) = a.mauve_grid {
        cfg.grid_size = g;
    }
    if let Some(s) = a.mauve_seed {
        cfg.seed = s;
    }
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::arg(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        _ => Ok(None),
    }
}

impl Cli {
    /// Merges flags over the config file over defaults.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(t) = threads_from_env()? {
            cfg.threads = t;
        }
        match &self.command {
            Command::Metrics(a) => {
                if !a.inputs.is_empty() {
                    cfg.inputs = a.inputs.clone();
                }
                if let Some(o) = &a.out {
                    cfg.out = o.clone();
                }
                if let Some(m) = &a.metrics {
                    cfg.metrics = Some(Metric::parse_list(m)?);
                }
                apply_mauve(&mut cfg.mauve, &a.mauve);
                if let Some(f) = a.format {
                    cfg.format = format_of(f);
                }
            }
            Command::Bias(a) => {
                if !a.inputs.is_empty() {
                    cfg.inputs = a.inputs.clone();
                }
                if let Some(o) = &a.out {
                    cfg.out = o.clone();
                }
                if let Some(k) = a.skip_prefix {
                    cfg.skip_prefix = k;
                }
                if let Some(s) = a.scope {
                    cfg.scope = match s {
                        ScopeArg::PerLayer => ProfileScope::PerLayer,
                        ScopeArg::AllLayers => ProfileScope::AllLayers,
                    };
                }
                cfg.normalized |= a.normalized;
                if a.grid.is_some() {
                    cfg.grid = a.grid;
                }
                if let Some(f) = a.format {
                    cfg.format = format_of(f);
                }
            }
            Command::Sim(a) => {
                if let Some(o) = &a.out {
                    cfg.out = o.clone();
                }
                let sim = &mut cfg.sim;
                if let Some(n) = a.n {
                    sim.n = n;
                }
                if let Some(d) = a.d {
                    sim.d = d;
                }
                if let Some(l) = a.layers {
                    sim.depth = l;
                }
                if let Some(l2) = a.lambda2 {
                    sim.lambda2 = l2;
                    cfg.lambda2_sweep = None;
                }
                if a.sweep_lambda2.is_some() {
                    cfg.lambda2_sweep = a.sweep_lambda2;
                }
                if let Some(t) = &a.target {
                    sim.target = parse_target(t)?;
                }
                if let Some(v) = a.value_map {
                    sim.value_map = match v {
                        ValueMapArg::Identity => ValueMapMode::Identity,
                        ValueMapArg::RandomContraction => ValueMapMode::RandomContraction,
                        ValueMapArg::RandomOrthogonal => ValueMapMode::RandomOrthogonal,
                    };
                }
                sim.residual |= a.residual;
                if let Some(s) = a.seed {
                    sim.mixing_seed = s;
                }
                if let Some(s) = a.init_seed {
                    cfg.init_seed = s;
                }
                if let Some(m) = &a.metrics {
                    cfg.metrics = Some(Metric::parse_list(m)?);
                }
                apply_mauve(&mut cfg.mauve, &a.mauve);
                if let Some(f) = a.format {
                    cfg.format = format_of(f);
                }
            }
            Command::Validate(a) => cfg.inputs = a.paths.clone(),
        }
        cfg.check()?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
        }
    };
    let cfg = match cli.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FATAL;
        }
    };
    match cli.command {
        Command::Metrics(_) => cmd_metrics(&cfg),
        Command::Bias(_) => cmd_bias(&cfg),
        Command::Sim(_) => cmd_sim(&cfg),
        Command::Validate(_) => cmd_validate(&cfg),
    }
}

fn finish(result: Result<usize>) -> u8 {
    match result {
        Ok(0) => EXIT_OK,
        Ok(n) => {
            eprintln!("finished with {n} problem(s)");
            EXIT_PARTIAL
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FATAL
        }
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::arg(format!("thread pool: {e}")))
}

/// Files as given, directories expanded to their `*.homognx` files, sorted.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if paths.is_empty() {
        return Err(Error::arg("no input paths given"));
    }
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io_at(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "homognx"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(Error::arg(format!("input {} does not exist", p.display())));
        }
    }
    if files.is_empty() {
        return Err(Error::arg("no .homognx containers found"));
    }
    Ok(files)
}

struct Loaded {
    activations: Vec<(String, ActivationStack)>,
    attentions: Vec<(String, AttentionStack)>,
    problems: usize,
}

/// Reads every container; unreadable ones are named on stderr and counted.
fn load(files: &[PathBuf]) -> Loaded {
    let mut loaded = Loaded { activations: Vec::new(), attentions: Vec::new(), problems: 0 };
    for f in files {
        let name = f.file_name().map_or_else(|| f.display().to_string(), |n| n.to_string_lossy().into_owned());
        match read_container(f) {
            Ok((_, stacks)) => {
                for s in stacks {
                    let key = format!("{name}#{}", s.sample_id());
                    match s {
                        Stack::Activation(a) => loaded.activations.push((key, a)),
                        Stack::Attention(a) => loaded.attentions.push((key, a)),
                    }
                }
            }
            Err(e) => {
                eprintln!("skipping {}: {e}", f.display());
                loaded.problems += 1;
            }
        }
    }
    loaded
}

fn model_label(models: &BTreeSet<String>) -> String {
    models.iter().cloned().collect::<Vec<_>>().join(",")
}

fn out_path(cfg: &RunConfig, stem: &str) -> PathBuf {
    cfg.out.join(format!("{stem}.{}", cfg.format.extension()))
}

fn create_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io_at(&cfg.out, e))
}

/// One series file per selected metric per dataset tag.
pub fn cmd_metrics(cfg: &RunConfig) -> u8 {
    finish(metrics_impl(cfg))
}

fn metrics_impl(cfg: &RunConfig) -> Result<usize> {
    let files = collect_inputs(&cfg.inputs)?;
    let metrics = cfg.metrics.clone().unwrap_or_else(|| DEFAULT_METRICS.to_vec());
    create_out(cfg)?;
    let Loaded { activations, attentions, mut problems } = load(&files);
    if !attentions.is_empty() {
        eprintln!("note: ignoring {} attention sample(s); use `bias` for those", attentions.len());
    }

    let results: Vec<Vec<Result<Vec<f64>>>> = pool(cfg.threads)?.install(|| {
        activations
            .par_iter()
            .map(|(_, s)| metrics.iter().map(|m| m.evaluate_stack(s, &cfg.mauve)).collect())
            .collect()
    });

    type PerSample = BTreeMap<String, Vec<f64>>;
    let mut groups: BTreeMap<DatasetTag, (BTreeSet<String>, BTreeMap<Metric, PerSample>)> = BTreeMap::new();
    for ((key, stack), values) in activations.iter().zip(results) {
        let (models, per_metric) = groups.entry(stack.dataset_tag).or_default();
        models.insert(stack.model_tag.clone());
        for (metric, value) in metrics.iter().zip(values) {
            match value {
                Ok(v) => {
                    per_metric.entry(*metric).or_default().insert(key.clone(), v);
                }
                Err(e) => {
                    eprintln!("{key}: {metric}: {e}; sample left out of this series");
                    problems += 1;
                }
            }
        }
    }

    for (tag, (models, per_metric)) in &groups {
        for metric in &metrics {
            let Some(samples) = per_metric.get(metric) else { continue };
            match aggregate(metric.name(), samples, *tag, model_label(models)) {
                Ok(series) => {
                    let path = out_path(cfg, &format!("{tag}_{metric}"));
                    emit(&series, cfg.format, &path)?;
                    eprintln!("wrote {} ({} samples)", path.display(), samples.len());
                }
                Err(e) => {
                    eprintln!("{tag}_{metric}: {e}");
                    problems += 1;
                }
            }
        }
    }
    Ok(problems)
}

/// One profile file per dataset tag, or per tag and layer.
pub fn cmd_bias(cfg: &RunConfig) -> u8 {
    finish(bias_impl(cfg))
}

fn combine(profiles: &[BiasProfile], grid: Option<usize>) -> Result<BiasProfile> {
    match grid {
        Some(g) => cross_sample_profile(profiles, g),
        None if profiles.windows(2).all(|w| w[0].positions == w[1].positions) => average_profiles(profiles),
        None => {
            eprintln!("note: samples differ in length; combining on a {DEFAULT_BIAS_GRID}-point relative grid");
            cross_sample_profile(profiles, DEFAULT_BIAS_GRID)
        }
    }
}

fn bias_impl(cfg: &RunConfig) -> Result<usize> {
    let files = collect_inputs(&cfg.inputs)?;
    let Loaded { activations, attentions, mut problems } = load(&files);
    if !activations.is_empty() {
        eprintln!("note: ignoring {} activation sample(s); use `metrics` for those", activations.len());
    }
    if let Some((key, shortest)) = attentions.iter().min_by_key(|(_, a)| a.token_count()) {
        if cfg.skip_prefix >= shortest.token_count() {
            return Err(Error::arg(format!(
                "--skip-prefix {} leaves nothing of sample {key} ({} tokens)",
                cfg.skip_prefix,
                shortest.token_count()
            )));
        }
    }
    create_out(cfg)?;
    let opts = BiasOptions { skip_prefix: cfg.skip_prefix, scope: cfg.scope, normalized: cfg.normalized };
    let results: Vec<Result<Vec<BiasProfile>>> =
        pool(cfg.threads)?.install(|| attentions.par_iter().map(|(_, a)| bias_profile(a, &opts)).collect());

    let mut groups: BTreeMap<DatasetTag, Vec<Vec<BiasProfile>>> = BTreeMap::new();
    for ((key, attn), result) in attentions.iter().zip(results) {
        match result {
            Ok(p) => groups.entry(attn.dataset_tag).or_default().push(p),
            Err(e) => {
                eprintln!("{key}: {e}");
                problems += 1;
            }
        }
    }

    for (tag, samples) in &groups {
        let layers = samples.iter().map(Vec::len).max().unwrap_or(0);
        for slot in 0..layers {
            let column: Vec<BiasProfile> = samples.iter().filter_map(|s| s.get(slot).cloned()).collect();
            if column.len() != samples.len() {
                eprintln!("{tag}: layer {slot} missing from {} sample(s)", samples.len() - column.len());
                problems += 1;
            }
            let stem = match cfg.scope {
                ProfileScope::AllLayers => format!("{tag}_bias"),
                ProfileScope::PerLayer => format!("{tag}_bias_layer{slot}"),
            };
            match combine(&column, cfg.grid) {
                Ok(profile) => {
                    let path = out_path(cfg, &stem);
                    emit(&profile, cfg.format, &path)?;
                    eprintln!("wrote {} ({} samples)", path.display(), column.len());
                }
                Err(e) => {
                    eprintln!("{stem}: {e}");
                    problems += 1;
                }
            }
        }
    }
    Ok(problems)
}

/// File-name form of a `λ₂` value.
pub fn lambda_label(lambda2: f64) -> String {
    format!("{}", round12(lambda2))
}

/// Trajectory container and dispersion series for each `λ₂`.
pub fn cmd_sim(cfg: &RunConfig) -> u8 {
    finish(sim_impl(cfg))
}

fn sim_impl(cfg: &RunConfig) -> Result<usize> {
    let lambdas = match &cfg.lambda2_sweep {
        Some(sweep) => sweep.values()?,
        None => vec![cfg.sim.lambda2],
    };
    let configs: Vec<SimConfig> = lambdas.iter().map(|&lambda2| SimConfig { lambda2, ..cfg.sim }).collect();
    for c in &configs {
        c.validate()?;
    }
    let metrics = cfg.metrics.clone().unwrap_or_default();
    create_out(cfg)?;
    let x0 = initial_state(cfg.sim.n, cfg.sim.d, cfg.init_seed);

    let runs: Vec<Result<_>> = pool(cfg.threads)?.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let traj = run_sim(c, &x0)?;
                let stack = traj.to_activation_stack(format!("lambda2_{}", lambda_label(c.lambda2)));
                let extra: Vec<Result<Vec<f64>>> =
                    metrics.iter().map(|m| m.evaluate_stack(&stack, &cfg.mauve)).collect();
                Ok((traj.dispersion_series, stack, extra))
            })
            .collect()
    });

    let mut problems = 0;
    for (c, run) in configs.iter().zip(runs) {
        let label = format!("sim_lambda2_{}", lambda_label(c.lambda2));
        let (dispersion, stack, extra) = match run {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{label}: {e}");
                problems += 1;
                continue;
            }
        };
        let container = cfg.out.join(format!("{label}.homognx"));
        write_stack_as(&Stack::Activation(stack.clone()), &container, Dtype::F64)?;
        let series = LayerMetricSeries::single("dispersion", &dispersion, stack.dataset_tag, stack.model_tag.clone());
        emit(&series, cfg.format, out_path(cfg, &format!("{label}_dispersion")))?;
        for (metric, values) in metrics.iter().zip(extra) {
            match values {
                Ok(v) => {
                    let series = LayerMetricSeries::single(metric.name(), &v, stack.dataset_tag, stack.model_tag.clone());
                    emit(&series, cfg.format, out_path(cfg, &format!("{label}_{metric}")))?;
                }
                Err(e) => {
                    eprintln!("{label}: {metric}: {e}");
                    problems += 1;
                }
            }
        }
        eprintln!("wrote {} (final dispersion {:e})", container.display(), dispersion.last().copied().unwrap_or(0.0));
    }
    Ok(problems)
}

/// Lists every violation in the given containers on stderr.
pub fn cmd_validate(cfg: &RunConfig) -> u8 {
    finish(validate_impl(cfg))
}

fn validate_impl(cfg: &RunConfig) -> Result<usize> {
    let files = collect_inputs(&cfg.inputs)?;
    let mut problems = 0;
    for f in &files {
        let checked = fs::read(f).map_err(|e| Error::io_at(f, e)).and_then(|b| validate_container(&b));
        match checked {
            Ok((manifest, report)) if report.is_empty() => {
                eprintln!("{}: ok ({} samples)", f.display(), manifest.samples.len());
            }
            Ok((_, report)) => {
                for (id, violations) in report {
                    for v in violations {
                        eprintln!("{}#{id}: {v}", f.display());
                        problems += 1;
                    }
                }
            }
            Err(e) => {
                eprintln!("{}: {e}", f.display());
                problems += 1;
            }
        }
    }
    Ok(problems)
}
