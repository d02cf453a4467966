//! Command-line entry points. `main` only forwards to [`run_cli`].

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::model::{ActivationKind, Checkpoint, PinnConfig};
use crate::oracle::{
    generate_inverse_dataset, solve_two_region, InverseDataConfig, Measurement, MeasurementSet, NoiseScale, Scheme, SolverConfig,
};
use crate::physics::{DimensionlessProblem, MaterialEstimate};
use crate::report::{export_report, read_field_csv, time_series_csv, ErrorReport, Provenance, ReportJson};
use crate::training::{
    ablation_config, inverse_sweep, multi_seed_statistics, run_activation_ablation, run_sampling_ablation, train_forward,
    ForwardConfig, ForwardOutcome, InverseConfig, NetworkConfig, RunRecord, SamplingMode,
};

pub const CONFIG_SCHEMA: &str = "htf-config";
pub const CONFIG_VERSION: u32 = 1;

/// Versioned config file. Each section is optional; a subcommand reads the
/// one it needs and falls back to built-in defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSetup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<ForwardConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<InverseSetup>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> crate::Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        let c: ConfigFile = serde_json::from_str(&s).map_err(|e| crate::Error::Parse { path: path.into(), message: e.to_string() })?;
        if c.schema != CONFIG_SCHEMA || c.version != CONFIG_VERSION {
            return Err(crate::Error::Parse {
                path: path.into(),
                message: format!("unsupported config {} v{} (expected {CONFIG_SCHEMA} v{CONFIG_VERSION})", c.schema, c.version),
            });
        }
        Ok(c)
    }

    fn wrap() -> Self {
        Self { schema: CONFIG_SCHEMA.into(), version: CONFIG_VERSION, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSetup {
    pub problem: DimensionlessProblem,
    pub solver: SolverConfig,
}

/// An identification experiment: synthetic data plus training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseSetup {
    pub truth: MaterialEstimate,
    pub data: InverseDataConfig,
    pub data_seed: u64,
    pub training: InverseConfig,
}

impl Default for InverseSetup {
    fn default() -> Self {
        Self {
            truth: MaterialEstimate::new(0.2, 0.24),
            data: InverseDataConfig::default(),
            data_seed: 0,
            training: InverseConfig::new(MaterialEstimate::new(0.9, 0.9)),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "htf", version, about = "Layer/substrate heat conduction: FD oracle, transformer training, inverse identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Versioned JSON config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a scenario with finite differences and export the field.
    Oracle(OracleArgs),
    /// Synthetic noisy sensor data for identification.
    GenerateData(DataArgs),
    /// Train both instances on a forward scenario and compare with the oracle.
    Forward(ForwardArgs),
    /// Two-stage identification of the layer properties.
    Inverse(InverseArgs),
    /// Anchor sequences versus independent points at equal budget.
    AblateSampling(AblationArgs),
    /// The five activation functions on identical data.
    AblateActivations(AblationArgs),
    /// Compare two field CSV files.
    Metrics(MetricsArgs),
    /// Aggregate run records and reports from directories.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScenarioName {
    Benchmark,
    S1a,
    S1b,
    S1c,
    Heating,
    Inverse,
}

impl ScenarioName {
    fn problem(self, source: f64) -> DimensionlessProblem {
        match self {
            ScenarioName::Benchmark => DimensionlessProblem::benchmark(),
            ScenarioName::S1a => DimensionlessProblem::s1a(),
            ScenarioName::S1b => DimensionlessProblem::s1b(),
            ScenarioName::S1c => DimensionlessProblem::s1c(source),
            ScenarioName::Heating => DimensionlessProblem::heating(),
            ScenarioName::Inverse => DimensionlessProblem::inverse(0.2, 0.24),
        }
    }

    fn label(self) -> &'static str {
        match self {
            ScenarioName::Benchmark => "benchmark",
            ScenarioName::S1a => "s1a",
            ScenarioName::S1b => "s1b",
            ScenarioName::S1c => "s1c",
            ScenarioName::Heating => "heating",
            ScenarioName::Inverse => "inverse",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Cn,
    Ie,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Cn => Scheme::CrankNicolson,
            SchemeArg::Ie => Scheme::ImplicitEuler,
        }
    }
}

/// Oracle resolution overrides shared by several subcommands.
#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Oracle grid spacing.
    #[arg(long)]
    dx: Option<f64>,
    /// Oracle time step.
    #[arg(long)]
    dt: Option<f64>,
}

impl SolverArgs {
    fn apply(&self, s: &mut SolverConfig) {
        if let Some(sc) = self.scheme {
            s.scheme = sc.into();
        }
        if let Some(dx) = self.dx {
            s.dx = dx;
        }
        if let Some(dt) = self.dt {
            s.dt = dt;
        }
    }
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, value_enum, default_value = "benchmark")]
    scenario: ScenarioName,
    /// Source strength for s1c.
    #[arg(long, default_value_t = 1.0)]
    source: f64,
    #[command(flatten)]
    solver: SolverArgs,
}

/// Inclusive seed range `A..B` or a single seed.
#[derive(Clone, Debug, PartialEq, Eq)]
struct SeedRange(Vec<u64>);

impl FromStr for SeedRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected A..B or N, got {s:?}");
        match s.split_once("..") {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                Ok(SeedRange((a..=b).collect()))
            }
            None => Ok(SeedRange(vec![s.trim().parse().map_err(|_| bad())?])),
        }
    }
}

#[derive(Args, Debug)]
struct SeedArgs {
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive range, e.g. `0..5`.
    #[arg(long)]
    seeds: Option<SeedRange>,
}

impl SeedArgs {
    fn list(&self, default: u64) -> Vec<u64> {
        match (&self.seed, &self.seeds) {
            (Some(s), _) => vec![*s],
            (None, Some(r)) => r.0.clone(),
            (None, None) => vec![default],
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    #[command(flatten)]
    seeds: SeedArgs,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Noise proportional to the clean value instead of absolute.
    #[arg(long)]
    relative_noise: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    activation: Option<ActivationKind>,
    #[arg(long)]
    sampling: Option<SamplingMode>,
    /// Use the fully connected baseline instead of the transformer.
    #[arg(long)]
    pinn: bool,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct ForwardArgs {
    /// Scenario; `s1` runs s1a, s1b and s1c in turn.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioName>,
    #[arg(long, conflicts_with = "scenario")]
    s1: bool,
    #[arg(long, default_value_t = 1.0)]
    source: f64,
    #[command(flatten)]
    seeds: SeedArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct InverseArgs {
    #[command(flatten)]
    seeds: SeedArgs,
    /// Stage A length (Stage B starts here).
    #[arg(long)]
    stage_transition: Option<usize>,
    /// Stage B length.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    init_alpha: Option<f64>,
    #[arg(long)]
    init_kappa: Option<f64>,
    /// Start at (0.1, 0.01) and switch stages at epoch 1500.
    #[arg(long)]
    small_init: bool,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Seed of the measurement noise.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Measurement CSV (`x,t,u_measured`) instead of synthetic data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct AblationArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directories scanned (recursively) for run records and reports.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit status.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level.as_str())).try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let file = cli.config.as_deref().map(ConfigFile::load).transpose()?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Oracle(a) => cmd_oracle(a, file.as_ref(), &cli.out),
        Command::GenerateData(a) => cmd_generate(a, file.as_ref(), &cli.out),
        Command::Forward(a) => cmd_forward(a, file.as_ref(), &cli.out),
        Command::Inverse(a) => cmd_inverse(a, file.as_ref(), &cli.out),
        Command::AblateSampling(a) => cmd_ablate_sampling(a, file.as_ref(), &cli.out),
        Command::AblateActivations(a) => cmd_ablate_activations(a, file.as_ref(), &cli.out),
        Command::Metrics(a) => cmd_metrics(a, &cli.out),
        Command::Report(a) => cmd_report(a, &cli.out),
    }
}

fn write_file(path: &Path, body: &str) -> anyhow::Result<()> {
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    write_file(path, &serde_json::to_string_pretty(v)?)
}

fn cmd_oracle(a: &OracleArgs, file: Option<&ConfigFile>, out: &Path) -> anyhow::Result<()> {
    let mut setup = file.and_then(|f| f.oracle.clone()).unwrap_or_else(|| OracleSetup {
        problem: a.scenario.problem(a.source),
        solver: SolverConfig::default(),
    });
    a.solver.apply(&mut setup.solver);
    let field = solve_two_region(&setup.problem, &setup.solver)?;
    let stem = format!("oracle_{}", a.scenario.label());
    field.write_csv(&out.join(format!("{stem}.csv")))?;
    write_json(&out.join(format!("{stem}_config.json")), &ConfigFile { oracle: Some(setup), ..ConfigFile::wrap() })?;
    log::info!("{} nodes x {} levels written to {}", field.x().len(), field.t().len(), out.display());
    Ok(())
}

fn inverse_setup(file: Option<&ConfigFile>) -> InverseSetup {
    file.and_then(|f| f.inverse.clone()).unwrap_or_default()
}

fn cmd_generate(a: &DataArgs, file: Option<&ConfigFile>, out: &Path) -> anyhow::Result<()> {
    let mut setup = inverse_setup(file);
    if let Some(s) = a.noise_sigma {
        setup.data.sigma = s;
    }
    if a.relative_noise {
        setup.data.scale = NoiseScale::Relative;
    }
    a.solver.apply(&mut setup.data.solver);
    let alpha = a.alpha.unwrap_or(setup.truth.alpha);
    let kappa = a.kappa.unwrap_or(setup.truth.kappa);
    for seed in a.seeds.list(setup.data_seed) {
        let set = generate_inverse_dataset(alpha, kappa, seed, &setup.data)?;
        set.write(&out.join(format!("measurements_seed{seed}.csv")))?;
    }
    Ok(())
}

fn apply_train(cfg: &mut ForwardConfig, t: &TrainArgs) -> anyhow::Result<()> {
    if let Some(e) = t.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = t.sampling {
        cfg.sampling = s;
    }
    if let Some(lr) = t.lr {
        cfg.adam.lr = lr;
    }
    if t.pinn {
        cfg.network = NetworkConfig::Pinn(PinnConfig::default());
    }
    if let Some(act) = t.activation {
        match &mut cfg.network {
            NetworkConfig::Htf(h) => h.activation = act,
            NetworkConfig::Pinn(_) => bail!("--activation applies to the transformer network only"),
        }
    }
    Ok(())
}

/// Writes everything a forward run produces under `dir`.
fn save_forward(run: &ForwardOutcome, cfg: &ForwardConfig, dir: &Path, stem: &str) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    export_report(&run.report, &run.prediction, &run.reference, dir, stem)?;
    run.record.write(dir, &format!("{stem}_record"))?;
    Checkpoint::new(vec![run.layer.clone(), run.substrate.clone()]).save(&dir.join(format!("{stem}_checkpoint.json")))?;
    write_json(&dir.join(format!("{stem}_config.json")), &ConfigFile { forward: Some(cfg.clone()), ..ConfigFile::wrap() })?;
    let s = &run.report.summary;
    log::info!(
        "{stem}: max L1 {:.4}, max L2 {:.5}, mean global L2 {:?}",
        s.max_pointwise_l1,
        s.max_pointwise_l2,
        s.mean_global_l2
    );
    Ok(())
}

fn cmd_forward(a: &ForwardArgs, file: Option<&ConfigFile>, out: &Path) -> anyhow::Result<()> {
    let scenarios: Vec<ScenarioName> = if a.s1 {
        vec![ScenarioName::S1a, ScenarioName::S1b, ScenarioName::S1c]
    } else {
        vec![a.scenario.unwrap_or(ScenarioName::Benchmark)]
    };
    let from_file = file.and_then(|f| f.forward.clone());
    for sc in scenarios {
        let mut cfg = match (&from_file, a.scenario.is_some() || a.s1) {
            (Some(c), false) => c.clone(),
            (Some(c), true) => ForwardConfig { problem: sc.problem(a.source), ..c.clone() },
            (None, _) => ForwardConfig::new(sc.problem(a.source)),
        };
        apply_train(&mut cfg, &a.train)?;
        a.solver.apply(&mut cfg.oracle);
        for seed in a.seeds.list(cfg.seed) {
            cfg.seed = seed;
            let run = train_forward(&cfg)?;
            let stem = format!("forward_{}_seed{seed}", sc.label());
            save_forward(&run, &cfg, out, &stem)?;
            if !run.record.is_completed() {
                bail!("{stem} diverged: {:?}", run.record.status);
            }
        }
    }
    Ok(())
}

/// Reads `x,t,u_measured` rows.
fn read_measurements(path: &Path) -> anyhow::Result<MeasurementSet> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut entries = Vec::new();
    for rec in rdr.deserialize::<(f64, f64, f64)>() {
        let (x, t, u) = rec.with_context(|| format!("parsing {}", path.display()))?;
        entries.push(Measurement { x, t, u });
    }
    Ok(MeasurementSet { entries, sigma: 0.0, scale: NoiseScale::Absolute, seed: None, truth: None })
}

fn cmd_inverse(a: &InverseArgs, file: Option<&ConfigFile>, out: &Path) -> anyhow::Result<()> {
    let mut setup = inverse_setup(file);
    let t = &mut setup.training;
    if a.small_init {
        let s = InverseConfig::small_init();
        t.init = s.init;
        t.stage_transition = s.stage_transition;
    }
    if let Some(v) = a.init_alpha {
        t.init.alpha = v;
    }
    if let Some(v) = a.init_kappa {
        t.init.kappa = v;
    }
    if let Some(v) = a.stage_transition {
        t.stage_transition = v;
    }
    if let Some(v) = a.epochs {
        t.stage_b_epochs = v;
    }
    if let Some(s) = a.noise_sigma {
        setup.data.sigma = s;
    }
    if let Some(s) = a.data_seed {
        setup.data_seed = s;
    }
    a.solver.apply(&mut setup.data.solver);
    let measurements = match &a.data {
        Some(p) => read_measurements(p)?,
        None => generate_inverse_dataset(setup.truth.alpha, setup.truth.kappa, setup.data_seed, &setup.data)?,
    };
    measurements.write(&out.join("inverse_measurements.csv"))?;
    write_json(&out.join("inverse_config.json"), &ConfigFile { inverse: Some(setup.clone()), ..ConfigFile::wrap() })?;

    let seeds = a.seeds.list(setup.training.seed);
    let runs = inverse_sweep(&setup.training, &measurements, &seeds)?;
    let mut estimates = Vec::new();
    for (seed, run) in seeds.iter().zip(&runs) {
        run.record.write(out, &format!("inverse_seed{seed}"))?;
        let e = run.estimate;
        let [ea, ek, er] = e.relative_errors(&setup.truth);
        log::info!("seed {seed}: alpha {:.4} ({ea:.2}%), kappa {:.4} ({ek:.2}%), rho_c {:.4} ({er:.2}%)", e.alpha, e.kappa, e.rho_c());
        estimates.push(e);
    }
    if estimates.len() >= 2 {
        let stats = multi_seed_statistics(&estimates, setup.truth)?;
        write_json(&out.join("inverse_statistics.json"), &stats)?;
        let mut table = String::from("quantity,mean_error_percent,std_error_percent\n");
        for (q, name) in ["alpha", "kappa", "rho_c"].iter().enumerate() {
            let _ = writeln!(table, "{name},{:.4},{:.4}", stats.mean_error[q], stats.std_error[q]);
        }
        write_file(&out.join("inverse_statistics.csv"), &table)?;
    }
    Ok(())
}

fn ablation_base(a: &AblationArgs, file: Option<&ConfigFile>) -> anyhow::Result<ForwardConfig> {
    let mut cfg = file.and_then(|f| f.forward.clone()).unwrap_or_else(ablation_config);
    apply_train(&mut cfg, &a.train)?;
    a.solver.apply(&mut cfg.oracle);
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn global_series(runs: &[(&str, &RunRecord)]) -> String {
    let mut rows: Vec<(String, &[f64], &[Option<f64>])> = Vec::new();
    for (name, r) in runs {
        if let Some(g) = &r.global_errors {
            rows.push((format!("{name}_global_l1"), &g.t, &g.l1));
            rows.push((format!("{name}_global_l2"), &g.t, &g.l2));
        }
    }
    let refs: Vec<(&str, &[f64], &[Option<f64>])> = rows.iter().map(|(n, t, v)| (n.as_str(), *t, *v)).collect();
    time_series_csv(&refs)
}

fn cmd_ablate_sampling(a: &AblationArgs, file: Option<&ConfigFile>, out: &Path) -> anyhow::Result<()> {
    let cfg = ablation_base(a, file)?;
    let ab = run_sampling_ablation(&cfg)?;
    for (name, run, mode) in [("sequence", &ab.sequence, SamplingMode::Sequence), ("pointwise", &ab.pointwise, SamplingMode::Pointwise)] {
        save_forward(run, &ForwardConfig { sampling: mode, ..cfg.clone() }, out, &format!("sampling_{name}"))?;
    }
    write_file(
        &out.join("sampling_global.csv"),
        &global_series(&[("sequence", &ab.sequence.record), ("pointwise", &ab.pointwise.record)]),
    )?;
    Ok(())
}

fn cmd_ablate_activations(a: &AblationArgs, file: Option<&ConfigFile>, out: &Path) -> anyhow::Result<()> {
    let cfg = ablation_base(a, file)?;
    let runs = run_activation_ablation(&cfg)?;
    let mut summary = Vec::new();
    for (act, run) in &runs {
        save_forward(run, &crate::training::with_activation(&cfg, *act)?, out, &format!("activation_{act}"))?;
        summary.push(serde_json::json!({ "activation": act, "summary": run.report.summary }));
    }
    let names: Vec<String> = runs.iter().map(|(a, _)| a.to_string()).collect();
    let recs: Vec<(&str, &RunRecord)> = names.iter().zip(&runs).map(|(n, (_, r))| (n.as_str(), &r.record)).collect();
    write_file(&out.join("activation_global.csv"), &global_series(&recs))?;
    write_json(&out.join("activation_summary.json"), &summary)?;
    Ok(())
}

fn cmd_metrics(a: &MetricsArgs, out: &Path) -> anyhow::Result<()> {
    let pred = read_field_csv(&a.pred)?;
    let reference = read_field_csv(&a.reference)?;
    let report = ErrorReport::compare(
        &pred,
        &reference,
        Provenance { reference: a.reference.display().to_string(), ..Provenance::default() },
    )?;
    export_report(&report, &pred, &reference, out, "metrics")?;
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(())
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_json(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "json") {
            out.push(p);
        }
    }
    Ok(())
}

/// One line per recognized file in the aggregate.
#[derive(Serialize)]
struct AggregateEntry {
    file: String,
    kind: String,
    seed: Option<u64>,
    epochs: Option<usize>,
    summary: Option<serde_json::Value>,
    final_estimate: Option<serde_json::Value>,
}

fn cmd_report(a: &ReportArgs, out: &Path) -> anyhow::Result<()> {
    let mut files = Vec::new();
    for d in &a.inputs {
        collect_json(d, &mut files)?;
    }
    let mut entries = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
        let file = f.display().to_string();
        if let Ok(r) = serde_json::from_str::<RunRecord>(&text) {
            entries.push(AggregateEntry {
                file,
                kind: r.kind.clone(),
                seed: Some(r.seed),
                epochs: Some(r.epochs_run()),
                summary: r.summary.as_ref().map(serde_json::to_value).transpose()?,
                final_estimate: r.trajectory.last().map(serde_json::to_value).transpose()?,
            });
        } else if let Ok(r) = ReportJson::parse(&text) {
            entries.push(AggregateEntry {
                file,
                kind: "error_report".into(),
                seed: r.provenance.seed,
                epochs: None,
                summary: Some(serde_json::to_value(&r.summary)?),
                final_estimate: None,
            });
        }
    }
    if entries.is_empty() {
        bail!("no run records or reports found");
    }
    write_json(&out.join("aggregate.json"), &serde_json::json!({ "entries": entries }))?;
    log::info!("aggregated {} files", entries.len());
    Ok(())
}
