//! Command implementations behind the `toxwatch` binary.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use toxwatch::baselines::PlayerLedger;
use toxwatch::features::FeatureStats;
use toxwatch::harness::{
    aggregate, detection_rate, improvement_table, sweep, DetEtcPolicy, Episode, EpisodeLog, FixedPolicy,
    ImprovementRow, LinUcbPolicy, MetricsRow, MonitoringPolicy, Parallelism, PolicyKind, ProbEtcPolicy,
    RunOptions, SweepSpec, SyntheticFactory,
};
use toxwatch::io::{
    read_episode_log, read_manifest, read_observations, read_results, write_curve, write_episode_log,
    write_improvement, write_manifest, write_results, ObservationWriter,
};
use toxwatch::linucb::{ModelCheckpoint, UcbParams};
use toxwatch::synth::{calibrate_intercept, DayBatch, GeneratorConfig, SyntheticStream, TARGET_TOXIC_RATE};
use toxwatch::{Error, ErrorKind};

pub const OUT_DIR_ENV: &str = "TOXWATCH_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: Error },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::File { source, .. } => source.kind(),
            CliError::Core(e) => e.kind(),
        }
    }

    /// 2 for configuration, 3 for IO, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Io => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn at(path: &Path) -> impl FnOnce(Error) -> CliError + '_ {
    move |source| CliError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Core(Error::Config(msg.into()))
}

#[derive(Debug, Parser)]
#[command(name = "toxwatch", version, about = "Toxicity monitoring policies on a synthetic match stream")]
pub struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic observation stream and its manifest.
    Generate(GenerateArgs),
    /// Run one policy through a stream, checkpointing at each day boundary.
    Run(RunArgs),
    /// Calibrate policies to target shares and evaluate them on replica seeds.
    Sweep(SweepArgs),
    /// Rebuild curve and improvement tables from a results file.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "toxwatch-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    /// Generator config file (`key = value` lines); defaults apply otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub days: Option<u32>,
    #[arg(long)]
    pub n_players: Option<usize>,
    #[arg(long)]
    pub matches_per_day: Option<usize>,
    /// Random-intercept sd. Changing it re-solves the intercept.
    #[arg(long)]
    pub sigma_u: Option<f64>,
    /// Re-solve the intercept for the target toxic rate.
    #[arg(long)]
    pub calibrate: bool,
    #[arg(long, default_value_t = TARGET_TOXIC_RATE)]
    pub target_rate: f64,
}

impl GeneratorArgs {
    pub fn load(&self) -> CliResult<GeneratorConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| at(path)(e.into()))?;
                GeneratorConfig::from_text(&text).map_err(at(path))?
            }
            None => GeneratorConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.days {
            cfg.days = v;
        }
        if let Some(v) = self.n_players {
            cfg.n_players = v;
        }
        if let Some(v) = self.matches_per_day {
            cfg.matches_per_day = v;
        }
        let sigma_changed = self.sigma_u.is_some_and(|s| s != cfg.sigma_u);
        if let Some(v) = self.sigma_u {
            cfg.sigma_u = v;
        }
        cfg.validate()?;
        if self.calibrate || sigma_changed {
            cfg.beta0 = calibrate_intercept(&cfg, self.target_rate)?;
            log::info!("calibrated beta0 = {:?} for toxic rate {}", cfg.beta0, self.target_rate);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Leave the `toxic` column out.
    #[arg(long)]
    pub no_labels: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum RunPolicy {
    Linucb,
    ProbEtc,
    DetEtc,
    /// Monitor every observation.
    All,
    /// Monitor nothing.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatsSource {
    /// Table defaults for synthetic streams, first day for CSV input.
    Auto,
    /// Published descriptive statistics.
    Table,
    /// Estimated from the first day's covariates, then frozen.
    FirstDay,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub policy: RunPolicy,
    /// Labeled observation CSV. Without it the stream is generated.
    #[arg(long, conflicts_with = "config")]
    pub stream: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// LinUCB exploration factor.
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// LinUCB monitoring cost.
    #[arg(long)]
    pub cost: Option<f64>,
    /// Probabilistic ETC exploration probability.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Deterministic ETC exploration matches.
    #[arg(long)]
    pub exploration_matches: Option<u64>,
    #[arg(long, value_enum, default_value = "auto")]
    pub feature_stats: StatsSource,
    /// Seeds the policy's own random draws.
    #[arg(long, default_value_t = 0)]
    pub policy_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Checkpoint directory of a day boundary to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many days in total, leaving only checkpoints.
    #[arg(long)]
    pub stop_after: Option<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Comma-separated: linucb, prob_etc, det_etc.
    #[arg(long, default_value = "linucb,prob_etc")]
    pub policies: String,
    /// Comma-separated target shares.
    #[arg(long, value_delimiter = ',', default_values_t = SweepSpec::default().targets)]
    pub targets: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = SweepSpec::default().seeds)]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = SweepSpec::default().calibration_seed)]
    pub calibration_seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.005)]
    pub tolerance: f64,
    #[arg(long, value_enum, default_value = "table")]
    pub feature_stats: StatsSource,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Results CSV from a sweep.
    #[arg(long)]
    pub results: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| ()),
        Command::Run(a) => cmd_run(a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(a).map(|_| ()),
        Command::Report(a) => cmd_report(a).map(|_| ()),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| at(path)(e.into()))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| at(path)(e.into()))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| at(dir)(e.into()))
}

fn save(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> toxwatch::Result<()>) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w).map_err(at(path))?;
    w.flush().map_err(|e| at(path)(e.into()))
}

fn manifest_entry(m: &mut BTreeMap<String, String>, k: &str, v: impl ToString) {
    m.insert(k.to_string(), v.to_string());
}

pub struct GenerateOutput {
    pub observations: PathBuf,
    pub manifest: PathBuf,
    pub rows: u64,
    pub toxic: u64,
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<GenerateOutput> {
    let cfg = args.generator.load()?;
    let dir = &args.out.out_dir;
    ensure_dir(dir)?;
    let observations = dir.join("observations.csv");
    let mut writer = ObservationWriter::new(create(&observations)?, !args.no_labels).map_err(at(&observations))?;
    let mut stream = SyntheticStream::new(cfg.clone())?;
    for batch in stream.by_ref() {
        writer.write_batch(&batch).map_err(at(&observations))?;
    }
    let (rows, toxic) = (writer.rows(), writer.toxic());
    writer
        .finish()
        .map_err(at(&observations))?
        .flush()
        .map_err(|e| at(&observations)(e.into()))?;
    let toxic_rate = if rows > 0 { toxic as f64 / rows as f64 } else { 0.0 };
    save(&dir.join("generator.conf"), |w| Ok(w.write_all(cfg.to_text().as_bytes())?))?;

    let mut m = BTreeMap::new();
    manifest_entry(&mut m, "config_hash", cfg.config_hash());
    manifest_entry(&mut m, "seed", cfg.seed);
    manifest_entry(&mut m, "days", cfg.days);
    manifest_entry(&mut m, "rows", rows);
    manifest_entry(&mut m, "toxic_count", toxic);
    manifest_entry(&mut m, "toxic_rate", format!("{toxic_rate:.6e}"));
    manifest_entry(&mut m, "target_toxic_rate", format!("{:e}", args.generator.target_rate));
    manifest_entry(&mut m, "beta0", format!("{:?}", cfg.beta0));
    manifest_entry(&mut m, "sigma_u", format!("{:?}", cfg.sigma_u));
    manifest_entry(&mut m, "labeled", !args.no_labels);
    let manifest = dir.join("manifest.txt");
    save(&manifest, |w| write_manifest(w, &m))?;
    log::info!("wrote {rows} rows ({toxic} toxic) to {}", observations.display());
    Ok(GenerateOutput {
        observations,
        manifest,
        rows,
        toxic,
    })
}

/// Days fed to a run: read from CSV or generated on the fly.
enum Source {
    Loaded(Vec<DayBatch>),
    Generated(Box<SyntheticStream>),
}

impl Source {
    fn next_batch(&mut self, day: u32) -> CliResult<DayBatch> {
        match self {
            Source::Loaded(b) => Ok(std::mem::take(&mut b[day as usize])),
            Source::Generated(s) => {
                // Generation is sequential, so earlier days are replayed.
                loop {
                    let batch = s.generate_next();
                    if batch.day == day {
                        return Ok(batch);
                    }
                }
            }
        }
    }
}

fn state_file(policy: RunPolicy) -> &'static str {
    match policy {
        RunPolicy::Linucb => "model.txt",
        RunPolicy::ProbEtc | RunPolicy::DetEtc => "ledger.csv",
        RunPolicy::All | RunPolicy::None => "state.txt",
    }
}

fn build_policy(args: &RunArgs, stats: Option<FeatureStats>) -> CliResult<Box<dyn MonitoringPolicy>> {
    let missing = |flag: &str| config_err(format!("policy {:?} needs --{flag}", args.policy));
    let resume_state = args
        .resume
        .as_ref()
        .map(|dir| dir.join(state_file(args.policy)));
    Ok(match args.policy {
        RunPolicy::Linucb => {
            let params = UcbParams::new(args.delta, args.cost.ok_or_else(|| missing("cost"))?)?;
            match resume_state {
                Some(path) => {
                    let cp = ModelCheckpoint::read_from(open(&path)?).map_err(at(&path))?;
                    if cp.params != params {
                        return Err(config_err(format!(
                            "checkpoint {} was written with different LinUCB parameters",
                            path.display()
                        )));
                    }
                    Box::new(LinUcbPolicy::from_checkpoint(cp))
                }
                None => Box::new(LinUcbPolicy::new(params, stats)),
            }
        }
        RunPolicy::ProbEtc | RunPolicy::DetEtc => {
            let ledger = match resume_state {
                Some(path) => PlayerLedger::read_from(open(&path)?).map_err(at(&path))?,
                None => PlayerLedger::new(),
            };
            if args.policy == RunPolicy::ProbEtc {
                let eps = args.epsilon.ok_or_else(|| missing("epsilon"))?;
                Box::new(ProbEtcPolicy::with_ledger(eps, ledger)?)
            } else {
                let m = args.exploration_matches.ok_or_else(|| missing("exploration-matches"))?;
                Box::new(DetEtcPolicy::with_ledger(m, ledger))
            }
        }
        RunPolicy::All => Box::new(FixedPolicy::new(true)),
        RunPolicy::None => Box::new(FixedPolicy::new(false)),
    })
}

pub struct RunOutput {
    /// Present once the episode covered every day.
    pub row: Option<MetricsRow>,
    pub log: EpisodeLog,
    pub checkpoints: Vec<PathBuf>,
}

pub fn cmd_run(args: &RunArgs) -> CliResult<RunOutput> {
    let (mut source, days, seed, sigma_u, config_hash, synthetic) = match &args.stream {
        Some(path) => {
            let file = read_observations(open(path)?).map_err(at(path))?;
            if !file.labeled {
                return Err(config_err(format!(
                    "{} has no toxic column; detection rates need labels",
                    path.display()
                )));
            }
            // Seed and sigma_u come from a sibling manifest when there is one.
            let manifest = path
                .parent()
                .map(|p| p.join("manifest.txt"))
                .filter(|p| p.exists())
                .map(|p| read_manifest(open(&p)?).map_err(at(&p)))
                .transpose()?
                .unwrap_or_default();
            let days = args.generator.days.unwrap_or(file.batches.len() as u32);
            if days as usize > file.batches.len() {
                return Err(CliError::Core(Error::Stream(format!(
                    "{} covers {} days, run needs {days}",
                    path.display(),
                    file.batches.len()
                ))));
            }
            let seed = manifest.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
            let sigma_u = manifest.get("sigma_u").and_then(|s| s.parse().ok());
            let hash = manifest.get("config_hash").cloned().unwrap_or_else(|| "NA".into());
            (Source::Loaded(file.batches), days, seed, sigma_u, hash, false)
        }
        None => {
            let cfg = args.generator.load()?;
            let (days, seed, sigma_u, hash) = (cfg.days, cfg.seed, cfg.sigma_u, cfg.config_hash());
            let stream = SyntheticStream::new(cfg)?;
            (Source::Generated(Box::new(stream)), days, seed, Some(sigma_u), hash, true)
        }
    };
    let stats = match (args.feature_stats, synthetic) {
        (StatsSource::Table, _) | (StatsSource::Auto, true) => Some(FeatureStats::table_defaults()),
        (StatsSource::FirstDay, _) | (StatsSource::Auto, false) => None,
    };
    let mut policy = build_policy(args, stats)?;
    let options = RunOptions {
        policy_seed: args.policy_seed,
        parallelism: Parallelism::workers(args.workers)?,
    };
    let log = match &args.resume {
        Some(dir) => {
            let path = dir.join("episode.csv");
            read_episode_log(open(&path)?).map_err(at(&path))?
        }
        None => EpisodeLog::default(),
    };
    let out = &args.out.out_dir;
    let cp_root = out.join("checkpoints");
    ensure_dir(&cp_root)?;
    let mut episode = Episode::resume(policy.as_mut(), options, log)?;
    let stop = args.stop_after.unwrap_or(days).min(days);
    let mut checkpoints = Vec::new();
    while episode.next_day() < stop {
        let day = episode.next_day();
        let batch = source.next_batch(day)?;
        episode.step(&batch)?;
        let dir = cp_root.join(format!("day-{day:04}"));
        ensure_dir(&dir)?;
        save(&dir.join(state_file(args.policy)), |w| episode.policy().write_checkpoint(w))?;
        save(&dir.join("episode.csv"), |w| write_episode_log(w, episode.log()))?;
        checkpoints.push(dir);
    }
    let log = episode.finish();
    let complete = log.days.len() as u32 == days;
    let row = complete.then(|| MetricsRow {
        policy: policy.name().to_string(),
        param: policy.param(),
        target_share: None,
        realized_share: log.share_monitored(),
        detection_rate: detection_rate(&log),
        seed,
        sigma_u,
    });

    save(&out.join("episode.csv"), |w| write_episode_log(w, &log))?;
    if let Some(row) = &row {
        save(&out.join("results.csv"), |w| write_results(w, std::slice::from_ref(row)))?;
        save(&out.join(state_file(args.policy)), |w| policy.write_checkpoint(w))?;
    }
    let mut m = BTreeMap::new();
    manifest_entry(&mut m, "policy", policy.name());
    manifest_entry(&mut m, "param", format!("{:?}", policy.param()));
    manifest_entry(&mut m, "config_hash", config_hash);
    manifest_entry(&mut m, "seed", seed);
    manifest_entry(&mut m, "policy_seed", args.policy_seed);
    manifest_entry(&mut m, "days", days);
    manifest_entry(&mut m, "days_completed", log.days.len());
    if args.policy == RunPolicy::Linucb {
        manifest_entry(&mut m, "delta", format!("{:?}", args.delta));
    }
    save(&out.join("manifest.txt"), |w| write_manifest(w, &m))?;
    if let Some(row) = &row {
        log::info!(
            "{}: share {:.6}, detection {}",
            row.policy,
            row.realized_share,
            row.detection_rate.map_or("NA".into(), |d| format!("{d:.6}"))
        );
    } else {
        log::info!("stopped after {} of {days} days", log.days.len());
    }
    Ok(RunOutput { row, log, checkpoints })
}

fn parse_policies(list: &str) -> CliResult<Vec<PolicyKind>> {
    let kinds = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<toxwatch::Result<Vec<PolicyKind>>>()?;
    if kinds.is_empty() {
        return Err(config_err("empty policy list"));
    }
    Ok(kinds)
}

pub struct SweepOutput {
    pub rows: Vec<MetricsRow>,
    pub improvement: Vec<ImprovementRow>,
    pub results: PathBuf,
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<SweepOutput> {
    let policies = parse_policies(&args.policies)?;
    let cfg = args.generator.load()?;
    let spec = SweepSpec {
        targets: args.targets.clone(),
        exploration_factor: args.delta,
        feature_stats: match args.feature_stats {
            StatsSource::FirstDay => None,
            StatsSource::Auto | StatsSource::Table => Some(FeatureStats::table_defaults()),
        },
        seeds: args.seeds.clone(),
        calibration_seed: args.calibration_seed,
        tolerance: args.tolerance,
    };
    spec.validate()?;
    let out = &args.out.out_dir;
    ensure_dir(out)?;
    let factory = SyntheticFactory { config: cfg.clone() };
    let rows = sweep(&spec, &policies, &factory, &Parallelism::workers(args.workers)?)?;

    let results = out.join("results.csv");
    save(&results, |w| write_results(w, &rows))?;
    let improvement = write_tables(&rows, out)?;

    let mut m = BTreeMap::new();
    let join = |v: &[String]| v.join(",");
    manifest_entry(&mut m, "config_hash", cfg.config_hash());
    manifest_entry(&mut m, "beta0", format!("{:?}", cfg.beta0));
    manifest_entry(&mut m, "sigma_u", format!("{:?}", cfg.sigma_u));
    manifest_entry(&mut m, "policies", join(&policies.iter().map(|p| p.name().to_string()).collect::<Vec<_>>()));
    manifest_entry(&mut m, "targets", join(&spec.targets.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>()));
    manifest_entry(&mut m, "seeds", join(&spec.seeds.iter().map(u64::to_string).collect::<Vec<_>>()));
    manifest_entry(&mut m, "calibration_seed", spec.calibration_seed);
    manifest_entry(&mut m, "delta", format!("{:?}", spec.exploration_factor));
    manifest_entry(&mut m, "tolerance", format!("{:?}", spec.tolerance));
    for r in rows.iter().filter(|r| r.seed == spec.seeds[0]) {
        let target = r.target_share.unwrap_or(f64::NAN);
        manifest_entry(&mut m, &format!("param.{}.{target:?}", r.policy), format!("{:?}", r.param));
    }
    save(&out.join("manifest.txt"), |w| write_manifest(w, &m))?;
    Ok(SweepOutput {
        rows,
        improvement,
        results,
    })
}

/// Writes `curve.csv` and `improvement.csv` and prints the improvement table.
fn write_tables(rows: &[MetricsRow], out: &Path) -> CliResult<Vec<ImprovementRow>> {
    let points = aggregate(rows);
    save(&out.join("curve.csv"), |w| write_curve(w, &points))?;
    let table = improvement_table(&points);
    save(&out.join("improvement.csv"), |w| write_improvement(w, &table))?;
    if !table.is_empty() {
        println!("{}", format_improvement(&table));
    }
    Ok(table)
}

pub fn format_improvement(table: &[ImprovementRow]) -> String {
    let mut s = String::from("share   linucb  prob_etc      pp       %   | published pp       %\n");
    for r in table {
        let pct = r.pct.map_or("NA".to_string(), |p| format!("{p:.2}"));
        let reference = match r.reference {
            Some((etc, lin)) => {
                let (pp, pct) = toxwatch::harness::improvement(lin, etc);
                format!("{pp:>12.2} {:>7.2}", pct.unwrap_or(f64::NAN))
            }
            None => format!("{:>12} {:>7}", "NA", "NA"),
        };
        s.push_str(&format!(
            "{:<6.2} {:>7.4} {:>9.4} {:>7.2} {:>7} | {reference}\n",
            r.target_share, r.linucb, r.prob_etc, r.pp, pct
        ));
    }
    s
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<Vec<ImprovementRow>> {
    let rows = read_results(open(&args.results)?).map_err(at(&args.results))?;
    let out = &args.out.out_dir;
    ensure_dir(out)?;
    write_tables(&rows, out)
}
