use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use tcmn_core::data::{self, NormStats, Trajectory, WindowBatch};
use tcmn_core::eval::{self, EvalConfig, EvalReport, RulModel, ScoreVariant, SelectChannels};
use tcmn_core::nn::{build_tcmn, Network, Rng};
use tcmn_core::optim::{self, EpochRecord, Precision, TrainState};
use tcmn_core::Real;

use crate::checkpoint::Checkpoint;
use crate::config::{parse_channel_list, RunConfig};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "tcmn",
    version,
    about = "Remaining-useful-life estimation with a temporal convolutional memory network"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write checkpoints plus a per-epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on a test set and write summary and CSV reports.
    Evaluate(EvaluateArgs),
    /// Verify every backward pass against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic train/test/truth file set.
    Synth(SynthArgs),
    /// Print augmentation cardinalities and knee/truncation points per engine.
    AugmentStats(AugmentStatsArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Training trajectories (26 whitespace-separated columns).
    #[arg(long = "data")]
    pub train: Option<PathBuf>,
    /// Test trajectories.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// One true final RUL per test engine.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Synthetic training engines when no data file is given.
    #[arg(long)]
    pub engines: Option<usize>,
    #[arg(long)]
    pub synth_seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub lambda: Option<usize>,
    /// Train on the original trajectories only.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<Real>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub r_max: Option<Real>,
    /// Comma-separated feature columns to feed the network.
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long)]
    pub clip_norm: Option<Real>,
    #[arg(long)]
    pub validation_fraction: Option<Real>,
    /// f64 or f32.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Name written into the summary line.
    #[arg(long)]
    pub dataset: Option<String>,
    /// phm08 or as_printed.
    #[arg(long)]
    pub score: Option<String>,
    /// Comma-separated engine ids whose full estimate curves are written.
    #[arg(long)]
    pub curves: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// A registered check name, or "all".
    #[arg(default_value = "all")]
    pub scope: String,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: Real,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Flip the sign of the named layer's backward pass.
    #[arg(long, hide = true)]
    pub inject_fault: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub test_engines: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub regimes: usize,
    #[arg(long, default_value_t = 1.0)]
    pub severity: Real,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct AugmentStatsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub lambda: Option<usize>,
    #[arg(long)]
    pub r_max: Option<Real>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Seed offset separating the synthetic test fleet from the training fleet.
const TEST_SEED_OFFSET: u64 = 0x7E57;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), CliError> {
    eval::write_atomic(path, body).map_err(io_err(path))
}

fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, CliError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    data::parse_cmapss(std::io::BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn base_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn apply_data_args(cfg: &mut RunConfig, args: &DataArgs) {
    if let Some(p) = &args.train {
        cfg.data.train = Some(p.clone());
    }
    if let Some(p) = &args.test {
        cfg.data.test = Some(p.clone());
    }
    if let Some(p) = &args.truth {
        cfg.data.truth = Some(p.clone());
    }
    if let Some(n) = args.engines {
        cfg.synthetic.engines = n;
    }
    if let Some(s) = args.synth_seed {
        cfg.synthetic.seed = s;
    }
}

fn parse_precision(s: &str) -> Result<Precision, CliError> {
    match s {
        "f64" => Ok(Precision::F64),
        "f32" => Ok(Precision::F32),
        other => Err(CliError::Usage(format!(
            "--precision expects f64 or f32, got '{other}'"
        ))),
    }
}

fn parse_score(s: &str) -> Result<ScoreVariant, CliError> {
    match s {
        "phm08" => Ok(ScoreVariant::Phm08),
        "as_printed" => Ok(ScoreVariant::AsPrinted),
        other => Err(CliError::Usage(format!(
            "--score expects phm08 or as_printed, got '{other}'"
        ))),
    }
}

fn parse_id_list(s: &str) -> Result<Vec<u32>, CliError> {
    s.split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("'{v}' is not an engine id")))
        })
        .collect()
}

/// Training fleet from the configured file, or the synthetic generator.
pub fn load_training_fleet(cfg: &RunConfig) -> Result<(Vec<Trajectory>, String), CliError> {
    match &cfg.data.train {
        Some(path) => {
            let trajs = read_trajectories(path)?;
            if trajs.is_empty() {
                return Err(CliError::Data(format!(
                    "{}: no trajectories",
                    path.display()
                )));
            }
            let name = cfg.data.name.clone().unwrap_or_else(|| stem(path));
            Ok((trajs, name))
        }
        None => {
            let s = &cfg.synthetic;
            let trajs = data::synth_trajectories(s.engines, s.seed, s.regimes, s.severity)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok((
                trajs,
                cfg.data.name.clone().unwrap_or_else(|| "synthetic".into()),
            ))
        }
    }
}

/// Test fleet with ground truth attached.
pub fn load_test_fleet(cfg: &RunConfig) -> Result<(Vec<Trajectory>, String), CliError> {
    match (&cfg.data.test, &cfg.data.truth) {
        (Some(test), Some(truth)) => {
            let trajs = read_trajectories(test)?;
            let file = std::fs::File::open(truth).map_err(io_err(truth))?;
            let trajs = data::parse_rul_truth(std::io::BufReader::new(file), trajs)
                .map_err(|e| CliError::Data(format!("{}: {e}", truth.display())))?;
            let name = cfg.data.name.clone().unwrap_or_else(|| stem(test));
            Ok((trajs, name))
        }
        (Some(_), None) => Err(CliError::Usage(
            "a test file needs a truth file (--truth or [data] truth)".into(),
        )),
        (None, Some(_)) => Err(CliError::Usage(
            "a truth file was given without a test file (--test or [data] test)".into(),
        )),
        (None, None) => {
            let s = &cfg.synthetic;
            let trajs = data::synth_test_set(
                s.test_engines,
                s.seed.wrapping_add(TEST_SEED_OFFSET),
                s.regimes,
                s.severity,
            )
            .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok((
                trajs,
                cfg.data.name.clone().unwrap_or_else(|| "synthetic".into()),
            ))
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn select(batch: WindowBatch, channels: &[usize]) -> WindowBatch {
    if channels.is_empty() {
        batch
    } else {
        batch.select_channels(channels)
    }
}

fn prune_checkpoints(dir: &Path, keep: usize) -> Result<(), CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("epoch-") && n.ends_with(".tcmn"))
        })
        .collect();
    files.sort();
    let excess = files.len().saturating_sub(keep);
    for old in &files[..excess] {
        std::fs::remove_file(old).map_err(io_err(old))?;
    }
    Ok(())
}

pub fn cmd_train(
    cfg_path: Option<&Path>,
    args: &TrainArgs,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut cfg = base_config(cfg_path)?;
    apply_data_args(&mut cfg, &args.data);
    let t = &mut cfg.train;
    if let Some(v) = args.lambda {
        t.lambda = v;
    }
    if args.no_augment {
        t.augment = false;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.max_steps {
        t.max_steps = Some(v);
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.lr {
        t.learning_rate = v;
    }
    if let Some(v) = args.stride {
        t.stride = v;
    }
    if let Some(v) = args.r_max {
        t.r_max = v;
    }
    if let Some(v) = args.clip_norm {
        t.clip_norm = Some(v);
    }
    if let Some(v) = args.validation_fraction {
        t.validation_fraction = v;
    }
    if let Some(v) = &args.precision {
        t.precision = parse_precision(v)?;
    }
    if let Some(v) = args.seq_len {
        cfg.model.seq_len = v;
    }
    if let Some(v) = &args.channels {
        cfg.model.channels = parse_channel_list(v)?;
    }
    if let Some(v) = &args.out {
        cfg.output.dir = v.clone();
    }
    cfg.validate()?;

    let spec = cfg.model.network_spec();
    let resumed = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let net = {
                let mut net = build_tcmn(&spec, cfg.train.seed)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                ckpt.load_into(&mut net)?;
                net
            };
            let stats = ckpt.norm.clone().ok_or_else(|| {
                CliError::Data("checkpoint carries no normalization statistics".into())
            })?;
            Some((net, ckpt.train_state()?, stats))
        }
        None => None,
    };
    let (fleet, name) = load_training_fleet(&cfg)?;
    let dir = cfg.output.dir.clone();
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;

    let mut split_rng = Rng::seed_from_u64(cfg.train.seed);
    split_rng.set_stream(3);
    let (train_set, val_set) =
        data::split_engines(&fleet, cfg.train.validation_fraction, &mut split_rng);
    if train_set.is_empty() {
        return Err(CliError::Usage(
            "validation split leaves no training engines".into(),
        ));
    }
    let (mut net, mut state, stats) = match resumed {
        Some(r) => r,
        None => {
            let stats =
                data::fit_norm_stats(&train_set).map_err(|e| CliError::Data(e.to_string()))?;
            let net =
                build_tcmn(&spec, cfg.train.seed).map_err(|e| CliError::Usage(e.to_string()))?;
            (net, TrainState::new(cfg.train.seed), stats)
        }
    };
    let channels = cfg.model.channels.clone();
    let windows = select(
        optim::build_dataset(&train_set, &stats, cfg.model.seq_len, &cfg.train)?,
        &channels,
    );
    let validation = if val_set.is_empty() {
        None
    } else {
        let mut v = WindowBatch::empty(cfg.model.seq_len, data::NUM_FEATURES);
        for t in &val_set {
            let t = data::apply_norm(t, &stats);
            let r = data::make_rul_targets(&t, cfg.train.r_max);
            v.extend(
                &data::make_windows(&t, &r, cfg.model.seq_len, cfg.train.stride)
                    .map_err(|e| CliError::Data(e.to_string()))?,
            );
        }
        Some(select(v, &channels))
    };
    writeln!(
        out,
        "train dataset={name} engines={} windows={} parameters={}",
        train_set.len(),
        windows.len(),
        net.parameter_count()
    )
    .map_err(io_err(Path::new("<stdout>")))?;

    let snapshot = cfg.snapshot();
    let keep = cfg.output.keep_checkpoints;
    let mut hook = |record: &EpochRecord, net: &Network, state: &TrainState| -> optim::Result<()> {
        let path = ckpt_dir.join(format!("epoch-{:04}.tcmn", record.epoch));
        let ckpt = Checkpoint::capture(net, state, &snapshot, Some(&stats));
        ckpt.save(&path)
            .map_err(|e| optim::OptimError::Hook(Box::new(e)))?;
        prune_checkpoints(&ckpt_dir, keep).map_err(|e| optim::OptimError::Hook(Box::new(e)))?;
        Ok(())
    };
    let log = optim::train(
        &mut net,
        &windows,
        validation.as_ref(),
        &cfg.train,
        &mut state,
        &mut hook,
    )?;
    let model_path = dir.join("model.tcmn");
    Checkpoint::capture(&net, &state, &snapshot, Some(&stats)).save(&model_path)?;
    write_file(&dir.join("train_log.csv"), log.to_csv().as_bytes())?;
    let last = log
        .records
        .last()
        .map_or(String::from("none"), |r| r.loss.to_string());
    writeln!(
        out,
        "trained epochs={} steps={} final_loss={last} checkpoint={}",
        state.epochs_done,
        state.adam.step,
        model_path.display()
    )
    .map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

/// Evaluates any model on the configured test fleet and writes the reports.
pub fn evaluate_and_emit(
    model: &dyn RulModel,
    test: &[Trajectory],
    stats: &NormStats,
    config: &EvalConfig,
    dir: &Path,
) -> Result<EvalReport, CliError> {
    let report = eval::evaluate(model, test, stats, config)?;
    eval::emit_report(&report, dir)?;
    Ok(report)
}

pub fn cmd_evaluate(
    cfg_path: Option<&Path>,
    args: &EvaluateArgs,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut cfg = base_config(cfg_path)?;
    apply_data_args(&mut cfg, &args.data);
    if let Some(v) = &args.dataset {
        cfg.data.name = Some(v.clone());
    }
    if let Some(v) = &args.score {
        cfg.eval.score = parse_score(v)?;
    }
    if let Some(v) = &args.curves {
        cfg.eval.curve_engines = parse_id_list(v)?;
    }
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.output.dir.join("eval"));
    cfg.validate()?;

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let net = ckpt.network()?;
    let stats = ckpt
        .norm
        .clone()
        .ok_or_else(|| CliError::Data("checkpoint carries no normalization statistics".into()))?;
    let channels = parse_channel_list(ckpt.config_value("channels").unwrap_or(""))?;
    let (test, name) = load_test_fleet(&cfg)?;
    let config = EvalConfig {
        dataset: name,
        variant: cfg.eval.score,
        curve_engines: cfg.eval.curve_engines.clone(),
    };
    let report = if channels.is_empty() {
        evaluate_and_emit(&net, &test, &stats, &config, &dir)?
    } else {
        let model = SelectChannels {
            inner: &net,
            channels: &channels,
        };
        evaluate_and_emit(&model, &test, &stats, &config, &dir)?
    };
    writeln!(out, "{}", report.summary_line()).map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let reports = optim::run_checks(&args.scope, args.tolerance, args.seed, &args.inject_fault)?;
    let mut text = String::new();
    for r in &reports {
        let _ = write!(text, "{r}");
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.target.as_str())
        .collect();
    let _ = writeln!(
        text,
        "gradcheck: {} of {} checks passed",
        reports.len() - failed.len(),
        reports.len()
    );
    out.write_all(text.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    let test_n = args.test_engines.unwrap_or(args.n);
    let train = data::synth_trajectories(args.n, args.seed, args.regimes, args.severity)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let test = data::synth_test_set(
        test_n,
        args.seed.wrapping_add(TEST_SEED_OFFSET),
        args.regimes,
        args.severity,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let files = [
        ("train.txt", data::write_cmapss(&train)),
        ("test.txt", data::write_cmapss(&test)),
        ("truth.txt", data::write_rul_truth(&test)),
    ];
    for (name, body) in &files {
        write_file(&args.out.join(name), body.as_bytes())?;
    }
    writeln!(
        out,
        "synth train_engines={} test_engines={} dir={}",
        train.len(),
        test.len(),
        args.out.display()
    )
    .map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

pub fn cmd_augment_stats(
    cfg_path: Option<&Path>,
    args: &AugmentStatsArgs,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut cfg = base_config(cfg_path)?;
    apply_data_args(&mut cfg, &args.data);
    if let Some(v) = args.lambda {
        cfg.train.lambda = v;
    }
    if let Some(v) = args.r_max {
        cfg.train.r_max = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    cfg.validate()?;
    let (fleet, name) = load_training_fleet(&cfg)?;
    let targets: Vec<_> = fleet
        .iter()
        .map(|t| data::make_rul_targets(t, cfg.train.r_max))
        .collect();
    let mut rng = Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(2);
    let lambda = cfg.train.lambda;
    let (aug, _) = data::augment(&fleet, &targets, lambda, &mut rng)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let n = fleet.len();
    let mut text = format!(
        "dataset={name} lambda={lambda} r_max={} originals={n} total={} expected={}\n",
        cfg.train.r_max,
        aug.len(),
        (lambda + 1) * n
    );
    for (i, (t, r)) in fleet.iter().zip(&targets).enumerate() {
        let cuts: Vec<String> = aug[n + i * lambda..n + (i + 1) * lambda]
            .iter()
            .map(|p| p.len().to_string())
            .collect();
        let knee = r.knee().map_or("none".to_string(), |k| k.to_string());
        let _ = writeln!(
            text,
            "engine={} length={} knee={knee} cuts={}",
            t.engine_id,
            t.len(),
            cuts.join(",")
        );
    }
    out.write_all(text.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = cli.config.as_deref();
    match &cli.command {
        Command::Train(a) => cmd_train(cfg, a, out),
        Command::Evaluate(a) => cmd_evaluate(cfg, a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::AugmentStats(a) => cmd_augment_stats(cfg, a, out),
    }
}
