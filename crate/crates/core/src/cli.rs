//! Command-line front end. `main.rs` only forwards to [`main`].

use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::classifier::{
    activity_report, evaluate, evaluate_split, fit, sample_size_sweep, sweep_to_tsv, Classifier, FitConfig, Preset,
};
use crate::dataset::{read_dataset, update_manifest_splits, write_dataset, Split};
use crate::defense::{detect_reader, detections_to_tsv, run_noise_injector, DetectorConfig, NoiseConfig};
use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::sampler::{parse_campaign_file, run_campaign, Sampler, ShellWorkload, SysfsSource, SystemClock};
use crate::synth::{default_template_bank, generate, read_template_file, write_template_file, SynthConfig};
use crate::trace::{read_trace_file, ActivityConfig, DEFAULT_ACTIVITY_THRESHOLD_KHZ};
use crate::util;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Workload fingerprinting from per-core CPU frequency traces.
///
/// Set FREQPRINT_LOG (error, warn, info, debug) for progress on standard error.
#[derive(Debug, Parser)]
#[command(name = "freqprint", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a measurement campaign described by a campaign file.
    Collect(CollectArgs),
    /// Generate a synthetic labelled dataset.
    Synth(SynthArgs),
    /// Split (if needed), train a preset network and save the model.
    Train(TrainArgs),
    /// Evaluate a saved model on a dataset split.
    Eval(EvalArgs),
    /// Retrain and evaluate at several input lengths.
    Sweep(SweepArgs),
    /// Rank the classes for a single trace.
    Predict(PredictArgs),
    /// Per-class misprediction rate versus frequency activity.
    ReportActivity(ActivityArgs),
    /// Run the floating-point noise injector on one core.
    NoiseInject(NoiseArgs),
    /// Flag processes polling cpufreq attributes from a syscall event stream.
    Detect(DetectArgs),
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Campaign file (key=value settings and target=label|launch|kill lines).
    #[arg(long)]
    pub campaign: PathBuf,
    /// Output directory; an existing manifest there is resumed.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of classes for the built-in template bank.
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Traces per class.
    #[arg(long, default_value_t = 50)]
    pub traces: usize,
    /// Samples per trace.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    /// Seed for templates and traces.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Concurrent disturber workloads overlaid on every trace.
    #[arg(long, default_value_t = 0)]
    pub disturbers: usize,
    /// Peak frequency added by each disturber, in kHz.
    #[arg(long, default_value_t = 1_000_000)]
    pub disturbance_khz: u64,
    /// Read templates from this file instead of the built-in bank.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Also write the templates used to this file.
    #[arg(long)]
    pub save_templates: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Native,
    Sandbox,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Preset {
        match p {
            PresetArg::Native => Preset::Native,
            PresetArg::Sandbox => Preset::Sandbox,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Network architecture.
    #[arg(long, value_enum, default_value_t = PresetArg::Native)]
    pub preset: PresetArg,
    /// Seed for the split, weight initialisation, shuffling and dropout.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input length; defaults to the shortest trace.
    #[arg(long)]
    pub length: Option<usize>,
    /// Gaussian smoothing window applied before normalisation.
    #[arg(long)]
    pub smooth: Option<usize>,
    /// Moving-maximum window applied after smoothing.
    #[arg(long)]
    pub movmax: Option<usize>,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Mini-batch size.
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Maximum epochs.
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Epochs without a validation accuracy gain before stopping.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
}

impl FitArgs {
    fn config(&self) -> FitConfig {
        let mut cfg = FitConfig::new(self.preset.into(), self.seed);
        cfg.input_length = self.length;
        cfg.smooth_window = self.smooth;
        cfg.movmax_window = self.movmax;
        cfg.train = TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            early_stop_patience: self.patience,
            ..cfg.train
        };
        cfg
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Where to write the model.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Saved model.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Which items to evaluate; unsplit datasets are always evaluated whole.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Activity threshold in kHz for the per-class table.
    #[arg(long, default_value_t = DEFAULT_ACTIVITY_THRESHOLD_KHZ)]
    pub threshold_khz: u64,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset directory or manifest (must already be split).
    #[arg(long)]
    pub data: PathBuf,
    /// Comma separated input lengths.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Saved model.
    #[arg(long)]
    pub model: PathBuf,
    /// Trace file to classify.
    #[arg(long)]
    pub trace: PathBuf,
    /// Number of ranked labels to print.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct ActivityArgs {
    /// Saved model.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Samples above this frequency (kHz) count as active.
    #[arg(long, default_value_t = DEFAULT_ACTIVITY_THRESHOLD_KHZ)]
    pub threshold_khz: u64,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Core to pin the injector to.
    #[arg(long)]
    pub core: u32,
    /// Kernel repetitions per burst as lo,hi.
    #[arg(long, value_parser = parse_range, default_value = "1,50")]
    pub n_repeat: (u64, u64),
    /// Idle time after each burst in ms as lo,hi.
    #[arg(long, value_parser = parse_range, default_value = "10,500")]
    pub t_sleep_ms: (u64, u64),
    /// Floating-point iterations per kernel repetition.
    #[arg(long, default_value_t = crate::defense::DEFAULT_KERNEL_ITERATIONS)]
    pub kernel_iterations: u64,
    /// How long to run, in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration_s: f64,
    /// Seed for the burst schedule.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the burst log here instead of standard output.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// `default` or a detector config file.
    #[arg(long, default_value = "default")]
    pub config: String,
    /// Event stream file; standard input when absent.
    #[arg(long)]
    pub events: Option<PathBuf>,
}

fn parse_range(s: &str) -> std::result::Result<(u64, u64), String> {
    let (lo, hi) = util::parse_pair::<u64>(s).ok_or_else(|| format!("expected lo,hi, got {s:?}"))?;
    if lo > hi {
        return Err(format!("range {lo},{hi} has lo > hi"));
    }
    Ok((lo, hi))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Reports go to `out`, diagnostics to standard error.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if code == EXIT_OK {
                let _ = write!(out, "{e}");
            } else {
                let _ = e.print();
            }
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("freqprint: error: {}", e.to_string().replace('\n', " "));
            EXIT_FAILURE
        }
    }
}

pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("FREQPRINT_LOG", "warn")).try_init();
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    run(std::env::args_os(), &mut lock)
}

fn emit(out: &mut dyn Write, text: &str, file: Option<&Path>) -> Result<()> {
    if let Some(p) = file {
        util::write_atomic(p, text.as_bytes())?;
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Collect(a) => {
            let file = parse_campaign_file(&util::read_to_string(&a.campaign)?)?;
            let sampler = Sampler::new(
                file.sampler,
                Arc::new(SysfsSource::default()),
                Arc::new(SystemClock::default()),
            )?;
            let outcome = run_campaign(&sampler, &file.spec, &a.out, &mut ShellWorkload::default())?;
            emit(
                out,
                &format!(
                    "manifest={}\ncollected={}\nskipped={}\nfailed={}\n",
                    outcome.manifest.display(),
                    outcome.collected,
                    outcome.skipped,
                    outcome.failures.len()
                ),
                None,
            )
        }
        Command::Synth(a) => {
            let templates = match &a.templates {
                Some(p) => read_template_file(p)?,
                None => default_template_bank(a.classes, a.samples, a.seed)?,
            };
            if let Some(p) = &a.save_templates {
                write_template_file(&templates, p)?;
            }
            let mut cfg = SynthConfig::new(templates, a.samples, a.traces, a.seed);
            cfg.concurrent_disturbers = a.disturbers;
            cfg.disturbance_strength_khz = a.disturbance_khz;
            let ds = generate(&cfg)?;
            let manifest = write_dataset(&ds, &a.out)?;
            emit(out, &format!("manifest={}\ntraces={}\n", manifest.display(), ds.len()), None)
        }
        Command::Train(a) => {
            let mut ds = read_dataset(&a.data)?;
            if !ds.is_split() {
                ds = ds.split(a.fit.seed)?;
                update_manifest_splits(&a.data, &ds)?;
            }
            let fitted = fit(&ds, &a.fit.config())?;
            fitted.classifier.save(&a.out)?;
            emit(
                out,
                &format!(
                    "model={}\nepochs={}\nbest_epoch={}\ntrain_accuracy={}\n",
                    a.out.display(),
                    fitted.history.len(),
                    fitted.best_epoch,
                    fitted.train_accuracy
                ),
                None,
            )
        }
        Command::Eval(a) => {
            let clf = Classifier::load(&a.model)?;
            let ds = read_dataset(&a.data)?;
            let activity = ActivityConfig::new(a.threshold_khz)?;
            let split = match a.split {
                SplitArg::Train => Some(Split::Train),
                SplitArg::Validation => Some(Split::Validation),
                SplitArg::Test => Some(Split::Test),
                SplitArg::All => None,
            };
            let report = match split {
                Some(s) if ds.is_split() => {
                    crate::classifier::evaluate_with(&clf, ds.subset(s), &activity)?
                }
                _ => crate::classifier::evaluate_with(&clf, ds.items().iter(), &activity)?,
            };
            emit(out, &report.to_tsv(), a.out.as_deref())
        }
        Command::Sweep(a) => {
            let ds = read_dataset(&a.data)?;
            let points = sample_size_sweep(&ds, &a.sizes, &a.fit.config())?;
            emit(out, &sweep_to_tsv(&points), a.out.as_deref())
        }
        Command::Predict(a) => {
            let clf = Classifier::load(&a.model)?;
            let trace = read_trace_file(&a.trace)?;
            let mut text = String::new();
            for (label, p) in clf.predict(&trace)?.into_iter().take(a.top) {
                text.push_str(&format!("{label}\t{p}\n"));
            }
            emit(out, &text, None)
        }
        Command::ReportActivity(a) => {
            let clf = Classifier::load(&a.model)?;
            let ds = read_dataset(&a.data)?;
            let cfg = ActivityConfig::new(a.threshold_khz)?;
            let report = if ds.is_split() {
                evaluate_split(&clf, &ds, Split::Test)?
            } else {
                evaluate(&clf, ds.items().iter())?
            };
            emit(out, &activity_report(&report, &ds, &cfg).to_tsv(), a.out.as_deref())
        }
        Command::NoiseInject(a) => {
            let mut cfg = NoiseConfig::new(a.core, a.n_repeat, a.t_sleep_ms, a.duration_s);
            cfg.kernel_iterations = a.kernel_iterations;
            let stop = AtomicBool::new(false);
            let log = run_noise_injector(&cfg, a.seed, &stop)?;
            match &a.log {
                Some(p) => util::write_atomic(p, log.to_string().as_bytes()),
                None => emit(out, &log.to_string(), None),
            }
        }
        Command::Detect(a) => {
            let cfg = match a.config.as_str() {
                "default" => DetectorConfig::default(),
                path => DetectorConfig::load(Path::new(path))?,
            };
            let dets = match &a.events {
                Some(p) => {
                    let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
                    detect_reader(BufReader::new(f), &cfg)?
                }
                None => detect_reader(io::stdin().lock(), &cfg)?,
            };
            emit(out, &detections_to_tsv(&dets), None)
        }
    }
}
