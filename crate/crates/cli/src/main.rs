use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use intent_core::dataset::{AnnotationSource, SplitMode, WindowSpec};
use intent_core::learn::{ReducerConfig, VariantConfig};
use intent_core::phase::PhaseMode;
use intent_core::pipeline::{self, PipelineConfig, EXIT_USAGE};
use intent_core::simgen::RoleMix;
use intent_core::{Error, FeatureSet, Participant, Result};

/// Movement-intent recognition for two people carrying an object together.
#[derive(Parser)]
#[command(name = "dyad-intent", version)]
struct Cli {
    /// JSON pipeline config; flags override its values.
    #[arg(long, global = true, env = "DYAD_INTENT_CONFIG")]
    config: Option<PathBuf>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic trials with ground-truth sidecars.
    Simulate(SimulateArgs),
    /// Detect each participant's action phase; export phases and power channels.
    DetectPhase(DetectArgs),
    /// Annotate, split and sample trials into a window corpus.
    BuildDataset(DatasetArgs),
    /// Train a classifier on a corpus.
    Train(TrainArgs),
    /// Random hyperparameter search with grouped cross-validation.
    Search(SearchArgs),
    /// Window- and signal-level evaluation of a model.
    Evaluate(EvaluateArgs),
    /// Replay a trial sample by sample: time, raw label, filtered label.
    Stream(StreamArgs),
    /// Print the effective pipeline config as JSON.
    Config,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of trials.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Role-pair weights, e.g. `hard-follower=0.4,hard-soft=0.4,hard-hard=0.2`.
    #[arg(long)]
    mix: Option<String>,
    #[arg(long)]
    trials_per_dyad: Option<usize>,
    /// Multiplies every noise amplitude.
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Output directory.
    #[arg(long, env = "DYAD_INTENT_TRIALS")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnnotationArg {
    Truth,
    Rule,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Dyad,
    Interaction,
}

#[derive(Args)]
struct PhaseArgs {
    /// Pool both participants' power channels when detecting phases.
    #[arg(long)]
    joint: bool,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long, env = "DYAD_INTENT_TRIALS")]
    trials: PathBuf,
    /// Phase table (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Also write `<trial>.power.csv` files here.
    #[arg(long)]
    power_dir: Option<PathBuf>,
    #[command(flatten)]
    phase: PhaseArgs,
}

#[derive(Args)]
struct WindowArgs {
    /// Window length in samples.
    #[arg(long)]
    window: Option<usize>,
    /// Feature set: 1 (all signals), 2 (scalar), 3 (own scalar).
    #[arg(long)]
    set: Option<u8>,
}

impl WindowArgs {
    fn apply(&self, spec: &mut WindowSpec) -> Result<()> {
        if let Some(l) = self.window {
            spec.length = l;
        }
        if let Some(s) = self.set {
            spec.feature_set =
                FeatureSet::from_number(s).ok_or_else(|| Error::InvalidParameter(format!("feature set must be 1, 2 or 3, got {s}")))?;
        }
        Ok(())
    }

    fn given(&self) -> bool {
        self.window.is_some() || self.set.is_some()
    }
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long, env = "DYAD_INTENT_TRIALS")]
    trials: PathBuf,
    /// Corpus file; a `.bin` extension selects the binary form.
    #[arg(long, env = "DYAD_INTENT_CORPUS")]
    out: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    /// Uniform windows per region.
    #[arg(long)]
    uniform: Option<usize>,
    /// Transition-skewed windows per region.
    #[arg(long)]
    skewed: Option<usize>,
    /// Scale (s) of the skewed offsets.
    #[arg(long)]
    sigma: Option<f64>,
    /// Sampling and split seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Goal labels from truth sidecars or from the re-annotation rule.
    #[arg(long, value_enum)]
    annotation: Option<AnnotationArg>,
    #[command(flatten)]
    phase: PhaseArgs,
}

#[derive(Args)]
struct ModelArgs {
    /// svm, adaboost, forest or mlp.
    #[arg(long)]
    variant: Option<String>,
    /// none, pca:D or lda:D.
    #[arg(long)]
    reducer: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, env = "DYAD_INTENT_CORPUS")]
    corpus: PathBuf,
    #[arg(long, env = "DYAD_INTENT_MODEL")]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Grouped cross-validation folds to report (0 skips).
    #[arg(long)]
    cv_folds: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, env = "DYAD_INTENT_CORPUS")]
    corpus: PathBuf,
    #[arg(long, env = "DYAD_INTENT_MODEL")]
    out: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, env = "DYAD_INTENT_CORPUS")]
    corpus: PathBuf,
    #[arg(long, env = "DYAD_INTENT_MODEL")]
    model: PathBuf,
    #[arg(long, env = "DYAD_INTENT_TRIALS")]
    trials: PathBuf,
    /// Directory for `report.txt` and `report.kv`.
    #[arg(long)]
    out: PathBuf,
    /// Voting buffer in samples.
    #[arg(long)]
    buffer: Option<usize>,
    /// Also write one prediction stream CSV per evaluated instance here.
    #[arg(long)]
    streams: Option<PathBuf>,
    /// Print the key=value form instead of the text report.
    #[arg(long)]
    kv: bool,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    trial: PathBuf,
    #[arg(long, env = "DYAD_INTENT_MODEL")]
    model: PathBuf,
    #[arg(long, default_value_t = 1)]
    participant: u8,
    #[arg(long)]
    buffer: Option<usize>,
    /// Override the window spec stored in the model.
    #[command(flatten)]
    window: WindowArgs,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn variant_or_keep(current: &VariantConfig, name: &str) -> Result<VariantConfig> {
    let wanted = VariantConfig::default_for(name)?;
    Ok(if wanted.name() == current.name() { current.clone() } else { wanted })
}

fn apply_phase(cfg: &mut PipelineConfig, args: &PhaseArgs) {
    if args.joint {
        cfg.dataset.annotation.mode = PhaseMode::Joint;
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => intent_core::formats::write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => {
            let sim = &mut cfg.simulation;
            if let Some(n) = a.n {
                sim.n_trials = n;
            }
            if let Some(s) = a.seed {
                sim.seed = s;
            }
            if let Some(m) = &a.mix {
                sim.mix = RoleMix::parse(m)?;
            }
            if let Some(t) = a.trials_per_dyad {
                sim.trials_per_dyad = t;
            }
            if let Some(k) = a.noise_scale {
                sim.noise = sim.noise.scaled(k);
            }
            let s = pipeline::simulate(sim, &a.out)?;
            println!(
                "wrote {} trials to {} ({} usable, {} with conflicting goals, {} with an opposing episode)",
                s.trials,
                a.out.display(),
                s.usable,
                s.conflicts,
                s.opposing_trials
            );
        }
        Command::DetectPhase(a) => {
            apply_phase(&mut cfg, &a.phase);
            let rows = pipeline::detect_phases(&a.trials, &cfg.dataset.annotation, &a.out, a.power_dir.as_deref())?;
            let found = rows.iter().filter(|r| r.phase.is_some()).count();
            println!("{found} of {} participant phases detected; table in {}", rows.len(), a.out.display());
        }
        Command::BuildDataset(a) => {
            let d = &mut cfg.dataset;
            a.window.apply(&mut d.spec)?;
            if let Some(n) = a.uniform {
                d.plan.n_uniform = n;
            }
            if let Some(n) = a.skewed {
                d.plan.n_skewed = n;
            }
            if let Some(s) = a.sigma {
                d.plan.sigma_skew = s;
            }
            if let Some(s) = a.seed {
                d.plan.seed = s;
                d.split.seed = s;
            }
            if let Some(m) = a.split {
                d.split.mode = match m {
                    SplitArg::Dyad => SplitMode::Dyad,
                    SplitArg::Interaction => SplitMode::Interaction,
                };
            }
            if let Some(f) = a.test_fraction {
                d.split.test_fraction = f;
            }
            if let Some(s) = a.annotation {
                d.annotation.source = match s {
                    AnnotationArg::Truth => AnnotationSource::Truth,
                    AnnotationArg::Rule => AnnotationSource::Rule,
                };
            }
            apply_phase(&mut cfg, &a.phase);
            let c = pipeline::build_dataset(&a.trials, &cfg.dataset, &a.out)?;
            println!(
                "corpus {}: {} train / {} test windows, {} features, {} held-out instances, {} trials dropped (fingerprint {})",
                a.out.display(),
                c.train.len(),
                c.test.len(),
                c.n_features(),
                c.held_out().count(),
                c.dropped_trials.len(),
                c.fingerprint
            );
        }
        Command::Train(a) => {
            if let Some(v) = &a.model.variant {
                cfg.model.variant = variant_or_keep(&cfg.model.variant, v)?;
            }
            if let Some(r) = &a.model.reducer {
                cfg.model.reducer = ReducerConfig::parse(r)?;
            }
            if let Some(s) = a.model.seed {
                cfg.model.seed = s;
            }
            if let Some(k) = a.cv_folds {
                cfg.cv_folds = k;
            }
            let out = pipeline::train_stage(&a.corpus, &cfg.model, cfg.cv_folds, &a.out)?;
            if let Some(cv) = &out.cv {
                let folds: Vec<String> = cv.fold_macro_f1.iter().map(|f| format!("{f:.4}")).collect();
                println!("cross-validated macro-F1 {:.4} (folds {})", cv.mean_macro_f1, folds.join(", "));
            }
            println!("trained {} (reducer {}) -> {}", out.model.variant_name(), cfg.model.reducer, a.out.display());
        }
        Command::Search(a) => {
            let variant = a.variant.unwrap_or_else(|| cfg.model.variant.name().to_string());
            if let Some(b) = a.budget {
                cfg.search.budget = b;
            }
            if let Some(f) = a.folds {
                cfg.search.folds = f;
            }
            if let Some(s) = a.seed {
                cfg.search.seed = s;
            }
            let (result, _) = pipeline::search_stage(&a.corpus, &variant, &cfg.search, &a.out)?;
            println!(
                "best of {} configurations: mean CV macro-F1 {:.4}\n{}",
                result.evaluations.len(),
                result.best_score,
                serde_json::to_string(&result.best).expect("config serializes")
            );
        }
        Command::Evaluate(a) => {
            let buffer = a.buffer.unwrap_or(cfg.buffer);
            let report = pipeline::evaluate_stage(&a.corpus, &a.model, &a.trials, buffer, &a.out, a.streams.as_deref())?;
            if a.kv {
                print!("{}", report.to_key_values());
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::Stream(a) => {
            let participant = Participant::from_number(a.participant)
                .ok_or_else(|| Error::InvalidParameter(format!("participant must be 1 or 2, got {}", a.participant)))?;
            let spec = if a.window.given() {
                let mut spec = cfg.dataset.spec;
                a.window.apply(&mut spec)?;
                Some(spec)
            } else {
                None
            };
            let lines = pipeline::stream_stage(&a.trial, &a.model, participant, a.buffer.unwrap_or(cfg.buffer), spec)?;
            emit(a.out.as_deref(), &pipeline::stream_lines_text(&lines))?;
        }
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
