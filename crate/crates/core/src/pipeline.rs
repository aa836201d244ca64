//! Stage orchestration behind the command-line tool.
//!
//! Stages read and write the artifacts of [`crate::formats`]:
//!
//! ```text
//! simulate       -> trial files + truth sidecars
//! detect-phase   trials -> phases.csv (+ power channel CSVs)
//! build-dataset  trials -> corpus
//! train, search  corpus -> model
//! evaluate       corpus + model + trials -> report (text and key=value)
//! stream         trial + model -> one line per sample step
//! ```
//!
//! Every written artifact gets a `<file>.manifest.json` next to it listing
//! input and output digests and the stage configuration. Nothing in a
//! manifest depends on the clock, so identical runs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_corpus, AnnotationParams, Corpus, DatasetConfig, Instance, InstanceTag, WindowSpec};
use crate::error::{Error, Result};
use crate::eval::{
    instance_streams, replay, signal_report, window_confusion, ConfusionMatrix, PredictionStream, Scores,
    SignalReport,
};
use crate::formats::{self, CorpusFormat, FileDigest, Manifest};
use crate::learn::cv::{cross_validate, CvReport, DEFAULT_FOLDS};
use crate::learn::search::{hyperparameter_search, SearchResult, SearchSpace};
use crate::learn::{train, ModelConfig, ReducerConfig, TrainSet, TrainedModel, VariantConfig};
use crate::phase::{detect_trial_phase, ActionPhase};
use crate::signals::{power_channels, FeatureSet};
use crate::simgen::{generate_corpus, CorpusConfig};
use crate::trial::{Participant, TrialRecording};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FINGERPRINT: i32 = 3;
pub const EXIT_VERSION: i32 = 4;
pub const EXIT_MISSING_INPUT: i32 = 5;
pub const EXIT_VARIANT: i32 = 6;
pub const EXIT_FORMAT: i32 = 7;

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::FingerprintMismatch { .. } => EXIT_FINGERPRINT,
        Error::VersionMismatch { .. } => EXIT_VERSION,
        Error::MissingInput(_) => EXIT_MISSING_INPUT,
        Error::VariantMismatch { .. } => EXIT_VARIANT,
        Error::Format { .. } => EXIT_FORMAT,
        Error::InvalidParameter(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

pub const DEFAULT_BUFFER: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    /// Grid points evaluated.
    pub budget: usize,
    pub folds: usize,
    pub seed: u64,
    /// Grid to draw from; the variant's default grid when absent.
    pub space: Option<SearchSpace>,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings { budget: 8, folds: DEFAULT_FOLDS, seed: 1, space: None }
    }
}

/// Every setting of every stage. Missing keys in a config file take these
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub simulation: CorpusConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub search: SearchSettings,
    /// Voting buffer length in samples.
    pub buffer: usize,
    /// Cross-validation folds run by `train`; 0 skips it.
    pub cv_folds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            simulation: CorpusConfig::new(300, 1),
            dataset: DatasetConfig::new(WindowSpec::new(60, FeatureSet::Full)),
            model: ModelConfig::new(ReducerConfig::Lda(3), VariantConfig::default_for("adaboost").expect("known"), 1),
            search: SearchSettings::default(),
            buffer: DEFAULT_BUFFER,
            cv_folds: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = formats::read_bytes(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format("config", e.to_string()))
    }
}

/// `<file>.manifest.json` next to an artifact.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

fn digest_of_bytes(path: &Path, bytes: &[u8]) -> FileDigest {
    FileDigest { path: path.display().to_string(), sha256: formats::sha256_hex(bytes) }
}

fn write_with_digest(path: &Path, bytes: &[u8]) -> Result<FileDigest> {
    formats::write_atomic(path, bytes)?;
    Ok(digest_of_bytes(path, bytes))
}

pub fn label_name(label: u8) -> String {
    if label == 0 {
        "idle".into()
    } else {
        format!("g{label}")
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub trials: usize,
    pub usable: usize,
    pub conflicts: usize,
    pub opposing_trials: usize,
}

/// Generates a corpus into `out_dir`: one trial file and one truth sidecar
/// per trial, plus `manifest.json`.
pub fn simulate(cfg: &CorpusConfig, out_dir: &Path) -> Result<SimulationSummary> {
    let trials = generate_corpus(cfg)?;
    let written: Vec<Vec<FileDigest>> = trials
        .par_iter()
        .map(|(trial, truth)| {
            let path = formats::trial_path(out_dir, &trial.id);
            let a = write_with_digest(&path, formats::trial_to_string(trial).as_bytes())?;
            let b = write_with_digest(&formats::truth_path(&path), formats::truth_to_string(truth).as_bytes())?;
            Ok(vec![a, b])
        })
        .collect::<Result<_>>()?;
    let mut manifest = Manifest::new("simulate", cfg);
    manifest.outputs = written.into_iter().flatten().collect();
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(SimulationSummary {
        trials: trials.len(),
        usable: trials.iter().filter(|(_, g)| g.usable()).count(),
        conflicts: trials.iter().filter(|(_, g)| g.conflict).count(),
        opposing_trials: trials.iter().filter(|(_, g)| g.opposing.iter().any(|&o| o)).count(),
    })
}

fn load_trial_dir(dir: &Path) -> Result<(Vec<formats::FileDigest>, Vec<(TrialRecording, Option<crate::simgen::GroundTruth>)>)> {
    let paths = formats::list_trials(dir)?;
    if paths.is_empty() {
        return Err(Error::MissingInput(dir.join(format!("*.{}", formats::TRIAL_EXT))));
    }
    let loaded: Vec<(Vec<FileDigest>, _)> = paths
        .par_iter()
        .map(|p| {
            let mut digests = vec![FileDigest::of(p)?];
            let sidecar = formats::truth_path(p);
            if sidecar.exists() {
                digests.push(FileDigest::of(&sidecar)?);
            }
            Ok((digests, formats::load_annotated(p)?))
        })
        .collect::<Result<_>>()?;
    let mut digests = Vec::new();
    let mut trials = Vec::with_capacity(loaded.len());
    for (d, t) in loaded {
        digests.extend(d);
        trials.push(t);
    }
    Ok((digests, trials))
}

// ---------------------------------------------------------------- detect-phase

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub trial_id: String,
    pub participant: Participant,
    pub t_beep: f64,
    pub phase: Option<ActionPhase>,
}

/// Detects every participant's action phase in `trials_dir` and writes
/// `out_csv`. With `power_dir`, also writes one power channel CSV per trial.
pub fn detect_phases(
    trials_dir: &Path,
    params: &AnnotationParams,
    out_csv: &Path,
    power_dir: Option<&Path>,
) -> Result<Vec<PhaseRow>> {
    params.validate()?;
    let (inputs, trials) = load_trial_dir(trials_dir)?;
    let per_trial: Vec<(Vec<PhaseRow>, Option<FileDigest>)> = trials
        .par_iter()
        .map(|(trial, _)| {
            let rows = Participant::BOTH
                .iter()
                .map(|&k| {
                    Ok(PhaseRow {
                        trial_id: trial.id.clone(),
                        participant: k,
                        t_beep: trial.t_beep,
                        phase: detect_trial_phase(trial, k, &trial.layout, &params.phase, params.mode)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let power = match power_dir {
                Some(dir) => {
                    let path = dir.join(format!("{}.power.csv", trial.id));
                    Some(write_with_digest(&path, power_csv(trial)?.as_bytes())?)
                }
                None => None,
            };
            Ok((rows, power))
        })
        .collect::<Result<_>>()?;

    let mut csv = String::from("trial,participant,t_beep,t0,tf,strength,truncated\n");
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for (r, power) in per_trial {
        rows.extend(r);
        outputs.extend(power);
    }
    for r in &rows {
        let _ = match &r.phase {
            Some(p) => writeln!(csv, "{},{},{},{},{},{},{}", r.trial_id, r.participant, r.t_beep, p.t0, p.tf, p.strength, p.truncated),
            None => writeln!(csv, "{},{},{},,,,", r.trial_id, r.participant, r.t_beep),
        };
    }
    outputs.insert(0, write_with_digest(out_csv, csv.as_bytes())?);
    let mut manifest = Manifest::new("detect-phase", params);
    manifest.inputs = inputs;
    manifest.outputs = outputs;
    manifest.save(&manifest_path(out_csv))?;
    Ok(rows)
}

/// Absolute and goal-projected power of both participants, one row per sample.
pub fn power_csv(trial: &TrialRecording) -> Result<String> {
    let n = trial.len();
    let channels = Participant::BOTH
        .iter()
        .map(|&k| power_channels(trial, k, &trial.layout, 0..n))
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::from("t");
    for (k, ch) in Participant::BOTH.iter().zip(&channels) {
        for (name, _) in ch.channels() {
            let name = if name == "|P|" { "abs".to_string() } else { name.replace("P^", "g") };
            let _ = write!(out, ",p{}_{}", k.number(), name);
        }
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&trial.t[i].to_string());
        for ch in &channels {
            for (_, values) in ch.channels() {
                let _ = write!(out, ",{}", values[i]);
            }
        }
        out.push('\n');
    }
    Ok(out)
}

// ---------------------------------------------------------------- build-dataset

/// Builds a corpus from the trials in `trials_dir`. `.bin` outputs are
/// written in the binary form.
pub fn build_dataset(trials_dir: &Path, cfg: &DatasetConfig, out: &Path) -> Result<Corpus> {
    let (inputs, trials) = load_trial_dir(trials_dir)?;
    let corpus = build_corpus(&trials, cfg)?;
    let bytes = match CorpusFormat::for_path(out) {
        CorpusFormat::Text => formats::corpus_to_text(&corpus).into_bytes(),
        CorpusFormat::Binary => formats::corpus_to_binary(&corpus),
    };
    let mut manifest = Manifest::new("build-dataset", cfg);
    manifest.inputs = inputs;
    manifest.outputs = vec![write_with_digest(out, &bytes)?];
    manifest.save(&manifest_path(out))?;
    Ok(corpus)
}

// ---------------------------------------------------------------- train / search

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub cv: Option<CvReport>,
}

fn train_set(corpus: &Corpus) -> Result<TrainSet> {
    TrainSet::from_windows(&corpus.train)
}

fn save_model_with_manifest(model: &TrainedModel, out: &Path, stage: &str, config: &impl Serialize, inputs: Vec<FileDigest>) -> Result<()> {
    let mut manifest = Manifest::new(stage, config);
    manifest.inputs = inputs;
    manifest.outputs = vec![write_with_digest(out, formats::model_to_string(model).as_bytes())?];
    manifest.save(&manifest_path(out))
}

/// Trains `cfg` on the corpus's training windows; with `cv_folds > 0` also
/// reports grouped cross-validation.
pub fn train_stage(corpus_path: &Path, cfg: &ModelConfig, cv_folds: usize, out: &Path) -> Result<TrainOutcome> {
    let corpus = formats::load_corpus(corpus_path)?;
    let set = train_set(&corpus)?;
    let cv = if cv_folds > 0 { Some(cross_validate(&set, &corpus.fingerprint, cfg, cv_folds, cfg.seed)?) } else { None };
    let mut model = train(&set, &corpus.fingerprint, cfg)?;
    model.spec = Some(corpus.config.spec);
    #[derive(Serialize)]
    struct Record<'a> {
        model: &'a ModelConfig,
        cv_folds: usize,
    }
    save_model_with_manifest(&model, out, "train", &Record { model: cfg, cv_folds }, vec![FileDigest::of(corpus_path)?])?;
    Ok(TrainOutcome { model, cv })
}

/// Random search over `variant`'s grid; the best configuration is retrained
/// on all training windows and saved to `out`, and every evaluated point is
/// listed in `<out>.search.tsv`.
pub fn search_stage(corpus_path: &Path, variant: &str, settings: &SearchSettings, out: &Path) -> Result<(SearchResult, TrainedModel)> {
    let corpus = formats::load_corpus(corpus_path)?;
    let set = train_set(&corpus)?;
    let space = match &settings.space {
        Some(s) => s.clone(),
        None => SearchSpace::default_for(variant)?,
    };
    let result = hyperparameter_search(&set, &corpus.fingerprint, &space, settings.budget, settings.folds, settings.seed)?;
    let mut model = train(&set, &corpus.fingerprint, &result.best)?;
    model.spec = Some(corpus.config.spec);

    let mut table = String::from("rank\tmean_macro_f1\tfold_macro_f1\tconfig\n");
    let mut order: Vec<usize> = (0..result.evaluations.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&result.evaluations[a], &result.evaluations[b]);
        eb.cv.mean_macro_f1.total_cmp(&ea.cv.mean_macro_f1).then(a.cmp(&b))
    });
    for (rank, &i) in order.iter().enumerate() {
        let e = &result.evaluations[i];
        let folds: Vec<String> = e.cv.fold_macro_f1.iter().map(|f| format!("{f:.4}")).collect();
        let _ = writeln!(
            table,
            "{}\t{:.4}\t{}\t{}",
            rank + 1,
            e.cv.mean_macro_f1,
            folds.join(","),
            serde_json::to_string(&e.config).expect("config serializes")
        );
    }
    let mut table_path = out.as_os_str().to_os_string();
    table_path.push(".search.tsv");
    let table_digest = write_with_digest(Path::new(&table_path), table.as_bytes())?;

    #[derive(Serialize)]
    struct Record<'a> {
        variant: &'a str,
        search: &'a SearchSettings,
        space: &'a SearchSpace,
    }
    let mut manifest = Manifest::new("search", &Record { variant, search: settings, space: &space });
    manifest.inputs = vec![FileDigest::of(corpus_path)?];
    manifest.outputs = vec![write_with_digest(out, formats::model_to_string(&model).as_bytes())?, table_digest];
    manifest.save(&manifest_path(out))?;
    Ok((result, model))
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub variant: String,
    pub reducer: String,
    pub fingerprint: String,
    pub test_windows: usize,
    pub confusion: ConfusionMatrix,
    pub scores: Scores,
    pub signal: SignalReport,
    /// Held-out instances with too little power to carry an intent.
    pub weak_instances: usize,
}

impl EvaluationReport {
    pub fn to_text(&self) -> String {
        let n = self.confusion.n_classes();
        let names: Vec<String> = (0..n as u8).map(label_name).collect();
        let mut s = String::new();
        let _ = writeln!(s, "model        {} (reducer {}, features {})", self.variant, self.reducer, self.fingerprint);
        let _ = writeln!(s, "test windows {}", self.test_windows);
        let _ = writeln!(s, "\nconfusion matrix (rows: true class, columns: predicted)");
        let _ = write!(s, "{:>8}", "");
        names.iter().for_each(|c| {
            let _ = write!(s, "{c:>8}");
        });
        s.push('\n');
        for (r, row) in self.confusion.counts.iter().enumerate() {
            let _ = write!(s, "{:>8}", names[r]);
            row.iter().for_each(|v| {
                let _ = write!(s, "{v:>8}");
            });
            s.push('\n');
        }
        let _ = writeln!(s, "\n{:>8}{:>11}{:>9}{:>9}", "class", "precision", "recall", "F1");
        for c in 0..n {
            let flag = if self.scores.undefined[c] { "  (undefined)" } else { "" };
            let _ = writeln!(
                s,
                "{:>8}{:>11.4}{:>9.4}{:>9.4}{flag}",
                names[c], self.scores.precision[c], self.scores.recall[c], self.scores.f1[c]
            );
        }
        let _ = writeln!(s, "macro-F1 over goals: {:.4}", self.scores.macro_f1);

        let sig = &self.signal;
        let rate = |r: &crate::eval::Rate| match r.value() {
            Some(v) => format!("{}/{} = {v:.4}", r.successes, r.total),
            None => "n/a (no instances)".into(),
        };
        let secs = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3} s"));
        let _ = writeln!(s, "\nsignal level (voting buffer {} samples)", sig.buffer);
        let _ = writeln!(s, "  successful transition rate  {}", rate(&sig.transition));
        let _ = writeln!(
            s,
            "  transition delay            mean {}, median {} ({} settled, {} never settled)",
            secs(sig.delay.mean),
            secs(sig.delay.median),
            sig.delay.settled,
            sig.delay.misses
        );
        let negotiated = sig.negotiated.as_ref().map_or("n/a (no opposing instances)".to_string(), rate);
        let _ = writeln!(s, "  negotiated goal prediction  {negotiated}");
        let _ = writeln!(s, "  weak instances held out     {}", self.weak_instances);
        s
    }

    /// One `key=value` pair per line.
    pub fn to_key_values(&self) -> String {
        let mut kv: Vec<(String, String)> = vec![
            ("variant".into(), self.variant.clone()),
            ("reducer".into(), self.reducer.clone()),
            ("fingerprint".into(), self.fingerprint.clone()),
            ("test_windows".into(), self.test_windows.to_string()),
        ];
        let n = self.confusion.n_classes();
        for r in 0..n {
            for c in 0..n {
                kv.push((format!("cm.{}.{}", label_name(r as u8), label_name(c as u8)), self.confusion.counts[r][c].to_string()));
            }
        }
        for c in 0..n {
            let name = label_name(c as u8);
            kv.push((format!("precision.{name}"), self.scores.precision[c].to_string()));
            kv.push((format!("recall.{name}"), self.scores.recall[c].to_string()));
            kv.push((format!("f1.{name}"), self.scores.f1[c].to_string()));
        }
        kv.push(("macro_f1".into(), self.scores.macro_f1.to_string()));
        let sig = &self.signal;
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| x.to_string());
        kv.push(("buffer".into(), sig.buffer.to_string()));
        kv.push(("transition.successes".into(), sig.transition.successes.to_string()));
        kv.push(("transition.total".into(), sig.transition.total.to_string()));
        kv.push(("transition.rate".into(), opt(sig.transition.value())));
        kv.push(("delay.mean".into(), opt(sig.delay.mean)));
        kv.push(("delay.median".into(), opt(sig.delay.median)));
        kv.push(("delay.settled".into(), sig.delay.settled.to_string()));
        kv.push(("delay.misses".into(), sig.delay.misses.to_string()));
        let neg = sig.negotiated.unwrap_or(crate::eval::Rate { successes: 0, total: 0 });
        kv.push(("negotiated.successes".into(), neg.successes.to_string()));
        kv.push(("negotiated.total".into(), neg.total.to_string()));
        kv.push(("negotiated.rate".into(), opt(neg.value())));
        kv.push(("weak_instances".into(), self.weak_instances.to_string()));
        kv.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Streams of `instances`, reading their trials from `trials_dir`.
fn streams_for(
    instances: &[&Instance],
    trials: &BTreeMap<String, TrialRecording>,
    model: &TrainedModel,
    spec: &WindowSpec,
    buffer: usize,
) -> Result<Vec<PredictionStream>> {
    instance_streams(instances, &|id: &str| trials.get(id), model, spec, buffer)
}

/// Everything `evaluate` computes, before anything is written.
pub fn evaluate_corpus(
    corpus: &Corpus,
    model: &TrainedModel,
    trials: &BTreeMap<String, TrialRecording>,
    buffer: usize,
) -> Result<(EvaluationReport, Vec<PredictionStream>)> {
    model.check_fingerprint(&corpus.fingerprint)?;
    let n_classes = corpus.n_goals + 1;
    let confusion = window_confusion(model, &corpus.test, n_classes)?;
    let scores = confusion.scores()?;
    let spec = corpus.config.spec;
    let regular: Vec<&Instance> = corpus.test_instances().collect();
    let opposing: Vec<&Instance> = corpus.held_out().filter(|i| i.tag == InstanceTag::Opposing).collect();
    let regular_streams = streams_for(&regular, trials, model, &spec, buffer)?;
    let opposing_streams = streams_for(&opposing, trials, model, &spec, buffer)?;
    let signal = signal_report(&pair(&regular, &regular_streams), &pair(&opposing, &opposing_streams), buffer);
    let report = EvaluationReport {
        variant: model.variant_name().into(),
        reducer: model.config.reducer.to_string(),
        fingerprint: model.fingerprint.clone(),
        test_windows: corpus.test.len(),
        confusion,
        scores,
        signal,
        weak_instances: corpus.held_out().filter(|i| i.tag == InstanceTag::Weak).count(),
    };
    let mut streams = regular_streams;
    streams.extend(opposing_streams);
    Ok((report, streams))
}

fn pair<'a>(instances: &[&'a Instance], streams: &[PredictionStream]) -> Vec<(&'a Instance, PredictionStream)> {
    instances.iter().copied().zip(streams.iter().cloned()).collect()
}

/// Trials referenced by a corpus's evaluated instances.
pub fn load_referenced_trials(corpus: &Corpus, trials_dir: &Path) -> Result<(Vec<FileDigest>, BTreeMap<String, TrialRecording>)> {
    let mut ids: Vec<&str> = corpus
        .test_instances()
        .chain(corpus.held_out().filter(|i| i.tag == InstanceTag::Opposing))
        .map(|i| i.trial_id.as_str())
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let loaded: Vec<(FileDigest, TrialRecording)> = ids
        .par_iter()
        .map(|id| {
            let path = formats::trial_path(trials_dir, id);
            Ok((FileDigest::of(&path)?, formats::load_trial(&path)?))
        })
        .collect::<Result<_>>()?;
    let digests = loaded.iter().map(|(d, _)| d.clone()).collect();
    Ok((digests, loaded.into_iter().map(|(_, t)| (t.id.clone(), t)).collect()))
}

/// Prediction stream as CSV: time, raw label, filtered label.
pub fn stream_csv(stream: &PredictionStream) -> String {
    let mut out = String::from("t,raw,filtered\n");
    for (i, (r, f)) in stream.raw.iter().zip(&stream.filtered).enumerate() {
        let _ = writeln!(out, "{},{r},{f}", stream.time(i));
    }
    out
}

/// Evaluates a saved model on a saved corpus. Writes `report.txt` and
/// `report.kv` into `out_dir`, and with `streams_dir` one CSV per evaluated
/// instance stream.
pub fn evaluate_stage(
    corpus_path: &Path,
    model_path: &Path,
    trials_dir: &Path,
    buffer: usize,
    out_dir: &Path,
    streams_dir: Option<&Path>,
) -> Result<EvaluationReport> {
    let corpus = formats::load_corpus(corpus_path)?;
    let model = formats::load_model(model_path, None)?;
    model.check_fingerprint(&corpus.fingerprint)?;
    let (trial_digests, trials) = load_referenced_trials(&corpus, trials_dir)?;
    let (report, streams) = evaluate_corpus(&corpus, &model, &trials, buffer)?;

    let mut outputs = vec![
        write_with_digest(&out_dir.join("report.txt"), report.to_text().as_bytes())?,
        write_with_digest(&out_dir.join("report.kv"), report.to_key_values().as_bytes())?,
    ];
    if let Some(dir) = streams_dir {
        for s in &streams {
            let path = dir.join(format!("{}-p{}.stream.csv", s.trial_id, s.participant.number()));
            outputs.push(write_with_digest(&path, stream_csv(s).as_bytes())?);
        }
    }
    #[derive(Serialize)]
    struct Record {
        buffer: usize,
    }
    let mut manifest = Manifest::new("evaluate", &Record { buffer });
    manifest.inputs = vec![FileDigest::of(corpus_path)?, FileDigest::of(model_path)?];
    manifest.inputs.extend(trial_digests);
    manifest.outputs = outputs;
    manifest.save(&out_dir.join("report.manifest.json"))?;
    Ok(report)
}

// ---------------------------------------------------------------- stream

/// One emitted step of a replayed trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamLine {
    pub t: f64,
    pub raw: u8,
    pub filtered: u8,
}

/// Replays a trial file sample by sample through the streaming recognizer.
/// The window spec comes from the model unless `spec` overrides it.
pub fn stream_stage(
    trial_path: &Path,
    model_path: &Path,
    participant: Participant,
    buffer: usize,
    spec: Option<WindowSpec>,
) -> Result<Vec<StreamLine>> {
    let trial = formats::load_trial(trial_path)?;
    let model = formats::load_model(model_path, None)?;
    let spec = spec
        .or(model.spec)
        .ok_or_else(|| Error::InvalidParameter("model file has no window spec; pass one explicitly".into()))?;
    let steps = replay(&trial, participant, &model, &spec, buffer)?;
    Ok(steps.into_iter().map(|s| StreamLine { t: trial.t[s.index], raw: s.raw, filtered: s.filtered }).collect())
}

pub fn stream_lines_text(lines: &[StreamLine]) -> String {
    let mut out = String::from("t\traw\tfiltered\n");
    for l in lines {
        let _ = writeln!(out, "{}\t{}\t{}", l.t, label_name(l.raw), label_name(l.filtered));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let errs = [
            Error::FingerprintMismatch { expected: "a".into(), found: "b".into() },
            Error::VersionMismatch { what: "corpus".into(), expected: "v1".into(), found: "v2".into() },
            Error::MissingInput("x".into()),
            Error::VariantMismatch { expected: "mlp".into(), found: "adaboost".into() },
            Error::format("model", "bad"),
            Error::Training("x".into()),
        ];
        let mut codes: Vec<i32> = errs.iter().map(exit_code).collect();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), errs.len());
        assert!(!codes.contains(&0));
    }

    #[test]
    fn config_defaults_fill_missing_keys() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"buffer": 10}"#).unwrap();
        assert_eq!(cfg.buffer, 10);
        assert_eq!(cfg.dataset.spec.length, 60);
        let round: PipelineConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(manifest_path(Path::new("a/corpus.tsv")), PathBuf::from("a/corpus.tsv.manifest.json"));
    }
}
