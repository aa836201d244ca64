//! On-disk artifacts.
//!
//! Every file opens with a line `# dyad-intent <kind> v<version>`; a file of
//! another version, or with that line damaged, is refused with
//! [`Error::VersionMismatch`]. Corpora and models also carry the feature
//! fingerprint of the window spec they were built with.
//!
//! | kind     | layout                                                             |
//! |----------|--------------------------------------------------------------------|
//! | trial    | JSON metadata line, then a tab-separated table, one row per sample |
//! | truth    | one JSON line (ground-truth sidecar of a simulated trial)          |
//! | corpus   | JSON header line, then one tab-separated row per window            |
//! | model    | header line with variant, fingerprint and seed, then one JSON line |
//!
//! Trial columns are `t`, then for participants 1 and 2 in turn force,
//! velocity and grasp position as x/y pairs (`f1x f1y v1x v1y x1 y1 ...`).
//! Corpus rows are `side trial participant t_end stage label` followed by
//! the features in [`WindowSpec::feature_names`] order. The binary corpus
//! (`.bin`) holds the same content: magic `DYIC`, u32 version, u32 header
//! length, the JSON header, then fixed-layout little-endian records.
//!
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! exact. Writes go to a temporary file in the target directory and are
//! renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    Corpus, DatasetConfig, LabeledWindow, Side, SplitInstance, Stage, WindowSource,
};
use crate::error::{Error, Result};
use crate::learn::TrainedModel;
use crate::simgen::GroundTruth;
use crate::trial::{GoalLayout, Participant, ParticipantMeta, ParticipantSeries, TrialRecording};
use crate::Vec2;

pub const TRIAL_VERSION: u32 = 1;
pub const TRUTH_VERSION: u32 = 1;
pub const CORPUS_VERSION: u32 = 1;
pub const MODEL_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

const MAGIC: &str = "# dyad-intent";
const BINARY_MAGIC: &[u8; 4] = b"DYIC";

pub const TRIAL_EXT: &str = "trial.tsv";
pub const TRUTH_EXT: &str = "truth.json";

fn magic_line(kind: &str, version: u32) -> String {
    format!("{MAGIC} {kind} v{version}")
}

/// Checks a magic line. Anything that is not a well-formed line of `kind`
/// at `version` is a version mismatch.
fn check_magic(line: Option<&str>, kind: &str, version: u32) -> Result<()> {
    let line = line.unwrap_or("").trim_end();
    let mismatch = |found: String| Error::VersionMismatch {
        what: kind.to_string(),
        expected: format!("v{version}"),
        found,
    };
    let mut parts = line.strip_prefix(MAGIC).ok_or_else(|| mismatch("no format header".into()))?.split_whitespace();
    match (parts.next(), parts.next()) {
        (Some(k), Some(v)) if k == kind => {
            if v == format!("v{version}") {
                Ok(())
            } else {
                Err(mismatch(v.to_string()))
            }
        }
        (Some(k), _) if k != kind => Err(Error::format(kind, format!("file holds a {k}, not a {kind}"))),
        _ => Err(mismatch(format!("damaged header `{line}`"))),
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::InvalidParameter(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Reads a whole file; a missing file is [`Error::MissingInput`].
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

fn read_text(path: &Path, what: &str) -> Result<String> {
    String::from_utf8(read_bytes(path)?).map_err(|_| Error::format(what, format!("{} is not UTF-8", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("artifact types serialize")
}

fn parse_json<T: for<'de> Deserialize<'de>>(line: Option<&str>, what: &str) -> Result<T> {
    let line = line.ok_or_else(|| Error::format(what, "file ends before the header"))?;
    let body = line.strip_prefix("# ").unwrap_or(line);
    serde_json::from_str(body).map_err(|e| Error::format(what, e.to_string()))
}

/// Text artifacts end with a newline; a file without one was cut short.
fn check_complete(text: &str, what: &str) -> Result<()> {
    if text.ends_with('\n') {
        Ok(())
    } else {
        Err(Error::format(what, "file does not end with a newline (truncated?)"))
    }
}

fn parse_f64(s: &str, what: &str, row: usize) -> Result<f64> {
    s.parse().map_err(|_| Error::format(what, format!("row {row}: `{s}` is not a number")))
}

// ---------------------------------------------------------------- trials

#[derive(Serialize, Deserialize)]
struct TrialHeader {
    id: String,
    dyad: String,
    rate_hz: f64,
    t_beep: f64,
    t_end: f64,
    n_samples: usize,
    layout: GoalLayout,
    meta: [ParticipantMeta; 2],
}

const TRIAL_COLUMNS: [&str; 13] =
    ["t", "f1x", "f1y", "v1x", "v1y", "x1", "y1", "f2x", "f2y", "v2x", "v2y", "x2", "y2"];

pub fn trial_to_string(trial: &TrialRecording) -> String {
    let header = TrialHeader {
        id: trial.id.clone(),
        dyad: trial.dyad.clone(),
        rate_hz: trial.rate_hz,
        t_beep: trial.t_beep,
        t_end: trial.t_end,
        n_samples: trial.len(),
        layout: trial.layout.clone(),
        meta: trial.meta,
    };
    let mut out = String::with_capacity(trial.len() * 160);
    out.push_str(&magic_line("trial", TRIAL_VERSION));
    out.push('\n');
    out.push_str(&format!("# {}\n", json_line(&header)));
    out.push_str(&TRIAL_COLUMNS.join("\t"));
    out.push('\n');
    for i in 0..trial.len() {
        out.push_str(&trial.t[i].to_string());
        for s in &trial.participants {
            for v in [&s.force[i], &s.velocity[i], &s.grasp[i]] {
                out.push_str(&format!("\t{}\t{}", v.x, v.y));
            }
        }
        out.push('\n');
    }
    out
}

pub fn trial_from_str(text: &str) -> Result<TrialRecording> {
    let what = "trial";
    let mut lines = text.lines();
    check_magic(lines.next(), what, TRIAL_VERSION)?;
    check_complete(text, what)?;
    let header: TrialHeader = parse_json(lines.next(), what)?;
    let columns = lines.next().ok_or_else(|| Error::format(what, "missing column line"))?;
    if columns.split('\t').ne(TRIAL_COLUMNS) {
        return Err(Error::format(what, format!("unexpected columns `{columns}`")));
    }
    let mut t = Vec::new();
    let mut participants = [ParticipantSeries::default(), ParticipantSeries::default()];
    for (row, line) in lines.enumerate() {
        let vals: Vec<f64> = line.split('\t').map(|s| parse_f64(s, what, row)).collect::<Result<_>>()?;
        if vals.len() != TRIAL_COLUMNS.len() {
            return Err(Error::format(what, format!("row {row}: {} fields, expected {}", vals.len(), TRIAL_COLUMNS.len())));
        }
        t.push(vals[0]);
        for (k, s) in participants.iter_mut().enumerate() {
            let v = &vals[1 + 6 * k..];
            s.force.push(Vec2::new(v[0], v[1]));
            s.velocity.push(Vec2::new(v[2], v[3]));
            s.grasp.push(Vec2::new(v[4], v[5]));
        }
    }
    if t.len() != header.n_samples {
        return Err(Error::format(what, format!("expected {} samples, found {} (truncated file?)", header.n_samples, t.len())));
    }
    let trial = TrialRecording {
        id: header.id,
        dyad: header.dyad,
        rate_hz: header.rate_hz,
        t,
        t_beep: header.t_beep,
        t_end: header.t_end,
        layout: header.layout,
        participants,
        meta: header.meta,
    };
    trial.validate()?;
    Ok(trial)
}

pub fn save_trial(path: &Path, trial: &TrialRecording) -> Result<()> {
    write_atomic(path, trial_to_string(trial).as_bytes())
}

pub fn load_trial(path: &Path) -> Result<TrialRecording> {
    trial_from_str(&read_text(path, "trial")?)
}

pub fn truth_to_string(truth: &GroundTruth) -> String {
    format!("{}\n{}\n", magic_line("truth", TRUTH_VERSION), json_line(truth))
}

pub fn truth_from_str(text: &str) -> Result<GroundTruth> {
    let mut lines = text.lines();
    check_magic(lines.next(), "truth", TRUTH_VERSION)?;
    parse_json(lines.next(), "truth")
}

pub fn save_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    write_atomic(path, truth_to_string(truth).as_bytes())
}

pub fn load_truth(path: &Path) -> Result<GroundTruth> {
    truth_from_str(&read_text(path, "truth")?)
}

/// Path of trial `id` inside `dir`.
pub fn trial_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{TRIAL_EXT}"))
}

/// Sidecar path next to a trial file.
pub fn truth_path(trial_file: &Path) -> PathBuf {
    let name = trial_file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(&format!(".{TRIAL_EXT}")).unwrap_or(&name);
    trial_file.with_file_name(format!("{stem}.{TRUTH_EXT}"))
}

/// Trial files in `dir`, sorted by name.
pub fn list_trials(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(dir.to_path_buf()),
        _ => Error::io(dir, e),
    })?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.to_string_lossy().ends_with(&format!(".{TRIAL_EXT}")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads a trial and its sidecar, if one exists.
pub fn load_annotated(path: &Path) -> Result<(TrialRecording, Option<GroundTruth>)> {
    let trial = load_trial(path)?;
    let sidecar = truth_path(path);
    let truth = if sidecar.exists() { Some(load_truth(&sidecar)?) } else { None };
    if let Some(t) = &truth {
        if t.trial_id != trial.id {
            return Err(Error::format("truth", format!("{} describes {}, not {}", sidecar.display(), t.trial_id, trial.id)));
        }
    }
    Ok((trial, truth))
}

// ---------------------------------------------------------------- corpora

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Text,
    Binary,
}

impl CorpusFormat {
    /// `.bin` files are binary, anything else text.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => CorpusFormat::Binary,
            _ => CorpusFormat::Text,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    config: DatasetConfig,
    n_goals: usize,
    rate_hz: f64,
    fingerprint: String,
    channels: Vec<String>,
    /// Class names by label value.
    labels: Vec<String>,
    n_features: usize,
    n_train: usize,
    n_test: usize,
    instances: Vec<SplitInstance>,
    dropped_trials: Vec<String>,
}

impl CorpusHeader {
    fn of(corpus: &Corpus) -> Self {
        CorpusHeader {
            config: corpus.config,
            n_goals: corpus.n_goals,
            rate_hz: corpus.rate_hz,
            fingerprint: corpus.fingerprint.clone(),
            channels: corpus.config.spec.feature_set.channel_names(corpus.n_goals),
            labels: std::iter::once("idle".to_string()).chain((1..=corpus.n_goals).map(|g| format!("g{g}"))).collect(),
            n_features: corpus.n_features(),
            n_train: corpus.train.len(),
            n_test: corpus.test.len(),
            instances: corpus.instances.clone(),
            dropped_trials: corpus.dropped_trials.clone(),
        }
    }

    /// Rejects headers whose recorded fingerprint no longer matches their spec.
    fn check(&self) -> Result<()> {
        let expected = self.config.spec.fingerprint(self.n_goals, self.rate_hz);
        if expected != self.fingerprint {
            return Err(Error::FingerprintMismatch { expected, found: self.fingerprint.clone() });
        }
        if self.n_features != self.config.spec.n_features(self.n_goals) {
            return Err(Error::format("corpus", "feature count does not match the window spec"));
        }
        Ok(())
    }

    fn into_corpus(self, train: Vec<LabeledWindow>, test: Vec<LabeledWindow>) -> Result<Corpus> {
        if train.len() != self.n_train || test.len() != self.n_test {
            return Err(Error::format(
                "corpus",
                format!(
                    "expected {}/{} train/test windows, found {}/{} (truncated file?)",
                    self.n_train,
                    self.n_test,
                    train.len(),
                    test.len()
                ),
            ));
        }
        Ok(Corpus {
            config: self.config,
            n_goals: self.n_goals,
            rate_hz: self.rate_hz,
            fingerprint: self.fingerprint,
            train,
            test,
            instances: self.instances,
            dropped_trials: self.dropped_trials,
        })
    }
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Train => "train",
        Side::Test => "test",
    }
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Uniform => "uniform",
        Stage::Skewed => "skewed",
    }
}

fn parse_participant(s: &str, what: &str) -> Result<Participant> {
    s.parse::<u8>()
        .ok()
        .and_then(Participant::from_number)
        .ok_or_else(|| Error::format(what, format!("bad participant `{s}`")))
}

pub fn corpus_to_text(corpus: &Corpus) -> String {
    let header = CorpusHeader::of(corpus);
    let mut out = String::with_capacity((corpus.train.len() + corpus.test.len()) * corpus.n_features() * 20);
    out.push_str(&magic_line("corpus", CORPUS_VERSION));
    out.push('\n');
    out.push_str(&format!("# {}\n", json_line(&header)));
    out.push_str("side\ttrial\tparticipant\tt_end\tstage\tlabel");
    for name in corpus.config.spec.feature_names(corpus.n_goals) {
        out.push('\t');
        out.push_str(&name);
    }
    out.push('\n');
    for (side, windows) in [(Side::Train, &corpus.train), (Side::Test, &corpus.test)] {
        for w in windows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}",
                side_name(side),
                w.source.trial_id,
                w.source.participant.number(),
                w.source.t_end,
                stage_name(w.stage),
                w.label
            ));
            for v in &w.features {
                out.push('\t');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
    }
    out
}

pub fn corpus_from_text(text: &str) -> Result<Corpus> {
    let what = "corpus";
    let mut lines = text.lines();
    check_magic(lines.next(), what, CORPUS_VERSION)?;
    check_complete(text, what)?;
    let header: CorpusHeader = parse_json(lines.next(), what)?;
    header.check()?;
    let names = header.config.spec.feature_names(header.n_goals);
    let columns = lines.next().ok_or_else(|| Error::format(what, "missing column line"))?;
    if columns.split('\t').skip(6).ne(names.iter().map(String::as_str)) {
        return Err(Error::format(what, "column names do not match the window spec"));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 + header.n_features {
            return Err(Error::format(what, format!("row {row}: {} fields, expected {}", fields.len(), 6 + header.n_features)));
        }
        let stage = match fields[4] {
            "uniform" => Stage::Uniform,
            "skewed" => Stage::Skewed,
            s => return Err(Error::format(what, format!("row {row}: unknown stage `{s}`"))),
        };
        let label: u8 = fields[5].parse().map_err(|_| Error::format(what, format!("row {row}: bad label")))?;
        let window = LabeledWindow {
            features: fields[6..].iter().map(|s| parse_f64(s, what, row)).collect::<Result<_>>()?,
            label,
            stage,
            source: WindowSource {
                trial_id: fields[1].to_string(),
                participant: parse_participant(fields[2], what)?,
                t_end: parse_f64(fields[3], what, row)?,
            },
        };
        match fields[0] {
            "train" => train.push(window),
            "test" => test.push(window),
            s => return Err(Error::format(what, format!("row {row}: unknown side `{s}`"))),
        }
    }
    header.into_corpus(train, test)
}

pub fn corpus_to_binary(corpus: &Corpus) -> Vec<u8> {
    let header = json_line(&CorpusHeader::of(corpus));
    let mut out = Vec::new();
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (side, windows) in [(Side::Train, &corpus.train), (Side::Test, &corpus.test)] {
        for w in windows {
            out.push(matches!(side, Side::Test) as u8);
            out.push(w.label);
            out.push(matches!(w.stage, Stage::Skewed) as u8);
            out.push(w.source.participant.number());
            out.extend_from_slice(&w.source.t_end.to_le_bytes());
            out.extend_from_slice(&(w.source.trial_id.len() as u16).to_le_bytes());
            out.extend_from_slice(w.source.trial_id.as_bytes());
            for v in &w.features {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("corpus", "binary corpus is truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn corpus_from_binary(bytes: &[u8]) -> Result<Corpus> {
    let what = "corpus";
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4).map_err(|_| Error::VersionMismatch {
        what: what.into(),
        expected: format!("v{CORPUS_VERSION}"),
        found: "no format header".into(),
    })?;
    if magic != BINARY_MAGIC {
        return Err(Error::VersionMismatch {
            what: what.into(),
            expected: format!("v{CORPUS_VERSION}"),
            found: "no format header".into(),
        });
    }
    let version = cur.u32()?;
    if version != CORPUS_VERSION {
        return Err(Error::VersionMismatch {
            what: what.into(),
            expected: format!("v{CORPUS_VERSION}"),
            found: format!("v{version}"),
        });
    }
    let len = cur.u32()? as usize;
    let header_text = std::str::from_utf8(cur.take(len)?).map_err(|_| Error::format(what, "header is not UTF-8"))?;
    let header: CorpusHeader = parse_json(Some(header_text), what)?;
    header.check()?;
    let total = header.n_train + header.n_test;
    let (mut train, mut test) = (Vec::with_capacity(header.n_train), Vec::with_capacity(header.n_test));
    for _ in 0..total {
        let side = cur.u8()?;
        let label = cur.u8()?;
        let stage = if cur.u8()? == 0 { Stage::Uniform } else { Stage::Skewed };
        let participant = Participant::from_number(cur.u8()?).ok_or_else(|| Error::format(what, "bad participant"))?;
        let t_end = cur.f64()?;
        let id_len = cur.u16()? as usize;
        let trial_id = String::from_utf8(cur.take(id_len)?.to_vec()).map_err(|_| Error::format(what, "bad trial id"))?;
        let features = (0..header.n_features).map(|_| cur.f64()).collect::<Result<_>>()?;
        let w = LabeledWindow { features, label, stage, source: WindowSource { trial_id, participant, t_end } };
        if side == 0 {
            train.push(w);
        } else {
            test.push(w);
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(what, "trailing bytes after the last record"));
    }
    header.into_corpus(train, test)
}

pub fn save_corpus(path: &Path, corpus: &Corpus, format: CorpusFormat) -> Result<()> {
    match format {
        CorpusFormat::Text => write_atomic(path, corpus_to_text(corpus).as_bytes()),
        CorpusFormat::Binary => write_atomic(path, &corpus_to_binary(corpus)),
    }
}

/// Loads either corpus form, told apart by the leading bytes.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        return corpus_from_binary(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::VersionMismatch {
        what: "corpus".into(),
        expected: format!("v{CORPUS_VERSION}"),
        found: "unrecognized file".into(),
    })?;
    corpus_from_text(&text)
}

// ---------------------------------------------------------------- models

pub fn model_to_string(model: &TrainedModel) -> String {
    format!(
        "{} variant={} fingerprint={} seed={}\n{}\n",
        magic_line("model", MODEL_VERSION),
        model.variant_name(),
        model.fingerprint,
        model.config.seed,
        json_line(model)
    )
}

/// Parses a model file. With `variant` set, a file holding another variant
/// is refused before its body is read.
pub fn model_from_str(text: &str, variant: Option<&str>) -> Result<TrainedModel> {
    let what = "model";
    let mut lines = text.lines();
    let first = lines.next();
    check_magic(first, what, MODEL_VERSION)?;
    check_complete(text, what)?;
    let field = |key: &str| {
        first
            .unwrap_or("")
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .map(str::to_string)
            .ok_or_else(|| Error::format(what, format!("header lacks `{key}`")))
    };
    let (file_variant, file_fp) = (field("variant")?, field("fingerprint")?);
    if let Some(v) = variant {
        if v != file_variant {
            return Err(Error::VariantMismatch { expected: v.to_string(), found: file_variant });
        }
    }
    let model: TrainedModel = parse_json(lines.next(), what)?;
    if model.variant_name() != file_variant {
        return Err(Error::format(what, "header variant differs from the stored model"));
    }
    if model.fingerprint != file_fp {
        return Err(Error::FingerprintMismatch { expected: file_fp, found: model.fingerprint });
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    write_atomic(path, model_to_string(model).as_bytes())
}

pub fn load_model(path: &Path, variant: Option<&str>) -> Result<TrainedModel> {
    model_from_str(&read_text(path, "model")?, variant)
}

// ---------------------------------------------------------------- manifests

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&read_bytes(path)?) })
    }
}

/// Record of one stage run: what went in, with which settings, and what
/// came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub stage: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(stage: &str, config: &impl Serialize) -> Self {
        Manifest {
            format_version: MANIFEST_VERSION,
            tool: "dyad-intent".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            stage: stage.into(),
            config: serde_json::to_value(config).expect("configs serialize"),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&read_text(path, "manifest")?).map_err(|e| Error::format("manifest", e.to_string()))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::VersionMismatch {
                what: "manifest".into(),
                expected: format!("v{MANIFEST_VERSION}"),
                found: format!("v{}", m.format_version),
            });
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate_trial, Role, ScenarioConfig};

    fn sample() -> (TrialRecording, GroundTruth) {
        generate_trial(&ScenarioConfig::new("fmt-1", [Role::hard(1), Role::follower()], 3)).unwrap()
    }

    #[test]
    fn trial_round_trip_is_exact() {
        let (trial, truth) = sample();
        assert_eq!(trial_from_str(&trial_to_string(&trial)).unwrap(), trial);
        assert_eq!(truth_from_str(&truth_to_string(&truth)).unwrap(), truth);
    }

    #[test]
    fn magic_line_checks() {
        assert!(check_magic(Some("# dyad-intent corpus v1"), "corpus", 1).is_ok());
        assert!(matches!(check_magic(Some("# dyad-intent corpus v2"), "corpus", 1), Err(Error::VersionMismatch { .. })));
        assert!(matches!(check_magic(Some("#dyad corpus"), "corpus", 1), Err(Error::VersionMismatch { .. })));
        assert!(matches!(check_magic(None, "corpus", 1), Err(Error::VersionMismatch { .. })));
        assert!(matches!(check_magic(Some("# dyad-intent model v1"), "corpus", 1), Err(Error::Format { .. })));
    }

    #[test]
    fn truth_path_sits_next_to_the_trial() {
        assert_eq!(truth_path(Path::new("d/x-1.trial.tsv")), PathBuf::from("d/x-1.truth.json"));
        assert_eq!(trial_path(Path::new("d"), "x-1"), PathBuf::from("d/x-1.trial.tsv"));
    }

    #[test]
    fn damaged_trial_rows_are_errors() {
        let (trial, _) = sample();
        let text = trial_to_string(&trial);
        let cut = &text[..text.len() - 10];
        assert!(trial_from_str(cut).is_err());
        let bad = text.replacen("\t", "\tx", 20);
        assert!(trial_from_str(&bad).is_err());
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
        assert!(matches!(read_bytes(&dir.path().join("none")), Err(Error::MissingInput(_))));
    }
}
