//! Window-level scores and signal-level behaviour of prediction streams.
//!
//! A prediction stream assigns a class to every sample step of a trial from
//! the window ending there; a majority-vote buffer smooths it. On top of the
//! streams: whether the assigned goal shows up during the action phase, how
//! long it takes to settle on it, and where the stream ends after a
//! participant was talked out of their goal.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{window_stats, Instance, LabeledWindow, WindowSpec};
use crate::error::{Error, Result};
use crate::learn::TrainedModel;
use crate::signals::{
    derive_channel_matrix, difference_at, signal_row, smooth_at, SampleInputs, Signal, SignalMatrix, SMOOTHING_WIDTH,
};
use crate::trial::{GoalLayout, Participant, TrialRecording};

/// A stream has to hold a label this long (s) to count as settled.
pub const SUSTAIN_SECONDS: f64 = 0.1;

/// The final stretch (s) of a trial that decides the negotiated goal.
pub const FINAL_SECONDS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; n_classes]; n_classes] }
    }

    pub fn from_pairs(n_classes: usize, pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let mut cm = ConfusionMatrix::new(n_classes);
        for (t, p) in pairs {
            cm.add(t, p);
        }
        cm
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: u8, predicted: u8) {
        self.counts[truth as usize][predicted as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.n_classes()).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total().max(1) as f64
    }

    /// Rows divided by their sums.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|r| {
                let s: u64 = r.iter().sum();
                r.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect()
            })
            .collect()
    }

    pub fn scores(&self) -> Result<Scores> {
        if self.total() == 0 {
            return Err(Error::InvalidParameter("empty confusion matrix".into()));
        }
        let n = self.n_classes();
        let mut s = Scores {
            precision: vec![0.0; n],
            recall: vec![0.0; n],
            f1: vec![0.0; n],
            undefined: vec![false; n],
            macro_f1: 0.0,
        };
        for c in 0..n {
            let tp = self.counts[c][c] as f64;
            let predicted: u64 = (0..n).map(|r| self.counts[r][c]).sum();
            let actual: u64 = self.counts[c].iter().sum();
            if predicted == 0 || actual == 0 {
                s.undefined[c] = true;
            }
            s.precision[c] = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            s.recall[c] = if actual > 0 { tp / actual as f64 } else { 0.0 };
            let denom = s.precision[c] + s.recall[c];
            s.f1[c] = if denom > 0.0 { 2.0 * s.precision[c] * s.recall[c] / denom } else { 0.0 };
        }
        s.macro_f1 = s.f1[1..].iter().sum::<f64>() / (n - 1).max(1) as f64;
        Ok(s)
    }
}

/// Per-class scores. Class 0 (idle) is excluded from the macro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// Classes never predicted or never present; their F1 is reported as 0.
    pub undefined: Vec<bool>,
    /// Mean F1 over the goal classes.
    pub macro_f1: f64,
}

/// Window-level confusion matrix of `model` on `windows`.
pub fn window_confusion(model: &TrainedModel, windows: &[LabeledWindow], n_classes: usize) -> Result<ConfusionMatrix> {
    let predicted: Vec<u8> =
        windows.par_iter().map(|w| model.predict(&w.features)).collect::<Result<_>>()?;
    Ok(ConfusionMatrix::from_pairs(n_classes, windows.iter().map(|w| w.label).zip(predicted)))
}

/// Majority vote over the last `B` raw labels (fewer while warming up).
/// Among tied classes the one seen most recently wins.
#[derive(Debug, Clone)]
pub struct VotingFilter {
    buffer: VecDeque<u8>,
    counts: Vec<usize>,
    size: usize,
}

impl VotingFilter {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("voting buffer must hold at least one label".into()));
        }
        Ok(VotingFilter { buffer: VecDeque::with_capacity(size), counts: Vec::new(), size })
    }

    pub fn push(&mut self, label: u8) -> u8 {
        if self.buffer.len() == self.size {
            let old = self.buffer.pop_front().expect("full buffer");
            self.counts[old as usize] -= 1;
        }
        if self.counts.len() <= label as usize {
            self.counts.resize(label as usize + 1, 0);
        }
        self.counts[label as usize] += 1;
        self.buffer.push_back(label);
        let top = *self.counts.iter().max().expect("nonempty");
        *self
            .buffer
            .iter()
            .rev()
            .find(|&&l| self.counts[l as usize] == top)
            .expect("a label reaches the maximum count")
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.counts.clear();
    }
}

pub fn voting_filter(raw: &[u8], size: usize) -> Result<Vec<u8>> {
    let mut f = VotingFilter::new(size)?;
    Ok(raw.iter().map(|&l| f.push(l)).collect())
}

/// Labels of one participant over a stretch of sample steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionStream {
    pub trial_id: String,
    pub participant: Participant,
    /// Time of the first step.
    pub start_time: f64,
    pub rate_hz: f64,
    pub raw: Vec<u8>,
    pub filtered: Vec<u8>,
}

impl PredictionStream {
    pub fn time(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.rate_hz
    }

    /// Step index of the first step at or after `t`.
    pub fn step_at_or_after(&self, t: f64) -> usize {
        (((t - self.start_time) * self.rate_hz - 1e-6).ceil().max(0.0) as usize).min(self.filtered.len())
    }

    pub fn refilter(&self, buffer: usize) -> Result<PredictionStream> {
        Ok(PredictionStream { filtered: voting_filter(&self.raw, buffer)?, ..self.clone() })
    }
}

/// Raw labels for every window of `spec.length` samples ending in
/// `[t_from, t_to]`.
pub fn raw_predictions(
    trial: &TrialRecording,
    k: Participant,
    model: &TrainedModel,
    spec: &WindowSpec,
    t_from: f64,
    t_to: f64,
) -> Result<(usize, Vec<u8>)> {
    let matrix = derive_channel_matrix(trial, k, spec.feature_set, &trial.layout)?;
    let first = trial.index_at_or_after(t_from).max(spec.length - 1);
    let last = trial.index_at(t_to).min(trial.len() - 1);
    let labels = (first..=last)
        .map(|j| model.predict(&window_stats(&matrix, j, spec.length)?))
        .collect::<Result<_>>()?;
    Ok((first, labels))
}

/// Prediction stream of participant `k` over the negotiation frame, the
/// voting filter starting fresh at the beep.
pub fn trial_stream(
    trial: &TrialRecording,
    k: Participant,
    model: &TrainedModel,
    spec: &WindowSpec,
    buffer: usize,
) -> Result<PredictionStream> {
    let (first, raw) = raw_predictions(trial, k, model, spec, trial.t_beep, trial.t_end)?;
    Ok(PredictionStream {
        trial_id: trial.id.clone(),
        participant: k,
        start_time: trial.t[first],
        rate_hz: trial.rate_hz,
        filtered: voting_filter(&raw, buffer)?,
        raw,
    })
}

/// Whether the filtered stream shows `goal` at some step in `[t0, tf]`.
pub fn transition_succeeded(stream: &PredictionStream, t0: f64, tf: f64, goal: usize) -> bool {
    let a = stream.step_at_or_after(t0);
    let b = stream.step_at_or_after(tf + 0.5 / stream.rate_hz);
    stream.filtered[a..b].iter().any(|&l| l as usize == goal)
}

/// Seconds from `t0` until the filtered stream settles on `goal` for at
/// least [`SUSTAIN_SECONDS`]; `None` if it never does.
pub fn transition_delay(stream: &PredictionStream, t0: f64, goal: usize) -> Option<f64> {
    let need = (SUSTAIN_SECONDS * stream.rate_hz).round().max(1.0) as usize;
    let start = stream.step_at_or_after(t0);
    let mut run_start = None;
    for i in start..stream.filtered.len() {
        if stream.filtered[i] as usize == goal {
            let s = *run_start.get_or_insert(i);
            if i + 1 - s >= need {
                return Some((stream.time(s) - t0).max(0.0));
            }
        } else {
            run_start = None;
        }
    }
    None
}

/// Most frequent filtered label over the final [`FINAL_SECONDS`], latest on ties.
pub fn final_label(stream: &PredictionStream) -> Option<u8> {
    let n = stream.filtered.len();
    let k = ((FINAL_SECONDS * stream.rate_hz).round() as usize).clamp(1, n.max(1));
    let tail = stream.filtered.get(n.checked_sub(k)?..)?;
    let mut f = VotingFilter::new(k).ok()?;
    tail.iter().map(|&l| f.push(l)).last()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub successes: usize,
    pub total: usize,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.successes as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub settled: usize,
    pub misses: usize,
}

impl DelayStats {
    pub fn from_delays(delays: &[Option<f64>]) -> Self {
        let mut d: Vec<f64> = delays.iter().flatten().copied().collect();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        DelayStats {
            mean: (n > 0).then(|| d.iter().sum::<f64>() / n as f64),
            median: (n > 0).then(|| if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) }),
            settled: n,
            misses: delays.len() - n,
        }
    }
}

/// Signal-level outcome of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub trial_id: String,
    pub participant: Participant,
    pub goal: usize,
    pub transition: bool,
    pub delay: Option<f64>,
    pub final_label: Option<u8>,
    pub final_goal: Option<usize>,
}

pub fn instance_outcome(stream: &PredictionStream, instance: &Instance) -> InstanceOutcome {
    InstanceOutcome {
        trial_id: instance.trial_id.clone(),
        participant: instance.participant,
        goal: instance.goal,
        transition: transition_succeeded(stream, instance.phase.t0, instance.phase.tf, instance.goal),
        delay: transition_delay(stream, instance.phase.t0, instance.goal),
        final_label: final_label(stream),
        final_goal: instance.final_goal,
    }
}

/// Streams for the given instances, looked up by trial id.
pub fn instance_streams<'a>(
    instances: &[&Instance],
    trials: &(dyn Fn(&str) -> Option<&'a TrialRecording> + Sync),
    model: &TrainedModel,
    spec: &WindowSpec,
    buffer: usize,
) -> Result<Vec<PredictionStream>> {
    instances
        .par_iter()
        .map(|inst| {
            let trial = trials(&inst.trial_id).ok_or_else(|| Error::Corpus(format!("trial {} not loaded", inst.trial_id)))?;
            trial_stream(trial, inst.participant, model, spec, buffer)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalReport {
    pub buffer: usize,
    pub transition: Rate,
    pub delay: DelayStats,
    /// `None` when no opposing instance was evaluated.
    pub negotiated: Option<Rate>,
    pub outcomes: Vec<InstanceOutcome>,
    pub opposing_outcomes: Vec<InstanceOutcome>,
}

/// Transition rate and delays over `regular` instances, negotiated-goal
/// accuracy over `opposing` ones.
pub fn signal_report(regular: &[(&Instance, PredictionStream)], opposing: &[(&Instance, PredictionStream)], buffer: usize) -> SignalReport {
    let outcomes: Vec<InstanceOutcome> = regular.iter().map(|(i, s)| instance_outcome(s, i)).collect();
    let opposing_outcomes: Vec<InstanceOutcome> = opposing.iter().map(|(i, s)| instance_outcome(s, i)).collect();
    let transition = Rate { successes: outcomes.iter().filter(|o| o.transition).count(), total: outcomes.len() };
    let delay = DelayStats::from_delays(&outcomes.iter().map(|o| o.delay).collect::<Vec<_>>());
    let negotiated = (!opposing_outcomes.is_empty()).then(|| Rate {
        successes: opposing_outcomes
            .iter()
            .filter(|o| o.final_goal.is_some() && o.final_label.map(usize::from) == o.final_goal)
            .count(),
        total: opposing_outcomes.len(),
    });
    SignalReport { buffer, transition, delay, negotiated, outcomes, opposing_outcomes }
}

/// One emitted step of a [`StreamingRecognizer`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamStep {
    pub index: usize,
    pub raw: u8,
    pub filtered: u8,
}

/// Samples past `j` needed before the derivative at `j` is final.
const LOOKAHEAD: usize = SMOOTHING_WIDTH / 2 + 1;

/// Sample-by-sample recognizer for one participant.
///
/// Holds the last `L + 2 * LOOKAHEAD` signal rows and the voting buffer, and
/// emits the label of the window ending at sample `j` once sample
/// `j + LOOKAHEAD` has arrived, which makes its features identical to the
/// batch features of the whole recording.
pub struct StreamingRecognizer<'m> {
    model: &'m TrainedModel,
    spec: WindowSpec,
    layout: GoalLayout,
    signals: Vec<Signal>,
    rate_hz: f64,
    /// (sample index, signal values) of recent samples.
    raw: VecDeque<(usize, Vec<f64>)>,
    /// Completed channel rows (signals interleaved with derivatives).
    rows: VecDeque<Vec<f64>>,
    filter: VotingFilter,
    received: usize,
    next_row: usize,
    filter_from: usize,
}

impl<'m> StreamingRecognizer<'m> {
    /// `filter_from` is the first sample index whose label enters the vote.
    pub fn new(model: &'m TrainedModel, spec: WindowSpec, layout: GoalLayout, rate_hz: f64, buffer: usize, filter_from: usize) -> Result<Self> {
        spec.validate(rate_hz)?;
        model.check_fingerprint(&spec.fingerprint(layout.n_goals(), rate_hz))?;
        Ok(StreamingRecognizer {
            model,
            signals: spec.feature_set.signals(layout.n_goals()),
            spec,
            layout,
            rate_hz,
            raw: VecDeque::new(),
            rows: VecDeque::new(),
            filter: VotingFilter::new(buffer)?,
            received: 0,
            next_row: 0,
            filter_from,
        })
    }

    fn raw_at(&self, i: usize) -> &[f64] {
        let front = self.raw.front().expect("buffered samples").0;
        &self.raw[i - front].1
    }

    /// Channel row of sample `j` for a recording of `n` samples.
    fn channel_row(&self, j: usize, n: usize) -> Vec<f64> {
        let n_sig = self.signals.len();
        let mut row = Vec::with_capacity(2 * n_sig);
        for c in 0..n_sig {
            let value = |i: usize| self.raw_at(i)[c];
            let smooth = |m: usize| smooth_at(value, m, n);
            row.push(value(j));
            row.push(difference_at(smooth, j, n, self.rate_hz));
        }
        row
    }

    fn emit(&mut self, j: usize, n: usize) -> Result<Option<StreamStep>> {
        let row = self.channel_row(j, n);
        self.rows.push_back(row);
        if self.rows.len() > self.spec.length {
            self.rows.pop_front();
        }
        let front = self.raw.front().map_or(0, |r| r.0);
        let keep_from = j.saturating_sub(LOOKAHEAD + 1);
        for _ in front..keep_from {
            self.raw.pop_front();
        }
        if self.rows.len() < self.spec.length {
            return Ok(None);
        }
        let matrix = SignalMatrix {
            names: Vec::new(),
            values: (0..self.rows[0].len()).map(|c| self.rows.iter().map(|r| r[c]).collect()).collect(),
            rate_hz: self.rate_hz,
            start_time: 0.0,
        };
        let raw = self.model.predict(&window_stats(&matrix, self.spec.length - 1, self.spec.length)?)?;
        let filtered = if j >= self.filter_from { self.filter.push(raw) } else { raw };
        Ok(Some(StreamStep { index: j, raw, filtered }))
    }

    /// Feeds the next sample; returns the step that became final, if any.
    pub fn push(&mut self, inputs: &SampleInputs) -> Result<Option<StreamStep>> {
        let values = signal_row(&self.signals, inputs, &self.layout)?;
        self.raw.push_back((self.received, values));
        self.received += 1;
        if self.received > self.next_row + LOOKAHEAD {
            let j = self.next_row;
            self.next_row += 1;
            // Samples up to j + LOOKAHEAD exist, so no edge truncation applies.
            return self.emit(j, usize::MAX);
        }
        Ok(None)
    }

    /// Flushes the last samples once the recording has ended.
    pub fn finish(&mut self) -> Result<Vec<StreamStep>> {
        let n = self.received;
        let mut out = Vec::new();
        while self.next_row < n {
            let j = self.next_row;
            self.next_row += 1;
            out.extend(self.emit(j, n)?);
        }
        Ok(out)
    }
}

/// Replays a whole recording through a [`StreamingRecognizer`].
pub fn replay(trial: &TrialRecording, k: Participant, model: &TrainedModel, spec: &WindowSpec, buffer: usize) -> Result<Vec<StreamStep>> {
    let from = trial.index_at_or_after(trial.t_beep);
    let mut rec = StreamingRecognizer::new(model, *spec, trial.layout.clone(), trial.rate_hz, buffer, from)?;
    let mut out = Vec::with_capacity(trial.len());
    for i in 0..trial.len() {
        out.extend(rec.push(&SampleInputs::from_trial(trial, k, i))?);
    }
    out.extend(rec.finish()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(filtered: Vec<u8>, rate: f64) -> PredictionStream {
        PredictionStream {
            trial_id: "t".into(),
            participant: Participant::P1,
            start_time: 0.0,
            rate_hz: rate,
            raw: filtered.clone(),
            filtered,
        }
    }

    #[test]
    fn perfect_matrix_scores_one() {
        let cm = ConfusionMatrix::from_pairs(4, (0..4u8).flat_map(|c| std::iter::repeat_n((c, c), 5)));
        let s = cm.scores().unwrap();
        assert!(s.f1.iter().all(|&f| f == 1.0));
        assert_eq!(s.macro_f1, 1.0);
    }

    #[test]
    fn idle_errors_do_not_touch_goal_macro() {
        let mut cm = ConfusionMatrix::new(4);
        cm.counts = vec![vec![99, 1, 0, 0], vec![0, 10, 0, 0], vec![0, 0, 10, 0], vec![0, 0, 0, 10]];
        let s = cm.scores().unwrap();
        assert!((s.recall[0] - 0.99).abs() < 1e-12);
        let p1 = 10.0 / 11.0;
        let f1_goal1 = 2.0 * p1 / (p1 + 1.0);
        assert!((s.macro_f1 - (f1_goal1 + 2.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_is_rejected() {
        assert!(ConfusionMatrix::new(3).scores().is_err());
    }

    #[test]
    fn voting_examples() {
        assert_eq!(voting_filter(&[1, 1, 2, 2, 2], 3).unwrap(), vec![1, 1, 1, 2, 2]);
        assert_eq!(voting_filter(&[3, 0, 2, 2, 1], 1).unwrap(), vec![3, 0, 2, 2, 1]);
        assert_eq!(voting_filter(&[2; 9], 4).unwrap(), vec![2; 9]);
        assert!(voting_filter(&[1], 0).is_err());
    }

    #[test]
    fn delay_counts_from_onset() {
        let rate = 100.0;
        let mut f = vec![0u8; 300];
        f[127..].iter_mut().for_each(|l| *l = 2);
        f[110..115].iter_mut().for_each(|l| *l = 2);
        let d = transition_delay(&stream(f, rate), 1.0, 2).unwrap();
        assert!((d - 0.27).abs() < 1e-9, "{d}");
        assert_eq!(transition_delay(&stream(vec![2; 300], rate), 1.0, 2), Some(0.0));
        assert_eq!(transition_delay(&stream(vec![0; 300], rate), 1.0, 2), None);
    }

    #[test]
    fn transition_and_final_label() {
        let mut f = vec![0u8; 200];
        f[120..].iter_mut().for_each(|l| *l = 3);
        let s = stream(f, 100.0);
        assert!(transition_succeeded(&s, 1.0, 1.5, 3));
        assert!(!transition_succeeded(&s, 0.2, 1.0, 3));
        assert_eq!(final_label(&s), Some(3));
        assert!(!transition_succeeded(&stream(vec![0; 200], 100.0), 0.5, 1.5, 1));
    }
}
