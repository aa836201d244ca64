//! Labeled window corpora.
//!
//! Each participant of a trial contributes one *instance*: the detected
//! action phase, the idle stretch before it and the goal it expresses.
//! Windows of `L` samples are drawn around each instance in two stages
//! (uniform over the region, then half-normal close to the idle-to-action
//! transition) and summarized by per-channel min/max/mean/std.

use log::warn;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::phase::{detect_trial_phase, idle_phase, ActionPhase, PhaseMode, PhaseParams};
use crate::rng::{rng_for, Rng};
use crate::signals::{derive_channel_matrix, moving_average, power_channels, FeatureSet, SignalMatrix, Vec2};
use crate::simgen::GroundTruth;
use crate::trial::{GoalType, Participant, TrialRecording};

/// Longest window (s) that still fits a single reaction.
pub const MAX_WINDOW_SECONDS: f64 = 0.4;

pub const WINDOW_LENGTHS: [usize; 4] = [20, 40, 60, 80];

/// Statistics extracted per channel.
pub const STATS_PER_CHANNEL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: usize,
    pub feature_set: FeatureSet,
}

impl WindowSpec {
    pub fn new(length: usize, feature_set: FeatureSet) -> Self {
        WindowSpec { length, feature_set }
    }

    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        if !WINDOW_LENGTHS.contains(&self.length) {
            return Err(Error::InvalidParameter(format!(
                "window length must be one of {WINDOW_LENGTHS:?}, got {}",
                self.length
            )));
        }
        if self.seconds(rate_hz) > MAX_WINDOW_SECONDS + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "window of {} samples at {rate_hz} Hz exceeds {MAX_WINDOW_SECONDS} s",
                self.length
            )));
        }
        Ok(())
    }

    pub fn seconds(&self, rate_hz: f64) -> f64 {
        self.length as f64 / rate_hz
    }

    pub fn n_features(&self, n_goals: usize) -> usize {
        self.feature_set.n_features(n_goals)
    }

    /// Names of the feature vector entries, `stat(channel)` in canonical order.
    pub fn feature_names(&self, n_goals: usize) -> Vec<String> {
        self.feature_set
            .channel_names(n_goals)
            .iter()
            .flat_map(|c| ["min", "max", "mean", "std"].map(|s| format!("{s}({c})")))
            .collect()
    }

    /// Hash of everything that determines the meaning of a feature vector.
    pub fn fingerprint(&self, n_goals: usize, rate_hz: f64) -> String {
        let mut h = Sha256::new();
        h.update(format!("set={};L={};goals={n_goals};rate={rate_hz};", self.feature_set, self.length));
        for name in self.feature_set.channel_names(n_goals) {
            h.update(name.as_bytes());
            h.update(b"\n");
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Windows drawn uniformly over each labeled region.
    pub n_uniform: usize,
    /// Windows drawn near the transition, per region.
    pub n_skewed: usize,
    /// Scale (s) of the half-normal offset from the transition.
    pub sigma_skew: f64,
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan { n_uniform: 8, n_skewed: 4, sigma_skew: 0.15, seed: 1 }
    }
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_skew > 0.0 && self.sigma_skew.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma_skew must be positive, got {}", self.sigma_skew)));
        }
        Ok(())
    }
}

/// Which sampling stage produced a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Uniform,
    Skewed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSource {
    pub trial_id: String,
    pub participant: Participant,
    /// Time of the last sample in the window.
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub features: Vec<f64>,
    /// 0 = idle, otherwise the goal.
    pub label: u8,
    pub stage: Stage,
    pub source: WindowSource,
}

/// Min, max, mean and population std of every channel over the `length`
/// samples ending at `end` (inclusive).
pub fn window_stats(matrix: &SignalMatrix, end: usize, length: usize) -> Result<Vec<f64>> {
    let n = matrix.len();
    if length == 0 || end >= n || end + 1 < length {
        return Err(Error::WindowOutOfRange { start: end as isize + 1 - length as isize, end, len: n });
    }
    let start = end + 1 - length;
    let mut out = Vec::with_capacity(STATS_PER_CHANNEL * matrix.n_channels());
    for channel in &matrix.values {
        let w = &channel[start..=end];
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &x in w {
            lo = lo.min(x);
            hi = hi.max(x);
            sum += x;
        }
        let mean = sum / length as f64;
        let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / length as f64;
        out.extend([lo, hi, mean, var.sqrt()]);
    }
    Ok(out)
}

/// Window end indices `j` whose window `(t_j - L/rate, t_j]` lies inside `[a, b]`.
fn feasible_ends(matrix: &SignalMatrix, length: usize, a: f64, b: f64) -> Option<(usize, usize)> {
    let rate = matrix.rate_hz;
    let lo = ((a - matrix.start_time) * rate - 1e-6).ceil() as isize + length as isize;
    let hi = ((b - matrix.start_time) * rate + 1e-6).floor() as isize;
    let lo = lo.max(length as isize - 1);
    let hi = hi.min(matrix.len() as isize - 1);
    (lo <= hi).then_some((lo as usize, hi as usize))
}

fn end_index(matrix: &SignalMatrix, t: f64) -> isize {
    ((t - matrix.start_time) * matrix.rate_hz).round() as isize
}

const SKEW_ATTEMPTS: usize = 32;

/// Labeled region handed to [`neighborhood_sample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub start: f64,
    pub end: f64,
    pub label: u8,
}

/// Two-stage sampling of one labeled region of one participant.
///
/// Stage 1 draws `n_uniform` end times uniformly over the region (whole
/// windows inside it). Stage 2 draws `n_skewed` end times at a half-normal
/// distance from `transition`: idle windows end that far before it, action
/// windows start that far after it.
pub fn neighborhood_sample(
    matrix: &SignalMatrix,
    source: (&str, Participant),
    region: Region,
    transition: f64,
    length: usize,
    plan: &SamplingPlan,
    rng: &mut Rng,
) -> Result<Vec<LabeledWindow>> {
    let mut out = Vec::with_capacity(plan.n_uniform + plan.n_skewed);
    let mut push = |j: usize, stage: Stage| -> Result<()> {
        out.push(LabeledWindow {
            features: window_stats(matrix, j, length)?,
            label: region.label,
            stage,
            source: WindowSource {
                trial_id: source.0.to_string(),
                participant: source.1,
                t_end: matrix.start_time + j as f64 / matrix.rate_hz,
            },
        });
        Ok(())
    };

    let Some((lo, hi)) = feasible_ends(matrix, length, region.start, region.end) else {
        warn!(
            "{} participant {}: region [{:.3}, {:.3}] shorter than a {length}-sample window, no samples",
            source.0, source.1, region.start, region.end
        );
        return Ok(out);
    };
    for _ in 0..plan.n_uniform {
        push(rng.random_range(lo..=hi), Stage::Uniform)?;
    }

    if plan.n_skewed == 0 {
        return Ok(out);
    }
    let half_normal = Normal::new(0.0, plan.sigma_skew).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let is_idle = region.label == 0;
    // Both kinds stay inside their region: idle windows end just before the
    // transition, action windows start just after it.
    for _ in 0..plan.n_skewed {
        let drawn = (0..SKEW_ATTEMPTS).find_map(|_| {
            let offset: f64 = half_normal.sample(rng).abs();
            let j = if is_idle {
                end_index(matrix, transition - offset)
            } else {
                end_index(matrix, transition + offset) + length as isize - 1
            };
            (j >= lo as isize && j <= hi as isize).then_some(j as usize)
        });
        match drawn {
            Some(j) => push(j, Stage::Skewed)?,
            None => warn!("{} participant {}: no feasible skewed window", source.0, source.1),
        }
    }
    Ok(out)
}

/// How an instance enters the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceTag {
    Normal,
    /// The participant was dragged (negative power) before changing intent.
    Opposing,
    /// The action phase carries too little power to express an intent.
    Weak,
}

/// One annotated participant of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub trial_id: String,
    pub dyad: String,
    pub participant: Participant,
    pub phase: ActionPhase,
    pub idle: (f64, f64),
    /// Goal expressed during the action phase.
    pub goal: usize,
    /// Goal the dyad finally agreed on.
    pub final_goal: Option<usize>,
    pub tag: InstanceTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    /// Ground-truth sidecar when present, the rule otherwise.
    #[default]
    Truth,
    /// Always the rule, ignoring any sidecar.
    Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationParams {
    pub phase: PhaseParams,
    pub mode: PhaseMode,
    pub source: AnnotationSource,
    /// Instances whose phase strength (W) stays below this are weak.
    pub weak_strength: f64,
    /// Smoothed power (W) below `-opposing_power` counts as being dragged.
    pub opposing_power: f64,
    /// Minimum duration (s) of a dragged episode.
    pub opposing_duration: f64,
    /// Final heading is taken over this many seconds before the end.
    pub final_window: f64,
    /// Below this final speed (m/s) the dyad reached no agreement.
    pub stall_speed: f64,
}

impl Default for AnnotationParams {
    fn default() -> Self {
        AnnotationParams {
            phase: PhaseParams::default(),
            mode: PhaseMode::PerParticipant,
            source: AnnotationSource::Truth,
            weak_strength: 0.05,
            opposing_power: 0.1,
            opposing_duration: 0.1,
            final_window: 0.5,
            stall_speed: 0.05,
        }
    }
}

impl AnnotationParams {
    pub fn validate(&self) -> Result<()> {
        self.phase.validate()?;
        for (name, v) in [
            ("weak_strength", self.weak_strength),
            ("opposing_power", self.opposing_power),
            ("opposing_duration", self.opposing_duration),
            ("stall_speed", self.stall_speed),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.final_window > 0.0) {
            return Err(Error::InvalidParameter("final_window must be positive".into()));
        }
        Ok(())
    }
}

fn mean_over(x: &[Vec2], range: std::ops::Range<usize>) -> Vec2 {
    let n = range.len().max(1) as f64;
    x[range].iter().sum::<Vec2>() / n
}

/// Object heading and position over the last `window` seconds of the trial.
fn final_motion(trial: &TrialRecording, window: f64) -> (Vec2, Vec2) {
    let end = (trial.index_at(trial.t_end) + 1).min(trial.len());
    let start = trial.index_at_or_after(trial.t_end - window).min(end.saturating_sub(1));
    let [a, b] = &trial.participants;
    let v = (mean_over(&a.velocity, start..end) + mean_over(&b.velocity, start..end)) / 2.0;
    let p = (a.grasp[end - 1] + b.grasp[end - 1]) / 2.0;
    (v, p)
}

/// Goal the dyad was heading to at the end of the trial, `None` when the
/// object had stalled.
pub fn final_heading_goal(trial: &TrialRecording, params: &AnnotationParams) -> Option<usize> {
    let (v, p) = final_motion(trial, params.final_window);
    if v.norm() < params.stall_speed {
        return None;
    }
    trial.layout.nearest_goal_by_heading(p, v)
}

/// Integral of participant `k`'s projected power to each goal over `[t0, tf]`.
fn projected_energy(trial: &TrialRecording, k: Participant, phase: &ActionPhase) -> Result<Vec<f64>> {
    let range = trial.index_at_or_after(phase.t0)..(trial.index_at(phase.tf) + 1).min(trial.len());
    let channels = power_channels(trial, k, &trial.layout, range)?;
    Ok(channels.projected.iter().map(|p| p.iter().sum::<f64>() / trial.rate_hz).collect())
}

/// Whether participant `k`'s smoothed power drops below the opposing level
/// for a sustained episode after the phase onset.
pub fn has_opposing_episode(trial: &TrialRecording, k: Participant, t0: f64, params: &AnnotationParams) -> bool {
    let s = trial.series(k);
    let power: Vec<f64> = s.force.iter().zip(&s.velocity).map(|(f, v)| f.dot(v)).collect();
    let smoothed = moving_average(&power);
    let need = (params.opposing_duration * trial.rate_hz).ceil().max(1.0) as usize;
    let end = (trial.index_at(trial.t_end) + 1).min(trial.len());
    let mut run = 0;
    for &p in &smoothed[trial.index_at_or_after(t0).min(end)..end] {
        run = if p < -params.opposing_power { run + 1 } else { 0 };
        if run >= need {
            return true;
        }
    }
    false
}

/// Assigned goal after re-annotation: a participant whose assigned goal
/// differs from where the dyad finally headed is relabeled to that heading
/// when their projected power during the phase favored it.
pub fn reannotated_goal(
    trial: &TrialRecording,
    k: Participant,
    phase: &ActionPhase,
    assigned: usize,
    heading: Option<usize>,
) -> Result<usize> {
    let Some(h) = heading.filter(|&h| h != assigned) else {
        return Ok(assigned);
    };
    let energy = projected_energy(trial, k, phase)?;
    Ok(if energy[h - 1] > energy[assigned - 1] { h } else { assigned })
}

/// Goal a participant was assigned; followers take their partner's.
fn assigned_goal(trial: &TrialRecording, k: Participant) -> Option<usize> {
    let own = trial.meta(k);
    match own.goal_type {
        GoalType::Follower => trial.meta(k.partner()).goal,
        _ => own.goal,
    }
}

/// Most frequent nonzero label over `[t0, tf]`, earliest goal on ties.
fn modal_intent(labels: &[u8], trial: &TrialRecording, t0: f64, tf: f64) -> Option<usize> {
    let range = trial.index_at_or_after(t0)..(trial.index_at(tf) + 1).min(labels.len());
    let mut counts = vec![0usize; trial.layout.n_goals() + 1];
    for &l in &labels[range] {
        if l != 0 {
            counts[l as usize] += 1;
        }
    }
    let best = (1..counts.len()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))?;
    (counts[best] > 0).then_some(best)
}

/// Annotates both participants of a trial. Participants without a usable
/// action phase or goal are skipped with a warning; a trial the dyad never
/// resolved yields no instances at all.
pub fn annotate_trial(
    trial: &TrialRecording,
    truth: Option<&GroundTruth>,
    params: &AnnotationParams,
) -> Result<Vec<Instance>> {
    let truth = truth.filter(|_| params.source == AnnotationSource::Truth);
    if let Some(gt) = truth {
        if gt.trial_id != trial.id {
            return Err(Error::Corpus(format!("truth for {} attached to trial {}", gt.trial_id, trial.id)));
        }
        if !gt.usable() {
            return Ok(Vec::new());
        }
    }
    let heading = final_heading_goal(trial, params);
    let final_goal = match truth {
        Some(gt) => gt.final_goal,
        None => heading,
    };
    if final_goal.is_none() {
        return Ok(Vec::new());
    }

    let mut out = Vec::with_capacity(2);
    for k in Participant::BOTH {
        let Some(phase) = detect_trial_phase(trial, k, &trial.layout, &params.phase, params.mode)? else {
            warn!("{} participant {k}: no action phase detected", trial.id);
            continue;
        };
        let Ok(idle) = idle_phase(trial.t_beep, &phase) else {
            warn!("{} participant {k}: action starts at the beep", trial.id);
            continue;
        };
        let (goal, opposing) = match truth {
            Some(gt) => (
                modal_intent(&gt.intent[k.index()], trial, phase.t0, phase.tf).unwrap_or(gt.initial_goal[k.index()]),
                gt.opposing[k.index()],
            ),
            None => {
                let Some(assigned) = assigned_goal(trial, k) else {
                    warn!("{} participant {k}: no assigned goal", trial.id);
                    continue;
                };
                (
                    reannotated_goal(trial, k, &phase, assigned, heading)?,
                    has_opposing_episode(trial, k, phase.t0, params),
                )
            }
        };
        let tag = if opposing {
            InstanceTag::Opposing
        } else if phase.strength < params.weak_strength {
            InstanceTag::Weak
        } else {
            InstanceTag::Normal
        };
        out.push(Instance {
            trial_id: trial.id.clone(),
            dyad: trial.dyad.clone(),
            participant: k,
            phase,
            idle,
            goal,
            final_goal,
            tag,
        });
    }
    Ok(out)
}

/// Windows of one instance: idle and action regions, each sampled in two stages.
pub fn sample_instance(
    trial: &TrialRecording,
    instance: &Instance,
    spec: &WindowSpec,
    plan: &SamplingPlan,
) -> Result<Vec<LabeledWindow>> {
    let matrix = derive_channel_matrix(trial, instance.participant, spec.feature_set, &trial.layout)?;
    let mut rng = rng_for(plan.seed, &format!("{}/{}", instance.trial_id, instance.participant));
    let source = (instance.trial_id.as_str(), instance.participant);
    let t0 = instance.phase.t0;
    let mut out = neighborhood_sample(
        &matrix,
        source,
        Region { start: instance.idle.0, end: instance.idle.1, label: 0 },
        t0,
        spec.length,
        plan,
        &mut rng,
    )?;
    out.extend(neighborhood_sample(
        &matrix,
        source,
        Region { start: t0, end: instance.phase.tf, label: instance.goal as u8 },
        t0,
        spec.length,
        plan,
        &mut rng,
    )?);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Whole dyads go to one side.
    #[default]
    Dyad,
    /// Individual interactions go to one side.
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { mode: SplitMode::Dyad, test_fraction: 0.15, seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

fn shuffled<T: Clone>(items: &[T], seed: u64, key: &str) -> Vec<T> {
    use rand::seq::SliceRandom;
    let mut v = items.to_vec();
    v.shuffle(&mut rng_for(seed, key));
    v
}

/// Side of every trial, in input order. The test side holds
/// `round(test_fraction * n)` trials, or the first whole dyads reaching it.
pub fn split_trials(trials: &[(&str, &str)], cfg: &SplitConfig) -> Result<Vec<Side>> {
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("test fraction must be in (0, 1), got {}", cfg.test_fraction)));
    }
    let n = trials.len();
    let target = (cfg.test_fraction * n as f64).round() as usize;
    let mut test = vec![false; n];
    match cfg.mode {
        SplitMode::Interaction => {
            let order: Vec<usize> = shuffled(&(0..n).collect::<Vec<_>>(), cfg.seed, "split/interaction");
            for &i in &order[..target] {
                test[i] = true;
            }
        }
        SplitMode::Dyad => {
            let mut dyads: Vec<&str> = trials.iter().map(|t| t.1).collect();
            dyads.sort_unstable();
            dyads.dedup();
            let mut taken = 0;
            for d in shuffled(&dyads, cfg.seed, "split/dyad") {
                if taken >= target {
                    break;
                }
                for (i, t) in trials.iter().enumerate() {
                    if t.1 == d {
                        test[i] = true;
                        taken += 1;
                    }
                }
            }
        }
    }
    Ok(test.into_iter().map(|t| if t { Side::Test } else { Side::Train }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub spec: WindowSpec,
    pub plan: SamplingPlan,
    pub split: SplitConfig,
    pub annotation: AnnotationParams,
}

impl DatasetConfig {
    pub fn new(spec: WindowSpec) -> Self {
        DatasetConfig {
            spec,
            plan: SamplingPlan::default(),
            split: SplitConfig::default(),
            annotation: AnnotationParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInstance {
    pub instance: Instance,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub config: DatasetConfig,
    pub n_goals: usize,
    pub rate_hz: f64,
    pub fingerprint: String,
    pub train: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    /// Every annotated instance with the side of its trial. Instances not
    /// tagged normal form the held-out signal-level set.
    pub instances: Vec<SplitInstance>,
    /// Trials that produced no instance (unresolved or undetectable).
    pub dropped_trials: Vec<String>,
}

impl Corpus {
    pub fn n_features(&self) -> usize {
        self.config.spec.n_features(self.n_goals)
    }

    pub fn held_out(&self) -> impl Iterator<Item = &Instance> {
        self.instances.iter().map(|s| &s.instance).filter(|i| i.tag != InstanceTag::Normal)
    }

    pub fn test_instances(&self) -> impl Iterator<Item = &Instance> {
        self.instances
            .iter()
            .filter(|s| s.side == Side::Test && s.instance.tag == InstanceTag::Normal)
            .map(|s| &s.instance)
    }

    pub fn train_trials(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.train.iter().map(|w| w.source.trial_id.as_str()).collect();
        ids.dedup();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// A trial with its optional ground-truth sidecar.
pub type AnnotatedTrial = (TrialRecording, Option<GroundTruth>);

/// Annotates, splits and samples a corpus. Opposing and weak instances are
/// kept out of both window sets and reported in [`Corpus::instances`].
pub fn build_corpus(trials: &[AnnotatedTrial], cfg: &DatasetConfig) -> Result<Corpus> {
    let first = trials.first().ok_or_else(|| Error::Corpus("no trials".into()))?;
    let (n_goals, rate_hz) = (first.0.layout.n_goals(), first.0.rate_hz);
    cfg.spec.validate(rate_hz)?;
    cfg.plan.validate()?;
    cfg.annotation.validate()?;
    for (t, _) in trials {
        if t.layout.n_goals() != n_goals || t.rate_hz != rate_hz {
            return Err(Error::Corpus(format!("{}: goal count or rate differs from {}", t.id, first.0.id)));
        }
    }
    let mut ids: Vec<&str> = trials.iter().map(|(t, _)| t.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Corpus("duplicate trial ids".into()));
    }

    let keys: Vec<(&str, &str)> = trials.iter().map(|(t, _)| (t.id.as_str(), t.dyad.as_str())).collect();
    let sides = split_trials(&keys, &cfg.split)?;

    let per_trial: Vec<(Vec<Instance>, Vec<LabeledWindow>)> = trials
        .par_iter()
        .map(|(trial, truth)| {
            trial.validate()?;
            let instances = annotate_trial(trial, truth.as_ref(), &cfg.annotation)?;
            let mut windows = Vec::new();
            for inst in instances.iter().filter(|i| i.tag == InstanceTag::Normal) {
                windows.extend(sample_instance(trial, inst, &cfg.spec, &cfg.plan)?);
            }
            Ok((instances, windows))
        })
        .collect::<Result<_>>()?;

    let mut corpus = Corpus {
        config: *cfg,
        n_goals,
        rate_hz,
        fingerprint: cfg.spec.fingerprint(n_goals, rate_hz),
        train: Vec::new(),
        test: Vec::new(),
        instances: Vec::new(),
        dropped_trials: Vec::new(),
    };
    for (((trial, _), side), (instances, windows)) in trials.iter().zip(&sides).zip(per_trial) {
        if instances.is_empty() {
            corpus.dropped_trials.push(trial.id.clone());
        }
        match side {
            Side::Train => corpus.train.extend(windows),
            Side::Test => corpus.test.extend(windows),
        }
        corpus.instances.extend(instances.into_iter().map(|instance| SplitInstance { instance, side: *side }));
    }
    check_class_support(&corpus)?;
    Ok(corpus)
}

/// Every class must appear in at least two training trials.
fn check_class_support(corpus: &Corpus) -> Result<()> {
    let mut trials_per_class = vec![Vec::<&str>::new(); corpus.n_goals + 1];
    for w in &corpus.train {
        let seen = &mut trials_per_class[w.label as usize];
        if seen.last() != Some(&w.source.trial_id.as_str()) && !seen.contains(&w.source.trial_id.as_str()) {
            seen.push(&w.source.trial_id);
        }
    }
    for (class, seen) in trials_per_class.iter().enumerate() {
        if seen.len() < 2 {
            return Err(Error::Corpus(format!(
                "class {class} appears in {} training trial(s); at least 2 are needed",
                seen.len()
            )));
        }
    }
    Ok(())
}
