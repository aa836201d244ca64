//! Action-phase detection on interaction-power channels.
//!
//! For each of a participant's `N + 1` power channels the first dominant
//! peak is located (after smoothing, merging peaks closer than one reaction
//! time and dropping small ones); its rising edge from `tau * peak` up to
//! the peak is a rise period. The action phase is the first island of the
//! union of all rise periods.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{moving_average, power_channels, PowerChannels};
use crate::trial::{GoalLayout, Participant, TrialRecording};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams {
    /// Fraction of the peak that marks the rising moment.
    pub tau: f64,
    /// Peaks closer than this (s) are merged.
    pub reaction_time: f64,
    /// Peaks smaller than `eta` times the largest peak of the channel are dropped.
    pub eta: f64,
    /// Peaks smaller than this fraction of the participant's largest peak
    /// over all channels are dropped as well.
    #[serde(default)]
    pub channel_floor: f64,
}

impl Default for PhaseParams {
    fn default() -> Self {
        PhaseParams { tau: 0.1, reaction_time: 0.25, eta: 0.2, channel_floor: 0.1 }
    }
}

impl PhaseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidParameter(format!("tau must be in (0, 1), got {}", self.tau)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidParameter(format!("eta must be in (0, 1), got {}", self.eta)));
        }
        if !(self.channel_floor >= 0.0 && self.channel_floor < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "channel floor must be in [0, 1), got {}",
                self.channel_floor
            )));
        }
        if !(self.reaction_time > 0.0) {
            return Err(Error::InvalidParameter("reaction time must be positive".into()));
        }
        Ok(())
    }
}

/// A uniformly sampled channel.
#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub name: &'a str,
    pub start_time: f64,
    pub rate_hz: f64,
    pub values: &'a [f64],
}

impl<'a> Series<'a> {
    pub fn new(name: &'a str, start_time: f64, rate_hz: f64, values: &'a [f64]) -> Self {
        Series { name, start_time, rate_hz, values }
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.rate_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakEvent {
    pub index: usize,
    pub t_dominant: f64,
    pub magnitude: f64,
    pub channel: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisePeriod {
    pub t_start: f64,
    pub t_dominant: f64,
    /// The channel never dropped below the threshold before the peak.
    pub truncated: bool,
    pub channel: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionPhase {
    pub participant: Participant,
    pub t0: f64,
    pub tf: f64,
    /// Largest `|P_k|` inside `[t0, tf]` (W).
    pub strength: f64,
    pub truncated: bool,
}

/// Indices of local maxima with positive value. A flat top counts once, at
/// its first sample, when both sides of the plateau are lower.
pub fn local_peaks(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] && x[i] > 0.0 {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Merges peaks separated by less than `min_gap` seconds. Peaks are grouped
/// by chaining consecutive gaps; each group keeps its largest member, the
/// earliest one on ties.
pub fn merge_peaks(mut peaks: Vec<PeakEvent>, min_gap: f64) -> Vec<PeakEvent> {
    peaks.sort_by(|a, b| a.t_dominant.total_cmp(&b.t_dominant));
    let mut out: Vec<PeakEvent> = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    for p in peaks {
        let joins = p.t_dominant - last_time < min_gap - 1e-9;
        last_time = p.t_dominant;
        match out.last_mut() {
            Some(rep) if joins => {
                if p.magnitude > rep.magnitude {
                    *rep = p;
                }
            }
            _ => out.push(p),
        }
    }
    out
}

/// Drops peaks below `eta` times the largest magnitude.
pub fn remove_small_peaks(peaks: Vec<PeakEvent>, eta: f64) -> Vec<PeakEvent> {
    let max = peaks.iter().map(|p| p.magnitude).fold(0.0, f64::max);
    peaks.into_iter().filter(|p| p.magnitude >= eta * max).collect()
}

/// Local maxima of `channel`, merged within `reaction_time` and filtered by
/// relative magnitude `eta`. The channel is used as given; callers smooth it.
pub fn find_filtered_peaks(channel: Series<'_>, reaction_time: f64, eta: f64) -> Vec<PeakEvent> {
    let raw = local_peaks(channel.values)
        .into_iter()
        .map(|i| PeakEvent {
            index: i,
            t_dominant: channel.time(i),
            magnitude: channel.values[i],
            channel: channel.name.to_string(),
        })
        .collect();
    remove_small_peaks(merge_peaks(raw, reaction_time), eta)
}

/// Latest upward crossing of `tau * peak.magnitude` before the peak,
/// linearly interpolated. Falls back to the series start (truncated) when the
/// channel never drops below the level before the peak.
pub fn rising_onset(channel: Series<'_>, peak: &PeakEvent, tau: f64) -> RisePeriod {
    let level = tau * peak.magnitude;
    let x = channel.values;
    let mut j = peak.index.min(x.len().saturating_sub(1));
    while j > 0 && x[j - 1] >= level {
        j -= 1;
    }
    let (t_start, truncated) = if j == 0 {
        (channel.start_time, true)
    } else {
        let (a, b) = (x[j - 1], x[j]);
        let frac = if b > a { (level - a) / (b - a) } else { 1.0 };
        (channel.time(j - 1) + frac / channel.rate_hz, false)
    };
    RisePeriod { t_start, t_dominant: peak.t_dominant, truncated, channel: channel.name.to_string() }
}

/// Rise period of the first dominant peak of one smoothed channel.
pub fn first_rise_period(channel: Series<'_>, params: &PhaseParams) -> Option<RisePeriod> {
    let peaks = find_filtered_peaks(channel, params.reaction_time, params.eta);
    peaks.first().map(|p| rising_onset(channel, p, params.tau))
}

/// First island of the union of `periods`. Periods that touch within one
/// sample belong to the same island.
pub fn first_island(periods: &[RisePeriod], dt: f64) -> Option<(f64, f64, bool)> {
    let mut sorted: Vec<&RisePeriod> = periods.iter().collect();
    sorted.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    let first = sorted.first()?;
    let (t0, mut tf, mut truncated) = (first.t_start, first.t_dominant, first.truncated);
    for p in &sorted[1..] {
        if p.t_start > tf + dt {
            break;
        }
        tf = tf.max(p.t_dominant);
        truncated |= p.truncated;
    }
    Some((t0, tf, truncated))
}

/// Rise periods of every channel in `channels` (smoothed internally).
pub fn rise_periods(channels: &PowerChannels, params: &PhaseParams) -> Vec<RisePeriod> {
    let smoothed: Vec<(String, Vec<f64>)> =
        channels.channels().map(|(name, values)| (name, moving_average(values))).collect();
    let peaks: Vec<Vec<PeakEvent>> = smoothed
        .iter()
        .map(|(name, x)| {
            find_filtered_peaks(Series::new(name, channels.start_time, channels.rate_hz, x), params.reaction_time, params.eta)
        })
        .collect();
    let largest = peaks.iter().flatten().map(|p| p.magnitude).fold(0.0, f64::max);
    smoothed
        .iter()
        .zip(&peaks)
        .filter_map(|((name, x), found)| {
            let first = found.iter().find(|p| p.magnitude >= params.channel_floor * largest)?;
            Some(rising_onset(Series::new(name, channels.start_time, channels.rate_hz, x), first, params.tau))
        })
        .collect()
}

fn strength_over(channels: &[&PowerChannels], t0: f64, tf: f64) -> f64 {
    channels
        .iter()
        .flat_map(|c| {
            c.abs_power
                .iter()
                .enumerate()
                .filter(move |(i, _)| {
                    let t = c.start_time + *i as f64 / c.rate_hz;
                    t >= t0 - 1e-9 && t <= tf + 1e-9
                })
                .map(|(_, &p)| p)
        })
        .fold(0.0, f64::max)
}

/// Action phase of one participant from their power channels, or `None`
/// when no channel carries a peak.
pub fn detect_action_phase(channels: &PowerChannels, params: &PhaseParams) -> Option<ActionPhase> {
    let periods = rise_periods(channels, params);
    let (t0, tf, truncated) = first_island(&periods, 1.0 / channels.rate_hz)?;
    Some(ActionPhase {
        participant: channels.participant,
        t0,
        tf,
        strength: strength_over(&[channels], t0, tf),
        truncated,
    })
}

/// Joint detection: the union runs over both participants' channels. The
/// returned phase is attributed to `report_as`.
pub fn detect_joint_action_phase(
    channels: [&PowerChannels; 2],
    params: &PhaseParams,
    report_as: Participant,
) -> Option<ActionPhase> {
    let mut periods = rise_periods(channels[0], params);
    periods.extend(rise_periods(channels[1], params));
    let (t0, tf, truncated) = first_island(&periods, 1.0 / channels[0].rate_hz)?;
    Some(ActionPhase {
        participant: report_as,
        t0,
        tf,
        strength: strength_over(&[channels[report_as.index()]], t0, tf),
        truncated,
    })
}

/// Whether detection pools both participants' channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    #[default]
    PerParticipant,
    Joint,
}

/// Detects the action phase of participant `k` over the negotiation frame
/// `[t_beep, t_end]`.
pub fn detect_trial_phase(
    trial: &TrialRecording,
    k: Participant,
    layout: &GoalLayout,
    params: &PhaseParams,
    mode: PhaseMode,
) -> Result<Option<ActionPhase>> {
    let frame = trial.index_at_or_after(trial.t_beep)..(trial.index_at(trial.t_end) + 1).min(trial.len());
    if frame.is_empty() {
        return Ok(None);
    }
    Ok(match mode {
        PhaseMode::PerParticipant => {
            detect_action_phase(&power_channels(trial, k, layout, frame)?, params)
        }
        PhaseMode::Joint => {
            let own = power_channels(trial, k, layout, frame.clone())?;
            let other = power_channels(trial, k.partner(), layout, frame)?;
            let pair = match k {
                Participant::P1 => [&own, &other],
                Participant::P2 => [&other, &own],
            };
            detect_joint_action_phase(pair, params, k)
        }
    })
}

/// The idle interval `[t_beep, t0]` preceding an action phase.
pub fn idle_phase(t_beep: f64, phase: &ActionPhase) -> Result<(f64, f64)> {
    if phase.t0 <= t_beep {
        return Err(Error::EmptyIdle { t_beep, t0: phase.t0 });
    }
    Ok((t_beep, phase.t0))
}

#[cfg(test)]
mod tests {
    use super::*;

    const RATE: f64 = 200.0;

    fn peak(t: f64, m: f64) -> PeakEvent {
        PeakEvent { index: (t * RATE).round() as usize, t_dominant: t, magnitude: m, channel: "c".into() }
    }

    fn bump(n: usize, center: f64, width: f64, height: f64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / RATE;
                height * (-((t - center) / width).powi(2)).exp()
            })
            .collect()
    }

    fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    #[test]
    fn close_peaks_merge_keeping_the_larger() {
        let merged = merge_peaks(vec![peak(1.0, 10.0), peak(1.2, 8.0)], 0.25);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].t_dominant, 1.0);
        assert_eq!(merged[0].magnitude, 10.0);

        let kept = merge_peaks(vec![peak(1.0, 10.0), peak(1.3, 8.0)], 0.25);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn merge_ties_keep_the_earlier_peak() {
        let merged = merge_peaks(vec![peak(1.1, 5.0), peak(1.0, 5.0)], 0.25);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].t_dominant, 1.0);
    }

    #[test]
    fn filtered_peaks_on_signals() {
        let n = 600;
        let x = add(&bump(n, 1.0, 0.03, 10.0), &bump(n, 1.2, 0.03, 8.0));
        let p = find_filtered_peaks(Series::new("c", 0.0, RATE, &x), 0.25, 0.2);
        assert_eq!(p.len(), 1);
        assert!((p[0].t_dominant - 1.0).abs() < 1e-9 && (p[0].magnitude - 10.0).abs() < 1e-3);

        let x = add(&bump(n, 1.0, 0.03, 10.0), &bump(n, 1.3, 0.03, 8.0));
        let p = find_filtered_peaks(Series::new("c", 0.0, RATE, &x), 0.25, 0.2);
        assert_eq!(p.len(), 2);

        assert!(find_filtered_peaks(Series::new("c", 0.0, RATE, &vec![0.0; n]), 0.25, 0.2).is_empty());
        let ramp: Vec<f64> = (0..n).map(|i| i as f64).collect();
        assert!(find_filtered_peaks(Series::new("c", 0.0, RATE, &ramp), 0.25, 0.2).is_empty());
    }

    #[test]
    fn small_peaks_are_outliers() {
        let n = 800;
        let x = add(&bump(n, 1.0, 0.03, 1.0), &bump(n, 2.5, 0.05, 10.0));
        let p = find_filtered_peaks(Series::new("c", 0.0, RATE, &x), 0.25, 0.2);
        assert_eq!(p.len(), 1);
        assert!((p[0].t_dominant - 2.5).abs() < 1e-9);
    }

    #[test]
    fn plateau_counts_once() {
        assert_eq!(local_peaks(&[0.0, 1.0, 3.0, 3.0, 3.0, 1.0]), vec![2]);
        assert!(local_peaks(&[0.0, 1.0, 3.0, 3.0]).is_empty());
        assert!(local_peaks(&[0.0, -1.0, -3.0, -1.0, -2.0]).is_empty());
    }

    #[test]
    fn onset_on_linear_ramp() {
        // 0 -> 10 over [0, 2] s
        let x: Vec<f64> = (0..=400).map(|i| 10.0 * i as f64 / 400.0).collect();
        let p = PeakEvent { index: 400, t_dominant: 2.0, magnitude: 10.0, channel: "c".into() };
        let r = rising_onset(Series::new("c", 0.0, RATE, &x), &p, 0.1);
        assert!((r.t_start - 0.2).abs() < 1e-9, "{}", r.t_start);
        assert!(!r.truncated);
    }

    #[test]
    fn onset_on_step() {
        let x: Vec<f64> = (0..400).map(|i| if i >= 200 { 10.0 } else { 0.0 }).collect();
        let p = PeakEvent { index: 300, t_dominant: 1.5, magnitude: 10.0, channel: "c".into() };
        let r = rising_onset(Series::new("c", 0.0, RATE, &x), &p, 0.1);
        assert!((r.t_start - 1.0).abs() <= 1.0 / RATE);
    }

    #[test]
    fn onset_truncated_when_channel_starts_high() {
        let x: Vec<f64> = (0..200).map(|i| 5.0 + 5.0 * i as f64 / 199.0).collect();
        let p = PeakEvent { index: 199, t_dominant: 0.995, magnitude: 10.0, channel: "c".into() };
        let r = rising_onset(Series::new("c", 0.25, RATE, &x), &p, 0.1);
        assert_eq!(r.t_start, 0.25);
        assert!(r.truncated);
    }

    fn period(a: f64, b: f64) -> RisePeriod {
        RisePeriod { t_start: a, t_dominant: b, truncated: false, channel: "c".into() }
    }

    #[test]
    fn union_and_first_island() {
        let dt = 1.0 / RATE;
        let (t0, tf, _) = first_island(&[period(0.8, 1.4), period(0.5, 1.0)], dt).unwrap();
        assert_eq!((t0, tf), (0.5, 1.4));
        let (t0, tf, _) = first_island(&[period(2.0, 2.5), period(0.5, 1.0)], dt).unwrap();
        assert_eq!((t0, tf), (0.5, 1.0));
        assert!(first_island(&[], dt).is_none());
    }

    #[test]
    fn flat_channels_give_no_phase() {
        let ch = PowerChannels {
            participant: Participant::P1,
            start_time: 0.0,
            rate_hz: RATE,
            abs_power: vec![0.0; 300],
            projected: vec![vec![0.0; 300]; 3],
        };
        assert!(detect_action_phase(&ch, &PhaseParams::default()).is_none());
    }

    #[test]
    fn idle_interval() {
        let ph = ActionPhase { participant: Participant::P1, t0: 1.2, tf: 2.0, strength: 1.0, truncated: false };
        assert_eq!(idle_phase(0.0, &ph).unwrap(), (0.0, 1.2));
        let ph = ActionPhase { t0: 1.0, ..ph };
        assert!(matches!(idle_phase(1.0, &ph), Err(Error::EmptyIdle { .. })));
    }
}
