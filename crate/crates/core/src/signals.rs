//! Per-sample signal channels derived from a trial: interaction power, goal
//! projections, pairwise force combinations, and smoothed time derivatives.
//!
//! Channel order inside a [`SignalMatrix`] is canonical and part of the file
//! formats: signals appear in the row order of the feature-set table below,
//! the participant's own quantities first, vector components as `x, y` and
//! goal projections as `1..N`. Each signal is immediately followed by its
//! derivative channel.
//!
//! | signal            | dim | set 1 | set 2 | set 3 |
//! |-------------------|-----|-------|-------|-------|
//! | `v`               | 2   | x     |       |       |
//! | `F`               | 2   | x     |       |       |
//! | `Fsum`            | 2   | x     |       |       |
//! | `Fstr`            | 2   | x     |       |       |
//! | `P`               | 1   | x     |       | x     |
//! | `v^i`             | N   | x     | x     | x     |
//! | `F^i`             | N   | x     | x     | x     |
//! | `Fsum^i`          | N   | x     | x     |       |
//! | `Fstr^i`          | N   | x     | x     |       |
//! | `P^i`             | N   | x     | x     | x     |
//!
//! `Fstr` is the participant's own force minus the partner's, so a feature
//! vector always reads from the point of view of the participant it labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::{GoalLayout, Participant, TrialRecording};

pub type Vec2 = nalgebra::Vector2<f64>;

/// Grasp-to-goal distances below this are treated as degenerate directions.
pub const DIRECTION_EPS: f64 = 1e-6;

/// Width of the centered moving-average smoother applied before
/// differentiation and peak picking.
pub const SMOOTHING_WIDTH: usize = 5;

/// Instantaneous interaction power `F . v` (W).
pub fn raw_power(force: &Vec2, velocity: &Vec2) -> f64 {
    force.dot(velocity)
}

/// Unit vector from `grasp` toward `goal`.
pub fn goal_direction(grasp: &Vec2, goal: &Vec2) -> Option<Vec2> {
    let d = goal - grasp;
    let n = d.norm();
    (n >= DIRECTION_EPS && n.is_finite()).then(|| d / n)
}

fn direction_or_err(grasp: &Vec2, goal: &Vec2, goal_index: usize) -> Result<Vec2> {
    goal_direction(grasp, goal).ok_or(Error::DegenerateDirection {
        grasp: [grasp.x, grasp.y],
        goal: goal_index,
        eps: DIRECTION_EPS,
    })
}

/// Signed scalar projection of `x` on the line from `grasp` to `goal`.
pub fn project_to_goal(x: &Vec2, grasp: &Vec2, goal: &Vec2) -> Result<f64> {
    Ok(x.dot(&direction_or_err(grasp, goal, 0)?))
}

/// Goal-projected power: the product of the projected force and the
/// projected velocity.
pub fn projected_power(force: &Vec2, velocity: &Vec2, grasp: &Vec2, goal: &Vec2) -> Result<f64> {
    let u = direction_or_err(grasp, goal, 0)?;
    Ok(force.dot(&u) * velocity.dot(&u))
}

/// Sum and stretch of two forces: `(f_a + f_b, f_a - f_b)`.
pub fn pairwise_forces(f_a: &Vec2, f_b: &Vec2) -> (Vec2, Vec2) {
    (f_a + f_b, f_a - f_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum FeatureSet {
    /// Everything, including spatial-frame vectors and partner forces.
    Full,
    /// Goal-relative scalars only.
    Scalar,
    /// Goal-relative scalars computed from the participant's own signals.
    OwnScalar,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::Full, FeatureSet::Scalar, FeatureSet::OwnScalar];

    pub fn number(self) -> u8 {
        match self {
            FeatureSet::Full => 1,
            FeatureSet::Scalar => 2,
            FeatureSet::OwnScalar => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(FeatureSet::Full),
            2 => Some(FeatureSet::Scalar),
            3 => Some(FeatureSet::OwnScalar),
            _ => None,
        }
    }

    pub fn signals(self, n_goals: usize) -> Vec<Signal> {
        use Signal::*;
        let mut out = Vec::new();
        if self == FeatureSet::Full {
            for axis in [Axis::X, Axis::Y] {
                out.push(Velocity(axis));
            }
            for axis in [Axis::X, Axis::Y] {
                out.push(Force(axis));
            }
            for axis in [Axis::X, Axis::Y] {
                out.push(ForceSum(axis));
            }
            for axis in [Axis::X, Axis::Y] {
                out.push(Stretch(axis));
            }
        }
        if self != FeatureSet::Scalar {
            out.push(RawPower);
        }
        let goals = 1..=n_goals;
        out.extend(goals.clone().map(ProjVelocity));
        out.extend(goals.clone().map(ProjForce));
        if self != FeatureSet::OwnScalar {
            out.extend(goals.clone().map(ProjSum));
            out.extend(goals.clone().map(ProjStretch));
        }
        out.extend(goals.map(ProjPower));
        out
    }

    /// Number of channels (signals plus derivatives).
    pub fn n_channels(self, n_goals: usize) -> usize {
        2 * self.signals(n_goals).len()
    }

    /// Length of a window feature vector (four statistics per channel).
    pub fn n_features(self, n_goals: usize) -> usize {
        4 * self.n_channels(n_goals)
    }

    pub fn channel_names(self, n_goals: usize) -> Vec<String> {
        self.signals(n_goals)
            .into_iter()
            .flat_map(|s| {
                let name = s.to_string();
                let d = format!("d{name}");
                [name, d]
            })
            .collect()
    }
}

impl From<FeatureSet> for u8 {
    fn from(s: FeatureSet) -> u8 {
        s.number()
    }
}

impl TryFrom<u8> for FeatureSet {
    type Error = String;

    fn try_from(n: u8) -> std::result::Result<Self, String> {
        FeatureSet::from_number(n).ok_or_else(|| format!("feature set must be 1, 2 or 3, got {n}"))
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<u8>()
            .ok()
            .and_then(FeatureSet::from_number)
            .ok_or_else(|| Error::InvalidParameter(format!("feature set must be 1, 2 or 3, got `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    fn of(self, v: &Vec2) -> f64 {
        match self {
            Axis::X => v.x,
            Axis::Y => v.y,
        }
    }
}

/// One underived signal. Goal indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signal {
    Velocity(Axis),
    Force(Axis),
    ForceSum(Axis),
    Stretch(Axis),
    RawPower,
    ProjVelocity(usize),
    ProjForce(usize),
    ProjSum(usize),
    ProjStretch(usize),
    ProjPower(usize),
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = |a: &Axis| match a {
            Axis::X => "x",
            Axis::Y => "y",
        };
        match self {
            Signal::Velocity(a) => write!(f, "v.{}", axis(a)),
            Signal::Force(a) => write!(f, "F.{}", axis(a)),
            Signal::ForceSum(a) => write!(f, "Fsum.{}", axis(a)),
            Signal::Stretch(a) => write!(f, "Fstr.{}", axis(a)),
            Signal::RawPower => write!(f, "P"),
            Signal::ProjVelocity(i) => write!(f, "v^{i}"),
            Signal::ProjForce(i) => write!(f, "F^{i}"),
            Signal::ProjSum(i) => write!(f, "Fsum^{i}"),
            Signal::ProjStretch(i) => write!(f, "Fstr^{i}"),
            Signal::ProjPower(i) => write!(f, "P^{i}"),
        }
    }
}

/// The raw inputs of one participant at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleInputs {
    pub force: Vec2,
    pub partner_force: Vec2,
    pub velocity: Vec2,
    pub grasp: Vec2,
}

impl SampleInputs {
    pub fn from_trial(trial: &TrialRecording, k: Participant, i: usize) -> Self {
        let own = trial.series(k);
        SampleInputs {
            force: own.force[i],
            partner_force: trial.series(k.partner()).force[i],
            velocity: own.velocity[i],
            grasp: own.grasp[i],
        }
    }
}

/// Evaluates a list of signals for one sample. Goal directions are computed
/// from the current grasp position.
pub fn signal_row(signals: &[Signal], inputs: &SampleInputs, layout: &GoalLayout) -> Result<Vec<f64>> {
    let (f_sum, f_str) = pairwise_forces(&inputs.force, &inputs.partner_force);
    let mut dirs: Vec<Option<Vec2>> = vec![None; layout.n_goals()];
    let mut dir = |i: usize| -> Result<Vec2> {
        if let Some(u) = dirs[i - 1] {
            return Ok(u);
        }
        let u = direction_or_err(&inputs.grasp, &layout.goal(i), i)?;
        dirs[i - 1] = Some(u);
        Ok(u)
    };
    signals
        .iter()
        .map(|s| {
            Ok(match *s {
                Signal::Velocity(a) => a.of(&inputs.velocity),
                Signal::Force(a) => a.of(&inputs.force),
                Signal::ForceSum(a) => a.of(&f_sum),
                Signal::Stretch(a) => a.of(&f_str),
                Signal::RawPower => raw_power(&inputs.force, &inputs.velocity),
                Signal::ProjVelocity(i) => inputs.velocity.dot(&dir(i)?),
                Signal::ProjForce(i) => inputs.force.dot(&dir(i)?),
                Signal::ProjSum(i) => f_sum.dot(&dir(i)?),
                Signal::ProjStretch(i) => f_str.dot(&dir(i)?),
                Signal::ProjPower(i) => {
                    let u = dir(i)?;
                    inputs.force.dot(&u) * inputs.velocity.dot(&u)
                }
            })
        })
        .collect()
}

/// Centered moving average at index `j` of a sequence of length `n`, with
/// the window truncated at the ends.
#[inline]
pub fn smooth_at(x: impl Fn(usize) -> f64, j: usize, n: usize) -> f64 {
    let half = SMOOTHING_WIDTH / 2;
    let lo = j.saturating_sub(half);
    let hi = (j + half).min(n - 1);
    let mut sum = 0.0;
    for i in lo..=hi {
        sum += x(i);
    }
    sum / (hi - lo + 1) as f64
}

pub fn moving_average(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|j| smooth_at(|i| x[i], j, n)).collect()
}

/// Central difference at `j` (one-sided at the ends), scaled to per-second.
#[inline]
pub fn difference_at(s: impl Fn(usize) -> f64, j: usize, n: usize, rate_hz: f64) -> f64 {
    if n < 2 {
        0.0
    } else if j == 0 {
        (s(1) - s(0)) * rate_hz
    } else if j == n - 1 {
        (s(n - 1) - s(n - 2)) * rate_hz
    } else {
        (s(j + 1) - s(j - 1)) * rate_hz * 0.5
    }
}

/// First time derivative of `x`: smoothed, then central differences.
pub fn derivative(x: &[f64], rate_hz: f64) -> Vec<f64> {
    let s = moving_average(x);
    let n = s.len();
    (0..n).map(|j| difference_at(|i| s[i], j, n, rate_hz)).collect()
}

/// Channels x time for one participant of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    pub names: Vec<String>,
    /// Channel-major: `values[c][t]`.
    pub values: Vec<Vec<f64>>,
    pub rate_hz: f64,
    pub start_time: f64,
}

impl SignalMatrix {
    pub fn n_channels(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|c| self.values[c].as_slice())
    }
}

/// Signal channels for participant `k` in the canonical order of `set`,
/// each followed by its derivative.
pub fn derive_channel_matrix(
    trial: &TrialRecording,
    k: Participant,
    set: FeatureSet,
    layout: &GoalLayout,
) -> Result<SignalMatrix> {
    let signals = set.signals(layout.n_goals());
    let n = trial.len();
    let mut raw: Vec<Vec<f64>> = vec![Vec::with_capacity(n); signals.len()];
    for i in 0..n {
        let row = signal_row(&signals, &SampleInputs::from_trial(trial, k, i), layout)?;
        for (c, v) in row.into_iter().enumerate() {
            raw[c].push(v);
        }
    }
    let mut values = Vec::with_capacity(2 * signals.len());
    for x in raw {
        let d = derivative(&x, trial.rate_hz);
        values.push(x);
        values.push(d);
    }
    Ok(SignalMatrix {
        names: set.channel_names(layout.n_goals()),
        values,
        rate_hz: trial.rate_hz,
        start_time: trial.t[0],
    })
}

/// The `N + 1` power channels of one participant over a sample range.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerChannels {
    pub participant: Participant,
    pub start_time: f64,
    pub rate_hz: f64,
    /// `|P_k(t)|`.
    pub abs_power: Vec<f64>,
    /// `P_k^i(t)` for goals `1..=N`.
    pub projected: Vec<Vec<f64>>,
}

impl PowerChannels {
    pub fn len(&self) -> usize {
        self.abs_power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abs_power.is_empty()
    }

    /// `(name, values)` for each channel, `|P|` first.
    pub fn channels(&self) -> impl Iterator<Item = (String, &[f64])> {
        std::iter::once(("|P|".to_string(), self.abs_power.as_slice())).chain(
            self.projected
                .iter()
                .enumerate()
                .map(|(i, p)| (format!("P^{}", i + 1), p.as_slice())),
        )
    }
}

/// Power channels of participant `k` over samples `range`.
pub fn power_channels(
    trial: &TrialRecording,
    k: Participant,
    layout: &GoalLayout,
    range: std::ops::Range<usize>,
) -> Result<PowerChannels> {
    let s = trial.series(k);
    let n_goals = layout.n_goals();
    let mut abs_power = Vec::with_capacity(range.len());
    let mut projected = vec![Vec::with_capacity(range.len()); n_goals];
    let start_time = trial.t[range.start.min(trial.len() - 1)];
    for i in range {
        let (f, v, g) = (&s.force[i], &s.velocity[i], &s.grasp[i]);
        abs_power.push(raw_power(f, v).abs());
        for (gi, out) in projected.iter_mut().enumerate() {
            let u = direction_or_err(g, &layout.goals[gi], gi + 1)?;
            out.push(f.dot(&u) * v.dot(&u));
        }
    }
    Ok(PowerChannels { participant: k, start_time, rate_hz: trial.rate_hz, abs_power, projected })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn raw_power_examples() {
        assert_eq!(raw_power(&v(0.0, 5.0), &v(2.0, 0.0)), 0.0);
        assert_eq!(raw_power(&v(3.0, 4.0), &v(1.0, 2.0)), 11.0);
        assert_eq!(raw_power(&v(-1.0, 0.0), &v(1.0, 0.0)), -1.0);
    }

    #[test]
    fn projection_examples() {
        let o = v(0.0, 0.0);
        assert_eq!(project_to_goal(&v(3.0, 4.0), &o, &v(1.0, 0.0)).unwrap(), 3.0);
        assert_eq!(project_to_goal(&v(3.0, 4.0), &o, &v(0.0, 2.0)).unwrap(), 4.0);
        let p = project_to_goal(&v(1.0, 1.0), &v(1.0, 1.0), &v(2.0, 2.0)).unwrap();
        assert!((p - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn projected_power_examples() {
        let o = v(0.0, 0.0);
        let e = v(1.0, 0.0);
        let p = projected_power(&v(3.0, 4.0), &v(1.0, 2.0), &o, &e).unwrap();
        assert!((p - 3.0).abs() < 1e-12);
        // magnitude-cosine form: 5 * sqrt(5) * (3/5) * (1/sqrt(5))
        assert!((5.0 * 5f64.sqrt() * 0.6 * (1.0 / 5f64.sqrt()) - 3.0).abs() < 1e-12);
        assert_eq!(projected_power(&v(-2.0, 0.0), &v(1.0, 0.0), &o, &e).unwrap(), -2.0);
        assert_eq!(projected_power(&v(0.0, 1.0), &v(0.0, 1.0), &o, &e).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_direction_is_an_error() {
        let g = v(1.0, 2.0);
        let err = project_to_goal(&v(1.0, 0.0), &g, &(g + v(1e-7, 0.0))).unwrap_err();
        assert!(matches!(err, Error::DegenerateDirection { .. }));
        assert!(projected_power(&v(1.0, 0.0), &v(1.0, 0.0), &g, &g).is_err());
    }

    #[test]
    fn pairwise_force_examples() {
        let (sum, stretch) = pairwise_forces(&v(1.0, 0.0), &v(4.0, 0.0));
        assert_eq!(sum, v(5.0, 0.0));
        assert_eq!(stretch, v(-3.0, 0.0));
        assert_eq!(pairwise_forces(&v(2.0, 3.0), &v(2.0, 3.0)).1, v(0.0, 0.0));
        let (_, conflict) = pairwise_forces(&v(3.0, 0.0), &v(-3.0, 0.0));
        assert_eq!(conflict.norm(), 6.0);
        assert!(conflict.norm() > 5.0);
    }

    #[test]
    fn channel_counts_match_feature_table() {
        assert_eq!(FeatureSet::Full.signals(3).len(), 24);
        assert_eq!(FeatureSet::Scalar.signals(3).len(), 15);
        assert_eq!(FeatureSet::OwnScalar.signals(3).len(), 10);
        assert_eq!(FeatureSet::Full.n_channels(3), 48);
        assert_eq!(FeatureSet::Scalar.n_channels(3), 30);
        assert_eq!(FeatureSet::OwnScalar.n_channels(3), 20);
        let names = FeatureSet::OwnScalar.channel_names(3);
        assert_eq!(&names[..4], &["P", "dP", "v^1", "dv^1"]);
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        assert!(derivative(&[2.5; 17], 200.0).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn derivative_of_line_is_exact_in_the_interior() {
        let x: Vec<f64> = (0..40).map(|i| 3.0 * i as f64 / 200.0).collect();
        let d = derivative(&x, 200.0);
        for &di in &d[3..37] {
            assert!((di - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn moving_average_truncates_at_edges() {
        let s = moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(s[0], 2.0);
        assert_eq!(s[2], 3.0);
        assert_eq!(s[5], 5.0);
    }
}
