//! Trial recordings: synchronized per-participant force, velocity and grasp
//! position series, plus the experiment metadata of one dyad interaction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::Vec2;

pub const DEFAULT_RATE_HZ: f64 = 200.0;

/// One of the two dyad members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Participant {
    P1,
    P2,
}

impl Participant {
    pub const BOTH: [Participant; 2] = [Participant::P1, Participant::P2];

    pub fn index(self) -> usize {
        match self {
            Participant::P1 => 0,
            Participant::P2 => 1,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn partner(self) -> Participant {
        match self {
            Participant::P1 => Participant::P2,
            Participant::P2 => Participant::P1,
        }
    }

    pub fn from_number(k: u8) -> Option<Participant> {
        match k {
            1 => Some(Participant::P1),
            2 => Some(Participant::P2),
            _ => None,
        }
    }
}

impl fmt::Display for Participant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Importance of the privately assigned goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalType {
    /// Must reach the goal and convince the partner if necessary.
    Hard,
    /// Tries the goal but may concede.
    Soft,
    /// No own goal; follows the partner.
    Follower,
}

impl fmt::Display for GoalType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoalType::Hard => "hard",
            GoalType::Soft => "soft",
            GoalType::Follower => "follower",
        })
    }
}

impl FromStr for GoalType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(GoalType::Hard),
            "soft" => Ok(GoalType::Soft),
            "follower" => Ok(GoalType::Follower),
            other => Err(Error::format("goal type", format!("unknown goal type `{other}`"))),
        }
    }
}

/// Start location and the N candidate goals, in meters.
///
/// Goal indices are 1-based everywhere outside this struct; class 0 is idle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalLayout {
    pub start: Vec2,
    pub goals: Vec<Vec2>,
}

impl GoalLayout {
    pub fn new(start: Vec2, goals: Vec<Vec2>) -> Result<Self> {
        let layout = GoalLayout { start, goals };
        layout.validate()?;
        Ok(layout)
    }

    /// `n` goals on an arc of `radius` around the origin, centered on the +x
    /// axis and separated by `separation_deg`. Goal 1 is the leftmost (largest
    /// heading angle).
    pub fn fan(n: usize, radius: f64, separation_deg: f64) -> Result<Self> {
        let half = (n as f64 - 1.0) / 2.0;
        let goals = (0..n)
            .map(|i| {
                let angle = (half - i as f64) * separation_deg.to_radians();
                Vec2::new(radius * angle.cos(), radius * angle.sin())
            })
            .collect();
        GoalLayout::new(Vec2::zeros(), goals)
    }

    /// The experiment geometry: three goals 2.4 m away, 40 degrees apart.
    pub fn reference() -> Self {
        GoalLayout::fan(3, 2.4, 40.0).expect("reference layout is valid")
    }

    pub fn n_goals(&self) -> usize {
        self.goals.len()
    }

    /// Position of goal `i` (1-based).
    pub fn goal(&self, i: usize) -> Vec2 {
        self.goals[i - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.goals.is_empty() {
            return Err(Error::InvalidLayout("at least one goal is required".into()));
        }
        for (i, g) in self.goals.iter().enumerate() {
            if !(g.x.is_finite() && g.y.is_finite()) {
                return Err(Error::InvalidLayout(format!("goal {} is not finite", i + 1)));
            }
            if (g - self.start).norm() < crate::signals::DIRECTION_EPS {
                return Err(Error::InvalidLayout(format!("goal {} coincides with the start", i + 1)));
            }
        }
        Ok(())
    }

    /// Index (1-based) of the goal whose bearing from `from` is closest to `heading`.
    pub fn nearest_goal_by_heading(&self, from: Vec2, heading: Vec2) -> Option<usize> {
        if heading.norm() == 0.0 {
            return None;
        }
        let h = heading.normalize();
        self.goals
            .iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let d = g - from;
                (d.norm() > 0.0).then(|| (i + 1, d.normalize().dot(&h)))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

/// Raw series of one participant, sampled on the trial clock.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParticipantSeries {
    /// Applied force at the grasp point (N).
    pub force: Vec<Vec2>,
    /// Grasp-point velocity (m/s).
    pub velocity: Vec<Vec2>,
    /// Grasp-point position (m).
    pub grasp: Vec<Vec2>,
}

impl ParticipantSeries {
    pub fn with_capacity(n: usize) -> Self {
        ParticipantSeries {
            force: Vec::with_capacity(n),
            velocity: Vec::with_capacity(n),
            grasp: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.force.len()
    }

    pub fn is_empty(&self) -> bool {
        self.force.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticipantMeta {
    /// Assigned goal (1-based); `None` for followers.
    pub goal: Option<usize>,
    pub goal_type: GoalType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecording {
    pub id: String,
    pub dyad: String,
    pub rate_hz: f64,
    pub t: Vec<f64>,
    pub t_beep: f64,
    pub t_end: f64,
    pub layout: GoalLayout,
    pub participants: [ParticipantSeries; 2],
    pub meta: [ParticipantMeta; 2],
}

impl TrialRecording {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn series(&self, k: Participant) -> &ParticipantSeries {
        &self.participants[k.index()]
    }

    pub fn meta(&self, k: Participant) -> &ParticipantMeta {
        &self.meta[k.index()]
    }

    /// Sample index closest to time `t`, clamped to the recording.
    pub fn index_at(&self, t: f64) -> usize {
        let i = ((t - self.t[0]) * self.rate_hz).round();
        (i.max(0.0) as usize).min(self.len().saturating_sub(1))
    }

    /// First sample index with time >= `t` (within half a sample).
    pub fn index_at_or_after(&self, t: f64) -> usize {
        let i = ((t - self.t[0]) * self.rate_hz - 1e-6).ceil();
        (i.max(0.0) as usize).min(self.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if n < 2 {
            return Err(Error::InvalidTrial(format!("{}: fewer than two samples", self.id)));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::InvalidTrial(format!("{}: bad rate {}", self.id, self.rate_hz)));
        }
        for s in &self.participants {
            if s.force.len() != n || s.velocity.len() != n || s.grasp.len() != n {
                return Err(Error::InvalidTrial(format!("{}: series lengths differ", self.id)));
            }
        }
        let dt = self.dt();
        for w in self.t.windows(2) {
            if !(w[1] > w[0]) || ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0) {
                return Err(Error::InvalidTrial(format!(
                    "{}: time axis is not uniform at {} Hz",
                    self.id, self.rate_hz
                )));
            }
        }
        if self.t_beep < self.t[0] || self.t_beep > self.t_end || self.t_end > self.t[n - 1] + 0.5 * dt {
            return Err(Error::InvalidTrial(format!(
                "{}: beep {} not within [{}, {}]",
                self.id, self.t_beep, self.t[0], self.t_end
            )));
        }
        self.layout.validate()?;
        for m in &self.meta {
            if let Some(g) = m.goal {
                if g == 0 || g > self.layout.n_goals() {
                    return Err(Error::InvalidTrial(format!("{}: goal index {g} out of range", self.id)));
                }
            }
        }
        Ok(())
    }

    /// Copy of this trial with every vector quantity (forces, velocities,
    /// positions, start and goals) rotated by `angle` radians about the origin.
    pub fn rotated(&self, angle: f64) -> TrialRecording {
        let rot = nalgebra::Rotation2::new(angle);
        let r = |v: &Vec2| rot * v;
        let mut out = self.clone();
        for s in out.participants.iter_mut() {
            s.force.iter_mut().for_each(|v| *v = r(v));
            s.velocity.iter_mut().for_each(|v| *v = r(v));
            s.grasp.iter_mut().for_each(|v| *v = r(v));
        }
        out.layout.start = r(&self.layout.start);
        out.layout.goals.iter_mut().for_each(|g| *g = r(g));
        out
    }
}
