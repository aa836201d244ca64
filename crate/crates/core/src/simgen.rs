//! Synthetic dyad co-manipulation trials with per-sample ground truth.
//!
//! The carried object is a planar point mass with viscous damping, held by
//! two participants at lateral grasp points. After the beep each participant
//! produces a raised-cosine force hump toward the goal they intend, at their
//! own onset time. Conflicting intents are held until one side concedes and
//! turns toward the winner's goal within one reaction time; while holding,
//! the conceding side brakes against being dragged (negative power). Forces
//! are contaminated by filtered grasp-force noise, an internal squeeze, and a
//! walking oscillation along the direction of travel; velocities carry
//! sensor noise.
//!
//! Ground-truth onsets are computed on the noise-free power channels: for
//! each channel, the first significant local maximum after the force onset
//! and the latest crossing of `tau` times that maximum before it.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::PhaseParams;
use crate::rng::{derive_seed, rng_from, Rng};
use crate::signals::{goal_direction, Vec2};
use crate::trial::{
    GoalLayout, GoalType, Participant, ParticipantMeta, ParticipantSeries, TrialRecording, DEFAULT_RATE_HZ,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Decisive,
    Indecisive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Role {
    /// 1-based goal; `None` for followers.
    pub goal: Option<usize>,
    pub goal_type: GoalType,
    pub behavior: Behavior,
}

impl Role {
    pub fn hard(goal: usize) -> Self {
        Role { goal: Some(goal), goal_type: GoalType::Hard, behavior: Behavior::Decisive }
    }

    pub fn soft(goal: usize, behavior: Behavior) -> Self {
        Role { goal: Some(goal), goal_type: GoalType::Soft, behavior }
    }

    pub fn follower() -> Self {
        Role { goal: None, goal_type: GoalType::Follower, behavior: Behavior::Indecisive }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Force fluctuation proportional to the intended force (fraction).
    pub force_rel_std: f64,
    /// Standard deviation of the isotropic grasp-force fluctuation (N).
    pub grasp_force_std: f64,
    /// Lag-one correlation of both force fluctuations at the sample rate.
    pub grasp_force_corr: f64,
    /// Upper bound of the internal squeeze force (N).
    pub squeeze_max: f64,
    /// Walking oscillation amplitude at full gait (N).
    pub walk_amplitude: f64,
    /// Object speed at which the gait, and its oscillation, is fully developed (m/s).
    pub walk_full_speed: f64,
    pub walk_freq_min: f64,
    pub walk_freq_max: f64,
    /// Velocity sensor noise (m/s).
    pub velocity_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            force_rel_std: 0.06,
            grasp_force_std: 0.06,
            grasp_force_corr: 0.8,
            squeeze_max: 0.0,
            walk_amplitude: 0.15,
            walk_full_speed: 0.5,
            walk_freq_min: 1.8,
            walk_freq_max: 2.2,
            velocity_std: 0.003,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            force_rel_std: 0.0,
            grasp_force_std: 0.0,
            grasp_force_corr: 0.0,
            squeeze_max: 0.0,
            walk_amplitude: 0.0,
            walk_full_speed: 0.5,
            walk_freq_min: 2.0,
            walk_freq_max: 2.0,
            velocity_std: 0.0,
        }
    }

    /// Multiplies every noise amplitude by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        NoiseConfig {
            force_rel_std: self.force_rel_std * k,
            grasp_force_std: self.grasp_force_std * k,
            squeeze_max: self.squeeze_max * k,
            walk_amplitude: self.walk_amplitude * k,
            velocity_std: self.velocity_std * k,
            ..*self
        }
    }

    pub fn is_silent(&self) -> bool {
        self.force_rel_std == 0.0
            && self.grasp_force_std == 0.0
            && self.squeeze_max == 0.0
            && self.walk_amplitude == 0.0
            && self.velocity_std == 0.0
    }
}

/// Plausibility parameters of the simulated humans and object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub mass: f64,
    /// Viscous damping of the carried object (N s/m).
    pub damping: f64,
    /// Lateral offset of each grasp point from the object center (m).
    pub grasp_offset: f64,
    pub pre_beep: f64,
    /// Range of the delay from the beep to a leader's force onset (s).
    pub onset_min: f64,
    pub onset_max: f64,
    /// Range of the hump rise time (s).
    pub rise_min: f64,
    pub rise_max: f64,
    pub decisive_amplitude: (f64, f64),
    pub indecisive_amplitude: (f64, f64),
    /// Force a hard participant escalates to once a conflict is perceived (N).
    pub hard_conflict_amplitude: (f64, f64),
    /// Steady force while walking toward the agreed goal (N).
    pub cruise_force: f64,
    pub reaction_time: f64,
    /// Probability that a soft participant concedes to a hard one.
    pub p_yield: f64,
    /// Resistance of a participant being dragged away from their goal (N s/m).
    pub opposing_brake: f64,
    /// Resistance of each participant while a stalemate persists (N s/m).
    pub stalemate_brake: f64,
    /// Damping of a participant who has not acted yet (N s/m).
    pub passive_drag: f64,
    /// Winners push at least this factor harder than the conceding side.
    pub dominance_ratio: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            mass: 2.1,
            damping: 8.0,
            grasp_offset: 0.25,
            pre_beep: 0.5,
            onset_min: 0.6,
            onset_max: 1.4,
            rise_min: 0.4,
            rise_max: 1.0,
            decisive_amplitude: (3.2, 4.2),
            indecisive_amplitude: (2.2, 3.2),
            hard_conflict_amplitude: (8.0, 9.5),
            cruise_force: 1.8,
            reaction_time: 0.25,
            p_yield: 0.9,
            opposing_brake: 20.0,
            stalemate_brake: 80.0,
            passive_drag: 0.5,
            dominance_ratio: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    pub dyad: String,
    pub layout: GoalLayout,
    pub rate_hz: f64,
    pub roles: [Role; 2],
    pub noise: NoiseConfig,
    pub dynamics: DynamicsConfig,
    /// Scales every intent amplitude; models a dyad's style.
    pub dyad_gain: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(id: impl Into<String>, roles: [Role; 2], seed: u64) -> Self {
        ScenarioConfig {
            id: id.into(),
            dyad: "dyad-00".into(),
            layout: GoalLayout::reference(),
            rate_hz: DEFAULT_RATE_HZ,
            roles,
            noise: NoiseConfig::default(),
            dynamics: DynamicsConfig::default(),
            dyad_gain: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let d = &self.dynamics;
        if !(d.mass > 0.0) || !(d.damping > 0.0) {
            return Err(Error::InvalidParameter("mass and damping must be positive".into()));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::InvalidParameter("rate must be positive".into()));
        }
        if self.roles.iter().all(|r| r.goal_type == GoalType::Follower) {
            return Err(Error::InvalidParameter("at least one participant needs a goal".into()));
        }
        for r in &self.roles {
            match (r.goal_type, r.goal) {
                (GoalType::Follower, None) => {}
                (GoalType::Follower, Some(_)) => {
                    return Err(Error::InvalidParameter("followers have no goal".into()))
                }
                (_, Some(g)) if g >= 1 && g <= self.layout.n_goals() => {}
                _ => return Err(Error::InvalidParameter(format!("bad goal for {:?}", r.goal_type))),
            }
        }
        if d.onset_min < 0.4 {
            return Err(Error::InvalidParameter("onset delay below the 0.4 s idle budget".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trial_id: String,
    /// Per participant, per sample: 0 = idle, otherwise the intended goal.
    pub intent: [Vec<u8>; 2],
    /// Start of the intent force hump.
    pub force_onset: [f64; 2],
    /// Action-phase onset on the noise-free power channels.
    pub onset: [f64; 2],
    /// Consensus moment: the peak whose rising edge defines `onset`.
    pub peak_time: [f64; 2],
    /// Interval around `peak_time` where the same noise-free channel stays
    /// within [`PEAK_REGION`] of the peak value.
    pub peak_window: [(f64, f64); 2],
    pub initial_goal: [usize; 2],
    /// Agreed goal; `None` for stalemates.
    pub final_goal: Option<usize>,
    pub opposing: [bool; 2],
    pub conflict: bool,
    /// Largest stretch force magnitude of the noise-free forces (N).
    pub max_stretch: f64,
    pub concession_time: Option<f64>,
    pub stalemate: bool,
    pub snr_db: [f64; 2],
}

impl GroundTruth {
    pub fn usable(&self) -> bool {
        !self.stalemate
    }
}

#[derive(Debug, Clone, Copy)]
struct Concession {
    at: f64,
    to: usize,
}

const ESCALATION_RAMP: f64 = 0.3;
const BRAKE_RAMP: f64 = 0.3;
const WINNER_DECAY: f64 = 0.5;

#[derive(Debug, Clone)]
struct Plan {
    onset: f64,
    rise: f64,
    amplitude: f64,
    cruise: f64,
    goal: usize,
    /// Start time and target amplitude of a conflict escalation.
    escalation: Option<(f64, f64)>,
    hold_until: Option<f64>,
    concession: Option<Concession>,
    resist_from: Option<f64>,
    brake: f64,
}

fn raised_cosine(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    0.5 * (1.0 - (std::f64::consts::PI * x).cos())
}

impl Plan {
    fn new(onset: f64, rise: f64, amplitude: f64, cruise: f64, goal: usize) -> Self {
        Plan {
            onset,
            rise,
            amplitude,
            cruise,
            goal,
            escalation: None,
            hold_until: None,
            concession: None,
            resist_from: None,
            brake: 0.0,
        }
    }

    fn amplitude_at(&self, t: f64) -> f64 {
        match self.escalation {
            Some((from, target)) => {
                self.amplitude + (target - self.amplitude) * raised_cosine((t - from) / ESCALATION_RAMP)
            }
            None => self.amplitude,
        }
    }

    /// Largest amplitude the plan reaches.
    fn peak_amplitude(&self) -> f64 {
        self.escalation.map_or(self.amplitude, |e| e.1.max(self.amplitude))
    }

    /// Magnitude of the intent force at time `t`.
    fn magnitude(&self, t: f64, reaction: f64) -> f64 {
        let s = t - self.onset;
        if s < 0.0 {
            return 0.0;
        }
        let a = self.amplitude_at(t);
        if s < self.rise {
            return a * raised_cosine(s / self.rise);
        }
        let (decay_from, decay_len) = match (self.concession, self.hold_until) {
            (Some(c), _) => (c.at, reaction),
            (None, Some(h)) => (h, WINNER_DECAY),
            (None, None) => (self.onset + self.rise, self.rise),
        };
        if t < decay_from {
            a
        } else {
            a + (self.cruise - a) * raised_cosine((t - decay_from) / decay_len)
        }
    }

    fn goal_at(&self, t: f64) -> usize {
        match self.concession {
            Some(c) if t >= c.at => c.to,
            _ => self.goal,
        }
    }

    fn direction(&self, t: f64, grasp: &Vec2, layout: &GoalLayout, reaction: f64) -> Vec2 {
        let own = goal_direction(grasp, &layout.goal(self.goal)).unwrap_or_else(Vec2::zeros);
        match self.concession {
            Some(c) if t >= c.at => {
                let to = goal_direction(grasp, &layout.goal(c.to)).unwrap_or_else(Vec2::zeros);
                let w = raised_cosine((t - c.at) / reaction);
                let d = own * (1.0 - w) + to * w;
                if d.norm() > 0.0 {
                    d.normalize()
                } else {
                    to
                }
            }
            _ => own,
        }
    }

    fn brake_gain(&self, t: f64, reaction: f64) -> f64 {
        let Some(r) = self.resist_from else { return 0.0 };
        if t < r {
            return 0.0;
        }
        let release = self.concession.map_or(0.0, |c| raised_cosine((t - c.at) / reaction));
        self.brake * raised_cosine((t - r) / BRAKE_RAMP) * (1.0 - release)
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

struct Resolution {
    plans: [Plan; 2],
    final_goal: Option<usize>,
    conflict: bool,
    stalemate: bool,
    concession_time: Option<f64>,
    t_end: f64,
}

fn plan_trial(cfg: &ScenarioConfig, rng: &mut Rng, t_beep: f64) -> Resolution {
    let d = &cfg.dynamics;
    let gain = cfg.dyad_gain;
    // fixed draw order keeps trials reproducible
    let mut plans: Vec<Plan> = Vec::with_capacity(2);
    let mut hard_targets = [0.0; 2];
    for (k, r) in cfg.roles.iter().enumerate() {
        let onset = t_beep + uniform(rng, d.onset_min, d.onset_max);
        let rise = uniform(rng, d.rise_min, d.rise_max);
        let (lo, hi) = match r.behavior {
            Behavior::Decisive => d.decisive_amplitude,
            Behavior::Indecisive => d.indecisive_amplitude,
        };
        let amplitude = gain * uniform(rng, lo, hi);
        hard_targets[k] = gain * uniform(rng, d.hard_conflict_amplitude.0, d.hard_conflict_amplitude.1);
        plans.push(Plan::new(onset, rise, amplitude, gain * d.cruise_force, r.goal.unwrap_or(1)));
    }
    let follow_lag = uniform(rng, 0.05, 0.3);
    let hold = uniform(rng, 0.3, 0.6);
    let yield_draw: f64 = rng.random();
    let tail = uniform(rng, 1.2, 1.6);
    let [mut p0, mut p1] = [plans[0].clone(), plans[1].clone()];
    let roles = cfg.roles;
    let agreed = |p0: Plan, p1: Plan, goal: usize| {
        let end = [&p0, &p1].iter().map(|p| p.onset + 2.0 * p.rise).fold(0.0, f64::max) + tail;
        Resolution {
            plans: [p0, p1],
            final_goal: Some(goal),
            conflict: false,
            stalemate: false,
            concession_time: None,
            t_end: end,
        }
    };

    if roles[0].goal_type == GoalType::Follower || roles[1].goal_type == GoalType::Follower {
        let (leader, follower) =
            if roles[0].goal_type == GoalType::Follower { (&p1, &mut p0) } else { (&p0, &mut p1) };
        follower.goal = leader.goal;
        follower.onset = leader.onset + d.reaction_time + follow_lag;
        let goal = leader.goal;
        return agreed(p0, p1, goal);
    }
    if p0.goal == p1.goal {
        let goal = p0.goal;
        return agreed(p0, p1, goal);
    }

    // conflicting goals; two hard participants escalate once the conflict is perceived
    let perceived = p0.onset.max(p1.onset) + d.reaction_time;
    if roles.iter().all(|r| r.goal_type == GoalType::Hard) {
        for (k, p) in [&mut p0, &mut p1].into_iter().enumerate() {
            p.escalation = Some((perceived, hard_targets[k].max(p.amplitude)));
        }
    }
    let loser = match (roles[0].goal_type, roles[1].goal_type) {
        (GoalType::Hard, GoalType::Hard) => None,
        (GoalType::Hard, _) => (yield_draw < d.p_yield).then_some(1),
        (_, GoalType::Hard) => (yield_draw < d.p_yield).then_some(0),
        _ => Some(if p0.peak_amplitude() < p1.peak_amplitude() { 0 } else { 1 }),
    };
    let engaged = [&p0, &p1]
        .iter()
        .map(|p| (p.onset + p.rise).max(perceived + ESCALATION_RAMP))
        .fold(0.0, f64::max);
    let mut plans = [p0, p1];
    match loser {
        None => {
            let end = engaged + 2.0;
            for p in plans.iter_mut() {
                p.hold_until = Some(end + 1.0);
                p.resist_from = Some(perceived);
                p.brake = d.stalemate_brake;
            }
            Resolution { plans, final_goal: None, conflict: true, stalemate: true, concession_time: None, t_end: end }
        }
        Some(l) => {
            let w = 1 - l;
            let at = engaged + hold;
            let floor = d.dominance_ratio * plans[l].peak_amplitude();
            if plans[w].peak_amplitude() < floor {
                let from = plans[w].escalation.map_or(perceived, |e| e.0);
                plans[w].escalation = Some((from, floor));
            }
            plans[w].hold_until = Some(at + d.reaction_time);
            let to = plans[w].goal;
            plans[l].concession = Some(Concession { at, to });
            plans[l].resist_from = Some((plans[l].onset + plans[l].rise).max(perceived));
            plans[l].brake = d.opposing_brake;
            Resolution {
                plans,
                final_goal: Some(to),
                conflict: true,
                stalemate: false,
                concession_time: Some(at),
                t_end: at + d.reaction_time + tail,
            }
        }
    }
}

/// Relative level that bounds the region of a broad power peak.
pub const PEAK_REGION: f64 = 0.9;

/// Contiguous interval around sample `pi` where `x` stays at or above
/// `frac * x[pi]`.
fn peak_region(x: &[f64], pi: usize, frac: f64, rate: f64) -> (f64, f64) {
    let level = frac * x[pi];
    let mut a = pi;
    while a > 0 && x[a - 1] >= level {
        a -= 1;
    }
    let mut b = pi;
    while b + 1 < x.len() && x[b + 1] >= level {
        b += 1;
    }
    (a as f64 / rate, b as f64 / rate)
}

/// Exact update of `m v' = F - c v` over `dt` with constant `F`.
fn integrate(p: &mut Vec2, v: &mut Vec2, force: Vec2, mass: f64, damping: f64, dt: f64) {
    let v_inf = force / damping;
    let decay = (-damping * dt / mass).exp();
    let dv = *v - v_inf;
    *p += v_inf * dt + dv * (mass / damping) * (1.0 - decay);
    *v = v_inf + dv * decay;
}

/// Noise-free power channels of one participant: `|P|` then `P^1..P^N`.
fn clean_power(force: &[Vec2], velocity: &[Vec2], grasp: &[Vec2], layout: &GoalLayout) -> Vec<Vec<f64>> {
    let n = force.len();
    let mut out = vec![Vec::with_capacity(n); layout.n_goals() + 1];
    for i in 0..n {
        out[0].push(force[i].dot(&velocity[i]).abs());
        for g in 1..=layout.n_goals() {
            let u = goal_direction(&grasp[i], &layout.goal(g)).unwrap_or_else(Vec2::zeros);
            out[g].push(force[i].dot(&u) * velocity[i].dot(&u));
        }
    }
    out
}

/// Onset, time and value of the first significant local maximum of `x` at
/// or after `from`. Significant means at least `eta` times the channel
/// maximum and at least `floor`.
fn clean_channel_onset(x: &[f64], from: usize, tau: f64, eta: f64, floor: f64, rate: f64) -> Option<(f64, f64, f64)> {
    let n = x.len();
    let max = x[from..].iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    let level = (eta * max).max(floor);
    let pi = (from.max(1)..n - 1).find(|&i| x[i] >= level && x[i] > x[i - 1] && x[i] >= x[i + 1])?;
    let cross = tau * x[pi];
    let mut j = pi;
    while j > 0 && x[j - 1] >= cross {
        j -= 1;
    }
    let onset = if j == 0 {
        0.0
    } else {
        let (a, b) = (x[j - 1], x[j]);
        (j - 1) as f64 / rate + (cross - a) / (b - a) / rate
    };
    Some((onset, pi as f64 / rate, x[pi]))
}

/// Simulates one trial.
pub fn generate_trial(cfg: &ScenarioConfig) -> Result<(TrialRecording, GroundTruth)> {
    cfg.validate()?;
    let mut rng = rng_from(cfg.seed);
    let d = cfg.dynamics;
    let layout = &cfg.layout;
    let rate = cfg.rate_hz;
    let dt = 1.0 / rate;
    let t_beep = d.pre_beep;
    let res = plan_trial(cfg, &mut rng, t_beep);
    let noise = cfg.noise;
    let n = (res.t_end * rate).floor() as usize + 1;

    let squeeze = uniform(&mut rng, 0.0, noise.squeeze_max);
    let walk_freq = [
        uniform(&mut rng, noise.walk_freq_min, noise.walk_freq_max),
        uniform(&mut rng, noise.walk_freq_min, noise.walk_freq_max),
    ];
    let walk_phase = [uniform(&mut rng, 0.0, std::f64::consts::TAU), uniform(&mut rng, 0.0, std::f64::consts::TAU)];
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    // AR(1) fluctuations with unit stationary variance
    let ar = noise.grasp_force_corr.clamp(0.0, 0.999);
    let innovation = (1.0 - ar * ar).sqrt();
    let mut grasp_noise = [Vec2::zeros(); 2];
    let mut tremor = [0.0f64; 2];

    let offsets = [Vec2::new(0.0, d.grasp_offset), Vec2::new(0.0, -d.grasp_offset)];
    let mut pos = layout.start;
    let mut vel = Vec2::zeros();

    let mut t = Vec::with_capacity(n);
    let mut rec = [ParticipantSeries::with_capacity(n), ParticipantSeries::with_capacity(n)];
    let mut clean_f = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut noise_f = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut true_v = Vec::with_capacity(n);

    for step in 0..n {
        let time = step as f64 * dt;
        t.push(time);
        let speed = vel.norm();
        let heading = if speed > 1e-9 { vel / speed } else { Vec2::zeros() };
        let gait = (speed / noise.walk_full_speed.max(1e-9)).min(1.0);
        let mut total = Vec2::zeros();
        for k in 0..2 {
            let plan = &res.plans[k];
            let grasp = pos + offsets[k];
            let intent = if time < plan.onset {
                -vel * d.passive_drag
            } else {
                plan.direction(time, &grasp, layout, d.reaction_time) * plan.magnitude(time, d.reaction_time)
                    - vel * plan.brake_gain(time, d.reaction_time)
            };
            tremor[k] = tremor[k] * ar + std_normal.sample(&mut rng) * innovation;
            let gn = &mut grasp_noise[k];
            *gn = *gn * ar
                + Vec2::new(std_normal.sample(&mut rng), std_normal.sample(&mut rng)) * innovation;
            let inward = -offsets[k] / d.grasp_offset;
            let walk = heading
                * (noise.walk_amplitude
                    * gait
                    * (std::f64::consts::TAU * walk_freq[k] * time + walk_phase[k]).sin());
            let disturbance =
                intent * (tremor[k] * noise.force_rel_std) + *gn * noise.grasp_force_std + inward * squeeze + walk;
            let force = intent + disturbance;
            total += force;
            let v_meas = vel
                + Vec2::new(std_normal.sample(&mut rng), std_normal.sample(&mut rng)) * noise.velocity_std;
            rec[k].force.push(force);
            rec[k].velocity.push(v_meas);
            rec[k].grasp.push(grasp);
            clean_f[k].push(intent);
            noise_f[k].push(disturbance);
        }
        true_v.push(vel);
        integrate(&mut pos, &mut vel, total, d.mass, d.damping, dt);
    }

    let t_end = t[n - 1];
    let params = PhaseParams::default();
    let mut onset = [0.0; 2];
    let mut peak_time = [0.0; 2];
    let mut peak_window = [(0.0, 0.0); 2];
    let mut intent = [vec![0u8; n], vec![0u8; n]];
    let mut opposing = [false; 2];
    let mut snr_db = [0.0; 2];
    for k in 0..2 {
        let plan = &res.plans[k];
        let grasp = &rec[k].grasp;
        let channels = clean_power(&clean_f[k], &true_v, grasp, layout);
        let from = ((plan.onset * rate).ceil() as usize).min(n - 1);
        let largest = channels.iter().flat_map(|c| c[from..].iter()).cloned().fold(0.0, f64::max);
        let floor = params.channel_floor * largest;
        // the channel with the earliest rising edge sets both onset and peak
        let first = channels
            .iter()
            .filter_map(|c| clean_channel_onset(c, from, params.tau, params.eta, floor, rate).map(|h| (c, h)))
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0));
        match first {
            Some((c, (t0, tp, _))) => {
                onset[k] = t0;
                peak_time[k] = tp;
                let pi = ((tp * rate).round() as usize).min(n - 1);
                peak_window[k] = peak_region(c, pi, PEAK_REGION, rate);
            }
            None => {
                onset[k] = plan.onset;
                peak_time[k] = plan.onset + plan.rise;
                peak_window[k] = (peak_time[k], peak_time[k]);
            }
        }
        for (i, lab) in intent[k].iter_mut().enumerate() {
            if t[i] >= onset[k] {
                *lab = plan.goal_at(t[i]) as u8;
            }
        }
        if let (Some(r), Some(c)) = (plan.resist_from, plan.concession) {
            opposing[k] = (0..n)
                .filter(|&i| t[i] >= r && t[i] <= c.at)
                .any(|i| clean_f[k][i].dot(&true_v[i]) < -0.1);
        }
        let active = from..n;
        let sig: f64 = active.clone().map(|i| clean_f[k][i].norm_squared()).sum();
        let noi: f64 = active.map(|i| noise_f[k][i].norm_squared()).sum();
        snr_db[k] = if noi > 0.0 { 10.0 * (sig / noi).log10() } else { f64::INFINITY };
    }
    let max_stretch = (0..n).map(|i| (clean_f[0][i] - clean_f[1][i]).norm()).fold(0.0, f64::max);

    let trial = TrialRecording {
        id: cfg.id.clone(),
        dyad: cfg.dyad.clone(),
        rate_hz: rate,
        t,
        t_beep,
        t_end,
        layout: layout.clone(),
        participants: rec,
        meta: [0, 1].map(|k| ParticipantMeta { goal: cfg.roles[k].goal, goal_type: cfg.roles[k].goal_type }),
    };
    let truth = GroundTruth {
        trial_id: cfg.id.clone(),
        intent,
        force_onset: [res.plans[0].onset, res.plans[1].onset],
        onset,
        peak_time,
        peak_window,
        initial_goal: [res.plans[0].goal, res.plans[1].goal],
        final_goal: res.final_goal,
        opposing,
        conflict: res.conflict,
        max_stretch,
        concession_time: res.concession_time,
        stalemate: res.stalemate,
        snr_db,
    };
    Ok((trial, truth))
}

/// Pairings of goal types a corpus draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolePair {
    HardFollower,
    SoftFollower,
    HardSoft,
    SoftSoft,
    HardHard,
}

impl RolePair {
    pub const ALL: [RolePair; 5] =
        [RolePair::HardFollower, RolePair::SoftFollower, RolePair::HardSoft, RolePair::SoftSoft, RolePair::HardHard];

    pub fn name(self) -> &'static str {
        match self {
            RolePair::HardFollower => "hard-follower",
            RolePair::SoftFollower => "soft-follower",
            RolePair::HardSoft => "hard-soft",
            RolePair::SoftSoft => "soft-soft",
            RolePair::HardHard => "hard-hard",
        }
    }
}

/// Relative frequency of each role pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleMix {
    pub weights: Vec<(RolePair, f64)>,
}

impl Default for RoleMix {
    fn default() -> Self {
        RoleMix {
            weights: vec![
                (RolePair::HardFollower, 0.20),
                (RolePair::SoftFollower, 0.15),
                (RolePair::HardSoft, 0.25),
                (RolePair::SoftSoft, 0.20),
                (RolePair::HardHard, 0.20),
            ],
        }
    }
}

impl RoleMix {
    /// Parses `pair=weight` items separated by commas, e.g.
    /// `hard-follower=0.2,hard-hard=0.2`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut weights = Vec::new();
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let (name, w) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("mix item `{item}` is not pair=weight")))?;
            let pair = RolePair::ALL
                .into_iter()
                .find(|p| p.name() == name.trim())
                .ok_or_else(|| Error::InvalidParameter(format!("unknown role pair `{name}`")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad weight in `{item}`")))?;
            if !(w >= 0.0) {
                return Err(Error::InvalidParameter(format!("negative weight in `{item}`")));
            }
            weights.push((pair, w));
        }
        let mix = RoleMix { weights };
        if mix.total() <= 0.0 {
            return Err(Error::InvalidParameter("role mix has no positive weight".into()));
        }
        Ok(mix)
    }

    fn total(&self) -> f64 {
        self.weights.iter().map(|w| w.1).sum()
    }

    pub fn to_spec_string(&self) -> String {
        self.weights.iter().map(|(p, w)| format!("{}={}", p.name(), w)).collect::<Vec<_>>().join(",")
    }

    fn sample(&self, rng: &mut Rng) -> RolePair {
        let mut x = rng.random::<f64>() * self.total();
        for &(p, w) in &self.weights {
            if x < w {
                return p;
            }
            x -= w;
        }
        self.weights.last().expect("nonempty mix").0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_trials: usize,
    pub mix: RoleMix,
    pub seed: u64,
    pub trials_per_dyad: usize,
    pub noise: NoiseConfig,
    pub dynamics: DynamicsConfig,
    pub layout: GoalLayout,
}

impl CorpusConfig {
    pub fn new(n_trials: usize, seed: u64) -> Self {
        CorpusConfig {
            n_trials,
            mix: RoleMix::default(),
            seed,
            trials_per_dyad: 12,
            noise: NoiseConfig::default(),
            dynamics: DynamicsConfig::default(),
            layout: GoalLayout::reference(),
        }
    }
}

/// Scenario of trial `index` of a corpus.
pub fn corpus_scenario(cfg: &CorpusConfig, index: usize) -> ScenarioConfig {
    let id = format!("sim{}-{:04}", cfg.seed, index);
    let dyad = format!("dyad-{:03}", index / cfg.trials_per_dyad.max(1));
    let mut rng = rng_from(derive_seed(cfg.seed, &id));
    let n_goals = cfg.layout.n_goals();
    let pair = cfg.mix.sample(&mut rng);
    let goal = |rng: &mut Rng| rng.random_range(1..=n_goals);
    let soft_behavior = |rng: &mut Rng| if rng.random::<bool>() { Behavior::Decisive } else { Behavior::Indecisive };
    let (a, b) = match pair {
        RolePair::HardFollower => (Role::hard(goal(&mut rng)), Role::follower()),
        RolePair::SoftFollower => {
            let g = goal(&mut rng);
            (Role::soft(g, soft_behavior(&mut rng)), Role::follower())
        }
        RolePair::HardSoft => {
            let g1 = goal(&mut rng);
            let g2 = goal(&mut rng);
            (Role::hard(g1), Role::soft(g2, soft_behavior(&mut rng)))
        }
        RolePair::SoftSoft => {
            let g1 = goal(&mut rng);
            let b1 = soft_behavior(&mut rng);
            let g2 = goal(&mut rng);
            (Role::soft(g1, b1), Role::soft(g2, soft_behavior(&mut rng)))
        }
        RolePair::HardHard => (Role::hard(goal(&mut rng)), Role::hard(goal(&mut rng))),
    };
    let roles = if rng.random::<bool>() { [a, b] } else { [b, a] };
    let mut dyad_rng = rng_from(derive_seed(cfg.seed, &dyad));
    let dyad_gain = uniform(&mut dyad_rng, 0.9, 1.1);
    ScenarioConfig {
        id,
        dyad,
        layout: cfg.layout.clone(),
        rate_hz: DEFAULT_RATE_HZ,
        roles,
        noise: cfg.noise,
        dynamics: cfg.dynamics,
        dyad_gain,
        seed: rng.random(),
    }
}

/// Generates `cfg.n_trials` trials; deterministic under `cfg.seed`.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<(TrialRecording, GroundTruth)>> {
    use rayon::prelude::*;
    if cfg.n_trials == 0 {
        return Err(Error::InvalidParameter("a corpus needs at least one trial".into()));
    }
    (0..cfg.n_trials).into_par_iter().map(|i| generate_trial(&corpus_scenario(cfg, i))).collect()
}

/// Picks, per sample, the goal with the largest projected power. Samples
/// with no positive projected power are idle.
pub fn projected_power_oracle(trial: &TrialRecording, k: Participant) -> Result<Vec<u8>> {
    let layout = &trial.layout;
    let s = trial.series(k);
    (0..trial.len())
        .map(|i| {
            let mut best = (0u8, 0.0);
            for g in 1..=layout.n_goals() {
                let p = crate::signals::projected_power(&s.force[i], &s.velocity[i], &s.grasp[i], &layout.goal(g))?;
                if p > best.1 {
                    best = (g as u8, p);
                }
            }
            Ok(best.0)
        })
        .collect()
}
