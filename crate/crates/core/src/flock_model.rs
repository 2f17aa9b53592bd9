//! Domain types, neighborhood geometry, and the flocking-error functional
//! with its terminal gradients.
//!
//! Everything here is a pure function of its inputs; snapshots are immutable
//! and per-agent evaluations may run concurrently.

use std::collections::BTreeSet;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar vector. Units are contextual (m, m/s, or m/s²).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector, or `None` when the norm is below `eps`.
    pub fn unit(self, eps: f64) -> Option<Vec2> {
        let n = self.norm();
        if n > eps {
            Some(self / n)
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rescale to `cap` if the norm exceeds it.
    pub fn clamp_norm(self, cap: f64) -> Vec2 {
        let n = self.norm();
        if n > cap {
            self * (cap / n)
        } else {
            self
        }
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2 { x: v[0], y: v[1] }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x / rhs, self.y / rhs)
    }
}

/// Relative displacement from agent `i` to agent `j`.
pub fn displacement(p_i: Vec2, p_j: Vec2) -> Vec2 {
    p_j - p_i
}

/// Position/velocity pair of one agent at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct AgentState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl AgentState {
    pub fn new(position: Vec2, velocity: Vec2) -> Self {
        AgentState { position, velocity }
    }

    pub fn is_finite(self) -> bool {
        self.position.is_finite() && self.velocity.is_finite()
    }
}

impl From<[f64; 4]> for AgentState {
    fn from(v: [f64; 4]) -> Self {
        AgentState::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]))
    }
}

impl From<AgentState> for [f64; 4] {
    fn from(s: AgentState) -> Self {
        [s.position.x, s.position.y, s.velocity.x, s.velocity.y]
    }
}

/// Neighbor-information source for the planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Agents exchange planned trajectories once per replanning cycle.
    Exchange,
    /// Communication-free: neighbor terminal positions are approximated by
    /// currently sensed positions and neighbor motion by constant-velocity
    /// extrapolation.
    Sensing,
}

/// All system constants for one flock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlockParams {
    /// Number of agents N.
    pub n_agents: usize,
    /// Disk radius R (m). Safety requires pairwise distance >= 2R.
    pub radius: f64,
    /// Sensing/communication range h (m); must exceed 2R.
    pub sensing_range: f64,
    /// Desired inter-agent spacing D (m).
    pub spacing: f64,
    /// Desired flock velocity v_d (m/s).
    pub desired_velocity: Vec2,
    /// Speed cap (m/s).
    pub v_max: f64,
    /// Control cap (m/s²).
    pub u_max: f64,
    /// Weight of velocity control (track `desired_velocity`).
    pub w1: f64,
    /// Weight of velocity matching (track the neighborhood mean).
    pub w2: f64,
    /// Weight of aggregation (pairwise spacing toward D).
    pub w3: f64,
    /// Planning horizon t_f − t_0 (s).
    pub horizon: f64,
    /// Replanning period ΔT (s).
    pub delta_t: f64,
    /// Simulation/sampling step (s).
    pub dt: f64,
    pub mode: Mode,
    /// Use the unit separation vector in the terminal position costate,
    /// which makes it the exact gradient of the flocking error. Off by
    /// default: the default form carries the full separation vector.
    pub gradient_consistent_lambda_p: bool,
}

impl FlockParams {
    /// Validate every invariant, naming the offending field on failure.
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::invalid_param("n_agents", "must be at least 1"));
        }
        for (field, value) in [
            ("R", self.radius),
            ("h", self.sensing_range),
            ("D", self.spacing),
            ("v_max", self.v_max),
            ("u_max", self.u_max),
            ("horizon", self.horizon),
            ("delta_t", self.delta_t),
            ("dt", self.dt),
        ] {
            if !value.is_finite() {
                return Err(Error::invalid_param(field, "must be finite"));
            }
        }
        if !self.desired_velocity.is_finite() {
            return Err(Error::invalid_param("v_d", "must be finite"));
        }
        if self.radius <= 0.0 {
            return Err(Error::invalid_param("R", "must be positive"));
        }
        if self.spacing <= 0.0 {
            return Err(Error::invalid_param("D", "must be positive"));
        }
        if self.sensing_range <= 2.0 * self.radius {
            return Err(Error::invalid_param(
                "h",
                format!(
                    "sensing range must exceed the agent diameter 2R = {} so conflicts \
                     can be detected before they occur",
                    2.0 * self.radius
                ),
            ));
        }
        if self.v_max <= 0.0 {
            return Err(Error::invalid_param("v_max", "must be positive"));
        }
        if self.u_max <= 0.0 {
            return Err(Error::invalid_param("u_max", "must be positive"));
        }
        for (field, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid_param(field, "must be a nonnegative finite weight"));
            }
        }
        if self.horizon <= 0.0 {
            return Err(Error::invalid_param("horizon", "must be positive"));
        }
        if self.delta_t <= 0.0 || self.delta_t > self.horizon {
            return Err(Error::invalid_param(
                "delta_t",
                "replanning period must satisfy 0 < delta_t <= horizon",
            ));
        }
        if self.dt <= 0.0 || self.dt > self.delta_t {
            return Err(Error::invalid_param("dt", "step must satisfy 0 < dt <= delta_t"));
        }
        Ok(())
    }
}

/// Indexed states of all agents at one instant. Agent ids are the indices
/// `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlockSnapshot {
    pub time: f64,
    pub states: Vec<AgentState>,
}

impl FlockSnapshot {
    pub fn new(time: f64, states: Vec<AgentState>) -> Self {
        FlockSnapshot { time, states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, id: usize) -> Result<AgentState> {
        self.states.get(id).copied().ok_or(Error::UnknownAgent(id))
    }

    /// Pairs closer than 2R, with their distances. Safety violations are a
    /// recorded fault, never a silent condition.
    pub fn safety_violations(&self, radius: f64) -> Vec<(usize, usize, f64)> {
        let limit = 2.0 * radius;
        let mut out = Vec::new();
        for i in 0..self.states.len() {
            for j in (i + 1)..self.states.len() {
                let d = (self.states[j].position - self.states[i].position).norm();
                if d < limit {
                    out.push((i, j, d));
                }
            }
        }
        out
    }

    /// Minimum pairwise distance, or `None` for fewer than two agents.
    pub fn min_pairwise_distance(&self) -> Option<f64> {
        let mut min: Option<f64> = None;
        for i in 0..self.states.len() {
            for j in (i + 1)..self.states.len() {
                let d = (self.states[j].position - self.states[i].position).norm();
                min = Some(match min {
                    Some(m) => m.min(d),
                    None => d,
                });
            }
        }
        min
    }

    /// Agents strictly within range `h` of agent `i`, always including `i`.
    pub fn neighborhood(&self, i: usize, h: f64) -> Result<BTreeSet<usize>> {
        let own = self.state(i)?;
        let mut set = BTreeSet::new();
        for (j, s) in self.states.iter().enumerate() {
            if (s.position - own.position).norm() < h {
                set.insert(j);
            }
        }
        set.insert(i);
        Ok(set)
    }

    /// Arithmetic mean of all agent positions.
    pub fn centroid(&self) -> Result<Vec2> {
        if self.states.is_empty() {
            return Err(Error::EmptySnapshot);
        }
        let sum = self.states.iter().fold(Vec2::ZERO, |acc, s| acc + s.position);
        Ok(sum / self.states.len() as f64)
    }

    /// Mean velocity of all agents (the exact centroid velocity).
    pub fn mean_velocity(&self) -> Result<Vec2> {
        if self.states.is_empty() {
            return Err(Error::EmptySnapshot);
        }
        let sum = self.states.iter().fold(Vec2::ZERO, |acc, s| acc + s.velocity);
        Ok(sum / self.states.len() as f64)
    }
}

/// Neighborhood-average velocity. An isolated agent (`n0` = {i}) falls back
/// to the centroid velocity so it is steered back toward the flock.
pub fn average_velocity(
    snapshot: &FlockSnapshot,
    n0: &BTreeSet<usize>,
    centroid_velocity: Vec2,
) -> Vec2 {
    if n0.len() <= 1 {
        return centroid_velocity;
    }
    let mut sum = Vec2::ZERO;
    for &j in n0 {
        sum += snapshot.states[j].velocity;
    }
    sum / n0.len() as f64
}

/// Aggregation residuals (‖s_ij‖ − D) for agent `i` against its neighbors'
/// terminal positions, with the self term excluded. An isolated agent gets a
/// single virtual term against the flock centroid.
fn aggregation_terms(
    i: usize,
    terminal: &FlockSnapshot,
    n0: &BTreeSet<usize>,
    p_cg: Vec2,
    spacing: f64,
) -> Vec<(Vec2, f64)> {
    let own = terminal.states[i].position;
    if n0.len() <= 1 {
        let s = p_cg - own;
        return vec![(s, s.norm() - spacing)];
    }
    n0.iter()
        .filter(|&&j| j != i)
        .map(|&j| {
            let s = terminal.states[j].position - own;
            (s, s.norm() - spacing)
        })
        .collect()
}

/// The flocking error Φ = w1·φ_d + w2·φ_v + w3·φ_a evaluated on terminal
/// states, with the neighborhood fixed at planning time.
///
/// φ_d tracks the desired flock velocity, φ_v the neighborhood average, and
/// φ_a drives pairwise spacing toward D (or distance-to-centroid toward D for
/// an isolated agent).
pub fn flocking_error(
    i: usize,
    terminal: &FlockSnapshot,
    n0: &BTreeSet<usize>,
    params: &FlockParams,
    p_cg: Vec2,
    v_avg: Vec2,
) -> f64 {
    let v_i = terminal.states[i].velocity;
    let phi_d = (v_i - params.desired_velocity).norm_squared();
    let phi_v = (v_i - v_avg).norm_squared();
    let phi_a: f64 = aggregation_terms(i, terminal, n0, p_cg, params.spacing)
        .iter()
        .map(|(_, r)| r * r)
        .sum();
    params.w1 * phi_d + params.w2 * phi_v + params.w3 * phi_a
}

/// Terminal costates (λᵖ, λᵛ) of the flocking error.
///
/// λᵛ is always the velocity gradient. λᵖ defaults to the full-separation
/// form −2w₃ Σ (‖s_ij‖−D) s_ij; with `gradient_consistent_lambda_p` set it
/// uses the unit separation vector instead, which is the exact position
/// gradient of [`flocking_error`].
pub fn terminal_costates(
    i: usize,
    terminal: &FlockSnapshot,
    n0: &BTreeSet<usize>,
    params: &FlockParams,
    p_cg: Vec2,
    v_avg: Vec2,
) -> (Vec2, Vec2) {
    let v_i = terminal.states[i].velocity;
    let lambda_v =
        (v_i - v_avg) * (2.0 * params.w2) + (v_i - params.desired_velocity) * (2.0 * params.w1);
    let mut lambda_p = Vec2::ZERO;
    for (s, resid) in aggregation_terms(i, terminal, n0, p_cg, params.spacing) {
        let dir = if params.gradient_consistent_lambda_p {
            s.unit(1e-12).unwrap_or(Vec2::ZERO)
        } else {
            s
        };
        lambda_p += dir * (-2.0 * params.w3 * resid);
    }
    (lambda_p, lambda_v)
}
