//! Deterministic world: scenario initialization, double-integrator state
//! propagation, metric computation, and run logging.
//!
//! The world is single-writer; all randomness flows from the scenario seed
//! through one named generator, so identical scenarios produce bit-identical
//! run logs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flock_model::{
    average_velocity, flocking_error, AgentState, FlockParams, FlockSnapshot, Vec2,
};
use crate::planner::{replan_loop, saturate, PiecewiseTrajectory, WorldModel};

/// Initial placement: explicit states, or seeded rejection sampling inside a
/// domain box with a minimum separation.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Explicit(Vec<AgentState>),
    Random {
        seed: u64,
        /// Domain box [x_min, y_min, x_max, y_max].
        domain: [f64; 4],
        min_separation: f64,
        /// Initial speeds are drawn uniformly from [0, this]; zero keeps all
        /// agents at rest.
        initial_speed_max: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: FlockParams,
    pub initial: InitialCondition,
    pub duration: f64,
    pub metrics_window: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let p = &self.params;
        if !self.duration.is_finite() || self.duration < p.delta_t {
            return Err(Error::invalid_param(
                "duration",
                "must be finite and cover at least one replanning period",
            ));
        }
        for (field, a, b) in [
            ("delta_t", p.delta_t, p.dt),
            ("duration", self.duration, p.dt),
        ] {
            let ratio = a / b;
            if (ratio - ratio.round()).abs() > 1e-6 {
                return Err(Error::invalid_param(
                    field,
                    format!("must be an integer multiple of dt = {}", p.dt),
                ));
            }
        }
        if !(self.metrics_window > 0.0 && self.metrics_window <= self.duration) {
            return Err(Error::invalid_param(
                "metrics_window",
                "must lie in (0, duration]",
            ));
        }
        match &self.initial {
            InitialCondition::Explicit(states) => {
                if states.len() != p.n_agents {
                    return Err(Error::invalid_param(
                        "explicit_states",
                        format!("{} states given but n_agents = {}", states.len(), p.n_agents),
                    ));
                }
                for (i, s) in states.iter().enumerate() {
                    if !s.is_finite() {
                        return Err(Error::invalid_param(
                            "explicit_states",
                            format!("agent {i} has a non-finite state"),
                        ));
                    }
                    if s.velocity.norm() > p.v_max + 1e-9 {
                        return Err(Error::invalid_param(
                            "explicit_states",
                            format!("agent {i} starts above v_max"),
                        ));
                    }
                }
                for i in 0..states.len() {
                    for j in (i + 1)..states.len() {
                        let d = (states[j].position - states[i].position).norm();
                        if d < 2.0 * p.radius {
                            return Err(Error::invalid_param(
                                "explicit_states",
                                format!("agents {i} and {j} start closer than 2R ({d})"),
                            ));
                        }
                    }
                }
            }
            InitialCondition::Random { domain, min_separation, initial_speed_max, .. } => {
                let [x0, y0, x1, y1] = *domain;
                if !(x1 > x0 && y1 > y0) || domain.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid_param(
                        "domain",
                        "must be a finite box [x_min, y_min, x_max, y_max]",
                    ));
                }
                if x1 - x0 < 2.0 * p.radius || y1 - y0 < 2.0 * p.radius {
                    return Err(Error::invalid_param("domain", "too small for one agent disk"));
                }
                if *min_separation < 2.0 * p.radius {
                    return Err(Error::invalid_param(
                        "min_separation",
                        "must be at least the contact distance 2R",
                    ));
                }
                if !(*initial_speed_max >= 0.0 && *initial_speed_max <= p.v_max) {
                    return Err(Error::invalid_param(
                        "initial_speed_max",
                        "must lie in [0, v_max]",
                    ));
                }
            }
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Build the initial snapshot: explicit states verbatim, or deterministic
/// seeded rejection sampling.
pub fn init_scenario(scenario: &Scenario) -> Result<FlockSnapshot> {
    scenario.validate()?;
    let p = &scenario.params;
    match &scenario.initial {
        InitialCondition::Explicit(states) => Ok(FlockSnapshot::new(0.0, states.clone())),
        InitialCondition::Random { seed, domain, min_separation, initial_speed_max } => {
            let [x0, y0, x1, y1] = *domain;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut placed: Vec<Vec2> = Vec::with_capacity(p.n_agents);
            let mut attempts = 0usize;
            while placed.len() < p.n_agents {
                if attempts >= PLACEMENT_ATTEMPTS {
                    return Err(Error::PlacementExhausted {
                        placed: placed.len(),
                        requested: p.n_agents,
                        attempts,
                    });
                }
                attempts += 1;
                let cand = Vec2::new(
                    rng.gen_range(x0 + p.radius..x1 - p.radius),
                    rng.gen_range(y0 + p.radius..y1 - p.radius),
                );
                if placed.iter().all(|q| (*q - cand).norm() >= *min_separation) {
                    placed.push(cand);
                }
            }
            let states = placed
                .into_iter()
                .map(|pos| {
                    let v = if *initial_speed_max > 0.0 {
                        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                        Vec2::new(angle.cos(), angle.sin()) * rng.gen_range(0.0..*initial_speed_max)
                    } else {
                        Vec2::ZERO
                    };
                    AgentState::new(pos, v)
                })
                .collect();
            Ok(FlockSnapshot::new(0.0, states))
        }
    }
}

/// Advance one simulation step with semi-implicit Euler: v ← v + u·dt with
/// the speed cap applied, then p ← p + v·dt. Returns the new snapshot and
/// the ids whose velocity hit the cap.
pub fn step(
    snapshot: &FlockSnapshot,
    controls: &BTreeMap<usize, Vec2>,
    dt: f64,
    v_max: f64,
) -> Result<(FlockSnapshot, Vec<usize>)> {
    if dt <= 0.0 {
        return Err(Error::NonPositiveDuration(dt));
    }
    let mut clamped = Vec::new();
    let mut states = Vec::with_capacity(snapshot.len());
    for (i, s) in snapshot.states.iter().enumerate() {
        let u = controls.get(&i).copied().unwrap_or(Vec2::ZERO);
        let mut v = s.velocity + u * dt;
        if v.norm() > v_max {
            v = v.clamp_norm(v_max);
            clamped.push(i);
        }
        states.push(AgentState::new(s.position + v * dt, v));
    }
    Ok((FlockSnapshot::new(snapshot.time + dt, states), clamped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    ControlClip,
    TangentialProjection,
    VelocityClamp,
    Assumption3Breach,
    DegradedSolve,
    SnapshotFault,
    ResidualRiskPlan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub agent: Option<usize>,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventCounters {
    pub control_clips: usize,
    pub tangential_projections: usize,
    pub velocity_clamps: usize,
    pub assumption3_breaches: usize,
    pub degraded_solves: usize,
    pub snapshot_faults: usize,
    pub residual_risk_plans: usize,
}

impl EventCounters {
    fn bump(&mut self, kind: EventKind) {
        match kind {
            EventKind::ControlClip => self.control_clips += 1,
            EventKind::TangentialProjection => self.tangential_projections += 1,
            EventKind::VelocityClamp => self.velocity_clamps += 1,
            EventKind::Assumption3Breach => self.assumption3_breaches += 1,
            EventKind::DegradedSolve => self.degraded_solves += 1,
            EventKind::SnapshotFault => self.snapshot_faults += 1,
            EventKind::ResidualRiskPlan => self.residual_risk_plans += 1,
        }
    }
}

/// One executed step: the state each agent was in at `time` and the control
/// applied over the following dt.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    pub states: Vec<AgentState>,
    pub controls: Vec<Vec2>,
    /// Instantaneous flocking error per agent.
    pub flock_error: Vec<f64>,
    pub min_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub params: FlockParams,
    pub steps: Vec<StepRecord>,
    pub final_snapshot: FlockSnapshot,
    pub events: Vec<Event>,
    pub counters: EventCounters,
    /// Σ ‖u‖² dt over every executed step and agent.
    pub total_energy: f64,
    pub rounds: usize,
}

/// The simulator world driven by the replanning loop.
pub struct World {
    params: FlockParams,
    snapshot: FlockSnapshot,
    centroid_velocity: Vec2,
    steps: Vec<StepRecord>,
    events: Vec<Event>,
    counters: EventCounters,
    total_energy: f64,
}

impl World {
    pub fn new(params: FlockParams, initial: FlockSnapshot) -> Result<Self> {
        let centroid_velocity = initial.mean_velocity()?;
        Ok(World {
            params,
            snapshot: initial,
            centroid_velocity,
            steps: Vec::new(),
            events: Vec::new(),
            counters: EventCounters::default(),
            total_energy: 0.0,
        })
    }

    pub fn current(&self) -> &FlockSnapshot {
        &self.snapshot
    }

    fn record_event(&mut self, time: f64, agent: Option<usize>, kind: EventKind) {
        self.counters.bump(kind);
        self.events.push(Event { time, agent, kind });
    }

    fn instantaneous_errors(&self) -> Result<Vec<f64>> {
        let snap = &self.snapshot;
        let p_cg = snap.centroid()?;
        let mut out = Vec::with_capacity(snap.len());
        for i in 0..snap.len() {
            let n0 = snap.neighborhood(i, self.params.sensing_range)?;
            let v_avg = average_velocity(snap, &n0, self.centroid_velocity);
            out.push(flocking_error(i, snap, &n0, &self.params, p_cg, v_avg));
        }
        Ok(out)
    }

    fn into_log(self, rounds: usize) -> RunLog {
        RunLog {
            params: self.params,
            steps: self.steps,
            final_snapshot: self.snapshot,
            events: self.events,
            counters: self.counters,
            total_energy: self.total_energy,
            rounds,
        }
    }
}

impl WorldModel for World {
    fn snapshot(&self) -> FlockSnapshot {
        self.snapshot.clone()
    }

    fn centroid_velocity(&self) -> Vec2 {
        self.centroid_velocity
    }

    fn advance(
        &mut self,
        plans: &BTreeMap<usize, PiecewiseTrajectory>,
        window: f64,
    ) -> Result<()> {
        let dt = self.params.dt;
        let n_steps = (window / dt).round().max(1.0) as usize;
        for k in 0..n_steps {
            let tau = k as f64 * dt;
            let now = self.snapshot.time;
            let mut controls = BTreeMap::new();
            let mut executed = Vec::with_capacity(self.snapshot.len());
            for i in 0..self.snapshot.len() {
                let traj = plans.get(&i).ok_or(Error::UnknownAgent(i))?;
                let (_, _, u_planned) = traj.sample(tau);
                let (u, flags) = saturate(u_planned, self.snapshot.states[i].velocity, &self.params);
                if flags.clipped_control {
                    self.record_event(now, Some(i), EventKind::ControlClip);
                }
                if flags.projected_tangential {
                    self.record_event(now, Some(i), EventKind::TangentialProjection);
                }
                controls.insert(i, u);
                executed.push(u);
                self.total_energy += u.norm_squared() * dt;
            }
            let flock_error = self.instantaneous_errors()?;
            self.steps.push(StepRecord {
                time: now,
                states: self.snapshot.states.clone(),
                controls: executed,
                flock_error,
                min_distance: self.snapshot.min_pairwise_distance().unwrap_or(f64::INFINITY),
            });
            let prev_centroid = self.snapshot.centroid()?;
            let (next, clamped) = step(&self.snapshot, &controls, dt, self.params.v_max)?;
            for i in clamped {
                self.record_event(now, Some(i), EventKind::VelocityClamp);
            }
            self.snapshot = next;
            self.centroid_velocity = (self.snapshot.centroid()? - prev_centroid) / dt;
        }
        Ok(())
    }
}

/// Execute a scenario end to end: initialize, replan every ΔT, integrate,
/// and log. Deterministic given the scenario (including its seed).
pub fn run(scenario: &Scenario) -> Result<RunLog> {
    let initial = init_scenario(scenario)?;
    let mut world = World::new(scenario.params.clone(), initial)?;
    let rounds = replan_loop(&mut world, &scenario.params, scenario.duration)?;
    for round in &rounds {
        for _ in 0..round.stats.degraded_solves {
            world.record_event(round.time, None, EventKind::DegradedSolve);
        }
        for _ in 0..round.stats.assumption3_breaches {
            world.record_event(round.time, None, EventKind::Assumption3Breach);
        }
        for _ in 0..round.stats.snapshot_faults {
            world.record_event(round.time, None, EventKind::SnapshotFault);
        }
        if round.stats.residual_risk {
            world.record_event(round.time, None, EventKind::ResidualRiskPlan);
        }
    }
    let n_rounds = rounds.len();
    Ok(world.into_log(n_rounds))
}

/// One row of the metrics time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub time: f64,
    pub mean_u: f64,
    pub max_u: f64,
    pub min_distance: f64,
    /// Mean instantaneous flocking error over agents.
    pub flock_error: f64,
    /// Mean over agents of ‖v_i − v_d‖.
    pub speed_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalAggregates {
    pub window: f64,
    pub mean_u: f64,
    pub max_u: f64,
    pub min_distance: f64,
    pub flock_error: f64,
    pub speed_error: f64,
    pub nn_min: f64,
    pub nn_mean: f64,
    pub nn_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub rows: Vec<MetricsRow>,
    pub terminal: TerminalAggregates,
    /// Energy recomputed from the logged control series, for consistency
    /// checks against [`RunLog::total_energy`].
    pub recomputed_energy: f64,
}

/// Nearest-neighbor distance per agent in a snapshot.
pub fn nearest_neighbor_distances(snapshot: &FlockSnapshot) -> Vec<f64> {
    let n = snapshot.len();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (snapshot.states[j].position - snapshot.states[i].position).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Compute metric time series and terminal aggregates over the final
/// `window` seconds.
pub fn metrics(log: &RunLog, window: f64) -> Result<MetricsSummary> {
    if log.steps.is_empty() {
        return Err(Error::MalformedLog("run log has no steps".into()));
    }
    let params = &log.params;
    let mut rows = Vec::with_capacity(log.steps.len());
    let mut recomputed_energy = 0.0;
    for rec in &log.steps {
        let n = rec.controls.len() as f64;
        let mean_u = rec.controls.iter().map(|u| u.norm()).sum::<f64>() / n;
        let max_u = rec.controls.iter().map(|u| u.norm()).fold(0.0, f64::max);
        let flock_error = rec.flock_error.iter().sum::<f64>() / n;
        let speed_error = rec
            .states
            .iter()
            .map(|s| (s.velocity - params.desired_velocity).norm())
            .sum::<f64>()
            / n;
        recomputed_energy +=
            rec.controls.iter().map(|u| u.norm_squared()).sum::<f64>() * params.dt;
        rows.push(MetricsRow {
            time: rec.time,
            mean_u,
            max_u,
            min_distance: rec.min_distance,
            flock_error,
            speed_error,
        });
    }
    let t_end = log.final_snapshot.time;
    let cut = t_end - window;
    let tail: Vec<&MetricsRow> = rows.iter().filter(|r| r.time >= cut - 1e-9).collect();
    let tail_n = tail.len().max(1) as f64;
    let nn = nearest_neighbor_distances(&log.final_snapshot);
    let (nn_min, nn_max) = nn
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let nn_mean = if nn.is_empty() { f64::INFINITY } else { nn.iter().sum::<f64>() / nn.len() as f64 };
    let terminal = TerminalAggregates {
        window,
        mean_u: tail.iter().map(|r| r.mean_u).sum::<f64>() / tail_n,
        max_u: tail.iter().map(|r| r.max_u).fold(0.0, f64::max),
        min_distance: tail.iter().map(|r| r.min_distance).fold(f64::INFINITY, f64::min),
        flock_error: tail.iter().map(|r| r.flock_error).sum::<f64>() / tail_n,
        speed_error: tail.iter().map(|r| r.speed_error).sum::<f64>() / tail_n,
        nn_min,
        nn_mean,
        nn_max,
    };
    Ok(MetricsSummary { rows, terminal, recomputed_energy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flock_model::Mode;
    use approx::assert_relative_eq;

    fn base_params(n: usize) -> FlockParams {
        FlockParams {
            n_agents: n,
            radius: 0.1,
            sensing_range: 4.0,
            spacing: 0.25,
            desired_velocity: Vec2::new(1.0, 0.0),
            v_max: 5.0,
            u_max: 10.0,
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            horizon: 1.2,
            delta_t: 0.1,
            dt: 0.01,
            mode: Mode::Exchange,
            gradient_consistent_lambda_p: false,
        }
    }

    fn random_scenario(n: usize, seed: u64) -> Scenario {
        Scenario {
            params: base_params(n),
            initial: InitialCondition::Random {
                seed,
                domain: [0.0, 0.0, 3.0, 3.0],
                min_separation: 0.4,
                initial_speed_max: 0.0,
            },
            duration: 1.0,
            metrics_window: 0.5,
        }
    }

    #[test]
    fn init_single_agent_inside_box() {
        let mut sc = random_scenario(1, 9);
        sc.params.n_agents = 1;
        let snap = init_scenario(&sc).unwrap();
        assert_eq!(snap.len(), 1);
        let p = snap.states[0].position;
        assert!(p.x >= 0.1 && p.x <= 2.9 && p.y >= 0.1 && p.y <= 2.9);
    }

    #[test]
    fn init_explicit_hexagon_verbatim() {
        let d = 0.25;
        let states: Vec<AgentState> = (0..6)
            .map(|k| {
                let ang = k as f64 * std::f64::consts::FRAC_PI_3;
                AgentState::new(Vec2::new(d * ang.cos(), d * ang.sin()), Vec2::ZERO)
            })
            .collect();
        let sc = Scenario {
            params: base_params(6),
            initial: InitialCondition::Explicit(states.clone()),
            duration: 1.0,
            metrics_window: 0.5,
        };
        let snap = init_scenario(&sc).unwrap();
        assert_eq!(snap.states, states);
    }

    #[test]
    fn init_is_deterministic_across_calls() {
        let sc = random_scenario(12, 5);
        let a = init_scenario(&sc).unwrap();
        let b = init_scenario(&sc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_reports_density_exhaustion() {
        let mut sc = random_scenario(40, 1);
        sc.params.n_agents = 40;
        // A box that cannot hold 40 agents at the requested separation.
        sc.initial = InitialCondition::Random {
            seed: 1,
            domain: [0.0, 0.0, 0.5, 0.5],
            min_separation: 0.4,
            initial_speed_max: 0.0,
        };
        let err = init_scenario(&sc).unwrap_err().to_string();
        assert!(err.contains("dense"), "{err}");
    }

    #[test]
    fn step_uniform_translation_and_hand_integration() {
        let snap = FlockSnapshot::new(
            0.0,
            vec![AgentState::new(Vec2::ZERO, Vec2::new(2.0, 1.0))],
        );
        let (next, clamped) = step(&snap, &BTreeMap::new(), 0.1, 10.0).unwrap();
        assert!(clamped.is_empty());
        assert!((next.states[0].position - Vec2::new(0.2, 0.1)).norm() < 1e-15);

        // v = 0, u = (1,0), dt = 0.1: v → (0.1, 0), p advances (0.01, 0).
        let snap = FlockSnapshot::new(0.0, vec![AgentState::new(Vec2::ZERO, Vec2::ZERO)]);
        let controls: BTreeMap<usize, Vec2> = [(0, Vec2::new(1.0, 0.0))].into_iter().collect();
        let (next, _) = step(&snap, &controls, 0.1, 10.0).unwrap();
        assert!((next.states[0].velocity - Vec2::new(0.1, 0.0)).norm() < 1e-15);
        assert!((next.states[0].position - Vec2::new(0.01, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn step_matches_exact_kinematics_to_first_order() {
        let u = Vec2::new(0.3, -0.2);
        let controls: BTreeMap<usize, Vec2> = [(0, u)].into_iter().collect();
        let dt = 0.01;
        let mut snap = FlockSnapshot::new(0.0, vec![AgentState::new(Vec2::ZERO, Vec2::ZERO)]);
        for _ in 0..100 {
            snap = step(&snap, &controls, dt, 100.0).unwrap().0;
        }
        let t = 1.0;
        let exact = u * (0.5 * t * t);
        let err = (snap.states[0].position - exact).norm();
        assert!(err <= u.norm() * dt * t, "error {err}");
    }

    #[test]
    fn run_equilibrium_hexagon_is_quiescent() {
        let d = 0.25;
        let v_d = Vec2::new(2.5, 0.0);
        let mut params = base_params(6);
        params.radius = 0.11;
        params.sensing_range = 0.35;
        params.spacing = d;
        params.desired_velocity = v_d;
        let states: Vec<AgentState> = (0..6)
            .map(|k| {
                let ang = k as f64 * std::f64::consts::FRAC_PI_3;
                AgentState::new(Vec2::new(d * ang.cos(), d * ang.sin()), v_d)
            })
            .collect();
        let sc = Scenario {
            params,
            initial: InitialCondition::Explicit(states),
            duration: 2.0,
            metrics_window: 1.0,
        };
        let log = run(&sc).unwrap();
        let summary = metrics(&log, sc.metrics_window).unwrap();
        assert!(summary.terminal.max_u < 1e-8, "max_u {}", summary.terminal.max_u);
        assert!(summary.terminal.flock_error < 1e-12);
        assert_eq!(log.counters.snapshot_faults, 0);
    }

    #[test]
    fn run_is_deterministic() {
        let sc = random_scenario(4, 77);
        let a = run(&sc).unwrap();
        let b = run(&sc).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.total_energy, b.total_energy);
        assert_eq!(a.final_snapshot, b.final_snapshot);
    }

    #[test]
    fn metrics_energy_identity() {
        let sc = random_scenario(4, 3);
        let log = run(&sc).unwrap();
        let summary = metrics(&log, sc.metrics_window).unwrap();
        let denom = log.total_energy.max(1e-30);
        assert!(
            (summary.recomputed_energy - log.total_energy).abs() / denom < 1e-6,
            "{} vs {}",
            summary.recomputed_energy,
            log.total_energy
        );
    }

    #[test]
    fn metrics_zero_controls_zero_series() {
        // Two distant agents with matched desired velocity produce no
        // control at all; min distance stays constant.
        let mut params = base_params(2);
        params.w3 = 0.0;
        params.desired_velocity = Vec2::new(1.0, 0.0);
        let states = vec![
            AgentState::new(Vec2::ZERO, Vec2::new(1.0, 0.0)),
            AgentState::new(Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0)),
        ];
        let sc = Scenario {
            params,
            initial: InitialCondition::Explicit(states),
            duration: 1.0,
            metrics_window: 0.5,
        };
        let log = run(&sc).unwrap();
        let summary = metrics(&log, sc.metrics_window).unwrap();
        for row in &summary.rows {
            assert!(row.max_u < 1e-12);
            assert_relative_eq!(row.min_distance, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn momentum_drift_bounded_under_pure_velocity_matching() {
        // w1 = w3 = 0 with one shared neighborhood: controls cancel pairwise,
        // so total momentum drifts below 1e-6 per run.
        let mut params = base_params(4);
        params.w1 = 0.0;
        params.w3 = 0.0;
        params.radius = 0.05;
        let states = vec![
            AgentState::new(Vec2::new(0.0, 0.0), Vec2::new(0.4, 0.1)),
            AgentState::new(Vec2::new(1.0, 0.0), Vec2::new(-0.2, 0.3)),
            AgentState::new(Vec2::new(0.0, 1.0), Vec2::new(0.1, -0.4)),
            AgentState::new(Vec2::new(1.0, 1.0), Vec2::new(-0.3, 0.0)),
        ];
        let total0: Vec2 = states.iter().fold(Vec2::ZERO, |acc, s| acc + s.velocity);
        let sc = Scenario {
            params,
            initial: InitialCondition::Explicit(states),
            duration: 1.0,
            metrics_window: 0.5,
        };
        let log = run(&sc).unwrap();
        assert_eq!(log.counters.control_clips, 0);
        let total1: Vec2 = log
            .final_snapshot
            .states
            .iter()
            .fold(Vec2::ZERO, |acc, s| acc + s.velocity);
        assert!((total1 - total0).norm() < 1e-6, "drift {}", (total1 - total0).norm());
    }
}
