//! Per-agent trajectory generation and the receding-horizon replanning loop.
//!
//! Each planning round runs in two phases mirroring the decentralized
//! algorithm: every agent first solves its unconstrained terminal
//! boundary-value problem (phase A), the results are exchanged, and each
//! agent then stitches its final plan against the received trajectories
//! (phase B): contact detection, matched-velocity constrained arcs,
//! fixed-endpoint connection arcs, and early escape arcs.
//!
//! Within a round all agents plan against the same immutable snapshot; the
//! round barrier is strict. Plans are deterministic: identical inputs yield
//! bit-identical trajectories.

use std::collections::{BTreeMap, BTreeSet};

use crate::contact_solver::{
    check_escape, detect_contacts, make_constrained_arc, rigid_hold_arc, ConstrainedArc,
};
use crate::cubic_solver::{
    connect, solve_terminal_bvp, solve_terminal_sensing, CubicCoeffs, TerminalSolution,
};
use crate::error::{Error, Result};
use crate::flock_model::{
    average_velocity, AgentState, FlockParams, FlockSnapshot, Mode, Vec2,
};

/// One arc of a piecewise plan.
#[derive(Debug, Clone, PartialEq)]
pub enum ArcMotion {
    Free(CubicCoeffs),
    Contact(ConstrainedArc),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedArc {
    pub start: f64,
    pub end: f64,
    pub motion: ArcMotion,
}

impl PlannedArc {
    fn sample(&self, owner: usize, t: f64) -> (Vec2, Vec2, Vec2) {
        match &self.motion {
            ArcMotion::Free(c) => c.sample(t - self.start),
            ArcMotion::Contact(arc) => {
                // Participants were validated at assembly.
                let s = arc.state_of(owner, t).expect("owner participates in contact arc");
                (s.position, s.velocity, Vec2::ZERO)
            }
        }
    }
}

/// Ordered arcs tiling a span, with position and velocity continuous across
/// the boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTrajectory {
    pub owner: usize,
    arcs: Vec<PlannedArc>,
    /// Set when a connection arc could not be fully cleared against known
    /// trajectories; the next replanning round resolves it.
    pub residual_risk: bool,
}

impl PiecewiseTrajectory {
    /// A single free arc starting at plan time 0.
    pub fn single(coeffs: CubicCoeffs) -> Result<Self> {
        Self::single_for(0, coeffs)
    }

    pub fn single_for(owner: usize, coeffs: CubicCoeffs) -> Result<Self> {
        let arc = PlannedArc { start: 0.0, end: coeffs.duration(), motion: ArcMotion::Free(coeffs) };
        Self::assemble(owner, vec![arc])
    }

    /// Assemble and validate: arcs must tile the span with no gaps or
    /// overlaps and match state across boundaries to 1e−9.
    pub fn assemble(owner: usize, arcs: Vec<PlannedArc>) -> Result<Self> {
        if arcs.is_empty() {
            return Err(Error::BrokenTrajectory { detail: "no arcs".into() });
        }
        for (k, arc) in arcs.iter().enumerate() {
            if arc.end - arc.start <= 0.0 {
                return Err(Error::BrokenTrajectory {
                    detail: format!("arc {k} has nonpositive duration"),
                });
            }
            if let ArcMotion::Contact(c) = &arc.motion {
                if c.entry_of(owner).is_none() {
                    return Err(Error::BrokenTrajectory {
                        detail: format!("arc {k}: owner {owner} not among contact participants"),
                    });
                }
            }
        }
        let traj = PiecewiseTrajectory { owner, arcs, residual_risk: false };
        traj.check_continuity()?;
        Ok(traj)
    }

    fn check_continuity(&self) -> Result<()> {
        for k in 0..self.arcs.len() - 1 {
            let (a, b) = (&self.arcs[k], &self.arcs[k + 1]);
            if (b.start - a.end).abs() > 1e-9 {
                return Err(Error::BrokenTrajectory {
                    detail: format!("gap between arcs {k} and {} ({} vs {})", k + 1, a.end, b.start),
                });
            }
            let (p0, v0, _) = a.sample(self.owner, a.end);
            let (p1, v1, _) = b.sample(self.owner, b.start);
            if (p1 - p0).norm() > 1e-9 || (v1 - v0).norm() > 1e-9 {
                return Err(Error::BrokenTrajectory {
                    detail: format!(
                        "state jump at arc boundary {k}: |dp|={}, |dv|={}",
                        (p1 - p0).norm(),
                        (v1 - v0).norm()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn span(&self) -> (f64, f64) {
        (self.arcs[0].start, self.arcs[self.arcs.len() - 1].end)
    }

    pub fn arcs(&self) -> &[PlannedArc] {
        &self.arcs
    }

    pub fn has_contact_arc(&self) -> bool {
        self.arcs.iter().any(|a| matches!(a.motion, ArcMotion::Contact(_)))
    }

    /// Position, velocity, and control at plan time `t`. Outside the span
    /// the trajectory extends ballistically from the nearer end state.
    pub fn sample(&self, t: f64) -> (Vec2, Vec2, Vec2) {
        let (t0, tf) = self.span();
        if t < t0 {
            let (p, v, _) = self.arcs[0].sample(self.owner, t0);
            return (p + v * (t - t0), v, Vec2::ZERO);
        }
        if t > tf {
            let last = &self.arcs[self.arcs.len() - 1];
            let (p, v, _) = last.sample(self.owner, tf);
            return (p + v * (t - tf), v, Vec2::ZERO);
        }
        let arc = self
            .arcs
            .iter()
            .find(|a| t <= a.end)
            .unwrap_or(&self.arcs[self.arcs.len() - 1]);
        arc.sample(self.owner, t)
    }

    /// Checked sampling within the span.
    pub fn eval(&self, t: f64) -> Result<(Vec2, Vec2, Vec2)> {
        let (t0, tf) = self.span();
        if t < t0 - 1e-9 || t > tf + 1e-9 {
            return Err(Error::OutsideArc { t, start: t0, end: tf });
        }
        Ok(self.sample(t))
    }

    pub fn state_at(&self, t: f64) -> AgentState {
        let (p, v, _) = self.sample(t);
        AgentState::new(p, v)
    }

    /// Planned control energy: free arcs in closed form, contact arcs zero.
    pub fn energy(&self) -> f64 {
        self.arcs
            .iter()
            .map(|a| match &a.motion {
                ArcMotion::Free(c) => c.energy(),
                ArcMotion::Contact(_) => 0.0,
            })
            .sum()
    }
}

/// Everything one agent knows at the start of a planning round.
#[derive(Debug, Clone)]
pub struct PlanContext<'a> {
    pub self_id: usize,
    pub snapshot: &'a FlockSnapshot,
    /// Exchange mode: neighbors' unconstrained trajectories received this
    /// round. Empty in sensing mode (the planner extrapolates internally).
    pub known_trajs: BTreeMap<usize, PiecewiseTrajectory>,
    /// Predicted neighbor terminal positions for the boundary-value problem;
    /// a single virtual centroid point when isolated.
    pub terminal_targets: Vec<Vec2>,
    pub v_avg: Vec2,
    pub params: &'a FlockParams,
}

/// Diagnostics accumulated while planning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlanStats {
    pub degraded_solves: usize,
    pub assumption3_breaches: usize,
    pub snapshot_faults: usize,
    pub escapes_taken: usize,
    pub residual_risk: bool,
}

impl PlanStats {
    fn absorb(&mut self, other: PlanStats) {
        self.degraded_solves += other.degraded_solves;
        self.assumption3_breaches += other.assumption3_breaches;
        self.snapshot_faults += other.snapshot_faults;
        self.escapes_taken += other.escapes_taken;
        self.residual_risk |= other.residual_risk;
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub trajectory: PiecewiseTrajectory,
    pub stats: PlanStats,
}

/// Neighbor terminal positions in sensing mode: the currently sensed
/// positions, or the flock centroid for an isolated agent.
pub fn sensing_terminal_targets(
    self_id: usize,
    snapshot: &FlockSnapshot,
    n0: &BTreeSet<usize>,
    p_cg: Vec2,
) -> Vec<Vec2> {
    if n0.len() <= 1 {
        return vec![p_cg];
    }
    n0.iter()
        .filter(|&&j| j != self_id)
        .map(|&j| snapshot.states[j].position)
        .collect()
}

/// Clip a control to the caps: radial rescale to `u_max`, and removal of the
/// outward-radial component when the speed cap is active.
pub fn saturate(u: Vec2, v: Vec2, params: &FlockParams) -> (Vec2, Saturation) {
    let mut out = u;
    let mut flags = Saturation::default();
    let norm = out.norm();
    if norm > params.u_max {
        out = out * (params.u_max / norm);
        flags.clipped_control = true;
    }
    if v.norm() >= params.v_max {
        if let Some(v_hat) = v.unit(1e-12) {
            let radial = out.dot(v_hat);
            if radial > 0.0 {
                out = out - v_hat * radial;
                flags.projected_tangential = true;
            }
        }
    }
    (out, flags)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Saturation {
    pub clipped_control: bool,
    pub projected_tangential: bool,
}

/// Push entry positions apart until every pair is at least the contact
/// distance, projecting along the separation direction. Two participants
/// resolve in one symmetric pass.
fn project_entries(entries: &mut BTreeMap<usize, AgentState>, diameter: f64) -> bool {
    let ids: Vec<usize> = entries.keys().copied().collect();
    for _ in 0..64 {
        let mut clean = true;
        for (n, &i) in ids.iter().enumerate() {
            for &j in &ids[n + 1..] {
                let pi = entries[&i].position;
                let pj = entries[&j].position;
                let sep = pj - pi;
                let dist = sep.norm();
                if dist >= diameter {
                    continue;
                }
                clean = false;
                let dir = sep.unit(1e-12).unwrap_or(Vec2::new(1.0, 0.0));
                let shift = (diameter - dist) / 2.0;
                entries.get_mut(&i).unwrap().position = pi - dir * shift;
                entries.get_mut(&j).unwrap().position = pj + dir * shift;
            }
        }
        if clean {
            return true;
        }
    }
    false
}

/// Prediction of a contact participant for escape clearance checks: it rides
/// the shared arc, then continues ballistically.
fn participant_prediction(arc: &ConstrainedArc, id: usize, t_f: f64) -> Result<PiecewiseTrajectory> {
    let mut arcs = vec![PlannedArc {
        start: arc.start,
        end: arc.end,
        motion: ArcMotion::Contact(arc.clone()),
    }];
    if t_f - arc.end > 1e-9 {
        let exit = arc.state_of(id, arc.end).ok_or(Error::UnknownAgent(id))?;
        let tail = CubicCoeffs::ballistic(exit, t_f - arc.end)?;
        arcs.push(PlannedArc { start: arc.end, end: t_f, motion: ArcMotion::Free(tail) });
    }
    PiecewiseTrajectory::assemble(id, arcs)
}

/// Terminal solve for the configured mode: the exchange problem iterates on
/// predicted terminal displacements, the sensing approximation is explicit
/// on currently sensed geometry.
fn terminal_solve(
    x0: AgentState,
    targets: &[Vec2],
    v_avg: Vec2,
    params: &FlockParams,
    horizon: f64,
) -> Result<TerminalSolution> {
    match params.mode {
        Mode::Exchange => solve_terminal_bvp(x0, targets, v_avg, params, horizon),
        Mode::Sensing => solve_terminal_sensing(x0, targets, v_avg, params, horizon),
    }
}

/// Generate one agent's plan: unconstrained terminal solve, contact
/// detection against the known (or extrapolated) neighbor trajectories,
/// constrained arcs with connection arcs, and early escapes.
pub fn plan(ctx: &PlanContext) -> Result<PlanOutcome> {
    let params = ctx.params;
    let horizon = params.horizon;
    let x0 = ctx.snapshot.state(ctx.self_id)?;
    let mut stats = PlanStats::default();

    // Step 1: unconstrained terminal trajectory.
    let sol = terminal_solve(x0, &ctx.terminal_targets, ctx.v_avg, params, horizon)?;
    if sol.outcome.is_degraded() {
        stats.degraded_solves += 1;
    }
    let unconstrained = PiecewiseTrajectory::single_for(ctx.self_id, sol.coeffs)?;

    // Steps 2–3: the exchanged trajectories (or sensing extrapolations) and
    // the active-set intervals against them.
    let detection_trajs: BTreeMap<usize, PiecewiseTrajectory> = if !ctx.known_trajs.is_empty() {
        ctx.known_trajs.clone()
    } else {
        let n0 = ctx.snapshot.neighborhood(ctx.self_id, params.sensing_range)?;
        let mut map = BTreeMap::new();
        for &j in n0.iter().filter(|&&j| j != ctx.self_id) {
            let c = CubicCoeffs::ballistic(ctx.snapshot.states[j], horizon)?;
            map.insert(j, PiecewiseTrajectory::single_for(j, c)?);
        }
        map
    };
    // Pre-existing violations around this agent are a recorded fault, never
    // silent; planning continues on the degraded path.
    let diameter = 2.0 * params.radius;
    if detection_trajs.keys().any(|&j| {
        (ctx.snapshot.states[j].position - x0.position).norm() < diameter - 1e-9
    }) {
        stats.snapshot_faults += 1;
    }

    let intervals = detect_contacts(&unconstrained, &detection_trajs, params)?;
    if intervals.is_empty() {
        return Ok(PlanOutcome { trajectory: unconstrained, stats });
    }

    // Steps 4–7: constrained arcs, connections, and escapes. The model of a
    // neighbor starts as its exchanged/extrapolated trajectory; once it
    // joins a contact arc it is expected to ride the shared arc and then
    // coast, which is what the cooperative protocol prescribes. The
    // composite overrides are timestamped so earlier times still read the
    // original trajectory.
    let mut model_trajs = detection_trajs.clone();
    let mut model_switches: BTreeMap<usize, Vec<(f64, PiecewiseTrajectory)>> = BTreeMap::new();
    let mut pieces: Vec<PlannedArc> = Vec::new();
    let mut cursor_t = 0.0;
    let mut cursor_state = x0;
    let mut escaped = false;

    'intervals: for interval in &intervals {
        if interval.participants.len() > 1 {
            stats.assumption3_breaches += 1;
        }
        let gather = |own: AgentState, t: f64| -> Result<BTreeMap<usize, AgentState>> {
            let mut states = BTreeMap::new();
            states.insert(ctx.self_id, own);
            for &j in &interval.participants {
                let other = detection_trajs.get(&j).ok_or(Error::UnknownAgent(j))?;
                states.insert(j, other.state_at(t));
            }
            Ok(states)
        };
        let min_pair_dist = |states: &BTreeMap<usize, AgentState>| -> f64 {
            let ids: Vec<usize> = states.keys().copied().collect();
            let mut min = f64::INFINITY;
            for (n, &i) in ids.iter().enumerate() {
                for &j in &ids[n + 1..] {
                    min = min.min((states[&j].position - states[&i].position).norm());
                }
            }
            min
        };

        // Size the connection arc so the velocity retarget (and any position
        // healing out of an already-penetrated state) stays executable under
        // the control cap; the arc entry is delayed accordingly. Everyone
        // sizes from the same modeled states, so cooperating agents agree.
        let probe_own = if interval.start <= cursor_t + 1e-9 {
            cursor_state
        } else {
            unconstrained.state_at(interval.start)
        };
        let probe = gather(probe_own, interval.start)?;
        let mut shared_est = Vec2::ZERO;
        for s in probe.values() {
            shared_est += s.velocity;
        }
        shared_est = shared_est / probe.len() as f64;
        let dv_max = probe
            .values()
            .map(|s| (s.velocity - shared_est).norm())
            .fold(0.0, f64::max);
        let mut t_need = dv_max / (0.8 * params.u_max);
        let probe_min = min_pair_dist(&probe);
        if probe_min < diameter {
            let heal = (diameter - probe_min) / 2.0;
            t_need = t_need.max((10.0 * heal / params.u_max).sqrt());
        }
        let lead = (t_need.max(params.dt) / params.dt).ceil() * params.dt;
        let arc_start = interval.start.max(cursor_t + lead);
        if interval.end <= arc_start + 1e-9 {
            // The interval is swallowed by the feasibility lead; leave it to
            // the flag and the next replanning round.
            stats.residual_risk = true;
            continue;
        }
        let arc_end = interval.end;
        let window = arc_start - cursor_t;

        // Entry states at the (possibly delayed) arc start, projected apart
        // to the contact distance if the sampled states penetrate.
        let mut entries = gather(unconstrained.state_at(arc_start), arc_start)?;
        if min_pair_dist(&entries) < diameter {
            let fully_projected = project_entries(&mut entries, diameter);
            if !fully_projected {
                stats.residual_risk = true;
            }
        }

        // Holding the backbone entry position while shedding the velocity
        // difference needs a control peak of about 4Δv/T; if any participant
        // would exceed the cap, all of them fall back to the natural braking
        // landings (positions reached under constant control toward the
        // shared velocity). The choice is made from the exchanged data, so
        // cooperating agents make it identically.
        let entry_shared = {
            let mut v = Vec2::ZERO;
            for s in entries.values() {
                v += s.velocity;
            }
            v / entries.len() as f64
        };
        let base = gather(cursor_state, cursor_t)?;
        let conn_peak = entries
            .iter()
            .map(|(&id, entry)| {
                let target = AgentState::new(entry.position, entry_shared);
                match connect(base[&id], target, window) {
                    Ok(c) => {
                        let (_, _, u0) = c.sample(0.0);
                        let (_, _, u1) = c.sample(window);
                        u0.norm().max(u1.norm())
                    }
                    Err(_) => f64::INFINITY,
                }
            })
            .fold(0.0, f64::max);
        if conn_peak > 0.35 * params.u_max {
            let mut shared = Vec2::ZERO;
            for s in base.values() {
                shared += s.velocity;
            }
            shared = shared / base.len() as f64;
            let mut landings: BTreeMap<usize, AgentState> = base
                .iter()
                .map(|(&id, s)| {
                    let p = s.position + (s.velocity + shared) * (0.5 * window);
                    (id, AgentState::new(p, shared))
                })
                .collect();
            if min_pair_dist(&landings) < diameter {
                let fully_projected = project_entries(&mut landings, diameter);
                if !fully_projected {
                    stats.residual_risk = true;
                }
            }
            entries = landings;
        }

        let arc = match make_constrained_arc(&entries, arc_start, arc_end, params.radius) {
            Ok(arc) => arc,
            Err(_) => {
                // Projection could not untangle the cluster; freeze the
                // sampled separations instead of giving up.
                stats.residual_risk = true;
                rigid_hold_arc(&entries, arc_start, arc_end)
            }
        };

        // Connection arc toward the entry at the shared velocity.
        let own_target = AgentState::new(
            arc.entry_of(ctx.self_id).expect("self participates"),
            arc.shared_velocity,
        );
        let conn = connect(cursor_state, own_target, window)?;
        pieces.push(PlannedArc {
            start: cursor_t,
            end: arc_start,
            motion: ArcMotion::Free(conn),
        });

        // Step 7: earliest feasible escape, checked every dt inside the arc.
        // Participants are predicted to ride the arc and then coast; other
        // agents keep their known trajectories.
        for &j in &interval.participants {
            let composite = participant_prediction(&arc, j, horizon)?;
            model_trajs.insert(j, composite.clone());
            model_switches.entry(j).or_default().push((arc.start, composite));
        }
        let escape_trajs = &model_trajs;
        let mut k = 0usize;
        loop {
            let t_exit = arc.start + k as f64 * params.dt;
            if t_exit >= arc.end - 1e-12 {
                break;
            }
            if horizon - t_exit <= params.dt {
                break;
            }
            if let Some(esc) = check_escape(
                &arc,
                ctx.self_id,
                t_exit,
                &ctx.terminal_targets,
                ctx.v_avg,
                params,
                horizon,
                escape_trajs,
            )? {
                // Taking the exit is worthwhile only if the candidate is
                // genuinely separating from the contact partners; otherwise
                // the pair would churn between escaping and re-detecting on
                // residual drift.
                let separated = {
                    let (p_end, _, _) = esc.coeffs.sample(horizon - t_exit);
                    interval.participants.iter().all(|j| {
                        let (p_other, _, _) = escape_trajs[j].sample(horizon);
                        (p_other - p_end).norm() >= diameter + 0.1 * params.radius
                    })
                };
                if !separated {
                    k += 1;
                    continue;
                }
                if esc.outcome.is_degraded() {
                    stats.degraded_solves += 1;
                }
                if t_exit > arc.start + 1e-12 {
                    let mut clipped = arc.clone();
                    clipped.end = t_exit;
                    pieces.push(PlannedArc {
                        start: arc.start,
                        end: t_exit,
                        motion: ArcMotion::Contact(clipped),
                    });
                }
                pieces.push(PlannedArc {
                    start: t_exit,
                    end: horizon,
                    motion: ArcMotion::Free(esc.coeffs),
                });
                stats.escapes_taken += 1;
                escaped = true;
                break 'intervals;
            }
            k += 1;
        }

        // No escape: ride the arc to its end.
        pieces.push(PlannedArc {
            start: arc.start,
            end: arc.end,
            motion: ArcMotion::Contact(arc.clone()),
        });
        cursor_t = arc.end;
        cursor_state = arc.state_of(ctx.self_id, arc.end).expect("self participates");
    }

    if !escaped {
        let tail = horizon - cursor_t;
        if tail > 1e-12 {
            if tail <= params.dt / 2.0 {
                // Extend the last arc to the horizon instead of forcing a
                // violent terminal connection.
                if let Some(last) = pieces.last_mut() {
                    match &mut last.motion {
                        ArcMotion::Contact(c) => c.end = horizon,
                        ArcMotion::Free(c) => c.t_end = horizon - last.start,
                    }
                    last.end = horizon;
                }
            } else {
                let terminal_state = unconstrained.state_at(horizon);
                let conn = connect(cursor_state, terminal_state, tail)?;
                pieces.push(PlannedArc {
                    start: cursor_t,
                    end: horizon,
                    motion: ArcMotion::Free(conn),
                });
            }
        }
    }

    let mut trajectory = PiecewiseTrajectory::assemble(ctx.self_id, pieces)?;

    // Post-check the stitched plan against the cooperative model (contact
    // participants riding their arcs from the moment they join one, their
    // known trajectories before). An unresolved conflict is retained and
    // flagged; the next replanning round sees fresher states.
    let model_position = |j: usize, t: f64| -> Vec2 {
        let base = &detection_trajs[&j];
        let traj = model_switches
            .get(&j)
            .and_then(|timeline| {
                timeline.iter().rev().find(|(switch, _)| t >= *switch).map(|(_, c)| c)
            })
            .unwrap_or(base);
        traj.sample(t).0
    };
    let steps = (horizon / params.dt).ceil() as usize;
    'scan: for k in 0..=steps {
        let t = (k as f64 * params.dt).min(horizon);
        let (p_self, _, _) = trajectory.sample(t);
        for &j in detection_trajs.keys() {
            if (model_position(j, t) - p_self).norm() < diameter - 1e-6 {
                stats.residual_risk = true;
                break 'scan;
            }
        }
    }
    trajectory.residual_risk = stats.residual_risk;

    Ok(PlanOutcome { trajectory, stats })
}

/// A world the replanning loop can observe and drive.
pub trait WorldModel {
    fn snapshot(&self) -> FlockSnapshot;
    /// Estimated centroid velocity (finite difference over recent snapshots).
    fn centroid_velocity(&self) -> Vec2;
    /// Execute the given plans for `window` seconds.
    fn advance(
        &mut self,
        plans: &BTreeMap<usize, PiecewiseTrajectory>,
        window: f64,
    ) -> Result<()>;
}

/// One planning round: the snapshot time it was planned at and the per-agent
/// trajectories.
#[derive(Debug, Clone)]
pub struct Round {
    pub time: f64,
    pub plans: BTreeMap<usize, PiecewiseTrajectory>,
    pub stats: PlanStats,
}

/// Replanning session state carried across rounds: the previously broadcast
/// trajectories (exchange mode) and how far the world advanced since.
#[derive(Debug, Default)]
pub struct PlanSession {
    prev_broadcast: BTreeMap<usize, PiecewiseTrajectory>,
    prev_window: f64,
}

impl PlanSession {
    pub fn new() -> Self {
        Self::default()
    }

    /// Terminal-position targets for one agent, per mode and bootstrap rule:
    /// sensing uses currently sensed positions; exchange evaluates the
    /// previously broadcast trajectories at the new terminal time, with a
    /// constant-velocity extrapolation substituting for agents without a
    /// prior broadcast (the first round, or a neighbor that just entered
    /// range).
    fn terminal_targets(
        &self,
        id: usize,
        snapshot: &FlockSnapshot,
        n0: &BTreeSet<usize>,
        p_cg: Vec2,
        params: &FlockParams,
    ) -> Vec<Vec2> {
        if params.mode == Mode::Sensing {
            return sensing_terminal_targets(id, snapshot, n0, p_cg);
        }
        if n0.len() <= 1 {
            return vec![p_cg];
        }
        let eval_time = self.prev_window + params.horizon;
        n0.iter()
            .filter(|&&j| j != id)
            .map(|&j| match self.prev_broadcast.get(&j) {
                Some(traj) => traj.sample(eval_time).0,
                None => {
                    let s = snapshot.states[j];
                    s.position + s.velocity * params.horizon
                }
            })
            .collect()
    }

    /// Plan all agents simultaneously against one snapshot. Returns the
    /// final plans; phase-A unconstrained trajectories become the next
    /// round's broadcast in exchange mode.
    pub fn plan_round(
        &mut self,
        snapshot: &FlockSnapshot,
        centroid_velocity: Vec2,
        params: &FlockParams,
    ) -> Result<(BTreeMap<usize, PiecewiseTrajectory>, PlanStats)> {
        let n = snapshot.len();
        if n == 0 {
            return Err(Error::EmptySnapshot);
        }
        let p_cg = snapshot.centroid()?;
        let mut stats = PlanStats::default();

        // Phase A: every agent's unconstrained terminal solve.
        let mut neighborhoods = Vec::with_capacity(n);
        let mut v_avgs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        let mut unconstrained = Vec::with_capacity(n);
        for i in 0..n {
            let n0 = snapshot.neighborhood(i, params.sensing_range)?;
            let v_avg = average_velocity(snapshot, &n0, centroid_velocity);
            let tg = self.terminal_targets(i, snapshot, &n0, p_cg, params);
            let sol = terminal_solve(snapshot.states[i], &tg, v_avg, params, params.horizon)?;
            if sol.outcome.is_degraded() {
                stats.degraded_solves += 1;
            }
            unconstrained.push(PiecewiseTrajectory::single_for(i, sol.coeffs)?);
            neighborhoods.push(n0);
            v_avgs.push(v_avg);
            targets.push(tg);
        }

        // Phase B: stitch each agent's plan against the exchanged
        // trajectories.
        let mut plans = BTreeMap::new();
        for i in 0..n {
            let known_trajs: BTreeMap<usize, PiecewiseTrajectory> = match params.mode {
                Mode::Exchange => neighborhoods[i]
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (j, unconstrained[j].clone()))
                    .collect(),
                Mode::Sensing => BTreeMap::new(),
            };
            let ctx = PlanContext {
                self_id: i,
                snapshot,
                known_trajs,
                terminal_targets: targets[i].clone(),
                v_avg: v_avgs[i],
                params,
            };
            let outcome = plan(&ctx)?;
            stats.absorb(outcome.stats);
            plans.insert(i, outcome.trajectory);
        }

        if params.mode == Mode::Exchange {
            self.prev_broadcast = (0..n).map(|i| (i, unconstrained[i].clone())).collect();
        }
        Ok((plans, stats))
    }

    pub fn note_advance(&mut self, window: f64) {
        self.prev_window = window;
    }
}

/// Drive a world through planning rounds every ΔT for `duration` seconds,
/// yielding the stream of (time, per-agent plans).
pub fn replan_loop<W: WorldModel>(
    world: &mut W,
    params: &FlockParams,
    duration: f64,
) -> Result<Vec<Round>> {
    if duration < params.delta_t - 1e-9 {
        return Err(Error::invalid_param("duration", "must cover at least one replanning period"));
    }
    let mut session = PlanSession::new();
    let mut rounds = Vec::new();
    let mut elapsed = 0.0;
    while elapsed < duration - 1e-9 {
        let snapshot = world.snapshot();
        let (plans, stats) = session.plan_round(&snapshot, world.centroid_velocity(), params)?;
        let window = params.delta_t.min(duration - elapsed);
        world.advance(&plans, window)?;
        session.note_advance(window);
        elapsed += window;
        rounds.push(Round { time: snapshot.time, plans, stats });
    }
    Ok(rounds)
}
