//! Safety-constraint machinery: tangency conditions, contact detection
//! against planned trajectories, the contact basis, matched-velocity
//! constrained arcs, and an optimality-residual oracle for the constrained
//! branch.
//!
//! The safety constraint ‖s_ij‖ ≥ 2R is differentiated until the control
//! appears, giving the tangency vector. When planned trajectories would
//! violate it, the affected agents share a constrained arc over which they
//! hold a common velocity with zero control; relative positions are frozen,
//! so separations never change inside an arc.

use std::collections::{BTreeMap, BTreeSet};

use crate::cubic_solver::{solve_terminal_bvp, solve_terminal_sensing, TerminalSolution};
use crate::error::{Error, Result};
use crate::flock_model::{AgentState, FlockParams, Mode, Vec2};
use crate::planner::PiecewiseTrajectory;

/// Successive derivatives of the safety constraint, all nonpositive on a
/// safe trajectory sample; `n0 = 0` characterizes contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangencyVector {
    /// 4R² − s·s  (m²)
    pub n0: f64,
    /// −s·ṡ  (m²/s)
    pub n1: f64,
    /// −s·s̈ − ṡ·ṡ  (m²/s²)
    pub n2: f64,
}

impl TangencyVector {
    pub fn is_safe(&self) -> bool {
        self.n0 <= 0.0
    }
}

/// Tangency conditions for one agent pair from their relative kinematics.
pub fn tangency(s: Vec2, s_dot: Vec2, s_ddot: Vec2, radius: f64) -> TangencyVector {
    TangencyVector {
        n0: 4.0 * radius * radius - s.dot(s),
        n1: -s.dot(s_dot),
        n2: -s.dot(s_ddot) - s_dot.dot(s_dot),
    }
}

/// Orthonormal frame at a contact: p̂ along the separation (s/2R at contact)
/// and q̂ along the relative velocity.
#[derive(Debug, Clone, Copy)]
pub struct ContactBasis {
    pub p_hat: Vec2,
    pub q_hat: Vec2,
    /// Relative speed ‖ṡ‖ at the contact.
    pub rel_speed: f64,
}

/// Build the contact basis. Requires ‖s‖ = 2R within 1e−6 relative and a
/// nonzero relative speed; with zero relative speed the basis is undefined
/// and the caller uses the matched-velocity arc directly.
pub fn contact_basis(s: Vec2, s_dot: Vec2, radius: f64) -> Result<ContactBasis> {
    let diameter = 2.0 * radius;
    let sep = s.norm();
    if (sep - diameter).abs() > 1e-6 * diameter {
        return Err(Error::BasisUndefined(format!(
            "separation {sep} is not at contact distance {diameter}"
        )));
    }
    let rel_speed = s_dot.norm();
    if rel_speed <= 1e-9 {
        return Err(Error::BasisUndefined("zero relative speed".into()));
    }
    Ok(ContactBasis { p_hat: s / sep, q_hat: s_dot / rel_speed, rel_speed })
}

/// A time window over which an agent's active constraint set is nonempty and
/// invariant. `participants` holds the other agents (self excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct ContactInterval {
    pub start: f64,
    pub end: f64,
    pub participants: BTreeSet<usize>,
}

/// Matched-velocity constrained arc: every participant translates rigidly at
/// the shared velocity with zero control, so pairwise distances are exactly
/// preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedArc {
    pub start: f64,
    pub end: f64,
    pub shared_velocity: Vec2,
    /// Entry position per participant, ordered by id.
    pub entries: Vec<(usize, Vec2)>,
}

impl ConstrainedArc {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn entry_of(&self, id: usize) -> Option<Vec2> {
        self.entries.iter().find(|(k, _)| *k == id).map(|(_, p)| *p)
    }

    /// State of a participant at absolute plan time `t` within the arc.
    pub fn state_of(&self, id: usize, t: f64) -> Option<AgentState> {
        let entry = self.entry_of(id)?;
        Some(AgentState::new(entry + self.shared_velocity * (t - self.start), self.shared_velocity))
    }
}

/// Build a constrained arc from entry states. The shared velocity is the
/// arithmetic mean of the entries; control is identically zero, so the arc
/// contributes no energy.
pub fn make_constrained_arc(
    entry_states: &BTreeMap<usize, AgentState>,
    start: f64,
    end: f64,
    radius: f64,
) -> Result<ConstrainedArc> {
    if end <= start {
        return Err(Error::NonPositiveDuration(end - start));
    }
    if entry_states.is_empty() {
        return Err(Error::invalid_param("entry_states", "at least one participant required"));
    }
    let limit = 2.0 * radius - 1e-9;
    let ids: Vec<usize> = entry_states.keys().copied().collect();
    for (n, &i) in ids.iter().enumerate() {
        for &j in &ids[n + 1..] {
            let dist = (entry_states[&j].position - entry_states[&i].position).norm();
            if dist < limit {
                return Err(Error::EntryViolation { i, j, dist, limit });
            }
        }
    }
    let mut shared = Vec2::ZERO;
    for s in entry_states.values() {
        shared += s.velocity;
    }
    shared = shared / entry_states.len() as f64;
    Ok(ConstrainedArc {
        start,
        end,
        shared_velocity: shared,
        entries: entry_states.iter().map(|(&id, s)| (id, s.position)).collect(),
    })
}

/// Internal constructor for the degraded case where the snapshot itself is
/// already inside the safety margin: the arc still freezes separations (no
/// worsening), but entry validation is skipped. The planner records the
/// fault.
pub(crate) fn rigid_hold_arc(
    entry_states: &BTreeMap<usize, AgentState>,
    start: f64,
    end: f64,
) -> ConstrainedArc {
    let mut shared = Vec2::ZERO;
    for s in entry_states.values() {
        shared += s.velocity;
    }
    shared = shared / entry_states.len().max(1) as f64;
    ConstrainedArc {
        start,
        end,
        shared_velocity: shared,
        entries: entry_states.iter().map(|(&id, s)| (id, s.position)).collect(),
    }
}

/// One pair's violation window, refined to `dt/100` at the boundaries.
#[derive(Debug, Clone, Copy)]
struct PairWindow {
    enter: f64,
    exit: f64,
}

/// Signed clearance dist − 2R between two trajectories at time `t`.
fn clearance(a: &PiecewiseTrajectory, b: &PiecewiseTrajectory, t: f64, diameter: f64) -> f64 {
    let (pa, _, _) = a.sample(t);
    let (pb, _, _) = b.sample(t);
    (pb - pa).norm() - diameter
}

fn bisect_crossing(
    a: &PiecewiseTrajectory,
    b: &PiecewiseTrajectory,
    diameter: f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> f64 {
    // Invariant: clearance changes sign between lo and hi.
    let f_lo = clearance(a, b, lo, diameter);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = clearance(a, b, mid, diameter);
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Violation windows of one pair over the common span.
fn pair_windows(
    a: &PiecewiseTrajectory,
    b: &PiecewiseTrajectory,
    params: &FlockParams,
) -> Vec<PairWindow> {
    let diameter = 2.0 * params.radius;
    let (t0, tf) = (a.span().0, a.span().1);
    let dt = params.dt;
    let steps = ((tf - t0) / dt).ceil().max(1.0) as usize;
    let tol = dt / 100.0;

    // Sample times, then scan for sign structure. Between samples where the
    // clearance cannot possibly dip to zero (bounded by relative speed and
    // acceleration), the subinterval is skipped; otherwise it is subsampled.
    let time_at = |k: usize| {
        if k >= steps {
            tf
        } else {
            t0 + k as f64 * dt
        }
    };
    let mut events: Vec<(f64, bool)> = Vec::new(); // (time, entering_violation)
    let mut inside = clearance(a, b, t0, diameter) < 0.0;
    if inside {
        events.push((t0, true));
    }
    for k in 0..steps {
        let (ta, tb) = (time_at(k), time_at(k + 1));
        if tb - ta <= 0.0 {
            continue;
        }
        let f_a = clearance(a, b, ta, diameter);
        let f_b = clearance(a, b, tb, diameter);
        let mid = 0.5 * (ta + tb);
        // Local bound on how fast the clearance can change.
        let rel = |t: f64| {
            let (_, va, ua) = a.sample(t);
            let (_, vb, ub) = b.sample(t);
            ((vb - va).norm(), (ub - ua).norm())
        };
        let (v1, a1) = rel(ta);
        let (v2, a2) = rel(tb);
        let (v3, a3) = rel(mid);
        let speed_bound = v1.max(v2).max(v3) + a1.max(a2).max(a3) * (tb - ta);
        let reachable = speed_bound * (tb - ta) * 1.5 + 1e-12;
        if f_a.min(f_b) > reachable && !inside {
            continue;
        }
        // Fine scan for sign changes within the subinterval.
        let fine = 100;
        let mut prev_t = ta;
        let mut prev_f = f_a;
        for m in 1..=fine {
            let t = ta + (tb - ta) * m as f64 / fine as f64;
            let f = clearance(a, b, t, diameter);
            if (f < 0.0) != (prev_f < 0.0) {
                let cross = bisect_crossing(a, b, diameter, prev_t, t, tol);
                events.push((cross, f < 0.0));
                inside = f < 0.0;
            }
            prev_t = t;
            prev_f = f;
        }
    }
    if inside {
        events.push((tf, false));
    }

    let mut windows = Vec::new();
    let mut open: Option<f64> = None;
    for (t, entering) in events {
        match (entering, open) {
            (true, None) => open = Some(t),
            (false, Some(s)) => {
                if t - s > 1e-12 {
                    windows.push(PairWindow { enter: s, exit: t });
                }
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        if tf - s > 1e-12 {
            windows.push(PairWindow { enter: s, exit: tf });
        }
    }
    windows
}

/// Detect the maximal disjoint intervals over which the set of would-be
/// violators against `traj` is nonempty and invariant, sampling at `dt` with
/// boundary refinement to `dt/100`.
pub fn detect_contacts(
    traj: &PiecewiseTrajectory,
    neighbor_trajs: &BTreeMap<usize, PiecewiseTrajectory>,
    params: &FlockParams,
) -> Result<Vec<ContactInterval>> {
    let (t0, tf) = traj.span();
    for (id, other) in neighbor_trajs {
        let (o0, of) = other.span();
        if (o0 - t0).abs() > 1e-9 || (of - tf).abs() > 1e-9 {
            return Err(Error::MismatchedHorizons {
                detail: format!(
                    "trajectory of agent {id} spans [{o0}, {of}], expected [{t0}, {tf}]"
                ),
            });
        }
    }

    let mut per_pair: BTreeMap<usize, Vec<PairWindow>> = BTreeMap::new();
    let mut cuts: Vec<f64> = vec![t0, tf];
    for (&j, other) in neighbor_trajs {
        let windows = pair_windows(traj, other, params);
        for w in &windows {
            cuts.push(w.enter);
            cuts.push(w.exit);
        }
        if !windows.is_empty() {
            per_pair.insert(j, windows);
        }
    }
    if per_pair.is_empty() {
        return Ok(Vec::new());
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    // Segment the span and group by violator set.
    let mut intervals: Vec<ContactInterval> = Vec::new();
    for pair in cuts.windows(2) {
        let (seg_start, seg_end) = (pair[0], pair[1]);
        if seg_end - seg_start < 1e-12 {
            continue;
        }
        let mid = 0.5 * (seg_start + seg_end);
        let mut violators = BTreeSet::new();
        for (&j, windows) in &per_pair {
            if windows.iter().any(|w| mid > w.enter && mid < w.exit) {
                violators.insert(j);
            }
        }
        if violators.is_empty() {
            continue;
        }
        match intervals.last_mut() {
            Some(last) if (last.end - seg_start).abs() < 1e-9 && last.participants == violators => {
                last.end = seg_end;
            }
            _ => intervals.push(ContactInterval {
                start: seg_start,
                end: seg_end,
                participants: violators,
            }),
        }
    }
    Ok(intervals)
}

/// Finite-difference residuals of the coupled constrained-branch equations
/// on sampled relative speed `a(t)` and multiplier sum `m(t)` series.
///
/// Central differences up to the third derivative need two points on each
/// side, so the residual series cover the interior indices `2..n−2`.
pub fn ode_residuals(
    a_series: &[f64],
    m_series: &[f64],
    radius: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = a_series.len();
    if n < 5 || m_series.len() != n {
        return Err(Error::SeriesTooShort { len: n.min(m_series.len()), need: 5 });
    }
    if dt <= 0.0 {
        return Err(Error::NonPositiveDuration(dt));
    }
    let r = radius;
    let two_r = 2.0 * r;
    let mut r1 = Vec::with_capacity(n - 4);
    let mut r2 = Vec::with_capacity(n - 4);
    for k in 2..n - 2 {
        let a = a_series[k];
        let m = m_series[k];
        let a_dot = (a_series[k + 1] - a_series[k - 1]) / (2.0 * dt);
        let a_ddot = (a_series[k + 1] - 2.0 * a + a_series[k - 1]) / (dt * dt);
        let a_dddot = (a_series[k + 2] - 2.0 * a_series[k + 1] + 2.0 * a_series[k - 1]
            - a_series[k - 2])
            / (2.0 * dt * dt * dt);
        let m_dot = (m_series[k + 1] - m_series[k - 1]) / (2.0 * dt);
        let m_ddot = (m_series[k + 1] - 2.0 * m + m_series[k - 1]) / (dt * dt);

        r1.push(
            4.0 * a * a_ddot / two_r + 3.0 * a_dot * a_dot / two_r + two_r * m_ddot
                - a.powi(4) / (8.0 * r.powi(3))
                - m * a * a / two_r,
        );
        r2.push(m * a_dot + m_dot * a + 6.0 * a * a * a_dot / (4.0 * r * r) - a_dddot);
    }
    Ok((r1, r2))
}

/// Try to exit a constrained arc early at `t_exit` onto an unconstrained
/// trajectory toward the terminal conditions.
///
/// Solves the terminal boundary-value problem from the arc state and accepts
/// the candidate only if it stays clear of every trajectory in `other_trajs`
/// over `[t_exit, t_f]`, sampled at `dt`. Exiting exactly at the arc end is
/// the degenerate escape: the post-arc plan is returned without the clearance
/// check, since it coincides with the default continuation.
#[allow(clippy::too_many_arguments)]
pub fn check_escape(
    arc: &ConstrainedArc,
    self_id: usize,
    t_exit: f64,
    targets: &[Vec2],
    v_avg: Vec2,
    params: &FlockParams,
    t_f: f64,
    other_trajs: &BTreeMap<usize, PiecewiseTrajectory>,
) -> Result<Option<TerminalSolution>> {
    if t_exit < arc.start - 1e-9 || t_exit > arc.end + 1e-9 {
        return Err(Error::OutsideArc { t: t_exit, start: arc.start, end: arc.end });
    }
    let remaining = t_f - t_exit;
    if remaining <= 1e-9 {
        return Ok(None);
    }
    let state = arc
        .state_of(self_id, t_exit)
        .ok_or(Error::UnknownAgent(self_id))?;
    let sol = match params.mode {
        Mode::Exchange => solve_terminal_bvp(state, targets, v_avg, params, remaining)?,
        Mode::Sensing => solve_terminal_sensing(state, targets, v_avg, params, remaining)?,
    };

    if t_exit >= arc.end - 1e-12 {
        return Ok(Some(sol));
    }

    let diameter = 2.0 * params.radius;
    let steps = (remaining / params.dt).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let tau = (k as f64 * params.dt).min(remaining);
        let (p_self, _, _) = sol.coeffs.sample(tau);
        let t_abs = t_exit + tau;
        for other in other_trajs.values() {
            let (p_other, _, _) = other.sample(t_abs);
            if (p_other - p_self).norm() < diameter - 1e-9 {
                return Ok(None);
            }
        }
    }
    Ok(Some(sol))
}
