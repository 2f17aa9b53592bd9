//! Closed-form unconstrained energy-optimal arcs and the two boundary-value
//! problems built on them: fixed-endpoint connection and free-terminal with
//! flocking cost.
//!
//! An energy-optimal unconstrained arc has cubic position, quadratic
//! velocity, and affine control:
//!
//! ```text
//! p(t) = a t³/6 + b t²/2 + c t + d
//! v(t) = a t²/2 + b t + c
//! u(t) = a t + b
//! ```
//!
//! with the position costate constant (λᵖ = a) and the velocity costate
//! affine (λᵛ(t) = −a t − b). Every arc runs on a local clock starting at 0;
//! the linear systems condition badly at large absolute times otherwise.

use crate::error::{Error, Result};
use crate::flock_model::{AgentState, FlockParams, Vec2};

/// Convergence target for the terminal position condition.
pub const BC3_TOL: f64 = 1e-8;
const NEWTON_MAX_ITERS: u32 = 50;
const NEWTON_FD_STEP: f64 = 1e-6;
const FIXED_POINT_MAX_ITERS: u32 = 200;
const FIXED_POINT_DAMPING: f64 = 0.5;

/// The four integration constants of one unconstrained arc, on a local
/// clock with `t_start = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicCoeffs {
    pub a: Vec2,
    pub b: Vec2,
    pub c: Vec2,
    pub d: Vec2,
    pub t_start: f64,
    pub t_end: f64,
}

impl CubicCoeffs {
    pub fn new(a: Vec2, b: Vec2, c: Vec2, d: Vec2, duration: f64) -> Result<Self> {
        if duration <= 0.0 {
            return Err(Error::NonPositiveDuration(duration));
        }
        Ok(CubicCoeffs { a, b, c, d, t_start: 0.0, t_end: duration })
    }

    /// A zero-control arc from `state`.
    pub fn ballistic(state: AgentState, duration: f64) -> Result<Self> {
        CubicCoeffs::new(Vec2::ZERO, Vec2::ZERO, state.velocity, state.position, duration)
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Position, velocity, and control at local time `t`.
    pub fn eval(&self, t: f64) -> Result<(Vec2, Vec2, Vec2)> {
        if t < self.t_start - 1e-9 || t > self.t_end + 1e-9 {
            return Err(Error::OutsideArc { t, start: self.t_start, end: self.t_end });
        }
        Ok(self.sample(t))
    }

    /// As [`eval`](Self::eval) without the domain check. The polynomial
    /// extends smoothly, so out-of-range samples extrapolate.
    pub fn sample(&self, t: f64) -> (Vec2, Vec2, Vec2) {
        let p = self.a * (t * t * t / 6.0) + self.b * (t * t / 2.0) + self.c * t + self.d;
        let v = self.a * (t * t / 2.0) + self.b * t + self.c;
        let u = self.a * t + self.b;
        (p, v, u)
    }

    pub fn state_at(&self, t: f64) -> AgentState {
        let (p, v, _) = self.sample(t);
        AgentState::new(p, v)
    }

    /// Control energy ∫‖u(t)‖² dt over the arc, in closed form.
    pub fn energy(&self) -> f64 {
        let (ts, te) = (self.t_start, self.t_end);
        self.a.norm_squared() * (te.powi(3) - ts.powi(3)) / 3.0
            + self.a.dot(self.b) * (te * te - ts * ts)
            + self.b.norm_squared() * (te - ts)
    }

    pub fn costates(&self) -> CostateTrace {
        CostateTrace { lambda_p: self.a, b: self.b }
    }
}

/// Costate trajectory of an unconstrained arc: constant position costate,
/// affine velocity costate with λ̇ᵛ = −λᵖ.
#[derive(Debug, Clone, Copy)]
pub struct CostateTrace {
    pub lambda_p: Vec2,
    b: Vec2,
}

impl CostateTrace {
    pub fn lambda_v(&self, t: f64) -> Vec2 {
        -(self.lambda_p * t) - self.b
    }
}

/// Unique cubic matching `x_a` at local time 0 and `x_b` at `duration`.
///
/// This is the minimum-energy twice-differentiable connection between the
/// two states (8 scalar conditions, 8 unknowns, solved in closed form).
pub fn connect(x_a: AgentState, x_b: AgentState, duration: f64) -> Result<CubicCoeffs> {
    if duration <= 0.0 {
        return Err(Error::NonPositiveDuration(duration));
    }
    let t = duration;
    let dv = x_b.velocity - x_a.velocity;
    let dp = x_b.position - x_a.position - x_a.velocity * t;
    let a = (dv * (6.0 * t) - dp * 12.0) / (t * t * t);
    let b = dp * (6.0 / (t * t)) - dv * (2.0 / t);
    CubicCoeffs::new(a, b, x_a.velocity, x_a.position, duration)
}

/// How the terminal boundary-value solve concluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveOutcome {
    /// Newton iteration met the residual tolerance.
    Newton { iterations: u32 },
    /// Damped fixed-point fallback met the tolerance.
    FixedPoint { iterations: u32 },
    /// The zero branch satisfies the condition outright (vanishing weight or
    /// vanishing right-hand side).
    TrivialZero,
    /// Sensing approximation: the position condition was evaluated on
    /// currently sensed geometry, which has an explicit solution.
    ClosedForm,
    /// Neither method converged; the zero branch was returned as a fallback.
    Degraded,
}

impl SolveOutcome {
    pub fn is_degraded(&self) -> bool {
        matches!(self, SolveOutcome::Degraded)
    }
}

/// Result of [`solve_terminal_bvp`], with the residual of the terminal
/// position condition and the solve path taken.
#[derive(Debug, Clone, Copy)]
pub struct TerminalSolution {
    pub coeffs: CubicCoeffs,
    pub outcome: SolveOutcome,
    pub bc3_residual: f64,
}

struct TerminalSystem<'a> {
    x0: AgentState,
    targets: &'a [Vec2],
    params: &'a FlockParams,
    horizon: f64,
    /// Denominator 1 + 2(w1+w2)T of the linear velocity condition.
    denom: f64,
    w_sum: f64,
    v_ref: Vec2,
}

impl<'a> TerminalSystem<'a> {
    fn new(
        x0: AgentState,
        targets: &'a [Vec2],
        v_avg: Vec2,
        params: &'a FlockParams,
        horizon: f64,
    ) -> Self {
        let w_sum = params.w1 + params.w2;
        let v_ref = params.desired_velocity * params.w1 + v_avg * params.w2;
        let denom = 1.0 + 2.0 * w_sum * horizon;
        TerminalSystem { x0, targets, params, horizon, denom, w_sum, v_ref }
    }

    /// `b` from the terminal control condition
    /// u(T) = −2w₂(v(T)−v_avg) − 2w₁(v(T)−v_d), given `a`.
    fn b_of(&self, a: Vec2) -> Vec2 {
        let t = self.horizon;
        ((self.v_ref - self.x0.velocity * self.w_sum) * 2.0 - a * (t * (1.0 + self.w_sum * t)))
            / self.denom
    }

    fn terminal_state(&self, a: Vec2) -> (Vec2, Vec2) {
        let t = self.horizon;
        let b = self.b_of(a);
        let p = self.x0.position
            + self.x0.velocity * t
            + a * (t * t * t / 6.0)
            + b * (t * t / 2.0);
        let v = self.x0.velocity + a * (t * t / 2.0) + b * t;
        (p, v)
    }

    /// Right-hand side of the terminal position condition:
    /// −2w₃ Σ (‖s_j‖ − D) s_j (or the unit-vector variant).
    fn rhs(&self, a: Vec2) -> Vec2 {
        let (p_t, _) = self.terminal_state(a);
        let mut acc = Vec2::ZERO;
        for &q in self.targets {
            let s = q - p_t;
            let resid = s.norm() - self.params.spacing;
            let dir = if self.params.gradient_consistent_lambda_p {
                s.unit(1e-12).unwrap_or(Vec2::ZERO)
            } else {
                s
            };
            acc += dir * (-2.0 * self.params.w3 * resid);
        }
        acc
    }

    fn residual(&self, a: Vec2) -> Vec2 {
        a - self.rhs(a)
    }

    /// Scalar Σ (‖s_j‖ − D) appearing in the rearranged position condition.
    fn scalar_sum(&self, a: Vec2) -> f64 {
        let (p_t, _) = self.terminal_state(a);
        self.targets.iter().map(|&q| (q - p_t).norm() - self.params.spacing).sum()
    }

    fn build(&self, a: Vec2, outcome: SolveOutcome) -> TerminalSolution {
        let coeffs = CubicCoeffs {
            a,
            b: self.b_of(a),
            c: self.x0.velocity,
            d: self.x0.position,
            t_start: 0.0,
            t_end: self.horizon,
        };
        TerminalSolution { coeffs, outcome, bc3_residual: self.residual(a).norm() }
    }
}

/// Solve the free-terminal boundary-value problem: initial state at 0, the
/// terminal control condition, and the terminal position condition
/// a + 2w₃ Σ (‖s_j(T)‖ − D) s_j(T) = 0 with ‖residual‖ ≤ [`BC3_TOL`].
///
/// `neighbor_finals` are the predicted terminal positions of the neighbors
/// (self excluded); an isolated agent passes the flock centroid as a single
/// virtual point. Newton iteration starts from a = 0 with a finite-difference
/// Jacobian; a damped fixed-point pass is the fallback, and the zero branch
/// flagged [`SolveOutcome::Degraded`] the last resort.
pub fn solve_terminal_bvp(
    x0: AgentState,
    neighbor_finals: &[Vec2],
    v_avg: Vec2,
    params: &FlockParams,
    horizon: f64,
) -> Result<TerminalSolution> {
    if horizon <= 0.0 {
        return Err(Error::NonPositiveDuration(horizon));
    }
    if !x0.is_finite() || !v_avg.is_finite() || neighbor_finals.iter().any(|q| !q.is_finite()) {
        return Err(Error::NonFinite { context: "terminal boundary-value inputs".into() });
    }
    let sys = TerminalSystem::new(x0, neighbor_finals, v_avg, params, horizon);

    // Zero branch: vanishing aggregation weight, no targets, or a vanishing
    // right-hand side all make a = 0 exact.
    let zero = Vec2::ZERO;
    if params.w3 == 0.0 || neighbor_finals.is_empty() {
        return Ok(sys.build(zero, SolveOutcome::TrivialZero));
    }
    let r0 = sys.residual(zero);
    if r0.norm() <= BC3_TOL || (sys.scalar_sum(zero).abs() < 1e-9 && r0.norm() <= BC3_TOL) {
        return Ok(sys.build(zero, SolveOutcome::TrivialZero));
    }

    // Newton with finite-difference Jacobian.
    let mut a = zero;
    let mut r = r0;
    for iter in 1..=NEWTON_MAX_ITERS {
        let rx = sys.residual(a + Vec2::new(NEWTON_FD_STEP, 0.0));
        let ry = sys.residual(a + Vec2::new(0.0, NEWTON_FD_STEP));
        let j11 = (rx.x - r.x) / NEWTON_FD_STEP;
        let j21 = (rx.y - r.y) / NEWTON_FD_STEP;
        let j12 = (ry.x - r.x) / NEWTON_FD_STEP;
        let j22 = (ry.y - r.y) / NEWTON_FD_STEP;
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-14 || !det.is_finite() {
            break;
        }
        let dx = (-r.x * j22 + r.y * j12) / det;
        let dy = (-j11 * r.y + j21 * r.x) / det;
        a += Vec2::new(dx, dy);
        r = sys.residual(a);
        if !r.is_finite() {
            break;
        }
        if r.norm() <= BC3_TOL {
            return Ok(sys.build(a, SolveOutcome::Newton { iterations: iter }));
        }
    }

    // Damped fixed-point fallback a ← a + β (rhs(a) − a).
    let mut a = zero;
    for iter in 1..=FIXED_POINT_MAX_ITERS {
        let next = a + (sys.rhs(a) - a) * FIXED_POINT_DAMPING;
        if !next.is_finite() {
            break;
        }
        a = next;
        if sys.residual(a).norm() <= BC3_TOL {
            return Ok(sys.build(a, SolveOutcome::FixedPoint { iterations: iter }));
        }
    }

    Ok(sys.build(zero, SolveOutcome::Degraded))
}

/// Solve the terminal problem under the sensing approximation: the terminal
/// position condition is evaluated on the currently sensed displacements
/// instead of the predicted terminal ones, which makes it explicit:
///
/// ```text
/// a = −2w₃ Σ (‖s_j(t₀)‖ − D) s_j(t₀),   s_j(t₀) = q_j − p(t₀)
/// ```
///
/// The remaining constants follow from the same linear conditions as the
/// exchange-mode solve. This requires no communication and no iteration.
pub fn solve_terminal_sensing(
    x0: AgentState,
    sensed_positions: &[Vec2],
    v_avg: Vec2,
    params: &FlockParams,
    horizon: f64,
) -> Result<TerminalSolution> {
    if horizon <= 0.0 {
        return Err(Error::NonPositiveDuration(horizon));
    }
    if !x0.is_finite() || !v_avg.is_finite() || sensed_positions.iter().any(|q| !q.is_finite()) {
        return Err(Error::NonFinite { context: "sensing terminal inputs".into() });
    }
    let sys = TerminalSystem::new(x0, sensed_positions, v_avg, params, horizon);
    let mut a = Vec2::ZERO;
    if params.w3 > 0.0 {
        for &q in sensed_positions {
            let s = q - x0.position;
            let resid = s.norm() - params.spacing;
            let dir = if params.gradient_consistent_lambda_p {
                s.unit(1e-12).unwrap_or(Vec2::ZERO)
            } else {
                s
            };
            a += dir * (-2.0 * params.w3 * resid);
        }
    }
    let mut sol = sys.build(a, SolveOutcome::ClosedForm);
    // The sensing condition is met exactly by construction; the stored
    // residual reports it rather than the exchange-mode condition.
    sol.bc3_residual = 0.0;
    Ok(sol)
}

/// Terminal potential whose stationarity conditions are exactly the solver's
/// boundary conditions, evaluated at a terminal state.
///
/// The velocity part is 2w₁‖v−v_d‖² + 2w₂‖v−v_avg‖². The spacing part is
/// 2w₃ Σ ψ(‖q_j − p‖) with ψ(r) = (r−D)² in gradient-consistent mode and
/// ψ(r) = ⅔r³ − Dr² + ⅓D³ otherwise; both are nonnegative with their minimum
/// at r = D. Adding the control energy of a candidate arc gives the scalar
/// objective the solve minimizes, which is what the transcription oracle in
/// the test suite competes against.
pub fn terminal_potential(
    p_t: Vec2,
    v_t: Vec2,
    targets: &[Vec2],
    v_avg: Vec2,
    params: &FlockParams,
) -> f64 {
    let d = params.spacing;
    let vel = 2.0 * params.w1 * (v_t - params.desired_velocity).norm_squared()
        + 2.0 * params.w2 * (v_t - v_avg).norm_squared();
    let spacing: f64 = targets
        .iter()
        .map(|&q| {
            let r = (q - p_t).norm();
            if params.gradient_consistent_lambda_p {
                (r - d) * (r - d)
            } else {
                2.0 / 3.0 * r.powi(3) - d * r * r + d.powi(3) / 3.0
            }
        })
        .sum();
    vel + 2.0 * params.w3 * spacing
}

/// Terminal potential plus control energy for a candidate arc.
pub fn terminal_objective(
    coeffs: &CubicCoeffs,
    targets: &[Vec2],
    v_avg: Vec2,
    params: &FlockParams,
) -> f64 {
    let (p_t, v_t, _) = coeffs.sample(coeffs.t_end);
    terminal_potential(p_t, v_t, targets, v_avg, params) + coeffs.energy()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flock_model::Mode;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn params(w1: f64, w2: f64, w3: f64) -> FlockParams {
        FlockParams {
            n_agents: 2,
            radius: 0.1,
            sensing_range: 4.0,
            spacing: 0.25,
            desired_velocity: Vec2::new(1.0, 0.0),
            v_max: 5.0,
            u_max: 10.0,
            w1,
            w2,
            w3,
            horizon: 1.2,
            delta_t: 0.1,
            dt: 0.01,
            mode: Mode::Exchange,
            gradient_consistent_lambda_p: false,
        }
    }

    fn simpson_energy(c: &CubicCoeffs, n: usize) -> f64 {
        let h = (c.t_end - c.t_start) / n as f64;
        let f = |t: f64| {
            let (_, _, u) = c.sample(t);
            u.norm_squared()
        };
        let mut acc = f(c.t_start) + f(c.t_end);
        for k in 1..n {
            let t = c.t_start + k as f64 * h;
            acc += if k % 2 == 1 { 4.0 * f(t) } else { 2.0 * f(t) };
        }
        acc * h / 3.0
    }

    #[test]
    fn eval_ballistic_line() {
        let c = CubicCoeffs::new(Vec2::ZERO, Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::ZERO, 3.0)
            .unwrap();
        let (p, v, u) = c.eval(2.0).unwrap();
        assert_eq!(p, Vec2::new(2.0, 0.0));
        assert_eq!(v, Vec2::new(1.0, 0.0));
        assert_eq!(u, Vec2::ZERO);
    }

    #[test]
    fn eval_pure_cubic_term() {
        let c = CubicCoeffs::new(Vec2::new(6.0, 0.0), Vec2::ZERO, Vec2::ZERO, Vec2::ZERO, 2.0)
            .unwrap();
        let (p, v, u) = c.eval(1.0).unwrap();
        assert_eq!(p, Vec2::new(1.0, 0.0));
        assert_eq!(v, Vec2::new(3.0, 0.0));
        assert_eq!(u, Vec2::new(6.0, 0.0));
    }

    #[test]
    fn eval_outside_arc_errors() {
        let c = CubicCoeffs::ballistic(AgentState::new(Vec2::ZERO, Vec2::ZERO), 1.0).unwrap();
        assert!(c.eval(-0.5).is_err());
        assert!(c.eval(1.5).is_err());
        assert!(c.eval(1.0).is_ok());
    }

    #[test]
    fn connect_stationary_identity() {
        let rest = AgentState::new(Vec2::new(2.0, -1.0), Vec2::ZERO);
        let c = connect(rest, rest, 1.0).unwrap();
        assert!(c.a.norm() < 1e-30 && c.b.norm() < 1e-30);
        assert!(c.energy() == 0.0);
    }

    #[test]
    fn connect_rest_to_rest_translation() {
        // Unit translation over 1 s: p_x(t) = 3t² − 2t³, u_x(0) = 6, u_x(1) = −6.
        let x_a = AgentState::new(Vec2::ZERO, Vec2::ZERO);
        let x_b = AgentState::new(Vec2::new(1.0, 0.0), Vec2::ZERO);
        let c = connect(x_a, x_b, 1.0).unwrap();
        let (_, _, u0) = c.eval(0.0).unwrap();
        let (_, _, u1) = c.eval(1.0).unwrap();
        assert_relative_eq!(u0.x, 6.0, max_relative = 1e-12);
        assert_relative_eq!(u1.x, -6.0, max_relative = 1e-12);
        let (p, _, _) = c.eval(0.5).unwrap();
        assert_relative_eq!(p.x, 3.0 * 0.25 - 2.0 * 0.125, max_relative = 1e-12);
        assert!(connect(x_a, x_b, 0.0).is_err());
    }

    #[test]
    fn energy_trivial_values() {
        let zero = CubicCoeffs::ballistic(AgentState::new(Vec2::ZERO, Vec2::new(3.0, 1.0)), 2.0)
            .unwrap();
        assert_eq!(zero.energy(), 0.0);
        // Constant control (2,0) for 3 s: ∫4 dt = 12.
        let c = CubicCoeffs::new(Vec2::ZERO, Vec2::new(2.0, 0.0), Vec2::ZERO, Vec2::ZERO, 3.0)
            .unwrap();
        assert_relative_eq!(c.energy(), 12.0, max_relative = 1e-14);
    }

    #[test]
    fn costate_structure() {
        let c = CubicCoeffs::new(
            Vec2::new(0.4, -0.7),
            Vec2::new(1.1, 0.3),
            Vec2::ZERO,
            Vec2::ZERO,
            2.0,
        )
        .unwrap();
        let tr = c.costates();
        assert_eq!(tr.lambda_p, c.a);
        for &t in &[0.0, 0.7, 1.9] {
            let lv = tr.lambda_v(t);
            let expect = -(c.a * t) - c.b;
            assert!((lv - expect).norm() < 1e-15);
            // λ̇ᵛ = −λᵖ by centered difference.
            let h = 1e-6;
            let dot = (tr.lambda_v(t + h) - tr.lambda_v(t - h)) / (2.0 * h);
            assert!((dot + tr.lambda_p).norm() < 1e-8);
        }
    }

    #[test]
    fn solve_equilibrium_inputs_give_zero_control() {
        // v0 = v_d = v_avg and a single neighbor final at distance D.
        let p = params(1.0, 1.0, 1.0);
        let x0 = AgentState::new(Vec2::ZERO, p.desired_velocity);
        let target = x0.position + p.desired_velocity * p.horizon + Vec2::new(p.spacing, 0.0);
        let sol =
            solve_terminal_bvp(x0, &[target], p.desired_velocity, &p, p.horizon).unwrap();
        assert!(sol.coeffs.a.norm() < 1e-12 && sol.coeffs.b.norm() < 1e-12);
        assert_eq!(sol.outcome, SolveOutcome::TrivialZero);
    }

    #[test]
    fn solve_w3_zero_matches_scalar_linear_system() {
        // With a = 0 forced, b = −2(w1+w2)(v0 − v_ref) / (1 + 2(w1+w2)T)
        // when v_avg = v_d = v_ref.
        let mut p = params(0.7, 0.5, 0.0);
        let v_ref = Vec2::new(2.0, 0.0);
        p.desired_velocity = v_ref;
        let t = p.horizon;
        let v0 = Vec2::new(1.0, -1.0);
        let x0 = AgentState::new(Vec2::new(0.3, 0.1), v0);
        let sol = solve_terminal_bvp(x0, &[Vec2::new(5.0, 5.0)], v_ref, &p, t).unwrap();
        assert_eq!(sol.coeffs.a, Vec2::ZERO);
        let w = p.w1 + p.w2;
        let expect = (v0 - v_ref) * (-2.0 * w / (1.0 + 2.0 * w * t));
        assert!((sol.coeffs.b - expect).norm() < 1e-12, "{:?} vs {:?}", sol.coeffs.b, expect);
    }

    fn random_instance(
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> (AgentState, Vec<Vec2>, Vec2, FlockParams, f64) {
        let mut p = params(
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.5..2.0),
        );
        p.spacing = rng.gen_range(0.2..0.8);
        p.desired_velocity = Vec2::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        let horizon = rng.gen_range(0.8..1.5);
        let x0 = AgentState::new(
            Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        );
        let v_avg = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let drift = x0.position + x0.velocity * horizon;
        let n_targets = rng.gen_range(1..=4);
        let targets: Vec<Vec2> = (0..n_targets)
            .map(|_| {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let radius = p.spacing * rng.gen_range(0.8..3.0);
                drift + Vec2::new(angle.cos(), angle.sin()) * radius
            })
            .collect();
        (x0, targets, v_avg, p, horizon)
    }

    #[test]
    fn solve_satisfies_all_boundary_conditions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for case in 0..30 {
            let (x0, targets, v_avg, p, horizon) = random_instance(&mut rng);
            let sol = solve_terminal_bvp(x0, &targets, v_avg, &p, horizon).unwrap();
            assert!(!sol.outcome.is_degraded(), "case {case} degraded");
            let c = sol.coeffs;
            // Initial state.
            let (p0, v0, _) = c.sample(0.0);
            assert!((p0 - x0.position).norm() <= 1e-10);
            assert!((v0 - x0.velocity).norm() <= 1e-10);
            // Terminal control condition.
            let (_, v_t, u_t) = c.sample(horizon);
            let expect_u = (v_t - v_avg) * (-2.0 * p.w2)
                + (v_t - p.desired_velocity) * (-2.0 * p.w1);
            assert!((u_t - expect_u).norm() <= 1e-8, "case {case}");
            // Terminal position condition.
            assert!(sol.bc3_residual <= BC3_TOL, "case {case}: {}", sol.bc3_residual);
        }
    }

    #[test]
    fn solve_is_stationary_under_compass_perturbations() {
        // Perturbing `a` and re-solving the linear conditions never improves
        // the objective by more than 1e-6.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let delta = 1e-3;
        for _ in 0..10 {
            let (x0, targets, v_avg, p, horizon) = random_instance(&mut rng);
            let sol = solve_terminal_bvp(x0, &targets, v_avg, &p, horizon).unwrap();
            let base = terminal_objective(&sol.coeffs, &targets, v_avg, &p);
            let sys = TerminalSystem::new(x0, &targets, v_avg, &p, horizon);
            for k in 0..8 {
                let angle = k as f64 * std::f64::consts::FRAC_PI_4;
                let a = sol.coeffs.a + Vec2::new(angle.cos(), angle.sin()) * delta;
                let candidate = sys.build(a, SolveOutcome::TrivialZero).coeffs;
                let perturbed = terminal_objective(&candidate, &targets, v_avg, &p);
                assert!(perturbed >= base - 1e-6, "improved: {base} -> {perturbed}");
            }
        }
    }

    proptest! {
        #[test]
        fn velocity_is_derivative_of_position(seed in 0u64..300) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = CubicCoeffs::new(
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                2.0,
            ).unwrap();
            let h = 1e-5;
            for &t in &[0.3, 1.0, 1.7] {
                let (pp, _, _) = c.sample(t + h);
                let (pm, _, _) = c.sample(t - h);
                let (_, v, _) = c.sample(t);
                let fd = (pp - pm) / (2.0 * h);
                prop_assert!((fd - v).norm() < 1e-8);
            }
        }

        #[test]
        fn connect_reproduces_endpoints(seed in 0u64..300) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x_a = AgentState::new(
                Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            );
            let x_b = AgentState::new(
                Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            );
            let t = rng.gen_range(0.3..2.5);
            let c = connect(x_a, x_b, t).unwrap();
            let (p0, v0, _) = c.sample(0.0);
            let (p1, v1, _) = c.sample(t);
            prop_assert!((p0 - x_a.position).norm() < 1e-10);
            prop_assert!((v0 - x_a.velocity).norm() < 1e-10);
            prop_assert!((p1 - x_b.position).norm() < 1e-10);
            prop_assert!((v1 - x_b.velocity).norm() < 1e-10);
        }

        #[test]
        fn connect_beats_quintic_perturbations(seed in 0u64..200) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x_a = AgentState::new(
                Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            );
            let x_b = AgentState::new(
                Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            );
            let t_total = rng.gen_range(0.5..2.0);
            let c = connect(x_a, x_b, t_total).unwrap();
            // Perturbation q(t) = t²(T−t)²(α + βt) keeps both endpoint states.
            let alpha = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let beta = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let q_ddot = |t: f64| {
                let s = t_total - t;
                let w = alpha + beta * t;
                let g1 = 2.0 * t * s * s - 2.0 * t * t * s;
                let g2 = 2.0 * s * s - 8.0 * t * s + 2.0 * t * t;
                w * g2 + beta * (2.0 * g1)
            };
            let n = 400;
            let h = t_total / n as f64;
            let f = |t: f64| {
                let (_, _, u) = c.sample(t);
                (u + q_ddot(t)).norm_squared()
            };
            let mut acc = f(0.0) + f(t_total);
            for k in 1..n {
                let t = k as f64 * h;
                acc += if k % 2 == 1 { 4.0 * f(t) } else { 2.0 * f(t) };
            }
            let perturbed = acc * h / 3.0;
            prop_assert!(c.energy() <= perturbed + 1e-9,
                "cubic {} vs perturbed {}", c.energy(), perturbed);
        }

        #[test]
        fn energy_matches_quadrature(seed in 0u64..300) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = CubicCoeffs::new(
                Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                Vec2::ZERO,
                Vec2::ZERO,
                rng.gen_range(0.2..3.0),
            ).unwrap();
            let quad = simpson_energy(&c, 256);
            let closed = c.energy();
            let denom = quad.abs().max(1e-30);
            prop_assert!((closed - quad).abs() / denom < 1e-9);
        }
    }
}
