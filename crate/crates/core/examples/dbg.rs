use flockopt::flock_model::*;
use flockopt::sim_engine::*;

fn explore(name: &str, sc: &Scenario) {
    let t0 = std::time::Instant::now();
    let log = run(sc).unwrap();
    let wall = t0.elapsed().as_secs_f64();
    let summary = metrics(&log, sc.metrics_window).unwrap();
    let nn = nearest_neighbor_distances(&log.final_snapshot);
    let mean_v = log.final_snapshot.mean_velocity().unwrap();
    let d = sc.params.spacing;
    let vd = sc.params.desired_velocity;
    // criterion 2 style: max-over-agents |u| series
    let mut peak_first = 0.0_f64;
    let mut tail_sum = 0.0_f64;
    let mut tail_n = 0usize;
    let t_end = log.final_snapshot.time;
    for row in &summary.rows {
        if row.time <= 2.0 { peak_first = peak_first.max(row.max_u); }
        if row.time >= t_end - 2.0 { tail_sum += row.max_u; tail_n += 1; }
    }
    let tail_mean = tail_sum / tail_n.max(1) as f64;
    let mut min_dist_overall = f64::INFINITY;
    for row in &summary.rows { min_dist_overall = min_dist_overall.min(row.min_distance); }
    println!("== {name} (wall {wall:.2}s, rounds {} events: clips={} tang={} clamp={} a3={} degr={} fault={} risk={})",
        log.rounds, log.counters.control_clips, log.counters.tangential_projections,
        log.counters.velocity_clamps, log.counters.assumption3_breaches,
        log.counters.degraded_solves, log.counters.snapshot_faults, log.counters.residual_risk_plans);
    println!("   NN final: {:?}", nn.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    println!("   NN/D in [0.85,1.15]? {:?}  (D={d})", nn.iter().map(|v| v/d).map(|r| (r*100.0).round()/100.0).collect::<Vec<_>>());
    println!("   mean_v final: ({:.4},{:.4}) vs v_d ({},{}) err {:.4} (5% = {:.4})",
        mean_v.x, mean_v.y, vd.x, vd.y, (mean_v - vd).norm(), 0.05 * vd.norm());
    println!("   accel: peak first 2s {:.4}, mean max final 2s {:.4}, ratio {:.4}", peak_first, tail_mean, tail_mean/peak_first.max(1e-12));
    println!("   min pairwise overall {:.6} vs 2R-1e-3 = {:.6}", min_dist_overall, 2.0*sc.params.radius - 1e-3);
    // phi decay (criterion 3 style)
    let n = log.steps.len();
    let phi0: f64 = log.steps[..(n/50).max(1)].iter().map(|s| s.flock_error.iter().sum::<f64>()).sum::<f64>();
    let phi1: f64 = log.steps[n-(n/50).max(1)..].iter().map(|s| s.flock_error.iter().sum::<f64>()).sum::<f64>();
    println!("   phi first2%: {:.4} final2%: {:.4} ratio {:.5}", phi0, phi1, phi1/phi0.max(1e-12));
}

fn main() {
    let hex = Scenario {
        params: FlockParams {
            n_agents: 6, radius: 0.11, sensing_range: 4.5, spacing: 0.25,
            desired_velocity: Vec2::new(2.5, 0.0), v_max: 5.0, u_max: 25.0,
            w1: 1.0, w2: 1.0, w3: 1.0, horizon: 1.2, delta_t: 0.1, dt: 0.01,
            mode: Mode::Sensing, gradient_consistent_lambda_p: false,
        },
        initial: InitialCondition::Random { seed: 3, domain: [0.0, 0.0, 1.0, 1.0], min_separation: 0.28, initial_speed_max: 0.0 },
        duration: 20.0,
        metrics_window: 2.0,
    };
    explore("hexagon6 sensing seed3", &hex);

    let twelve = Scenario {
        params: FlockParams {
            n_agents: 12, radius: 0.04, sensing_range: 0.6, spacing: 0.25,
            desired_velocity: Vec2::new(1.7677669529663689, 1.7677669529663689), v_max: 5.0, u_max: 25.0,
            w1: 1.0, w2: 1.0, w3: 1.0, horizon: 1.2, delta_t: 0.1, dt: 0.01,
            mode: Mode::Exchange, gradient_consistent_lambda_p: false,
        },
        initial: InitialCondition::Random { seed: 11, domain: [0.0, 0.0, 1.5, 1.5], min_separation: 0.2, initial_speed_max: 0.0 },
        duration: 25.0,
        metrics_window: 2.0,
    };
    explore("flock12 exchange seed11", &twelve);
}
