use flockopt::flock_model::*;
use flockopt::sim_engine::*;

fn windows_mean(series: &[f64], per: usize) -> Vec<f64> {
    series.chunks(per).filter(|c| c.len() == per).map(|c| c.iter().sum::<f64>() / per as f64).collect()
}

fn main() {
    for seed in [3u64, 7, 21, 42] {
        let hex = Scenario {
            params: FlockParams {
                n_agents: 6, radius: 0.11, sensing_range: 4.5, spacing: 0.25,
                desired_velocity: Vec2::new(2.5, 0.0), v_max: 5.0, u_max: 25.0,
                w1: 1.0, w2: 1.0, w3: 0.05, horizon: 1.2, delta_t: 0.1, dt: 0.01,
                mode: Mode::Sensing, gradient_consistent_lambda_p: false,
            },
            initial: InitialCondition::Random { seed, domain: [0.0, 0.0, 1.0, 1.0], min_separation: 0.28, initial_speed_max: 0.0 },
            duration: 20.0,
            metrics_window: 2.0,
        };
        let t0 = std::time::Instant::now();
        let log = run(&hex).unwrap();
        let wall = t0.elapsed().as_secs_f64();
        let nn = nearest_neighbor_distances(&log.final_snapshot);
        let d = hex.params.spacing;
        let mean_v = log.final_snapshot.mean_velocity().unwrap();
        let summary = metrics(&log, 2.0).unwrap();
        let mut peak = 0.0_f64; let mut tail = 0.0; let mut tn = 0; let mut min_d = f64::INFINITY;
        let t_end = log.final_snapshot.time;
        for r in &summary.rows {
            if r.time <= 2.0 { peak = peak.max(r.max_u); }
            if r.time >= t_end - 2.0 { tail += r.max_u; tn += 1; }
            min_d = min_d.min(r.min_distance);
        }
        println!("hex seed{seed}: nn/D {:?} ok={} v_err {:.4} accel {:.4} min {:.4} wall {:.2}s a3={}",
            nn.iter().map(|v| (v/d*100.).round()/100.).collect::<Vec<_>>(),
            nn.iter().all(|&v| (v-d).abs() <= 0.15*d),
            (mean_v - hex.params.desired_velocity).norm(),
            tail/tn as f64/peak.max(1e-12), min_d, wall, log.counters.assumption3_breaches);
    }
    for seed in [11u64, 4, 9] {
        let twelve = Scenario {
            params: FlockParams {
                n_agents: 12, radius: 0.04, sensing_range: 0.3, spacing: 0.25,
                desired_velocity: Vec2::new(1.7677669529663689, 1.7677669529663689), v_max: 5.0, u_max: 25.0,
                w1: 1.0, w2: 1.0, w3: 0.05, horizon: 1.2, delta_t: 0.1, dt: 0.01,
                mode: Mode::Exchange, gradient_consistent_lambda_p: false,
            },
            initial: InitialCondition::Random { seed, domain: [0.0, 0.0, 1.5, 1.5], min_separation: 0.2, initial_speed_max: 0.0 },
            duration: 25.0,
            metrics_window: 2.0,
        };
        let log = run(&twelve).unwrap();
        let per = (1.0 / twelve.params.dt).round() as usize;
        let mut all_ok = true;
        for i in 0..12 {
            let series: Vec<f64> = log.steps.iter().map(|s| s.flock_error[i]).collect();
            let w = windows_mean(&series, per);
            let initial = w[0];
            let Some(wb) = w.iter().position(|&v| v < 0.05 * initial) else { all_ok = false; println!("  agent {i} never < 5%"); continue; };
            let mut ws = wb;
            while ws > 0 && w[ws - 1] >= w[ws] * (1.0 - 1e-3) { ws -= 1; }
            if ws > (w.len() / 2).max(2) { all_ok = false; println!("  agent {i}: run starts {ws} wb {wb}"); }
        }
        let mut min_d = f64::INFINITY;
        for s in &log.steps { min_d = min_d.min(s.min_distance); }
        println!("f12 seed{seed}: perA ok={all_ok} min {:.4} a3={} faults={}", min_d, log.counters.assumption3_breaches, log.counters.snapshot_faults);
    }
}
