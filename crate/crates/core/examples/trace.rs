use flockopt::flock_model::*;
use flockopt::planner::*;
use flockopt::sim_engine::*;
use std::collections::BTreeMap;

struct TraceWorld {
    inner: World,
}

fn main() {
    let seed = 5u64;
    let n = 3 + (seed % 3) as usize;
    let angle = seed as f64 * 0.7;
    let sc = Scenario {
        params: FlockParams {
            n_agents: n, radius: 0.1, sensing_range: 2.0, spacing: 0.5,
            desired_velocity: Vec2::new(angle.cos(), angle.sin()),
            v_max: 2.0, u_max: 10.0,
            w1: 1.0, w2: 1.0, w3: 0.2, horizon: 1.0, delta_t: 0.05, dt: 0.01,
            mode: Mode::Exchange, gradient_consistent_lambda_p: false,
        },
        initial: InitialCondition::Random { seed, domain: [0.0, 0.0, 4.0, 4.0], min_separation: 0.8, initial_speed_max: 0.3 },
        duration: 5.0,
        metrics_window: 1.0,
    };
    let log = run(&sc).unwrap();
    // find the dip
    let mut worst = (0.0, f64::INFINITY);
    for s in &log.steps {
        if s.min_distance < worst.1 { worst = (s.time, s.min_distance); }
    }
    println!("n={n} dip {:.5} at t={:.2}", worst.1, worst.0);
    for s in &log.steps {
        if (s.time - worst.0).abs() < 0.26 {
            let mut d01 = f64::INFINITY; let mut pair = (0, 0);
            for i in 0..n { for j in i+1..n {
                let d = (s.states[j].position - s.states[i].position).norm();
                if d < d01 { d01 = d; pair = (i, j); }
            }}
            let (i, j) = pair;
            let rel_v = (s.states[j].velocity - s.states[i].velocity).norm();
            println!("t={:.2} min={:.4} pair {:?} rv={:.3} ui={:.2},{:.2} uj={:.2},{:.2}",
                s.time, s.min_distance, pair, rel_v,
                s.controls[i].x, s.controls[i].y, s.controls[j].x, s.controls[j].y);
        }
    }
    for e in &log.events {
        if (e.time - worst.0).abs() < 0.3 {
            println!("event t={:.2} {:?} agent {:?}", e.time, e.kind, e.agent);
        }
    }
    // replay the planning round just before the dip
    let t_round = (worst.0 / 0.05).floor() * 0.05 - 0.05;
    println!("--- replay rounds near {t_round:.2} ---");
    let mut world = World::new(sc.params.clone(), init_scenario(&sc).unwrap()).unwrap();
    let mut session = PlanSession::new();
    let mut elapsed = 0.0;
    while elapsed < 5.0 - 1e-9 {
        let snapshot = world.snapshot();
        let (plans, stats) = session.plan_round(&snapshot, world.centroid_velocity(), &sc.params).unwrap();
        if (snapshot.time - t_round).abs() < 0.11 {
            println!("round t={:.2} stats {:?}", snapshot.time, stats);
            for (id, tr) in &plans {
                print!("  agent {id}: ");
                for a in tr.arcs() {
                    match &a.motion {
                        ArcMotion::Free(c) => print!("[F {:.2}-{:.2} |a|={:.1} |b|={:.1}] ", a.start, a.end, c.a.norm(), c.b.norm()),
                        ArcMotion::Contact(c) => print!("[C {:.2}-{:.2} v=({:.2},{:.2})] ", a.start, a.end, c.shared_velocity.x, c.shared_velocity.y),
                    }
                }
                println!(" risk={}", tr.residual_risk);
            }
        }
        world.advance(&plans, 0.05).unwrap();
        session.note_advance(0.05);
        elapsed += 0.05;
    }
    let _ = TraceWorld { inner: world };
}
