use std::time::Instant;

use sap::config::{Controller, ScenarioConfig};
use sap::sim::{idle_time_experiment, run_trial, TrialContext};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let cfg = ScenarioConfig::default();
    let ctx = TrialContext::load(&cfg)?;
    for ctrl in [Controller::NmpcOnly, Controller::NmpcEcbf] {
        let t = Instant::now();
        let out = run_trial(&ctx, ctrl, cfg.seed, &cfg.q0)?;
        println!(
            "{:?}: wall {:.1}s sim {:.2}s min_lambda {:.4} max_acc {:.2} viol {} goal {} fault {:?} counters {:?}",
            ctrl,
            t.elapsed().as_secs_f64(),
            out.metrics.total_time,
            out.metrics.min_lambda,
            out.metrics.max_acc,
            out.metrics.violation_count,
            out.goal_reached,
            out.fault,
            out.counters
        );
        let mut top: Vec<_> = out.ticks.iter().map(|r| (r.acc, r.t)).collect();
        top.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        println!("  top acc: {:?}", &top[..8.min(top.len())]);
    }
    for wp in [true, false] {
        let t = Instant::now();
        let out = idle_time_experiment(&ctx, wp, cfg.seed, &cfg.q0)?;
        println!(
            "idle pred={}: wall {:.1}s total {:.2}s h_idl {:.2} r_idl {:.2} goal {} fault {:?}",
            wp,
            t.elapsed().as_secs_f64(),
            out.metrics.total_time,
            out.metrics.h_idl,
            out.metrics.r_idl,
            out.goal_reached,
            out.fault
        );
    }
    Ok(())
}
