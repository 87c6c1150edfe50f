use nalgebra::Vector3;
use sap::config::{Controller, ScenarioConfig};
use sap::sim::{idle_time_experiment, run_trial, synthetic_trajectory_at, TrialContext};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mode = std::env::args().nth(1).unwrap_or_default();
    let cfg = ScenarioConfig::default();
    let base = TrialContext::load(&cfg)?;
    if mode == "benign" {
        let far = synthetic_trajectory_at(0, Vector3::new(3.6, 0.6, 1.2))?;
        let ctx = base.with_trajectory(far);
        let out = run_trial(&ctx, Controller::NmpcEcbf, cfg.seed, &cfg.q0)?;
        println!("goal {} fault {:?} viol {}", out.goal_reached, out.fault, out.metrics.violation_count);
    } else {
        let pass = sap::dynamics::FkPass::positions(&base.chain, &cfg.q0);
        let ee = pass.ee_position();
        let hand = ee * (1.0 + sap::sim::GOAL_STANDOFF / ee.norm());
        let pelvis = hand - Vector3::new(-0.75, -0.08, -0.35);
        println!("ee={ee:?} hand={hand:?} pelvis={pelvis:?}");
        let traj = synthetic_trajectory_at(0, pelvis)?;
        let ctx = base.with_trajectory(traj);
        for wp in [true, false] {
            let out = idle_time_experiment(&ctx, wp, cfg.seed, &cfg.q0)?;
            println!("pred={wp} total {:.2} h_idl {:.2} goal {}", out.metrics.total_time, out.metrics.h_idl, out.goal_reached);
        }
    }
    Ok(())
}
