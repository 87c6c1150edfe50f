//! Regenerates the shipped synthetic screw-driver-task recordings in
//! data/trajectories/. Run from the workspace root:
//!     cargo run -p sap --example gen_trajectories

use sap::sim::synthetic_trajectory;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    std::fs::create_dir_all("data/trajectories")?;
    let names = [
        "screwdriver_task.csv",
        "screwdriver_task_v1.csv",
        "screwdriver_task_v2.csv",
    ];
    for (variant, name) in names.iter().enumerate() {
        let traj = synthetic_trajectory(variant)?;
        let path = format!("data/trajectories/{name}");
        traj.write_csv(&path)?;
        println!("{path}: {} frames, {:.2} s", traj.len(), traj.duration());
    }
    Ok(())
}
