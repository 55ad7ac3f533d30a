//! Evaluates the convergence-rate bounds against a real trajectory.
//!
//! Constants are filled in automatically: smoothness and strong convexity
//! exactly from the objective, gradient noise and divergence estimated along
//! the trajectory. The strongly-convex bound at horizon T should dominate the
//! observed loss gap at round T.

use sfl_lab::analysis::{bound_report, Theorem};
use sfl_lab::harness::{estimate_constants, prepare, execute, ExperimentConfig};

fn main() {
    let cfg: ExperimentConfig = serde_json::from_str(
        r#"{
            "schema_version": 1,
            "variant": "sfl-v1",
            "rounds": 500,
            "tau": 4,
            "batch_size": 32,
            "objective": {"family": "ridge", "lambda": 0.1},
            "partition": {"clients": 6, "beta": 0.5, "samples_per_class": 80, "feature_dim": 12},
            "schedule": {"kind": "diminishing"}
        }"#,
    )
    .unwrap();
    cfg.validate().unwrap();

    let (constants, setup) = estimate_constants(&cfg, 3).unwrap();
    println!(
        "S = {:.3}, mu = {:.3}, max sigma^2 = {:.3e}, G^2 = {:.3e}",
        constants.s,
        constants.mu.unwrap(),
        constants.sigma_sq.iter().cloned().fold(0.0, f64::max),
        constants.g_sq
    );

    for theorem in Theorem::ALL {
        let report = bound_report(theorem, &constants, &setup).unwrap();
        println!("{:<16} bound = {:.4e}", report.theorem, report.value);
    }

    let prepared = prepare(&cfg, 3).unwrap();
    let trace = execute(&prepared).unwrap();
    let observed = trace.final_row().unwrap().loss_gap.unwrap();
    let bound = bound_report(Theorem::V1Sc, &constants, &setup).unwrap().value;
    println!("\nobserved gap at T = {observed:.4e}, v1-sc bound = {bound:.4e}");
    println!("bound dominates: {}", bound >= observed);
}
