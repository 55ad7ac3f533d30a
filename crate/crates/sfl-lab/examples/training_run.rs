//! Trains a split ridge model with SFL-V1 and prints the convergence trace.
//!
//! The diminishing schedule is auto-filled from the exact smoothness and
//! strong-convexity constants, so the loss gap should decay roughly like 1/t.

use sfl_lab::analysis::{default_window, fit_rate, TraceMetric};
use sfl_lab::harness::{prepare, execute, ExperimentConfig};

fn main() {
    let cfg: ExperimentConfig = serde_json::from_str(
        r#"{
            "schema_version": 1,
            "variant": "sfl-v1",
            "rounds": 400,
            "tau": 5,
            "batch_size": 32,
            "objective": {"family": "ridge", "lambda": 0.1},
            "partition": {"clients": 10, "beta": 0.5, "samples_per_class": 100, "feature_dim": 20},
            "schedule": {"kind": "diminishing"}
        }"#,
    )
    .unwrap();
    cfg.validate().unwrap();

    let prepared = prepare(&cfg, 42).unwrap();
    let trace = execute(&prepared).unwrap();

    println!("round    loss          loss_gap      dist_full     eta");
    for row in trace.rows.iter().step_by(50) {
        println!(
            "{:>5}  {:12.6e}  {:12.6e}  {:12.6e}  {:.4e}",
            row.t,
            row.loss,
            row.loss_gap.unwrap(),
            row.dist_full.unwrap(),
            row.eta
        );
    }
    let last = trace.final_row().unwrap();
    println!(
        "\nfinal: loss_gap = {:.3e}, comm = {} bytes, flops = {:.2e}",
        last.loss_gap.unwrap(),
        last.comm_bytes,
        last.flops as f64
    );

    let slope = fit_rate(&trace, TraceMetric::LossGap, default_window(&trace)).unwrap();
    println!("fitted log-log slope of the loss gap: {slope:.3} (theory: about -1)");
}
