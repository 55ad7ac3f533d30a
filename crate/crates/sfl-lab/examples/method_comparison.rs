//! Runs all five methods on one shared problem instance and compares them.
//!
//! Everything downstream of the seed is shared: dataset, partition, initial
//! point, and per-client batch streams. With full participation and matched
//! aggregation periods, SFL-V1 and FedAvg produce bit-identical trajectories
//! even though they are implemented independently.

use sfl_lab::harness::{execute, prepare, ExperimentConfig};

fn main() {
    let base: ExperimentConfig = serde_json::from_str(
        r#"{
            "schema_version": 1,
            "rounds": 150,
            "tau": 5,
            "batch_size": 32,
            "objective": {"family": "logistic", "lambda": 0.05},
            "partition": {"clients": 8, "beta": 0.3, "samples_per_class": 120, "feature_dim": 10},
            "schedule": {"kind": "constant", "eta": 0.1}
        }"#,
    )
    .unwrap();

    let mut finals = Vec::new();
    for variant in ["sfl-v1", "sfl-v2", "fedavg", "sl", "mb-sgd"] {
        let mut cfg = base.clone();
        cfg.variant = variant.to_string();
        cfg.validate().unwrap();
        let prepared = prepare(&cfg, 7).unwrap();
        let trace = execute(&prepared).unwrap();
        let last = trace.final_row().unwrap();
        println!(
            "{:<8}  final loss {:.10e}  gap {:.3e}  comm {:>10} bytes",
            variant,
            last.loss,
            last.loss_gap.unwrap(),
            last.comm_bytes
        );
        finals.push((variant, last.loss));
    }

    let v1 = finals.iter().find(|(v, _)| *v == "sfl-v1").unwrap().1;
    let fed = finals.iter().find(|(v, _)| *v == "fedavg").unwrap().1;
    assert_eq!(v1.to_bits(), fed.to_bits());
    println!("\nsfl-v1 and fedavg agree bitwise: {}", v1 == fed);
}
