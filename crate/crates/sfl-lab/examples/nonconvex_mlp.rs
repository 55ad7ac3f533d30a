//! Nonconvex capability: trains a small split MLP and tracks the stepsize-
//! weighted average of the squared full gradient norm, the quantity the
//! nonconvex rate statements control. Doubling the horizon should shrink it.

use sfl_lab::analysis::grad_metric;
use sfl_lab::harness::{execute, prepare, ExperimentConfig};

fn main() {
    let base: ExperimentConfig = serde_json::from_str(
        r#"{
            "schema_version": 1,
            "variant": "sfl-v2",
            "rounds": 50,
            "tau": 3,
            "batch_size": 16,
            "objective": {"family": "mlp", "hidden": [8], "cut": 1},
            "partition": {"clients": 5, "beta": 0.5, "classes": 2, "samples_per_class": 80, "feature_dim": 6},
            "schedule": {"kind": "constant", "eta": 0.05}
        }"#,
    )
    .unwrap();

    println!("rounds   weighted mean grad norm^2");
    for rounds in [50usize, 200, 500] {
        let mut cfg = base.clone();
        cfg.rounds = rounds;
        cfg.validate().unwrap();
        let mut acc = 0.0;
        let seeds = 3;
        for seed in 0..seeds {
            let prepared = prepare(&cfg, seed).unwrap();
            let trace = execute(&prepared).unwrap();
            acc += grad_metric(&trace, rounds);
        }
        println!("{:>6}   {:.6e}", rounds, acc / seeds as f64);
    }
}
