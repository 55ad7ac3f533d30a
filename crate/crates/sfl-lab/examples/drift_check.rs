//! Client-drift diagnostic: compares the measured per-round sum of squared
//! distances to the round-start model against the lemma-style upper bound
//! 12 tau^3 eta^2 (2 sigma_n^2 + G^2), with the stepsize set just inside its
//! validity range eta <= 1/(sqrt(6) S tau).

use sfl_lab::analysis::drift_bound;
use sfl_lab::harness::{estimate_constants, prepare, ExperimentConfig, ScheduleConfig};

fn main() {
    let tau = 6usize;
    let mut cfg: ExperimentConfig = serde_json::from_str(
        r#"{
            "schema_version": 1,
            "variant": "sfl-v1",
            "rounds": 40,
            "tau": 6,
            "batch_size": 16,
            "objective": {"family": "ridge", "lambda": 0.1},
            "partition": {"clients": 5, "beta": 0.5, "samples_per_class": 60, "feature_dim": 10},
            "schedule": {"kind": "constant", "eta": 0.01}
        }"#,
    )
    .unwrap();

    let probe = prepare(&cfg, 0).unwrap();
    let s = probe.curvature.unwrap().0;
    let eta = 0.9 / (6.0f64.sqrt() * s * tau as f64);
    cfg.schedule = ScheduleConfig::Constant { eta };
    cfg.validate().unwrap();
    println!("S = {s:.3}, eta = {eta:.4e} (90% of the lemma cap)");

    let (constants, _) = estimate_constants(&cfg, 0).unwrap();

    let mut worst_ratio: f64 = 0.0;
    for seed in 0..10u64 {
        let mut prepared = prepare(&cfg, seed).unwrap();
        prepared.run_cfg.record_drift = true;
        let trace = sfl_lab::harness::execute(&prepared).unwrap();
        for round in trace.drift.unwrap() {
            for (n, &measured) in round.iter().enumerate() {
                let bound = drift_bound(tau, eta, constants.sigma_sq[n], constants.g_sq);
                if bound > 0.0 {
                    worst_ratio = worst_ratio.max(measured / bound);
                }
            }
        }
    }
    println!("worst measured/bound ratio over 10 seeds: {worst_ratio:.4}");
    println!("within the lemma bound: {}", worst_ratio <= 1.0);
}
