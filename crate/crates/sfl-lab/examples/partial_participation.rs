//! Partial client participation: each round every client joins independently
//! with probability q, and surviving updates are reweighted by 1/q so the
//! aggregate stays unbiased. Lower q means noisier progress.

use sfl_lab::harness::{run_experiment, ExperimentConfig, ParticipationConfig};

fn main() {
    let base: ExperimentConfig = serde_json::from_str(
        r#"{
            "schema_version": 1,
            "variant": "sfl-v1",
            "rounds": 300,
            "tau": 5,
            "batch_size": 32,
            "objective": {"family": "logistic", "lambda": 0.05},
            "partition": {"clients": 10, "beta": 0.5, "samples_per_class": 150, "feature_dim": 10},
            "schedule": {"kind": "constant", "eta": 0.05}
        }"#,
    )
    .unwrap();
    let seeds: Vec<u64> = (0..5).collect();

    println!("q      mean final gap");
    for q in [1.0, 0.5, 0.2] {
        let mut cfg = base.clone();
        if q < 1.0 {
            cfg.participation = Some(ParticipationConfig::Uniform(q));
        }
        cfg.validate().unwrap();
        let (summary, _) = run_experiment(&cfg, &seeds).unwrap();
        println!("{:<5}  {:.6e}", q, summary.mean_final_loss_gap.unwrap());
    }
}
