//! Prints the communication and wall-time overhead table for the four
//! training topologies on a common set of symbols.

use sfl_lab::analysis::{cost_model, CostInputs, CostMethod};

fn main() {
    let inputs = CostInputs {
        clients: 10.0,
        data_size: 5000.0,
        smashed_size: 64.0,
        rate: 100.0,
        fwd_bwd_time: 10.0,
        fedavg_time: 2.0,
        model_size: 1000.0,
        client_fraction: 0.3,
    };

    println!("method   per-client comm   total comm     total time");
    for method in [CostMethod::Fl, CostMethod::Sl, CostMethod::SflV1, CostMethod::SflV2] {
        let r = cost_model(&inputs, method);
        println!(
            "{:<8} {:>14.1}   {:>12.1}   {:>10.2}",
            format!("{:?}", method).to_lowercase(),
            r.comm_per_client,
            r.total_comm,
            r.total_time
        );
    }
    println!("\nsymbols: K = clients, p = pooled data size, q = smashed layer size,");
    println!("R = link rate, |W| = model size, beta = client-side model fraction");
}
