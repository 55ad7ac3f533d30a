//! The five training procedures: the two split-federated variants, plus the
//! FedAvg, sequential split learning, and mini-batch SGD baselines, with full
//! and partial participation.
//!
//! All procedures share the same per-client batch streams (derived from the
//! run's root seed), so trajectory-equivalence tests across variants are
//! exact. Aggregation reductions always sum in ascending client order.

use crate::analysis::{Reference, Trace, TraceRow};
use crate::data::{sample_batch, ClientShard, SamplingMode};
use crate::models::{
    client_backward, client_forward, server_loss_and_grads, sgd_step, split_grad, ModelError,
    ObjectiveSpec, SplitParams,
};
use crate::numkit::{axpy_into, derive_stream, sq_dist, sq_norm, RngStream, Vec64};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlgoError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Num(#[from] crate::numkit::NumError),
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("model length mismatch in aggregation")]
    AggregationShape,
    #[error("participating client {0} has q = 0")]
    ZeroParticipationProb(usize),
    #[error("stepsize {eta} exceeds cap {cap} (strict mode)")]
    StepsizeRejected { eta: f64, cap: f64 },
    #[error("non-finite loss at round {round}")]
    NonFiniteLoss { round: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    SflV1,
    SflV2,
    FedAvg,
    Sl,
    MbSgd,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::SflV1 => "sfl-v1",
            Variant::SflV2 => "sfl-v2",
            Variant::FedAvg => "fedavg",
            Variant::Sl => "sl",
            Variant::MbSgd => "mb-sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Participation {
    Full,
    /// Independent Bernoulli(q_n) availability per round; q_n lives on the
    /// shards.
    Bernoulli,
}

/// eta^t = 2 * beta_ss / (tau_ref * (gamma + t)) for the diminishing case.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    Constant { eta: f64 },
    Diminishing { beta_ss: f64, gamma: f64, tau_ref: f64 },
}

impl StepSchedule {
    pub fn eta_at(&self, t: usize) -> f64 {
        match self {
            StepSchedule::Constant { eta } => *eta,
            StepSchedule::Diminishing { beta_ss, gamma, tau_ref } => {
                2.0 * beta_ss / (tau_ref * (gamma + t as f64))
            }
        }
    }

    /// Auto-filled diminishing schedule: beta_ss = 2/mu, gamma = 8S/mu - 1.
    pub fn diminishing_from_constants(s: f64, mu: f64, tau_ref: f64) -> Self {
        StepSchedule::Diminishing { beta_ss: 2.0 / mu, gamma: 8.0 * s / mu - 1.0, tau_ref }
    }

    /// Constant-stepsize cap eta <= 1/(2 S tau_max).
    pub fn constant_cap(s: f64, tau_max: usize) -> f64 {
        1.0 / (2.0 * s * tau_max as f64)
    }

    pub fn sum_eta_sq(&self, rounds: usize) -> f64 {
        (0..rounds).map(|t| self.eta_at(t).powi(2)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub variant: Variant,
    pub rounds: usize,
    pub tau: usize,
    /// Server-side aggregation period; SFL-V1 only.
    pub tau_tilde: Option<usize>,
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub participation: Participation,
    pub root_seed: u64,
    pub sampling_mode: SamplingMode,
    /// Known smoothness constant, used only for the stepsize-cap check.
    pub smoothness: Option<f64>,
    /// Reject (rather than warn) stepsizes above the theorem cap.
    pub strict_stepsize: bool,
    /// Record per-round per-client local drift sums.
    pub record_drift: bool,
    /// Keep a model snapshot per trace row (for constant estimation).
    pub record_snapshots: bool,
    /// Weight the SFL-V2 server update by a_n instead of the unweighted sum.
    pub v2_weighted_server: bool,
    /// Redraw the SFL-V2 / SL service order every round (the default) or
    /// draw once and reuse it.
    pub redraw_order: bool,
}

impl RunConfig {
    pub fn new(variant: Variant, rounds: usize, tau: usize, batch_size: usize, schedule: StepSchedule, root_seed: u64) -> Self {
        Self {
            variant,
            rounds,
            tau,
            tau_tilde: if variant == Variant::SflV1 { Some(tau) } else { None },
            batch_size,
            schedule,
            participation: Participation::Full,
            root_seed,
            sampling_mode: SamplingMode::WithReplacement,
            smoothness: None,
            strict_stepsize: false,
            record_drift: false,
            record_snapshots: false,
            v2_weighted_server: false,
            redraw_order: true,
        }
    }

    pub fn tau_max(&self) -> usize {
        self.tau.max(self.tau_tilde.unwrap_or(self.tau))
    }

    pub fn tau_min(&self) -> usize {
        self.tau.min(self.tau_tilde.unwrap_or(self.tau))
    }
}

/// Fixed-order weighted average: sum_n a_n x_n, clients ascending.
pub fn aggregate_full(models: &[Vec64], weights: &[f64]) -> Result<Vec64, AlgoError> {
    if models.is_empty() || models.len() != weights.len() {
        return Err(AlgoError::AggregationShape);
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-12 {
        return Err(AlgoError::WeightSum(wsum));
    }
    let len = models[0].len();
    let mut acc = Vec64::zeros(len);
    for (x, &a) in models.iter().zip(weights) {
        if x.len() != len {
            return Err(AlgoError::AggregationShape);
        }
        axpy_into(&mut acc, a, x)?;
    }
    Ok(acc)
}

/// Bias-corrected partial aggregation: sum over participants of
/// (a_n / q_n) x_n. An empty participant set freezes the previous global.
pub fn aggregate_partial(
    participants: &[(usize, &Vec64)],
    weights: &[f64],
    probs: &[f64],
    previous_global: &Vec64,
) -> Result<Vec64, AlgoError> {
    if participants.is_empty() {
        return Ok(previous_global.clone());
    }
    let mut acc = Vec64::zeros(previous_global.len());
    for &(n, x) in participants {
        if probs[n] <= 0.0 {
            return Err(AlgoError::ZeroParticipationProb(n));
        }
        if x.len() != acc.len() {
            return Err(AlgoError::AggregationShape);
        }
        axpy_into(&mut acc, weights[n] / probs[n], x)?;
    }
    Ok(acc)
}

/// Independent Bernoulli(q_n) draws, ascending client order.
pub fn sample_participation(probs: &[f64], rng: &mut RngStream) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &q)| rng.next_f64() < q)
        .map(|(n, _)| n)
        .collect()
}

/// Weighted global loss f(x) = sum_n a_n F_n(x).
pub fn weighted_loss(
    spec: &ObjectiveSpec,
    shards: &[ClientShard],
    params: &SplitParams,
) -> Result<f64, ModelError> {
    let mut acc = 0.0;
    for s in shards {
        acc += s.weight * crate::models::loss_at(spec, params, &s.indices)?;
    }
    Ok(acc)
}

/// Weighted global gradient as the concatenated [g_c; g_s] vector.
pub fn weighted_grad(
    spec: &ObjectiveSpec,
    shards: &[ClientShard],
    params: &SplitParams,
) -> Result<Vec64, ModelError> {
    let mut acc = Vec64::zeros(spec.dim());
    for s in shards {
        let g = crate::models::full_grad(spec, params, &s.indices)?;
        axpy_into(&mut acc, s.weight, &g)?;
    }
    Ok(acc)
}

struct Counters {
    comm_bytes: u64,
    flops: u64,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    spec: &'a ObjectiveSpec,
    shards: Vec<ClientShard>,
    reference: Option<&'a Reference>,
    x0: SplitParams,
    batch_streams: Vec<RngStream>,
    participation_stream: RngStream,
    order_stream: RngStream,
    counters: Counters,
    trace: Trace,
}

impl<'a> Runner<'a> {
    fn new(
        cfg: &'a RunConfig,
        spec: &'a ObjectiveSpec,
        shards: &[ClientShard],
        x0: &SplitParams,
        reference: Option<&'a Reference>,
    ) -> Self {
        let batch_streams = (0..shards.len())
            .map(|n| derive_stream(cfg.root_seed, "client-batch", n as u64))
            .collect();
        Self {
            cfg,
            spec,
            shards: shards.to_vec(),
            reference,
            x0: x0.clone(),
            batch_streams,
            participation_stream: derive_stream(cfg.root_seed, "participation", 0),
            order_stream: derive_stream(cfg.root_seed, "order", 0),
            counters: Counters { comm_bytes: 0, flops: 0 },
            trace: Trace::new(),
        }
    }

    fn weights(&self) -> Vec<f64> {
        self.shards.iter().map(|s| s.weight).collect()
    }

    fn probs(&self) -> Vec<f64> {
        self.shards.iter().map(|s| s.participation).collect()
    }

    fn round_participants(&mut self) -> Vec<usize> {
        match self.cfg.participation {
            Participation::Full => (0..self.shards.len()).collect(),
            Participation::Bernoulli => {
                let probs = self.probs();
                sample_participation(&probs, &mut self.participation_stream)
            }
        }
    }

    fn check_stepsize(&mut self) -> Result<(), AlgoError> {
        if let (StepSchedule::Constant { eta }, Some(s)) = (&self.cfg.schedule, self.cfg.smoothness)
        {
            let cap = StepSchedule::constant_cap(s, self.cfg.tau_max());
            if *eta > cap {
                if self.cfg.strict_stepsize {
                    return Err(AlgoError::StepsizeRejected { eta: *eta, cap });
                }
                self.trace.stepsize_warning = true;
            }
        }
        Ok(())
    }

    fn draw_batch(&mut self, n: usize) -> Result<crate::models::Batch, AlgoError> {
        let batch = sample_batch(
            &mut self.shards[n],
            self.spec,
            self.cfg.batch_size,
            self.cfg.sampling_mode,
            &mut self.batch_streams[n],
        )?;
        // rough counting rule: ~6 flops per parameter per sample for one
        // forward+backward pass
        self.counters.flops += 6 * self.cfg.batch_size as u64 * self.spec.dim() as u64;
        Ok(batch)
    }

    fn count_activation_exchange(&mut self) {
        let per_iter = 2 * self.cfg.batch_size * self.spec.cut_width() * 8;
        self.counters.comm_bytes += per_iter as u64;
    }

    fn count_block_sync(&mut self, scalars: usize) {
        self.counters.comm_bytes += 2 * scalars as u64 * 8;
    }

    fn record_row(&mut self, t: usize, params: &SplitParams) -> Result<(), AlgoError> {
        let loss = weighted_loss(self.spec, &self.shards, params)
            .map_err(|_| AlgoError::NonFiniteLoss { round: t })?;
        if !loss.is_finite() {
            return Err(AlgoError::NonFiniteLoss { round: t });
        }
        let grad = weighted_grad(self.spec, &self.shards, params)?;
        let (loss_gap, dist_c, dist_s, dist_full) = match self.reference {
            Some(r) => {
                let (dc, ds, df) = params.block_sq_dists(&r.params)?;
                (Some(loss - r.f_star), Some(dc), Some(ds), Some(df))
            }
            None => (None, None, None, None),
        };
        if self.cfg.record_snapshots {
            self.trace.snapshots.get_or_insert_with(Vec::new).push(params.clone());
        }
        self.trace.rows.push(TraceRow {
            t,
            loss,
            loss_gap,
            dist_c,
            dist_s,
            dist_full,
            eta: self.cfg.schedule.eta_at(t),
            grad_norm_sq: sq_norm(&grad),
            comm_bytes: self.counters.comm_bytes,
            flops: self.counters.flops,
        });
        Ok(())
    }

    fn aggregate_round(
        &self,
        blocks: &[Vec64],
        participants: &[usize],
        previous_global: &Vec64,
    ) -> Result<Vec64, AlgoError> {
        match self.cfg.participation {
            Participation::Full => aggregate_full(blocks, &self.weights()),
            Participation::Bernoulli => {
                let chosen: Vec<(usize, &Vec64)> =
                    participants.iter().map(|&n| (n, &blocks[n])).collect();
                aggregate_partial(&chosen, &self.weights(), &self.probs(), previous_global)
            }
        }
    }

    fn run_sfl_v1(&mut self) -> Result<(), AlgoError> {
        let n_clients = self.shards.len();
        let tau = self.cfg.tau;
        let tau_tilde = self.cfg.tau_tilde.unwrap_or(tau);
        let x0 = self.reference_x0();
        let mut global_c = x0.client_block.clone();
        let mut global_s = x0.server_block.clone();
        let mut client_blocks: Vec<Vec64> = vec![global_c.clone(); n_clients];
        let mut server_blocks: Vec<Vec64> = vec![global_s.clone(); n_clients];
        // snapshot of the server global at the last server aggregation, for
        // the bias-corrected delta combine under partial participation
        let mut server_snapshot = global_s.clone();
        self.record_row(0, &SplitParams { client_block: global_c.clone(), server_block: global_s.clone() })?;
        if self.cfg.record_drift {
            self.trace.drift = Some(Vec::new());
        }
        for t in 0..self.cfg.rounds {
            let eta = self.cfg.schedule.eta_at(t);
            let participants = self.round_participants();
            // every client resets its client block to the new global at round
            // start
            for n in 0..n_clients {
                client_blocks[n] = global_c.clone();
            }
            let round_start_c = global_c.clone();
            let round_start_s = server_blocks.clone();
            let mut drift_row = vec![0.0; n_clients];
            for i in 0..tau {
                for &n in &participants {
                    if self.cfg.record_drift {
                        drift_row[n] += sq_dist(&client_blocks[n], &round_start_c)?
                            + sq_dist(&server_blocks[n], &round_start_s[n])?;
                    }
                    let batch = self.draw_batch(n)?;
                    let act = client_forward(self.spec, &client_blocks[n], &batch)?;
                    let (_, g_s, cut) =
                        server_loss_and_grads(self.spec, &server_blocks[n], &act, &batch)?;
                    sgd_step(&mut server_blocks[n], eta, &g_s)?;
                    let g_c = client_backward(self.spec, &client_blocks[n], &batch, &cut)?;
                    sgd_step(&mut client_blocks[n], eta, &g_c)?;
                    self.count_activation_exchange();
                }
                // server aggregation on the global iteration clock
                if (t * tau + i + 1) % tau_tilde == 0 {
                    global_s = match self.cfg.participation {
                        Participation::Full => aggregate_full(&server_blocks, &self.weights())?,
                        Participation::Bernoulli => {
                            // delta combine: non-participants hold zero delta
                            let mut acc = server_snapshot.clone();
                            let weights = self.weights();
                            let probs = self.probs();
                            for n in 0..n_clients {
                                if probs[n] <= 0.0 {
                                    return Err(AlgoError::ZeroParticipationProb(n));
                                }
                                let mut delta = server_blocks[n].clone();
                                axpy_into(&mut delta, -1.0, &server_snapshot)?;
                                axpy_into(&mut acc, weights[n] / probs[n], &delta)?;
                            }
                            acc
                        }
                    };
                    for b in server_blocks.iter_mut() {
                        *b = global_s.clone();
                    }
                    server_snapshot = global_s.clone();
                }
            }
            if self.cfg.record_drift {
                self.trace.drift.as_mut().unwrap().push(drift_row);
            }
            // client aggregation at the round boundary
            global_c = self.aggregate_round(&client_blocks, &participants, &global_c)?;
            for &_n in &participants {
                self.count_block_sync(global_c.len());
            }
            self.record_row(
                t + 1,
                &SplitParams { client_block: global_c.clone(), server_block: global_s.clone() },
            )?;
        }
        Ok(())
    }

    fn run_fedavg(&mut self) -> Result<(), AlgoError> {
        let n_clients = self.shards.len();
        let tau = self.cfg.tau;
        let x0 = self.reference_x0();
        let client_len = x0.client_block.len();
        let mut global = x0.concat();
        let mut locals: Vec<Vec64> = vec![global.clone(); n_clients];
        self.record_row(0, &SplitParams::from_full(&global, client_len))?;
        if self.cfg.record_drift {
            self.trace.drift = Some(Vec::new());
        }
        for t in 0..self.cfg.rounds {
            let eta = self.cfg.schedule.eta_at(t);
            let participants = self.round_participants();
            for l in locals.iter_mut() {
                *l = global.clone();
            }
            let round_start = global.clone();
            let mut drift_row = vec![0.0; n_clients];
            for _i in 0..tau {
                for &n in &participants {
                    if self.cfg.record_drift {
                        drift_row[n] += sq_dist(&locals[n], &round_start)?;
                    }
                    let batch = self.draw_batch(n)?;
                    let params = SplitParams::from_full(&locals[n], client_len);
                    let (_, g_c, g_s) = split_grad(self.spec, &params, &batch)?;
                    let mut local = params.client_block;
                    sgd_step(&mut local, eta, &g_c)?;
                    let mut server = params.server_block;
                    sgd_step(&mut server, eta, &g_s)?;
                    locals[n] = local.concat(&server);
                }
            }
            if self.cfg.record_drift {
                self.trace.drift.as_mut().unwrap().push(drift_row);
            }
            global = self.aggregate_round(&locals, &participants, &global)?;
            for &_n in &participants {
                self.count_block_sync(global.len());
            }
            self.record_row(t + 1, &SplitParams::from_full(&global, client_len))?;
        }
        Ok(())
    }

    fn service_order(&mut self, participants: &[usize], t: usize) -> Vec<usize> {
        if self.cfg.redraw_order || t == 0 {
            let perm = self.order_stream.permutation(participants.len());
            let order: Vec<usize> = perm.into_iter().map(|i| participants[i]).collect();
            if !self.cfg.redraw_order {
                self.trace.fixed_order = Some(order.clone());
            }
            order
        } else {
            self.trace.fixed_order.clone().unwrap_or_else(|| participants.to_vec())
        }
    }

    fn run_sfl_v2(&mut self) -> Result<(), AlgoError> {
        let n_clients = self.shards.len();
        let tau = self.cfg.tau;
        let x0 = self.reference_x0();
        let mut global_c = x0.client_block.clone();
        let mut server = x0.server_block.clone();
        let mut client_blocks: Vec<Vec64> = vec![global_c.clone(); n_clients];
        self.record_row(0, &SplitParams { client_block: global_c.clone(), server_block: server.clone() })?;
        for t in 0..self.cfg.rounds {
            let eta = self.cfg.schedule.eta_at(t);
            let participants = self.round_participants();
            let order = self.service_order(&participants, t);
            for n in 0..n_clients {
                client_blocks[n] = global_c.clone();
            }
            for &n in &order {
                let server_weight = {
                    let base = if self.cfg.v2_weighted_server { self.shards[n].weight } else { 1.0 };
                    match self.cfg.participation {
                        Participation::Full => base,
                        Participation::Bernoulli => {
                            let q = self.shards[n].participation;
                            if q <= 0.0 {
                                return Err(AlgoError::ZeroParticipationProb(n));
                            }
                            base / q
                        }
                    }
                };
                for _i in 0..tau {
                    let batch = self.draw_batch(n)?;
                    let act = client_forward(self.spec, &client_blocks[n], &batch)?;
                    let (_, g_s, cut) = server_loss_and_grads(self.spec, &server, &act, &batch)?;
                    sgd_step(&mut server, eta * server_weight, &g_s)?;
                    let g_c = client_backward(self.spec, &client_blocks[n], &batch, &cut)?;
                    sgd_step(&mut client_blocks[n], eta, &g_c)?;
                    self.count_activation_exchange();
                }
            }
            global_c = self.aggregate_round(&client_blocks, &participants, &global_c)?;
            for &_n in &participants {
                self.count_block_sync(global_c.len());
            }
            self.record_row(
                t + 1,
                &SplitParams { client_block: global_c.clone(), server_block: server.clone() },
            )?;
        }
        Ok(())
    }

    fn run_sl(&mut self) -> Result<(), AlgoError> {
        let tau = self.cfg.tau;
        let x0 = self.reference_x0();
        let mut client = x0.client_block.clone();
        let mut server = x0.server_block.clone();
        self.record_row(0, &SplitParams { client_block: client.clone(), server_block: server.clone() })?;
        for t in 0..self.cfg.rounds {
            let eta = self.cfg.schedule.eta_at(t);
            let participants = self.round_participants();
            let order = self.service_order(&participants, t);
            for &n in &order {
                for _i in 0..tau {
                    let batch = self.draw_batch(n)?;
                    let act = client_forward(self.spec, &client, &batch)?;
                    let (_, g_s, cut) = server_loss_and_grads(self.spec, &server, &act, &batch)?;
                    sgd_step(&mut server, eta, &g_s)?;
                    let g_c = client_backward(self.spec, &client, &batch, &cut)?;
                    sgd_step(&mut client, eta, &g_c)?;
                    self.count_activation_exchange();
                }
                // client block handed to the next client in line
                self.count_block_sync(client.len());
            }
            self.record_row(
                t + 1,
                &SplitParams { client_block: client.clone(), server_block: server.clone() },
            )?;
        }
        Ok(())
    }

    fn run_mb_sgd(&mut self) -> Result<(), AlgoError> {
        let x0 = self.reference_x0();
        let client_len = x0.client_block.len();
        let mut global = x0.concat();
        self.record_row(0, &SplitParams::from_full(&global, client_len))?;
        for t in 0..self.cfg.rounds {
            let eta = self.cfg.schedule.eta_at(t);
            let participants = self.round_participants();
            let mut step = Vec64::zeros(global.len());
            for &n in &participants {
                let batch = self.draw_batch(n)?;
                let params = SplitParams::from_full(&global, client_len);
                let (_, g_c, g_s) = split_grad(self.spec, &params, &batch)?;
                let g = g_c.concat(&g_s);
                let w = match self.cfg.participation {
                    Participation::Full => self.shards[n].weight,
                    Participation::Bernoulli => {
                        let q = self.shards[n].participation;
                        if q <= 0.0 {
                            return Err(AlgoError::ZeroParticipationProb(n));
                        }
                        self.shards[n].weight / q
                    }
                };
                axpy_into(&mut step, w, &g)?;
                self.count_block_sync(global.len());
            }
            axpy_into(&mut global, -eta, &step)?;
            self.record_row(t + 1, &SplitParams::from_full(&global, client_len))?;
        }
        Ok(())
    }

    fn reference_x0(&self) -> SplitParams {
        self.x0.clone()
    }
}

/// Executes one training run and returns its trace.
pub fn run(
    cfg: &RunConfig,
    spec: &ObjectiveSpec,
    shards: &[ClientShard],
    x0: &SplitParams,
    reference: Option<&Reference>,
) -> Result<Trace, AlgoError> {
    let mut runner = Runner::new(cfg, spec, shards, x0, reference);
    runner.check_stepsize()?;
    match cfg.variant {
        Variant::SflV1 => runner.run_sfl_v1()?,
        Variant::SflV2 => runner.run_sfl_v2()?,
        Variant::FedAvg => runner.run_fedavg()?,
        Variant::Sl => runner.run_sl()?,
        Variant::MbSgd => runner.run_mb_sgd()?,
    }
    Ok(runner.trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::sq_dist;

    fn toy_ridge(n_samples: usize, seed: u64) -> ObjectiveSpec {
        let mut rng = derive_stream(seed, "toy-ridge", 0);
        let features = (0..n_samples)
            .map(|_| Vec64::new((0..4).map(|_| rng.next_gaussian()).collect()).unwrap())
            .collect::<Vec<_>>();
        let targets = (0..n_samples).map(|_| rng.next_gaussian()).collect();
        ObjectiveSpec::SplitRidge { features, targets, lambda: 0.1, cut: 2 }
    }

    fn even_shards(n_samples: usize, clients: usize) -> Vec<ClientShard> {
        let per = n_samples / clients;
        (0..clients)
            .map(|c| {
                ClientShard::new(c, (c * per..(c + 1) * per).collect(), 1.0 / clients as f64, 1.0)
            })
            .collect()
    }

    #[test]
    fn aggregate_full_identical_models_exact() {
        let x = Vec64::new(vec![0.1, -2.5, 7.0]).unwrap();
        for weights in [vec![0.5, 0.5], vec![0.25, 0.75]] {
            let out = aggregate_full(&[x.clone(), x.clone()], &weights).unwrap();
            assert_eq!(out.iter().cloned().collect::<Vec<_>>(), x.iter().cloned().collect::<Vec<_>>());
        }
    }

    #[test]
    fn aggregate_full_rejects_bad_weights() {
        let x = Vec64::zeros(2);
        assert!(matches!(
            aggregate_full(&[x.clone(), x], &[0.5, 0.6]),
            Err(AlgoError::WeightSum(_))
        ));
    }

    #[test]
    fn aggregate_partial_empty_freezes_global() {
        let prev = Vec64::new(vec![1.0, 2.0]).unwrap();
        let out = aggregate_partial(&[], &[0.5, 0.5], &[0.5, 0.5], &prev).unwrap();
        assert_eq!(out.iter().cloned().collect::<Vec<_>>(), vec![1.0, 2.0]);
    }

    #[test]
    fn partial_aggregation_unbiased_over_masks() {
        // exhaustive expectation over 2^3 participation masks
        let models = [
            Vec64::new(vec![1.0, -1.0]).unwrap(),
            Vec64::new(vec![0.5, 2.0]).unwrap(),
            Vec64::new(vec![-3.0, 0.25]).unwrap(),
        ];
        let weights = [0.2, 0.3, 0.5];
        let probs = [0.5, 0.25, 0.75];
        let prev = Vec64::zeros(2);
        let mut expectation = vec![0.0; 2];
        for mask in 0u32..8 {
            let mut participants = Vec::new();
            let mut mass = 1.0;
            for n in 0..3 {
                if mask >> n & 1 == 1 {
                    participants.push((n, &models[n]));
                    mass *= probs[n];
                } else {
                    mass *= 1.0 - probs[n];
                }
            }
            let agg = aggregate_partial(&participants, &weights, &probs, &prev).unwrap();
            for j in 0..2 {
                expectation[j] += mass * agg.get(j);
            }
        }
        let full = aggregate_full(&models, &weights).unwrap();
        for j in 0..2 {
            assert!((expectation[j] - full.get(j)).abs() < 1e-12);
        }
    }

    #[test]
    fn participation_sampling_is_deterministic() {
        let probs = vec![0.3, 0.9, 0.5, 1.0];
        let a: Vec<usize> = {
            let mut rng = derive_stream(9, "participation", 0);
            sample_participation(&probs, &mut rng)
        };
        let b: Vec<usize> = {
            let mut rng = derive_stream(9, "participation", 0);
            sample_participation(&probs, &mut rng)
        };
        assert_eq!(a, b);
        let mut rng = derive_stream(1, "participation", 0);
        assert_eq!(sample_participation(&[1.0, 1.0, 1.0], &mut rng), vec![0, 1, 2]);
    }

    #[test]
    fn diminishing_schedule_values() {
        let s = StepSchedule::diminishing_from_constants(2.0, 0.5, 4.0);
        // beta = 4, gamma = 31: eta^0 = 8 / (4 * 31)
        assert!((s.eta_at(0) - 8.0 / 124.0).abs() < 1e-15);
        assert!(s.eta_at(10) < s.eta_at(0));
        assert!((StepSchedule::constant_cap(2.0, 5) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn strict_stepsize_rejects_above_cap() {
        let spec = toy_ridge(12, 1);
        let shards = even_shards(12, 3);
        let mut cfg = RunConfig::new(
            Variant::SflV1,
            2,
            4,
            4,
            StepSchedule::Constant { eta: 1.0 },
            7,
        );
        cfg.smoothness = Some(5.0);
        cfg.strict_stepsize = true;
        let x0 = spec.zero_params();
        assert!(matches!(
            run(&cfg, &spec, &shards, &x0, None),
            Err(AlgoError::StepsizeRejected { .. })
        ));
        cfg.strict_stepsize = false;
        let trace = run(&cfg, &spec, &shards, &x0, None).unwrap();
        assert!(trace.stepsize_warning);
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = toy_ridge(24, 2);
        let shards = even_shards(24, 4);
        let x0 = spec.zero_params();
        for variant in [Variant::SflV1, Variant::SflV2, Variant::FedAvg, Variant::Sl, Variant::MbSgd] {
            let cfg = RunConfig::new(variant, 5, 3, 4, StepSchedule::Constant { eta: 0.01 }, 42);
            let a = run(&cfg, &spec, &shards, &x0, None).unwrap();
            let b = run(&cfg, &spec, &shards, &x0, None).unwrap();
            assert_eq!(a.rows, b.rows, "{}", variant.name());
            assert_eq!(a.rows.len(), 6);
            for (i, r) in a.rows.iter().enumerate() {
                assert_eq!(r.t, i);
            }
        }
    }

    #[test]
    fn sfl_v1_matches_fedavg_bitwise() {
        let spec = toy_ridge(30, 3);
        let shards = even_shards(30, 3);
        let mut rng = derive_stream(11, "init", 0);
        let x0 = spec.init_params(&mut rng);
        let mut v1 = RunConfig::new(Variant::SflV1, 20, 5, 4, StepSchedule::Constant { eta: 0.02 }, 99);
        v1.tau_tilde = Some(5);
        let fa = RunConfig { variant: Variant::FedAvg, tau_tilde: None, ..v1.clone() };
        let ta = run(&v1, &spec, &shards, &x0, None).unwrap();
        let tb = run(&fa, &spec, &shards, &x0, None).unwrap();
        for (ra, rb) in ta.rows.iter().zip(&tb.rows) {
            assert_eq!(ra.loss.to_bits(), rb.loss.to_bits(), "round {}", ra.t);
            assert_eq!(ra.grad_norm_sq.to_bits(), rb.grad_norm_sq.to_bits());
        }
    }

    #[test]
    fn sfl_v2_single_client_matches_sgd() {
        let spec = toy_ridge(16, 4);
        let shards = even_shards(16, 1);
        let mut rng = derive_stream(5, "init", 0);
        let x0 = spec.init_params(&mut rng);
        let v2 = RunConfig::new(Variant::SflV2, 30, 1, 4, StepSchedule::Constant { eta: 0.03 }, 13);
        let sgd = RunConfig { variant: Variant::MbSgd, ..v2.clone() };
        let ta = run(&v2, &spec, &shards, &x0, None).unwrap();
        let tb = run(&sgd, &spec, &shards, &x0, None).unwrap();
        for (ra, rb) in ta.rows.iter().zip(&tb.rows) {
            assert!((ra.loss - rb.loss).abs() < 1e-12);
        }
    }

    #[test]
    fn comm_bytes_match_symbolic_formula() {
        let spec = toy_ridge(24, 6);
        let shards = even_shards(24, 3);
        let x0 = spec.zero_params();
        let cfg = RunConfig::new(Variant::SflV1, 4, 5, 4, StepSchedule::Constant { eta: 0.01 }, 3);
        let trace = run(&cfg, &spec, &shards, &x0, None).unwrap();
        let per_round = crate::analysis::expected_split_bytes_per_round(
            cfg.batch_size,
            spec.cut_width(),
            spec.client_dim(),
            cfg.tau,
            shards.len(),
        );
        for r in &trace.rows {
            assert_eq!(r.comm_bytes, per_round * r.t as u64);
        }
    }

    #[test]
    fn fedavg_comm_counting_rule() {
        let spec = toy_ridge(12, 7);
        let shards = even_shards(12, 3);
        let x0 = spec.zero_params();
        let cfg = RunConfig::new(Variant::FedAvg, 3, 2, 4, StepSchedule::Constant { eta: 0.01 }, 3);
        let trace = run(&cfg, &spec, &shards, &x0, None).unwrap();
        let per_round = shards.len() as u64 * 2 * spec.dim() as u64 * 8;
        assert_eq!(trace.rows.last().unwrap().comm_bytes, 3 * per_round);
    }

    #[test]
    fn drift_zero_at_tau_one() {
        let spec = toy_ridge(12, 8);
        let shards = even_shards(12, 2);
        let x0 = spec.zero_params();
        let mut cfg = RunConfig::new(Variant::SflV1, 3, 1, 4, StepSchedule::Constant { eta: 0.05 }, 21);
        cfg.record_drift = true;
        let trace = run(&cfg, &spec, &shards, &x0, None).unwrap();
        for round in trace.drift.unwrap() {
            assert!(round.iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn weighted_loss_matches_pooled() {
        let spec = toy_ridge(20, 9);
        let pooled = vec![ClientShard::new(0, (0..20).collect(), 1.0, 1.0)];
        let split = even_shards(20, 4);
        let mut rng = derive_stream(2, "probe", 0);
        let p = spec.init_params(&mut rng);
        let a = weighted_loss(&spec, &pooled, &p).unwrap();
        let b = weighted_loss(&spec, &split, &p).unwrap();
        assert!((a - b).abs() < 1e-12);
        let ga = weighted_grad(&spec, &pooled, &p).unwrap();
        let gb = weighted_grad(&spec, &split, &p).unwrap();
        assert!(sq_dist(&ga, &gb).unwrap() < 1e-24);
    }

    #[test]
    fn partial_participation_runs_and_freezes_on_empty_rounds() {
        let spec = toy_ridge(12, 10);
        let mut shards = even_shards(12, 3);
        for s in &mut shards {
            s.participation = 0.5;
        }
        for variant in [Variant::SflV1, Variant::SflV2, Variant::FedAvg, Variant::MbSgd] {
            let mut cfg =
                RunConfig::new(variant, 6, 2, 4, StepSchedule::Constant { eta: 0.01 }, 31);
            cfg.participation = Participation::Bernoulli;
            let trace = run(&cfg, &spec, &shards, &spec.zero_params(), None).unwrap();
            assert_eq!(trace.rows.len(), 7, "{}", variant.name());
            assert!(trace.rows.iter().all(|r| r.loss.is_finite()));
        }
    }
}
