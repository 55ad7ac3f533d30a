//! Experiment configuration, deterministic run orchestration, and the
//! command-line front end. This is the only module with user-facing I/O.
//!
//! Configs are versioned JSON documents with unknown keys rejected and all
//! validation errors reported at once. Outputs are trace CSVs and versioned
//! summary/bound JSON files; (config, seed) fully determines every byte.

use crate::algorithms::{
    run, Participation, RunConfig, StepSchedule, Variant,
};
use crate::analysis::{
    bound_report, cost_model, estimate_eps, estimate_g_sq, estimate_sigma, fit_rate_mean,
    grad_metric, optimum_oracle, write_trace_csv, AnalysisError, BoundReport, BoundSetup,
    Constants, CostInputs, CostMethod, Provenance, Reference, Theorem, Trace, TraceMetric,
};
use crate::data::{
    dirichlet_partition, local_iterations, make_classification, make_shards, Heterogeneity,
    PartitionSpec, SamplingMode,
};
use crate::models::{convexity_constants, ObjectiveSpec};
use crate::numkit::derive_stream;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error:\n{}", .0.join("\n"))]
    Config(Vec<String>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Algo(#[from] crate::algorithms::AlgoError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Num(#[from] crate::numkit::NumError),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Json(_) | HarnessError::Io(_) => 2,
            _ => 1,
        }
    }
}

fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// "ridge", "logistic", or "mlp"
    pub family: String,
    #[serde(default = "ObjectiveConfig::d_lambda")]
    pub lambda: f64,
    /// coordinate cut for the linear families, layer cut for the MLP;
    /// defaults to half the feature dimension (linear) or 1 (MLP)
    #[serde(default)]
    pub cut: Option<usize>,
    /// hidden widths for the MLP family
    #[serde(default = "ObjectiveConfig::d_hidden")]
    pub hidden: Vec<usize>,
}

impl ObjectiveConfig {
    fn d_lambda() -> f64 {
        0.01
    }

    fn d_hidden() -> Vec<usize> {
        vec![8]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum BetaConfig {
    /// the string "iid"
    Iid(String),
    Value(f64),
}

impl BetaConfig {
    pub fn to_heterogeneity(&self) -> Result<Heterogeneity, String> {
        match self {
            BetaConfig::Iid(s) if s == "iid" => Ok(Heterogeneity::Iid),
            BetaConfig::Iid(s) => Err(format!("partition.beta: unknown keyword {s:?}")),
            BetaConfig::Value(v) if *v > 0.0 && v.is_finite() => Ok(Heterogeneity::Dirichlet(*v)),
            BetaConfig::Value(v) => Err(format!("partition.beta: must be positive, got {v}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(default = "PartitionConfig::d_clients")]
    pub clients: usize,
    #[serde(default = "PartitionConfig::d_beta")]
    pub beta: BetaConfig,
    #[serde(default = "PartitionConfig::d_classes")]
    pub classes: usize,
    #[serde(default = "PartitionConfig::d_samples")]
    pub samples_per_class: usize,
    #[serde(default = "PartitionConfig::d_features")]
    pub feature_dim: usize,
    #[serde(default = "PartitionConfig::d_margin")]
    pub margin: f64,
    #[serde(default = "PartitionConfig::d_sigma")]
    pub sigma_blob: f64,
    /// equalize shard sizes after partitioning (keeps label skew, makes
    /// a_n = 1/N)
    #[serde(default)]
    pub balanced: bool,
}

impl PartitionConfig {
    fn d_clients() -> usize {
        10
    }
    fn d_beta() -> BetaConfig {
        BetaConfig::Value(0.1)
    }
    fn d_classes() -> usize {
        2
    }
    fn d_samples() -> usize {
        100
    }
    fn d_features() -> usize {
        20
    }
    fn d_margin() -> f64 {
        2.0
    }
    fn d_sigma() -> f64 {
        1.0
    }
}

impl Default for PartitionConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Constant {
        eta: f64,
    },
    /// eta^t = 2 beta_ss / (tau_ref (gamma + t)); omitted fields are filled
    /// from the exact curvature constants (beta_ss = 2/mu, gamma = 8S/mu-1,
    /// tau_ref = tau)
    Diminishing {
        #[serde(default)]
        beta_ss: Option<f64>,
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default)]
        tau_ref: Option<f64>,
    },
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig::Constant { eta: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ParticipationConfig {
    Uniform(f64),
    PerClient(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EmitConfig {
    #[serde(default = "d_true")]
    pub trace_csv: bool,
    #[serde(default = "d_true")]
    pub summary_json: bool,
    #[serde(default)]
    pub bounds_json: bool,
}

impl Default for EmitConfig {
    fn default() -> Self {
        EmitConfig { trace_csv: true, summary_json: true, bounds_json: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "ExperimentConfig::d_variant")]
    pub variant: String,
    #[serde(default = "ExperimentConfig::d_rounds")]
    pub rounds: usize,
    /// client-side aggregation period; when omitted it is derived from the
    /// epoch count as ceil(D/(N b_s)) * epochs
    #[serde(default)]
    pub tau: Option<usize>,
    /// server-side aggregation period (SFL-V1 only); defaults to tau
    #[serde(default)]
    pub tau_tilde: Option<usize>,
    #[serde(default = "ExperimentConfig::d_batch")]
    pub batch_size: usize,
    #[serde(default = "ExperimentConfig::d_epochs")]
    pub epochs: usize,
    #[serde(default = "ExperimentConfig::d_objective")]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub participation: Option<ParticipationConfig>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "ExperimentConfig::d_sampling")]
    pub sampling: String,
    #[serde(default)]
    pub strict_stepsize: bool,
    #[serde(default)]
    pub v2_weighted_server: bool,
    #[serde(default = "d_true")]
    pub redraw_order: bool,
    #[serde(default)]
    pub emit: EmitConfig,
}

impl ExperimentConfig {
    fn d_variant() -> String {
        "sfl-v1".to_string()
    }
    fn d_rounds() -> usize {
        100
    }
    fn d_batch() -> usize {
        128
    }
    fn d_epochs() -> usize {
        5
    }
    fn d_objective() -> ObjectiveConfig {
        ObjectiveConfig {
            family: "ridge".to_string(),
            lambda: ObjectiveConfig::d_lambda(),
            cut: None,
            hidden: ObjectiveConfig::d_hidden(),
        }
    }
    fn d_sampling() -> String {
        "with-replacement".to_string()
    }

    pub fn variant_enum(&self) -> Option<Variant> {
        match self.variant.as_str() {
            "sfl-v1" => Some(Variant::SflV1),
            "sfl-v2" => Some(Variant::SflV2),
            "fedavg" => Some(Variant::FedAvg),
            "sl" => Some(Variant::Sl),
            "mb-sgd" => Some(Variant::MbSgd),
            _ => None,
        }
    }

    pub fn sampling_mode(&self) -> Option<SamplingMode> {
        match self.sampling.as_str() {
            "with-replacement" => Some(SamplingMode::WithReplacement),
            "epoch-shuffle" => Some(SamplingMode::EpochShuffle),
            _ => None,
        }
    }

    pub fn participation_vec(&self) -> Vec<f64> {
        let n = self.partition.clients;
        match &self.participation {
            None => vec![1.0; n],
            Some(ParticipationConfig::Uniform(q)) => vec![*q; n],
            Some(ParticipationConfig::PerClient(qs)) => qs.clone(),
        }
    }

    /// Every validation problem at once.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        let variant = self.variant_enum();
        if variant.is_none() {
            errs.push(format!("variant: unknown value {:?}", self.variant));
        }
        if self.rounds == 0 {
            errs.push("rounds: must be >= 1".to_string());
        }
        if self.tau == Some(0) {
            errs.push("tau: must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            errs.push("batch_size: must be >= 1".to_string());
        }
        if self.epochs == 0 {
            errs.push("epochs: must be >= 1".to_string());
        }
        if let Some(tt) = self.tau_tilde {
            if variant.is_some() && variant != Some(Variant::SflV1) {
                errs.push(format!(
                    "tau_tilde: only valid for variant sfl-v1, not {:?}",
                    self.variant
                ));
            }
            if tt == 0 {
                errs.push("tau_tilde: must be >= 1".to_string());
            }
        }
        match self.objective.family.as_str() {
            "ridge" | "mlp" => {}
            "logistic" => {
                if self.partition.classes != 2 {
                    errs.push("objective: logistic requires partition.classes = 2".to_string());
                }
            }
            other => errs.push(format!("objective.family: unknown value {other:?}")),
        }
        if self.objective.lambda < 0.0 {
            errs.push("objective.lambda: must be >= 0".to_string());
        }
        if let Some(cut) = self.objective.cut {
            let ok = match self.objective.family.as_str() {
                "ridge" | "logistic" => cut >= 1 && cut < self.partition.feature_dim,
                "mlp" => cut >= 1 && cut <= self.objective.hidden.len(),
                _ => true,
            };
            if !ok {
                errs.push(format!("objective.cut: {cut} out of range for this objective"));
            }
        }
        if self.partition.clients == 0 {
            errs.push("partition.clients: must be >= 1".to_string());
        }
        if self.partition.classes < 2 {
            errs.push("partition.classes: must be >= 2".to_string());
        }
        if self.partition.samples_per_class == 0 {
            errs.push("partition.samples_per_class: must be >= 1".to_string());
        }
        if self.partition.feature_dim < 2 {
            errs.push("partition.feature_dim: must be >= 2".to_string());
        }
        if let Err(e) = self.partition.beta.to_heterogeneity() {
            errs.push(e);
        }
        let qs = self.participation_vec();
        if qs.len() != self.partition.clients {
            errs.push(format!(
                "participation: {} entries for {} clients",
                qs.len(),
                self.partition.clients
            ));
        }
        for (n, q) in qs.iter().enumerate() {
            if !(*q > 0.0 && *q <= 1.0) {
                errs.push(format!("participation: q_{n} = {q} outside (0, 1]"));
            }
        }
        if let ScheduleConfig::Constant { eta } = &self.schedule {
            if !(*eta > 0.0 && eta.is_finite()) {
                errs.push(format!("schedule.eta: must be positive, got {eta}"));
            }
        }
        if self.sampling_mode().is_none() {
            errs.push(format!("sampling: unknown value {:?}", self.sampling));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(errs))
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(vec![format!("{}: {e}", path.display())]))?;
    cfg.validate()?;
    Ok(cfg)
}

/// A fully materialized run: objective, shards, and algorithm config, all
/// derived deterministically from (config, seed).
pub struct PreparedRun {
    pub spec: ObjectiveSpec,
    pub shards: Vec<crate::data::ClientShard>,
    pub run_cfg: RunConfig,
    pub x0: crate::models::SplitParams,
    pub reference: Option<Reference>,
    /// exact (S, mu) when the objective family provides them
    pub curvature: Option<(f64, Option<f64>)>,
}

fn build_objective(
    cfg: &ExperimentConfig,
    dataset: &crate::data::Dataset,
) -> Result<ObjectiveSpec, HarnessError> {
    let d = cfg.partition.feature_dim;
    let features = dataset.features.clone();
    match cfg.objective.family.as_str() {
        "ridge" => {
            // targets are centered class labels
            let shift = (dataset.classes as f64 - 1.0) / 2.0;
            let targets = dataset.labels.iter().map(|&l| l - shift).collect();
            Ok(ObjectiveSpec::SplitRidge {
                features,
                targets,
                lambda: cfg.objective.lambda,
                cut: cfg.objective.cut.unwrap_or(d / 2),
            })
        }
        "logistic" => Ok(ObjectiveSpec::SplitLogistic {
            features,
            labels: dataset.labels.clone(),
            lambda: cfg.objective.lambda,
            cut: cfg.objective.cut.unwrap_or(d / 2),
        }),
        "mlp" => {
            let mut widths = vec![d];
            widths.extend(cfg.objective.hidden.iter().copied());
            widths.push(dataset.classes);
            Ok(ObjectiveSpec::SplitMlp {
                features,
                labels: dataset.labels.clone(),
                widths,
                cut: cfg.objective.cut.unwrap_or(1),
            })
        }
        other => Err(HarnessError::Config(vec![format!("objective.family: {other:?}")])),
    }
}

fn resolve_schedule(
    cfg: &ExperimentConfig,
    tau: usize,
    curvature: Option<(f64, Option<f64>)>,
) -> Result<StepSchedule, HarnessError> {
    match &cfg.schedule {
        ScheduleConfig::Constant { eta } => Ok(StepSchedule::Constant { eta: *eta }),
        ScheduleConfig::Diminishing { beta_ss, gamma, tau_ref } => {
            let needs_auto = beta_ss.is_none() || gamma.is_none();
            let (s, mu) = match curvature {
                Some((s, Some(mu))) => (s, mu),
                _ if needs_auto => {
                    return Err(HarnessError::Config(vec![
                        "schedule: diminishing auto-fill needs exact (S, mu); set beta_ss and gamma explicitly for this objective".to_string(),
                    ]))
                }
                _ => (1.0, 1.0),
            };
            Ok(StepSchedule::Diminishing {
                beta_ss: beta_ss.unwrap_or(2.0 / mu),
                gamma: gamma.unwrap_or(8.0 * s / mu - 1.0),
                tau_ref: tau_ref.unwrap_or(tau as f64),
            })
        }
    }
}

/// Builds the deterministic problem instance for one seed. The data,
/// partition, and init streams depend only on (seed, purpose), so every
/// variant sees the same problem.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedRun, HarnessError> {
    cfg.validate()?;
    let part_spec = PartitionSpec {
        clients: cfg.partition.clients,
        beta: cfg.partition.beta.to_heterogeneity().map_err(|e| HarnessError::Config(vec![e]))?,
        classes: cfg.partition.classes,
        samples_per_class: cfg.partition.samples_per_class,
        feature_dim: cfg.partition.feature_dim,
        margin: cfg.partition.margin,
        sigma_blob: cfg.partition.sigma_blob,
    };
    let mut data_rng = derive_stream(seed, "data", 0);
    let dataset = make_classification(&part_spec, &mut data_rng);
    let mut part_rng = derive_stream(seed, "partition", 0);
    let mut lists =
        dirichlet_partition(&dataset.labels, part_spec.clients, part_spec.beta, &mut part_rng)?;
    if cfg.partition.balanced {
        crate::data::balance_partition(&mut lists);
    }
    let shards = make_shards(lists, &cfg.participation_vec())?;
    let spec = build_objective(cfg, &dataset)?;
    let curvature = convexity_constants(&spec).ok();
    let tau = cfg.tau.unwrap_or_else(|| {
        let mean_shard = dataset.len().div_ceil(part_spec.clients);
        local_iterations(mean_shard, cfg.batch_size, cfg.epochs)
    });
    let schedule = resolve_schedule(cfg, tau, curvature)?;
    let variant = cfg.variant_enum().expect("validated");
    let mut run_cfg = RunConfig::new(variant, cfg.rounds, tau, cfg.batch_size, schedule, seed);
    if variant == Variant::SflV1 {
        run_cfg.tau_tilde = Some(cfg.tau_tilde.unwrap_or(tau));
    }
    if cfg.participation.is_some() && cfg.participation_vec().iter().any(|&q| q < 1.0) {
        run_cfg.participation = Participation::Bernoulli;
    }
    run_cfg.sampling_mode = cfg.sampling_mode().expect("validated");
    run_cfg.smoothness = curvature.map(|(s, _)| s);
    run_cfg.strict_stepsize = cfg.strict_stepsize;
    run_cfg.v2_weighted_server = cfg.v2_weighted_server;
    run_cfg.redraw_order = cfg.redraw_order;
    let mut init_rng = derive_stream(seed, "init", 0);
    let x0 = spec.init_params(&mut init_rng);
    let reference = match optimum_oracle(&spec, &shards) {
        Ok(r) => Some(r),
        Err(AnalysisError::NoOracle) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(PreparedRun { spec, shards, run_cfg, x0, reference, curvature })
}

pub fn execute(prepared: &PreparedRun) -> Result<Trace, HarnessError> {
    Ok(run(
        &prepared.run_cfg,
        &prepared.spec,
        &prepared.shards,
        &prepared.x0,
        prepared.reference.as_ref(),
    )?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub final_loss: f64,
    pub final_loss_gap: Option<f64>,
    pub grad_metric: f64,
    pub stepsize_warning: bool,
    pub decomposition_exact: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub variant: String,
    pub rounds: usize,
    pub per_seed: Vec<SeedOutcome>,
    pub mean_final_loss: f64,
    pub stderr_final_loss: f64,
    pub mean_final_loss_gap: Option<f64>,
    pub slope_loss_gap: Option<f64>,
    pub checks_passed: bool,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every seed of the config and aggregates outcomes. Traces come back
/// alongside the summary so callers can emit CSVs.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    seeds: &[u64],
) -> Result<(Summary, Vec<Trace>), HarnessError> {
    let mut per_seed = Vec::new();
    let mut traces = Vec::new();
    let mut checks_passed = true;
    for &seed in seeds {
        let prepared = prepare(cfg, seed)?;
        let trace = execute(&prepared)?;
        let last = trace.final_row().expect("nonempty trace");
        let decomposition_exact = prepared.reference.as_ref().map(|_| {
            trace.rows.iter().all(|r| match (r.dist_c, r.dist_s, r.dist_full) {
                (Some(dc), Some(ds), Some(df)) => df == dc + ds,
                _ => false,
            })
        });
        if decomposition_exact == Some(false) {
            checks_passed = false;
        }
        per_seed.push(SeedOutcome {
            seed,
            final_loss: last.loss,
            final_loss_gap: last.loss_gap,
            grad_metric: grad_metric(&trace, cfg.rounds),
            stepsize_warning: trace.stepsize_warning,
            decomposition_exact,
        });
        traces.push(trace);
    }
    let finals: Vec<f64> = per_seed.iter().map(|o| o.final_loss).collect();
    let (mean_final_loss, stderr_final_loss) = mean_stderr(&finals);
    let gaps: Option<Vec<f64>> = per_seed.iter().map(|o| o.final_loss_gap).collect();
    let mean_final_loss_gap = gaps.map(|g| g.iter().sum::<f64>() / g.len() as f64);
    let slope_loss_gap = if mean_final_loss_gap.is_some() {
        let window = crate::analysis::default_window(&traces[0]);
        fit_rate_mean(&traces, TraceMetric::LossGap, window).ok()
    } else {
        None
    };
    Ok((
        Summary {
            schema_version: SCHEMA_VERSION,
            variant: cfg.variant.clone(),
            rounds: cfg.rounds,
            per_seed,
            mean_final_loss,
            stderr_final_loss,
            mean_final_loss_gap,
            slope_loss_gap,
            checks_passed,
        },
        traces,
    ))
}

/// Estimates the full constant set for one prepared run: exact (S, mu) and
/// I_err where available, estimated sigma_n, G, eps from the run trajectory.
pub fn estimate_constants(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Constants, BoundSetup), HarnessError> {
    let mut prepared = prepare(cfg, seed)?;
    prepared.run_cfg.record_snapshots = true;
    let trace = execute(&prepared)?;
    let snapshots = trace.snapshots.as_ref().expect("snapshots recorded");
    let stride = (snapshots.len() / 20).max(1);
    let probes: Vec<crate::models::SplitParams> =
        snapshots.iter().step_by(stride).cloned().collect();
    let mut est_rng = derive_stream(seed, "estimate", 0);
    let mut sigma_sq = Vec::new();
    for shard in &prepared.shards {
        sigma_sq.push(estimate_sigma(
            &prepared.spec,
            shard,
            &prepared.x0,
            cfg.batch_size.min(shard.len()),
            64,
            SamplingMode::WithReplacement,
            &mut est_rng,
        )?);
    }
    let g_sq = estimate_g_sq(
        &prepared.spec,
        &prepared.shards,
        &probes,
        cfg.batch_size,
        8,
        &mut est_rng,
    )?;
    let eps_sq = estimate_eps(&prepared.spec, &prepared.shards, &probes)?;
    let (s, mu) = match prepared.curvature {
        Some(c) => c,
        None => (estimate_smoothness_fallback(&prepared, &probes)?, None),
    };
    let (i_err, f0_gap) = match &prepared.reference {
        Some(r) => {
            let (_, _, df) = prepared.x0.block_sq_dists(&r.params)?;
            let f0 = crate::algorithms::weighted_loss(&prepared.spec, &prepared.shards, &prepared.x0)?;
            (df, (f0 - r.f_star).max(0.0))
        }
        None => {
            // no oracle: take the best observed loss as the f* stand-in
            let best = trace.rows.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
            let f0 = trace.rows[0].loss;
            (0.0, (f0 - best).max(0.0))
        }
    };
    let mut provenance = BTreeMap::new();
    let curv_tag = if prepared.curvature.is_some() { Provenance::Exact } else { Provenance::Estimated };
    provenance.insert("s".to_string(), curv_tag);
    provenance.insert("mu".to_string(), curv_tag);
    provenance.insert("sigma_sq".to_string(), Provenance::Estimated);
    provenance.insert("g_sq".to_string(), Provenance::Estimated);
    provenance.insert("eps_sq".to_string(), Provenance::Estimated);
    let oracle_tag = if prepared.reference.is_some() { Provenance::Exact } else { Provenance::Estimated };
    provenance.insert("i_err".to_string(), oracle_tag);
    provenance.insert("f0_gap".to_string(), oracle_tag);
    let constants = Constants { s, mu, sigma_sq, g_sq, eps_sq, i_err, f0_gap, provenance };
    let setup = BoundSetup {
        rounds: cfg.rounds,
        tau: prepared.run_cfg.tau,
        tau_tilde: prepared.run_cfg.tau_tilde.unwrap_or(prepared.run_cfg.tau),
        weights: prepared.shards.iter().map(|s| s.weight).collect(),
        q: prepared.shards.iter().map(|s| s.participation).collect(),
        eta_sq_sum: prepared.run_cfg.schedule.sum_eta_sq(cfg.rounds),
    };
    Ok((constants, setup))
}

/// Crude secant-style smoothness estimate over probe pairs for objectives
/// without analytic constants.
fn estimate_smoothness_fallback(
    prepared: &PreparedRun,
    probes: &[crate::models::SplitParams],
) -> Result<f64, HarnessError> {
    use crate::numkit::{sq_dist as vsq_dist, sq_norm as vsq_norm};
    let mut worst: f64 = 1.0;
    for pair in probes.windows(2) {
        let ga = crate::algorithms::weighted_grad(&prepared.spec, &prepared.shards, &pair[0])?;
        let gb = crate::algorithms::weighted_grad(&prepared.spec, &prepared.shards, &pair[1])?;
        let dx = vsq_dist(&pair[0].concat(), &pair[1].concat())?.sqrt();
        if dx > 1e-12 {
            let mut diff = ga;
            crate::numkit::axpy_into(&mut diff, -1.0, &gb)?;
            worst = worst.max(vsq_norm(&diff).sqrt() / dx);
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(name = "sfl-lab", version, about = "Deterministic split federated learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonRunArgs {
    /// JSON experiment config
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed list with one seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Reject stepsizes above the theory cap instead of warning
    #[arg(long)]
    strict_stepsize: bool,
    /// Worker threads for sweep entries (ignored elsewhere)
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Execute one config: trace CSV per seed plus a summary JSON
    Run(CommonRunArgs),
    /// Iterate one parameter over a value grid, seeds crossed in
    Sweep {
        #[command(flatten)]
        common: CommonRunArgs,
        /// parameter to vary: beta | q | tau | cut | epochs
        #[arg(long)]
        param: String,
        /// comma-separated values ("iid" allowed for beta)
        #[arg(long)]
        values: String,
    },
    /// Run all five methods on one shared setup
    Compare(CommonRunArgs),
    /// Evaluate the convergence-bound formulas for a config
    Bounds {
        #[command(flatten)]
        common: CommonRunArgs,
        /// theorem name (for example v1-sc, v2-nc-partial) or "all"
        #[arg(long, default_value = "all")]
        theorem: String,
        /// JSON constants file; estimated from the run when omitted
        #[arg(long)]
        constants: Option<PathBuf>,
    },
    /// Evaluate the communication/computation overhead table
    Cost {
        /// fl | sl | sfl-v1 | sfl-v2
        #[arg(long)]
        method: String,
        #[arg(long)]
        clients: f64,
        #[arg(long)]
        data_size: f64,
        #[arg(long)]
        smashed_size: f64,
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        #[arg(long, default_value_t = 1.0)]
        fwd_bwd_time: f64,
        #[arg(long, default_value_t = 1.0)]
        fedavg_time: f64,
        #[arg(long)]
        model_size: f64,
        #[arg(long, default_value_t = 0.5)]
        client_fraction: f64,
    },
    /// Run the built-in invariant suite
    Selftest,
}

fn resolve_seeds(cfg: &ExperimentConfig, flag: Option<u64>) -> Vec<u64> {
    if let Some(s) = flag {
        return vec![s];
    }
    if !cfg.seeds.is_empty() {
        return cfg.seeds.clone();
    }
    if let Ok(v) = std::env::var("SFL_LAB_SEED") {
        if let Ok(s) = v.parse::<u64>() {
            return vec![s];
        }
    }
    vec![0]
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

fn emit_run_outputs(
    cfg: &ExperimentConfig,
    name: &str,
    out: &Path,
    seeds: &[u64],
    summary: &Summary,
    traces: &[Trace],
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out)?;
    if cfg.emit.trace_csv {
        for (seed, trace) in seeds.iter().zip(traces) {
            let path = out.join(format!("{name}-seed{seed}.trace.csv"));
            let mut file = std::fs::File::create(path)?;
            write_trace_csv(trace, &mut file)?;
        }
    }
    if cfg.emit.summary_json {
        let path = out.join(format!("{name}.summary.json"));
        std::fs::write(path, serde_json::to_string_pretty(summary)?)?;
    }
    Ok(())
}

fn apply_sweep_value(
    cfg: &ExperimentConfig,
    param: &str,
    value: &str,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = cfg.clone();
    let bad = |m: String| HarnessError::Config(vec![m]);
    match param {
        "beta" => {
            cfg.partition.beta = if value == "iid" {
                BetaConfig::Iid("iid".to_string())
            } else {
                BetaConfig::Value(
                    value.parse().map_err(|_| bad(format!("beta value {value:?}")))?,
                )
            };
        }
        "q" => {
            let q: f64 = value.parse().map_err(|_| bad(format!("q value {value:?}")))?;
            cfg.participation = Some(ParticipationConfig::Uniform(q));
        }
        "tau" => {
            cfg.tau = Some(value.parse().map_err(|_| bad(format!("tau value {value:?}")))?);
        }
        "cut" => {
            cfg.objective.cut =
                Some(value.parse().map_err(|_| bad(format!("cut value {value:?}")))?);
        }
        "epochs" => {
            cfg.epochs = value.parse().map_err(|_| bad(format!("epochs value {value:?}")))?;
            cfg.tau = None;
        }
        other => return Err(bad(format!("sweep param {other:?} (use beta|q|tau|cut|epochs)"))),
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    param: String,
    value: String,
    summary: Summary,
}

#[derive(Debug, Serialize)]
struct CompareReport {
    schema_version: u32,
    seeds: Vec<u64>,
    per_variant: Vec<Summary>,
}

fn cmd_run(args: &CommonRunArgs) -> Result<(), HarnessError> {
    let mut cfg = load_config(&args.config)?;
    if args.strict_stepsize {
        cfg.strict_stepsize = true;
    }
    let seeds = resolve_seeds(&cfg, args.seed);
    let (summary, traces) = run_experiment(&cfg, &seeds)?;
    emit_run_outputs(&cfg, &stem_of(&args.config), &args.out, &seeds, &summary, &traces)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if !summary.checks_passed {
        return Err(HarnessError::CheckFailed("decomposition identity violated".into()));
    }
    Ok(())
}

fn cmd_sweep(args: &CommonRunArgs, param: &str, values: &str) -> Result<(), HarnessError> {
    let base = load_config(&args.config)?;
    let values: Vec<String> = values.split(',').map(|s| s.trim().to_string()).collect();
    let configs: Result<Vec<_>, _> =
        values.iter().map(|v| apply_sweep_value(&base, param, v)).collect();
    let configs = configs?;
    let seeds = resolve_seeds(&base, args.seed);
    let threads = args.threads.max(1);
    let mut entries: Vec<Option<SweepEntry>> = (0..configs.len()).map(|_| None).collect();
    let mut all_traces: Vec<Vec<Trace>> = Vec::new();
    if threads == 1 {
        for (i, cfg) in configs.iter().enumerate() {
            let (summary, traces) = run_experiment(cfg, &seeds)?;
            entries[i] =
                Some(SweepEntry { param: param.into(), value: values[i].clone(), summary });
            all_traces.push(traces);
        }
    } else {
        // sweep entries are independent; chunk them over a thread pool
        let results: Vec<Result<(Summary, Vec<Trace>), HarnessError>> =
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for cfg in &configs {
                    let seeds = seeds.clone();
                    handles.push(scope.spawn(move || run_experiment(cfg, &seeds)));
                }
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
        for (i, res) in results.into_iter().enumerate() {
            let (summary, traces) = res?;
            entries[i] =
                Some(SweepEntry { param: param.into(), value: values[i].clone(), summary });
            all_traces.push(traces);
        }
    }
    let entries: Vec<SweepEntry> = entries.into_iter().map(|e| e.expect("filled")).collect();
    std::fs::create_dir_all(&args.out)?;
    let name = stem_of(&args.config);
    for (entry, (cfg, traces)) in entries.iter().zip(configs.iter().zip(&all_traces)) {
        let sub = format!("{name}-{}-{}", entry.param, entry.value);
        emit_run_outputs(cfg, &sub, &args.out, &seeds, &entry.summary, traces)?;
    }
    let path = args.out.join(format!("{name}.sweep.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&entries)?)?;
    println!("{}", serde_json::to_string_pretty(&entries)?);
    Ok(())
}

fn cmd_compare(args: &CommonRunArgs) -> Result<(), HarnessError> {
    let base = load_config(&args.config)?;
    let seeds = resolve_seeds(&base, args.seed);
    let mut per_variant = Vec::new();
    for variant in ["sfl-v1", "sfl-v2", "fedavg", "sl", "mb-sgd"] {
        let mut cfg = base.clone();
        cfg.variant = variant.to_string();
        if variant != "sfl-v1" {
            cfg.tau_tilde = None;
        }
        cfg.validate()?;
        let (summary, _) = run_experiment(&cfg, &seeds)?;
        per_variant.push(summary);
    }
    let report = CompareReport { schema_version: SCHEMA_VERSION, seeds, per_variant };
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!("{}.compare.json", stem_of(&args.config)));
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_bounds(
    args: &CommonRunArgs,
    theorem: &str,
    constants_path: Option<&Path>,
) -> Result<(), HarnessError> {
    let cfg = load_config(&args.config)?;
    let seeds = resolve_seeds(&cfg, args.seed);
    let (constants, setup) = match constants_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let constants: Constants = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(vec![format!("{}: {e}", p.display())]))?;
            let (_, setup) = estimate_constants(&cfg, seeds[0])?;
            (constants, setup)
        }
        None => estimate_constants(&cfg, seeds[0])?,
    };
    let theorems: Vec<Theorem> = if theorem == "all" {
        Theorem::ALL
            .into_iter()
            .filter(|t| !matches!(t.name(), n if n.contains("sc")) || constants.mu.is_some())
            .collect()
    } else {
        vec![Theorem::parse(theorem)
            .ok_or_else(|| HarnessError::Config(vec![format!("unknown theorem {theorem:?}")]))?]
    };
    let reports: Result<Vec<BoundReport>, AnalysisError> =
        theorems.iter().map(|&t| bound_report(t, &constants, &setup)).collect();
    let reports = reports?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!("{}.bounds.json", stem_of(&args.config)));
    std::fs::write(&path, serde_json::to_string_pretty(&reports)?)?;
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_cost(
    method: &str,
    clients: f64,
    data_size: f64,
    smashed_size: f64,
    rate: f64,
    fwd_bwd_time: f64,
    fedavg_time: f64,
    model_size: f64,
    client_fraction: f64,
) -> Result<(), HarnessError> {
    let m = CostMethod::parse(method)
        .ok_or_else(|| HarnessError::Config(vec![format!("unknown method {method:?}")]))?;
    let inputs = CostInputs {
        clients,
        data_size,
        smashed_size,
        rate,
        fwd_bwd_time,
        fedavg_time,
        model_size,
        client_fraction,
    };
    if !inputs.validate() {
        return Err(HarnessError::Config(vec![
            "cost inputs must be positive (client fraction in (0, 1])".to_string(),
        ]));
    }
    let report = cost_model(&inputs, m);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_selftest() -> Result<(), HarnessError> {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        println!("[{}] {name}", if ok { "pass" } else { "FAIL" });
        if !ok {
            failures.push(name.to_string());
        }
    };

    let cfg: ExperimentConfig = serde_json::from_str(
        r#"{"schema_version":1,"rounds":20,"tau":2,"batch_size":16,
            "partition":{"clients":4,"samples_per_class":20,"feature_dim":6},
            "schedule":{"kind":"constant","eta":0.05},"seeds":[7]}"#,
    )
    .expect("selftest config");
    cfg.validate()?;

    let (summary_a, traces_a) = run_experiment(&cfg, &[7])?;
    let (summary_b, traces_b) = run_experiment(&cfg, &[7])?;
    check("determinism: repeated run is identical", traces_a[0].rows == traces_b[0].rows);
    check(
        "determinism: summaries agree",
        summary_a.mean_final_loss.to_bits() == summary_b.mean_final_loss.to_bits(),
    );
    check("decomposition identity on every row", summary_a.checks_passed);
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    write_trace_csv(&traces_a[0], &mut csv_a)?;
    write_trace_csv(&traces_b[0], &mut csv_b)?;
    check("trace CSV bytes identical", csv_a == csv_b);

    let mut v1 = cfg.clone();
    v1.variant = "fedavg".to_string();
    let (fed, _) = run_experiment(&v1, &[7])?;
    check(
        "sfl-v1 with tau_tilde = tau matches fedavg bitwise",
        fed.mean_final_loss.to_bits() == summary_a.mean_final_loss.to_bits(),
    );

    let hand = crate::analysis::eval_bound(
        Theorem::V1Sc,
        &Constants {
            s: 1.0,
            mu: Some(1.0),
            sigma_sq: vec![0.0],
            g_sq: 1.0,
            eps_sq: 0.0,
            i_err: 0.0,
            f0_gap: 0.0,
            provenance: BTreeMap::new(),
        },
        &BoundSetup {
            rounds: 1,
            tau: 1,
            tau_tilde: 1,
            weights: vec![1.0],
            q: vec![1.0],
            eta_sq_sum: 1.0,
        },
    )?;
    check("bound evaluator reproduces the hand-computed value", (hand - 13.0).abs() < 1e-12);

    if failures.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::CheckFailed(failures.join(", ")))
    }
}

/// Entry point behind the thin binary. Returns the process exit code:
/// 0 success, 1 check failure, 2 config error.
pub fn cli_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // help/version are successful exits
            if e.use_stderr() {
                eprintln!("{e}");
                return 2;
            }
            print!("{e}");
            return 0;
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep { common, param, values } => cmd_sweep(common, param, values),
        Command::Compare(args) => cmd_compare(args),
        Command::Bounds { common, theorem, constants } => {
            cmd_bounds(common, theorem, constants.as_deref())
        }
        Command::Cost {
            method,
            clients,
            data_size,
            smashed_size,
            rate,
            fwd_bwd_time,
            fedavg_time,
            model_size,
            client_fraction,
        } => cmd_cost(
            method,
            *clients,
            *data_size,
            *smashed_size,
            *rate,
            *fwd_bwd_time,
            *fedavg_time,
            *model_size,
            *client_fraction,
        ),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
