//! Everything measured or evaluated about a run: optimum oracles, metric
//! traces, decomposition checks, constant estimators, convergence-bound
//! evaluators, local-drift diagnostics, rate fitting, and the communication
//! cost model.

use crate::data::ClientShard;
use crate::models::{
    convexity_constants, full_grad, ModelError, ObjectiveSpec, SplitParams,
};
use crate::numkit::{axpy_into, dot, sq_dist, sq_norm, RngStream, Vec64};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] crate::numkit::NumError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("missing constant: {0}")]
    MissingConstant(&'static str),
    #[error("oracle did not converge within {iters} iterations (residual {residual})")]
    NonConvergence { iters: usize, residual: f64 },
    #[error("no optimum oracle for this objective")]
    NoOracle,
    #[error("non-positive metric value at t = {t}")]
    NonPositiveMetric { t: usize },
    #[error("fit window contains fewer than two usable rows")]
    EmptyWindow,
    #[error("trace rows carry no reference (x*, f*)")]
    MissingReference,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Known optimum of the global objective.
#[derive(Debug, Clone)]
pub struct Reference {
    pub params: SplitParams,
    pub f_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub loss: f64,
    pub loss_gap: Option<f64>,
    pub dist_c: Option<f64>,
    pub dist_s: Option<f64>,
    pub dist_full: Option<f64>,
    pub eta: f64,
    pub grad_norm_sq: f64,
    pub comm_bytes: u64,
    pub flops: u64,
}

/// One row per round boundary, t = 0..=T. Row t holds the state after t
/// rounds; its eta field is the stepsize for the round starting there.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// Per-round, per-client sum over local iterations of the squared
    /// distance to the round-start model (when drift recording is on).
    pub drift: Option<Vec<Vec<f64>>>,
    /// Model snapshot per row (when snapshot recording is on).
    pub snapshots: Option<Vec<SplitParams>>,
    /// Frozen service order when order redrawing is disabled.
    pub fixed_order: Option<Vec<usize>>,
    pub stepsize_warning: bool,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn final_row(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn rounds(&self) -> usize {
        self.rows.last().map_or(0, |r| r.t)
    }
}

pub const TRACE_CSV_HEADER: &str =
    "t,loss,loss_gap,dist_c,dist_s,dist_full,eta,grad_norm_sq,comm_bytes,flops";

fn csv_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "nan".to_string(),
    }
}

pub fn write_trace_csv<W: Write>(trace: &Trace, mut w: W) -> Result<(), AnalysisError> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for r in &trace.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.loss,
            csv_opt(r.loss_gap),
            csv_opt(r.dist_c),
            csv_opt(r.dist_s),
            csv_opt(r.dist_full),
            r.eta,
            r.grad_norm_sq,
            r.comm_bytes,
            r.flops
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Estimated,
}

/// Problem constants feeding the bound evaluators. The provenance map tags
/// each field as exact or estimated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constants {
    pub s: f64,
    pub mu: Option<f64>,
    pub sigma_sq: Vec<f64>,
    pub g_sq: f64,
    pub eps_sq: f64,
    pub i_err: f64,
    /// f(x^0) - f*, used by the non-convex bounds.
    pub f0_gap: f64,
    #[serde(default)]
    pub provenance: BTreeMap<String, Provenance>,
}

impl Constants {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let mut vals = vec![self.s, self.g_sq, self.eps_sq, self.i_err, self.f0_gap];
        vals.extend(self.sigma_sq.iter().copied());
        if let Some(mu) = self.mu {
            vals.push(mu);
        }
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AnalysisError::MissingConstant("non-negative finite constants"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    V1Sc,
    V1Gc,
    V1Nc,
    V2Sc,
    V2Gc,
    V2Nc,
    V1ScP,
    V1GcP,
    V1NcP,
    V2ScP,
    V2GcP,
    V2NcP,
}

impl Theorem {
    pub const ALL: [Theorem; 12] = [
        Theorem::V1Sc,
        Theorem::V1Gc,
        Theorem::V1Nc,
        Theorem::V2Sc,
        Theorem::V2Gc,
        Theorem::V2Nc,
        Theorem::V1ScP,
        Theorem::V1GcP,
        Theorem::V1NcP,
        Theorem::V2ScP,
        Theorem::V2GcP,
        Theorem::V2NcP,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Theorem::V1Sc => "v1-sc",
            Theorem::V1Gc => "v1-gc",
            Theorem::V1Nc => "v1-nc",
            Theorem::V2Sc => "v2-sc",
            Theorem::V2Gc => "v2-gc",
            Theorem::V2Nc => "v2-nc",
            Theorem::V1ScP => "v1-sc-partial",
            Theorem::V1GcP => "v1-gc-partial",
            Theorem::V1NcP => "v1-nc-partial",
            Theorem::V2ScP => "v2-sc-partial",
            Theorem::V2GcP => "v2-gc-partial",
            Theorem::V2NcP => "v2-nc-partial",
        }
    }

    pub fn parse(s: &str) -> Option<Theorem> {
        Theorem::ALL.into_iter().find(|t| t.name() == s)
    }

    fn is_v2(&self) -> bool {
        matches!(
            self,
            Theorem::V2Sc | Theorem::V2Gc | Theorem::V2Nc | Theorem::V2ScP | Theorem::V2GcP | Theorem::V2NcP
        )
    }

    fn is_partial(&self) -> bool {
        matches!(
            self,
            Theorem::V1ScP | Theorem::V1GcP | Theorem::V1NcP | Theorem::V2ScP | Theorem::V2GcP | Theorem::V2NcP
        )
    }
}

/// Scheduling facts a bound evaluation needs beyond the problem constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundSetup {
    pub rounds: usize,
    pub tau: usize,
    pub tau_tilde: usize,
    pub weights: Vec<f64>,
    pub q: Vec<f64>,
    /// sum over t < rounds of (eta^t)^2, for the non-convex bounds.
    pub eta_sq_sum: f64,
}

/// Evaluates the stated convergence-bound right-hand side.
pub fn eval_bound(
    theorem: Theorem,
    c: &Constants,
    setup: &BoundSetup,
) -> Result<f64, AnalysisError> {
    c.validate()?;
    let n = setup.weights.len();
    if c.sigma_sq.len() != n || setup.q.len() != n {
        return Err(AnalysisError::MissingConstant("per-client sigma/q length"));
    }
    let nf = n as f64;
    let t_rounds = setup.rounds as f64;
    let s = c.s;
    let g_sq = c.g_sq;
    let i_err = c.i_err;
    let tau = setup.tau as f64;
    let tau_tilde = if theorem.is_v2() { tau } else { setup.tau_tilde as f64 };
    let tau_min = tau.min(tau_tilde);
    let v2 = theorem.is_v2();
    let partial = theorem.is_partial();

    // sum over clients of w(a_n) * (2 sigma_n^2 + G^2 [+ G^2/q_n])
    let noise_sum = |sq_weight: bool, add_q_term: bool| -> f64 {
        (0..n)
            .map(|k| {
                let a = setup.weights[k];
                let w = if sq_weight {
                    if v2 { a * a + 1.0 } else { a * a }
                } else if v2 {
                    a + 1.0
                } else {
                    a
                };
                let mut noise = 2.0 * c.sigma_sq[k] + g_sq;
                if add_q_term {
                    noise += g_sq / setup.q[k];
                }
                w * noise
            })
            .sum()
    };

    match theorem {
        Theorem::V1Sc | Theorem::V2Sc | Theorem::V1ScP | Theorem::V2ScP => {
            let mu = c.mu.ok_or(AnalysisError::MissingConstant("mu"))?;
            if mu <= 0.0 {
                return Err(AnalysisError::MissingConstant("mu > 0"));
            }
            let gamma = 8.0 * s / mu - 1.0;
            let term1 =
                8.0 * s * nf * noise_sum(true, partial) / (mu * mu * (gamma + t_rounds));
            let term2 = 768.0 * s * s * noise_sum(false, false)
                / (mu * mu * mu * (gamma + t_rounds) * (gamma + 1.0));
            let term3 = s * (gamma + 1.0) * i_err / (2.0 * (gamma + t_rounds));
            Ok(term1 + term2 + term3)
        }
        Theorem::V1Gc | Theorem::V1GcP => {
            let tp1 = t_rounds + 1.0;
            let tausq = tau_tilde * tau_tilde + tau * tau;
            let term1 = s * i_err / (2.0 * tp1);
            let term2 = 0.5
                * (tausq * i_err * nf / (tau_min * tau_min * tp1) * noise_sum(true, partial))
                    .sqrt();
            let term3 = 0.5
                * (24.0 * tausq * s * i_err / (tau_min * tau_min * tp1) * noise_sum(false, false))
                    .cbrt();
            Ok(term1 + term2 + term3)
        }
        Theorem::V2Gc | Theorem::V2GcP => {
            let tp1 = t_rounds + 1.0;
            let term1 = s * i_err / (2.0 * tp1);
            let term2 = 0.5 * (nf * i_err / tp1 * noise_sum(true, partial)).sqrt();
            let term3 = 0.5 * (24.0 * s * i_err / tp1 * noise_sum(false, false)).cbrt();
            Ok(term1 + term2 + term3)
        }
        Theorem::V1Nc | Theorem::V1NcP | Theorem::V2Nc | Theorem::V2NcP => {
            let het_sum: f64 = (0..n)
                .map(|k| {
                    let a = setup.weights[k];
                    let mut w = if v2 { a * a + 1.0 } else { a * a };
                    if partial {
                        w /= setup.q[k];
                    }
                    w * (c.sigma_sq[k] + c.eps_sq)
                })
                .sum();
            let (denom_tau, tau_factor) = if v2 {
                (tau, 8.0 * nf * s * tau / t_rounds)
            } else {
                (tau_min, 8.0 * nf * s * (tau * tau + tau_tilde * tau_tilde) / (t_rounds * tau_min))
            };
            let term1 = 4.0 * c.f0_gap / (t_rounds * denom_tau);
            Ok(term1 + tau_factor * het_sum * setup.eta_sq_sum)
        }
    }
}

/// JSON payload for one bound evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: String,
    pub value: f64,
    pub constants: Constants,
    pub setup: BoundSetup,
}

pub fn bound_report(
    theorem: Theorem,
    constants: &Constants,
    setup: &BoundSetup,
) -> Result<BoundReport, AnalysisError> {
    Ok(BoundReport {
        theorem: theorem.name().to_string(),
        value: eval_bound(theorem, constants, setup)?,
        constants: constants.clone(),
        setup: setup.clone(),
    })
}

/// Weighted a_n-global optimum. SplitRidge solves the regularized normal
/// equations by conjugate gradient; SplitLogistic runs full-batch descent
/// with backtracking. The MLP objective has no oracle.
pub fn optimum_oracle(
    spec: &ObjectiveSpec,
    shards: &[ClientShard],
) -> Result<Reference, AnalysisError> {
    match spec {
        ObjectiveSpec::SplitRidge { .. } => ridge_oracle(spec, shards),
        ObjectiveSpec::SplitLogistic { .. } => logistic_oracle(spec, shards),
        ObjectiveSpec::SplitMlp { .. } => Err(AnalysisError::NoOracle),
    }
}

fn ridge_matvec(
    spec: &ObjectiveSpec,
    shards: &[ClientShard],
    w: &Vec64,
) -> Result<Vec64, AnalysisError> {
    let (features, lambda) = match spec {
        ObjectiveSpec::SplitRidge { features, lambda, .. } => (features, *lambda),
        _ => unreachable!(),
    };
    let mut out = Vec64::zeros(w.len());
    for shard in shards {
        let coeff = shard.weight / shard.indices.len() as f64;
        for &i in &shard.indices {
            let row = &features[i];
            let score = dot(row, w)?;
            axpy_into(&mut out, coeff * score, row)?;
        }
    }
    axpy_into(&mut out, lambda, w)?;
    Ok(out)
}

fn ridge_oracle(spec: &ObjectiveSpec, shards: &[ClientShard]) -> Result<Reference, AnalysisError> {
    let (features, targets) = match spec {
        ObjectiveSpec::SplitRidge { features, targets, .. } => (features, targets),
        _ => unreachable!(),
    };
    let d = spec.dim();
    let mut b = Vec64::zeros(d);
    for shard in shards {
        let coeff = shard.weight / shard.indices.len() as f64;
        for &i in &shard.indices {
            axpy_into(&mut b, coeff * targets[i], &features[i])?;
        }
    }
    // conjugate gradient on the normal equations
    let tol = 1e-12 * sq_norm(&b).sqrt().max(1.0);
    let mut x = Vec64::zeros(d);
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = sq_norm(&r);
    let budget = 20 * d + 50;
    for _ in 0..budget {
        if rs.sqrt() <= tol {
            break;
        }
        let ap = ridge_matvec(spec, shards, &p)?;
        let alpha = rs / dot(&p, &ap)?;
        axpy_into(&mut x, alpha, &p)?;
        axpy_into(&mut r, -alpha, &ap)?;
        let rs_new = sq_norm(&r);
        let beta = rs_new / rs;
        let mut p_new = r.clone();
        axpy_into(&mut p_new, beta, &p)?;
        p = p_new;
        rs = rs_new;
    }
    if rs.sqrt() > tol {
        return Err(AnalysisError::NonConvergence { iters: budget, residual: rs.sqrt() });
    }
    let params = SplitParams::from_full(&x, spec.client_dim());
    let f_star = crate::algorithms::weighted_loss(spec, shards, &params)?;
    Ok(Reference { params, f_star })
}

fn logistic_oracle(
    spec: &ObjectiveSpec,
    shards: &[ClientShard],
) -> Result<Reference, AnalysisError> {
    let d = spec.dim();
    let mut x = SplitParams::from_full(&Vec64::zeros(d), spec.client_dim());
    let (s, _) = convexity_constants(spec)?;
    let budget = 200_000;
    let mut loss = crate::algorithms::weighted_loss(spec, shards, &x)?;
    let mut residual = f64::INFINITY;
    for _ in 0..budget {
        let g = crate::algorithms::weighted_grad(spec, shards, &x)?;
        let g_sq = sq_norm(&g);
        residual = g_sq.sqrt();
        if residual < 1e-10 {
            let f_star = loss;
            return Ok(Reference { params: x, f_star });
        }
        // backtracking line search with Armijo condition, restarted from
        // 1/S each iteration; the noise allowance keeps the test meaningful
        // when the true decrease falls below the ulp of the loss
        let mut step = 1.0 / s;
        let noise = 4.0 * f64::EPSILON * loss.abs();
        loop {
            let mut cand_full = x.concat();
            axpy_into(&mut cand_full, -step, &g)?;
            let cand = SplitParams::from_full(&cand_full, spec.client_dim());
            let cand_loss = crate::algorithms::weighted_loss(spec, shards, &cand)?;
            if cand_loss <= loss - 1e-4 * step * g_sq + noise {
                x = cand;
                loss = cand_loss;
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                return Err(AnalysisError::NonConvergence { iters: budget, residual });
            }
        }
    }
    Err(AnalysisError::NonConvergence { iters: budget, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecompositionVerdict {
    /// dist_full equals dist_c + dist_s bit-exactly.
    pub exact_identity: bool,
    /// loss_gap <= (S/2) dist_full + 1e-9.
    pub smoothness_ok: bool,
}

pub fn check_decomposition(row: &TraceRow, s: f64) -> Result<DecompositionVerdict, AnalysisError> {
    let (gap, dc, ds, df) = match (row.loss_gap, row.dist_c, row.dist_s, row.dist_full) {
        (Some(g), Some(dc), Some(ds), Some(df)) => (g, dc, ds, df),
        _ => return Err(AnalysisError::MissingReference),
    };
    Ok(DecompositionVerdict {
        exact_identity: df == dc + ds,
        smoothness_ok: gap <= 0.5 * s * df + 1e-9,
    })
}

/// Sample variance of M one-batch stochastic gradients around the exact
/// shard gradient at x.
pub fn estimate_sigma(
    spec: &ObjectiveSpec,
    shard: &ClientShard,
    x: &SplitParams,
    batch_size: usize,
    m: usize,
    mode: crate::data::SamplingMode,
    rng: &mut RngStream,
) -> Result<f64, AnalysisError> {
    assert!(m >= 2, "need at least two draws");
    let exact = full_grad(spec, x, &shard.indices)?;
    let mut local = shard.clone();
    let mut acc = 0.0;
    for _ in 0..m {
        // sort so a full-batch epoch draw reproduces the exact gradient
        // bit-for-bit; the variance itself is order-invariant
        let mut idx = crate::data::sample_indices(&mut local, batch_size, mode, rng)?;
        idx.sort_unstable();
        let g = full_grad(spec, x, &idx)?;
        acc += sq_dist(&g, &exact)?;
    }
    Ok(acc / m as f64)
}

/// Max over clients and probe points of || grad F_n - grad f ||^2.
pub fn estimate_eps(
    spec: &ObjectiveSpec,
    shards: &[ClientShard],
    probes: &[SplitParams],
) -> Result<f64, AnalysisError> {
    assert!(!probes.is_empty(), "need at least one probe point");
    let mut worst: f64 = 0.0;
    for x in probes {
        let global = crate::algorithms::weighted_grad(spec, shards, x)?;
        for shard in shards {
            let local = full_grad(spec, x, &shard.indices)?;
            worst = worst.max(sq_dist(&local, &global)?);
        }
    }
    Ok(worst)
}

/// Trajectory-restricted squared-norm surrogate: 1.5 times the max observed
/// per-client one-batch gradient norm over the probe points. A global bound
/// G^2 cannot hold for quadratics, so this stands in for it; reports carry
/// the estimated provenance tag.
pub fn estimate_g_sq(
    spec: &ObjectiveSpec,
    shards: &[ClientShard],
    probes: &[SplitParams],
    batch_size: usize,
    draws_per_probe: usize,
    rng: &mut RngStream,
) -> Result<f64, AnalysisError> {
    assert!(!probes.is_empty(), "need at least one probe point");
    let mut worst: f64 = 0.0;
    for x in probes {
        for shard in shards {
            let mut local = shard.clone();
            for _ in 0..draws_per_probe {
                let idx = crate::data::sample_indices(
                    &mut local,
                    batch_size,
                    crate::data::SamplingMode::WithReplacement,
                    rng,
                )?;
                let g = full_grad(spec, x, &idx)?;
                worst = worst.max(sq_norm(&g));
            }
        }
    }
    Ok(1.5 * worst)
}

/// Lemma right-hand side for the per-round local drift sum:
/// 12 tau^3 eta^2 (2 sigma_n^2 + G^2), valid for eta <= 1/(sqrt(6) S tau).
pub fn drift_bound(tau: usize, eta: f64, sigma_sq: f64, g_sq: f64) -> f64 {
    let tf = tau as f64;
    12.0 * tf * tf * tf * eta * eta * (2.0 * sigma_sq + g_sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMetric {
    LossGap,
    DistFull,
    GradNormSq,
}

fn metric_value(row: &TraceRow, metric: TraceMetric) -> Option<f64> {
    match metric {
        TraceMetric::LossGap => row.loss_gap,
        TraceMetric::DistFull => row.dist_full,
        TraceMetric::GradNormSq => Some(row.grad_norm_sq),
    }
}

/// Least-squares slope of log y against log x.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(AnalysisError::EmptyWindow);
    }
    let lx: Vec<f64> = xs.iter().map(|&x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|&y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(AnalysisError::EmptyWindow);
    }
    Ok(sxy / sxx)
}

/// Default window skips the first 20% of rounds.
pub fn default_window(trace: &Trace) -> (usize, usize) {
    let t_max = trace.rounds();
    ((t_max / 5).max(1), t_max)
}

/// Power-law slope of a trace metric over rounds [t_lo, t_hi].
pub fn fit_rate(
    trace: &Trace,
    metric: TraceMetric,
    window: (usize, usize),
) -> Result<f64, AnalysisError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for row in &trace.rows {
        if row.t < window.0.max(1) || row.t > window.1 {
            continue;
        }
        let y = metric_value(row, metric).ok_or(AnalysisError::MissingReference)?;
        if y <= 0.0 {
            return Err(AnalysisError::NonPositiveMetric { t: row.t });
        }
        xs.push(row.t as f64);
        ys.push(y);
    }
    fit_loglog(&xs, &ys)
}

/// Fit a slope to the mean of a metric across several traces (pointwise mean
/// at each round in the window).
pub fn fit_rate_mean(
    traces: &[Trace],
    metric: TraceMetric,
    window: (usize, usize),
) -> Result<f64, AnalysisError> {
    if traces.is_empty() {
        return Err(AnalysisError::EmptyWindow);
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t in window.0.max(1)..=window.1 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for trace in traces {
            if let Some(row) = trace.rows.iter().find(|r| r.t == t) {
                let y = metric_value(row, metric).ok_or(AnalysisError::MissingReference)?;
                acc += y;
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        let mean = acc / count as f64;
        if mean <= 0.0 {
            return Err(AnalysisError::NonPositiveMetric { t });
        }
        xs.push(t as f64);
        ys.push(mean);
    }
    fit_loglog(&xs, &ys)
}

/// Non-convex performance metric (1/T) sum_{t<T} eta^t ||grad f(x^t)||^2.
pub fn grad_metric(trace: &Trace, rounds: usize) -> f64 {
    let sum: f64 = trace
        .rows
        .iter()
        .filter(|r| r.t < rounds)
        .map(|r| r.eta * r.grad_norm_sq)
        .sum();
    sum / rounds as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMethod {
    Fl,
    Sl,
    SflV1,
    SflV2,
}

impl CostMethod {
    pub fn parse(s: &str) -> Option<CostMethod> {
        match s {
            "fl" => Some(CostMethod::Fl),
            "sl" => Some(CostMethod::Sl),
            "sfl-v1" => Some(CostMethod::SflV1),
            "sfl-v2" => Some(CostMethod::SflV2),
            _ => None,
        }
    }
}

/// Symbols of the overhead comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostInputs {
    /// number of clients K
    pub clients: f64,
    /// aggregate data size p
    pub data_size: f64,
    /// smashed-layer size q
    pub smashed_size: f64,
    /// communication rate R
    pub rate: f64,
    /// one full forward+backward pass duration T
    pub fwd_bwd_time: f64,
    /// full-model aggregation duration
    pub fedavg_time: f64,
    /// full model size |W|
    pub model_size: f64,
    /// client share beta of the full model
    pub client_fraction: f64,
}

impl CostInputs {
    pub fn validate(&self) -> bool {
        let pos = [
            self.clients,
            self.data_size,
            self.smashed_size,
            self.rate,
            self.fwd_bwd_time,
            self.fedavg_time,
            self.model_size,
        ];
        pos.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.client_fraction > 0.0
            && self.client_fraction <= 1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    pub method: CostMethod,
    pub comm_per_client: f64,
    pub total_comm: f64,
    pub total_time: f64,
}

pub fn cost_model(inputs: &CostInputs, method: CostMethod) -> CostReport {
    let k = inputs.clients;
    let p = inputs.data_size;
    let q = inputs.smashed_size;
    let r = inputs.rate;
    let t = inputs.fwd_bwd_time;
    let t_agg = inputs.fedavg_time;
    let w = inputs.model_size;
    let beta = inputs.client_fraction;
    let (comm_per_client, total_comm, total_time) = match method {
        CostMethod::Fl => (2.0 * w, 2.0 * k * w, t + 2.0 * w / r + t_agg),
        CostMethod::Sl => (
            (2.0 * p / k) * q + 2.0 * beta * w,
            2.0 * p * q + 2.0 * beta * k * w,
            t + 2.0 * p * q / r + 2.0 * beta * w * k / r,
        ),
        CostMethod::SflV1 => (
            (2.0 * p / k) * q + 2.0 * beta * w,
            2.0 * p * q + 2.0 * beta * k * w,
            t + 2.0 * p * q / (r * k) + 2.0 * beta * w / r + t_agg,
        ),
        CostMethod::SflV2 => (
            (2.0 * p / k) * q + 2.0 * beta * w,
            2.0 * p * q + 2.0 * beta * k * w,
            t + 2.0 * p * q / (r * k) + 2.0 * beta * w / r + t_agg / 2.0,
        ),
    };
    CostReport { method, comm_per_client, total_comm, total_time }
}

/// Expected wire bytes per round for one split run under the 8-bytes-per-
/// scalar counting rule, for cross-checking the counted totals.
pub fn expected_split_bytes_per_round(
    batch_size: usize,
    cut_width: usize,
    client_dim: usize,
    tau: usize,
    participants: usize,
) -> u64 {
    participants as u64 * (tau as u64 * 2 * batch_size as u64 * cut_width as u64 * 8 + 2 * client_dim as u64 * 8)
}
