//! Synthetic dataset generation, Dirichlet non-IID partitioning, client
//! weights, and mini-batch sampling.

use crate::models::{Batch, ObjectiveSpec};
use crate::numkit::{RngStream, Vec64};
use std::fmt;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("client shard is empty")]
    EmptyShard,
    #[error("partition failed after {attempts} attempts (beta = {beta}, clients = {clients})")]
    PartitionFailure { beta: f64, clients: usize, attempts: usize },
    #[error("csv error: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Label heterogeneity control: Dirichlet concentration, or the IID sentinel
/// (the beta -> infinity limit, realized as round-robin assignment).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Heterogeneity {
    Dirichlet(f64),
    Iid,
}

impl fmt::Display for Heterogeneity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Heterogeneity::Dirichlet(b) => write!(f, "{b}"),
            Heterogeneity::Iid => write!(f, "iid"),
        }
    }
}

/// Gaussian-blob classification dataset description.
#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub clients: usize,
    pub beta: Heterogeneity,
    pub classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    /// Radius at which class means are placed.
    pub margin: f64,
    /// Isotropic standard deviation of each blob.
    pub sigma_blob: f64,
}

/// A labeled synthetic dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<Vec64>,
    pub labels: Vec<f64>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// One client's view: sample indices, aggregation weight a_n, and
/// participation probability q_n. The batch sampler state for epoch mode
/// lives here; the RNG stream is supplied by the caller so the same draws
/// can be shared across algorithm variants.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
    pub weight: f64,
    pub participation: f64,
    epoch_order: Vec<usize>,
    epoch_cursor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SamplingMode {
    /// Uniform with replacement; the stochastic gradient is exactly unbiased.
    #[default]
    WithReplacement,
    /// Shuffle-once-per-epoch, as in the usual experimental practice.
    EpochShuffle,
}

impl ClientShard {
    pub fn new(client_id: usize, indices: Vec<usize>, weight: f64, participation: f64) -> Self {
        Self { client_id, indices, weight, participation, epoch_order: Vec::new(), epoch_cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Gaussian blobs, one mean per class on a circle of radius `margin`,
/// isotropic noise `sigma_blob`.
pub fn make_classification(spec: &PartitionSpec, rng: &mut RngStream) -> Dataset {
    assert!(spec.feature_dim >= 1 && spec.classes >= 1);
    let mut features = Vec::with_capacity(spec.classes * spec.samples_per_class);
    let mut labels = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for c in 0..spec.classes {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / spec.classes as f64;
        let mut mean = vec![0.0; spec.feature_dim];
        mean[0] = spec.margin * angle.cos();
        if spec.feature_dim > 1 {
            mean[1] = spec.margin * angle.sin();
        }
        for _ in 0..spec.samples_per_class {
            let row: Vec<f64> = mean
                .iter()
                .map(|m| m + spec.sigma_blob * rng.next_gaussian())
                .collect();
            features.push(Vec64::new(row).expect("finite sample"));
            labels.push(c as f64);
        }
    }
    Dataset { features, labels, classes: spec.classes }
}

/// Per-class Dirichlet split: for each class draw p ~ Dir(beta * 1_N) and
/// assign that class's indices to clients multinomially by p. The IID
/// sentinel shuffles once and deals round-robin. Redraws (fresh draws from
/// the same derived stream) until every client is non-empty, up to 100
/// attempts; if empties persist (likely at very small beta with few
/// classes) each empty client is deterministically given one sample moved
/// from the largest shard.
pub fn dirichlet_partition(
    labels: &[f64],
    clients: usize,
    beta: Heterogeneity,
    rng: &mut RngStream,
) -> Result<Vec<Vec<usize>>, DataError> {
    assert!(clients >= 1);
    const MAX_ATTEMPTS: usize = 100;
    let mut last: Option<Vec<Vec<usize>>> = None;
    for _ in 0..MAX_ATTEMPTS {
        let lists = match beta {
            Heterogeneity::Iid => {
                let mut order: Vec<usize> = (0..labels.len()).collect();
                let perm = rng.permutation(order.len());
                order = perm.into_iter().map(|i| order[i]).collect();
                let mut lists = vec![Vec::new(); clients];
                for (k, idx) in order.into_iter().enumerate() {
                    lists[k % clients].push(idx);
                }
                lists
            }
            Heterogeneity::Dirichlet(b) => {
                assert!(b > 0.0);
                let mut lists = vec![Vec::new(); clients];
                let mut classes: Vec<u64> = labels.iter().map(|&l| l as u64).collect();
                classes.sort_unstable();
                classes.dedup();
                for &c in &classes {
                    let gammas: Vec<f64> = (0..clients).map(|_| rng.next_gamma(b)).collect();
                    let total: f64 = gammas.iter().sum();
                    let p: Vec<f64> = gammas.iter().map(|g| g / total.max(1e-300)).collect();
                    for (idx, &l) in labels.iter().enumerate() {
                        if l as u64 == c {
                            let u = rng.next_f64();
                            let mut acc = 0.0;
                            let mut chosen = clients - 1;
                            for (n, &pn) in p.iter().enumerate() {
                                acc += pn;
                                if u < acc {
                                    chosen = n;
                                    break;
                                }
                            }
                            lists[chosen].push(idx);
                        }
                    }
                }
                lists
            }
        };
        if lists.iter().all(|l| !l.is_empty()) {
            return Ok(lists);
        }
        if beta == Heterogeneity::Iid {
            // round-robin can only leave a client empty if N > D; retrying
            // cannot help
            break;
        }
        last = Some(lists);
    }
    let b = match beta {
        Heterogeneity::Dirichlet(b) => b,
        Heterogeneity::Iid => f64::INFINITY,
    };
    let failure = || DataError::PartitionFailure { beta: b, clients, attempts: MAX_ATTEMPTS };
    let Some(mut lists) = last else {
        return Err(failure());
    };
    if labels.len() < clients {
        return Err(failure());
    }
    loop {
        let Some(empty) = lists.iter().position(|l| l.is_empty()) else {
            return Ok(lists);
        };
        let donor = (0..clients).max_by_key(|&n| lists[n].len()).expect("clients >= 1");
        if lists[donor].len() < 2 {
            return Err(failure());
        }
        let moved = lists[donor].pop().expect("donor non-empty");
        lists[empty].push(moved);
    }
}

/// Equalizes shard sizes in place by moving trailing indices from the
/// largest list to the smallest until the spread is at most one. Label skew
/// is mostly preserved, so this gives heterogeneous-by-class shards with
/// uniform weights a_n = 1/N.
pub fn balance_partition(lists: &mut [Vec<usize>]) {
    if lists.is_empty() {
        return;
    }
    loop {
        let big = (0..lists.len()).max_by_key(|&n| lists[n].len()).expect("non-empty");
        let small = (0..lists.len()).min_by_key(|&n| lists[n].len()).expect("non-empty");
        if lists[big].len() <= lists[small].len() + 1 {
            return;
        }
        let moved = lists[big].pop().expect("big list non-empty");
        lists[small].push(moved);
    }
}

/// Builds shards with a_n = D_n / sum D and the given per-client q_n.
pub fn make_shards(
    lists: Vec<Vec<usize>>,
    participation: &[f64],
) -> Result<Vec<ClientShard>, DataError> {
    let total: usize = lists.iter().map(|l| l.len()).sum();
    if lists.iter().any(|l| l.is_empty()) {
        return Err(DataError::EmptyShard);
    }
    Ok(lists
        .into_iter()
        .enumerate()
        .map(|(n, indices)| {
            let w = indices.len() as f64 / total as f64;
            let q = participation.get(n).copied().unwrap_or(1.0);
            ClientShard::new(n, indices, w, q)
        })
        .collect())
}

/// Draws b_s sample indices from the shard. With-replacement sampling is
/// uniform over the shard; epoch mode walks a reshuffled order.
pub fn sample_indices(
    shard: &mut ClientShard,
    b_s: usize,
    mode: SamplingMode,
    rng: &mut RngStream,
) -> Result<Vec<usize>, DataError> {
    if shard.indices.is_empty() {
        return Err(DataError::EmptyShard);
    }
    assert!(b_s >= 1);
    let mut out = Vec::with_capacity(b_s);
    match mode {
        SamplingMode::WithReplacement => {
            for _ in 0..b_s {
                let k = rng.next_below(shard.indices.len() as u64) as usize;
                out.push(shard.indices[k]);
            }
        }
        SamplingMode::EpochShuffle => {
            for _ in 0..b_s {
                if shard.epoch_cursor >= shard.epoch_order.len() {
                    let perm = rng.permutation(shard.indices.len());
                    shard.epoch_order = perm.into_iter().map(|i| shard.indices[i]).collect();
                    shard.epoch_cursor = 0;
                }
                out.push(shard.epoch_order[shard.epoch_cursor]);
                shard.epoch_cursor += 1;
            }
        }
    }
    Ok(out)
}

/// Samples a mini-batch of rows for the given objective.
pub fn sample_batch(
    shard: &mut ClientShard,
    spec: &ObjectiveSpec,
    b_s: usize,
    mode: SamplingMode,
    rng: &mut RngStream,
) -> Result<Batch, DataError> {
    let idx = sample_indices(shard, b_s, mode, rng)?;
    Ok(spec.batch_from_indices(&idx))
}

/// tau = ceil(D_n / b_s) * E.
pub fn local_iterations(d_n: usize, b_s: usize, epochs: usize) -> usize {
    assert!(d_n >= 1 && b_s >= 1 && epochs >= 1);
    d_n.div_ceil(b_s) * epochs
}

/// One row per sample: label, then features.
pub fn dump_csv<W: Write>(dataset: &Dataset, mut w: W) -> Result<(), DataError> {
    for (row, label) in dataset.features.iter().zip(&dataset.labels) {
        write!(w, "{label}")?;
        for v in row.iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn load_csv<R: BufRead>(r: R, classes: usize) -> Result<Dataset, DataError> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let label: f64 = parts
            .next()
            .ok_or_else(|| DataError::Csv(format!("line {}: empty", lineno + 1)))?
            .trim()
            .parse()
            .map_err(|e| DataError::Csv(format!("line {}: {e}", lineno + 1)))?;
        let row: Result<Vec<f64>, _> = parts.map(|p| p.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| DataError::Csv(format!("line {}: {e}", lineno + 1)))?;
        features
            .push(Vec64::new(row).map_err(|e| DataError::Csv(format!("line {}: {e}", lineno + 1)))?);
        labels.push(label);
    }
    Ok(Dataset { features, labels, classes })
}
