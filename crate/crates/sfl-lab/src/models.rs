//! Split-differentiable objectives with an explicit cut boundary.
//!
//! Each objective exposes three pieces: the client computes per-sample cut
//! activations from its parameter block, the server computes the mini-batch
//! loss and its own gradient plus the gradient w.r.t. the activations, and the
//! client finishes the chain rule back to its block. Concatenating the two
//! block gradients reproduces the monolithic mini-batch gradient.
//!
//! The regularization term is decomposed blockwise: (lambda/2)||x_c||^2 is
//! charged to the client and (lambda/2)||x_s||^2 to the server, which keeps
//! the cut interface to (activation, cut_grad) alone.

use crate::numkit::{axpy_into, sq_dist, RngStream, Vec64};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("constants unavailable for this objective")]
    ConstantsUnavailable,
    #[error(transparent)]
    Num(#[from] crate::numkit::NumError),
}

/// The global model x = [x_c; x_s] as two parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitParams {
    pub client_block: Vec64,
    pub server_block: Vec64,
}

impl SplitParams {
    pub fn concat(&self) -> Vec64 {
        self.client_block.concat(&self.server_block)
    }

    pub fn from_full(full: &Vec64, client_len: usize) -> Self {
        let (c, s) = full.split_at(client_len);
        Self { client_block: c, server_block: s }
    }

    pub fn dim(&self) -> usize {
        self.client_block.len() + self.server_block.len()
    }

    /// Blockwise squared distances; the full distance is defined as the sum
    /// of the two blocks, so the decomposition identity holds bit-exactly.
    pub fn block_sq_dists(&self, other: &SplitParams) -> Result<(f64, f64, f64), ModelError> {
        let dc = sq_dist(&self.client_block, &other.client_block)?;
        let ds = sq_dist(&self.server_block, &other.server_block)?;
        Ok((dc, ds, dc + ds))
    }
}

/// Mini-batch: feature rows and scalar targets (regression values, binary
/// labels in {0,1}, or class indices stored as f64).
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Vec64>,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.inputs.len()
    }
}

/// Per-sample cut-layer values sent from client to main server.
#[derive(Debug, Clone)]
pub struct Activation {
    pub per_sample: Vec<Vec64>,
}

impl Activation {
    /// Scalars crossing the wire per batch.
    pub fn scalar_count(&self) -> usize {
        self.per_sample.iter().map(|v| v.len()).sum()
    }
}

/// Per-sample gradients of the mini-batch loss w.r.t. the activation.
#[derive(Debug, Clone)]
pub struct CutGrad {
    pub per_sample: Vec<Vec64>,
}

impl CutGrad {
    pub fn scalar_count(&self) -> usize {
        self.per_sample.iter().map(|v| v.len()).sum()
    }
}

/// The three supported objective families.
///
/// The linear models cut the weight vector at a coordinate boundary; the
/// per-sample activation is the scalar partial score over the client feature
/// slice. The MLP cuts at a layer boundary with tanh hidden units.
#[derive(Debug, Clone)]
pub enum ObjectiveSpec {
    SplitRidge {
        features: Vec<Vec64>,
        targets: Vec<f64>,
        lambda: f64,
        cut: usize,
    },
    SplitLogistic {
        features: Vec<Vec64>,
        labels: Vec<f64>,
        lambda: f64,
        cut: usize,
    },
    SplitMlp {
        features: Vec<Vec64>,
        labels: Vec<f64>,
        widths: Vec<usize>,
        cut: usize,
    },
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Parameter count of one MLP layer block (weights + biases).
fn mlp_layer_params(widths: &[usize], l: usize) -> usize {
    widths[l + 1] * (widths[l] + 1)
}

impl ObjectiveSpec {
    pub fn num_samples(&self) -> usize {
        match self {
            ObjectiveSpec::SplitRidge { features, .. }
            | ObjectiveSpec::SplitLogistic { features, .. }
            | ObjectiveSpec::SplitMlp { features, .. } => features.len(),
        }
    }

    pub fn client_dim(&self) -> usize {
        match self {
            ObjectiveSpec::SplitRidge { cut, .. } | ObjectiveSpec::SplitLogistic { cut, .. } => {
                *cut
            }
            ObjectiveSpec::SplitMlp { widths, cut, .. } => {
                (0..*cut).map(|l| mlp_layer_params(widths, l)).sum()
            }
        }
    }

    pub fn server_dim(&self) -> usize {
        match self {
            ObjectiveSpec::SplitRidge { features, cut, .. }
            | ObjectiveSpec::SplitLogistic { features, cut, .. } => features[0].len() - cut,
            ObjectiveSpec::SplitMlp { widths, cut, .. } => {
                (*cut..widths.len() - 1).map(|l| mlp_layer_params(widths, l)).sum()
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.client_dim() + self.server_dim()
    }

    /// Width of the cut-layer activation for a single sample.
    pub fn cut_width(&self) -> usize {
        match self {
            ObjectiveSpec::SplitRidge { .. } | ObjectiveSpec::SplitLogistic { .. } => 1,
            ObjectiveSpec::SplitMlp { widths, cut, .. } => widths[*cut],
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            ObjectiveSpec::SplitRidge { lambda, .. } | ObjectiveSpec::SplitLogistic { lambda, .. } => {
                *lambda
            }
            ObjectiveSpec::SplitMlp { .. } => 0.0,
        }
    }

    pub fn batch_from_indices(&self, indices: &[usize]) -> Batch {
        let (features, targets): (&Vec<Vec64>, &Vec<f64>) = match self {
            ObjectiveSpec::SplitRidge { features, targets, .. } => (features, targets),
            ObjectiveSpec::SplitLogistic { features, labels, .. } => (features, labels),
            ObjectiveSpec::SplitMlp { features, labels, .. } => (features, labels),
        };
        Batch {
            inputs: indices.iter().map(|&i| features[i].clone()).collect(),
            targets: indices.iter().map(|&i| targets[i]).collect(),
        }
    }

    /// Deterministic initial point: small values from a dedicated stream.
    pub fn init_params(&self, rng: &mut RngStream) -> SplitParams {
        let d = self.dim();
        let scale = 0.5;
        let full = Vec64::new((0..d).map(|_| scale * rng.next_gaussian()).collect())
            .expect("finite init");
        SplitParams::from_full(&full, self.client_dim())
    }

    pub fn zero_params(&self) -> SplitParams {
        SplitParams {
            client_block: Vec64::zeros(self.client_dim()),
            server_block: Vec64::zeros(self.server_dim()),
        }
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected != got {
        Err(ModelError::DimensionMismatch { what, expected, got })
    } else {
        Ok(())
    }
}

/// Client-side forward pass to the cut layer.
pub fn client_forward(
    spec: &ObjectiveSpec,
    x_c: &Vec64,
    batch: &Batch,
) -> Result<Activation, ModelError> {
    check_dim("client block", spec.client_dim(), x_c.len())?;
    match spec {
        ObjectiveSpec::SplitRidge { cut, .. } | ObjectiveSpec::SplitLogistic { cut, .. } => {
            let mut per_sample = Vec::with_capacity(batch.size());
            for row in &batch.inputs {
                let mut s = 0.0;
                for j in 0..*cut {
                    s += x_c.get(j) * row.get(j);
                }
                per_sample.push(Vec64::new(vec![s])?);
            }
            Ok(Activation { per_sample })
        }
        ObjectiveSpec::SplitMlp { widths, cut, .. } => {
            let mut per_sample = Vec::with_capacity(batch.size());
            for row in &batch.inputs {
                let acts = mlp_forward_layers(widths, 0, *cut, x_c, row, true);
                per_sample.push(acts.into_iter().last().expect("cut >= 1"));
            }
            Ok(Activation { per_sample })
        }
    }
}

/// Runs layers [from, to) of the MLP on `input` using the packed params in
/// `block` (layer `from` starts at offset 0). Returns the post-layer
/// activations for each layer in the range. `tanh_all` applies tanh to every
/// layer in the range; the caller leaves the final output layer linear.
fn mlp_forward_layers(
    widths: &[usize],
    from: usize,
    to: usize,
    block: &Vec64,
    input: &Vec64,
    tanh_all: bool,
) -> Vec<Vec64> {
    let last_layer = widths.len() - 2; // index of the output layer
    let mut offset = 0;
    let mut a = input.clone();
    let mut out = Vec::with_capacity(to - from);
    for l in from..to {
        let (rows, cols) = (widths[l + 1], widths[l]);
        let mut z = vec![0.0; rows];
        for r in 0..rows {
            let mut s = block.get(offset + rows * cols + r); // bias
            for c in 0..cols {
                s += block.get(offset + r * cols + c) * a.get(c);
            }
            z[r] = s;
        }
        let apply_tanh = tanh_all || l < last_layer;
        let v: Vec<f64> = if apply_tanh { z.iter().map(|x| x.tanh()).collect() } else { z };
        a = Vec64::new(v).expect("finite activation");
        out.push(a.clone());
        offset += mlp_layer_params(widths, l);
    }
    out
}

/// Backprop through layers [from, to): given d(loss)/d(output of layer to-1),
/// accumulates parameter gradients into `grad` (same packing as the block)
/// and returns d(loss)/d(input of layer from).
///
/// `acts[i]` is the post-activation of layer from+i; `tanh_flags[i]` says
/// whether that layer applied tanh.
fn mlp_backward_layers(
    widths: &[usize],
    from: usize,
    to: usize,
    block: &Vec64,
    input: &Vec64,
    acts: &[Vec64],
    tanh_flags: &[bool],
    upstream: &Vec64,
    grad: &mut Vec64,
) -> Vec64 {
    let offsets: Vec<usize> = {
        let mut v = Vec::with_capacity(to - from);
        let mut off = 0;
        for l in from..to {
            v.push(off);
            off += mlp_layer_params(widths, l);
        }
        v
    };
    let mut da = upstream.clone();
    for (idx, l) in (from..to).enumerate().rev() {
        let (rows, cols) = (widths[l + 1], widths[l]);
        let off = offsets[idx];
        let a_out = &acts[idx];
        let a_in = if idx == 0 { input } else { &acts[idx - 1] };
        // dz = da * tanh'(z) (or da for a linear layer)
        let mut dz = vec![0.0; rows];
        for r in 0..rows {
            let g = if tanh_flags[idx] {
                let t = a_out.get(r);
                da.get(r) * (1.0 - t * t)
            } else {
                da.get(r)
            };
            dz[r] = g;
        }
        for r in 0..rows {
            for c in 0..cols {
                let i = off + r * cols + c;
                grad.set(i, grad.get(i) + dz[r] * a_in.get(c));
            }
            let i = off + rows * cols + r;
            grad.set(i, grad.get(i) + dz[r]);
        }
        let mut din = vec![0.0; cols];
        for c in 0..cols {
            let mut s = 0.0;
            for r in 0..rows {
                s += block.get(off + r * cols + c) * dz[r];
            }
            din[c] = s;
        }
        da = Vec64::new(din).expect("finite backprop");
    }
    da
}

fn softmax(logits: &Vec64) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Server-side loss, server-block gradient, and cut-layer gradient for one
/// mini-batch. The reported loss carries the server's own regularization
/// share (lambda/2)||x_s||^2.
pub fn server_loss_and_grads(
    spec: &ObjectiveSpec,
    x_s: &Vec64,
    act: &Activation,
    batch: &Batch,
) -> Result<(f64, Vec64, CutGrad), ModelError> {
    check_dim("server block", spec.server_dim(), x_s.len())?;
    check_dim("activation count", batch.size(), act.per_sample.len())?;
    let b = batch.size() as f64;
    match spec {
        ObjectiveSpec::SplitRidge { cut, lambda, .. } => {
            let mut loss = 0.0;
            let mut g_s = Vec64::zeros(x_s.len());
            let mut cut_grads = Vec::with_capacity(batch.size());
            for (k, row) in batch.inputs.iter().enumerate() {
                let mut score = act.per_sample[k].get(0);
                for j in 0..x_s.len() {
                    score += x_s.get(j) * row.get(cut + j);
                }
                let resid = score - batch.targets[k];
                loss += 0.5 * resid * resid / b;
                let cg = resid / b;
                for j in 0..x_s.len() {
                    g_s.set(j, g_s.get(j) + cg * row.get(cut + j));
                }
                cut_grads.push(Vec64::new(vec![cg])?);
            }
            for j in 0..x_s.len() {
                loss += 0.5 * lambda * x_s.get(j) * x_s.get(j);
                g_s.set(j, g_s.get(j) + lambda * x_s.get(j));
            }
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss);
            }
            Ok((loss, g_s, CutGrad { per_sample: cut_grads }))
        }
        ObjectiveSpec::SplitLogistic { cut, lambda, .. } => {
            let mut loss = 0.0;
            let mut g_s = Vec64::zeros(x_s.len());
            let mut cut_grads = Vec::with_capacity(batch.size());
            for (k, row) in batch.inputs.iter().enumerate() {
                let mut score = act.per_sample[k].get(0);
                for j in 0..x_s.len() {
                    score += x_s.get(j) * row.get(cut + j);
                }
                let y = batch.targets[k];
                // log(1 + e^-|z|)-style stable cross-entropy
                let ce = score.max(0.0) - score * y + (-score.abs()).exp().ln_1p();
                loss += ce / b;
                let cg = (sigmoid(score) - y) / b;
                for j in 0..x_s.len() {
                    g_s.set(j, g_s.get(j) + cg * row.get(cut + j));
                }
                cut_grads.push(Vec64::new(vec![cg])?);
            }
            for j in 0..x_s.len() {
                loss += 0.5 * lambda * x_s.get(j) * x_s.get(j);
                g_s.set(j, g_s.get(j) + lambda * x_s.get(j));
            }
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss);
            }
            Ok((loss, g_s, CutGrad { per_sample: cut_grads }))
        }
        ObjectiveSpec::SplitMlp { widths, cut, .. } => {
            let num_layers = widths.len() - 1;
            let mut loss = 0.0;
            let mut g_s = Vec64::zeros(x_s.len());
            let mut cut_grads = Vec::with_capacity(batch.size());
            for (k, _) in batch.inputs.iter().enumerate() {
                let h = &act.per_sample[k];
                check_dim("cut width", widths[*cut], h.len())?;
                let acts = mlp_forward_layers(widths, *cut, num_layers, x_s, h, false);
                let logits = acts.last().expect("server has >= 1 layer");
                let p = softmax(logits);
                let y = batch.targets[k] as usize;
                loss += -(p[y].max(1e-300)).ln() / b;
                let dlogits = Vec64::new(
                    (0..p.len())
                        .map(|j| (p[j] - if j == y { 1.0 } else { 0.0 }) / b)
                        .collect(),
                )?;
                let tanh_flags: Vec<bool> =
                    (*cut..num_layers).map(|l| l < num_layers - 1).collect();
                let dh = mlp_backward_layers(
                    widths, *cut, num_layers, x_s, h, &acts, &tanh_flags, &dlogits, &mut g_s,
                );
                cut_grads.push(dh);
            }
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss);
            }
            Ok((loss, g_s, CutGrad { per_sample: cut_grads }))
        }
    }
}

/// Client-side chain rule: gradient of the mini-batch loss w.r.t. x_c given
/// the cut-layer gradients from the matching forward pass.
pub fn client_backward(
    spec: &ObjectiveSpec,
    x_c: &Vec64,
    batch: &Batch,
    cut_grad: &CutGrad,
) -> Result<Vec64, ModelError> {
    check_dim("client block", spec.client_dim(), x_c.len())?;
    check_dim("cut grad count", batch.size(), cut_grad.per_sample.len())?;
    match spec {
        ObjectiveSpec::SplitRidge { cut, lambda, .. }
        | ObjectiveSpec::SplitLogistic { cut, lambda, .. } => {
            let mut g_c = Vec64::zeros(x_c.len());
            for (k, row) in batch.inputs.iter().enumerate() {
                let cg = cut_grad.per_sample[k].get(0);
                for j in 0..*cut {
                    g_c.set(j, g_c.get(j) + cg * row.get(j));
                }
            }
            for j in 0..x_c.len() {
                g_c.set(j, g_c.get(j) + lambda * x_c.get(j));
            }
            Ok(g_c)
        }
        ObjectiveSpec::SplitMlp { widths, cut, .. } => {
            let mut g_c = Vec64::zeros(x_c.len());
            for (k, row) in batch.inputs.iter().enumerate() {
                let acts = mlp_forward_layers(widths, 0, *cut, x_c, row, true);
                let tanh_flags = vec![true; *cut];
                mlp_backward_layers(
                    widths,
                    0,
                    *cut,
                    x_c,
                    row,
                    &acts,
                    &tanh_flags,
                    &cut_grad.per_sample[k],
                    &mut g_c,
                );
            }
            Ok(g_c)
        }
    }
}

/// One full split gradient evaluation on a batch. Returns (loss, g_c, g_s).
/// The reported loss includes both regularization halves.
pub fn split_grad(
    spec: &ObjectiveSpec,
    params: &SplitParams,
    batch: &Batch,
) -> Result<(f64, Vec64, Vec64), ModelError> {
    let act = client_forward(spec, &params.client_block, batch)?;
    let (server_loss, g_s, cut) = server_loss_and_grads(spec, &params.server_block, &act, batch)?;
    let g_c = client_backward(spec, &params.client_block, batch, &cut)?;
    let lambda = spec.lambda();
    let client_reg: f64 = 0.5 * lambda * crate::numkit::sq_norm(&params.client_block);
    Ok((server_loss + client_reg, g_c, g_s))
}

/// Exact full-gradient over the given sample indices (no sampling), as the
/// concatenated [g_c; g_s] vector.
pub fn full_grad(
    spec: &ObjectiveSpec,
    params: &SplitParams,
    indices: &[usize],
) -> Result<Vec64, ModelError> {
    let batch = spec.batch_from_indices(indices);
    let (_, g_c, g_s) = split_grad(spec, params, &batch)?;
    Ok(g_c.concat(&g_s))
}

/// Loss of the objective over the given indices (mean data loss plus both
/// regularization halves).
pub fn loss_at(
    spec: &ObjectiveSpec,
    params: &SplitParams,
    indices: &[usize],
) -> Result<f64, ModelError> {
    let batch = spec.batch_from_indices(indices);
    let (loss, _, _) = split_grad(spec, params, &batch)?;
    Ok(loss)
}

/// Smoothness / strong-convexity constants (S, mu) where analytically
/// available. SplitRidge: extreme eigenvalues of (1/D) X^T X + lambda I.
/// SplitLogistic: S from the 1/4 sigmoid-curvature bound, mu = lambda.
pub fn convexity_constants(spec: &ObjectiveSpec) -> Result<(f64, Option<f64>), ModelError> {
    match spec {
        ObjectiveSpec::SplitRidge { features, lambda, .. } => {
            let m = normal_matrix(features, 1.0, *lambda);
            let (s, mu) = extreme_eigenvalues(&m);
            Ok((s, Some(mu)))
        }
        ObjectiveSpec::SplitLogistic { features, lambda, .. } => {
            let m = normal_matrix(features, 0.25, *lambda);
            let (s, _) = extreme_eigenvalues(&m);
            Ok((s, Some(*lambda)))
        }
        ObjectiveSpec::SplitMlp { .. } => Err(ModelError::ConstantsUnavailable),
    }
}

/// (scale/D) X^T X + lambda I as a dense row-major d x d matrix.
fn normal_matrix(features: &[Vec64], scale: f64, lambda: f64) -> Vec<Vec<f64>> {
    let d = features[0].len();
    let inv_d = scale / features.len() as f64;
    let mut m = vec![vec![0.0; d]; d];
    for row in features {
        for i in 0..d {
            for j in 0..d {
                m[i][j] += inv_d * row.get(i) * row.get(j);
            }
        }
    }
    for (i, r) in m.iter_mut().enumerate() {
        r[i] += lambda;
    }
    m
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Power iteration to relative tolerance 1e-8, with a spectral shift to reach
/// the smallest eigenvalue. Symmetric PSD input.
fn extreme_eigenvalues(m: &[Vec<f64>]) -> (f64, f64) {
    let lambda_max = power_iteration(m, None);
    let lambda_min = lambda_max - power_iteration(m, Some(lambda_max));
    (lambda_max, lambda_min.max(0.0))
}

fn power_iteration(m: &[Vec<f64>], shift: Option<f64>) -> f64 {
    let d = m.len();
    let mut rng = crate::numkit::derive_stream(0x5F1A_B007, "power-iter", d as u64);
    let mut v: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let apply = |v: &[f64]| -> Vec<f64> {
        let mv = mat_vec(m, v);
        match shift {
            // (s I - M) v
            Some(s) => v.iter().zip(&mv).map(|(x, y)| s * x - y).collect(),
            None => mv,
        }
    };
    let mut eig = 0.0;
    for _ in 0..100_000 {
        let w = apply(&v);
        let new_eig: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / wn).collect();
        if (new_eig - eig).abs() <= 1e-8 * new_eig.abs().max(1e-300) {
            return new_eig;
        }
        eig = new_eig;
    }
    eig
}

/// In-place SGD step on a block: x -= eta * g.
pub fn sgd_step(x: &mut Vec64, eta: f64, g: &Vec64) -> Result<(), ModelError> {
    axpy_into(x, -eta, g)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::derive_stream;

    fn tiny_ridge() -> ObjectiveSpec {
        ObjectiveSpec::SplitRidge {
            features: vec![Vec64::new(vec![3.0, 4.0, 1.0]).unwrap()],
            targets: vec![2.0],
            lambda: 0.0,
            cut: 2,
        }
    }

    #[test]
    fn ridge_forward_is_partial_dot() {
        let spec = tiny_ridge();
        let x_c = Vec64::new(vec![1.0, 2.0]).unwrap();
        let batch = spec.batch_from_indices(&[0]);
        let act = client_forward(&spec, &x_c, &batch).unwrap();
        assert_eq!(act.per_sample[0].get(0), 11.0);
    }

    #[test]
    fn logistic_zero_client_gives_zero_activation() {
        let spec = ObjectiveSpec::SplitLogistic {
            features: vec![Vec64::new(vec![1.0, -2.0]).unwrap()],
            labels: vec![1.0],
            lambda: 0.0,
            cut: 1,
        };
        let batch = spec.batch_from_indices(&[0]);
        let act = client_forward(&spec, &Vec64::zeros(1), &batch).unwrap();
        assert_eq!(act.per_sample[0].get(0), 0.0);
    }

    #[test]
    fn ridge_all_zero_inputs_give_zero_loss_and_grads() {
        let spec = ObjectiveSpec::SplitRidge {
            features: vec![Vec64::new(vec![0.0, 0.0]).unwrap()],
            targets: vec![0.0],
            lambda: 0.0,
            cut: 1,
        };
        let batch = spec.batch_from_indices(&[0]);
        let act = client_forward(&spec, &Vec64::zeros(1), &batch).unwrap();
        let (loss, g_s, cut) =
            server_loss_and_grads(&spec, &Vec64::zeros(1), &act, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g_s.as_slice(), &[0.0]);
        assert_eq!(cut.per_sample[0].get(0), 0.0);
    }

    #[test]
    fn logistic_cut_grad_at_zero_is_half_minus_label() {
        let spec = ObjectiveSpec::SplitLogistic {
            features: vec![
                Vec64::new(vec![1.0, 2.0]).unwrap(),
                Vec64::new(vec![-1.0, 0.5]).unwrap(),
            ],
            labels: vec![0.0, 1.0],
            lambda: 0.0,
            cut: 1,
        };
        let batch = spec.batch_from_indices(&[0, 1]);
        let act = client_forward(&spec, &Vec64::zeros(1), &batch).unwrap();
        let (_, _, cut) = server_loss_and_grads(&spec, &Vec64::zeros(1), &act, &batch).unwrap();
        assert_eq!(cut.per_sample[0].get(0), (0.5 - 0.0) / 2.0);
        assert_eq!(cut.per_sample[1].get(0), (0.5 - 1.0) / 2.0);
    }

    #[test]
    fn zero_cut_grad_gives_zero_client_grad() {
        let spec = tiny_ridge();
        let batch = spec.batch_from_indices(&[0]);
        let cg = CutGrad { per_sample: vec![Vec64::zeros(1)] };
        let g_c = client_backward(&spec, &Vec64::zeros(2), &batch, &cg).unwrap();
        assert_eq!(g_c.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn ridge_split_equals_monolithic_gradient_exactly() {
        // monolithic gradient: (1/b) sum resid * x_i + lambda w, computed
        // independently below
        let spec = ObjectiveSpec::SplitRidge {
            features: vec![
                Vec64::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
                Vec64::new(vec![-1.0, 0.5, 2.0, -2.0]).unwrap(),
            ],
            targets: vec![1.0, -1.0],
            lambda: 0.3,
            cut: 2,
        };
        let params = SplitParams::from_full(
            &Vec64::new(vec![0.2, -0.4, 0.7, 0.1]).unwrap(),
            2,
        );
        let batch = spec.batch_from_indices(&[0, 1]);
        let (_, g_c, g_s) = split_grad(&spec, &params, &batch).unwrap();
        let split = g_c.concat(&g_s);

        let w = params.concat();
        let mut mono = vec![0.0; 4];
        for (row, &y) in batch.inputs.iter().zip(&batch.targets) {
            let score: f64 = (0..4).map(|j| w.get(j) * row.get(j)).sum();
            let cg = (score - y) / 2.0;
            for j in 0..4 {
                mono[j] += cg * row.get(j);
            }
        }
        for j in 0..4 {
            mono[j] += 0.3 * w.get(j);
        }
        for j in 0..4 {
            assert!(
                (split.get(j) - mono[j]).abs() < 1e-14,
                "coord {j}: {} vs {}",
                split.get(j),
                mono[j]
            );
        }
    }

    #[test]
    fn ridge_full_grad_vanishes_at_normal_equation_solution() {
        // identity-like design so the optimum is solvable by hand:
        // single sample x=1 (1-dim total, cut must leave both sides nonempty,
        // so use 2-dim with orthogonal features)
        let spec = ObjectiveSpec::SplitRidge {
            features: vec![
                Vec64::new(vec![1.0, 0.0]).unwrap(),
                Vec64::new(vec![0.0, 1.0]).unwrap(),
            ],
            targets: vec![2.0, -3.0],
            lambda: 0.0,
            cut: 1,
        };
        // optimum of (1/2D) sum (w_j - y_j)^2 is w = y (diagonal design)
        let params = SplitParams::from_full(&Vec64::new(vec![2.0, -3.0]).unwrap(), 1);
        let g = full_grad(&spec, &params, &[0, 1]).unwrap();
        for j in 0..2 {
            assert!(g.get(j).abs() < 1e-12);
        }
    }

    #[test]
    fn full_grad_is_average_of_singletons() {
        let spec = tiny_spec_multi();
        let params = random_params(&spec, 5);
        let n = spec.num_samples();
        let all: Vec<usize> = (0..n).collect();
        let g_all = full_grad(&spec, &params, &all).unwrap();
        let mut acc = Vec64::zeros(spec.dim());
        for i in 0..n {
            let g_i = full_grad(&spec, &params, &[i]).unwrap();
            acc = crate::numkit::axpy(1.0 / n as f64, &g_i, &acc).unwrap();
        }
        for j in 0..spec.dim() {
            assert!((acc.get(j) - g_all.get(j)).abs() < 1e-12);
        }
    }

    fn tiny_spec_multi() -> ObjectiveSpec {
        let mut rng = derive_stream(3, "test-data", 0);
        let features = (0..6)
            .map(|_| Vec64::new((0..4).map(|_| rng.next_gaussian()).collect()).unwrap())
            .collect();
        let targets = (0..6).map(|_| rng.next_gaussian()).collect();
        ObjectiveSpec::SplitRidge { features, targets, lambda: 0.1, cut: 2 }
    }

    fn random_params(spec: &ObjectiveSpec, seed: u64) -> SplitParams {
        let mut rng = derive_stream(seed, "test-params", 0);
        spec.init_params(&mut rng)
    }

    fn mlp_spec() -> ObjectiveSpec {
        let mut rng = derive_stream(11, "mlp-data", 0);
        let features: Vec<Vec64> = (0..8)
            .map(|_| Vec64::new(vec![rng.next_gaussian(), rng.next_gaussian()]).unwrap())
            .collect();
        let labels: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
        ObjectiveSpec::SplitMlp { features, labels, widths: vec![2, 8, 2], cut: 1 }
    }

    #[test]
    fn mlp_dims() {
        let spec = mlp_spec();
        assert_eq!(spec.client_dim(), 8 * 2 + 8);
        assert_eq!(spec.server_dim(), 2 * 8 + 2);
        assert_eq!(spec.cut_width(), 8);
    }

    #[test]
    fn mlp_grads_match_finite_differences() {
        let spec = mlp_spec();
        let params = random_params(&spec, 17);
        let all: Vec<usize> = (0..spec.num_samples()).collect();
        let g = full_grad(&spec, &params, &all).unwrap();
        let full = params.concat();
        let h = 1e-6;
        for j in 0..full.len() {
            let mut up = full.clone();
            up.set(j, up.get(j) + h);
            let mut dn = full.clone();
            dn.set(j, dn.get(j) - h);
            let lu = loss_at(&spec, &SplitParams::from_full(&up, spec.client_dim()), &all).unwrap();
            let ld = loss_at(&spec, &SplitParams::from_full(&dn, spec.client_dim()), &all).unwrap();
            let fd = (lu - ld) / (2.0 * h);
            let denom = g.get(j).abs().max(1.0);
            assert!(
                (fd - g.get(j)).abs() / denom < 1e-5,
                "coord {j}: fd {fd} vs grad {}",
                g.get(j)
            );
        }
    }

    #[test]
    fn convexity_constants_diagonal_example() {
        // X^T X / D = diag(1, 4) with lambda = 0.5 -> S = 4.5, mu = 1.5
        let features = vec![
            Vec64::new(vec![2.0_f64.sqrt(), 0.0]).unwrap(),
            Vec64::new(vec![0.0, 8.0_f64.sqrt()]).unwrap(),
        ];
        let spec = ObjectiveSpec::SplitRidge {
            features,
            targets: vec![0.0, 0.0],
            lambda: 0.5,
            cut: 1,
        };
        let (s, mu) = convexity_constants(&spec).unwrap();
        assert!((s - 4.5).abs() < 1e-6, "S = {s}");
        assert!((mu.unwrap() - 1.5).abs() < 1e-6, "mu = {:?}", mu);
    }

    #[test]
    fn convexity_constants_identity_design() {
        // X = I (D = d): X^T X / D = (1/D) I, so S = mu = 1/D
        let d = 3;
        let features: Vec<Vec64> = (0..d)
            .map(|i| {
                Vec64::new((0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).unwrap()
            })
            .collect();
        let spec = ObjectiveSpec::SplitRidge {
            features,
            targets: vec![0.0; d],
            lambda: 0.0,
            cut: 1,
        };
        let (s, mu) = convexity_constants(&spec).unwrap();
        assert!((s - 1.0 / d as f64).abs() < 1e-9);
        assert!((mu.unwrap() - 1.0 / d as f64).abs() < 1e-9);
    }

    #[test]
    fn mlp_constants_unavailable() {
        assert!(matches!(
            convexity_constants(&mlp_spec()),
            Err(ModelError::ConstantsUnavailable)
        ));
    }
}
