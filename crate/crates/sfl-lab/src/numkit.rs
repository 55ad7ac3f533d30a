//! Deterministic numerical substrate: dense vectors, seeded splittable RNG
//! streams, and fixed-order reductions.
//!
//! Everything here is bit-reproducible across platforms: the generator is
//! SplitMix64 (a counter-based 64-bit mixer with published reference output)
//! and all reductions run in ascending index order.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumError {
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

/// Dense vector of finite f64 values.
///
/// Construction and every arithmetic op used by the training loops reject
/// NaN/Inf, so a run aborts at the first non-finite intermediate instead of
/// silently producing garbage traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Vec64 {
    values: Vec<f64>,
}

impl Vec64 {
    pub fn new(values: Vec<f64>) -> Result<Self, NumError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn set(&mut self, i: usize, v: f64) {
        self.values[i] = v;
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    pub fn concat(&self, other: &Vec64) -> Vec64 {
        let mut v = self.values.clone();
        v.extend_from_slice(&other.values);
        Vec64 { values: v }
    }

    /// Splits at `at`, returning (head, tail).
    pub fn split_at(&self, at: usize) -> (Vec64, Vec64) {
        let (a, b) = self.values.split_at(at);
        (Vec64 { values: a.to_vec() }, Vec64 { values: b.to_vec() })
    }

    fn check_len(&self, other: &Vec64) -> Result<(), NumError> {
        if self.len() != other.len() {
            Err(NumError::LengthMismatch(self.len(), other.len()))
        } else {
            Ok(())
        }
    }
}

/// alpha * x + y, elementwise. All SGD updates reduce to this.
pub fn axpy(alpha: f64, x: &Vec64, y: &Vec64) -> Result<Vec64, NumError> {
    x.check_len(y)?;
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let v = alpha * x.values[i] + y.values[i];
        if !v.is_finite() {
            return Err(NumError::NonFinite(i));
        }
        out.push(v);
    }
    Ok(Vec64 { values: out })
}

/// In-place x += alpha * g. Errors leave x unspecified but finite entries.
pub fn axpy_into(x: &mut Vec64, alpha: f64, g: &Vec64) -> Result<(), NumError> {
    x.check_len(g)?;
    for i in 0..g.len() {
        let v = x.values[i] + alpha * g.values[i];
        if !v.is_finite() {
            return Err(NumError::NonFinite(i));
        }
        x.values[i] = v;
    }
    Ok(())
}

/// Squared Euclidean distance, summed in ascending index order.
pub fn sq_dist(x: &Vec64, y: &Vec64) -> Result<f64, NumError> {
    x.check_len(y)?;
    let mut acc = 0.0;
    for i in 0..x.len() {
        let d = x.values[i] - y.values[i];
        acc += d * d;
    }
    Ok(acc)
}

/// Squared norm, ascending index order.
pub fn sq_norm(x: &Vec64) -> f64 {
    let mut acc = 0.0;
    for v in &x.values {
        acc += v * v;
    }
    acc
}

/// Dot product, ascending index order.
pub fn dot(x: &Vec64, y: &Vec64) -> Result<f64, NumError> {
    x.check_len(y)?;
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x.values[i] * y.values[i];
    }
    Ok(acc)
}

pub fn scale(alpha: f64, x: &Vec64) -> Vec64 {
    Vec64 { values: x.values.iter().map(|v| alpha * v).collect() }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A single SplitMix64 stream. Single-owner: concurrency comes from deriving
/// disjoint streams, never from sharing one.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    stream_id: u64,
    /// Cached second output of a Box-Muller pair.
    gauss_spare: Option<f64>,
}

impl RngStream {
    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1), 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound) via rejection, bias-free.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    /// Standard normal draw (Box-Muller).
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(v) = self.gauss_spare.take() {
            return v;
        }
        loop {
            // u1 in (0,1] so ln is finite
            let u1 = 1.0 - self.next_f64();
            let u2 = self.next_f64();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            let (s, c) = theta.sin_cos();
            if (r * c).is_finite() && (r * s).is_finite() {
                self.gauss_spare = Some(r * s);
                return r * c;
            }
        }
    }

    /// Gamma(shape, 1) draw, Marsaglia-Tsang with the shape<1 boost.
    pub fn next_gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0);
        if shape < 1.0 {
            let g = self.next_gamma(shape + 1.0);
            let u = loop {
                let u = self.next_f64();
                if u > 0.0 {
                    break u;
                }
            };
            return g * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.next_gaussian();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = self.next_f64();
            if u < 1.0 - 0.0331 * x * x * x * x {
                return d * v;
            }
            if u > 0.0 && u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Fisher-Yates shuffle of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            p.swap(i, j);
        }
        p
    }
}

/// Derives a deterministic stream from (root_seed, purpose, index).
///
/// Distinct (purpose, index) pairs map to distinct stream ids: the purpose
/// label is folded with an FNV-1a hash and the index is mixed in separately,
/// so collisions require a 64-bit hash collision.
pub fn derive_stream(root_seed: u64, purpose: &str, index: u64) -> RngStream {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in purpose.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    let stream_id = mix64(h ^ mix64(index.wrapping_add(GOLDEN_GAMMA)));
    let state = mix64(root_seed ^ stream_id);
    RngStream { state, stream_id, gauss_spare: None }
}
