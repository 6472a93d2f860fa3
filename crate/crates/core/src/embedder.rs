//! Trainable text encoder and its losses.
//!
//! The encoder is a single linear map over hashed bag-of-words features:
//! `h = W x` with `W` of shape `d_out x d_in`. That keeps the protocol
//! properties that matter here — a shared flat parameter vector, cosine
//! geometry for the contrastive objective, similarity scores for
//! distillation — while every gradient stays hand-derivable.
//!
//! Two losses are provided, both with analytic gradients that are checked
//! against central finite differences in the test suite:
//!
//! * an in-batch contrastive loss over temperature-scaled cosine
//!   similarities (each query's paired chunk is the positive, the other
//!   chunks in the batch are negatives);
//! * a similarity-matching distillation penalty, the mean squared gap
//!   between the local model's per-pair similarity and a frozen teacher's.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::tensor::{Mat64, Vec64};

/// Deterministic hashed bag-of-words featurizer.
///
/// Tokens (single-space separated) are hashed into `d_in` buckets with a
/// seeded FNV-1a, counts accumulated, and the vector L2-normalized. Empty
/// text yields the zero vector, which callers treat as degenerate.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    d_in: usize,
    hash_seed: u64,
}

impl FeatureExtractor {
    pub fn new(d_in: usize, hash_seed: u64) -> Result<Self> {
        if d_in == 0 {
            return Err(Error::Config("feature dimension must be >= 1".into()));
        }
        Ok(Self { d_in, hash_seed })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    fn bucket(&self, token: &str) -> usize {
        // FNV-1a, seed folded into the offset basis. Stable across builds.
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ self.hash_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (h % self.d_in as u64) as usize
    }

    pub fn featurize(&self, text: &str) -> Vec64 {
        let mut counts = vec![0.0f64; self.d_in];
        let mut any = false;
        for token in text.split(' ') {
            if token.is_empty() {
                continue;
            }
            counts[self.bucket(token)] += 1.0;
            any = true;
        }
        if any {
            let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in &mut counts {
                    *v /= norm;
                }
            }
        }
        Vec64::new(counts).expect("normalized counts are finite")
    }
}

/// The trainable parameters: a dense `d_out x d_in` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    w: Mat64,
}

impl ModelParams {
    pub fn new(w: Mat64) -> Self {
        Self { w }
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w.rows()
    }

    pub fn weights(&self) -> &Mat64 {
        &self.w
    }

    /// Uniform init in `[-scale, scale]`, deterministic in the seed.
    /// A zero scale yields the zero matrix.
    pub fn seeded_uniform(d_out: usize, d_in: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = (0..d_out * d_in)
            .map(|_| {
                if scale > 0.0 {
                    rng.gen_range(-scale..scale)
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            w: Mat64::new(d_out, d_in, data).expect("uniform draws are finite"),
        }
    }

    /// Row-major flat copy of the weights.
    pub fn flatten(&self) -> Vec64 {
        Vec64::new(self.w.as_slice().to_vec()).expect("weights are finite")
    }

    /// Rebuilds params from a row-major flat vector.
    pub fn from_flat(d_out: usize, d_in: usize, flat: &Vec64) -> Result<Self> {
        Ok(Self {
            w: Mat64::new(d_out, d_in, flat.as_slice().to_vec())?,
        })
    }

    /// Linear forward pass `h = W x`.
    pub fn embed(&self, x: &Vec64) -> Result<Vec64> {
        self.w.matvec(x)
    }

    /// Serializes as `{"d_in":..,"d_out":..,"w":[..]}` with every weight
    /// printed at 17 significant digits, so the bytes round-trip exactly
    /// and are stable across writers.
    pub fn to_json(&self) -> String {
        let mut out = String::with_capacity(32 + self.w.as_slice().len() * 26);
        let _ = write!(out, "{{\"d_in\":{},\"d_out\":{},\"w\":[", self.d_in(), self.d_out());
        for (i, v) in self.w.as_slice().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push_str("]}");
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Wire {
            d_in: usize,
            d_out: usize,
            w: Vec<f64>,
        }
        let wire: Wire = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("bad model params JSON: {e}")))?;
        Ok(Self {
            w: Mat64::new(wire.d_out, wire.d_in, wire.w)?,
        })
    }
}

/// Aligned query/chunk feature vectors for one mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    queries: Vec<Vec64>,
    chunks: Vec<Vec64>,
}

impl Batch {
    pub fn new(queries: Vec<Vec64>, chunks: Vec<Vec64>) -> Result<Self> {
        if queries.len() != chunks.len() {
            return Err(Error::Dimension {
                op: "Batch::new",
                left: queries.len(),
                right: chunks.len(),
            });
        }
        if queries.is_empty() {
            return Err(Error::Config("batch must contain at least one pair".into()));
        }
        Ok(Self { queries, chunks })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn queries(&self) -> &[Vec64] {
        &self.queries
    }

    pub fn chunks(&self) -> &[Vec64] {
        &self.chunks
    }
}

/// Per-pair similarity scores `z_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    values: Vec<f64>,
}

impl SimRow {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Embedded batch with cached norms; all vectors verified nonzero.
struct Embedded {
    hq: Vec<Vec64>,
    hc: Vec<Vec64>,
    nq: Vec<f64>,
    nc: Vec<f64>,
}

fn embed_batch(params: &ModelParams, batch: &Batch) -> Result<Embedded> {
    let embed_all = |xs: &[Vec64], side: &str| -> Result<(Vec<Vec64>, Vec<f64>)> {
        let mut hs = Vec::with_capacity(xs.len());
        let mut ns = Vec::with_capacity(xs.len());
        for (i, x) in xs.iter().enumerate() {
            let h = params.embed(x)?;
            let n = h.l2_norm();
            if n == 0.0 {
                return Err(Error::Degenerate {
                    op: "embed_batch",
                    detail: format!("zero-norm {side} embedding at batch index {i}"),
                });
            }
            hs.push(h);
            ns.push(n);
        }
        Ok((hs, ns))
    };
    let (hq, nq) = embed_all(batch.queries(), "query")?;
    let (hc, nc) = embed_all(batch.chunks(), "chunk")?;
    Ok(Embedded { hq, hc, nq, nc })
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// Full similarity matrix `s[i][j] = cos(h_i^q, h_j^c)`.
fn sim_matrix(e: &Embedded) -> Vec<Vec<f64>> {
    let n = e.hq.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let d = e.hq[i].dot(&e.hc[j]).expect("embeddings share d_out");
            s[i][j] = d / (e.nq[i] * e.nc[j]);
        }
    }
    s
}

/// Per-pair cosine similarities `z_i = cos(W q_i, W c_i)`.
pub fn pair_similarities(params: &ModelParams, batch: &Batch) -> Result<SimRow> {
    let e = embed_batch(params, batch)?;
    let values = (0..batch.len())
        .map(|i| {
            let d = e.hq[i].dot(&e.hc[i]).expect("embeddings share d_out");
            d / (e.nq[i] * e.nc[i])
        })
        .collect();
    Ok(SimRow::new(values))
}

/// In-batch contrastive loss over temperature-scaled cosine similarities.
///
/// `L = -(1/N) sum_i log( exp(s_ii/tau) / sum_j exp(s_ij/tau) )`, computed
/// via a shifted log-sum-exp. Always >= 0; bounded by `ln N + 2/tau`.
pub fn infonce_loss(params: &ModelParams, batch: &Batch, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let e = embed_batch(params, batch)?;
    let s = sim_matrix(&e);
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let m = s[i].iter().map(|v| v / tau).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + s[i].iter().map(|v| (v / tau - m).exp()).sum::<f64>().ln();
        total += lse - s[i][i] / tau;
    }
    Ok(total / n as f64)
}

/// Adds `coeff * (u ⊗ x)` into the row-major flat gradient.
fn add_outer(grad: &mut [f64], u: &Vec64, x: &Vec64, d_in: usize) {
    let us = u.as_slice();
    let xs = x.as_slice();
    for (r, &ur) in us.iter().enumerate() {
        if ur == 0.0 {
            continue;
        }
        let row = &mut grad[r * d_in..(r + 1) * d_in];
        for (slot, &xv) in row.iter_mut().zip(xs) {
            *slot += ur * xv;
        }
    }
}

/// Gradient of a cosine `s = cos(u, v)` with respect to `u`:
/// `v/(|u||v|) - s * u/|u|^2`, scaled by `coeff` and accumulated into `acc`.
fn add_cosine_partial(acc: &mut [f64], coeff: f64, s: f64, u: &Vec64, v: &Vec64, nu: f64, nv: f64) {
    let inv_uv = 1.0 / (nu * nv);
    let self_term = s / (nu * nu);
    for ((slot, &uv), &vv) in acc.iter_mut().zip(u.as_slice()).zip(v.as_slice()) {
        *slot += coeff * (vv * inv_uv - self_term * uv);
    }
}

/// Analytic gradient of [`infonce_loss`] with respect to the flattened
/// (row-major) weights.
pub fn infonce_grad(params: &ModelParams, batch: &Batch, tau: f64) -> Result<Vec64> {
    check_tau(tau)?;
    let e = embed_batch(params, batch)?;
    let s = sim_matrix(&e);
    let n = batch.len();
    let d_out = params.d_out();
    let d_in = params.d_in();
    let mut grad = vec![0.0f64; d_out * d_in];

    // softmax rows p_ij over s_ij / tau
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        let m = s[i].iter().map(|v| v / tau).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..n {
            let w = (s[i][j] / tau - m).exp();
            p[i][j] = w;
            denom += w;
        }
        for v in &mut p[i] {
            *v /= denom;
        }
    }

    let scale = 1.0 / (n as f64 * tau);
    // dL/ds_ij = scale * (p_ij - delta_ij); chain through both cosine args.
    for i in 0..n {
        let mut dh = vec![0.0; d_out];
        for j in 0..n {
            let a = scale * (p[i][j] - f64::from(u8::from(i == j)));
            if a == 0.0 {
                continue;
            }
            add_cosine_partial(&mut dh, a, s[i][j], &e.hq[i], &e.hc[j], e.nq[i], e.nc[j]);
        }
        let dh = Vec64::new(dh).expect("finite partials");
        add_outer(&mut grad, &dh, &batch.queries()[i], d_in);
    }
    for j in 0..n {
        let mut dg = vec![0.0; d_out];
        for i in 0..n {
            let a = scale * (p[i][j] - f64::from(u8::from(i == j)));
            if a == 0.0 {
                continue;
            }
            add_cosine_partial(&mut dg, a, s[i][j], &e.hc[j], &e.hq[i], e.nc[j], e.nq[i]);
        }
        let dg = Vec64::new(dg).expect("finite partials");
        add_outer(&mut grad, &dg, &batch.chunks()[j], d_in);
    }

    Vec64::new(grad)
}

/// Mean squared gap between local and teacher per-pair similarities:
/// `(1/N) sum_i (z_i^l - z_i^g)^2`.
pub fn kd_loss(z_local: &SimRow, z_global: &SimRow) -> Result<f64> {
    if z_local.len() != z_global.len() {
        return Err(Error::Dimension {
            op: "kd_loss",
            left: z_local.len(),
            right: z_global.len(),
        });
    }
    if z_local.is_empty() {
        return Err(Error::Config("kd_loss needs at least one pair".into()));
    }
    let n = z_local.len() as f64;
    Ok(z_local
        .values()
        .iter()
        .zip(z_global.values())
        .map(|(l, g)| (l - g) * (l - g))
        .sum::<f64>()
        / n)
}

/// Analytic gradient of [`kd_loss`] with respect to the local weights; the
/// teacher's similarities are treated as constants.
pub fn kd_grad(
    params_local: &ModelParams,
    params_global: &ModelParams,
    batch: &Batch,
) -> Result<Vec64> {
    let z_global = pair_similarities(params_global, batch)?;
    let e = embed_batch(params_local, batch)?;
    let n = batch.len();
    let d_out = params_local.d_out();
    let d_in = params_local.d_in();
    let mut grad = vec![0.0f64; d_out * d_in];

    for i in 0..n {
        let z = e.hq[i].dot(&e.hc[i]).expect("embeddings share d_out") / (e.nq[i] * e.nc[i]);
        let coeff = 2.0 * (z - z_global.values()[i]) / n as f64;
        if coeff == 0.0 {
            continue;
        }
        let mut dh = vec![0.0; d_out];
        add_cosine_partial(&mut dh, coeff, z, &e.hq[i], &e.hc[i], e.nq[i], e.nc[i]);
        let dh = Vec64::new(dh).expect("finite partials");
        add_outer(&mut grad, &dh, &batch.queries()[i], d_in);

        let mut dg = vec![0.0; d_out];
        add_cosine_partial(&mut dg, coeff, z, &e.hc[i], &e.hq[i], e.nc[i], e.nq[i]);
        let dg = Vec64::new(dg).expect("finite partials");
        add_outer(&mut grad, &dg, &batch.chunks()[i], d_in);
    }

    Vec64::new(grad)
}

/// One SGD step on `infonce + lambda_kd * kd` with a frozen teacher:
/// `W <- W - eta * (grad_infonce + lambda_kd * grad_kd)`.
pub fn combined_step(
    params: &ModelParams,
    teacher: &ModelParams,
    batch: &Batch,
    tau: f64,
    lambda_kd: f64,
    eta: f64,
) -> Result<ModelParams> {
    if lambda_kd < 0.0 {
        return Err(Error::Config(format!(
            "lambda_kd must be >= 0, got {lambda_kd}"
        )));
    }
    if eta < 0.0 {
        return Err(Error::Config(format!("learning rate must be >= 0, got {eta}")));
    }
    if eta == 0.0 {
        return Ok(params.clone());
    }
    let g_nce = infonce_grad(params, batch, tau)?;
    let step = if lambda_kd == 0.0 {
        g_nce
    } else {
        let g_kd = kd_grad(params, teacher, batch)?;
        g_nce.axpy(lambda_kd, &g_kd)?
    };
    let new_flat = params.flatten().axpy(-eta, &step)?;
    ModelParams::from_flat(params.d_out(), params.d_in(), &new_flat)
}
