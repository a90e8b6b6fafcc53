//! Degree-2 factorization machine over per-domain embeddings.
//!
//! For a sample with gathered embeddings `e_1..e_n` (each of length `d`):
//!
//! ```text
//! logit = Σ_i ⟨w_i, e_i⟩ + Σ_{i<j} ⟨v_i, v_j⟩ · ⟨e_i, e_j⟩
//! ŷ     = sigmoid(logit)
//! ∂logit/∂e_i = w_i + Σ_{j≠i} ⟨v_i, v_j⟩ e_j
//! ```
//!
//! `w_i` and `v_i` are per-domain vectors shared by every value of the domain.
//! The interaction term is computed pairwise; `n` is the number of domains,
//! which stays small.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{EncodedSample, FeatureSchema};
use crate::error::{Error, Result};

/// Predictions are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const PREDICTION_CLAMP: f64 = 1e-7;

/// Standard deviation of the zero-mean normal initialisation.
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dim: usize,
    cardinalities: Vec<u32>,
    row_offsets: Vec<usize>,
    /// Embedding table, one row of `dim` per (domain, value).
    pub embeddings: Vec<f64>,
    /// First-order weights `w`, one row per domain.
    pub first_order: Vec<f64>,
    /// Interaction factors `v`, one row per domain.
    pub factors: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(schema: &FeatureSchema, dim: usize) -> Self {
        let cardinalities: Vec<u32> = schema.domains().iter().map(|d| d.cardinality).collect();
        let mut row_offsets = Vec::with_capacity(cardinalities.len());
        let mut rows = 0usize;
        for &c in &cardinalities {
            row_offsets.push(rows);
            rows += c as usize;
        }
        let n = cardinalities.len();
        Self {
            dim,
            cardinalities,
            row_offsets,
            embeddings: vec![0.0; rows * dim],
            first_order: vec![0.0; n * dim],
            factors: vec![0.0; n * dim],
        }
    }

    /// Every entry drawn from N(0, std²).
    pub fn init<R: Rng>(schema: &FeatureSchema, dim: usize, std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(schema, dim);
        let normal = Normal::new(0.0, std).expect("finite std");
        for x in p
            .embeddings
            .iter_mut()
            .chain(p.first_order.iter_mut())
            .chain(p.factors.iter_mut())
        {
            *x = normal.sample(rng);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_domains(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[u32] {
        &self.cardinalities
    }

    pub fn n_rows(&self) -> usize {
        self.embeddings.len() / self.dim
    }

    /// Global embedding row of a (domain, value) pair.
    pub fn row(&self, domain: usize, value: u32) -> usize {
        self.row_offsets[domain] + value as usize
    }

    pub fn embedding(&self, domain: usize, value: u32) -> &[f64] {
        let r = self.row(domain, value);
        &self.embeddings[r * self.dim..(r + 1) * self.dim]
    }

    pub fn embedding_mut(&mut self, domain: usize, value: u32) -> &mut [f64] {
        let r = self.row(domain, value);
        &mut self.embeddings[r * self.dim..(r + 1) * self.dim]
    }

    pub fn w(&self, domain: usize) -> &[f64] {
        &self.first_order[domain * self.dim..(domain + 1) * self.dim]
    }

    pub fn v(&self, domain: usize) -> &[f64] {
        &self.factors[domain * self.dim..(domain + 1) * self.dim]
    }

    pub fn matches(&self, schema: &FeatureSchema) -> bool {
        self.cardinalities.len() == schema.n_domains()
            && self
                .cardinalities
                .iter()
                .zip(schema.domains())
                .all(|(&c, d)| c == d.cardinality)
    }

    pub fn check_finite(&self) -> Result<()> {
        for i in 0..self.n_domains() {
            if !all_finite(self.w(i)) || !all_finite(self.v(i)) {
                return Err(Error::NonFinite {
                    domain: i,
                    what: "domain weights",
                });
            }
            let start = self.row_offsets[i] * self.dim;
            let end = start + self.cardinalities[i] as usize * self.dim;
            if !all_finite(&self.embeddings[start..end]) {
                return Err(Error::NonFinite {
                    domain: i,
                    what: "embedding",
                });
            }
        }
        Ok(())
    }
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Additive per-domain deltas applied to the gathered embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    dim: usize,
    deltas: Vec<f64>,
}

impl Perturbation {
    pub fn zeros(n_domains: usize, dim: usize) -> Self {
        Self {
            dim,
            deltas: vec![0.0; n_domains * dim],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == dim), "ragged perturbation");
        Self {
            dim,
            deltas: rows.concat(),
        }
    }

    pub fn n_domains(&self) -> usize {
        self.deltas.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self, domain: usize) -> &[f64] {
        &self.deltas[domain * self.dim..(domain + 1) * self.dim]
    }

    pub fn delta_mut(&mut self, domain: usize) -> &mut [f64] {
        &mut self.deltas[domain * self.dim..(domain + 1) * self.dim]
    }

    pub fn norm(&self, domain: usize) -> f64 {
        norm(self.delta(domain))
    }
}

/// Everything `forward` computed for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    dim: usize,
    n: usize,
    /// Gathered (and perturbed, if a delta was given) embeddings.
    embeddings: Vec<f64>,
    /// ⟨v_i, v_j⟩, row-major n×n with zero diagonal.
    pair_weights: Vec<f64>,
    /// ∂logit/∂e_i for every domain.
    logit_grads: Vec<f64>,
    pub logit: f64,
    pub prediction: f64,
}

impl ForwardTrace {
    pub fn n_domains(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn pair_weight(&self, i: usize, j: usize) -> f64 {
        self.pair_weights[i * self.n + j]
    }

    /// Cached ∂logit/∂e_i.
    pub fn logit_grad(&self, i: usize) -> &[f64] {
        &self.logit_grads[i * self.dim..(i + 1) * self.dim]
    }

    /// ∂L/∂logit of the cross-entropy for this trace.
    pub fn residual(&self, label: u8) -> f64 {
        self.prediction - label as f64
    }
}

/// Score one sample, optionally with per-domain embedding deltas.
pub fn forward(
    sample: &EncodedSample,
    params: &ModelParams,
    perturbation: Option<&Perturbation>,
) -> Result<ForwardTrace> {
    let n = params.n_domains();
    let dim = params.dim;
    debug_assert_eq!(sample.values.len(), n);
    let mut embeddings = Vec::with_capacity(n * dim);
    for (i, &v) in sample.values.iter().enumerate() {
        let row = params.embedding(i, v);
        if !all_finite(row) {
            return Err(Error::NonFinite {
                domain: i,
                what: "embedding",
            });
        }
        match perturbation {
            None => embeddings.extend_from_slice(row),
            Some(p) => {
                let delta = p.delta(i);
                if !all_finite(delta) {
                    return Err(Error::NonFinite {
                        domain: i,
                        what: "perturbation",
                    });
                }
                embeddings.extend(row.iter().zip(delta).map(|(e, d)| e + d));
            }
        }
    }
    for i in 0..n {
        if !all_finite(params.w(i)) || !all_finite(params.v(i)) {
            return Err(Error::NonFinite {
                domain: i,
                what: "domain weights",
            });
        }
    }

    let mut pair_weights = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let p = dot(params.v(i), params.v(j));
            pair_weights[i * n + j] = p;
            pair_weights[j * n + i] = p;
        }
    }

    let e = |i: usize| &embeddings[i * dim..(i + 1) * dim];
    let mut logit = 0.0;
    for i in 0..n {
        logit += dot(params.w(i), e(i));
        for j in i + 1..n {
            logit += pair_weights[i * n + j] * dot(e(i), e(j));
        }
    }

    let mut logit_grads = vec![0.0; n * dim];
    for i in 0..n {
        interaction_gradient(
            i,
            n,
            params.w(i),
            &pair_weights,
            &embeddings,
            &mut logit_grads[i * dim..(i + 1) * dim],
        );
    }

    Ok(ForwardTrace {
        dim,
        n,
        embeddings,
        pair_weights,
        logit_grads,
        logit,
        prediction: sigmoid(logit),
    })
}

/// out = w_i + Σ_{j≠i} P_ij e_j
fn interaction_gradient(
    i: usize,
    n: usize,
    w_i: &[f64],
    pair_weights: &[f64],
    embeddings: &[f64],
    out: &mut [f64],
) {
    let dim = out.len();
    out.copy_from_slice(w_i);
    for j in 0..n {
        if j == i {
            continue;
        }
        let p = pair_weights[i * n + j];
        for (o, x) in out.iter_mut().zip(&embeddings[j * dim..(j + 1) * dim]) {
            *o += p * x;
        }
    }
}

/// Cross-entropy of a probability against a binary label, with clamping.
pub fn cross_entropy(prediction: f64, label: u8) -> f64 {
    let p = prediction.clamp(PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn loss(trace: &ForwardTrace, label: u8) -> f64 {
    cross_entropy(trace.prediction, label)
}

/// ∂logit/∂e_i = w_i + Σ_{j≠i} ⟨v_i, v_j⟩ e_j, recomputed from the trace's
/// embeddings and the current parameters.
pub fn grad_logit_wrt_embedding(trace: &ForwardTrace, params: &ModelParams, i: usize) -> Vec<f64> {
    let mut out = vec![0.0; trace.dim];
    interaction_gradient(
        i,
        trace.n,
        params.w(i),
        &trace.pair_weights,
        &trace.embeddings,
        &mut out,
    );
    out
}

/// Gradients of one sample's loss, for the rows it touched.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub dim: usize,
    /// Global embedding row touched by each domain.
    pub rows: Vec<usize>,
    /// ∂L/∂Θ for each touched row, domain-major.
    pub embeddings: Vec<f64>,
    pub first_order: Vec<f64>,
    pub factors: Vec<f64>,
}

impl ParamGradients {
    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn w(&self, i: usize) -> &[f64] {
        &self.first_order[i * self.dim..(i + 1) * self.dim]
    }

    pub fn v(&self, i: usize) -> &[f64] {
        &self.factors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Chain rule through cross-entropy ∘ sigmoid ∘ FM, with dL/dlogit = ŷ − y.
pub fn backward(trace: &ForwardTrace, label: u8, sample: &EncodedSample, params: &ModelParams) -> ParamGradients {
    let n = trace.n;
    let dim = trace.dim;
    let r = trace.residual(label);
    let rows = sample
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| params.row(i, v))
        .collect();
    let embeddings = trace.logit_grads.iter().map(|g| r * g).collect();
    let first_order = trace.embeddings.iter().map(|e| r * e).collect();

    let mut factors = vec![0.0; n * dim];
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let c = r * dot(trace.embedding(i), trace.embedding(j));
            for (f, vj) in factors[i * dim..(i + 1) * dim].iter_mut().zip(params.v(j)) {
                *f += c * vj;
            }
        }
    }
    ParamGradients {
        dim,
        rows,
        embeddings,
        first_order,
        factors,
    }
}

/// Dense accumulator for batch gradients.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    dim: usize,
    pub embeddings: Vec<f64>,
    pub first_order: Vec<f64>,
    pub factors: Vec<f64>,
}

impl GradientBuffer {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            dim: params.dim,
            embeddings: vec![0.0; params.embeddings.len()],
            first_order: vec![0.0; params.first_order.len()],
            factors: vec![0.0; params.factors.len()],
        }
    }

    pub fn clear(&mut self) {
        self.embeddings.fill(0.0);
        self.first_order.fill(0.0);
        self.factors.fill(0.0);
    }

    pub fn add(&mut self, g: &ParamGradients, scale: f64) {
        let dim = self.dim;
        for (i, &row) in g.rows.iter().enumerate() {
            let dst = &mut self.embeddings[row * dim..(row + 1) * dim];
            for (d, s) in dst.iter_mut().zip(g.embedding(i)) {
                *d += scale * s;
            }
        }
        for (d, s) in self.first_order.iter_mut().zip(&g.first_order) {
            *d += scale * s;
        }
        for (d, s) in self.factors.iter_mut().zip(&g.factors) {
            *d += scale * s;
        }
    }
}
