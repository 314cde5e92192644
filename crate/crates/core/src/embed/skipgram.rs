use rand::Rng;
use serde::{Deserialize, Serialize};

use super::alias::AliasTable;
use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramParams {
    pub dimension: usize,
    /// Maximum context distance. Each centre samples an effective window
    /// uniformly from `1..=window`, as word2vec does.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to `min_learning_rate`.
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramParams {
    fn default() -> Self {
        SkipGramParams {
            dimension: 128,
            window: 10,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_learning_rate: 0.0001,
            seed: 1,
        }
    }
}

impl SkipGramParams {
    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 || self.negatives < 1 || self.window < 1 || self.epochs < 1 {
            return Err(Error::InvalidParam(format!(
                "skip-gram needs dimension >= 2, negatives >= 1, window >= 1, epochs >= 1 \
                 (got {}, {}, {}, {})",
                self.dimension, self.negatives, self.window, self.epochs
            )));
        }
        if !(self.learning_rate > 0.0 && self.min_learning_rate >= 0.0) {
            return Err(Error::InvalidParam("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)), stable for large |x|.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Negative-sampling loss of one (centre, context) pair:
/// `-log σ(u·v) - Σ log σ(-u·n)`.
pub fn pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    -log_sigmoid(dot(center, context))
        - negatives
            .iter()
            .map(|n| log_sigmoid(-dot(center, n)))
            .sum::<f64>()
}

/// Gradients of [`pair_loss`] with respect to the centre, the context and
/// each negative vector.
pub fn pair_gradients(
    center: &[f64],
    context: &[f64],
    negatives: &[&[f64]],
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let g_pos = sigmoid(dot(center, context)) - 1.0;
    let mut grad_center: Vec<f64> = context.iter().map(|v| g_pos * v).collect();
    let grad_context: Vec<f64> = center.iter().map(|u| g_pos * u).collect();
    let mut grad_negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        let g = sigmoid(dot(center, n));
        axpy(g, n, &mut grad_center);
        grad_negs.push(center.iter().map(|u| g * u).collect());
    }
    (grad_center, grad_context, grad_negs)
}

/// Trained vectors, row-major `n_nodes x dimension`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramModel {
    pub dimension: usize,
    pub input: Vec<f64>,
    /// Whether the node occurred in any walk.
    pub seen: Vec<bool>,
}

impl SkipGramModel {
    pub fn vector(&self, node: usize) -> &[f64] {
        &self.input[node * self.dimension..(node + 1) * self.dimension]
    }
}

/// Skip-gram with negative sampling over node sequences.
///
/// Negatives come from the unigram distribution raised to 0.75; a draw equal
/// to the positive context is skipped. Returns the input-side vectors; nodes
/// that never occur in a walk keep a zero vector. Single-threaded and fully
/// determined by `params.seed`.
pub fn train_skipgram(walks: &[Vec<usize>], n_nodes: usize, params: &SkipGramParams) -> Result<SkipGramModel> {
    params.validate()?;
    let mut counts = vec![0u64; n_nodes];
    for w in walks {
        for &n in w {
            if n >= n_nodes {
                return Err(Error::InvalidInput(format!(
                    "walk node {n} outside vocabulary of {n_nodes}"
                )));
            }
            counts[n] += 1;
        }
    }
    let vocab = counts.iter().filter(|&&c| c > 0).count();
    if vocab < 2 {
        return Err(Error::DegenerateVocabulary(format!(
            "walks visit {vocab} distinct node(s)"
        )));
    }
    let noise: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let noise = AliasTable::new(&noise).expect("vocabulary is non-empty");

    let d = params.dimension;
    let mut rng = rng_for(params.seed, &[0x5347_4e53]);
    let mut input = vec![0.0; n_nodes * d];
    for (node, &c) in counts.iter().enumerate() {
        if c > 0 {
            for x in &mut input[node * d..(node + 1) * d] {
                *x = (rng.random::<f64>() - 0.5) / d as f64;
            }
        }
    }
    let mut output = vec![0.0; n_nodes * d];
    let mut grad = vec![0.0; d];

    let tokens_per_epoch: usize = walks.iter().map(Vec::len).sum();
    let total = (tokens_per_epoch * params.epochs) as f64;
    let mut processed = 0usize;
    for _ in 0..params.epochs {
        for walk in walks {
            for (pos, &center) in walk.iter().enumerate() {
                let lr = (params.learning_rate * (1.0 - processed as f64 / total))
                    .max(params.min_learning_rate);
                processed += 1;
                let reach = rng.random_range(1..=params.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(walk.len() - 1);
                for (cpos, &context) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    let u = &input[center * d..(center + 1) * d];
                    grad.fill(0.0);
                    for k in 0..=params.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let v = &mut output[target * d..(target + 1) * d];
                        let g = (label - sigmoid(dot(u, v))) * lr;
                        axpy(g, v, &mut grad);
                        axpy(g, u, v);
                    }
                    axpy(1.0, &grad, &mut input[center * d..(center + 1) * d]);
                }
            }
        }
    }

    Ok(SkipGramModel {
        dimension: d,
        input,
        seen: counts.iter().map(|&c| c > 0).collect(),
    })
}
