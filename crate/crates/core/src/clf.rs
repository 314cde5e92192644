//! Feed-forward stance classifier over embedding vectors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::Stance;
use crate::error::{Error, Result};
use crate::util::rng_for;

const N_CLASSES: usize = 2;
const MODEL_FORMAT: &str = "egostance-mlp";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierHyper {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    /// Drop probability for hidden units during training.
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierHyper {
    fn default() -> Self {
        ClassifierHyper {
            hidden: vec![128, 64],
            batch_size: 128,
            dropout: 0.2,
            learning_rate: 1e-2,
            epochs: 100,
            seed: 0,
        }
    }
}

impl ClassifierHyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidParam(format!(
                "hidden layer sizes {:?} must be non-empty and positive",
                self.hidden
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParam(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `inputs x outputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Full-data loss before the first update.
    pub initial_loss: f64,
    /// Full-data loss (no dropout) after training.
    pub final_loss: f64,
    pub epochs_run: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub meta: TrainingMeta,
}

/// Label and max-softmax confidence for one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub label: Stance,
    pub confidence: f64,
}

/// Per-layer gradients, same shapes as the model.
#[derive(Debug, Clone)]
struct Gradients {
    layers: Vec<Layer>,
}

struct ForwardCache {
    /// Layer inputs after activation and dropout.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    probs: Array2<f64>,
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row /= s;
    }
    logits
}

fn check_labels(x: ArrayView2<'_, f64>, labels: &[Stance]) -> Result<()> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    Ok(())
}

impl Model {
    /// He-initialised network; biases start at zero.
    pub fn init(n_inputs: usize, hidden: &[usize], seed: u64) -> Model {
        let mut rng = rng_for(seed, &[0x494e_4954]);
        let mut sizes = vec![n_inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(N_CLASSES);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let std = (2.0 / w[0] as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((w[0], w[1]), || {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    std * z
                });
                Layer {
                    weights,
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Model {
            layers,
            meta: TrainingMeta {
                initial_loss: f64::NAN,
                final_loss: f64::NAN,
                epochs_run: 0,
                seed,
            },
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs(),
                got: width,
            });
        }
        Ok(())
    }

    fn forward<R: Rng>(&self, x: ArrayView2<'_, f64>, dropout: Option<(f64, &mut R)>) -> ForwardCache {
        let mut dropout = dropout;
        let last = self.layers.len() - 1;
        let mut inputs = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let z = inputs[i].dot(&layer.weights) + &layer.bias;
            if i == last {
                let probs = softmax_rows(z);
                return ForwardCache {
                    inputs,
                    pre,
                    masks,
                    probs,
                };
            }
            let mut a = z.mapv(|v| v.max(0.0));
            let mask = match dropout.as_mut() {
                Some((p, rng)) if *p > 0.0 => {
                    let keep = 1.0 - *p;
                    let m = Array2::from_shape_simple_fn(a.raw_dim(), || {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            masks.push(mask);
            inputs.push(a);
        }
        unreachable!("the output layer returns")
    }

    fn backward(&self, cache: &ForwardCache, labels: &[Stance]) -> Gradients {
        let n = labels.len() as f64;
        let mut delta = cache.probs.clone();
        for (mut row, y) in delta.rows_mut().into_iter().zip(labels) {
            row[y.index()] -= 1.0;
        }
        delta /= n;
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let gw = cache.inputs[i].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weights.t());
                if let Some(m) = &cache.masks[i - 1] {
                    back *= m;
                }
                back.zip_mut_with(&cache.pre[i - 1], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = back;
            }
            grads.push(Layer {
                weights: gw,
                bias: gb,
            });
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    fn cross_entropy(probs: &Array2<f64>, labels: &[Stance]) -> f64 {
        let total: f64 = probs
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(row, y)| -row[y.index()].max(f64::MIN_POSITIVE).ln())
            .sum();
        total / labels.len() as f64
    }

    /// Mean cross-entropy without dropout.
    pub fn loss(&self, x: ArrayView2<'_, f64>, labels: &[Stance]) -> Result<f64> {
        self.check_input(x.ncols())?;
        check_labels(x, labels)?;
        let cache = self.forward::<rand_chacha::ChaCha8Rng>(x, None);
        Ok(Self::cross_entropy(&cache.probs, labels))
    }

    /// Class probabilities, FAVOR first.
    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        Ok(self.forward::<rand_chacha::ChaCha8Rng>(x, None).probs)
    }

    pub fn predict(&self, vector: &[f64]) -> Result<Scored> {
        let x = ArrayView2::from_shape((1, vector.len()), vector)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(self.predict_batch(x)?[0])
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Scored>> {
        Ok(self
            .probabilities(x)?
            .rows()
            .into_iter()
            .map(|p| scored_from_probs(p[0], p[1]))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, &ModelFile::from(self))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_reader(BufReader::new(f))?;
        file.into_model()
            .map_err(|e| e.context(format!("loading {}", path.display())))
    }
}

/// Ties go to FAVOR.
fn scored_from_probs(favor: f64, against: f64) -> Scored {
    if favor >= against {
        Scored {
            label: Stance::Favor,
            confidence: favor,
        }
    } else {
        Scored {
            label: Stance::Against,
            confidence: against,
        }
    }
}

/// Label and confidence straight from a pair of logits.
pub fn score_logits(favor: f64, against: f64) -> Scored {
    let probs = softmax_rows(Array2::from_shape_vec((1, 2), vec![favor, against]).expect("1x2"));
    scored_from_probs(probs[[0, 0]], probs[[0, 1]])
}

/// Mini-batch SGD on softmax cross-entropy. Single-threaded, so the result
/// depends only on the data and `hyper`.
pub fn train(x: ArrayView2<'_, f64>, labels: &[Stance], hyper: &ClassifierHyper) -> Result<Model> {
    hyper.validate()?;
    check_labels(x, labels)?;
    if labels.len() < 2 {
        return Err(Error::InvalidInput("training needs at least two examples".into()));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::InvalidInput(format!(
            "training set holds only {} examples",
            labels[0]
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    let mut model = Model::init(x.ncols(), &hyper.hidden, hyper.seed);
    model.meta.initial_loss = model.loss(x, labels)?;
    let mut rng = rng_for(hyper.seed, &[0x5452_4149]);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<Stance> = chunk.iter().map(|&i| labels[i]).collect();
            let cache = model.forward(xb.view(), Some((hyper.dropout, &mut rng)));
            let grads = model.backward(&cache, &yb);
            for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
                layer.weights.scaled_add(-hyper.learning_rate, &g.weights);
                layer.bias.scaled_add(-hyper.learning_rate, &g.bias);
            }
        }
        model.meta.epochs_run += 1;
    }
    model.meta.final_loss = model.loss(x, labels)?;
    if !model.meta.final_loss.is_finite() {
        return Err(Error::InvalidInput("training diverged".into()));
    }
    Ok(model)
}

/// Result of comparing backprop with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub parameters_checked: usize,
}

/// Finite-difference step.
pub const GRADIENT_STEP: f64 = 1e-4;

/// Checks every parameter's analytic gradient against a central
/// difference of the dropout-free loss. The relative error floors its
/// denominator at 1e-6 so that parameters with vanishing gradient compare
/// absolutely.
pub fn gradient_check(model: &Model, x: ArrayView2<'_, f64>, labels: &[Stance]) -> Result<GradientCheck> {
    model.check_input(x.ncols())?;
    check_labels(x, labels)?;
    if labels.is_empty() {
        return Err(Error::InvalidInput("gradient check needs a non-empty batch".into()));
    }
    let cache = model.forward::<rand_chacha::ChaCha8Rng>(x, None);
    let analytic = model.backward(&cache, labels);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let h = GRADIENT_STEP;

    let mut compare = |a: f64, plus: f64, minus: f64| {
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    };
    for li in 0..model.layers.len() {
        for idx in 0..model.layers[li].weights.len() {
            let (r, c) = (idx / model.layers[li].weights.ncols(), idx % model.layers[li].weights.ncols());
            let orig = model.layers[li].weights[[r, c]];
            probe.layers[li].weights[[r, c]] = orig + h;
            let plus = probe.loss(x, labels)?;
            probe.layers[li].weights[[r, c]] = orig - h;
            let minus = probe.loss(x, labels)?;
            probe.layers[li].weights[[r, c]] = orig;
            compare(analytic.layers[li].weights[[r, c]], plus, minus);
        }
        for j in 0..model.layers[li].bias.len() {
            let orig = model.layers[li].bias[j];
            probe.layers[li].bias[j] = orig + h;
            let plus = probe.loss(x, labels)?;
            probe.layers[li].bias[j] = orig - h;
            let minus = probe.loss(x, labels)?;
            probe.layers[li].bias[j] = orig;
            compare(analytic.layers[li].bias[j], plus, minus);
        }
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        parameters_checked: checked,
    })
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    /// Row-major `inputs x outputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    layers: Vec<LayerFile>,
    meta: TrainingMeta,
}

impl From<&Model> for ModelFile {
    fn from(m: &Model) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            layers: m
                .layers
                .iter()
                .map(|l| LayerFile {
                    inputs: l.weights.nrows(),
                    outputs: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            meta: m.meta.clone(),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<Model> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model file {} v{}",
                self.format, self.version
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut prev: Option<usize> = None;
        for l in self.layers {
            if prev.is_some_and(|p| p != l.inputs) {
                return Err(Error::DimensionMismatch {
                    expected: prev.unwrap(),
                    got: l.inputs,
                });
            }
            if l.bias.len() != l.outputs {
                return Err(Error::DimensionMismatch {
                    expected: l.outputs,
                    got: l.bias.len(),
                });
            }
            let weights = Array2::from_shape_vec((l.inputs, l.outputs), l.weights)
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            prev = Some(l.outputs);
            layers.push(Layer {
                weights,
                bias: Array1::from(l.bias),
            });
        }
        if layers.is_empty() || prev != Some(N_CLASSES) {
            return Err(Error::InvalidInput("model must end in a two-unit layer".into()));
        }
        if layers
            .iter()
            .any(|l| l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        Ok(Model {
            layers,
            meta: self.meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn xor() -> (Array2<f64>, Vec<Stance>) {
        let x = ndarray::array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let y = vec![Stance::Favor, Stance::Against, Stance::Against, Stance::Favor];
        (x, y)
    }

    fn two_clouds(n: usize, seed: u64) -> (Array2<f64>, Vec<Stance>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 4));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = if i % 2 == 0 { Stance::Favor } else { Stance::Against };
            let centre = if label == Stance::Favor { 1.5 } else { -1.5 };
            for j in 0..4 {
                let noise: f64 = StandardNormal.sample(&mut rng);
                x[[i, j]] = centre + 0.5 * noise;
            }
            y.push(label);
        }
        (x, y)
    }

    fn xor_hyper() -> ClassifierHyper {
        ClassifierHyper {
            batch_size: 1,
            dropout: 0.0,
            learning_rate: 0.1,
            seed: 3,
            ..ClassifierHyper::default()
        }
    }

    #[test]
    fn xor_is_learned_within_budget() {
        let (x, y) = xor();
        let model = train(x.view(), &y, &xor_hyper()).unwrap();
        assert_eq!(model.meta.epochs_run, 100);
        let preds = model.predict_batch(x.view()).unwrap();
        for (p, want) in preds.iter().zip(&y) {
            assert_eq!(p.label, *want);
        }
    }

    #[test]
    fn one_epoch_lowers_loss() {
        let (x, y) = two_clouds(256, 4);
        let hyper = ClassifierHyper {
            epochs: 1,
            ..ClassifierHyper::default()
        };
        let m = train(x.view(), &y, &hyper).unwrap();
        assert!(m.meta.final_loss < m.meta.initial_loss);
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let (x, y) = two_clouds(64, 5);
        let hyper = ClassifierHyper {
            epochs: 3,
            hidden: vec![16, 8],
            ..ClassifierHyper::default()
        };
        let a = train(x.view(), &y, &hyper).unwrap();
        let b = train(x.view(), &y, &hyper).unwrap();
        assert_eq!(a, b);
        let c = train(x.view(), &y, &ClassifierHyper { seed: 9, ..hyper }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn training_input_errors() {
        let (x, y) = xor();
        let single = vec![Stance::Favor; 4];
        assert!(train(x.view(), &single, &xor_hyper()).is_err());
        assert_eq!(
            train(x.view(), &y[..3], &xor_hyper()).unwrap_err().category(),
            "dimension-mismatch"
        );
        let bad = ClassifierHyper {
            dropout: 1.0,
            ..ClassifierHyper::default()
        };
        assert!(train(x.view(), &y, &bad).is_err());
    }

    #[test]
    fn logits_to_predictions() {
        let tie = score_logits(2.0, 2.0);
        assert_eq!(tie.label, Stance::Favor);
        assert_eq!(tie.confidence, 0.5);
        let s = score_logits(4.0, 0.0);
        let e4 = 4.0f64.exp();
        assert!((s.confidence - e4 / (e4 + 1.0)).abs() < 1e-15);
        assert!((s.confidence - 0.9820).abs() < 5e-5);
        assert_eq!(score_logits(-1.0, 3.0).label, Stance::Against);
    }

    #[test]
    fn prediction_is_pure_and_checked() {
        let m = Model::init(3, &[5, 4], 2);
        let v = [0.3, -1.0, 2.0];
        let a = m.predict(&v).unwrap();
        assert_eq!(a, m.predict(&v).unwrap());
        assert!((0.5..=1.0).contains(&a.confidence));
        let probs = m.probabilities(ArrayView2::from_shape((1, 3), &v).unwrap()).unwrap();
        assert!((probs.sum() - 1.0).abs() < 1e-12);
        assert_eq!(m.predict(&[1.0]).unwrap_err().category(), "dimension-mismatch");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Model::init(6, &[10, 7], 12);
        let x = Array2::from_shape_simple_fn((8, 6), || rng.random_range(-1.0..1.0));
        let y: Vec<Stance> = (0..8).map(|i| Stance::from_index(i % 2)).collect();
        let check = gradient_check(&m, x.view(), &y).unwrap();
        assert!(check.max_relative_error < 1e-4, "{check:?}");
        assert_eq!(check.parameters_checked, 6 * 10 + 10 + 10 * 7 + 7 + 7 * 2 + 2);
        assert_eq!(check.parameters_checked, m.n_parameters());

        // Zero input with zero biases would sit exactly on the ReLU kink.
        let mut m = m;
        for l in &mut m.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let zeros = Array2::zeros((8, 6));
        let check = gradient_check(&m, zeros.view(), &y).unwrap();
        assert!(check.max_relative_error < 1e-4, "{check:?}");
    }

    #[test]
    fn model_file_round_trip() {
        let (x, y) = two_clouds(32, 1);
        let hyper = ClassifierHyper {
            epochs: 2,
            hidden: vec![6, 5],
            ..ClassifierHyper::default()
        };
        let m = train(x.view(), &y, &hyper).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), m);
    }
}
