//! Mini-batch SGD on the seen-class cross-entropy objective.
//!
//! Only the projection `W` is trained; the classifier rows are the normalized
//! attribute vectors of the seen classes and never change. The trainer never
//! receives unseen-class rows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{AttributeMatrix, FeatureSet, Splits};
use crate::semantic_head::{self, Classifier, EmbeddingWeights, PoolingConfig};
use crate::tensor::{Matrix, Scalar};

/// Examples per unit of parallel work. Fixed so the summation order, and hence
/// the result, does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub pooling: PoolingConfig,
    pub seed: u64,
    pub init_scale: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-5,
            epochs: 30,
            batch_size: 64,
            pooling: PoolingConfig::SELAR,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::invalid("init_scale", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Reads a TOML config; missing keys take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            what: "train config".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Momentum buffer, same shape as `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Matrix<f32>,
}

impl OptimizerState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            velocity: Matrix::zeros(rows, cols),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// `epoch,loss,train_acc` rows at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc\n");
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.loss, e.train_acc).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: EmbeddingWeights,
    pub history: TrainHistory,
}

/// Returns `(−log softmax(z)[y], softmax(z) − onehot(y))`.
pub fn softmax_cross_entropy<T: Scalar>(z: &[T], y: usize) -> Result<(T, Vec<T>)> {
    if y >= z.len() {
        return Err(Error::OutOfRange {
            index: y,
            len: z.len(),
        });
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() - (z[y] - max);
    let mut dz: Vec<T> = exps.into_iter().map(|e| e / sum).collect();
    dz[y] = dz[y] - T::one();
    Ok((loss.max(T::zero()), dz))
}

/// One momentum SGD step with L2 weight decay folded into the gradient.
pub fn sgd_step(
    w: &mut Matrix<f32>,
    grad: &Matrix<f32>,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    let shape = (w.rows(), w.cols());
    if (grad.rows(), grad.cols()) != shape
        || (state.velocity.rows(), state.velocity.cols()) != shape
    {
        return Err(Error::Shape(
            "weights, gradient and velocity differ in shape".into(),
        ));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let velocity = state.velocity.as_mut_slice();
    for ((wi, vi), &gi) in w
        .as_mut_slice()
        .iter_mut()
        .zip(velocity)
        .zip(grad.as_slice())
    {
        *vi = cfg.momentum * *vi + gi + cfg.weight_decay * *wi;
        *wi -= cfg.learning_rate * *vi;
    }
    Ok(())
}

/// Entries i.i.d. uniform in `±init_scale/√D`.
pub fn init_weights(l: usize, d: usize, seed: u64, init_scale: f32) -> EmbeddingWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = init_scale / (d as f32).sqrt();
    let data = (0..l * d)
        .map(|_| (rng.random::<f32>() * 2.0 - 1.0) * bound)
        .collect();
    Matrix::new(l, d, data).expect("shape by construction")
}

/// Classifier over the seen classes only.
pub fn seen_classifier(attrs: &AttributeMatrix, splits: &Splits) -> Result<Classifier> {
    Classifier::from_attributes(attrs, &splits.seen_class_ids)
}

struct BatchPartial {
    grad: Matrix<f32>,
    loss: f64,
    correct: usize,
}

/// Loss and gradient summed (not averaged) over `indices`, in index order.
fn accumulate(
    w: &EmbeddingWeights,
    classifier: &Classifier,
    features: &FeatureSet,
    indices: &[usize],
    pooling: PoolingConfig,
) -> Result<BatchPartial> {
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    let mut loss = 0.0f64;
    let mut correct = 0;
    for &i in indices {
        let (v, label) = features.example(i)?;
        let y = classifier.position(label).ok_or_else(|| {
            Error::invalid(
                "splits",
                format!("training image {i} has non-seen label {label}"),
            )
        })?;
        let trace = semantic_head::forward(w, classifier, &v, pooling)?;
        let (l, dz) = softmax_cross_entropy(&trace.logits, y)?;
        if trace.top_class_position() == y {
            correct += 1;
        }
        loss += l as f64;
        semantic_head::backward_into(&trace, &v, classifier, &dz, &mut grad)?;
    }
    Ok(BatchPartial {
        grad,
        loss,
        correct,
    })
}

/// Mean loss and mean gradient over a batch.
///
/// Work is split into fixed-size chunks that may run in parallel; partial sums
/// are combined in chunk order.
pub fn batch_gradient(
    w: &EmbeddingWeights,
    classifier: &Classifier,
    features: &FeatureSet,
    indices: &[usize],
    pooling: PoolingConfig,
) -> Result<(f64, Matrix<f32>, usize)> {
    if indices.is_empty() {
        return Err(Error::invalid("batch", "empty batch"));
    }
    let partials = indices
        .par_chunks(CHUNK)
        .map(|chunk| accumulate(w, classifier, features, chunk, pooling))
        .collect::<Result<Vec<_>>>()?;
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    let mut loss = 0.0;
    let mut correct = 0;
    for p in partials {
        for (g, &x) in grad.as_mut_slice().iter_mut().zip(p.grad.as_slice()) {
            *g += x;
        }
        loss += p.loss;
        correct += p.correct;
    }
    let n = indices.len() as f32;
    for g in grad.as_mut_slice() {
        *g /= n;
    }
    Ok((loss / indices.len() as f64, grad, correct))
}

/// Trains `W` on `splits.train_indices` against the seen-class classifier.
pub fn train(
    features: &FeatureSet,
    splits: &Splits,
    seen: &Classifier,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if splits.train_indices.is_empty() {
        return Err(Error::Splits("train split is empty".into()));
    }
    let l = seen.num_attributes();
    let d = features.manifest().feature_depth;
    let mut w = init_weights(l, d, cfg.seed, cfg.init_scale);
    let mut state = OptimizerState::new(l, d);
    let mut history = TrainHistory::default();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order = splits.train_indices.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad, hits) = batch_gradient(&w, seen, features, batch, cfg.pooling)?;
            loss_sum += loss * batch.len() as f64;
            correct += hits;
            sgd_step(&mut w, &grad, &mut state, cfg)?;
        }
        let n = order.len() as f64;
        history.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / n,
            train_acc: correct as f64 / n,
        });
    }
    Ok(TrainOutcome {
        weights: w,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_class() {
        let (loss, dz) = softmax_cross_entropy(&[0.0f64, 0.0], 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(dz, vec![-0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let (loss, dz) = softmax_cross_entropy(&[1000.0f32, 0.0], 0).unwrap();
        assert!(loss.is_finite() && loss < 1e-6);
        assert!(dz.iter().all(|x| x.is_finite()));
        let (loss, _) = softmax_cross_entropy(&[1000.0f32, 0.0], 1).unwrap();
        assert!((loss - 1000.0).abs() < 1e-3);
    }

    #[test]
    fn ce_label_out_of_range() {
        assert!(softmax_cross_entropy(&[0.0f32, 1.0], 2).is_err());
        assert!(softmax_cross_entropy(&[f32::NAN, 1.0], 0).is_err());
    }

    #[test]
    fn ce_gradient_sums_to_zero() {
        let (_, dz) = softmax_cross_entropy(&[0.3f32, -2.0, 1.7, 0.0, 4.2], 3).unwrap();
        assert!(dz.iter().sum::<f32>().abs() < 1e-6);
    }

    fn cfg(lr: f32, momentum: f32, wd: f32) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            momentum,
            weight_decay: wd,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn plain_sgd_step() {
        let mut w = Matrix::new(1, 2, vec![1.0f32, -1.0]).unwrap();
        let g = Matrix::new(1, 2, vec![0.5f32, 2.0]).unwrap();
        let mut s = OptimizerState::new(1, 2);
        sgd_step(&mut w, &g, &mut s, &cfg(0.1, 0.0, 0.0)).unwrap();
        assert_eq!(w.as_slice(), &[1.0 - 0.05, -1.0 - 0.2]);
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut w = Matrix::new(1, 2, vec![1.0f32, -1.0]).unwrap();
        let mut s = OptimizerState::new(1, 2);
        sgd_step(&mut w, &Matrix::zeros(1, 2), &mut s, &cfg(0.1, 0.9, 0.0)).unwrap();
        assert_eq!(w.as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn momentum_unrolls() {
        let mut w = Matrix::new(1, 1, vec![0.0f64 as f32]).unwrap();
        let g = Matrix::new(1, 1, vec![1.0f32]).unwrap();
        let mut s = OptimizerState::new(1, 1);
        let c = cfg(0.01, 0.9, 0.0);
        sgd_step(&mut w, &g, &mut s, &c).unwrap();
        sgd_step(&mut w, &g, &mut s, &c).unwrap();
        assert!((w.get(0, 0) - (-0.01 * 2.9)).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut w = Matrix::new(1, 1, vec![0.0f32]).unwrap();
        let g = Matrix::new(1, 1, vec![f32::INFINITY]).unwrap();
        let mut s = OptimizerState::new(1, 1);
        assert!(matches!(
            sgd_step(&mut w, &g, &mut s, &cfg(0.1, 0.0, 0.0)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_weights(4, 9, 7, 1.5);
        assert_eq!(a, init_weights(4, 9, 7, 1.5));
        assert_ne!(a, init_weights(4, 9, 8, 1.5));
        assert!(a.as_slice().iter().all(|x| x.abs() <= 0.5));
        assert!(init_weights(3, 5, 1, 0.0)
            .as_slice()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn init_std_matches_uniform_moments() {
        let w = init_weights(64, 1024, 3, 1.0);
        let n = w.as_slice().len() as f64;
        let mean = w.as_slice().iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = w
            .as_slice()
            .iter()
            .map(|&x| (x as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let expected = (1.0 / 1024f64.sqrt()) / 3f64.sqrt();
        assert!((var.sqrt() / expected - 1.0).abs() < 0.1);
    }

    #[test]
    fn config_toml_round_trip() {
        let c = TrainConfig {
            learning_rate: 0.05,
            epochs: 3,
            pooling: PoolingConfig::BASELINE,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial =
            TrainConfig::from_toml("epochs = 5\n[pooling]\nmethod = \"gap\"\nspace = \"class\"\n")
                .unwrap();
        assert_eq!(partial.epochs, 5);
        assert_eq!(partial.learning_rate, 1e-3);
        assert!(TrainConfig::from_toml("momentum = 1.0").is_err());
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
    }
}
