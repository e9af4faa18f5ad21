//! GZSL evaluation over the joint seen + unseen label space.
//!
//! Accuracies are per-class top-1: each class's own accuracy, averaged with
//! equal weight per class. Calibration subtracts a constant `gamma` from every
//! seen-class logit before the argmax.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, LocalFeatureMap, Splits};
use crate::semantic_head::{
    self, Checkpoint, Classifier, EmbeddingWeights, ForwardTrace, PoolingConfig,
};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GzslMetrics {
    pub acc_u: f64,
    pub acc_s: f64,
    pub h: f64,
    /// `acc_s / acc_u`; `None` when `acc_u` is zero.
    pub s_over_u: Option<f64>,
}

impl GzslMetrics {
    pub fn from_accuracies(acc_u: f64, acc_s: f64) -> Self {
        Self {
            acc_u,
            acc_s,
            h: harmonic_mean(acc_u, acc_s),
            s_over_u: s_over_u(acc_u, acc_s),
        }
    }

    /// `acc_u,acc_s,h,s_over_u` at full precision (`s_over_u` empty if undefined).
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.acc_u,
            self.acc_s,
            self.h,
            self.s_over_u.map(|x| x.to_string()).unwrap_or_default()
        )
    }
}

/// `2·u·s / (u + s)`, with 0 when both are 0.
pub fn harmonic_mean(acc_u: f64, acc_s: f64) -> f64 {
    if acc_u + acc_s == 0.0 {
        0.0
    } else {
        2.0 * acc_u * acc_s / (acc_u + acc_s)
    }
}

pub fn s_over_u(acc_u: f64, acc_s: f64) -> Option<f64> {
    (acc_u > 0.0).then(|| acc_s / acc_u)
}

/// Mean over `class_subset` of each class's own top-1 accuracy.
///
/// `predictions` holds `(predicted, true)` pairs.
pub fn per_class_top1(
    predictions: &[(usize, usize)],
    class_subset: &BTreeSet<usize>,
) -> Result<f64> {
    if class_subset.is_empty() {
        return Err(Error::invalid("class_subset", "empty class subset"));
    }
    let mut tally: BTreeMap<usize, (usize, usize)> =
        class_subset.iter().map(|&c| (c, (0, 0))).collect();
    for &(pred, truth) in predictions {
        let entry = tally.get_mut(&truth).ok_or_else(|| {
            Error::invalid(
                "predictions",
                format!("true label {truth} not in class subset"),
            )
        })?;
        entry.1 += 1;
        if pred == truth {
            entry.0 += 1;
        }
    }
    let mut sum = 0.0;
    for (&class, &(hits, total)) in &tally {
        if total == 0 {
            return Err(Error::EmptyClass { class });
        }
        sum += hits as f64 / total as f64;
    }
    Ok(sum / tally.len() as f64)
}

/// Argmax of `logits − gamma·[seen]`, lowest index on ties.
pub fn predict_from_logits(logits: &[f32], seen: &[bool], gamma: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, (&z, &is_seen)) in logits.iter().zip(seen).enumerate() {
        let score = z as f64 - if is_seen { gamma } else { 0.0 };
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    best
}

/// A trained head bound to the joint label space.
#[derive(Debug, Clone)]
pub struct Model {
    pub weights: EmbeddingWeights,
    pub pooling: PoolingConfig,
    pub joint: Classifier,
    /// `seen[c]` for every class of the joint classifier.
    pub seen: Vec<bool>,
}

impl Model {
    /// Normalizes the raw attribute matrix over all classes.
    pub fn new(
        weights: EmbeddingWeights,
        pooling: PoolingConfig,
        attributes: &Matrix<f32>,
        splits: &Splits,
    ) -> Result<Self> {
        let joint = Classifier::joint(attributes)?;
        Self::with_classifier(weights, pooling, joint, splits)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, splits: &Splits) -> Result<Self> {
        let joint = ckpt.joint_classifier()?;
        Self::with_classifier(ckpt.weights.clone(), ckpt.pooling, joint, splits)
    }

    fn with_classifier(
        weights: EmbeddingWeights,
        pooling: PoolingConfig,
        joint: Classifier,
        splits: &Splits,
    ) -> Result<Self> {
        if weights.rows() != joint.num_attributes() {
            return Err(Error::Shape(format!(
                "weights have {} rows, attribute matrix has {} columns",
                weights.rows(),
                joint.num_attributes()
            )));
        }
        let c = joint.num_classes();
        if let Some(&bad) = splits
            .seen_class_ids
            .iter()
            .chain(&splits.unseen_class_ids)
            .find(|&&id| id >= c)
        {
            return Err(Error::OutOfRange { index: bad, len: c });
        }
        Ok(Self {
            weights,
            pooling,
            joint,
            seen: splits.is_seen(c),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            weights: self.weights.clone(),
            pooling: self.pooling,
            attributes: self.joint.rows().clone(),
        }
    }

    pub fn forward(&self, v: &LocalFeatureMap) -> Result<ForwardTrace> {
        semantic_head::forward(&self.weights, &self.joint, v, self.pooling)
    }

    pub fn forward_retaining(&self, v: &LocalFeatureMap) -> Result<ForwardTrace> {
        semantic_head::forward_retaining(&self.weights, &self.joint, v, self.pooling, true)
    }
}

/// Predicted class over the joint label space.
pub fn predict(
    weights: &EmbeddingWeights,
    joint: &Classifier,
    seen: &[bool],
    v: &LocalFeatureMap,
    cfg: PoolingConfig,
    gamma: f64,
) -> Result<usize> {
    if seen.len() != joint.num_classes() {
        return Err(Error::Shape(format!(
            "seen mask has {} entries for {} classes",
            seen.len(),
            joint.num_classes()
        )));
    }
    let trace = semantic_head::forward(weights, joint, v, cfg)?;
    Ok(joint.class_ids()[predict_from_logits(&trace.logits, seen, gamma)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImage {
    pub index: usize,
    pub label: usize,
    pub logits: Vec<f32>,
}

/// Joint-space logits for each image, in the order given.
pub fn score_images(
    model: &Model,
    features: &FeatureSet,
    indices: &[usize],
) -> Result<Vec<ScoredImage>> {
    indices
        .par_iter()
        .map(|&index| {
            let (v, label) = features.example(index)?;
            let trace = model.forward(&v)?;
            Ok(ScoredImage {
                index,
                label,
                logits: trace.logits,
            })
        })
        .collect()
}

/// Which test split an image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionRecord {
    pub index: usize,
    pub split: SplitKind,
    pub truth: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GzslEvaluation {
    pub metrics: GzslMetrics,
    pub predictions: Vec<PredictionRecord>,
}

impl GzslEvaluation {
    /// `index,split,true,predicted` for every test image.
    pub fn predictions_csv(&self) -> String {
        let mut out = String::from("index,split,true,predicted\n");
        for p in &self.predictions {
            let split = match p.split {
                SplitKind::Seen => "seen",
                SplitKind::Unseen => "unseen",
            };
            writeln!(out, "{},{split},{},{}", p.index, p.truth, p.predicted).unwrap();
        }
        out
    }
}

fn predictions(
    rows: &[ScoredImage],
    seen: &[bool],
    gamma: f64,
    split: SplitKind,
) -> Vec<PredictionRecord> {
    rows.iter()
        .map(|r| PredictionRecord {
            index: r.index,
            split,
            truth: r.label,
            predicted: predict_from_logits(&r.logits, seen, gamma),
        })
        .collect()
}

/// Per-class accuracy over the classes that actually occur in `records`.
pub fn accuracy_of(records: &[PredictionRecord]) -> Result<f64> {
    let classes: BTreeSet<usize> = records.iter().map(|p| p.truth).collect();
    let pairs: Vec<(usize, usize)> = records.iter().map(|p| (p.predicted, p.truth)).collect();
    per_class_top1(&pairs, &classes)
}

/// Metrics from pre-computed scores at offset `gamma`.
pub fn metrics_from_scores(
    unseen: &[ScoredImage],
    seen_rows: &[ScoredImage],
    seen: &[bool],
    gamma: f64,
) -> Result<GzslEvaluation> {
    if unseen.is_empty() || seen_rows.is_empty() {
        return Err(Error::Splits(
            "evaluation needs both seen and unseen test images".into(),
        ));
    }
    let mut records = predictions(unseen, seen, gamma, SplitKind::Unseen);
    let seen_records = predictions(seen_rows, seen, gamma, SplitKind::Seen);
    let acc_u = accuracy_of(&records)?;
    let acc_s = accuracy_of(&seen_records)?;
    records.extend(seen_records);
    Ok(GzslEvaluation {
        metrics: GzslMetrics::from_accuracies(acc_u, acc_s),
        predictions: records,
    })
}

/// Evaluates on the test splits of `splits` at seen-class offset `gamma`.
pub fn evaluate_gzsl(
    model: &Model,
    features: &FeatureSet,
    splits: &Splits,
    gamma: f64,
) -> Result<GzslEvaluation> {
    if splits.test_unseen_indices.is_empty() {
        return Err(Error::Splits("test_unseen split is empty".into()));
    }
    if splits.test_seen_indices.is_empty() {
        return Err(Error::Splits("test_seen split is empty".into()));
    }
    let unseen = score_images(model, features, &splits.test_unseen_indices)?;
    let seen_rows = score_images(model, features, &splits.test_seen_indices)?;
    metrics_from_scores(&unseen, &seen_rows, &model.seen, gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub gamma: f64,
    pub metrics_at_gamma: GzslMetrics,
    pub sweep: Vec<(f64, GzslMetrics)>,
}

/// `steps` evenly spaced offsets from 0 to the largest per-image logit spread.
pub fn gamma_grid(rows: &[ScoredImage], steps: usize) -> Vec<f64> {
    let spread = rows
        .iter()
        .map(|r| {
            let max = r.logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let min = r.logits.iter().copied().fold(f32::INFINITY, f32::min);
            (max - min) as f64
        })
        .fold(0.0, f64::max);
    match steps {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..steps)
            .map(|i| spread * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

pub const DEFAULT_GRID_STEPS: usize = 41;

/// Sweeps `grid` on validation scores and keeps the offset with the best H
/// (smallest offset on ties).
pub fn calibrate_scores(
    val_unseen: &[ScoredImage],
    val_seen: &[ScoredImage],
    seen: &[bool],
    grid: &[f64],
) -> Result<CalibrationResult> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "empty gamma grid"));
    }
    if val_unseen.is_empty() || val_seen.is_empty() {
        return Err(Error::Splits(
            "validation needs at least one seen and one unseen image".into(),
        ));
    }
    let mut sweep = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, GzslMetrics)> = None;
    for &gamma in grid {
        let m = metrics_from_scores(val_unseen, val_seen, seen, gamma)?.metrics;
        sweep.push((gamma, m));
        let better = match best {
            None => true,
            Some((g, b)) => m.h > b.h || (m.h == b.h && gamma < g),
        };
        if better {
            best = Some((gamma, m));
        }
    }
    let (gamma, metrics_at_gamma) = best.expect("grid is non-empty");
    Ok(CalibrationResult {
        gamma,
        metrics_at_gamma,
        sweep,
    })
}

/// Scores the validation images and sweeps `grid`; when `grid` is `None` the
/// default 41-step grid over the observed logit spread is used.
pub fn calibrate(
    model: &Model,
    features: &FeatureSet,
    val_seen_indices: &[usize],
    val_unseen_indices: &[usize],
    grid: Option<&[f64]>,
) -> Result<CalibrationResult> {
    let unseen = score_images(model, features, val_unseen_indices)?;
    let seen_rows = score_images(model, features, val_seen_indices)?;
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            let all: Vec<ScoredImage> = unseen.iter().chain(&seen_rows).cloned().collect();
            owned = gamma_grid(&all, DEFAULT_GRID_STEPS);
            &owned
        }
    };
    calibrate_scores(&unseen, &seen_rows, &model.seen, grid)
}

/// Splits `indices` per class: the first `ceil(fraction·n)` images of each
/// class (in index order) go to validation, the rest are returned second.
pub fn hold_out(
    labels: &[u32],
    indices: &[usize],
    fraction: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("val-fraction", "must lie in (0, 1]"));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    for i in sorted {
        let y = *labels.get(i).ok_or(Error::OutOfRange {
            index: i,
            len: labels.len(),
        })?;
        by_class.entry(y).or_default().push(i);
    }
    let mut val = Vec::new();
    let mut rest = Vec::new();
    for members in by_class.values() {
        let k = ((members.len() as f64 * fraction).ceil() as usize).min(members.len());
        val.extend_from_slice(&members[..k]);
        rest.extend_from_slice(&members[k..]);
    }
    val.sort_unstable();
    rest.sort_unstable();
    Ok((val, rest))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityRow {
    pub class: usize,
    pub count: usize,
    /// Cosine between the class's mean embedded vector and its attribute row.
    pub cosine: f64,
    /// Share of the mean vector's absolute mass on attributes the class lacks.
    pub off_attribute_mass: f64,
}

/// `(cosine, off-attribute mass)` of an embedded vector against a class row.
pub fn sparsity_stats(embedded: &[f64], attributes: &[f32]) -> (f64, f64) {
    let dot: f64 = embedded
        .iter()
        .zip(attributes)
        .map(|(&a, &p)| a * p as f64)
        .sum();
    let na = embedded.iter().map(|a| a * a).sum::<f64>().sqrt();
    let np = attributes
        .iter()
        .map(|&p| (p as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let cosine = if na == 0.0 || np == 0.0 {
        0.0
    } else {
        dot / (na * np)
    };
    let total: f64 = embedded.iter().map(|a| a.abs()).sum();
    let off: f64 = embedded
        .iter()
        .zip(attributes)
        .filter(|(_, &p)| p == 0.0)
        .map(|(a, _)| a.abs())
        .sum();
    let off_mass = if total == 0.0 { 0.0 } else { off / total };
    (cosine, off_mass)
}

/// Per-class statistics of the pooled attribute vectors over both test splits.
pub fn sparsity_diagnostic(
    model: &Model,
    features: &FeatureSet,
    splits: &Splits,
) -> Result<Vec<SparsityRow>> {
    let indices: Vec<usize> = splits
        .test_seen_indices
        .iter()
        .chain(&splits.test_unseen_indices)
        .copied()
        .collect();
    let pooled = indices
        .par_iter()
        .map(|&i| {
            let (v, y) = features.example(i)?;
            Ok((y, model.forward(&v)?.pooled_attribute))
        })
        .collect::<Result<Vec<_>>>()?;
    let l = model.joint.num_attributes();
    let mut sums: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    for (y, a) in pooled {
        let entry = sums.entry(y).or_insert_with(|| (0, vec![0.0; l]));
        entry.0 += 1;
        for (s, &x) in entry.1.iter_mut().zip(&a) {
            *s += x as f64;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(class, (count, sum))| {
            let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            let pos = model
                .joint
                .position(class)
                .expect("labels are within the joint space");
            let (cosine, off_attribute_mass) = sparsity_stats(&mean, model.joint.rows().row(pos));
            SparsityRow {
                class,
                count,
                cosine,
                off_attribute_mass,
            }
        })
        .collect())
}

pub fn mean_off_attribute_mass(rows: &[SparsityRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.off_attribute_mass).sum::<f64>() / rows.len() as f64
}
