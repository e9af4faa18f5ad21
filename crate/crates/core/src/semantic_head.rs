//! Embedding head: a per-location linear map from visual to attribute space,
//! spatial pooling placed in one of three spaces, and a fixed classifier whose
//! rows are L2-normalized class attribute vectors.
//!
//! Where pooling happens is set by [`PoolSpace`]:
//!
//! * `Visual`: pool the `M×M×D` features, then project and classify.
//! * `Attribute`: project every location (a 1×1 convolution), pool the
//!   `M×M×L` attribute maps, then classify. With max pooling this is SELAR.
//! * `Class`: project and classify every location, then pool class scores.
//!
//! With average pooling the three placements give the same logits, since every
//! stage is linear. Everything here is generic over [`Scalar`] so the exact same
//! code runs in `f64` for gradient checks.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, FeatureMap, Matrix, Scalar};

/// `L × D` trainable projection (no bias).
pub type EmbeddingWeights<T = f32> = Matrix<T>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMethod {
    Gap,
    Gmp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolSpace {
    Visual,
    Attribute,
    Class,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub method: PoolMethod,
    pub space: PoolSpace,
}

impl PoolingConfig {
    /// Max pooling in attribute space.
    pub const SELAR: PoolingConfig = PoolingConfig {
        method: PoolMethod::Gmp,
        space: PoolSpace::Attribute,
    };
    /// Average pooling; the space does not affect the logits.
    pub const BASELINE: PoolingConfig = PoolingConfig {
        method: PoolMethod::Gap,
        space: PoolSpace::Attribute,
    };

    pub const fn new(method: PoolMethod, space: PoolSpace) -> Self {
        Self { method, space }
    }

    /// All six method × space combinations, GAP first.
    pub fn all() -> [PoolingConfig; 6] {
        use PoolMethod::*;
        use PoolSpace::*;
        [
            Self::new(Gap, Visual),
            Self::new(Gap, Attribute),
            Self::new(Gap, Class),
            Self::new(Gmp, Visual),
            Self::new(Gmp, Attribute),
            Self::new(Gmp, Class),
        ]
    }
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self::SELAR
    }
}

impl fmt::Display for PoolMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolMethod::Gap => "GAP",
            PoolMethod::Gmp => "GMP",
        })
    }
}

impl fmt::Display for PoolSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolSpace::Visual => "visual",
            PoolSpace::Attribute => "attribute",
            PoolSpace::Class => "class",
        })
    }
}

impl fmt::Display for PoolingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.method, self.space)
    }
}

impl FromStr for PoolMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gap" => Ok(PoolMethod::Gap),
            "gmp" => Ok(PoolMethod::Gmp),
            _ => Err(Error::invalid(
                "method",
                format!("unknown pooling method {s:?}"),
            )),
        }
    }
}

impl FromStr for PoolSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "visual" => Ok(PoolSpace::Visual),
            "attribute" => Ok(PoolSpace::Attribute),
            "class" => Ok(PoolSpace::Class),
            _ => Err(Error::invalid(
                "space",
                format!("unknown pooling space {s:?}"),
            )),
        }
    }
}

/// Scales every row to unit Euclidean norm.
pub fn normalize_attribute_rows<T: Scalar>(attrs: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = attrs.clone();
    for c in 0..out.rows() {
        let row = out.row_mut(c);
        let norm = row.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroAttributeRow { class: c });
        }
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("attribute row {c}")));
        }
        for x in row.iter_mut() {
            *x = T::lit(x.as_f64() / norm);
        }
    }
    Ok(out)
}

/// Fixed classifier over a subset of classes (the active label set).
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T = f32> {
    class_ids: Vec<usize>,
    rows: Matrix<T>,
}

impl<T: Scalar> Classifier<T> {
    /// Normalizes the rows of `attrs` selected by `class_ids`.
    pub fn from_attributes(attrs: &Matrix<T>, class_ids: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(class_ids.len() * attrs.cols());
        for &c in class_ids {
            if c >= attrs.rows() {
                return Err(Error::OutOfRange {
                    index: c,
                    len: attrs.rows(),
                });
            }
            data.extend_from_slice(attrs.row(c));
        }
        let selected = Matrix::new(class_ids.len(), attrs.cols(), data)?;
        let rows = normalize_attribute_rows(&selected).map_err(|e| match e {
            Error::ZeroAttributeRow { class } => Error::ZeroAttributeRow {
                class: class_ids[class],
            },
            other => other,
        })?;
        Ok(Self {
            class_ids: class_ids.to_vec(),
            rows,
        })
    }

    /// Classifier over every row of `attrs`.
    pub fn joint(attrs: &Matrix<T>) -> Result<Self> {
        let ids: Vec<usize> = (0..attrs.rows()).collect();
        Self::from_attributes(attrs, &ids)
    }

    /// Wraps rows that are already unit-norm.
    pub fn from_normalized(rows: Matrix<T>, class_ids: Vec<usize>) -> Result<Self> {
        if rows.rows() != class_ids.len() {
            return Err(Error::Shape(format!(
                "{} rows for {} class ids",
                rows.rows(),
                class_ids.len()
            )));
        }
        for (c, &id) in class_ids.iter().enumerate() {
            let norm = rows
                .row(c)
                .iter()
                .map(|x| x.as_f64().powi(2))
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > 1e-4 {
                return Err(Error::invalid(
                    "attributes",
                    format!("row for class {id} has norm {norm}, expected 1"),
                ));
            }
        }
        Ok(Self { class_ids, rows })
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn rows(&self) -> &Matrix<T> {
        &self.rows
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.rows.cols()
    }

    /// Position of global class id `class` in the active label set.
    pub fn position(&self, class: usize) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class)
    }

    pub fn cast<U: Scalar>(&self) -> Classifier<U> {
        Classifier {
            class_ids: self.class_ids.clone(),
            rows: self.rows.cast(),
        }
    }
}

/// Applies `w` at every spatial location (a 1×1 convolution).
pub fn project_local<T: Scalar>(w: &Matrix<T>, v: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    if w.cols() != v.depth() {
        return Err(Error::Shape(format!(
            "weights are {}x{} but features have depth {}",
            w.rows(),
            w.cols(),
            v.depth()
        )));
    }
    let mut out = FeatureMap::zeros(v.side(), w.rows());
    for loc in 0..v.locations() {
        let x = v.at(loc);
        for (o, l) in out.at_mut(loc).iter_mut().zip(0..w.rows()) {
            *o = dot(w.row(l), x);
        }
    }
    Ok(out)
}

/// Spatially pooled channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled<T> {
    pub values: Vec<T>,
    /// Flat spatial index of each channel's maximum; `Some` only for GMP.
    pub argmax: Option<Vec<usize>>,
}

/// Global average or max pooling over all `M·M` locations.
///
/// Max pooling breaks ties toward the lowest flat index.
pub fn pool<T: Scalar>(t: &FeatureMap<T>, method: PoolMethod) -> Pooled<T> {
    let k = t.depth();
    match method {
        PoolMethod::Gap => {
            let mut sum = vec![T::zero(); k];
            for loc in 0..t.locations() {
                for (s, &x) in sum.iter_mut().zip(t.at(loc)) {
                    *s = *s + x;
                }
            }
            let n = T::lit(t.locations() as f64);
            Pooled {
                values: sum.into_iter().map(|s| s / n).collect(),
                argmax: None,
            }
        }
        PoolMethod::Gmp => {
            let mut values = t.at(0).to_vec();
            let mut argmax = vec![0usize; k];
            for loc in 1..t.locations() {
                for ((best, arg), &x) in values.iter_mut().zip(argmax.iter_mut()).zip(t.at(loc)) {
                    if x > *best {
                        *best = x;
                        *arg = loc;
                    }
                }
            }
            Pooled {
                values,
                argmax: Some(argmax),
            }
        }
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T = f32> {
    /// Local attribute maps `M×M×L`; kept for attribute/class pooling and
    /// whenever requested.
    pub local_semantic: Option<FeatureMap<T>>,
    /// Global attribute vector. For class-space pooling it is the same pooling
    /// applied to the local attribute maps, recorded for diagnostics only.
    pub pooled_attribute: Vec<T>,
    pub logits: Vec<T>,
    /// Per pooled channel (D, L or C of them depending on the space).
    pub argmax_locations: Option<Vec<usize>>,
    pub pooling: PoolingConfig,
    pub active_class_ids: Vec<usize>,
    side: usize,
    depth: usize,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Index into the active label set of the highest logit (lowest index on ties).
    pub fn top_class_position(&self) -> usize {
        argmax_first(&self.logits)
    }
}

pub(crate) fn argmax_first<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Computes the compatibility logits of `v` against the active classes.
pub fn forward<T: Scalar>(
    w: &Matrix<T>,
    classifier: &Classifier<T>,
    v: &FeatureMap<T>,
    cfg: PoolingConfig,
) -> Result<ForwardTrace<T>> {
    forward_retaining(w, classifier, v, cfg, false)
}

/// Like [`forward`]; `retain_local` also computes the local attribute maps for
/// visual-space pooling, where they are otherwise skipped.
pub fn forward_retaining<T: Scalar>(
    w: &Matrix<T>,
    classifier: &Classifier<T>,
    v: &FeatureMap<T>,
    cfg: PoolingConfig,
    retain_local: bool,
) -> Result<ForwardTrace<T>> {
    check_shapes(w, classifier, v)?;
    let attrs = classifier.rows();
    let (local_semantic, pooled_attribute, logits, argmax_locations) = match cfg.space {
        PoolSpace::Visual => {
            let pooled = pool(v, cfg.method);
            let a = w.mul_vec(&pooled.values);
            let z = attrs.mul_vec(&a);
            let local = if retain_local {
                Some(project_local(w, v)?)
            } else {
                None
            };
            (local, a, z, pooled.argmax)
        }
        PoolSpace::Attribute => {
            let local = project_local(w, v)?;
            let pooled = pool(&local, cfg.method);
            let z = attrs.mul_vec(&pooled.values);
            (Some(local), pooled.values, z, pooled.argmax)
        }
        PoolSpace::Class => {
            let local = project_local(w, v)?;
            let mut scores = FeatureMap::zeros(v.side(), attrs.rows());
            for loc in 0..local.locations() {
                let s = attrs.mul_vec(local.at(loc));
                scores.at_mut(loc).copy_from_slice(&s);
            }
            let pooled = pool(&scores, cfg.method);
            let a = pool(&local, cfg.method).values;
            (Some(local), a, pooled.values, pooled.argmax)
        }
    };
    Ok(ForwardTrace {
        local_semantic,
        pooled_attribute,
        logits,
        argmax_locations,
        pooling: cfg,
        active_class_ids: classifier.class_ids().to_vec(),
        side: v.side(),
        depth: v.depth(),
    })
}

fn check_shapes<T: Scalar>(
    w: &Matrix<T>,
    classifier: &Classifier<T>,
    v: &FeatureMap<T>,
) -> Result<()> {
    if w.cols() != v.depth() {
        return Err(Error::Shape(format!(
            "weights have {} columns, features have depth {}",
            w.cols(),
            v.depth()
        )));
    }
    if w.rows() != classifier.num_attributes() {
        return Err(Error::Shape(format!(
            "weights have {} rows, classifier has {} attributes",
            w.rows(),
            classifier.num_attributes()
        )));
    }
    Ok(())
}

/// Gradient of the loss with respect to `W`, given `dz = ∂loss/∂logits`.
pub fn backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    v: &FeatureMap<T>,
    classifier: &Classifier<T>,
    dz: &[T],
) -> Result<Matrix<T>> {
    let mut grad = Matrix::zeros(classifier.num_attributes(), v.depth());
    backward_into(trace, v, classifier, dz, &mut grad)?;
    Ok(grad)
}

/// Adds the gradient of one example into `grad`.
///
/// Max pooling routes each pooled channel's gradient to its recorded argmax
/// location only.
pub fn backward_into<T: Scalar>(
    trace: &ForwardTrace<T>,
    v: &FeatureMap<T>,
    classifier: &Classifier<T>,
    dz: &[T],
    grad: &mut Matrix<T>,
) -> Result<()> {
    let l = classifier.num_attributes();
    let d = v.depth();
    if trace.side != v.side() || trace.depth != d {
        return Err(Error::TraceMismatch(format!(
            "trace recorded {}x{}x{}, features are {}x{}x{}",
            trace.side,
            trace.side,
            trace.depth,
            v.side(),
            v.side(),
            d
        )));
    }
    if trace.active_class_ids != classifier.class_ids() {
        return Err(Error::TraceMismatch("active class ids differ".into()));
    }
    if dz.len() != trace.logits.len() {
        return Err(Error::TraceMismatch(format!(
            "dz has {} entries, trace has {} logits",
            dz.len(),
            trace.logits.len()
        )));
    }
    if grad.rows() != l || grad.cols() != d {
        return Err(Error::Shape(format!(
            "gradient buffer is {}x{}, expected {l}x{d}",
            grad.rows(),
            grad.cols()
        )));
    }
    let attrs = classifier.rows();
    let argmax = || {
        trace
            .argmax_locations
            .as_ref()
            .ok_or_else(|| Error::TraceMismatch("max pooling trace without argmax".into()))
    };

    match (trace.pooling.method, trace.pooling.space) {
        (PoolMethod::Gap, _) => {
            let da = attrs.tr_mul_vec(dz);
            let mean = pool(v, PoolMethod::Gap).values;
            add_outer(grad, &da, &mean);
        }
        (PoolMethod::Gmp, PoolSpace::Visual) => {
            let arg = argmax()?;
            check_len(arg, d)?;
            let da = attrs.tr_mul_vec(dz);
            let pooled: Vec<T> = arg
                .iter()
                .enumerate()
                .map(|(k, &loc)| v.at(loc)[k])
                .collect();
            add_outer(grad, &da, &pooled);
        }
        (PoolMethod::Gmp, PoolSpace::Attribute) => {
            let arg = argmax()?;
            check_len(arg, l)?;
            let da = attrs.tr_mul_vec(dz);
            for (row, (&g, &loc)) in da.iter().zip(arg).enumerate() {
                if g == T::zero() {
                    continue;
                }
                axpy(grad.row_mut(row), g, v.at(loc));
            }
        }
        (PoolMethod::Gmp, PoolSpace::Class) => {
            let arg = argmax()?;
            check_len(arg, dz.len())?;
            for (c, (&g, &loc)) in dz.iter().zip(arg).enumerate() {
                if g == T::zero() {
                    continue;
                }
                let x = v.at(loc);
                for (row, &a) in attrs.row(c).iter().enumerate() {
                    axpy(grad.row_mut(row), g * a, x);
                }
            }
        }
    }
    Ok(())
}

fn check_len(arg: &[usize], expected: usize) -> Result<()> {
    if arg.len() != expected {
        return Err(Error::TraceMismatch(format!(
            "{} argmax entries, expected {expected}",
            arg.len()
        )));
    }
    Ok(())
}

fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn add_outer<T: Scalar>(grad: &mut Matrix<T>, left: &[T], right: &[T]) {
    for (row, &g) in left.iter().enumerate() {
        if g != T::zero() {
            axpy(grad.row_mut(row), g, right);
        }
    }
}

/// Trained head plus the normalized class table it is evaluated against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: EmbeddingWeights,
    pub pooling: PoolingConfig,
    /// Row-normalized `C × L` attribute matrix over every class.
    pub attributes: Matrix<f32>,
}

impl Checkpoint {
    /// Binary layout, all little-endian:
    /// `L:u32, D:u32, W:[f32; L*D], method:u8, space:u8, C:u32, A:[f32; C*L]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let w = &self.weights;
        let mut out =
            Vec::with_capacity(14 + 4 * (w.as_slice().len() + self.attributes.as_slice().len()));
        out.extend_from_slice(&(w.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(w.cols() as u32).to_le_bytes());
        for x in w.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.push(match self.pooling.method {
            PoolMethod::Gap => 0,
            PoolMethod::Gmp => 1,
        });
        out.push(match self.pooling.space {
            PoolSpace::Visual => 0,
            PoolSpace::Attribute => 1,
            PoolSpace::Class => 2,
        });
        out.extend_from_slice(&(self.attributes.rows() as u32).to_le_bytes());
        for x in self.attributes.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let l = cur.u32()? as usize;
        let d = cur.u32()? as usize;
        let weights = Matrix::new(l, d, cur.f32s(l * d)?)?;
        let method = match cur.u8()? {
            0 => PoolMethod::Gap,
            1 => PoolMethod::Gmp,
            x => return Err(checkpoint_err(format!("bad pooling method tag {x}"))),
        };
        let space = match cur.u8()? {
            0 => PoolSpace::Visual,
            1 => PoolSpace::Attribute,
            2 => PoolSpace::Class,
            x => return Err(checkpoint_err(format!("bad pooling space tag {x}"))),
        };
        let c = cur.u32()? as usize;
        let attributes = Matrix::new(c, l, cur.f32s(c * l)?)?;
        if cur.pos != bytes.len() {
            return Err(checkpoint_err(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self {
            weights,
            pooling: PoolingConfig::new(method, space),
            attributes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Classifier over every class in the checkpoint.
    pub fn joint_classifier(&self) -> Result<Classifier> {
        Classifier::from_normalized(
            self.attributes.clone(),
            (0..self.attributes.rows()).collect(),
        )
    }
}

fn checkpoint_err(message: String) -> Error {
    Error::Parse {
        what: "checkpoint".into(),
        message,
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(checkpoint_err("truncated".into()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}
