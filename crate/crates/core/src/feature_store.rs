//! On-disk dataset of cached local CNN features.
//!
//! A store is a directory holding:
//!
//! ```text
//! manifest.json    shapes, class names, relative file paths, dtype = "f32le"
//! features.bin     N records of M*M*D little-endian f32, (row, column, channel)
//! labels.bin       N little-endian u32 class ids
//! attributes.bin   C*L little-endian f32, one row per class
//! splits.json      seen/unseen classes and train/test image indices
//! ```
//!
//! [`synthesize_dataset`] builds desk-scale stores in which every attribute is
//! planted at a single spatial location per image.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Matrix};

pub type LocalFeatureMap = FeatureMap<f32>;
/// `C × L` class/attribute description table, one row per class.
pub type AttributeMatrix = Matrix<f32>;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DTYPE_TAG: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub dataset_name: String,
    #[serde(rename = "M")]
    pub spatial_size: usize,
    #[serde(rename = "D")]
    pub feature_depth: usize,
    #[serde(rename = "L")]
    pub num_attributes: usize,
    #[serde(rename = "C")]
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub features_path: String,
    pub labels_path: String,
    pub attributes_path: String,
    pub splits_path: String,
    pub dtype: String,
    /// Directory the relative paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
    /// Record count derived from the feature blob size.
    #[serde(skip)]
    pub num_records: usize,
}

impl Manifest {
    pub fn record_len(&self) -> usize {
        self.spatial_size * self.spatial_size * self.feature_depth
    }

    pub fn record_bytes(&self) -> usize {
        self.record_len() * 4
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn default_for(
        name: &str,
        m: usize,
        d: usize,
        l: usize,
        class_names: Vec<String>,
        n: usize,
    ) -> Self {
        Manifest {
            dataset_name: name.to_string(),
            spatial_size: m,
            feature_depth: d,
            num_attributes: l,
            num_classes: class_names.len(),
            class_names,
            features_path: "features.bin".into(),
            labels_path: "labels.bin".into(),
            attributes_path: "attributes.bin".into(),
            splits_path: "splits.json".into(),
            dtype: DTYPE_TAG.into(),
            root: PathBuf::new(),
            num_records: n,
        }
    }
}

/// Seen/unseen class partition plus image index lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub seen_class_ids: Vec<usize>,
    pub unseen_class_ids: Vec<usize>,
    pub train_indices: Vec<usize>,
    pub test_seen_indices: Vec<usize>,
    pub test_unseen_indices: Vec<usize>,
}

impl Splits {
    /// Checks every split invariant against `labels` and the class count.
    pub fn validate(&self, labels: &[u32], num_classes: usize) -> Result<()> {
        let seen = unique_set(&self.seen_class_ids, num_classes, "seen_class_ids")?;
        let unseen = unique_set(&self.unseen_class_ids, num_classes, "unseen_class_ids")?;
        if let Some(c) = seen.intersection(&unseen).next() {
            return Err(Error::Splits(format!("class {c} is both seen and unseen")));
        }
        let n = labels.len();
        let lists: [(&str, &[usize], &BTreeSet<usize>); 3] = [
            ("train_indices", &self.train_indices, &seen),
            ("test_seen_indices", &self.test_seen_indices, &seen),
            ("test_unseen_indices", &self.test_unseen_indices, &unseen),
        ];
        for (name, list, allowed) in lists {
            unique_set(list, n, name)?;
            for &i in list {
                let y = labels[i] as usize;
                if !allowed.contains(&y) {
                    return Err(Error::Splits(format!(
                        "{name}: image {i} has label {y} outside its class set"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_seen(&self, num_classes: usize) -> Vec<bool> {
        let mut mask = vec![false; num_classes];
        for &c in &self.seen_class_ids {
            mask[c] = true;
        }
        mask
    }
}

fn unique_set(list: &[usize], bound: usize, name: &str) -> Result<BTreeSet<usize>> {
    let mut set = BTreeSet::new();
    for &i in list {
        if i >= bound {
            return Err(Error::Splits(format!(
                "{name}: index {i} out of range (bound {bound})"
            )));
        }
        if !set.insert(i) {
            return Err(Error::Splits(format!("{name}: duplicate index {i}")));
        }
    }
    Ok(set)
}

#[derive(Debug, Clone)]
enum Records {
    Memory(Arc<Vec<f32>>),
    File(Arc<File>),
}

/// Random-access view over the feature records and their labels.
///
/// Cloning is cheap and clones share the underlying buffer or file handle;
/// reads use positional I/O so concurrent readers do not interfere.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    manifest: Manifest,
    labels: Arc<Vec<u32>>,
    records: Records,
}

impl FeatureSet {
    /// Builds an in-memory set from already materialized maps.
    pub fn from_maps(
        manifest: Manifest,
        maps: &[LocalFeatureMap],
        labels: Vec<u32>,
    ) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if maps.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature maps but {} labels",
                maps.len(),
                labels.len()
            )));
        }
        let mut data = Vec::with_capacity(maps.len() * manifest.record_len());
        for (i, map) in maps.iter().enumerate() {
            if map.side() != manifest.spatial_size || map.depth() != manifest.feature_depth {
                return Err(Error::Shape(format!(
                    "feature map {i} is {}x{}x{}, expected {}x{}x{}",
                    map.side(),
                    map.side(),
                    map.depth(),
                    manifest.spatial_size,
                    manifest.spatial_size,
                    manifest.feature_depth
                )));
            }
            if !map.is_finite() {
                return Err(Error::NonFinite(format!("feature map {i}")));
            }
            data.extend_from_slice(map.as_slice());
        }
        if let Some(&y) = labels.iter().find(|&&y| y as usize >= manifest.num_classes) {
            return Err(Error::invalid(
                "labels",
                format!("label {y} >= C = {}", manifest.num_classes),
            ));
        }
        let mut manifest = manifest;
        manifest.num_records = maps.len();
        Ok(Self {
            manifest,
            labels: Arc::new(labels),
            records: Records::Memory(Arc::new(data)),
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Result<usize> {
        self.labels
            .get(index)
            .map(|&y| y as usize)
            .ok_or(Error::OutOfRange {
                index,
                len: self.len(),
            })
    }

    /// Reads record `index`.
    pub fn get(&self, index: usize) -> Result<LocalFeatureMap> {
        if index >= self.len() {
            return Err(Error::OutOfRange {
                index,
                len: self.len(),
            });
        }
        let m = &self.manifest;
        let len = m.record_len();
        let values = match &self.records {
            Records::Memory(buf) => buf[index * len..(index + 1) * len].to_vec(),
            Records::File(file) => {
                let mut bytes = vec![0u8; m.record_bytes()];
                file.read_exact_at(&mut bytes, (index * m.record_bytes()) as u64)
                    .map_err(|e| Error::io(m.resolve(&m.features_path), e))?;
                decode_f32(&bytes)
            }
        };
        let map = FeatureMap::new(m.spatial_size, m.feature_depth, values)?;
        if !map.is_finite() {
            return Err(Error::NonFinite(format!("feature record {index}")));
        }
        Ok(map)
    }

    /// Reads record `index` together with its label.
    pub fn example(&self, index: usize) -> Result<(LocalFeatureMap, usize)> {
        Ok((self.get(index)?, self.label(index)?))
    }
}

/// A fully opened store.
#[derive(Debug, Clone)]
pub struct Store {
    pub features: FeatureSet,
    pub attributes: AttributeMatrix,
    pub splits: Splits,
}

impl Store {
    pub fn manifest(&self) -> &Manifest {
        self.features.manifest()
    }
}

/// Reads and validates a manifest. `path` may be the manifest file or the
/// store directory containing it.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: file.display().to_string(),
        message: e.to_string(),
    })?;
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();

    let dataset_name = str_field(&value, "dataset_name")?;
    let m = positive_field(&value, "M")?;
    let d = positive_field(&value, "D")?;
    let l = positive_field(&value, "L")?;
    let c = positive_field(&value, "C")?;
    let class_names = match value.get("class_names") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::manifest("class_names", "entries must be strings"))
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(Error::manifest("class_names", "expected a list")),
        None => return Err(Error::manifest("class_names", "missing")),
    };
    if class_names.len() != c {
        return Err(Error::manifest(
            "class_names",
            format!(
                "class_names length mismatch: {} names for C = {c}",
                class_names.len()
            ),
        ));
    }
    let dtype = str_field(&value, "dtype")?;
    if dtype != DTYPE_TAG {
        return Err(Error::manifest(
            "dtype",
            format!("unsupported dtype {dtype:?}, expected {DTYPE_TAG:?}"),
        ));
    }

    let mut manifest = Manifest {
        dataset_name,
        spatial_size: m,
        feature_depth: d,
        num_attributes: l,
        num_classes: c,
        class_names,
        features_path: str_field(&value, "features_path")?,
        labels_path: str_field(&value, "labels_path")?,
        attributes_path: str_field(&value, "attributes_path")?,
        splits_path: str_field(&value, "splits_path")?,
        dtype,
        root,
        num_records: 0,
    };

    let blob_len = file_len(&manifest, "features_path", &manifest.features_path)?;
    let record = manifest.record_bytes() as u64;
    if blob_len % record != 0 {
        return Err(Error::manifest(
            "features_path",
            format!("blob size not a multiple of record size ({blob_len} bytes, record {record})"),
        ));
    }
    let n = (blob_len / record) as usize;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    manifest.num_records = n;

    let labels_len = file_len(&manifest, "labels_path", &manifest.labels_path)?;
    if labels_len != 4 * n as u64 {
        return Err(Error::manifest(
            "labels_path",
            format!(
                "expected {} bytes for {n} labels, found {labels_len}",
                4 * n
            ),
        ));
    }
    let attrs_len = file_len(&manifest, "attributes_path", &manifest.attributes_path)?;
    if attrs_len != (4 * c * l) as u64 {
        return Err(Error::manifest(
            "attributes_path",
            format!(
                "expected {} bytes for {c}x{l} attributes, found {attrs_len}",
                4 * c * l
            ),
        ));
    }

    let labels = read_labels(&manifest)?;
    if let Some(&y) = labels.iter().find(|&&y| y as usize >= c) {
        return Err(Error::manifest(
            "labels_path",
            format!("label {y} out of range for C = {c}"),
        ));
    }
    let attrs = read_attributes(&manifest)?;
    if !attrs.is_finite() {
        return Err(Error::manifest(
            "attributes_path",
            "non-finite attribute value",
        ));
    }
    let splits = read_splits(&manifest)?;
    splits.validate(&labels, c)?;
    Ok(manifest)
}

/// Opens the feature blob of a validated manifest for random access.
pub fn open_features(manifest: &Manifest) -> Result<FeatureSet> {
    let path = manifest.resolve(&manifest.features_path);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let labels = read_labels(manifest)?;
    if labels.len() != manifest.num_records {
        return Err(Error::Shape(format!(
            "{} labels for {} records",
            labels.len(),
            manifest.num_records
        )));
    }
    Ok(FeatureSet {
        manifest: manifest.clone(),
        labels: Arc::new(labels),
        records: Records::File(Arc::new(file)),
    })
}

/// Loads manifest, features, attributes and splits from a store directory.
pub fn open_store(path: &Path) -> Result<Store> {
    let manifest = load_manifest(path)?;
    let features = open_features(&manifest)?;
    let attributes = read_attributes(&manifest)?;
    let splits = read_splits(&manifest)?;
    Ok(Store {
        features,
        attributes,
        splits,
    })
}

/// Writes a complete store into `dir` and returns its manifest.
pub fn write_store(
    dir: &Path,
    name: &str,
    class_names: Vec<String>,
    features: &[LocalFeatureMap],
    labels: &[u32],
    attrs: &AttributeMatrix,
    splits: &Splits,
) -> Result<Manifest> {
    let first = features.first().ok_or(Error::EmptyDataset)?;
    let (m, d) = (first.side(), first.depth());
    if class_names.len() != attrs.rows() {
        return Err(Error::Shape(format!(
            "{} class names for {} attribute rows",
            class_names.len(),
            attrs.rows()
        )));
    }
    let manifest = Manifest::default_for(name, m, d, attrs.cols(), class_names, features.len());
    // Validates shapes, finiteness and labels.
    FeatureSet::from_maps(manifest.clone(), features, labels.to_vec())?;
    if !attrs.is_finite() {
        return Err(Error::NonFinite("attribute matrix".into()));
    }
    splits.validate(labels, attrs.rows())?;

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(features.len() * manifest.record_bytes());
    for map in features {
        for &x in map.as_slice() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_file(&dir.join(&manifest.features_path), &blob)?;
    let label_bytes: Vec<u8> = labels.iter().flat_map(|y| y.to_le_bytes()).collect();
    write_file(&dir.join(&manifest.labels_path), &label_bytes)?;
    let attr_bytes: Vec<u8> = attrs
        .as_slice()
        .iter()
        .flat_map(|x| x.to_le_bytes())
        .collect();
    write_file(&dir.join(&manifest.attributes_path), &attr_bytes)?;
    let splits_text = serde_json::to_string_pretty(splits).expect("splits serialize");
    write_file(&dir.join(&manifest.splits_path), splits_text.as_bytes())?;
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serialize");
    write_file(&dir.join(MANIFEST_FILE), manifest_text.as_bytes())?;

    let mut written = manifest;
    written.root = dir.to_path_buf();
    Ok(written)
}

/// Writes an in-memory [`FeatureSet`] (typically synthetic) to `dir`.
pub fn write_feature_set(
    dir: &Path,
    set: &FeatureSet,
    attrs: &AttributeMatrix,
    splits: &Splits,
) -> Result<Manifest> {
    let maps = (0..set.len())
        .map(|i| set.get(i))
        .collect::<Result<Vec<_>>>()?;
    let m = set.manifest();
    write_store(
        dir,
        &m.dataset_name,
        m.class_names.clone(),
        &maps,
        set.labels(),
        attrs,
        splits,
    )
}

pub fn read_attributes(manifest: &Manifest) -> Result<AttributeMatrix> {
    let path = manifest.resolve(&manifest.attributes_path);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Matrix::new(
        manifest.num_classes,
        manifest.num_attributes,
        decode_f32(&bytes),
    )
}

pub fn read_labels(manifest: &Manifest) -> Result<Vec<u32>> {
    let path = manifest.resolve(&manifest.labels_path);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::manifest("labels_path", "length not a multiple of 4"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn read_splits(manifest: &Manifest) -> Result<Splits> {
    let path = manifest.resolve(&manifest.splits_path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    })
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn file_len(manifest: &Manifest, field: &str, rel: &str) -> Result<u64> {
    let path = manifest.resolve(rel);
    fs::metadata(&path)
        .map(|m| m.len())
        .map_err(|e| Error::manifest(field, format!("{}: {e}", path.display())))
}

fn str_field(value: &Value, field: &str) -> Result<String> {
    match value.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::manifest(field, "expected a string")),
        None => Err(Error::manifest(field, "missing")),
    }
}

fn positive_field(value: &Value, field: &str) -> Result<usize> {
    match value.get(field) {
        Some(v) => match v.as_u64() {
            Some(x) if x >= 1 => Ok(x as usize),
            _ => Err(Error::manifest(field, "expected a positive integer")),
        },
        None => Err(Error::manifest(field, "missing")),
    }
}

/// Parameters of the planted-attribute generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub spatial_size: usize,
    pub feature_depth: usize,
    pub num_attributes: usize,
    pub num_classes: usize,
    pub per_class_count: usize,
    pub num_seen: usize,
    pub signal_strength: f32,
    pub noise_sigma: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            spatial_size: 4,
            feature_depth: 64,
            num_attributes: 16,
            num_classes: 20,
            per_class_count: 50,
            num_seen: 14,
            signal_strength: 2.0,
            noise_sigma: 0.3,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("M", self.spatial_size),
            ("D", self.feature_depth),
            ("L", self.num_attributes),
            ("C", self.num_classes),
            ("per-class", self.per_class_count),
            ("num-seen", self.num_seen),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.num_seen >= self.num_classes {
            return Err(Error::invalid(
                "num-seen",
                format!(
                    "num_seen ({}) must be < C ({})",
                    self.num_seen, self.num_classes
                ),
            ));
        }
        if self.feature_depth < self.num_attributes {
            return Err(Error::invalid(
                "D",
                format!(
                    "D ({}) must be >= L ({})",
                    self.feature_depth, self.num_attributes
                ),
            ));
        }
        if self.per_class_count < 2 {
            return Err(Error::invalid(
                "per-class",
                "need at least 2 images per class to form train and test splits",
            ));
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return Err(Error::invalid("signal", "must be finite and non-negative"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Output of [`synthesize_dataset`], including the generator's ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub features: FeatureSet,
    pub attributes: AttributeMatrix,
    pub splits: Splits,
    /// Channels carrying each attribute's signal; disjoint across attributes.
    pub channel_sets: Vec<Vec<usize>>,
    /// `planted[image][attribute]` = flat spatial index of the planted signal,
    /// `None` when the class lacks the attribute.
    pub planted: Vec<Vec<Option<usize>>>,
}

impl SyntheticDataset {
    pub fn into_store(self) -> Store {
        Store {
            features: self.features,
            attributes: self.attributes,
            splits: self.splits,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        write_feature_set(dir, &self.features, &self.attributes, &self.splits)
    }
}

/// Probability that a class has a given attribute.
const ATTRIBUTE_DENSITY: f64 = 0.35;
/// Fraction of each seen class's images held out for testing.
const TEST_SEEN_FRACTION: f64 = 0.2;

/// Generates a planted-attribute dataset; a pure function of `(spec, seed)`.
pub fn synthesize_dataset(spec: &SynthSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, d, l, c) = (
        spec.spatial_size,
        spec.feature_depth,
        spec.num_attributes,
        spec.num_classes,
    );

    let mut attr_rows = Vec::with_capacity(c);
    for _ in 0..c {
        let mut row: Vec<f32> = (0..l)
            .map(|_| {
                if rng.random_bool(ATTRIBUTE_DENSITY) {
                    rng.random_range(0.25f32..=1.0)
                } else {
                    0.0
                }
            })
            .collect();
        if row.iter().all(|&x| x == 0.0) {
            let j = rng.random_range(0..l);
            row[j] = rng.random_range(0.25f32..=1.0);
        }
        attr_rows.push(row);
    }
    let attributes = Matrix::from_rows(&attr_rows)?;

    let mut channels: Vec<usize> = (0..d).collect();
    channels.shuffle(&mut rng);
    let block = d / l;
    let channel_sets: Vec<Vec<usize>> = (0..l)
        .map(|a| {
            let mut set = channels[a * block..(a + 1) * block].to_vec();
            set.sort_unstable();
            set
        })
        .collect();

    let mut class_order: Vec<usize> = (0..c).collect();
    class_order.shuffle(&mut rng);
    let mut seen_class_ids = class_order[..spec.num_seen].to_vec();
    let mut unseen_class_ids = class_order[spec.num_seen..].to_vec();
    seen_class_ids.sort_unstable();
    unseen_class_ids.sort_unstable();

    let noise = Normal::new(0.0f32, spec.noise_sigma)
        .map_err(|e| Error::invalid("noise", e.to_string()))?;
    let locations = m * m;
    let n = c * spec.per_class_count;
    let mut maps = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut planted = Vec::with_capacity(n);
    for (class, row) in attr_rows.iter().enumerate() {
        for _ in 0..spec.per_class_count {
            let mut map = FeatureMap::<f32>::zeros(m, d);
            for x in map.as_mut_slice() {
                *x = noise.sample(&mut rng).max(0.0);
            }
            let mut where_planted = vec![None; l];
            for (a, &strength) in row.iter().enumerate() {
                if strength <= 0.0 {
                    continue;
                }
                let loc = rng.random_range(0..locations);
                where_planted[a] = Some(loc);
                let cell = map.at_mut(loc);
                for &ch in &channel_sets[a] {
                    cell[ch] += spec.signal_strength * strength;
                }
            }
            maps.push(map);
            labels.push(class as u32);
            planted.push(where_planted);
        }
    }

    let mut train_indices = Vec::new();
    let mut test_seen_indices = Vec::new();
    let mut test_unseen_indices = Vec::new();
    let k = spec.per_class_count;
    for class in 0..c {
        let mut idx: Vec<usize> = (class * k..(class + 1) * k).collect();
        if seen_class_ids.binary_search(&class).is_ok() {
            idx.shuffle(&mut rng);
            let n_test = ((k as f64 * TEST_SEEN_FRACTION).round() as usize).clamp(1, k - 1);
            test_seen_indices.extend_from_slice(&idx[..n_test]);
            train_indices.extend_from_slice(&idx[n_test..]);
        } else {
            test_unseen_indices.extend(idx);
        }
    }
    train_indices.sort_unstable();
    test_seen_indices.sort_unstable();
    test_unseen_indices.sort_unstable();
    let splits = Splits {
        seen_class_ids,
        unseen_class_ids,
        train_indices,
        test_seen_indices,
        test_unseen_indices,
    };

    let class_names = (0..c).map(|i| format!("class_{i:03}")).collect();
    let manifest = Manifest::default_for("synthetic", m, d, l, class_names, n);
    let features = FeatureSet::from_maps(manifest, &maps, labels)?;
    splits.validate(features.labels(), c)?;
    Ok(SyntheticDataset {
        features,
        attributes,
        splits,
        channel_sets,
        planted,
    })
}
