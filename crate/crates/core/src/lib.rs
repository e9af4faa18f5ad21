//! Zero-shot classification head over cached local CNN features.
//!
//! Each image is an `M×M×D` grid of local features. A bias-free projection
//! `W` maps every location into attribute space, the grid is pooled (average
//! or max, placed in visual, attribute or class space), and the result is
//! scored against fixed, L2-normalized class attribute vectors. Max pooling in
//! attribute space (SELAR) pushes each attribute's map to a single location.
//!
//! Modules follow the workflow:
//!
//! * [`feature_store`]: on-disk format, random-access reader, synthetic data
//! * [`semantic_head`]: forward pass with traces, exact backward, checkpoints
//! * [`trainer`]: softmax cross-entropy and momentum SGD on seen classes
//! * [`evaluator`]: per-class accuracies, harmonic mean, calibration
//! * [`attribute_maps`]: attribute and class activation maps, PGM export
//! * [`cli`]: the `selar` command and shared workflows
//!
//! Runnable walkthroughs live in `examples/`.

pub mod attribute_maps;
pub mod cli;
pub mod error;
pub mod evaluator;
pub mod feature_store;
pub mod semantic_head;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use evaluator::{GzslMetrics, Model};
pub use feature_store::{
    AttributeMatrix, FeatureSet, LocalFeatureMap, Manifest, Splits, Store, SynthSpec,
};
pub use semantic_head::{
    Checkpoint, Classifier, EmbeddingWeights, ForwardTrace, PoolMethod, PoolSpace, PoolingConfig,
};
pub use tensor::{FeatureMap, Matrix, Scalar};
pub use trainer::{TrainConfig, TrainHistory};
