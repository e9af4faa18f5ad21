//! Train the attribute-space max-pooling head and print the loss curve.
//!
//! ```bash
//! cargo run --release --example train_selar
//! ```

use selar::feature_store::{synthesize_dataset, SynthSpec};
use selar::trainer::{seen_classifier, train};
use selar::{Checkpoint, PoolingConfig, TrainConfig};

fn main() -> anyhow::Result<()> {
    let ds = synthesize_dataset(&SynthSpec::default(), 0)?;
    let seen = seen_classifier(&ds.attributes, &ds.splits)?;
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 15,
        pooling: PoolingConfig::SELAR,
        ..TrainConfig::default()
    };
    println!("{}", cfg.to_toml());

    let outcome = train(&ds.features, &ds.splits, &seen, &cfg)?;
    for e in &outcome.history.epochs {
        println!(
            "epoch {:>2}  loss {:.4}  train acc {:.3}",
            e.epoch, e.loss, e.train_acc
        );
    }

    let model = selar::Model::new(outcome.weights, cfg.pooling, &ds.attributes, &ds.splits)?;
    let bytes = model.to_checkpoint().to_bytes();
    let back = Checkpoint::from_bytes(&bytes)?;
    println!(
        "checkpoint: {} bytes, pooling {}",
        bytes.len(),
        back.pooling
    );
    Ok(())
}
