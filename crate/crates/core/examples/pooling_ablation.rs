//! Average vs. max pooling in the visual, attribute and class spaces.
//! Average pooling gives the same logits in every space; max pooling does not.
//!
//! ```bash
//! cargo run --release --example pooling_ablation
//! ```

use selar::cli::{fit_model, pooling_ablation};
use selar::evaluator::{mean_off_attribute_mass, sparsity_diagnostic};
use selar::feature_store::{synthesize_dataset, SynthSpec};
use selar::{PoolingConfig, TrainConfig};

fn main() -> anyhow::Result<()> {
    let store = synthesize_dataset(&SynthSpec::default(), 0)?.into_store();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let table = pooling_ablation(&store, &cfg, 2)?;
    println!("{:<16}{:>8}{:>8}{:>8}", "pooling", "U", "S", "H");
    for row in &table.rows {
        println!(
            "{:<16}{:>8.3}{:>8.3}{:>8.3}",
            row.label, row.metrics.acc_u, row.metrics.acc_s, row.metrics.h
        );
    }
    for (space, m) in &table.gap_by_space {
        println!("GAP in {space:<10} H {:.6}", m.h);
    }

    // Max pooling in attribute space yields sparser attribute vectors.
    for pooling in [PoolingConfig::BASELINE, PoolingConfig::SELAR] {
        let (model, _) = fit_model(
            &store,
            &TrainConfig {
                pooling,
                ..cfg.clone()
            },
        )?;
        let rows = sparsity_diagnostic(&model, &store.features, &store.splits)?;
        println!(
            "{pooling}: mean off-attribute mass {:.3}",
            mean_off_attribute_mass(&rows)
        );
    }
    Ok(())
}
