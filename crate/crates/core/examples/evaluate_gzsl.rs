//! Generalized zero-shot evaluation: per-class accuracy on unseen and seen
//! test images, their harmonic mean and the seen/unseen ratio.
//!
//! ```bash
//! cargo run --release --example evaluate_gzsl
//! ```

use selar::cli::fit_model;
use selar::evaluator::{evaluate_gzsl, SplitKind};
use selar::feature_store::{synthesize_dataset, SynthSpec};
use selar::TrainConfig;

fn main() -> anyhow::Result<()> {
    let store = synthesize_dataset(&SynthSpec::default(), 1)?.into_store();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        seed: 1,
        ..TrainConfig::default()
    };
    let (model, _) = fit_model(&store, &cfg)?;
    let eval = evaluate_gzsl(&model, &store.features, &store.splits, 0.0)?;
    let m = eval.metrics;
    println!("acc_u {:.4}  acc_s {:.4}  H {:.4}", m.acc_u, m.acc_s, m.h);
    match m.s_over_u {
        Some(r) => println!("S/U {r:.3}"),
        None => println!("S/U undefined (no unseen image classified correctly)"),
    }

    // Where do unseen images go wrong?
    let unseen: Vec<_> = eval
        .predictions
        .iter()
        .filter(|p| p.split == SplitKind::Unseen)
        .collect();
    let into_seen = unseen.iter().filter(|p| model.seen[p.predicted]).count();
    println!(
        "{into_seen} of {} unseen test images were assigned a seen class",
        unseen.len()
    );
    Ok(())
}
