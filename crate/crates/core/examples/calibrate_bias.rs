//! Trade seen accuracy for unseen accuracy by lowering every seen-class
//! score by a constant, tuned on held-out images.
//!
//! ```bash
//! cargo run --release --example calibrate_bias
//! ```

use selar::cli::fit_model;
use selar::evaluator::{calibrate, hold_out, metrics_from_scores, score_images};
use selar::feature_store::{synthesize_dataset, SynthSpec};
use selar::TrainConfig;

fn main() -> anyhow::Result<()> {
    let store = synthesize_dataset(&SynthSpec::default(), 3)?.into_store();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let (model, _) = fit_model(&store, &cfg)?;

    let labels = store.features.labels();
    let (val_seen, test_seen) = hold_out(labels, &store.splits.test_seen_indices, 0.3)?;
    let (val_unseen, test_unseen) = hold_out(labels, &store.splits.test_unseen_indices, 0.3)?;
    let result = calibrate(&model, &store.features, &val_seen, &val_unseen, None)?;

    println!("{:>8} {:>7} {:>7} {:>7}", "gamma", "acc_u", "acc_s", "H");
    for (gamma, m) in result.sweep.iter().step_by(5) {
        println!(
            "{gamma:>8.4} {:>7.3} {:>7.3} {:>7.3}",
            m.acc_u, m.acc_s, m.h
        );
    }
    println!(
        "chosen gamma {:.4} (validation H {:.4})",
        result.gamma, result.metrics_at_gamma.h
    );

    let tu = score_images(&model, &store.features, &test_unseen)?;
    let ts = score_images(&model, &store.features, &test_seen)?;
    for gamma in [0.0, result.gamma] {
        let m = metrics_from_scores(&tu, &ts, &model.seen, gamma)?.metrics;
        println!(
            "held-out test at gamma {gamma:.4}: acc_u {:.3} acc_s {:.3} H {:.3}",
            m.acc_u, m.acc_s, m.h
        );
    }
    Ok(())
}
