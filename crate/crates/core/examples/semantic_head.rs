//! One forward and backward pass through the head by hand, in every
//! pooling configuration.
//!
//! ```bash
//! cargo run --example semantic_head
//! ```

use selar::semantic_head::{backward, forward};
use selar::trainer::softmax_cross_entropy;
use selar::{Classifier, FeatureMap, Matrix, PoolingConfig};

fn main() -> anyhow::Result<()> {
    // 2x2 locations, 3 feature channels, 2 attributes, 3 classes.
    let v = FeatureMap::new(
        2,
        3,
        vec![
            0.1, 0.0, 0.2, //
            0.9, 0.1, 0.0, //
            0.0, 0.0, 0.8, //
            0.2, 0.3, 0.1,
        ],
    )?;
    let w = Matrix::from_rows(&[vec![1.0, 0.2, 0.0], vec![0.0, 0.1, 1.0]])?;
    let attrs = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]])?;
    let classifier = Classifier::joint(&attrs)?;
    let label = 2;

    for cfg in PoolingConfig::all() {
        let trace = forward(&w, &classifier, &v, cfg)?;
        let (loss, dz) = softmax_cross_entropy(&trace.logits, label)?;
        let grad = backward(&trace, &v, &classifier, &dz)?;
        println!(
            "{cfg:<16} logits {:?} loss {loss:.4} argmax {:?}",
            trace
                .logits
                .iter()
                .map(|z| format!("{z:.3}"))
                .collect::<Vec<_>>(),
            trace.argmax_locations
        );
        println!(
            "{:<16} dW {:?}",
            "",
            grad.as_slice()
                .iter()
                .map(|g| format!("{g:+.3}"))
                .collect::<Vec<_>>()
        );
    }
    Ok(())
}
