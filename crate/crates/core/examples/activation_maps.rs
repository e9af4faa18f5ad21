//! Attribute and class activation maps for one test image, written as PGM
//! files next to an index.
//!
//! ```bash
//! cargo run --release --example activation_maps -- /tmp/maps
//! ```

use std::path::PathBuf;

use selar::attribute_maps::{export_heatmap_grid, upsample_bilinear};
use selar::cli::{fit_model, image_maps};
use selar::feature_store::{synthesize_dataset, SynthSpec};
use selar::TrainConfig;

fn main() -> anyhow::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("selar-maps"));
    let spec = SynthSpec {
        noise_sigma: 0.0,
        ..SynthSpec::default()
    };
    let ds = synthesize_dataset(&spec, 5)?;
    let store = ds.clone().into_store();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let (model, _) = fit_model(&store, &cfg)?;

    let index = store.splits.test_unseen_indices[0];
    let (maps, names) = image_maps(&store, &model, index, 3)?;
    for (map, name) in maps.iter().zip(&names) {
        let planted = match map.source {
            selar::attribute_maps::MapSource::Attribute(a) => {
                ds.planted[index][a].map(|p| p.to_string())
            }
            _ => None,
        };
        println!(
            "{:<14} peak at {} (planted at {})",
            name,
            map.argmax(),
            planted.unwrap_or_else(|| "-".into())
        );
    }
    let big = maps
        .iter()
        .map(|m| upsample_bilinear(m, 64))
        .collect::<selar::Result<Vec<_>>>()?;
    for path in export_heatmap_grid(&big, &names, &out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
