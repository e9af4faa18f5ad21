//! Build a synthetic store on disk, reopen it and read records at random.
//!
//! ```bash
//! cargo run --example feature_store
//! ```

use selar::feature_store::{load_manifest, open_store, synthesize_dataset, SynthSpec};

fn main() -> anyhow::Result<()> {
    let spec = SynthSpec {
        num_classes: 10,
        num_seen: 7,
        per_class_count: 20,
        ..SynthSpec::default()
    };
    let ds = synthesize_dataset(&spec, 42)?;
    let dir = tempfile::tempdir()?;
    ds.write(dir.path())?;

    let manifest = load_manifest(dir.path())?;
    println!(
        "{}: {} records of {}x{}x{} f32, L={} C={}",
        manifest.dataset_name,
        manifest.num_records,
        manifest.spatial_size,
        manifest.spatial_size,
        manifest.feature_depth,
        manifest.num_attributes,
        manifest.num_classes
    );
    for entry in std::fs::read_dir(dir.path())? {
        let entry = entry?;
        println!(
            "  {:<16} {:>8} bytes",
            entry.file_name().to_string_lossy(),
            entry.metadata()?.len()
        );
    }

    let store = open_store(dir.path())?;
    for i in [0, 57, manifest.num_records - 1] {
        let (v, label) = store.features.example(i)?;
        let peak = v.as_slice().iter().copied().fold(f32::MIN, f32::max);
        println!(
            "record {i:>3}: class {} ({}), max activation {peak:.3}",
            label, manifest.class_names[label]
        );
    }
    println!(
        "splits: {} train, {} test seen, {} test unseen",
        store.splits.train_indices.len(),
        store.splits.test_seen_indices.len(),
        store.splits.test_unseen_indices.len()
    );
    Ok(())
}
