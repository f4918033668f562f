//! Builds a small synthetic benchmark: healthy phantoms for training plus
//! anomalous test images with pixel masks and bounding boxes.
//!
//! Run: cargo run --release --example synth_dataset

use std::path::Path;

use thor::data::{build_dataset, DatasetConfig, Split};

fn main() -> anyhow::Result<()> {
    let out = Path::new("example-out/dataset");
    let config = DatasetConfig {
        seed: 7,
        size: (64, 64),
        n_train: 16,
        n_test_healthy: 4,
        n_test_anomalous_per_class: 3,
    };
    let manifest = build_dataset(&config, out)?;

    println!("manifest hash: {}", manifest.hash());
    for split in [Split::Train, Split::TestHealthy, Split::TestAnomalous] {
        println!(
            "{:?}: {} records",
            split,
            manifest.records_in(split).count()
        );
    }
    for rec in manifest.records_in(Split::TestAnomalous) {
        println!(
            "  {} [{}] boxes: {:?}",
            rec.image,
            rec.size_class.expect("anomalous records are stratified"),
            rec.boxes.as_deref().unwrap_or_default()
        );
    }
    println!("wrote dataset to {}", out.display());
    Ok(())
}
