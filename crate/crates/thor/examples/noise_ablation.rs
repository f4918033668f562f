//! Miniature noise-level ablation: sweeps starting levels for both methods
//! and writes the line-plot CSV.
//!
//! Run: cargo run --release --example noise_ablation (takes a few minutes)

use std::path::Path;

use thor::data::{build_dataset, DatasetConfig, Split};
use thor::denoiser::{train, DenoiserConfig, TrainConfig};
use thor::eval::{ablate, Method};
use thor::grid::ImageGrid;
use thor::io::read_png16;
use thor::noise::NoiseSpec;
use thor::schedule::NoiseSchedule;

fn main() -> anyhow::Result<()> {
    let out = Path::new("example-out/ablation");
    let data_dir = out.join("data");
    let config = DatasetConfig {
        seed: 7,
        size: (64, 64),
        n_train: 32,
        n_test_healthy: 2,
        n_test_anomalous_per_class: 2,
    };
    let manifest = build_dataset(&config, &data_dir)?;
    let images: Vec<ImageGrid> = manifest
        .records_in(Split::Train)
        .map(|rec| read_png16(&data_dir.join(&rec.image)))
        .collect::<thor::Result<_>>()?;

    let schedule = NoiseSchedule::linear(100, 1e-3, 0.2)?;
    let dcfg = DenoiserConfig {
        base_channels: 12,
        depth: 2,
        time_embed_dim: 16,
        image_size: (64, 64),
    };
    let mut tcfg = TrainConfig::new(NoiseSpec::gaussian(0));
    tcfg.epochs = 12;
    println!("training...");
    let model = train(&images, &schedule, &tcfg, &dcfg)?.model;

    let reports = ablate(
        &data_dir,
        &manifest,
        &[&model],
        &[Method::Ddpm, Method::Thor],
        &[25, 35, 50],
        1,
        Some(out),
    )?;
    for r in &reports {
        println!(
            "t={:3} {:5} {:8}  dice_avg {:.4}",
            r.t_start, r.method.to_string(), r.noise.to_string(), r.dice_avg
        );
    }
    println!("tables under {}", out.display());
    Ok(())
}
