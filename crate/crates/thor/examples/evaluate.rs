//! End-to-end evaluation on a tiny synthetic benchmark: builds a dataset,
//! trains a small model, and compares plain diffusion against harmonized
//! restoration with the full metric suite.
//!
//! Run: cargo run --release --example evaluate (takes a few minutes)

use std::path::Path;

use thor::data::{build_dataset, DatasetConfig, Split};
use thor::denoiser::{train, DenoiserConfig, TrainConfig};
use thor::eval::{run_experiment, EvalSettings, Method};
use thor::grid::ImageGrid;
use thor::io::read_png16;
use thor::noise::NoiseSpec;
use thor::schedule::NoiseSchedule;

fn main() -> anyhow::Result<()> {
    let out = Path::new("example-out/evaluate");
    let data_dir = out.join("data");
    let config = DatasetConfig {
        seed: 7,
        size: (64, 64),
        n_train: 32,
        n_test_healthy: 4,
        n_test_anomalous_per_class: 3,
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
    println!("training on {} healthy images...", images.len());
    let model = train(&images, &schedule, &tcfg, &dcfg)?.model;

    for method in [Method::Ddpm, Method::Thor] {
        let settings = EvalSettings::new(method, 35, 1);
        let report = run_experiment(
            &data_dir,
            &manifest,
            &model,
            &settings,
            Some(&out.join(method.to_string())),
        )?;
        println!(
            "{method}: dice_avg {:.4} (small {:?} / medium {:?} / large {:?})  \
             recall {:.3} precision {:.3} f1 {:.3}  [{:.1}s]",
            report.dice_avg,
            report.dice_small,
            report.dice_medium,
            report.dice_large,
            report.recall,
            report.precision,
            report.f1,
            report.runtime_seconds
        );
    }
    println!("reports under {}", out.display());
    Ok(())
}
