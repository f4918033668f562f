//! Trains a small epsilon predictor on healthy phantoms and saves a
//! checkpoint. Uses a short schedule and few epochs so it finishes in about
//! a minute; the thor binary exposes the full-size pipeline.
//!
//! Run: cargo run --release --example train_denoiser

use std::path::Path;

use thor::data::{generate_phantom, PhantomSpec};
use thor::denoiser::{load_checkpoint, save_checkpoint, train, DenoiserConfig, TrainConfig};
use thor::grid::ImageGrid;
use thor::noise::NoiseSpec;
use thor::schedule::NoiseSchedule;

fn main() -> anyhow::Result<()> {
    let out = Path::new("example-out/train");
    std::fs::create_dir_all(out)?;

    let dataset: Vec<ImageGrid> = (0..24)
        .map(|i| generate_phantom(&PhantomSpec::new(100 + i, (64, 64))))
        .collect::<thor::Result<_>>()?;

    let schedule = NoiseSchedule::linear(100, 1e-3, 0.2)?;
    let dcfg = DenoiserConfig {
        base_channels: 12,
        depth: 2,
        time_embed_dim: 16,
        image_size: (64, 64),
    };
    let mut tcfg = TrainConfig::new(NoiseSpec::gaussian(0));
    tcfg.epochs = 6;
    tcfg.seed = 0;

    let output = train(&dataset, &schedule, &tcfg, &dcfg)?;
    for (epoch, loss) in &output.curve {
        println!("epoch {epoch:2}  eps-mse {loss:.5}");
    }

    let ckpt = out.join("model.ckpt");
    save_checkpoint(&output.model, &ckpt)?;
    let reloaded = load_checkpoint(&ckpt)?;
    println!(
        "saved {} params to {} (fingerprint {})",
        reloaded.num_params(),
        ckpt.display(),
        &reloaded.fingerprint()[..12]
    );
    Ok(())
}
