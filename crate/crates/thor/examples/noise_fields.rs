//! Samples Gaussian and fractal simplex noise fields and writes them as
//! heatmaps plus raw f32 grids.
//!
//! Run: cargo run --release --example noise_fields

use std::path::Path;

use thor::io::{write_f32_grid, write_heatmap_png, GridSidecar};
use thor::noise::{sample_noise, NoiseSpec};

fn main() -> anyhow::Result<()> {
    let out = Path::new("example-out/noise_fields");
    std::fs::create_dir_all(out)?;

    for spec in [NoiseSpec::gaussian(7), NoiseSpec::simplex(7)] {
        for draw in 0..3u64 {
            let field = sample_noise(&spec, (128, 128), draw)?;
            let stem = format!("{}_{draw}", spec.kind);
            write_heatmap_png(&out.join(format!("{stem}.png")), &field)?;
            write_f32_grid(
                &out.join(format!("{stem}.f32")),
                &field,
                &GridSidecar {
                    height: 128,
                    width: 128,
                    noise_spec: Some(spec.clone()),
                    draw_index: Some(draw),
                },
            )?;
            println!(
                "{stem}: mean {:+.4}, var {:.4}, range [{:.2}, {:.2}]",
                field.mean(),
                field.variance(),
                field.min(),
                field.max()
            );
        }
    }
    println!("wrote fields to {}", out.display());
    Ok(())
}
