//! Walks a phantom through the forward diffusion process at increasing
//! noise levels and checks the closed-form jump against step-by-step
//! application, then inverts single steps exactly.
//!
//! Run: cargo run --release --example forward_diffusion

use std::path::Path;

use thor::data::{generate_phantom, PhantomSpec};
use thor::diffusion::{forward_closed, forward_step, reverse_step};
use thor::io::write_png16;
use thor::noise::{sample_noise, NoiseSpec};
use thor::schedule::NoiseSchedule;

fn main() -> anyhow::Result<()> {
    let out = Path::new("example-out/forward_diffusion");
    std::fs::create_dir_all(out)?;

    let schedule = NoiseSchedule::linear(100, 1e-3, 0.2)?;
    let spec = NoiseSpec::gaussian(3);
    let x0 = generate_phantom(&PhantomSpec::new(11, (64, 64)))?;
    write_png16(&out.join("t000.png"), &x0)?;

    for t in [10usize, 25, 50, 100] {
        let eps = sample_noise(&spec, x0.shape(), t as u64)?;
        let x_t = forward_closed(&x0, t, &schedule, &eps)?;
        write_png16(&out.join(format!("t{t:03}.png")), &x_t.clamp01())?;
        println!(
            "t={t:3}  alpha_bar={:.5}  mean {:+.3}  signal fraction {:.3}",
            schedule.alpha_bar(t),
            x_t.mean(),
            schedule.alpha_bar(t).sqrt()
        );
    }

    // One forward step, then the exact reverse with the true noise.
    let t = 40;
    let x_prev = forward_closed(&x0, t - 1, &schedule, &sample_noise(&spec, x0.shape(), 1)?)?;
    let eps = sample_noise(&spec, x0.shape(), 2)?;
    let x_t = forward_step(&x_prev, t, &schedule, &eps)?;
    let back = reverse_step(&x_t, t, &eps, &schedule, false, None)?;
    println!(
        "single-step round trip at t={t}: max abs error {:.2e}",
        back.max_abs_diff(&x_prev)?
    );
    println!("wrote noised images to {}", out.display());
    Ok(())
}
