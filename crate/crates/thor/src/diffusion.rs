//! Forward and reverse diffusion steps.
//!
//! Forward: x_t = √α_t·x_{t−1} + √(1−α_t)·ε, with the closed form
//! x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε used to jump straight to a noise level.
//! Reverse: x_{t−1} = (x_t − √(1−α_t)·ε̂)/√α_t, optionally with the
//! ancestral √β_t noise term.

use crate::error::Result;
use crate::grid::ImageGrid;
use crate::schedule::NoiseSchedule;

/// One forward noising step from level t−1 to t.
pub fn forward_step(
    x_prev: &ImageGrid,
    t: usize,
    schedule: &NoiseSchedule,
    eps: &ImageGrid,
) -> Result<ImageGrid> {
    schedule.check_t(t)?;
    let a = schedule.alpha(t);
    let (ca, ce) = (a.sqrt(), (1.0 - a).sqrt());
    x_prev.zip_map(eps, |x, e| ca * x + ce * e)
}

/// Jump directly from the clean image to noise level t.
pub fn forward_closed(
    x0: &ImageGrid,
    t: usize,
    schedule: &NoiseSchedule,
    eps: &ImageGrid,
) -> Result<ImageGrid> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    let (ca, ce) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, |x, e| ca * x + ce * e)
}

/// One reverse denoising step from level t to t−1 given the noise estimate.
///
/// The deterministic form inverts the forward step exactly; with
/// `stochastic` set, the ancestral √β_t·noise term is added for t > 1.
pub fn reverse_step(
    x_t: &ImageGrid,
    t: usize,
    eps_hat: &ImageGrid,
    schedule: &NoiseSchedule,
    stochastic: bool,
    noise: Option<&ImageGrid>,
) -> Result<ImageGrid> {
    schedule.check_t(t)?;
    let a = schedule.alpha(t);
    let (ca, ce) = (a.sqrt(), (1.0 - a).sqrt());
    let mean = x_t.zip_map(eps_hat, |x, e| (x - ce * e) / ca)?;
    if stochastic && t > 1 {
        if let Some(n) = noise {
            let sigma = schedule.beta(t).sqrt();
            return mean.zip_map(n, |m, z| m + sigma * z);
        }
    }
    Ok(mean)
}

/// Unclamped x₀ estimate from (x_t, ε̂): (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t.
pub fn predict_x0_raw(
    x_t: &ImageGrid,
    t: usize,
    eps_hat: &ImageGrid,
    schedule: &NoiseSchedule,
) -> Result<ImageGrid> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    let (ca, ce) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.zip_map(eps_hat, |x, e| (x - ce * e) / ca)
}

/// x₀ estimate clamped to [0, 1] for use in anomaly maps.
pub fn predict_x0(
    x_t: &ImageGrid,
    t: usize,
    eps_hat: &ImageGrid,
    schedule: &NoiseSchedule,
) -> Result<ImageGrid> {
    Ok(predict_x0_raw(x_t, t, eps_hat, schedule)?.clamp01())
}
