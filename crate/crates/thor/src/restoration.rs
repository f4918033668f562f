//! Pseudo-healthy restoration: plain partial diffusion (the DDPM and
//! AnoDDPM-style baselines) and the THOR harmonization loop.
//!
//! Both start by noising the input to `t_start` and running the reverse
//! chain down to 1. THOR additionally, at each selected timestep, builds a
//! soft anomaly mask from the current x₀ prediction, interpolates the raw
//! prediction with the input under that mask, and folds the harmonized
//! estimate back into the chain state using the implied noise, so a mask of
//! all ones leaves the chain untouched.

use serde::{Deserialize, Serialize};

use crate::anomaly::{anomaly_map, normalize01, PerceptualMetric};
use crate::denoiser::DenoiserModel;
use crate::diffusion::{forward_closed, predict_x0_raw, reverse_step};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::morphology::{close_dilate, MorphConfig};
use crate::noise::{sample_noise, NoiseSpec};
use crate::schedule::NoiseSchedule;

/// Start level plus the descending set of harmonization timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonizationPlan {
    pub t_start: usize,
    /// Strictly descending, unique, within (0, t_start]. Empty degrades
    /// THOR to plain restoration.
    pub harmonization_steps: Vec<usize>,
    pub morph: MorphConfig,
    pub stochastic_reverse: bool,
}

impl HarmonizationPlan {
    /// Plain restoration plan (no harmonization steps).
    pub fn plain(t_start: usize) -> Self {
        HarmonizationPlan {
            t_start,
            harmonization_steps: Vec::new(),
            morph: MorphConfig::default(),
            stochastic_reverse: false,
        }
    }

    /// Default THOR plan: three steps evenly spaced over the bottom third
    /// of the chain (0.3, 0.2 and 0.1 of the start level).
    ///
    /// Placement matters: one-shot x₀ predictions above roughly half the
    /// start level are dominated by model error at small scale, so masks
    /// built there inject noise into the chain and the harmonic-mean score
    /// collapses. Low steps see a state whose anomaly is already concealed
    /// by the initial noising, yet is clean enough to predict accurately.
    pub fn thor_default(t_start: usize) -> Self {
        let mut steps: Vec<usize> = [3, 2, 1]
            .iter()
            .map(|&k| (k * t_start).div_ceil(10))
            .collect();
        steps.dedup();
        steps.retain(|&s| s >= 1 && s <= t_start);
        HarmonizationPlan {
            t_start,
            harmonization_steps: steps,
            morph: MorphConfig::default(),
            stochastic_reverse: false,
        }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.t_start > schedule.t_max() {
            return Err(Error::config(format!(
                "t_start {} exceeds schedule length {}",
                self.t_start,
                schedule.t_max()
            )));
        }
        let steps = &self.harmonization_steps;
        for w in steps.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::config(
                    "harmonization steps must be strictly descending and unique",
                ));
            }
        }
        if let (Some(&first), Some(&last)) = (steps.first(), steps.last()) {
            if first > self.t_start || last < 1 {
                return Err(Error::config(format!(
                    "harmonization steps must lie in [1, t_start={}]",
                    self.t_start
                )));
            }
        }
        Ok(())
    }
}

/// Test hook forcing the harmonization mask to a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskOverride {
    None,
    /// Mask ≡ 0: keep the input everywhere.
    AllInput,
    /// Mask ≡ 1: keep the prediction everywhere.
    AllPrediction,
}

/// Output of a restoration run.
pub struct RestorationTrace {
    pub final_image: ImageGrid,
    /// (t, raw anomaly map) captured at each executed harmonization step;
    /// for plans with no harmonization steps, one final map tagged t = 0.
    pub per_step_maps: Vec<(usize, ImageGrid)>,
    /// (t, clamped x₀ prediction) at each executed harmonization step.
    pub per_step_x0: Vec<(usize, ImageGrid)>,
}

/// Plain partial-diffusion restoration: noise to `t_start`, denoise to 1.
///
/// With Gaussian noise this is the DDPM baseline; with simplex noise the
/// AnoDDPM-style baseline. `t_start = 0` is a degenerate identity
/// pass-through allowed for tests.
pub fn restore_plain(
    model: &DenoiserModel,
    x_input: &ImageGrid,
    t_start: usize,
    schedule: &NoiseSchedule,
    noise_spec: &NoiseSpec,
    stochastic: bool,
    seed: u64,
) -> Result<ImageGrid> {
    let plan = HarmonizationPlan {
        t_start,
        harmonization_steps: Vec::new(),
        morph: MorphConfig::default(),
        stochastic_reverse: stochastic,
    };
    let trace = run_restoration(
        model,
        x_input,
        &plan,
        schedule,
        noise_spec,
        None,
        seed,
        MaskOverride::None,
    )?;
    Ok(trace.final_image)
}

/// THOR restoration with harmonization at the plan's selected timesteps.
#[allow(clippy::too_many_arguments)]
pub fn restore_thor(
    model: &DenoiserModel,
    x_input: &ImageGrid,
    plan: &HarmonizationPlan,
    schedule: &NoiseSchedule,
    noise_spec: &NoiseSpec,
    perceptual: &dyn PerceptualMetric,
    seed: u64,
) -> Result<RestorationTrace> {
    run_restoration(
        model,
        x_input,
        plan,
        schedule,
        noise_spec,
        Some(perceptual),
        seed,
        MaskOverride::None,
    )
}

/// As [`restore_thor`] but with the mask override test hook exposed.
#[allow(clippy::too_many_arguments)]
pub fn restore_thor_with_override(
    model: &DenoiserModel,
    x_input: &ImageGrid,
    plan: &HarmonizationPlan,
    schedule: &NoiseSchedule,
    noise_spec: &NoiseSpec,
    perceptual: &dyn PerceptualMetric,
    seed: u64,
    mask_override: MaskOverride,
) -> Result<RestorationTrace> {
    run_restoration(
        model,
        x_input,
        plan,
        schedule,
        noise_spec,
        Some(perceptual),
        seed,
        mask_override,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_restoration(
    model: &DenoiserModel,
    x_input: &ImageGrid,
    plan: &HarmonizationPlan,
    schedule: &NoiseSchedule,
    noise_spec: &NoiseSpec,
    perceptual: Option<&dyn PerceptualMetric>,
    seed: u64,
    mask_override: MaskOverride,
) -> Result<RestorationTrace> {
    plan.validate(schedule)?;
    model.check_compatible(schedule, noise_spec)?;
    if x_input.shape() != model.config().image_size {
        return Err(Error::ShapeMismatch {
            expected: model.config().image_size,
            got: x_input.shape(),
        });
    }
    let run_spec = NoiseSpec {
        seed,
        ..noise_spec.clone()
    };
    let shape = x_input.shape();

    if plan.t_start == 0 {
        // Degenerate: nothing to denoise.
        return Ok(RestorationTrace {
            final_image: x_input.clone(),
            per_step_maps: Vec::new(),
            per_step_x0: Vec::new(),
        });
    }

    // Draws are indexed by position in the run so every field is a pure
    // function of (seed, index).
    let mut draw: u64 = 0;
    let eps0 = sample_noise(&run_spec, shape, draw)?;
    draw += 1;
    let mut x_t = forward_closed(x_input, plan.t_start, schedule, &eps0)?;

    let mut per_step_maps = Vec::new();
    let mut per_step_x0 = Vec::new();
    let mut harmonize_at = plan.harmonization_steps.iter().copied().peekable();

    for t in (1..=plan.t_start).rev() {
        let eps_hat = model.predict_noise(&x_t, t)?;

        if harmonize_at.peek() == Some(&t) {
            harmonize_at.next();
            let metric = perceptual.expect("harmonization steps require a perceptual metric");
            let x0_raw = predict_x0_raw(&x_t, t, &eps_hat, schedule)?;
            let x0_clamped = x0_raw.clamp01();
            // Raw map for scoring; normalized + morphed map as the mask.
            let m = anomaly_map(&x0_clamped, x_input, metric)?;
            let mask = match mask_override {
                MaskOverride::None => close_dilate(&normalize01(&m)?, &plan.morph)?,
                MaskOverride::AllInput => ImageGrid::zeros(shape.0, shape.1)?,
                MaskOverride::AllPrediction => ImageGrid::constant(shape.0, shape.1, 1.0)?,
            };
            // Harmonize x̂0 = w·x0 + (1−w)·x_input, folded into the chain
            // state as x_t += √ᾱ_t·(x̂0 − x0) so the implied noise stays ε̂
            // and a mask of all ones is exactly a no-op.
            let ca = schedule.alpha_bar(t).sqrt();
            let correction = mask.zip_map(&x_input.zip_map(&x0_raw, |xi, x0| xi - x0)?, |w, d| {
                ca * (1.0 - w) * d
            })?;
            x_t = x_t.zip_map(&correction, |x, c| x + c)?;
            per_step_maps.push((t, m));
            per_step_x0.push((t, x0_clamped));
        }

        let noise = if plan.stochastic_reverse && t > 1 {
            let n = sample_noise(&run_spec, shape, draw)?;
            draw += 1;
            Some(n)
        } else {
            None
        };
        x_t = reverse_step(&x_t, t, &eps_hat, schedule, plan.stochastic_reverse, noise.as_ref())?;
    }

    let final_image = x_t.clamp01();
    if plan.harmonization_steps.is_empty() {
        if let Some(metric) = perceptual {
            let m = anomaly_map(x_input, &final_image, metric)?;
            per_step_maps.push((0, m));
        }
    }
    Ok(RestorationTrace {
        final_image,
        per_step_maps,
        per_step_x0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::MultiScaleStructural;
    use crate::denoiser::{DenoiserConfig, DenoiserModel};

    fn setup() -> (DenoiserModel, NoiseSchedule, NoiseSpec) {
        let schedule = NoiseSchedule::linear(12, 0.01, 0.2).unwrap();
        let spec = NoiseSpec::gaussian(1);
        let dcfg = DenoiserConfig {
            base_channels: 2,
            depth: 1,
            time_embed_dim: 4,
            image_size: (8, 8),
        };
        let model = DenoiserModel::init(dcfg, schedule.clone(), spec.clone(), 0).unwrap();
        (model, schedule, spec)
    }

    fn input() -> ImageGrid {
        ImageGrid::from_fn(8, 8, |r, c| ((r + 2 * c) % 7) as f64 / 7.0).unwrap()
    }

    fn plan_steps(t_start: usize, steps: Vec<usize>) -> HarmonizationPlan {
        HarmonizationPlan {
            t_start,
            harmonization_steps: steps,
            morph: MorphConfig::default(),
            stochastic_reverse: false,
        }
    }

    #[test]
    fn degenerate_t_start_zero_is_identity() {
        let (model, schedule, spec) = setup();
        let x = input();
        let out = restore_plain(&model, &x, 0, &schedule, &spec, false, 9).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn plain_restoration_reproducible() {
        let (model, schedule, spec) = setup();
        let x = input();
        let a = restore_plain(&model, &x, 8, &schedule, &spec, false, 3).unwrap();
        let b = restore_plain(&model, &x, 8, &schedule, &spec, false, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forced_mask_zero_returns_input() {
        let (model, schedule, spec) = setup();
        let x = input();
        let plan = plan_steps(8, vec![6, 4, 1]);
        let metric = MultiScaleStructural::default();
        let trace = restore_thor_with_override(
            &model,
            &x,
            &plan,
            &schedule,
            &spec,
            &metric,
            5,
            MaskOverride::AllInput,
        )
        .unwrap();
        assert!(trace.final_image.max_abs_diff(&x).unwrap() <= 1e-6);
    }

    #[test]
    fn forced_mask_one_matches_plain_bitwise() {
        let (model, schedule, spec) = setup();
        let x = input();
        let plan = plan_steps(8, vec![6, 3, 1]);
        let metric = MultiScaleStructural::default();
        let thor = restore_thor_with_override(
            &model,
            &x,
            &plan,
            &schedule,
            &spec,
            &metric,
            5,
            MaskOverride::AllPrediction,
        )
        .unwrap();
        let plain = restore_plain(&model, &x, 8, &schedule, &spec, false, 5).unwrap();
        assert_eq!(thor.final_image, plain);
    }

    #[test]
    fn empty_plan_matches_plain_bitwise() {
        let (model, schedule, spec) = setup();
        let x = input();
        let plan = HarmonizationPlan::plain(8);
        let metric = MultiScaleStructural::default();
        let thor = restore_thor(&model, &x, &plan, &schedule, &spec, &metric, 7).unwrap();
        let plain = restore_plain(&model, &x, 8, &schedule, &spec, false, 7).unwrap();
        assert_eq!(thor.final_image, plain);
        // Emits a single final map.
        assert_eq!(thor.per_step_maps.len(), 1);
    }

    #[test]
    fn trace_records_every_planned_step() {
        let (model, schedule, spec) = setup();
        let x = input();
        let plan = plan_steps(10, vec![9, 5, 2]);
        let metric = MultiScaleStructural::default();
        let trace = restore_thor(&model, &x, &plan, &schedule, &spec, &metric, 2).unwrap();
        let tags: Vec<usize> = trace.per_step_maps.iter().map(|(t, _)| *t).collect();
        assert_eq!(tags, vec![9, 5, 2]);
        assert_eq!(trace.per_step_x0.len(), 3);
    }

    #[test]
    fn stochastic_reverse_reproducible() {
        let (model, schedule, spec) = setup();
        let x = input();
        let a = restore_plain(&model, &x, 6, &schedule, &spec, true, 11).unwrap();
        let b = restore_plain(&model, &x, 6, &schedule, &spec, true, 11).unwrap();
        assert_eq!(a, b);
        let c = restore_plain(&model, &x, 6, &schedule, &spec, true, 12).unwrap();
        assert!(a.mean_abs_diff(&c).unwrap() > 0.0);
    }

    #[test]
    fn invalid_plans_rejected() {
        let schedule = NoiseSchedule::linear(12, 0.01, 0.2).unwrap();
        assert!(plan_steps(8, vec![4, 6]).validate(&schedule).is_err());
        assert!(plan_steps(8, vec![9]).validate(&schedule).is_err());
        assert!(plan_steps(8, vec![5, 5]).validate(&schedule).is_err());
        assert!(HarmonizationPlan::plain(13).validate(&schedule).is_err());
    }

    #[test]
    fn incompatible_noise_spec_rejected() {
        let (model, schedule, _) = setup();
        let x = input();
        let err = restore_plain(&model, &x, 4, &schedule, &NoiseSpec::simplex(0), false, 0);
        assert!(err.is_err());
    }

    #[test]
    fn default_plan_steps() {
        let plan = HarmonizationPlan::thor_default(8);
        assert_eq!(plan.harmonization_steps, vec![3, 2, 1]);
        let plan = HarmonizationPlan::thor_default(350);
        assert_eq!(plan.harmonization_steps, vec![105, 70, 35]);
    }
}
