//! Demonstrates the scoring stack without a trained model: residual ×
//! perceptual anomaly maps, min-max normalization, the closing-then-dilation
//! mask operator, harmonic-mean aggregation, and component detection.
//!
//! Run: cargo run --release --example anomaly_scoring

use std::path::Path;

use thor::anomaly::{anomaly_map, harmonic_score, normalize01, MultiScaleStructural, DEFAULT_EPS_FLOOR};
use thor::data::{generate_phantom, inject_anomaly, AnomalyShape, AnomalySpec, PhantomSpec, Polarity, SizeClass};
use thor::eval::{detect_components, dice, max_dice, DetectionRule};
use thor::io::{write_heatmap_png, write_mask_png};
use thor::morphology::{close_dilate, MorphConfig};

fn main() -> anyhow::Result<()> {
    let out = Path::new("example-out/scoring");
    std::fs::create_dir_all(out)?;

    let healthy = generate_phantom(&PhantomSpec::new(42, (64, 64)))?;
    let (anomalous, gt_mask, gt_boxes) = inject_anomaly(
        &healthy,
        &AnomalySpec {
            seed: 8,
            size_class: SizeClass::Large,
            polarity: Polarity::Hyper,
            shape: AnomalyShape::Blob,
        },
    )?;

    // Pretend the healthy image is a perfect restoration; in the full
    // pipeline it comes from the diffusion model.
    let metric = MultiScaleStructural::default();
    let map = anomaly_map(&anomalous, &healthy, &metric)?;
    write_heatmap_png(&out.join("anomaly_map.png"), &map)?;

    // Aggregating the same map at three "timesteps" with small perturbations
    // mimics the temporal harmonic mean; low values dominate.
    let maps = vec![map.clone(), map.map(|v| v * 0.8), map.map(|v| v * 1.2)];
    let score = harmonic_score(&maps, DEFAULT_EPS_FLOOR)?;
    write_heatmap_png(&out.join("harmonic_score.png"), &score)?;

    let mask = close_dilate(&normalize01(&score)?, &MorphConfig::default())?;
    write_heatmap_png(&out.join("soft_mask.png"), &mask)?;
    write_mask_png(&out.join("gt_mask.png"), &gt_mask)?;

    let (best_dice, threshold) = max_dice(
        std::slice::from_ref(&score),
        std::slice::from_ref(&gt_mask),
        256,
    )?;
    let binary = score.map(|v| f64::from(v > threshold));
    println!(
        "max dice {best_dice:.4} at threshold {threshold:.4} (recheck: {:.4})",
        dice(&binary, &gt_mask)?
    );

    let boxes = detect_components(&score, threshold, &DetectionRule::default())?;
    println!("ground-truth boxes: {gt_boxes:?}");
    println!("detected boxes:     {boxes:?}");
    println!("wrote maps to {}", out.display());
    Ok(())
}
