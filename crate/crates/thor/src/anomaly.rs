//! Anomaly maps and scores: residual-times-perceptual maps, min-max
//! normalization, and the harmonic-mean aggregation of per-step maps.

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Pixelwise anomaly score field; finite and non-negative.
pub type AnomalyScoreMap = ImageGrid;

pub const DEFAULT_EPS_FLOOR: f64 = 1e-8;

/// Per-pixel perceptual dissimilarity between two images.
///
/// Implementations must return a map of the input shape that is
/// non-negative, zero for identical inputs, and symmetric in its arguments.
/// A learned metric (e.g. LPIPS with spatialized layer distances) can be
/// plugged in behind this trait.
pub trait PerceptualMetric {
    fn map(&self, x: &ImageGrid, y: &ImageGrid) -> Result<ImageGrid>;

    /// Radius (pixels) over which a local change can spread in the output.
    fn receptive_radius(&self) -> usize {
        0
    }
}

/// Default perceptual metric: multi-scale structural dissimilarity.
///
/// Per pixel, (1 − local SSIM)/2 with a box window, computed at dyadic
/// scales, upsampled to input resolution and averaged.
#[derive(Debug, Clone)]
pub struct MultiScaleStructural {
    pub scales: u32,
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for MultiScaleStructural {
    fn default() -> Self {
        // Standard SSIM constants for a unit dynamic range.
        MultiScaleStructural {
            scales: 3,
            window: 7,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl MultiScaleStructural {
    /// Per-pixel (1 − SSIM)/2 at a single scale.
    fn dssim(&self, x: &ImageGrid, y: &ImageGrid) -> ImageGrid {
        let (h, w) = x.shape();
        let r = self.window / 2;
        ImageGrid::from_fn(h, w, |row, col| {
            let r0 = row.saturating_sub(r);
            let r1 = (row + r).min(h - 1);
            let c0 = col.saturating_sub(r);
            let c1 = (col + r).min(w - 1);
            let n = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    let a = x.get(rr, cc);
                    let b = y.get(rr, cc);
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = (sxx / n - mx * mx).max(0.0);
            let vy = (syy / n - my * my).max(0.0);
            let cov = sxy / n - mx * my;
            let ssim = ((2.0 * mx * my + self.c1) * (2.0 * cov + self.c2))
                / ((mx * mx + my * my + self.c1) * (vx + vy + self.c2));
            ((1.0 - ssim) / 2.0).max(0.0)
        })
        .expect("shape preserved")
    }
}

/// 2x2 block-average downsampling (edge blocks may be smaller).
fn downsample2(g: &ImageGrid) -> ImageGrid {
    let (h, w) = g.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    ImageGrid::from_fn(oh, ow, |r, c| {
        let r0 = r * 2;
        let c0 = c * 2;
        let r1 = (r0 + 1).min(h - 1);
        let c1 = (c0 + 1).min(w - 1);
        let mut sum = 0.0;
        let mut n = 0.0;
        for rr in r0..=r1 {
            for cc in c0..=c1 {
                sum += g.get(rr, cc);
                n += 1.0;
            }
        }
        sum / n
    })
    .expect("non-empty")
}

impl PerceptualMetric for MultiScaleStructural {
    fn map(&self, x: &ImageGrid, y: &ImageGrid) -> Result<ImageGrid> {
        x.check_same_shape(y)?;
        let (h, w) = x.shape();
        let mut acc = ImageGrid::zeros(h, w)?;
        let mut xs = x.clone();
        let mut ys = y.clone();
        let mut used = 0u32;
        for scale in 0..self.scales {
            if scale > 0 {
                if xs.height() < 2 || xs.width() < 2 {
                    break;
                }
                xs = downsample2(&xs);
                ys = downsample2(&ys);
            }
            let d = self.dssim(&xs, &ys);
            let shift = scale as usize;
            acc = ImageGrid::from_fn(h, w, |r, c| {
                acc.get(r, c) + d.get((r >> shift).min(d.height() - 1), (c >> shift).min(d.width() - 1))
            })?;
            used += 1;
        }
        Ok(acc.map(|v| v / used as f64))
    }

    fn receptive_radius(&self) -> usize {
        (self.window / 2) << (self.scales.saturating_sub(1) as usize)
    }
}

/// Anomaly map m = |x − x_rec| ⊙ perceptual(x, x_rec), elementwise.
pub fn anomaly_map(
    x: &ImageGrid,
    x_rec: &ImageGrid,
    metric: &dyn PerceptualMetric,
) -> Result<ImageGrid> {
    x.check_same_shape(x_rec)?;
    let p = metric.map(x, x_rec)?;
    let residual = x.zip_map(x_rec, |a, b| (a - b).abs())?;
    residual.zip_map(&p, |r, s| r * s)
}

/// Min-max normalization to [0, 1]; a constant map maps to all zeros.
pub fn normalize01(m: &ImageGrid) -> Result<ImageGrid> {
    if m.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::config("normalize01 input must be finite and non-negative"));
    }
    let lo = m.min();
    let hi = m.max();
    if hi - lo <= 0.0 {
        return ImageGrid::zeros(m.height(), m.width());
    }
    Ok(m.map(|v| (v - lo) / (hi - lo)))
}

/// Harmonic mean of the per-step anomaly maps, floored at `eps_floor` to
/// keep the sum finite. A near-zero value at any step pins the score to
/// (almost) zero at that pixel.
pub fn harmonic_score(maps: &[ImageGrid], eps_floor: f64) -> Result<AnomalyScoreMap> {
    let first = maps.first().ok_or(Error::EmptyInput("harmonic_score needs at least one map"))?;
    let n = maps.len() as f64;
    for m in &maps[1..] {
        first.check_same_shape(m)?;
    }
    let (h, w) = first.shape();
    ImageGrid::from_fn(h, w, |r, c| {
        let denom: f64 = maps.iter().map(|m| 1.0 / m.get(r, c).max(eps_floor)).sum();
        n / denom
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageGrid {
        ImageGrid::from_fn(h, w, |r, c| ((r * w + c) as f64) / ((h * w) as f64)).unwrap()
    }

    #[test]
    fn perceptual_zero_for_identical() {
        let m = MultiScaleStructural::default();
        let x = ramp(16, 16);
        let p = m.map(&x, &x).unwrap();
        assert!(p.max() < 1e-12);
    }

    #[test]
    fn perceptual_symmetric_and_nonnegative() {
        let m = MultiScaleStructural::default();
        let x = ramp(16, 16);
        let y = x.map(|v| 1.0 - v);
        let a = m.map(&x, &y).unwrap();
        let b = m.map(&y, &x).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
        assert!(a.min() >= 0.0);
    }

    #[test]
    fn perceptual_localizes_block_change() {
        let m = MultiScaleStructural::default();
        let x = ImageGrid::constant(64, 64, 0.3).unwrap();
        // Invert one 8x8 block.
        let y = ImageGrid::from_fn(64, 64, |r, c| {
            if (24..32).contains(&r) && (24..32).contains(&c) {
                0.7
            } else {
                0.3
            }
        })
        .unwrap();
        let p = m.map(&x, &y).unwrap();
        let rad = m.receptive_radius();
        let total = p.sum();
        let mut inside = 0.0;
        for r in 0..64 {
            for c in 0..64 {
                let in_dilated = r + rad >= 24 && r < 32 + rad && c + rad >= 24 && c < 32 + rad;
                if in_dilated {
                    inside += p.get(r, c);
                }
            }
        }
        assert!(total > 0.0);
        assert!(inside / total >= 0.6, "mass fraction {}", inside / total);
    }

    #[test]
    fn anomaly_map_zero_diagnosis() {
        let metric = MultiScaleStructural::default();
        let x = ramp(16, 16);
        let m = anomaly_map(&x, &x, &metric).unwrap();
        assert_eq!(m.max(), 0.0);
    }

    #[test]
    fn anomaly_map_elementwise_product() {
        struct Const(f64);
        impl PerceptualMetric for Const {
            fn map(&self, x: &ImageGrid, _y: &ImageGrid) -> Result<ImageGrid> {
                Ok(x.map(|_| self.0))
            }
        }
        let x = ImageGrid::constant(4, 4, 0.9).unwrap();
        let y = ImageGrid::constant(4, 4, 0.4).unwrap();
        let m = anomaly_map(&x, &y, &Const(0.2)).unwrap();
        assert!((m.get(0, 0) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn anomaly_map_residual_annihilates() {
        let metric = MultiScaleStructural::default();
        // Same values in the left half, different in the right.
        let x = ImageGrid::from_fn(8, 8, |_, c| if c < 4 { 0.2 } else { 0.8 }).unwrap();
        let y = ImageGrid::from_fn(8, 8, |_, c| if c < 4 { 0.2 } else { 0.1 }).unwrap();
        let m = anomaly_map(&x, &y, &metric).unwrap();
        for r in 0..8 {
            assert_eq!(m.get(r, 0), 0.0);
        }
    }

    #[test]
    fn normalize_known_values() {
        let m = ImageGrid::from_fn(1, 3, |_, c| (c * 2) as f64).unwrap();
        let n = normalize01(&m).unwrap();
        assert_eq!(n.get(0, 0), 0.0);
        assert_eq!(n.get(0, 1), 0.5);
        assert_eq!(n.get(0, 2), 1.0);
    }

    #[test]
    fn normalize_constant_gives_zeros() {
        let m = ImageGrid::constant(3, 3, 0.7).unwrap();
        let n = normalize01(&m).unwrap();
        assert_eq!(n.max(), 0.0);
    }

    #[test]
    fn normalize_range_contract() {
        let m = ramp(5, 5).map(|v| v * 3.0 + 0.1);
        let n = normalize01(&m).unwrap();
        assert_eq!(n.min(), 0.0);
        assert_eq!(n.max(), 1.0);
    }

    #[test]
    fn normalize_scale_invariant() {
        let m = ramp(6, 6);
        let a = normalize01(&m).unwrap();
        let b = normalize01(&m.map(|v| v * 4.2)).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn harmonic_equal_maps() {
        let m = ImageGrid::constant(4, 4, 0.2).unwrap();
        let s = harmonic_score(&[m.clone(), m.clone(), m], DEFAULT_EPS_FLOOR).unwrap();
        assert!((s.get(0, 0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn harmonic_two_values() {
        let a = ImageGrid::constant(2, 2, 1.0).unwrap();
        let b = ImageGrid::constant(2, 2, 0.5).unwrap();
        let s = harmonic_score(&[a, b], DEFAULT_EPS_FLOOR).unwrap();
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn harmonic_zero_pixel_suppressed() {
        let a = ImageGrid::constant(2, 2, 0.9).unwrap();
        let b = ImageGrid::zeros(2, 2).unwrap();
        let s = harmonic_score(&[a, b], DEFAULT_EPS_FLOOR).unwrap();
        assert!(s.get(0, 0) <= 2.0 * DEFAULT_EPS_FLOOR);
    }

    #[test]
    fn harmonic_empty_rejected() {
        assert!(harmonic_score(&[], DEFAULT_EPS_FLOOR).is_err());
    }
}
