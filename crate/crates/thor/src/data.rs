//! Synthetic benchmark data: healthy phantoms, anomaly injection with
//! ground truth, preprocessing, and dataset manifests.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::io;
use crate::noise::Simplex2d;

// ---------------------------------------------------------------------------
// Size classes
// ---------------------------------------------------------------------------

/// Lesion size strata. The pixel thresholds (71 and 570) are defined at
/// 128x128 resolution and rescaled by area ratio at other sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl std::fmt::Display for SizeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SizeClass::Small => write!(f, "small"),
            SizeClass::Medium => write!(f, "medium"),
            SizeClass::Large => write!(f, "large"),
        }
    }
}

pub const SMALL_MAX_AT_128: f64 = 71.0;
pub const LARGE_MIN_AT_128: f64 = 570.0;

/// (small upper bound, large lower bound) in pixels at the given resolution.
pub fn size_class_bounds(height: usize, width: usize) -> (f64, f64) {
    let ratio = (height * width) as f64 / (128.0 * 128.0);
    (SMALL_MAX_AT_128 * ratio, LARGE_MIN_AT_128 * ratio)
}

pub fn classify_popcount(count: usize, height: usize, width: usize) -> SizeClass {
    let (small_max, large_min) = size_class_bounds(height, width);
    let c = count as f64;
    if c < small_max {
        SizeClass::Small
    } else if c < large_min {
        SizeClass::Medium
    } else {
        SizeClass::Large
    }
}

// ---------------------------------------------------------------------------
// Bounding boxes and connected components
// ---------------------------------------------------------------------------

/// Tight bounding box in pixel coordinates, inclusive: [x0, y0, x1, y1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox(pub [i64; 4]);

impl BBox {
    pub fn x0(&self) -> i64 {
        self.0[0]
    }
    pub fn y0(&self) -> i64 {
        self.0[1]
    }
    pub fn x1(&self) -> i64 {
        self.0[2]
    }
    pub fn y1(&self) -> i64 {
        self.0[3]
    }

    pub fn area(&self) -> i64 {
        (self.x1() - self.x0() + 1) * (self.y1() - self.y0() + 1)
    }

    pub fn intersection_area(&self, other: &BBox) -> i64 {
        let w = (self.x1().min(other.x1()) - self.x0().max(other.x0()) + 1).max(0);
        let h = (self.y1().min(other.y1()) - self.y0().max(other.y0()) + 1).max(0);
        w * h
    }
}

pub struct Component {
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BBox,
}

/// 8-connected components of a binary grid (values > 0.5 are foreground).
pub fn connected_components(mask: &ImageGrid) -> Vec<Component> {
    let (h, w) = mask.shape();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if seen[r * w + c] || mask.get(r, c) <= 0.5 {
                continue;
            }
            let mut stack = vec![(r, c)];
            seen[r * w + c] = true;
            let mut pixels = Vec::new();
            let (mut x0, mut y0, mut x1, mut y1) = (c as i64, r as i64, c as i64, r as i64);
            while let Some((pr, pc)) = stack.pop() {
                pixels.push((pr, pc));
                x0 = x0.min(pc as i64);
                x1 = x1.max(pc as i64);
                y0 = y0.min(pr as i64);
                y1 = y1.max(pr as i64);
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let nr = pr as i64 + dr;
                        let nc = pc as i64 + dc;
                        if nr < 0 || nr >= h as i64 || nc < 0 || nc >= w as i64 {
                            continue;
                        }
                        let idx = nr as usize * w + nc as usize;
                        if !seen[idx] && mask.get(nr as usize, nc as usize) > 0.5 {
                            seen[idx] = true;
                            stack.push((nr as usize, nc as usize));
                        }
                    }
                }
            }
            out.push(Component {
                pixels,
                bbox: BBox([x0, y0, x1, y1]),
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Phantom generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub size: (usize, usize),
    /// Inclusive range for the nested ellipse count.
    pub n_structures: (usize, usize),
    /// (mean, jitter) intensity bands cycled over structures.
    pub intensity_bands: Vec<(f64, f64)>,
    pub texture_amplitude: f64,
}

impl PhantomSpec {
    pub fn new(seed: u64, size: (usize, usize)) -> Self {
        PhantomSpec {
            seed,
            size,
            n_structures: (3, 5),
            intensity_bands: vec![(0.82, 0.06), (0.52, 0.08), (0.35, 0.05), (0.68, 0.06)],
            texture_amplitude: 0.03,
        }
    }

    fn validate(&self) -> Result<()> {
        let (h, w) = self.size;
        if h == 0 || w == 0 {
            return Err(Error::config("phantom size must be positive"));
        }
        if self.n_structures.0 == 0 || self.n_structures.0 > self.n_structures.1 {
            return Err(Error::config("n_structures range must be non-empty and >= 1"));
        }
        if self.intensity_bands.is_empty() {
            return Err(Error::config("at least one intensity band required"));
        }
        Ok(())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    rot: f64,
}

impl Ellipse {
    /// Implicit quadratic form; < 1 inside.
    fn q(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let (s, c) = self.rot.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a) * (u / self.a) + (v / self.b) * (v / self.b)
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Deterministic healthy phantom: nested smooth-boundary ellipses with
/// banded intensities, mild texture, dark background.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<ImageGrid> {
    spec.validate()?;
    let (h, w) = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5048_414e_544f_4d21);
    let n = rng.gen_range(spec.n_structures.0..=spec.n_structures.1);

    let (hf, wf) = (h as f64, w as f64);
    let outer = Ellipse {
        cx: wf * (0.5 + rng.gen_range(-0.03..0.03)),
        cy: hf * (0.5 + rng.gen_range(-0.03..0.03)),
        a: wf * rng.gen_range(0.34..0.42),
        b: hf * rng.gen_range(0.36..0.45),
        rot: rng.gen_range(-0.4..0.4),
    };

    let mut shapes = vec![outer];
    for i in 1..n {
        let shrink = 1.0 - i as f64 / n as f64;
        let parent = &shapes[0];
        shapes.push(Ellipse {
            cx: parent.cx + parent.a * shrink * rng.gen_range(-0.25..0.25),
            cy: parent.cy + parent.b * shrink * rng.gen_range(-0.25..0.25),
            a: (parent.a * shrink * rng.gen_range(0.55..0.85)).max(2.0),
            b: (parent.b * shrink * rng.gen_range(0.55..0.85)).max(2.0),
            rot: rng.gen_range(-0.8..0.8),
        });
    }

    let bands: Vec<f64> = (0..n)
        .map(|i| {
            let (mean, jitter) = spec.intensity_bands[i % spec.intensity_bands.len()];
            (mean + jitter * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0)
        })
        .collect();

    let texture = Simplex2d::new(spec.seed ^ 0x5445_5854);
    let edge = 0.12; // soft boundary width in implicit-q units

    ImageGrid::from_fn(h, w, |r, c| {
        let (x, y) = (c as f64, r as f64);
        let mut value = 0.0;
        for (shape, &band) in shapes.iter().zip(&bands) {
            let q = shape.q(x, y);
            let alpha = 1.0 - smoothstep(1.0 - edge, 1.0 + edge, q);
            value = value * (1.0 - alpha) + band * alpha;
        }
        // Texture only inside the foreground.
        let inside = 1.0 - smoothstep(1.0 - edge, 1.0 + edge, shapes[0].q(x, y));
        let tex = texture.sample(x / 9.0, y / 9.0) + 0.5 * texture.sample(x / 3.5, y / 3.5);
        (value + inside * spec.texture_amplitude * tex).clamp(0.0, 1.0)
    })
}

// ---------------------------------------------------------------------------
// Anomaly injection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Darker than surroundings: intensity multiplied by a factor < 1.
    Hypo,
    /// Brighter: intensity offset, clamped to 1.
    Hyper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyShape {
    Blob,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub seed: u64,
    pub size_class: SizeClass,
    pub polarity: Polarity,
    pub shape: AnomalyShape,
}

/// Injects one anomaly into the foreground of a healthy image.
///
/// Returns the modified image, the binary mask of altered pixels (popcount
/// within the requested class bounds) and the tight boxes of its components.
pub fn inject_anomaly(
    image: &ImageGrid,
    spec: &AnomalySpec,
) -> Result<(ImageGrid, ImageGrid, Vec<BBox>)> {
    let (h, w) = image.shape();
    let (small_max, large_min) = size_class_bounds(h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x414e_4f4d_414c_5921);

    // Pixels bright enough that both polarities visibly change them.
    let foreground: Vec<(usize, usize)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| {
            let v = image.get(r, c);
            v > 0.15 && v < 0.97
        })
        .collect();
    if foreground.is_empty() {
        return Err(Error::config("no foreground to place an anomaly in"));
    }

    let (lo, hi) = match spec.size_class {
        SizeClass::Small => ((small_max * 0.3).max(2.0), small_max - 0.01),
        SizeClass::Medium => (small_max * 1.3, large_min * 0.8),
        SizeClass::Large => (large_min * 1.05, large_min * 2.2),
    };
    if lo >= hi {
        return Err(Error::config("size-class bounds collapsed at this resolution"));
    }
    let target = rng.gen_range(lo..hi);

    let factor = match spec.polarity {
        Polarity::Hypo => rng.gen_range(0.3..0.7),
        Polarity::Hyper => rng.gen_range(0.25..0.45),
    };
    let aspect = rng.gen_range(0.6..1.0);
    let rot: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let lobes = rng.gen_range(3..6);
    let lobe_amp = match spec.shape {
        AnomalyShape::Blob => rng.gen_range(0.2..0.35),
        AnomalyShape::Ellipse => 0.0,
    };
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    // Rejection loop: resize/relocate until the altered-pixel count lands
    // inside the class bounds.
    for attempt in 0..200 {
        let &(cy, cx) = &foreground[rng.gen_range(0..foreground.len())];
        let mut radius = (target / (std::f64::consts::PI * aspect)).sqrt();
        for _ in 0..25 {
            let mut out = image.clone();
            let mut mask = ImageGrid::zeros(h, w)?;
            let mut count = 0usize;
            let r_span = (radius * (1.0 + lobe_amp)).ceil() as i64 + 1;
            for dr in -r_span..=r_span {
                for dc in -r_span..=r_span {
                    let rr = cy as i64 + dr;
                    let cc = cx as i64 + dc;
                    if rr < 0 || rr >= h as i64 || cc < 0 || cc >= w as i64 {
                        continue;
                    }
                    let (dx, dy) = (dc as f64, dr as f64);
                    let theta = dy.atan2(dx);
                    let (s, co) = rot.sin_cos();
                    let u = co * dx + s * dy;
                    let v = -s * dx + co * dy;
                    let base = ((u / radius).powi(2) + (v / (radius * aspect)).powi(2)).sqrt();
                    let wobble = 1.0 + lobe_amp * (lobes as f64 * theta + phase).sin();
                    let q = base / wobble;
                    if q > 1.0 {
                        continue;
                    }
                    let (pr, pc) = (rr as usize, cc as usize);
                    let old = image.get(pr, pc);
                    if old <= 0.05 {
                        continue; // keep anomalies on tissue
                    }
                    // Smooth interior falloff; every mask pixel changes.
                    let alpha = 0.35 + 0.65 * (1.0 - q * q);
                    let new = match spec.polarity {
                        Polarity::Hypo => old * (1.0 - alpha * (1.0 - factor)),
                        Polarity::Hyper => (old + alpha * factor).min(1.0),
                    };
                    if (new - old).abs() > 1e-9 {
                        out.set(pr, pc, new);
                        mask.set(pr, pc, 1.0);
                        count += 1;
                    }
                }
            }
            let class_ok = count > 0 && classify_popcount(count, h, w) == spec.size_class;
            if class_ok {
                let boxes = connected_components(&mask).into_iter().map(|c| c.bbox).collect();
                return Ok((out, mask, boxes));
            }
            if count == 0 {
                break; // bad placement, pick a new center
            }
            radius *= (target / count as f64).sqrt().clamp(0.5, 2.0);
        }
        let _ = attempt;
    }
    Err(Error::config(format!(
        "could not fit a {} anomaly into the foreground",
        spec.size_class
    )))
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Nearest-rank percentile over nonzero pixels.
fn percentile_nonzero(raw: &ImageGrid, pct: f64) -> Result<f64> {
    let mut vals: Vec<f64> = raw.values().iter().copied().filter(|&v| v > 0.0).collect();
    if vals.is_empty() {
        return Err(Error::config("preprocess: image is all zeros"));
    }
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = ((pct / 100.0) * vals.len() as f64).ceil() as usize;
    Ok(vals[rank.clamp(1, vals.len()) - 1])
}

fn bilinear_resize(src: &ImageGrid, target: (usize, usize)) -> Result<ImageGrid> {
    let (sh, sw) = src.shape();
    let (th, tw) = target;
    if (sh, sw) == (th, tw) {
        return Ok(src.clone());
    }
    ImageGrid::from_fn(th, tw, |r, c| {
        // Pixel-center alignment.
        let fy = ((r as f64 + 0.5) * sh as f64 / th as f64 - 0.5).clamp(0.0, sh as f64 - 1.0);
        let fx = ((c as f64 + 0.5) * sw as f64 / tw as f64 - 0.5).clamp(0.0, sw as f64 - 1.0);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(sh - 1), (x0 + 1).min(sw - 1));
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let top = src.get(y0, x0) * (1.0 - tx) + src.get(y0, x1) * tx;
        let bot = src.get(y1, x0) * (1.0 - tx) + src.get(y1, x1) * tx;
        top * (1.0 - ty) + bot * ty
    })
}

/// Normalize to the 98th percentile of nonzero pixels, clamp to [0, 1],
/// bilinear-resize to the target size.
pub fn preprocess(raw: &ImageGrid, target_size: (usize, usize)) -> Result<ImageGrid> {
    if raw.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::config("preprocess input must be finite and non-negative"));
    }
    let p98 = percentile_nonzero(raw, 98.0)?;
    let normalized = raw.map(|v| (v / p98).clamp(0.0, 1.0));
    bilinear_resize(&normalized, target_size)
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestHealthy,
    TestAnomalous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<BBox>>,
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_class: Option<SizeClass>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub size: (usize, usize),
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn load(path: &Path) -> Result<DatasetManifest> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serialization");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub size: (usize, usize),
    pub n_train: usize,
    pub n_test_healthy: usize,
    /// Anomalous test images per size class.
    pub n_test_anomalous_per_class: usize,
}

impl DatasetConfig {
    pub fn new(seed: u64) -> Self {
        DatasetConfig {
            seed,
            size: (64, 64),
            n_train: 96,
            n_test_healthy: 16,
            n_test_anomalous_per_class: 20,
        }
    }
}

/// Generates the full synthetic benchmark under `out_dir` and writes
/// `manifest.json`. Fully deterministic in the dataset seed.
pub fn build_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(out_dir)?;
    let mut records = Vec::new();
    let phantom_seed = |idx: u64| config.seed.wrapping_mul(1_000_003).wrapping_add(idx);

    let mut idx: u64 = 0;
    for i in 0..config.n_train {
        let spec = PhantomSpec::new(phantom_seed(idx), config.size);
        idx += 1;
        let img = generate_phantom(&spec)?;
        let name = format!("train_{i:04}.png");
        io::write_png16(&out_dir.join(&name), &img)?;
        records.push(ManifestRecord {
            image: name,
            mask: None,
            boxes: None,
            split: Split::Train,
            size_class: None,
        });
    }

    for i in 0..config.n_test_healthy {
        let spec = PhantomSpec::new(phantom_seed(idx), config.size);
        idx += 1;
        let img = generate_phantom(&spec)?;
        let name = format!("test_healthy_{i:04}.png");
        io::write_png16(&out_dir.join(&name), &img)?;
        records.push(ManifestRecord {
            image: name,
            mask: None,
            boxes: None,
            split: Split::TestHealthy,
            size_class: None,
        });
    }

    let classes = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];
    let polarities = [Polarity::Hypo, Polarity::Hyper];
    let shapes = [AnomalyShape::Blob, AnomalyShape::Ellipse];
    for &class in &classes {
        for i in 0..config.n_test_anomalous_per_class {
            let spec = PhantomSpec::new(phantom_seed(idx), config.size);
            idx += 1;
            let healthy = generate_phantom(&spec)?;
            let aspec = AnomalySpec {
                seed: phantom_seed(idx),
                size_class: class,
                polarity: polarities[i % 2],
                shape: shapes[(i / 2) % 2],
            };
            idx += 1;
            let (img, mask, boxes) = inject_anomaly(&healthy, &aspec)?;
            let name = format!("test_anom_{class}_{i:04}.png");
            let mask_name = format!("test_anom_{class}_{i:04}_mask.png");
            io::write_png16(&out_dir.join(&name), &img)?;
            io::write_mask_png(&out_dir.join(&mask_name), &mask)?;
            records.push(ManifestRecord {
                image: name,
                mask: Some(mask_name),
                boxes: Some(boxes),
                split: Split::TestAnomalous,
                size_class: Some(class),
            });
        }
    }

    let manifest = DatasetManifest {
        version: 1,
        seed: config.seed,
        size: config.size,
        records,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_deterministic_and_in_range() {
        let spec = PhantomSpec::new(5, (64, 64));
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.min() >= 0.0 && a.max() <= 1.0);
    }

    #[test]
    fn phantom_range_many_seeds() {
        for seed in 0..200 {
            let spec = PhantomSpec::new(seed, (32, 32));
            let img = generate_phantom(&spec).unwrap();
            assert!(img.min() >= 0.0 && img.max() <= 1.0, "seed {seed}");
        }
    }

    #[test]
    fn phantoms_differ_across_seeds() {
        let a = generate_phantom(&PhantomSpec::new(1, (64, 64))).unwrap();
        let b = generate_phantom(&PhantomSpec::new(2, (64, 64))).unwrap();
        assert!(a.mean_abs_diff(&b).unwrap() > 0.0);
    }

    #[test]
    fn anomaly_size_classes() {
        let img = generate_phantom(&PhantomSpec::new(9, (64, 64))).unwrap();
        for (class, polarity) in [
            (SizeClass::Small, Polarity::Hypo),
            (SizeClass::Medium, Polarity::Hyper),
            (SizeClass::Large, Polarity::Hypo),
        ] {
            let spec = AnomalySpec {
                seed: 77,
                size_class: class,
                polarity,
                shape: AnomalyShape::Blob,
            };
            let (_, mask, boxes) = inject_anomaly(&img, &spec).unwrap();
            let count = mask.values().iter().filter(|&&v| v > 0.5).count();
            assert_eq!(classify_popcount(count, 64, 64), class);
            assert!(!boxes.is_empty());
        }
    }

    #[test]
    fn anomaly_local_only() {
        let img = generate_phantom(&PhantomSpec::new(3, (64, 64))).unwrap();
        let spec = AnomalySpec {
            seed: 4,
            size_class: SizeClass::Medium,
            polarity: Polarity::Hypo,
            shape: AnomalyShape::Ellipse,
        };
        let (out, mask, _) = inject_anomaly(&img, &spec).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                if mask.get(r, c) < 0.5 {
                    assert_eq!(out.get(r, c), img.get(r, c), "changed outside mask");
                } else {
                    assert_ne!(out.get(r, c), img.get(r, c), "mask pixel unchanged");
                }
            }
        }
    }

    #[test]
    fn size_class_thresholds_at_128() {
        assert_eq!(classify_popcount(70, 128, 128), SizeClass::Small);
        assert_eq!(classify_popcount(71, 128, 128), SizeClass::Medium);
        assert_eq!(classify_popcount(569, 128, 128), SizeClass::Medium);
        assert_eq!(classify_popcount(570, 128, 128), SizeClass::Large);
    }

    #[test]
    fn preprocess_normalizes_to_p98() {
        // 100 nonzero values 0.02..2.0; 98th percentile = 1.96.
        let raw = ImageGrid::from_fn(10, 10, |r, c| (r * 10 + c + 1) as f64 * 0.02).unwrap();
        let out = preprocess(&raw, (10, 10)).unwrap();
        let expected = 0.02 / 1.96;
        assert!((out.get(0, 0) - expected).abs() < 1e-12);
        // Values above the percentile clamp to exactly 1.
        assert_eq!(out.get(9, 9), 1.0);
    }

    #[test]
    fn preprocess_constant_image() {
        let raw = ImageGrid::constant(8, 8, 5.0).unwrap();
        let out = preprocess(&raw, (8, 8)).unwrap();
        assert_eq!(out.min(), 1.0);
        assert_eq!(out.max(), 1.0);
    }

    #[test]
    fn preprocess_all_zero_errors() {
        let raw = ImageGrid::zeros(8, 8).unwrap();
        assert!(preprocess(&raw, (8, 8)).is_err());
    }

    #[test]
    fn preprocess_idempotent_same_size() {
        let img = generate_phantom(&PhantomSpec::new(11, (32, 32))).unwrap();
        let once = preprocess(&img, (32, 32)).unwrap();
        let twice = preprocess(&once, (32, 32)).unwrap();
        assert!(once.max_abs_diff(&twice).unwrap() < 1e-6);
    }

    #[test]
    fn resize_changes_shape() {
        let img = generate_phantom(&PhantomSpec::new(2, (64, 64))).unwrap();
        let out = preprocess(&img, (32, 32)).unwrap();
        assert_eq!(out.shape(), (32, 32));
        assert!(out.min() >= 0.0 && out.max() <= 1.0);
    }

    #[test]
    fn components_two_blobs() {
        let m = ImageGrid::from_fn(8, 8, |r, c| {
            f64::from((r < 2 && c < 2) || (r > 5 && c > 5))
        })
        .unwrap();
        let comps = connected_components(&m);
        assert_eq!(comps.len(), 2);
        let boxes: Vec<BBox> = comps.iter().map(|c| c.bbox).collect();
        assert!(boxes.contains(&BBox([0, 0, 1, 1])));
        assert!(boxes.contains(&BBox([6, 6, 7, 7])));
    }

    #[test]
    fn dataset_build_deterministic() {
        use tempfile::tempdir;
        let cfg = DatasetConfig {
            seed: 3,
            size: (32, 32),
            n_train: 2,
            n_test_healthy: 1,
            n_test_anomalous_per_class: 1,
        };
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        let m1 = build_dataset(&cfg, d1.path()).unwrap();
        let m2 = build_dataset(&cfg, d2.path()).unwrap();
        assert_eq!(m1.hash(), m2.hash());
        assert_eq!(m1.records.len(), 2 + 1 + 3);
        // Every anomalous record carries a mask whose boxes are tight.
        for rec in m1.records_in(Split::TestAnomalous) {
            let mask = io::read_mask_png(&d1.path().join(rec.mask.as_ref().unwrap())).unwrap();
            let recomputed: Vec<BBox> = connected_components(&mask)
                .into_iter()
                .map(|c| c.bbox)
                .collect();
            assert_eq!(rec.boxes.as_ref().unwrap(), &recomputed);
        }
    }
}
