//! Noise sources for the diffusion process: i.i.d. Gaussian fields and
//! fractal 2D simplex noise, both fully deterministic in
//! `(spec, shape, draw_index)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Simplex,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseKind::Gaussian => write!(f, "gaussian"),
            NoiseKind::Simplex => write!(f, "simplex"),
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gauss" => Ok(NoiseKind::Gaussian),
            "simplex" => Ok(NoiseKind::Simplex),
            other => Err(Error::config(format!("unknown noise kind '{}'", other))),
        }
    }
}

/// Declarative choice of noise source. The simplex fields are ignored when
/// `kind` is Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
    pub simplex_octaves: u32,
    /// Amplitude decay per octave, in (0, 1].
    pub simplex_persistence: f64,
    /// Pixels per lowest-frequency feature.
    pub simplex_base_period: f64,
}

impl NoiseSpec {
    pub fn gaussian(seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Gaussian,
            seed,
            simplex_octaves: 6,
            simplex_persistence: 0.8,
            simplex_base_period: 32.0,
        }
    }

    pub fn simplex(seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Simplex,
            ..NoiseSpec::gaussian(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == NoiseKind::Simplex {
            if self.simplex_octaves == 0 {
                return Err(Error::config("simplex_octaves must be >= 1"));
            }
            if !(self.simplex_persistence > 0.0 && self.simplex_persistence <= 1.0) {
                return Err(Error::config("simplex_persistence must lie in (0, 1]"));
            }
            if !(self.simplex_base_period > 0.0) {
                return Err(Error::config("simplex_base_period must be positive"));
            }
        }
        Ok(())
    }
}

/// Derives an independent 256-bit stream seed from (seed, draw_index).
fn stream_seed(seed: u64, draw_index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(draw_index.to_le_bytes());
    h.finalize().into()
}

/// Draws one noise field. Gaussian fields are i.i.d. standard normal;
/// simplex fields are fractal octave sums standardized to zero mean and unit
/// variance so either kind is drop-in compatible with the forward process.
pub fn sample_noise(spec: &NoiseSpec, shape: (usize, usize), draw_index: u64) -> Result<ImageGrid> {
    spec.validate()?;
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::config(format!("zero-area noise shape {}x{}", h, w)));
    }
    match spec.kind {
        NoiseKind::Gaussian => {
            let mut rng = ChaCha8Rng::from_seed(stream_seed(spec.seed, draw_index));
            // Row-major draw order, fixed regardless of fill strategy.
            let vals: Vec<f64> = (0..h * w).map(|_| standard_normal(&mut rng)).collect();
            ImageGrid::from_fn(h, w, |r, c| vals[r * w + c])
        }
        NoiseKind::Simplex => {
            let simplex = Simplex2d::new(spec.seed);
            // Per-draw domain offsets decorrelate successive draws while the
            // gradient lattice stays tied to the spec seed.
            let mut rng = ChaCha8Rng::from_seed(stream_seed(spec.seed, draw_index));
            let offsets: Vec<(f64, f64)> = (0..spec.simplex_octaves)
                .map(|_| {
                    (
                        rng.gen_range(0.0..65536.0),
                        rng.gen_range(0.0..65536.0),
                    )
                })
                .collect();
            let mut field = ImageGrid::from_fn(h, w, |r, c| {
                let mut value = 0.0;
                let mut freq = 1.0 / spec.simplex_base_period;
                let mut amp = 1.0;
                for &(ox, oy) in &offsets {
                    value += amp * simplex.sample((c as f64 + ox) * freq, (r as f64 + oy) * freq);
                    freq *= 2.0;
                    amp *= spec.simplex_persistence;
                }
                value
            })?;
            standardize(&mut field);
            Ok(field)
        }
    }
}

/// ChaCha-fed Box-Muller draw. `rand_distr` would also do; keeping the
/// dependency surface small since this is the only distribution needed.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn standardize(field: &mut ImageGrid) {
    let mean = field.mean();
    let var = field.variance();
    let std = var.sqrt();
    if std < 1e-12 {
        *field = field.map(|_| 0.0);
        return;
    }
    *field = field.map(|v| (v - mean) / std);
}

const SKEW_2D: f64 = 0.366_025_403_784_438_6; // (sqrt(3) - 1) / 2
const UNSKEW_2D: f64 = 0.211_324_865_405_187_1; // (3 - sqrt(3)) / 6

const GRADIENTS_2D: [(f64, f64); 8] = [
    (1.0, 1.0),
    (-1.0, 1.0),
    (1.0, -1.0),
    (-1.0, -1.0),
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
];

/// 2D gradient-lattice simplex noise with a seed-shuffled permutation table.
pub struct Simplex2d {
    perm: [u8; 512],
}

impl Simplex2d {
    pub fn new(seed: u64) -> Self {
        let mut table: Vec<u8> = (0..=255).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Fisher-Yates shuffle.
        for i in (1..256).rev() {
            let j = rng.gen_range(0..=i);
            table.swap(i, j);
        }
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = table[i & 255];
        }
        Simplex2d { perm }
    }

    fn grad(&self, ix: i64, iy: i64) -> (f64, f64) {
        let hash = self.perm[(self.perm[(ix & 255) as usize] as usize + (iy & 255) as usize) & 511];
        GRADIENTS_2D[(hash & 7) as usize]
    }

    /// Noise value at (x, y), roughly in [-1, 1].
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        // Skew input space onto the simplex lattice.
        let s = (x + y) * SKEW_2D;
        let i = (x + s).floor();
        let j = (y + s).floor();
        let t = (i + j) * UNSKEW_2D;
        let x0 = x - (i - t);
        let y0 = y - (j - t);

        // Offsets for the second corner of the containing triangle.
        let (i1, j1) = if x0 > y0 { (1.0, 0.0) } else { (0.0, 1.0) };

        let x1 = x0 - i1 + UNSKEW_2D;
        let y1 = y0 - j1 + UNSKEW_2D;
        let x2 = x0 - 1.0 + 2.0 * UNSKEW_2D;
        let y2 = y0 - 1.0 + 2.0 * UNSKEW_2D;

        let corners = [
            (x0, y0, i as i64, j as i64),
            (x1, y1, (i + i1) as i64, (j + j1) as i64),
            (x2, y2, i as i64 + 1, j as i64 + 1),
        ];

        let mut total = 0.0;
        for &(dx, dy, ix, iy) in &corners {
            let falloff = 0.5 - dx * dx - dy * dy;
            if falloff > 0.0 {
                let (gx, gy) = self.grad(ix, iy);
                let f2 = falloff * falloff;
                total += f2 * f2 * (gx * dx + gy * dy);
            }
        }
        70.0 * total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_deterministic() {
        let spec = NoiseSpec::gaussian(42);
        let a = sample_noise(&spec, (64, 64), 3).unwrap();
        let b = sample_noise(&spec, (64, 64), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn draw_index_changes_field() {
        for spec in [NoiseSpec::gaussian(42), NoiseSpec::simplex(42)] {
            let a = sample_noise(&spec, (32, 32), 0).unwrap();
            let b = sample_noise(&spec, (32, 32), 1).unwrap();
            assert!(a.mean_abs_diff(&b).unwrap() > 0.0);
        }
    }

    #[test]
    fn simplex_deterministic() {
        let spec = NoiseSpec::simplex(7);
        let a = sample_noise(&spec, (48, 48), 11).unwrap();
        let b = sample_noise(&spec, (48, 48), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn simplex_standardized() {
        let spec = NoiseSpec::simplex(1);
        let f = sample_noise(&spec, (64, 64), 0).unwrap();
        assert!(f.mean().abs() < 1e-9);
        assert!((f.variance() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_area_rejected() {
        let spec = NoiseSpec::gaussian(0);
        assert!(sample_noise(&spec, (0, 4), 0).is_err());
    }

    #[test]
    fn invalid_simplex_params_rejected() {
        let mut spec = NoiseSpec::simplex(0);
        spec.simplex_octaves = 0;
        assert!(sample_noise(&spec, (8, 8), 0).is_err());
        let mut spec = NoiseSpec::simplex(0);
        spec.simplex_persistence = 0.0;
        assert!(sample_noise(&spec, (8, 8), 0).is_err());
    }
}
