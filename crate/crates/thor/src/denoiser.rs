//! The epsilon-predicting network: configuration, training on healthy-only
//! data, and checkpoint persistence.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::nn::Unet;
use crate::noise::{sample_noise, NoiseKind, NoiseSpec};
use crate::schedule::NoiseSchedule;
use crate::{diffusion, nn::Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub base_channels: usize,
    /// Number of down/up resolution levels.
    pub depth: usize,
    pub time_embed_dim: usize,
    pub image_size: (usize, usize),
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            base_channels: 32,
            depth: 3,
            time_embed_dim: 32,
            image_size: (64, 64),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.depth == 0 {
            return Err(Error::config("base_channels and depth must be positive"));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::config("time_embed_dim must be even and >= 2"));
        }
        let (h, w) = self.image_size;
        let div = 1usize << self.depth;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::config(format!(
                "image size {}x{} must be divisible by 2^depth = {}",
                h, w, div
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub noise_spec: NoiseSpec,
}

impl TrainConfig {
    pub fn new(noise_spec: NoiseSpec) -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 2e-4,
            seed: 0,
            noise_spec,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(Error::config("epochs, batch_size and learning_rate must be positive"));
        }
        self.noise_spec.validate()
    }
}

/// Hash of the schedule and the inference-relevant part of the noise spec
/// (kind and simplex parameters; the seed varies per run by design).
pub fn schedule_fingerprint(schedule: &NoiseSchedule, spec: &NoiseSpec) -> String {
    #[derive(Serialize)]
    struct Fp<'a> {
        schedule: &'a NoiseSchedule,
        kind: NoiseKind,
        octaves: u32,
        persistence: f64,
        base_period: f64,
    }
    let payload = serde_json::to_vec(&Fp {
        schedule,
        kind: spec.kind,
        octaves: spec.simplex_octaves,
        persistence: spec.simplex_persistence,
        base_period: spec.simplex_base_period,
    })
    .expect("fingerprint serialization");
    hex::encode(Sha256::digest(payload))
}

pub struct DenoiserModel {
    net: Unet,
    config: DenoiserConfig,
    schedule: NoiseSchedule,
    noise_spec: NoiseSpec,
    train_seed: u64,
}

impl DenoiserModel {
    /// Freshly initialized (untrained) model.
    pub fn init(
        config: DenoiserConfig,
        schedule: NoiseSchedule,
        noise_spec: NoiseSpec,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        noise_spec.validate()?;
        let net = Unet::new(config.base_channels, config.depth, config.time_embed_dim, seed);
        Ok(DenoiserModel {
            net,
            config,
            schedule,
            noise_spec,
            train_seed: seed,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn noise_spec(&self) -> &NoiseSpec {
        &self.noise_spec
    }

    pub fn fingerprint(&self) -> String {
        schedule_fingerprint(&self.schedule, &self.noise_spec)
    }

    /// Errors when the inference-time schedule/noise spec differ from the
    /// ones the checkpoint was trained against.
    pub fn check_compatible(&self, schedule: &NoiseSchedule, spec: &NoiseSpec) -> Result<()> {
        let got = schedule_fingerprint(schedule, spec);
        let expected = self.fingerprint();
        if got != expected {
            return Err(Error::FingerprintMismatch { expected, got });
        }
        Ok(())
    }

    /// ε̂ = ε_θ(x_t, t). Deterministic; no stochastic layers.
    pub fn predict_noise(&self, x_t: &ImageGrid, t: usize) -> Result<ImageGrid> {
        self.schedule.check_t(t)?;
        if x_t.shape() != self.config.image_size {
            return Err(Error::ShapeMismatch {
                expected: self.config.image_size,
                got: x_t.shape(),
            });
        }
        let (y, _) = self.net.forward(x_t.values(), t);
        ImageGrid::new(y)
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }
}

pub struct TrainOutput {
    pub model: DenoiserModel,
    /// (epoch, mean epsilon-MSE) per epoch.
    pub curve: Vec<(usize, f64)>,
}

/// Trains an epsilon predictor on a healthy-only dataset by minimizing
/// E‖ε − ε_θ(√ᾱ_t·x₀ + √(1−ᾱ_t)·ε, t)‖² over uniform t and noise drawn
/// from the configured spec.
pub fn train(
    dataset: &[ImageGrid],
    schedule: &NoiseSchedule,
    tcfg: &TrainConfig,
    dcfg: &DenoiserConfig,
) -> Result<TrainOutput> {
    tcfg.validate()?;
    dcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset is empty"));
    }
    for img in dataset {
        if img.shape() != dcfg.image_size {
            return Err(Error::ShapeMismatch {
                expected: dcfg.image_size,
                got: img.shape(),
            });
        }
    }

    let mut model = DenoiserModel::init(
        dcfg.clone(),
        schedule.clone(),
        tcfg.noise_spec.clone(),
        tcfg.seed,
    )?;
    let mut opt = Adam::new(tcfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x7468_6f72_7472_6e21);
    let mut draw_index: u64 = 0;
    let n_px = (dcfg.image_size.0 * dcfg.image_size.1) as f64;

    let mut curve = Vec::with_capacity(tcfg.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 1..=tcfg.epochs {
        // Seeded shuffle fixes data order.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(tcfg.batch_size) {
            model.net.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let x0 = &dataset[idx];
                let t = rng.gen_range(1..=schedule.t_max());
                let eps = sample_noise(&tcfg.noise_spec, dcfg.image_size, draw_index)?;
                draw_index += 1;
                let x_t = diffusion::forward_closed(x0, t, schedule, &eps)?;
                let (pred, cache) = model.net.forward(x_t.values(), t);
                let diff: Array2<f64> = &pred - eps.values();
                let loss = diff.iter().map(|d| d * d).sum::<f64>() / n_px;
                epoch_loss += loss;
                seen += 1;
                let dy = diff.mapv(|d| 2.0 * d / n_px * scale);
                model.net.backward(&cache, &dy);
            }
            opt.step(&mut model.net);
        }
        curve.push((epoch, epoch_loss / seen as f64));
    }

    Ok(TrainOutput { model, curve })
}

/// Writes the per-epoch training curve as CSV with columns (epoch, mean_loss).
pub fn write_training_curve(curve: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,mean_loss\n");
    for (epoch, loss) in curve {
        out.push_str(&format!("{},{}\n", epoch, loss));
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoint persistence: raw little-endian f64 parameter blob plus a JSON
// header, with a human-readable sidecar metadata file at `<path>.json`.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"THORCKP1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: DenoiserConfig,
    schedule: NoiseSchedule,
    noise_spec: NoiseSpec,
    train_seed: u64,
    fingerprint: String,
    param_count: usize,
}

#[derive(Serialize, Deserialize)]
struct SidecarMetadata {
    #[serde(rename = "T")]
    t_max: usize,
    beta_min: f64,
    beta_max: f64,
    noise_kind: NoiseKind,
    seed: u64,
    fingerprint: String,
    config: DenoiserConfig,
}

pub fn save_checkpoint(model: &DenoiserModel, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        config: model.config.clone(),
        schedule: model.schedule.clone(),
        noise_spec: model.noise_spec.clone(),
        train_seed: model.train_seed,
        fingerprint: model.fingerprint(),
        param_count: model.net.num_params(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut file = fs::File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    for v in model.net.to_flat() {
        file.write_all(&v.to_le_bytes())?;
    }

    let sidecar = SidecarMetadata {
        t_max: model.schedule.t_max(),
        beta_min: model.schedule.betas()[0],
        beta_max: *model.schedule.betas().last().expect("non-empty schedule"),
        noise_kind: model.noise_spec.kind,
        seed: model.train_seed,
        fingerprint: header.fingerprint,
        config: model.config.clone(),
    };
    let sidecar_path = sidecar_path(path);
    fs::write(&sidecar_path, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn sidecar_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut os = checkpoint.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

pub fn load_checkpoint(path: &Path) -> Result<DenoiserModel> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{} is truncated", path.display())))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::Checkpoint("truncated header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
    header.config.validate()?;

    let mut blob = Vec::new();
    file.read_to_end(&mut blob)?;
    if blob.len() != header.param_count * 8 {
        return Err(Error::Checkpoint(format!(
            "parameter blob has {} bytes, expected {}",
            blob.len(),
            header.param_count * 8
        )));
    }
    let flat: Vec<f64> = blob
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();

    let mut model = DenoiserModel::init(
        header.config,
        header.schedule,
        header.noise_spec,
        header.train_seed,
    )?;
    if !model.net.load_flat(&flat) {
        return Err(Error::Checkpoint("parameter count mismatch".into()));
    }
    let fp = model.fingerprint();
    if fp != header.fingerprint {
        return Err(Error::Checkpoint(format!(
            "stored fingerprint {} does not match recomputed {}",
            header.fingerprint, fp
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_dcfg() -> DenoiserConfig {
        DenoiserConfig {
            base_channels: 2,
            depth: 1,
            time_embed_dim: 4,
            image_size: (8, 8),
        }
    }

    fn tiny_schedule() -> NoiseSchedule {
        NoiseSchedule::linear(10, 0.01, 0.2).unwrap()
    }

    fn tiny_dataset(n: usize) -> Vec<ImageGrid> {
        (0..n)
            .map(|i| {
                ImageGrid::from_fn(8, 8, |r, c| ((r + c + i) % 5) as f64 / 5.0).unwrap()
            })
            .collect()
    }

    #[test]
    fn predict_shape_and_determinism() {
        let m = DenoiserModel::init(tiny_dcfg(), tiny_schedule(), NoiseSpec::gaussian(0), 1)
            .unwrap();
        let x = ImageGrid::constant(8, 8, 0.5).unwrap();
        let a = m.predict_noise(&x, 3).unwrap();
        let b = m.predict_noise(&x, 3).unwrap();
        assert_eq!(a.shape(), (8, 8));
        assert_eq!(a, b);
    }

    #[test]
    fn predict_rejects_wrong_shape_and_t() {
        let m = DenoiserModel::init(tiny_dcfg(), tiny_schedule(), NoiseSpec::gaussian(0), 1)
            .unwrap();
        let bad = ImageGrid::constant(4, 4, 0.5).unwrap();
        assert!(m.predict_noise(&bad, 3).is_err());
        let ok = ImageGrid::constant(8, 8, 0.5).unwrap();
        assert!(m.predict_noise(&ok, 0).is_err());
        assert!(m.predict_noise(&ok, 11).is_err());
    }

    #[test]
    fn train_rejects_empty_and_mismatched() {
        let tcfg = TrainConfig::new(NoiseSpec::gaussian(0));
        assert!(train(&[], &tiny_schedule(), &tcfg, &tiny_dcfg()).is_err());
        let wrong = vec![ImageGrid::constant(4, 4, 0.1).unwrap()];
        assert!(train(&wrong, &tiny_schedule(), &tcfg, &tiny_dcfg()).is_err());
    }

    #[test]
    fn one_epoch_checkpoint_roundtrip() {
        let mut tcfg = TrainConfig::new(NoiseSpec::gaussian(3));
        tcfg.epochs = 1;
        tcfg.batch_size = 4;
        let out = train(&tiny_dataset(8), &tiny_schedule(), &tcfg, &tiny_dcfg()).unwrap();
        assert_eq!(out.curve.len(), 1);

        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&out.model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.fingerprint(), out.model.fingerprint());

        let x = ImageGrid::from_fn(8, 8, |r, c| (r * 8 + c) as f64 / 64.0).unwrap();
        let a = out.model.predict_noise(&x, 5).unwrap();
        let b = loaded.predict_noise(&x, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sidecar_schema() {
        let m = DenoiserModel::init(tiny_dcfg(), tiny_schedule(), NoiseSpec::gaussian(7), 7)
            .unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&m, &path).unwrap();
        let side: serde_json::Value =
            serde_json::from_slice(&fs::read(sidecar_path(&path)).unwrap()).unwrap();
        for key in ["T", "beta_min", "beta_max", "noise_kind", "seed"] {
            assert!(side.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn wrong_schedule_incompatible() {
        let m = DenoiserModel::init(tiny_dcfg(), tiny_schedule(), NoiseSpec::gaussian(0), 1)
            .unwrap();
        let other = NoiseSchedule::linear(20, 0.01, 0.1).unwrap();
        assert!(matches!(
            m.check_compatible(&other, &NoiseSpec::gaussian(0)),
            Err(Error::FingerprintMismatch { .. })
        ));
        // Different seed, same kind/params: still compatible.
        assert!(m
            .check_compatible(&tiny_schedule(), &NoiseSpec::gaussian(99))
            .is_ok());
        // Different kind: incompatible.
        assert!(m
            .check_compatible(&tiny_schedule(), &NoiseSpec::simplex(0))
            .is_err());
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn seeded_training_reproducible() {
        let mut tcfg = TrainConfig::new(NoiseSpec::gaussian(5));
        tcfg.epochs = 2;
        tcfg.batch_size = 4;
        tcfg.seed = 42;
        let data = tiny_dataset(6);
        let a = train(&data, &tiny_schedule(), &tcfg, &tiny_dcfg()).unwrap();
        let b = train(&data, &tiny_schedule(), &tcfg, &tiny_dcfg()).unwrap();
        let la = a.curve.last().unwrap().1;
        let lb = b.curve.last().unwrap().1;
        assert!((la - lb).abs() < 1e-4, "{la} vs {lb}");
    }
}
