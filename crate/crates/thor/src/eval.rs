//! Metrics and experiment harnesses: maximum-achievable Dice with a
//! dataset-level threshold sweep, size stratification, bounding-box
//! recall/F1, pixel AUROC, and the noise-level ablation grid.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::{harmonic_score, MultiScaleStructural, DEFAULT_EPS_FLOOR};
use crate::data::{
    classify_popcount, connected_components, BBox, DatasetManifest, SizeClass, Split,
};
use crate::denoiser::DenoiserModel;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::io;
use crate::noise::{NoiseKind, NoiseSpec};
use crate::restoration::{restore_thor, HarmonizationPlan};

// ---------------------------------------------------------------------------
// Dice
// ---------------------------------------------------------------------------

/// Dice coefficient of two binary masks; both empty → 1 by convention.
pub fn dice(pred: &ImageGrid, gt: &ImageGrid) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let mut inter = 0usize;
    let mut p = 0usize;
    let mut g = 0usize;
    for (a, b) in pred.values().iter().zip(gt.values().iter()) {
        let (pa, gb) = (*a > 0.5, *b > 0.5);
        p += usize::from(pa);
        g += usize::from(gb);
        inter += usize::from(pa && gb);
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

fn dice_at_threshold(score: &ImageGrid, gt: &ImageGrid, thr: f64) -> Result<f64> {
    score.check_same_shape(gt)?;
    let mut inter = 0usize;
    let mut p = 0usize;
    let mut g = 0usize;
    for (s, b) in score.values().iter().zip(gt.values().iter()) {
        let (pa, gb) = (*s > thr, *b > 0.5);
        p += usize::from(pa);
        g += usize::from(gb);
        inter += usize::from(pa && gb);
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// Candidate thresholds: quantiles of the distinct pooled score values.
/// With n >= the number of distinct values this is the exhaustive sweep.
fn threshold_candidates(score_maps: &[ImageGrid], n_thresholds: usize) -> Vec<f64> {
    let mut pooled: Vec<f64> = score_maps
        .iter()
        .flat_map(|m| m.values().iter().copied())
        .collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    pooled.dedup();
    if pooled.len() <= n_thresholds || n_thresholds < 2 {
        return pooled;
    }
    (0..n_thresholds)
        .map(|i| pooled[i * (pooled.len() - 1) / (n_thresholds - 1)])
        .collect()
}

pub struct DiceSweep {
    pub best_dice: f64,
    pub best_threshold: f64,
    /// Per-class maxima over the same shared threshold grid.
    pub per_class: [Option<f64>; 3],
}

/// Full dataset-level sweep: one threshold shared across all images, mean
/// Dice maximized over the candidate grid, per-class columns alongside.
pub fn dice_sweep(
    score_maps: &[ImageGrid],
    gt_masks: &[ImageGrid],
    n_thresholds: usize,
) -> Result<DiceSweep> {
    if score_maps.is_empty() || score_maps.len() != gt_masks.len() {
        return Err(Error::EmptyInput("dice sweep needs aligned, non-empty map lists"));
    }
    for m in score_maps {
        if m.min() < 0.0 {
            return Err(Error::config("score maps must be non-negative"));
        }
    }
    let classes: Vec<SizeClass> = gt_masks
        .iter()
        .map(|g| stratify(g))
        .collect::<Result<_>>()?;

    let mut best = DiceSweep {
        best_dice: f64::NEG_INFINITY,
        best_threshold: 0.0,
        per_class: [None; 3],
    };
    for thr in threshold_candidates(score_maps, n_thresholds) {
        let mut sum = 0.0;
        let mut class_sum = [0.0f64; 3];
        let mut class_n = [0usize; 3];
        for ((s, g), class) in score_maps.iter().zip(gt_masks).zip(&classes) {
            let d = dice_at_threshold(s, g, thr)?;
            sum += d;
            let ci = *class as usize;
            class_sum[ci] += d;
            class_n[ci] += 1;
        }
        let mean = sum / score_maps.len() as f64;
        if mean > best.best_dice {
            best.best_dice = mean;
            best.best_threshold = thr;
        }
        for ci in 0..3 {
            if class_n[ci] > 0 {
                let m = class_sum[ci] / class_n[ci] as f64;
                if best.per_class[ci].is_none_or(|cur| m > cur) {
                    best.per_class[ci] = Some(m);
                }
            }
        }
    }
    Ok(best)
}

/// Maximum achievable Dice under a dataset-level threshold.
pub fn max_dice(
    score_maps: &[ImageGrid],
    gt_masks: &[ImageGrid],
    n_thresholds: usize,
) -> Result<(f64, f64)> {
    let sweep = dice_sweep(score_maps, gt_masks, n_thresholds)?;
    Ok((sweep.best_dice, sweep.best_threshold))
}

/// Per-image variant: each image gets its own optimal threshold. Reported
/// separately from the dataset-level number.
pub fn max_dice_per_image(
    score_maps: &[ImageGrid],
    gt_masks: &[ImageGrid],
    n_thresholds: usize,
) -> Result<f64> {
    if score_maps.is_empty() || score_maps.len() != gt_masks.len() {
        return Err(Error::EmptyInput("dice sweep needs aligned, non-empty map lists"));
    }
    let mut sum = 0.0;
    for (s, g) in score_maps.iter().zip(gt_masks) {
        let one = std::slice::from_ref(s);
        let mut best = 0.0f64;
        for thr in threshold_candidates(one, n_thresholds) {
            best = best.max(dice_at_threshold(s, g, thr)?);
        }
        sum += best;
    }
    Ok(sum / score_maps.len() as f64)
}

// ---------------------------------------------------------------------------
// Stratification
// ---------------------------------------------------------------------------

/// Size class of a ground-truth lesion mask; empty masks are an error.
pub fn stratify(gt_mask: &ImageGrid) -> Result<SizeClass> {
    let count = gt_mask.values().iter().filter(|&&v| v > 0.5).count();
    if count == 0 {
        return Err(Error::EmptyInput("cannot stratify an empty mask"));
    }
    let (h, w) = gt_mask.shape();
    Ok(classify_popcount(count, h, w))
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRule {
    pub min_component_area: usize,
    /// A GT box is hit when intersection / GT area >= this fraction.
    pub overlap_fraction: f64,
}

impl Default for DetectionRule {
    fn default() -> Self {
        DetectionRule {
            min_component_area: 4,
            overlap_fraction: 0.25,
        }
    }
}

impl DetectionRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction <= 1.0) {
            return Err(Error::config("overlap fraction must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Tight boxes of the thresholded map's 8-connected components, area
/// filtered, sorted by descending score mass.
pub fn detect_components(
    score_map: &ImageGrid,
    threshold: f64,
    rule: &DetectionRule,
) -> Result<Vec<BBox>> {
    rule.validate()?;
    if threshold < 0.0 {
        return Err(Error::config("detection threshold must be non-negative"));
    }
    let binary = score_map.map(|v| f64::from(v > threshold));
    let mut comps: Vec<(f64, BBox)> = connected_components(&binary)
        .into_iter()
        .filter(|c| c.pixels.len() >= rule.min_component_area)
        .map(|c| {
            let mass: f64 = c.pixels.iter().map(|&(r, col)| score_map.get(r, col)).sum();
            (mass, c.bbox)
        })
        .collect();
    comps.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite mass"));
    Ok(comps.into_iter().map(|(_, b)| b).collect())
}

/// Greedy one-to-one matching by descending overlap; returns the number of
/// matched (hit) pairs.
fn match_boxes(pred_boxes: &[BBox], gt_boxes: &[BBox], rule: &DetectionRule) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (gi, gt) in gt_boxes.iter().enumerate() {
        for (pi, pred) in pred_boxes.iter().enumerate() {
            let over_gt = pred.intersection_area(gt) as f64 / gt.area() as f64;
            if over_gt >= rule.overlap_fraction {
                pairs.push((over_gt, gi, pi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite overlap"));
    let mut gt_used = vec![false; gt_boxes.len()];
    let mut pred_used = vec![false; pred_boxes.len()];
    let mut hits = 0usize;
    for (_, gi, pi) in pairs {
        if !gt_used[gi] && !pred_used[pi] {
            gt_used[gi] = true;
            pred_used[pi] = true;
            hits += 1;
        }
    }
    hits
}

fn f1_of(recall: f64, precision: f64) -> f64 {
    if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Box-level detection metrics for one image.
pub fn recall_f1(
    pred_boxes: &[BBox],
    gt_boxes: &[BBox],
    rule: &DetectionRule,
) -> Result<(f64, f64, f64)> {
    rule.validate()?;
    let hits = match_boxes(pred_boxes, gt_boxes, rule);
    let recall = if gt_boxes.is_empty() {
        1.0
    } else {
        hits as f64 / gt_boxes.len() as f64
    };
    let precision = if pred_boxes.is_empty() {
        0.0
    } else {
        hits as f64 / pred_boxes.len() as f64
    };
    Ok((recall, precision, f1_of(recall, precision)))
}

// ---------------------------------------------------------------------------
// Pixel AUROC (auxiliary, threshold-free)
// ---------------------------------------------------------------------------

/// Rank-based AUROC over all pooled pixels, with tie correction.
pub fn pixel_auroc(score_maps: &[ImageGrid], gt_masks: &[ImageGrid]) -> Result<f64> {
    if score_maps.is_empty() || score_maps.len() != gt_masks.len() {
        return Err(Error::EmptyInput("auroc needs aligned, non-empty map lists"));
    }
    let mut samples: Vec<(f64, bool)> = Vec::new();
    for (s, g) in score_maps.iter().zip(gt_masks) {
        s.check_same_shape(g)?;
        for (v, m) in s.values().iter().zip(g.values().iter()) {
            samples.push((*v, *m > 0.5));
        }
    }
    let n_pos = samples.iter().filter(|(_, p)| *p).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::config("auroc undefined without both classes"));
    }
    samples.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    // Average ranks across ties.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < samples.len() {
        let mut j = i;
        while j < samples.len() && samples[j].0 == samples[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0; // 1-based
        for s in &samples[i..j] {
            if s.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

// ---------------------------------------------------------------------------
// Experiment harness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain partial diffusion (no harmonization).
    Ddpm,
    /// Harmonized restoration with temporal anomaly-map aggregation.
    Thor,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Ddpm => write!(f, "ddpm"),
            Method::Thor => write!(f, "thor"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ddpm" | "plain" => Ok(Method::Ddpm),
            "thor" => Ok(Method::Thor),
            other => Err(Error::config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSettings {
    pub method: Method,
    pub t_start: usize,
    /// THOR harmonization timesteps; None = the default bottom-third plan.
    pub harmonization_steps: Option<Vec<usize>>,
    pub n_thresholds: usize,
    pub rule: DetectionRule,
    pub seed: u64,
    /// Restoration runs averaged per image; each run re-noises the input
    /// with a different draw, damping the variance of a single realization.
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    pub stochastic_reverse: bool,
}

fn default_n_seeds() -> usize {
    3
}

impl EvalSettings {
    pub fn new(method: Method, t_start: usize, seed: u64) -> Self {
        EvalSettings {
            method,
            t_start,
            harmonization_steps: None,
            n_thresholds: 256,
            rule: DetectionRule::default(),
            seed,
            n_seeds: default_n_seeds(),
            stochastic_reverse: true,
        }
    }

    pub fn plan(&self) -> HarmonizationPlan {
        let mut plan = match self.method {
            Method::Ddpm => HarmonizationPlan::plain(self.t_start),
            Method::Thor => match &self.harmonization_steps {
                Some(steps) => HarmonizationPlan {
                    t_start: self.t_start,
                    harmonization_steps: steps.clone(),
                    ..HarmonizationPlan::plain(self.t_start)
                },
                None => HarmonizationPlan::thor_default(self.t_start),
            },
        };
        plan.stochastic_reverse = self.stochastic_reverse;
        plan
    }
}

/// One row of Table-style results. `pixel_auroc` is an auxiliary metric
/// not part of the headline comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub noise: NoiseKind,
    pub t_start: usize,
    pub n_images: usize,
    pub dice_avg: f64,
    pub dice_small: Option<f64>,
    pub dice_medium: Option<f64>,
    pub dice_large: Option<f64>,
    pub threshold: f64,
    pub dice_per_image: f64,
    pub pixel_auroc: Option<f64>,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub seed: u64,
    pub runtime_seconds: f64,
}

impl EvalReport {
    fn validate(&self) -> Result<()> {
        let in01 = |v: f64| (0.0..=1.0).contains(&v);
        let ok = in01(self.dice_avg)
            && in01(self.recall)
            && in01(self.precision)
            && in01(self.f1)
            && [self.dice_small, self.dice_medium, self.dice_large]
                .iter()
                .all(|o| o.is_none_or(in01));
        if !ok {
            return Err(Error::config("metric out of [0, 1]"));
        }
        Ok(())
    }

    /// Content hash over everything except wall time.
    pub fn hash(&self) -> String {
        let mut clone = self.clone();
        clone.runtime_seconds = 0.0;
        let bytes = serde_json::to_vec(&clone).expect("report serialization");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn csv_header() -> &'static str {
        "method,noise,t_start,n_images,dice_avg,dice_small,dice_medium,dice_large,\
         threshold,dice_per_image,pixel_auroc,recall,precision,f1,seed,runtime_seconds"
    }

    pub fn csv_row(&self) -> String {
        let opt = |o: Option<f64>| o.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.noise,
            self.t_start,
            self.n_images,
            self.dice_avg,
            opt(self.dice_small),
            opt(self.dice_medium),
            opt(self.dice_large),
            self.threshold,
            self.dice_per_image,
            opt(self.pixel_auroc),
            self.recall,
            self.precision,
            self.f1,
            self.seed,
            self.runtime_seconds
        )
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Scores one anomalous image: THOR aggregates the per-step maps with the
/// harmonic mean; the plain baseline scores the final restoration directly.
/// The score is averaged over `n_seeds` independent restoration runs.
pub fn score_image(
    model: &DenoiserModel,
    image: &ImageGrid,
    settings: &EvalSettings,
) -> Result<ImageGrid> {
    if settings.n_seeds == 0 {
        return Err(Error::config("n_seeds must be at least 1"));
    }
    let metric = MultiScaleStructural::default();
    let mut acc: Option<ImageGrid> = None;
    for r in 0..settings.n_seeds as u64 {
        let run_seed = settings.seed.wrapping_add(r.wrapping_mul(7919));
        let trace = restore_thor(
            model,
            image,
            &settings.plan(),
            model.schedule(),
            &NoiseSpec {
                seed: run_seed,
                ..model.noise_spec().clone()
            },
            &metric,
            run_seed,
        )?;
        let maps: Vec<ImageGrid> = trace.per_step_maps.into_iter().map(|(_, m)| m).collect();
        let score = harmonic_score(&maps, DEFAULT_EPS_FLOOR)?;
        acc = Some(match acc {
            None => score,
            Some(a) => a.zip_map(&score, |x, y| x + y)?,
        });
    }
    let n = settings.n_seeds as f64;
    Ok(acc.expect("n_seeds >= 1").map(|v| v / n))
}

/// Runs the full anomalous-split evaluation for one (method, t_start)
/// configuration and writes `report.json` + a CSV row under `out_dir`.
pub fn run_experiment(
    manifest_dir: &Path,
    manifest: &DatasetManifest,
    model: &DenoiserModel,
    settings: &EvalSettings,
    out_dir: Option<&Path>,
) -> Result<EvalReport> {
    let start = Instant::now();
    settings.rule.validate()?;

    let mut score_maps = Vec::new();
    let mut gt_masks = Vec::new();
    let mut gt_boxes: Vec<Vec<BBox>> = Vec::new();
    for rec in manifest.records_in(Split::TestAnomalous) {
        let image = io::read_png16(&manifest_dir.join(&rec.image))?;
        let mask_name = rec
            .mask
            .as_ref()
            .ok_or_else(|| Error::config(format!("{}: anomalous record lacks a mask", rec.image)))?;
        let mask = io::read_mask_png(&manifest_dir.join(mask_name))?;
        score_maps.push(score_image(model, &image, settings)?);
        gt_masks.push(mask);
        gt_boxes.push(rec.boxes.clone().unwrap_or_default());
    }
    if score_maps.is_empty() {
        return Err(Error::EmptyInput("manifest has no anomalous test records"));
    }

    let sweep = dice_sweep(&score_maps, &gt_masks, settings.n_thresholds)?;
    let per_image = max_dice_per_image(&score_maps, &gt_masks, settings.n_thresholds)?;
    let auroc = pixel_auroc(&score_maps, &gt_masks).ok();

    // Detection at the segmentation-optimal threshold, micro-averaged.
    let mut total_hits = 0usize;
    let mut total_gt = 0usize;
    let mut total_pred = 0usize;
    for (s, boxes) in score_maps.iter().zip(&gt_boxes) {
        let pred = detect_components(s, sweep.best_threshold, &settings.rule)?;
        total_hits += match_boxes(&pred, boxes, &settings.rule);
        total_gt += boxes.len();
        total_pred += pred.len();
    }
    let recall = if total_gt == 0 {
        1.0
    } else {
        total_hits as f64 / total_gt as f64
    };
    let precision = if total_pred == 0 {
        0.0
    } else {
        total_hits as f64 / total_pred as f64
    };

    let report = EvalReport {
        method: settings.method,
        noise: model.noise_spec().kind,
        t_start: settings.t_start,
        n_images: score_maps.len(),
        dice_avg: sweep.best_dice,
        dice_small: sweep.per_class[SizeClass::Small as usize],
        dice_medium: sweep.per_class[SizeClass::Medium as usize],
        dice_large: sweep.per_class[SizeClass::Large as usize],
        threshold: sweep.best_threshold,
        dice_per_image: per_image,
        pixel_auroc: auroc,
        recall,
        precision,
        f1: f1_of(recall, precision),
        seed: settings.seed,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    report.validate()?;

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        report.save_json(&dir.join("report.json"))?;
        let csv = format!("{}\n{}\n", EvalReport::csv_header(), report.csv_row());
        fs::write(dir.join("report.csv"), csv)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

/// Grid of experiments over (method × model/noise × t_level). Writes
/// `ablation.csv` (full report rows) and `ablation_plot.csv` (line-plot
/// data) when `out_dir` is given.
pub fn ablate(
    manifest_dir: &Path,
    manifest: &DatasetManifest,
    models: &[&DenoiserModel],
    methods: &[Method],
    t_levels: &[usize],
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<EvalReport>> {
    if t_levels.len() < 2 {
        return Err(Error::config("ablation needs at least two noise levels"));
    }
    if models.is_empty() || methods.is_empty() {
        return Err(Error::EmptyInput("ablation needs models and methods"));
    }
    let mut reports = Vec::new();
    for model in models {
        for &method in methods {
            for &t in t_levels {
                let settings = EvalSettings::new(method, t, seed);
                reports.push(run_experiment(manifest_dir, manifest, model, &settings, None)?);
            }
        }
    }

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut table = format!("{}\n", EvalReport::csv_header());
        let mut plot = String::from(
            "t_level,method,noise,dice_avg,dice_small,dice_medium,dice_large\n",
        );
        let opt = |o: Option<f64>| o.map(|v| v.to_string()).unwrap_or_default();
        for r in &reports {
            table.push_str(&r.csv_row());
            table.push('\n');
            plot.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.t_start,
                r.method,
                r.noise,
                r.dice_avg,
                opt(r.dice_small),
                opt(r.dice_medium),
                opt(r.dice_large)
            ));
        }
        fs::write(dir.join("ablation.csv"), table)?;
        fs::write(dir.join("ablation_plot.csv"), plot)?;
    }
    Ok(reports)
}
