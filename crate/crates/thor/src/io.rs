//! File formats: 16-bit grayscale PNGs for images, 8-bit PNGs for masks,
//! 32-bit float binary grids with JSON sidecars for debugging, and heatmap
//! panels for figures.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::noise::NoiseSpec;

// ---------------------------------------------------------------------------
// 32-bit float binary grids
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct GridSidecar {
    pub height: usize,
    pub width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_spec: Option<NoiseSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draw_index: Option<u64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

/// Raw little-endian f32 values, row-major, plus a JSON sidecar.
pub fn write_f32_grid(path: &Path, grid: &ImageGrid, sidecar: &GridSidecar) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.len() * 4);
    for v in grid.values().iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(sidecar)?)?;
    Ok(())
}

pub fn read_f32_grid(path: &Path) -> Result<ImageGrid> {
    let sidecar: GridSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    let expected = sidecar.height * sidecar.width * 4;
    if bytes.len() != expected {
        return Err(Error::config(format!(
            "{}: expected {} bytes for {}x{}, got {}",
            path.display(),
            expected,
            sidecar.height,
            sidecar.width,
            bytes.len()
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")) as f64)
        .collect();
    ImageGrid::from_fn(sidecar.height, sidecar.width, |r, c| {
        vals[r * sidecar.width + c]
    })
}

// ---------------------------------------------------------------------------
// PNG images
// ---------------------------------------------------------------------------

/// 16-bit grayscale PNG; values are clamped to [0, 1] before quantization.
pub fn write_png16(path: &Path, grid: &ImageGrid) -> Result<()> {
    let (h, w) = grid.shape();
    let mut img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let v = grid.get(y as usize, x as usize).clamp(0.0, 1.0);
        *px = Luma([(v * 65535.0).round() as u16]);
    }
    img.save(path)?;
    Ok(())
}

pub fn read_png16(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    ImageGrid::from_fn(h as usize, w as usize, |r, c| {
        img.get_pixel(c as u32, r as u32).0[0] as f64 / 65535.0
    })
}

/// Binary mask as 8-bit PNG with values {0, 255}.
pub fn write_mask_png(path: &Path, mask: &ImageGrid) -> Result<()> {
    let (h, w) = mask.shape();
    let mut img = GrayImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        *px = Luma([if mask.get(y as usize, x as usize) > 0.5 { 255 } else { 0 }]);
    }
    img.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    ImageGrid::from_fn(h as usize, w as usize, |r, c| {
        if img.get_pixel(c as u32, r as u32).0[0] > 127 {
            1.0
        } else {
            0.0
        }
    })
}

/// Blue-to-red heatmap color for a normalized value.
fn heat_color(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let (r, g, b) = if v < 0.5 {
        let s = v * 2.0;
        (s * 0.9, s * 0.3, 0.6 * (1.0 - s) + 0.1)
    } else {
        let s = (v - 0.5) * 2.0;
        (0.9 + 0.1 * s, 0.3 + 0.5 * s, 0.1 * (1.0 - s))
    };
    Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
}

/// 8-bit heatmap PNG of a min-max normalized map.
pub fn write_heatmap_png(path: &Path, map: &ImageGrid) -> Result<()> {
    let (h, w) = map.shape();
    let lo = map.min();
    let hi = map.max();
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
    let mut img = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        *px = heat_color((map.get(y as usize, x as usize) - lo) * scale);
    }
    img.save(path)?;
    Ok(())
}

/// Side-by-side figure panel: input, restoration, heatmapped anomaly map,
/// and (optionally) the ground-truth mask.
pub fn write_panel_png(
    path: &Path,
    input: &ImageGrid,
    restoration: &ImageGrid,
    score_map: &ImageGrid,
    gt_mask: Option<&ImageGrid>,
) -> Result<()> {
    let (h, w) = input.shape();
    let n_panels = 3 + usize::from(gt_mask.is_some());
    let gap = 2usize;
    let total_w = n_panels * w + (n_panels - 1) * gap;
    let mut img = RgbImage::from_pixel(total_w as u32, h as u32, Rgb([40, 40, 40]));

    let gray = |g: &ImageGrid, r: usize, c: usize| {
        let v = (g.get(r, c).clamp(0.0, 1.0) * 255.0) as u8;
        Rgb([v, v, v])
    };
    let lo = score_map.min();
    let hi = score_map.max();
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };

    for r in 0..h {
        for c in 0..w {
            img.put_pixel(c as u32, r as u32, gray(input, r, c));
            img.put_pixel((w + gap + c) as u32, r as u32, gray(restoration, r, c));
            img.put_pixel(
                (2 * (w + gap) + c) as u32,
                r as u32,
                heat_color((score_map.get(r, c) - lo) * scale),
            );
            if let Some(mask) = gt_mask {
                img.put_pixel((3 * (w + gap) + c) as u32, r as u32, gray(mask, r, c));
            }
        }
    }
    img.save(path)?;
    Ok(())
}
