//! Grayscale morphology on [0, 1] maps: the closing-then-dilation (`cd`)
//! operator conditioning anomaly masks before harmonization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructuringElement {
    Square3,
    Square5,
    Disk { radius: u32 },
}

impl StructuringElement {
    /// (drow, dcol) offsets; always contains the origin.
    pub fn offsets(&self) -> Vec<(i64, i64)> {
        match *self {
            StructuringElement::Square3 => square_offsets(1),
            StructuringElement::Square5 => square_offsets(2),
            StructuringElement::Disk { radius } => {
                let r = radius as i64;
                let mut out = Vec::new();
                for dr in -r..=r {
                    for dc in -r..=r {
                        if dr * dr + dc * dc <= r * r {
                            out.push((dr, dc));
                        }
                    }
                }
                out
            }
        }
    }
}

fn square_offsets(r: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            out.push((dr, dc));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorphConfig {
    pub structuring_element: StructuringElement,
    pub closing_iterations: u32,
    pub dilation_iterations: u32,
}

impl Default for MorphConfig {
    fn default() -> Self {
        MorphConfig {
            structuring_element: StructuringElement::Square3,
            closing_iterations: 1,
            dilation_iterations: 1,
        }
    }
}

impl MorphConfig {
    fn validated_offsets(&self) -> Result<Vec<(i64, i64)>> {
        let offsets = self.structuring_element.offsets();
        if !offsets.contains(&(0, 0)) {
            return Err(Error::config("structuring element must contain its origin"));
        }
        Ok(offsets)
    }
}

enum Extreme {
    Max,
    Min,
}

/// Flat min/max filter; out-of-bounds neighbors are ignored.
fn filter(m: &ImageGrid, offsets: &[(i64, i64)], mode: Extreme) -> ImageGrid {
    let (h, w) = m.shape();
    ImageGrid::from_fn(h, w, |r, c| {
        let mut best = m.get(r, c);
        for &(dr, dc) in offsets {
            let rr = r as i64 + dr;
            let cc = c as i64 + dc;
            if rr >= 0 && rr < h as i64 && cc >= 0 && cc < w as i64 {
                let v = m.get(rr as usize, cc as usize);
                best = match mode {
                    Extreme::Max => best.max(v),
                    Extreme::Min => best.min(v),
                };
            }
        }
        best
    })
    .expect("shape preserved")
}

pub fn dilate(m: &ImageGrid, element: StructuringElement) -> ImageGrid {
    filter(m, &element.offsets(), Extreme::Max)
}

pub fn erode(m: &ImageGrid, element: StructuringElement) -> ImageGrid {
    filter(m, &element.offsets(), Extreme::Min)
}

/// Grayscale closing: dilation then erosion with the same element.
pub fn close(m: &ImageGrid, element: StructuringElement) -> ImageGrid {
    erode(&dilate(m, element), element)
}

/// The `cd` operator: closing applied `closing_iterations` times, then
/// dilation `dilation_iterations` times, output clamped to [0, 1].
pub fn close_dilate(m: &ImageGrid, cfg: &MorphConfig) -> Result<ImageGrid> {
    let offsets = cfg.validated_offsets()?;
    let mut out = m.clone();
    for _ in 0..cfg.closing_iterations {
        out = filter(&filter(&out, &offsets, Extreme::Max), &offsets, Extreme::Min);
    }
    for _ in 0..cfg.dilation_iterations {
        out = filter(&out, &offsets, Extreme::Max);
    }
    Ok(out.clamp01())
}
