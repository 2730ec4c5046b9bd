//! RGB images and per-pixel label maps, with the resampling used for
//! reduced-resolution training.

use crate::error::{Error, Result};

/// `H×W×3` image, row-major, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(format!("{} values for a {width}x{height} RGB image", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self { width, height, data: rgb.iter().copied().cycle().take(width * height * 3).collect() }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = 3 * (y * self.width + x);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape(format!(
                "image {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Box-filter downsampling with fractional pixel coverage.
    pub fn resize_area(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let xs = area_weights(self.width, width);
        let ys = area_weights(self.height, height);
        let mut data = vec![0.0; width * height * 3];
        for (ty, yw) in ys.iter().enumerate() {
            for (tx, xw) in xs.iter().enumerate() {
                let mut acc = [0.0; 3];
                let mut total = 0.0;
                for &(sy, wy) in yw {
                    for &(sx, wx) in xw {
                        let w = wx * wy;
                        let p = self.pixel(sx, sy);
                        for k in 0..3 {
                            acc[k] += w * p[k];
                        }
                        total += w;
                    }
                }
                let o = 3 * (ty * width + tx);
                for k in 0..3 {
                    data[o + k] = acc[k] / total;
                }
            }
        }
        Image { width, height, data }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Image::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }
}

/// For each target cell, the overlapped source cells and their overlap lengths.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|t| {
            let lo = t as f64 * ratio;
            let hi = (t + 1) as f64 * ratio;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let w = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (w > 0.0).then_some((s, w))
                })
                .collect()
        })
        .collect()
}

/// Index of the source cell whose extent contains the target cell center.
pub(crate) fn nearest_source(t: usize, src: usize, dst: usize) -> usize {
    (((t as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1)
}

pub const UNLABELED: u32 = u32::MAX;

/// Per-pixel class indices with an [`UNLABELED`] sentinel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u32>,
}

impl LabelMap {
    pub fn unlabeled(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![UNLABELED; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<usize> {
        match self.data[y * self.width + x] {
            UNLABELED => None,
            c => Some(c as usize),
        }
    }

    pub fn labeled_count(&self) -> usize {
        self.data.iter().filter(|&&c| c != UNLABELED).count()
    }

    pub fn resize_nearest(&self, width: usize, height: usize) -> LabelMap {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = nearest_source(y, self.height, height);
            for x in 0..width {
                data.push(self.data[sy * self.width + nearest_source(x, self.width, width)]);
            }
        }
        LabelMap { width, height, data }
    }
}
