//! Image ingestion, patching, manifests and the synthetic pavement corpus.

mod io;
mod manifest;
mod patches;
mod synth;

pub use io::{load_image, save_pgm, save_pgm16, save_png16};
pub use manifest::{ingest_external, DatasetManifest, Entry, ExternalLayout, Label, Split, MANIFEST_FILE};
pub use patches::{extract_patches, PatchOffset};
pub use synth::{synth_corpus, SynthConfig};

use crate::error::{AiftError, Result};

/// A grayscale raster of any size with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || height * width != values.len() {
            return Err(AiftError::dim("image", format!("{height}x{width} image with {} values", values.len())));
        }
        Ok(GrayImage { height, width, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Copies the `size x size` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, size: usize) -> Vec<f64> {
        (row..row + size)
            .flat_map(|r| self.values[r * self.width + col..r * self.width + col + size].iter().copied())
            .collect()
    }
}

/// A square or rectangular power-of-two grayscale patch with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePatch {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImagePatch {
    /// Values are clamped into `[0, 1]`; NaN is rejected.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if !height.is_power_of_two() || !width.is_power_of_two() {
            return Err(AiftError::dim("patch", format!("{height}x{width} is not a power-of-two patch")));
        }
        if height * width != values.len() {
            return Err(AiftError::dim("patch", format!("{height}x{width} patch with {} values", values.len())));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(AiftError::NonFinite("patch values".into()));
        }
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(ImagePatch { height, width, values })
    }

    /// Builds a patch after per-patch min-max normalization to `[0, 1]`.
    /// A constant patch maps to all zeros.
    pub fn normalized(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        ImagePatch::new(height, width, normalize_min_max(&values))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Rescales so the minimum maps to 0 and the maximum to 1.
pub fn normalize_min_max(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::spectrum_image;

    #[test]
    fn patch_clamps_and_validates() {
        let p = ImagePatch::new(2, 2, vec![-0.5, 0.5, 1.5, 1.0]).unwrap();
        assert_eq!(p.values(), &[0.0, 0.5, 1.0, 1.0]);
        assert!(ImagePatch::new(3, 2, vec![0.0; 6]).is_err());
        assert!(ImagePatch::new(2, 2, vec![0.0; 3]).is_err());
        assert!(ImagePatch::new(2, 2, vec![f64::NAN; 4]).is_err());
    }

    #[test]
    fn normalization_removes_offset_and_gain() {
        let base: Vec<f64> = (0..16).map(|i| ((i * 5) % 7) as f64 / 10.0).collect();
        let shifted: Vec<f64> = base.iter().map(|v| 0.3 * v + 0.2).collect();
        let a = ImagePatch::normalized(4, 4, base).unwrap();
        let b = ImagePatch::normalized(4, 4, shifted).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        let (fa, fb) = (spectrum_image(&a), spectrum_image(&b));
        for (x, y) in fa.values.iter().zip(&fb.values) {
            assert!((x - y).abs() < 1e-9);
        }
        assert_eq!(normalize_min_max(&[0.4; 3]), vec![0.0; 3]);
    }
}
