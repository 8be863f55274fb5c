//! Defect scoring by regenerating an image from its spectrum and comparing it
//! with the original under the Jeffrey divergence.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::data::{extract_patches, save_pgm16, save_png16, GrayImage, ImagePatch};
use crate::error::{AiftError, Result};
use crate::model::{AiftParams, Direction};
use crate::tensor::Tensor;
use crate::training::prepare_pair;

/// Inputs are clamped into `[EPS, 1]` before any logarithm.
pub const DIVERGENCE_EPS: f64 = 1e-7;

/// Patches per generator call when scoring many patches.
const DETECT_BATCH: usize = 64;

/// Symmetric divergence of two maps against their midpoint.
///
/// Each element contributes `x ln(x/m) + y ln(y/m)` with `m = (x + y) / 2`.
/// Returns the total and the per-element contributions.
pub fn jeffrey_divergence(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(AiftError::dim("jeffrey_divergence", format!("{} vs {} elements", x.len(), y.len())));
    }
    let map: Vec<f64> = x.iter().zip(y).map(|(&a, &b)| jeffrey_element(a, b)).collect();
    Ok((map.iter().sum(), map))
}

fn jeffrey_element(x: f64, y: f64) -> f64 {
    let x = x.clamp(DIVERGENCE_EPS, 1.0);
    let y = y.clamp(DIVERGENCE_EPS, 1.0);
    let m = (x + y) / 2.0;
    // The exact value is non-negative; rounding can leave a tiny negative.
    (x * (x / m).ln() + y * (y / m).ln()).max(0.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DetectionMode {
    /// Regenerate from the true spectrum of the patch.
    #[default]
    Fourier,
    /// Regenerate from the generator's own forward transform of the patch.
    Roundtrip,
}

impl fmt::Display for DetectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectionMode::Fourier => "fourier",
            DetectionMode::Roundtrip => "roundtrip",
        })
    }
}

impl FromStr for DetectionMode {
    type Err = AiftError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fourier" => Ok(DetectionMode::Fourier),
            "roundtrip" => Ok(DetectionMode::Roundtrip),
            other => {
                Err(AiftError::Config(format!("unknown detection mode {other:?} (expected fourier or roundtrip)")))
            }
        }
    }
}

/// Row-major map of non-negative per-pixel scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ScoreMap {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Scores divided by `scale` and clipped to `[0, 1]`.
    pub fn to_gray(&self, scale: f64) -> GrayImage {
        let s = if scale > 0.0 { scale } else { 1.0 };
        GrayImage {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| (v / s).min(1.0)).collect(),
        }
    }

    /// 16-bit export; `.png` gives PNG, anything else binary PGM.
    pub fn save_image(&self, path: impl AsRef<Path>, scale: f64) -> Result<()> {
        let path = path.as_ref();
        let gray = self.to_gray(scale);
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("png") => save_png16(path, &gray),
            _ => save_pgm16(path, &gray),
        }
    }

    /// One CSV row per image row, values in shortest round-trip form.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub score_map: ScoreMap,
    /// Sum of the score map.
    pub image_score: f64,
    /// `score_map >= threshold`, row-major.
    pub mask: Vec<bool>,
    pub threshold: f64,
}

impl DetectionResult {
    fn new(score_map: ScoreMap, image_score: f64, threshold: f64) -> Self {
        let mask = threshold_mask(&score_map.values, threshold);
        DetectionResult { score_map, image_score, mask, threshold }
    }
}

pub fn threshold_mask(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

pub fn detect(params: &AiftParams, image: &ImagePatch, threshold: f64, mode: DetectionMode) -> Result<DetectionResult> {
    let mut out = detect_batch(params, std::slice::from_ref(image), threshold, mode)?;
    Ok(out.remove(0))
}

/// Scores each patch independently; patches are pushed through the
/// generator in fixed-size chunks.
pub fn detect_batch(
    params: &AiftParams,
    images: &[ImagePatch],
    threshold: f64,
    mode: DetectionMode,
) -> Result<Vec<DetectionResult>> {
    params.check_integrity()?;
    let p = params.meta.patch_size;
    if threshold.is_nan() {
        return Err(AiftError::Config("detection threshold is NaN".into()));
    }
    let mut results = Vec::with_capacity(images.len());
    for chunk in images.chunks(DETECT_BATCH) {
        let mut originals = Vec::with_capacity(chunk.len() * p * p);
        let mut spectra = Vec::with_capacity(chunk.len() * p * p);
        for img in chunk {
            if img.height() != p || img.width() != p {
                return Err(AiftError::dim(
                    "detect",
                    format!("patch {}x{} but model expects {p}x{p}", img.height(), img.width()),
                ));
            }
            let (normalized, freq) = prepare_pair(img)?;
            originals.extend_from_slice(normalized.values());
            spectra.extend_from_slice(&freq);
        }
        let shape = vec![chunk.len(), 1, p, p];
        let frequency = match mode {
            DetectionMode::Fourier => Tensor::new(shape, spectra)?,
            DetectionMode::Roundtrip => {
                params.generate(&Tensor::new(shape.clone(), originals.clone())?, Direction::Forward)?
            }
        };
        let regenerated = params.generate(&frequency, Direction::Inverse)?;
        regenerated.check_finite("regenerated image")?;
        for (x, y) in originals.chunks_exact(p * p).zip(regenerated.data().chunks_exact(p * p)) {
            let (score, map) = jeffrey_divergence(x, y)?;
            results.push(DetectionResult::new(ScoreMap { height: p, width: p, values: map }, score, threshold));
        }
    }
    Ok(results)
}

/// Scores an arbitrary image by overlapping patches, averaging the score of
/// every pixel over all patches that cover it.
pub fn detect_full_image(
    params: &AiftParams,
    image: &GrayImage,
    stride: usize,
    mode: DetectionMode,
) -> Result<ScoreMap> {
    let p = params.meta.patch_size;
    let patches = extract_patches(image, p, stride)?;
    let (imgs, offsets): (Vec<ImagePatch>, Vec<_>) = patches.into_iter().unzip();
    let results = detect_batch(params, &imgs, f64::INFINITY, mode)?;
    let mut sum = vec![0.0; image.height * image.width];
    let mut count = vec![0u32; sum.len()];
    for (res, off) in results.iter().zip(&offsets) {
        for r in 0..p {
            let dst = (off.row + r) * image.width + off.col;
            for c in 0..p {
                sum[dst + c] += res.score_map.values[r * p + c];
                count[dst + c] += 1;
            }
        }
    }
    let values = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    Ok(ScoreMap { height: image.height, width: image.width, values })
}
