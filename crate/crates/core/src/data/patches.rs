use super::{GrayImage, ImagePatch};
use crate::error::{AiftError, Result};

/// Top-left corner of a patch within its source image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchOffset {
    pub row: usize,
    pub col: usize,
}

/// Start positions along one axis: a regular grid plus an edge-aligned final
/// position when the grid leaves a remainder.
pub(crate) fn axis_starts(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=len - patch).step_by(stride).collect();
    if starts.last() != Some(&(len - patch)) {
        starts.push(len - patch);
    }
    starts
}

/// Cuts `image` into `patch_size` squares on a row-major grid with the given
/// stride. Values are copied unmodified.
pub fn extract_patches(image: &GrayImage, patch_size: usize, stride: usize) -> Result<Vec<(ImagePatch, PatchOffset)>> {
    if stride == 0 {
        return Err(AiftError::Config("patch stride must be positive".into()));
    }
    if patch_size == 0 || patch_size > image.height || patch_size > image.width {
        return Err(AiftError::Config(format!(
            "patch size {patch_size} does not fit a {}x{} image",
            image.height, image.width
        )));
    }
    let rows = axis_starts(image.height, patch_size, stride);
    let cols = axis_starts(image.width, patch_size, stride);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &row in &rows {
        for &col in &cols {
            let patch = ImagePatch::new(patch_size, patch_size, image.crop(row, col, patch_size))?;
            out.push((patch, PatchOffset { row, col }));
        }
    }
    Ok(out)
}
