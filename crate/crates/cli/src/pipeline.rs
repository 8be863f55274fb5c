//! Glue between datasets on disk and the core library.

use std::path::{Path, PathBuf};

use aift_core::data::{
    extract_patches, ingest_external, load_image, DatasetManifest, Entry, ExternalLayout, GrayImage, ImagePatch, Label,
    Split,
};
use aift_core::detection::{detect_batch, detect_full_image, DetectionMode, ScoreMap};
use aift_core::metrics::MetricsReport;
use aift_core::model::AiftParams;
use aift_core::{AiftError, Result};

/// Opens a dataset given its directory or manifest file. A directory
/// without a manifest is ingested from `images/` + `masks/`.
pub fn open_dataset(path: &Path) -> Result<DatasetManifest> {
    if path.is_file() {
        return DatasetManifest::read_csv(path);
    }
    if path.join(aift_core::data::MANIFEST_FILE).is_file() {
        return DatasetManifest::load_dir(path);
    }
    let layout = ExternalLayout::default();
    if path.join(&layout.images_dir).is_dir() {
        return ingest_external(path, &layout);
    }
    Err(AiftError::input(path, "neither a manifest nor a dataset directory"))
}

pub fn load_patch(path: &Path) -> Result<ImagePatch> {
    let img = load_image(path)?;
    ImagePatch::new(img.height, img.width, img.values).map_err(|e| AiftError::input(path, e.to_string()))
}

/// Patches from every training entry: images of exactly `patch_size` are
/// used whole, larger ones are tiled with `stride`.
pub fn training_patches(manifest: &DatasetManifest, patch_size: usize, stride: usize) -> Result<Vec<ImagePatch>> {
    let entries = manifest.training_entries()?;
    if entries.is_empty() {
        return Err(AiftError::Config("the manifest has no training entries".into()));
    }
    let mut out = Vec::new();
    for e in entries {
        let path = manifest.resolve(&e.path);
        let img = load_image(&path)?;
        if img.height < patch_size || img.width < patch_size {
            return Err(AiftError::input(
                &path,
                format!("{}x{} is smaller than patch size {patch_size}", img.height, img.width),
            ));
        }
        out.extend(extract_patches(&img, patch_size, stride)?.into_iter().map(|(p, _)| p));
    }
    Ok(out)
}

/// A test image with its ground truth (all-false when it has no mask).
#[derive(Clone, Debug)]
pub struct TestItem {
    pub entry: Entry,
    pub image: GrayImage,
    pub truth: Vec<bool>,
}

pub fn load_truth(manifest: &DatasetManifest, entry: &Entry, height: usize, width: usize) -> Result<Vec<bool>> {
    match &entry.mask {
        Some(rel) => {
            let path = manifest.resolve(rel);
            let mask = load_image(&path)?;
            if (mask.height, mask.width) != (height, width) {
                return Err(AiftError::input(
                    &path,
                    format!("mask is {}x{} but image is {height}x{width}", mask.height, mask.width),
                ));
            }
            Ok(mask.values.iter().map(|&v| v > 0.5).collect())
        }
        None => Ok(vec![false; height * width]),
    }
}

pub fn test_items(manifest: &DatasetManifest) -> Result<Vec<TestItem>> {
    let items = manifest
        .split(Split::Test)
        .map(|e| {
            let image = load_image(manifest.resolve(&e.path))?;
            let truth = load_truth(manifest, e, image.height, image.width)?;
            Ok(TestItem { entry: e.clone(), image, truth })
        })
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        return Err(AiftError::Config("the manifest has no test entries".into()));
    }
    Ok(items)
}

/// Score maps for each image. Patch-sized images are batched; larger ones
/// are tiled with `stride` and overlap-averaged.
pub fn score_images(
    params: &AiftParams,
    images: &[&GrayImage],
    stride: usize,
    mode: DetectionMode,
) -> Result<Vec<ScoreMap>> {
    let p = params.meta.patch_size;
    let mut maps: Vec<Option<ScoreMap>> = vec![None; images.len()];
    let mut whole = Vec::new();
    let mut whole_idx = Vec::new();
    for (i, img) in images.iter().enumerate() {
        if img.height == p && img.width == p {
            whole.push(ImagePatch::new(p, p, img.values.clone())?);
            whole_idx.push(i);
        } else {
            maps[i] = Some(detect_full_image(params, img, stride, mode)?);
        }
    }
    for (i, r) in whole_idx.into_iter().zip(detect_batch(params, &whole, f64::INFINITY, mode)?) {
        maps[i] = Some(r.score_map);
    }
    Ok(maps.into_iter().map(|m| m.expect("every image scored")).collect())
}

pub fn image_score(map: &ScoreMap) -> f64 {
    map.values.iter().sum()
}

/// Pixel predictions in `[0, 1]`: every map divided by the largest score
/// across the whole set, so one threshold means the same thing on every image.
pub fn predictions(maps: &[ScoreMap]) -> Vec<Vec<f64>> {
    let max = maps.iter().map(ScoreMap::max).fold(0.0, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };
    maps.iter().map(|m| m.values.iter().map(|v| v / scale).collect()).collect()
}

pub fn evaluate(maps: &[ScoreMap], truths: &[Vec<bool>], labels: &[bool], tolerance: usize) -> Result<MetricsReport> {
    let preds = predictions(maps);
    let scores: Vec<f64> = maps.iter().map(image_score).collect();
    MetricsReport::compute(&preds, truths, tolerance, &scores, labels)
}

pub fn evaluate_items(
    params: &AiftParams,
    items: &[TestItem],
    stride: usize,
    mode: DetectionMode,
    tolerance: usize,
) -> Result<MetricsReport> {
    let images: Vec<&GrayImage> = items.iter().map(|t| &t.image).collect();
    let maps = score_images(params, &images, stride, mode)?;
    let truths: Vec<Vec<bool>> = items.iter().map(|t| t.truth.clone()).collect();
    let labels: Vec<bool> = items.iter().map(|t| t.entry.label == Label::Defect).collect();
    evaluate(&maps, &truths, &labels, tolerance)
}

/// File stem used for the score map of a dataset entry.
pub fn map_stem(rel: &Path) -> String {
    let no_ext: PathBuf = rel.with_extension("");
    no_ext.to_string_lossy().replace(['/', '\\'], "__")
}
