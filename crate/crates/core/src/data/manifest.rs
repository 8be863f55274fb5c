use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::io::load_image;
use crate::error::{AiftError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal,
    Defect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Defect => "defect",
        })
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normal" => Ok(Label::Normal),
            "defect" => Ok(Label::Defect),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One image of a dataset. Paths are relative to the manifest root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub path: PathBuf,
    pub mask: Option<PathBuf>,
    pub label: Label,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<Entry>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<Entry>) -> Self {
        DatasetManifest { root: root.into(), entries }
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// The training stream. Errors if any training entry is labeled as a defect,
    /// since the model must only ever see defect-free pavement.
    pub fn training_entries(&self) -> Result<Vec<&Entry>> {
        let bad: Vec<String> = self
            .split(Split::Train)
            .filter(|e| e.label == Label::Defect)
            .map(|e| e.path.display().to_string())
            .collect();
        if !bad.is_empty() {
            return Err(AiftError::Config(format!(
                "training split contains defect-labeled entries: {}",
                bad.join(", ")
            )));
        }
        Ok(self.split(Split::Train).collect())
    }

    /// Writes `path,mask,label,split` rows with a header.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
        w.write_record(["path", "mask", "label", "split"]).map_err(csv_io)?;
        for e in &self.entries {
            let mask = e.mask.as_ref().map(|m| m.display().to_string()).unwrap_or_default();
            w.write_record([e.path.display().to_string(), mask, e.label.to_string(), e.split.to_string()])
                .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a manifest CSV; the root is the directory containing it.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| AiftError::input(path, e.to_string()))?;
        let mut entries = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| AiftError::input(path, e.to_string()))?;
            if rec.len() != 4 {
                return Err(AiftError::input(path, format!("row {} has {} fields", i + 1, rec.len())));
            }
            let bad = |d: String| AiftError::input(path, format!("row {}: {d}", i + 1));
            entries.push(Entry {
                path: PathBuf::from(&rec[0]),
                mask: (!rec[1].is_empty()).then(|| PathBuf::from(&rec[1])),
                label: rec[2].parse().map_err(bad)?,
                split: rec[3].parse().map_err(bad)?,
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(DatasetManifest { root, entries })
    }

    /// Loads `root/manifest.csv`.
    pub fn load_dir(root: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(root.as_ref().join(MANIFEST_FILE))
    }
}

fn csv_io(e: csv::Error) -> AiftError {
    AiftError::Io(std::io::Error::other(e.to_string()))
}

/// Directory names for an externally prepared dataset.
#[derive(Clone, Debug)]
pub struct ExternalLayout {
    pub images_dir: String,
    pub masks_dir: String,
}

impl Default for ExternalLayout {
    fn default() -> Self {
        ExternalLayout { images_dir: "images".into(), masks_dir: "masks".into() }
    }
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm" | "png")) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), p);
            }
        }
    }
    Ok(out)
}

/// Builds a manifest from an `images/` + `masks/` layout. Images with a
/// same-stem mask become test-split defects; the rest enter the training
/// split as normal.
pub fn ingest_external(root: impl AsRef<Path>, layout: &ExternalLayout) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(AiftError::input(root, "dataset directory does not exist"));
    }
    let images = image_files(&root.join(&layout.images_dir))?;
    let masks = image_files(&root.join(&layout.masks_dir))?;
    let rel = |p: &Path| p.strip_prefix(root).unwrap_or(p).to_path_buf();
    let mut entries = Vec::new();
    let mut mismatched = Vec::new();
    for (stem, img_path) in &images {
        match masks.get(stem) {
            Some(mask_path) => {
                let (img, mask) = (load_image(img_path)?, load_image(mask_path)?);
                if (img.height, img.width) != (mask.height, mask.width) {
                    mismatched.push(format!(
                        "{} ({}x{}) vs mask ({}x{})",
                        img_path.display(),
                        img.height,
                        img.width,
                        mask.height,
                        mask.width
                    ));
                    continue;
                }
                entries.push(Entry {
                    path: rel(img_path),
                    mask: Some(rel(mask_path)),
                    label: Label::Defect,
                    split: Split::Test,
                });
            }
            None => entries.push(Entry { path: rel(img_path), mask: None, label: Label::Normal, split: Split::Train }),
        }
    }
    if !mismatched.is_empty() {
        return Err(AiftError::input(root, format!("mask/image size mismatch: {}", mismatched.join("; "))));
    }
    Ok(DatasetManifest::new(root, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{save_pgm, GrayImage};

    fn write(dir: &Path, name: &str, h: usize, w: usize) {
        fs::create_dir_all(dir).unwrap();
        save_pgm(dir.join(name), &GrayImage::new(h, w, vec![0.5; h * w]).unwrap()).unwrap();
    }

    #[test]
    fn empty_dir_gives_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = ingest_external(dir.path(), &ExternalLayout::default()).unwrap();
        assert!(m.entries.is_empty());
    }

    #[test]
    fn pairs_images_with_masks_by_stem() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, masks) = (dir.path().join("images"), dir.path().join("masks"));
        for n in ["a", "b", "c"] {
            write(&imgs, &format!("{n}.pgm"), 4, 4);
        }
        write(&masks, "a.pgm", 4, 4);
        write(&masks, "c.pgm", 4, 4);
        let m = ingest_external(dir.path(), &ExternalLayout::default()).unwrap();
        let defects = m.entries.iter().filter(|e| e.label == Label::Defect).count();
        let normals: Vec<_> = m.entries.iter().filter(|e| e.label == Label::Normal).collect();
        assert_eq!(defects, 2);
        assert_eq!(normals.len(), 1);
        assert_eq!(normals[0].path, Path::new("images/b.pgm"));
        assert!(m.training_entries().is_ok());
    }

    #[test]
    fn mismatched_mask_is_input_error_naming_file() {
        let dir = tempfile::tempdir().unwrap();
        write(&dir.path().join("images"), "a.pgm", 4, 4);
        write(&dir.path().join("masks"), "a.pgm", 4, 5);
        let err = ingest_external(dir.path(), &ExternalLayout::default()).unwrap_err();
        assert!(matches!(&err, AiftError::Input { detail, .. } if detail.contains("a.pgm")), "{err}");
    }

    #[test]
    fn csv_round_trip_and_training_filter() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(
            dir.path(),
            vec![
                Entry { path: "normal/0.pgm".into(), mask: None, label: Label::Normal, split: Split::Train },
                Entry {
                    path: "defect/0.pgm".into(),
                    mask: Some("masks/0.pgm".into()),
                    label: Label::Defect,
                    split: Split::Test,
                },
            ],
        );
        m.write_csv(dir.path().join(MANIFEST_FILE)).unwrap();
        let back = DatasetManifest::load_dir(dir.path()).unwrap();
        assert_eq!(back, m);

        let mut poisoned = m.clone();
        poisoned.entries[1].split = Split::Train;
        assert!(matches!(poisoned.training_entries(), Err(AiftError::Config(_))));
    }
}
