use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::save_pgm;
use super::manifest::{DatasetManifest, Entry, Label, Split, MANIFEST_FILE};
use super::GrayImage;
use crate::error::{AiftError, Result};

/// Counts and geometry of a synthetic pavement corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub train_normal: usize,
    pub test_normal: usize,
    pub test_defect: usize,
    pub patch_size: usize,
    pub seed: u64,
}

/// Largest fraction of a patch a crack may cover.
pub const MAX_CRACK_FRACTION: f64 = 0.2;

/// Band-limited value noise: smoothly interpolated random lattice values.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cell: usize) -> Vec<f64> {
    let n = size / cell + 2;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        let (gy, fy) = (y / cell, smooth((y % cell) as f64 / cell as f64));
        for x in 0..size {
            let (gx, fx) = (x / cell, smooth((x % cell) as f64 / cell as f64));
            let at = |r: usize, c: usize| lattice[r * n + c];
            let top = at(gy, gx) * (1.0 - fx) + at(gy, gx + 1) * fx;
            let bottom = at(gy + 1, gx) * (1.0 - fx) + at(gy + 1, gx + 1) * fx;
            out[y * size + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// A defect-free pavement patch: a few octaves of value noise around a base
/// gray level, plus a mild linear illumination gradient.
pub(crate) fn pavement_texture(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let base = rng.gen_range(0.45..0.6);
    let mut values = vec![base; size * size];
    for (cell, amp) in [(8, 0.08), (4, 0.05), (2, 0.03)] {
        let cell = cell.min(size.max(1));
        for (v, n) in values.iter_mut().zip(value_noise(rng, size, cell)) {
            *v += amp * n;
        }
    }
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let strength = rng.gen_range(0.0..0.08);
    let (c, s) = (theta.cos(), theta.sin());
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / size as f64 - 0.5, y as f64 / size as f64 - 0.5);
            values[y * size + x] += strength * (u * c + v * s);
        }
    }
    values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    values
}

/// Darkens a random-walk polyline into `values` and returns its exact mask.
/// The mask is non-empty and covers at most [`MAX_CRACK_FRACTION`] of the patch.
pub(crate) fn draw_crack(rng: &mut ChaCha8Rng, size: usize, values: &mut [f64]) -> Vec<bool> {
    let width: usize = rng.gen_range(1..=3);
    let drop: f64 = rng.gen_range(0.2..0.5);
    let budget = ((size * size) as f64 * MAX_CRACK_FRACTION).floor() as usize;
    let limit = size as f64;
    // Enter from a random edge heading roughly inward.
    let along = rng.gen_range(0.0..limit);
    let jitter = rng.gen_range(-0.6..0.6);
    let (mut x, mut y, mut heading) = match rng.gen_range(0..4) {
        0 => (0.0, along, jitter),
        1 => (limit - 1.0, along, std::f64::consts::PI + jitter),
        2 => (along, 0.0, std::f64::consts::FRAC_PI_2 + jitter),
        _ => (along, limit - 1.0, -std::f64::consts::FRAC_PI_2 + jitter),
    };
    let max_steps = rng.gen_range(size..=2 * size);
    let mut mask = vec![false; size * size];
    let mut count = 0;
    for _ in 0..max_steps {
        let (cx, cy) = (x.round() as isize, y.round() as isize);
        let lo = -((width as isize - 1) / 2);
        let mut stamp = Vec::new();
        for dy in lo..lo + width as isize {
            for dx in lo..lo + width as isize {
                let (px, py) = (cx + dx, cy + dy);
                if px >= 0 && py >= 0 && (px as usize) < size && (py as usize) < size {
                    let i = py as usize * size + px as usize;
                    if !mask[i] {
                        stamp.push(i);
                    }
                }
            }
        }
        if count + stamp.len() > budget {
            break;
        }
        for i in stamp {
            mask[i] = true;
            count += 1;
        }
        heading += rng.gen_range(-0.35..0.35);
        x += heading.cos();
        y += heading.sin();
        if x < -0.5 || y < -0.5 || x > limit - 0.5 || y > limit - 0.5 {
            break;
        }
    }
    if count == 0 {
        // The walk always starts on an edge pixel, but guard the contract anyway.
        mask[(size / 2) * size + size / 2] = true;
    }
    for (v, &m) in values.iter_mut().zip(&mask) {
        if m {
            *v = (*v - drop).max(0.0);
        }
    }
    mask
}

fn mask_image(mask: &[bool], size: usize) -> GrayImage {
    GrayImage { height: size, width: size, values: mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect() }
}

/// Writes a seeded synthetic corpus under `root`:
/// `normal/` (train and test normals), `defect/`, `masks/` and `manifest.csv`.
pub fn synth_corpus(root: impl AsRef<Path>, config: &SynthConfig) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if config.train_normal == 0 || config.test_defect == 0 {
        return Err(AiftError::Config("corpus counts must be at least 1".into()));
    }
    if config.patch_size < 4 {
        return Err(AiftError::Config(format!("patch size {} too small", config.patch_size)));
    }
    for dir in ["normal", "defect", "masks"] {
        fs::create_dir_all(root.join(dir))?;
    }
    let size = config.patch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut entries = Vec::new();

    let emit_normal = |rng: &mut ChaCha8Rng, split: Split, i: usize| -> Result<Entry> {
        let rel = PathBuf::from(format!("normal/{split}_{i:05}.pgm"));
        let img = GrayImage { height: size, width: size, values: pavement_texture(rng, size) };
        save_pgm(root.join(&rel), &img)?;
        Ok(Entry { path: rel, mask: None, label: Label::Normal, split })
    };
    for i in 0..config.train_normal {
        entries.push(emit_normal(&mut rng, Split::Train, i)?);
    }
    for i in 0..config.test_normal {
        entries.push(emit_normal(&mut rng, Split::Test, i)?);
    }
    for i in 0..config.test_defect {
        let mut values = pavement_texture(&mut rng, size);
        let mask = draw_crack(&mut rng, size, &mut values);
        let rel = PathBuf::from(format!("defect/{i:05}.pgm"));
        let mask_rel = PathBuf::from(format!("masks/{i:05}.pgm"));
        save_pgm(root.join(&rel), &GrayImage { height: size, width: size, values })?;
        save_pgm(root.join(&mask_rel), &mask_image(&mask, size))?;
        entries.push(Entry { path: rel, mask: Some(mask_rel), label: Label::Defect, split: Split::Test });
    }
    let manifest = DatasetManifest::new(root, entries);
    manifest.write_csv(root.join(MANIFEST_FILE))?;
    Ok(manifest)
}
