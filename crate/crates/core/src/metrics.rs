//! Segmentation and separability metrics over a sweep of 99 thresholds.
//!
//! Predictions are per-pixel maps in `[0, 1]` binarized at `pred >= t` for
//! `t = 0.01, 0.02, ..., 0.99`. Conventions for degenerate counts:
//! an empty prediction has precision 1 when the ground truth is also empty
//! and 0 otherwise, an empty ground truth has recall 1, and an empty union
//! has IoU 1.

use std::io::Write;
use std::path::Path;

use crate::error::{AiftError, Result};

pub const N_THRESHOLDS: usize = 99;

/// The threshold grid `k / 100` for `k = 1..=99`.
pub fn thresholds() -> [f64; N_THRESHOLDS] {
    std::array::from_fn(|k| (k + 1) as f64 / 100.0)
}

fn check_pair(op: &'static str, pred: &[f64], gt: &[bool]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(AiftError::dim(op, format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
    }
    Ok(())
}

fn check_lists(op: &'static str, preds: &[Vec<f64>], gts: &[Vec<bool>]) -> Result<()> {
    if preds.is_empty() {
        return Err(AiftError::Config(format!("{op}: no images to evaluate")));
    }
    if preds.len() != gts.len() {
        return Err(AiftError::dim(op, format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    preds.iter().zip(gts).try_for_each(|(p, g)| check_pair(op, p, g))
}

/// Intersection and operand sizes of one binarized prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IouCounts {
    pub n_pg: usize,
    pub n_p: usize,
    pub n_g: usize,
}

impl IouCounts {
    pub fn iou(&self) -> f64 {
        let union = self.n_p + self.n_g - self.n_pg;
        if union == 0 {
            1.0
        } else {
            self.n_pg as f64 / union as f64
        }
    }

    fn add(&mut self, o: IouCounts) {
        self.n_pg += o.n_pg;
        self.n_p += o.n_p;
        self.n_g += o.n_g;
    }
}

pub fn iou_counts(pred: &[f64], gt: &[bool], t: f64) -> IouCounts {
    let mut c = IouCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        let on = p >= t;
        c.n_p += on as usize;
        c.n_g += g as usize;
        c.n_pg += (on && g) as usize;
    }
    c
}

/// Mean IoU over the threshold grid for one image.
pub fn aiu(pred: &[f64], gt: &[bool]) -> Result<f64> {
    check_pair("aiu", pred, gt)?;
    let total: f64 = thresholds().iter().map(|&t| iou_counts(pred, gt, t).iou()).sum();
    Ok(total / N_THRESHOLDS as f64)
}

/// Per-image AIU averaged over a dataset.
pub fn aiu_mean(preds: &[Vec<f64>], gts: &[Vec<bool>]) -> Result<f64> {
    check_lists("aiu", preds, gts)?;
    let total = preds.iter().zip(gts).map(|(p, g)| aiu(p, g)).sum::<Result<f64>>()?;
    Ok(total / preds.len() as f64)
}

/// Square image geometry needed for radius-tolerant matching.
fn side(len: usize) -> Result<usize> {
    let s = (len as f64).sqrt().round() as usize;
    if s * s == len {
        Ok(s)
    } else {
        Err(AiftError::dim("metrics", format!("{len} pixels is not a square map; pass explicit dimensions")))
    }
}

/// Marks every pixel within Euclidean distance `radius` of a set pixel.
fn dilate(mask: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let mut out = vec![false; mask.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            if !mask[y as usize * width + x as usize] {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (yy, xx) = (y + dy, x + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < height && (xx as usize) < width {
                    out[yy as usize * width + xx as usize] = true;
                }
            }
        }
    }
    out
}

/// Matched counts for precision and recall at one threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatchCounts {
    /// Predicted pixels within tolerance of some ground-truth pixel.
    pub matched_pred: usize,
    pub n_pred: usize,
    /// Ground-truth pixels within tolerance of some predicted pixel.
    pub matched_gt: usize,
    pub n_gt: usize,
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        match (self.n_pred, self.n_gt) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (n, _) => self.matched_pred as f64 / n as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        if self.n_gt == 0 {
            1.0
        } else {
            self.matched_gt as f64 / self.n_gt as f64
        }
    }

    pub fn f_measure(&self) -> f64 {
        f_measure(self.precision(), self.recall())
    }

    fn add(&mut self, o: MatchCounts) {
        self.matched_pred += o.matched_pred;
        self.n_pred += o.n_pred;
        self.matched_gt += o.matched_gt;
        self.n_gt += o.n_gt;
    }
}

pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn geometry(len: usize, tolerance: usize) -> Result<(usize, usize)> {
    if tolerance == 0 {
        Ok((1, len))
    } else {
        side(len).map(|s| (s, s))
    }
}

/// Precision/recall counts of one square image at threshold `t`.
/// `tolerance` is a matching radius in pixels; 0 means exact pixel overlap.
pub fn match_at(pred: &[f64], gt: &[bool], tolerance: usize, t: f64) -> Result<MatchCounts> {
    check_pair("match_at", pred, gt)?;
    let (h, w) = geometry(pred.len(), tolerance)?;
    let on: Vec<bool> = pred.iter().map(|&p| p >= t).collect();
    let gt_zone = dilate(gt, h, w, tolerance);
    let pred_zone = dilate(&on, h, w, tolerance);
    Ok(MatchCounts {
        matched_pred: on.iter().zip(&gt_zone).filter(|(&a, &b)| a && b).count(),
        n_pred: on.iter().filter(|&&a| a).count(),
        matched_gt: gt.iter().zip(&pred_zone).filter(|(&a, &b)| a && b).count(),
        n_gt: gt.iter().filter(|&&g| g).count(),
    })
}

/// [`match_at`] at every grid threshold.
pub fn match_curve(pred: &[f64], gt: &[bool], tolerance: usize) -> Result<[MatchCounts; N_THRESHOLDS]> {
    let ts = thresholds();
    let mut out = [MatchCounts::default(); N_THRESHOLDS];
    for (slot, &t) in out.iter_mut().zip(&ts) {
        *slot = match_at(pred, gt, tolerance, t)?;
    }
    Ok(out)
}

fn per_image_f(preds: &[Vec<f64>], gts: &[Vec<bool>], tolerance: usize) -> Result<Vec<[f64; N_THRESHOLDS]>> {
    preds.iter().zip(gts).map(|(p, g)| match_curve(p, g, tolerance).map(|c| c.map(|m| m.f_measure()))).collect()
}

/// Mean per-image F at each grid threshold.
fn mean_f_curve(fs: &[[f64; N_THRESHOLDS]]) -> [f64; N_THRESHOLDS] {
    std::array::from_fn(|k| fs.iter().map(|f| f[k]).sum::<f64>() / fs.len() as f64)
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Dataset-wide best threshold `(t*, F)`, maximizing the mean per-image F.
/// Ties go to the lowest threshold.
pub fn ods(preds: &[Vec<f64>], gts: &[Vec<bool>], tolerance: usize) -> Result<(f64, f64)> {
    check_lists("ods", preds, gts)?;
    let curve = mean_f_curve(&per_image_f(preds, gts, tolerance)?);
    let k = argmax_first(&curve);
    Ok((thresholds()[k], curve[k]))
}

/// Mean over images of each image's best F across the grid.
pub fn ois(preds: &[Vec<f64>], gts: &[Vec<bool>], tolerance: usize) -> Result<f64> {
    check_lists("ois", preds, gts)?;
    let fs = per_image_f(preds, gts, tolerance)?;
    Ok(fs.iter().map(|f| f.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / fs.len() as f64)
}

/// Mean per-image F at a single threshold.
pub fn mean_f_at(preds: &[Vec<f64>], gts: &[Vec<bool>], tolerance: usize, t: f64) -> Result<f64> {
    check_lists("mean_f_at", preds, gts)?;
    let total =
        preds.iter().zip(gts).map(|(p, g)| match_at(p, g, tolerance, t).map(|c| c.f_measure())).sum::<Result<f64>>()?;
    Ok(total / preds.len() as f64)
}

/// Area under the ROC curve from the Mann-Whitney rank statistic; tied
/// scores share their average rank. `true` marks the positive class.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(AiftError::dim("auroc", format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(AiftError::UndefinedMetric(format!("auroc: score {bad} is not a number")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(AiftError::UndefinedMetric(format!(
            "auroc needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the group i..=j shares their mean.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    /// Precision from counts pooled over all images.
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// Mean of per-image F, the quantity ODS maximizes.
    pub mean_f: f64,
    /// Pooled intersection and operand sizes.
    pub iou: IouCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub aiu: f64,
    pub ods: f64,
    pub ods_threshold: f64,
    pub ois: f64,
    pub auroc: Option<f64>,
    pub tolerance: usize,
    pub n_images: usize,
    pub pr_curve: Vec<PrPoint>,
}

pub const CURVE_HEADER: &str = "threshold,precision,recall,f_measure,mean_f,n_pg,n_p,n_g";
pub const SUMMARY_HEADER: &str = "n_images,tolerance,aiu,ods,ods_threshold,ois,auroc";

impl MetricsReport {
    /// Pixel metrics over `preds`/`gts` and, when both classes are present,
    /// AUROC of `scores` against `labels` (`true` = defect).
    pub fn compute(
        preds: &[Vec<f64>],
        gts: &[Vec<bool>],
        tolerance: usize,
        scores: &[f64],
        labels: &[bool],
    ) -> Result<Self> {
        check_lists("metrics", preds, gts)?;
        let curves = preds.iter().zip(gts).map(|(p, g)| match_curve(p, g, tolerance)).collect::<Result<Vec<_>>>()?;
        let fs: Vec<[f64; N_THRESHOLDS]> = curves.iter().map(|c| c.map(|m| m.f_measure())).collect();
        let mean_f = mean_f_curve(&fs);
        let k = argmax_first(&mean_f);
        let ois = fs.iter().map(|f| f.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / fs.len() as f64;
        let ts = thresholds();
        let pr_curve = (0..N_THRESHOLDS)
            .map(|i| {
                let mut pooled = MatchCounts::default();
                let mut iou = IouCounts::default();
                for (c, (p, g)) in curves.iter().zip(preds.iter().zip(gts)) {
                    pooled.add(c[i]);
                    iou.add(iou_counts(p, g, ts[i]));
                }
                PrPoint {
                    threshold: ts[i],
                    precision: pooled.precision(),
                    recall: pooled.recall(),
                    f_measure: pooled.f_measure(),
                    mean_f: mean_f[i],
                    iou,
                }
            })
            .collect();
        let auroc = match auroc(scores, labels) {
            Ok(a) => Some(a),
            Err(AiftError::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            aiu: aiu_mean(preds, gts)?,
            ods: mean_f[k],
            ods_threshold: ts[k],
            ois,
            auroc,
            tolerance,
            n_images: preds.len(),
            pr_curve,
        })
    }

    pub fn write_curve_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{CURVE_HEADER}")?;
        for p in &self.pr_curve {
            writeln!(
                w,
                "{:.2},{},{},{},{},{},{},{}",
                p.threshold, p.precision, p.recall, p.f_measure, p.mean_f, p.iou.n_pg, p.iou.n_p, p.iou.n_g
            )?;
        }
        Ok(())
    }

    pub fn write_summary_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{SUMMARY_HEADER}")?;
        let auroc = self.auroc.map_or_else(|| "NA".to_string(), |a| a.to_string());
        writeln!(
            w,
            "{},{},{},{},{:.2},{},{}",
            self.n_images, self.tolerance, self.aiu, self.ods, self.ods_threshold, self.ois, auroc
        )?;
        Ok(())
    }

    pub fn save(&self, curve_path: impl AsRef<Path>, summary_path: impl AsRef<Path>) -> Result<()> {
        let mut curve = Vec::new();
        self.write_curve_csv(&mut curve)?;
        std::fs::write(curve_path, curve)?;
        let mut summary = Vec::new();
        self.write_summary_csv(&mut summary)?;
        std::fs::write(summary_path, summary)?;
        Ok(())
    }
}
