use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use aift_core::checkpoint;
use aift_core::data::{load_image, save_pgm16, synth_corpus, DatasetManifest, GrayImage, Label, SynthConfig};
use aift_core::detection::{threshold_mask, DetectionMode, ScoreMap};
use aift_core::metrics::{auroc, MetricsReport, SUMMARY_HEADER};
use aift_core::model::{AiftParams, Direction, DEFAULT_WIDTHS};
use aift_core::tensor::{AdamConfig, Tensor};
use aift_core::training::{prepare_pair, train_with, LossMode, TrainConfig, TrainLog, TrainingSet};
use aift_core::AiftError;

use crate::config::{List, Settings};
use crate::error::{CliError, CliResult};
use crate::outdir::OutDir;
use crate::pipeline::{
    evaluate, evaluate_items, image_score, load_truth, map_stem, open_dataset, score_images, test_items,
    training_patches,
};

#[derive(Debug, Parser)]
#[command(name = "aift", version, about = "Unsupervised road defect detection by image-to-frequency transform")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic pavement corpus.
    Synth(SynthArgs),
    /// Train on the normal-only training split.
    Train(TrainArgs),
    /// Write the four transform panels for one image.
    Transform(TransformArgs),
    /// Score test images and write score maps.
    Detect(DetectArgs),
    /// Compute AIU, ODS, OIS and AUROC from detection output.
    Eval(EvalArgs),
    /// Train and evaluate every loss mode for several seeds.
    Ablation(AblationArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key = value file supplying defaults for this command's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Normal training patches.
    #[arg(long)]
    pub normal: Option<usize>,
    /// Defect test patches.
    #[arg(long)]
    pub defect: Option<usize>,
    /// Normal test patches (defaults to the defect count).
    #[arg(long)]
    pub test_normal: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

/// Optimization flags shared by `train` and `ablation`.
#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub critic_iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Four encoder channel widths, e.g. 32,64,128,256.
    #[arg(long)]
    pub widths: Option<List<usize>>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Tiling stride for training images larger than a patch.
    #[arg(long)]
    pub stride: Option<usize>,
}

const TRAIN_FLAG_KEYS: [&str; 10] =
    ["epochs", "batch", "lambda", "critic-iters", "lr", "beta1", "beta2", "widths", "patch-size", "stride"];

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// re, gan or total.
    #[arg(long)]
    pub loss: Option<LossMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Save a checkpoint every k epochs (0 disables).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Dataset whose test split is scored.
    #[arg(long, conflicts_with = "image")]
    pub data: Option<PathBuf>,
    /// A single image to score.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// fourier or roundtrip.
    #[arg(long)]
    pub mode: Option<DetectionMode>,
    /// Per-pixel score at or above which a pixel is marked defective.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Tiling stride for images larger than a patch.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Image scores CSV; gives AUROC only.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Detection output directory with score maps; gives the full report.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Dataset providing masks and labels.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Matching radius in pixels.
    #[arg(long)]
    pub tolerance: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<List<u64>>,
    /// Comma-separated loss modes.
    #[arg(long)]
    pub modes: Option<List<LossMode>>,
    #[arg(long)]
    pub tolerance: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub common: Common,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const MAPS_DIR: &str = "maps";
pub const CURVE_FILE: &str = "metrics_curve.csv";
pub const SUMMARY_FILE: &str = "metrics_summary.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_MEAN_FILE: &str = "ablation_mean.csv";

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablation(a) => cmd_ablation(a),
    }
}

fn keys<'a>(own: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    own.iter().chain(extra).copied().collect()
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)?;
    Ok(())
}

pub fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let mut s = Settings::load(
        "synth",
        a.common.config.as_deref(),
        &["out", "normal", "defect", "test-normal", "patch-size", "seed"],
    )?;
    let out = s.required_path("out", a.out)?;
    let normal = s.value("normal", a.normal, 500)?;
    let defect = s.value("defect", a.defect, 100)?;
    let test_normal = s.value("test-normal", a.test_normal, defect)?;
    let patch_size = s.value("patch-size", a.patch_size, 32)?;
    let seed = s.seed(a.seed)?;
    if normal == 0 || defect == 0 {
        return Err(CliError::config("--normal and --defect must be at least 1"));
    }
    let dir = OutDir::acquire(&out, a.common.force)?;
    let cfg = SynthConfig { train_normal: normal, test_normal, test_defect: defect, patch_size, seed };
    let manifest = synth_corpus(dir.path(), &cfg)?;
    dir.write_echo(&s)?;
    eprintln!("wrote {} entries to {}", manifest.entries.len(), out.display());
    Ok(())
}

/// Resolved optimization settings plus the patch geometry.
pub struct TrainPlan {
    pub config: TrainConfig,
    pub patch_size: usize,
    pub stride: usize,
}

fn train_plan(s: &mut Settings, f: &TrainFlags, loss_mode: LossMode, seed: u64) -> CliResult<TrainPlan> {
    let d = TrainConfig::default();
    let widths = s.value("widths", f.widths.clone(), List(DEFAULT_WIDTHS.to_vec()))?;
    let widths: [usize; 4] = widths
        .0
        .try_into()
        .map_err(|w: Vec<usize>| CliError::config(format!("--widths needs 4 values, got {}", w.len())))?;
    let adam = AdamConfig {
        lr: s.value("lr", f.lr, d.adam.lr)?,
        beta1: s.value("beta1", f.beta1, d.adam.beta1)?,
        beta2: s.value("beta2", f.beta2, d.adam.beta2)?,
        epsilon: d.adam.epsilon,
    };
    let config = TrainConfig {
        epochs: s.value("epochs", f.epochs, d.epochs)?,
        batch_size: s.value("batch", f.batch, d.batch_size)?,
        lambda: s.value("lambda", f.lambda, d.lambda)?,
        critic_iters: s.value("critic-iters", f.critic_iters, d.critic_iters)?,
        adam,
        loss_mode,
        seed,
        widths,
    };
    config.validate()?;
    let patch_size = s.value("patch-size", f.patch_size, 32)?;
    let stride = s.value("stride", f.stride, patch_size)?;
    Ok(TrainPlan { config, patch_size, stride })
}

fn load_training_set(data: &Path, plan: &TrainPlan) -> CliResult<(DatasetManifest, TrainingSet)> {
    let manifest = open_dataset(data)?;
    let patches = training_patches(&manifest, plan.patch_size, plan.stride)?;
    Ok((manifest, TrainingSet::from_patches(&patches)?))
}

fn progress(tag: &str) -> impl FnMut(&aift_core::training::EpochRecord, &AiftParams) -> aift_core::Result<()> + '_ {
    move |r, _| {
        eprintln!(
            "{tag}epoch {} g_loss {:.4} dI {:.4} dF {:.4} recon {:.5} ({:.1}s)",
            r.epoch, r.g_loss, r.d_image_loss, r.d_frequency_loss, r.recon, r.seconds
        );
        Ok(())
    }
}

pub fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let allowed = keys(&["data", "loss", "seed", "out", "checkpoint-every"], &TRAIN_FLAG_KEYS);
    let mut s = Settings::load("train", a.common.config.as_deref(), &allowed)?;
    let data = s.required_path("data", a.data)?;
    let out = s.required_path("out", a.out)?;
    let loss = s.value("loss", a.loss, LossMode::Total)?;
    let every = s.value("checkpoint-every", a.checkpoint_every, 10)?;
    let seed = s.seed(a.seed)?;
    let plan = train_plan(&mut s, &a.train, loss, seed)?;
    let (_, set) = load_training_set(&data, &plan)?;
    s.note("training-patches", set.len());

    let dir = OutDir::acquire(&out, a.common.force)?;
    dir.write_echo(&s)?;
    if every > 0 {
        fs::create_dir_all(dir.join("checkpoints"))?;
    }
    let mut report = progress("");
    let (params, log) = train_with(&set, &plan.config, |r, p| {
        report(r, p)?;
        if every > 0 && r.epoch % every == 0 {
            checkpoint::save(dir.join(format!("checkpoints/epoch_{:04}.ckpt", r.epoch)), p)?;
        }
        Ok(())
    })?;
    checkpoint::save(dir.join(CHECKPOINT_FILE), &params)?;
    log.save_csv(dir.join(TRAIN_LOG_FILE))?;
    Ok(())
}

fn panel(values: &[f64], size: usize) -> GrayImage {
    GrayImage { height: size, width: size, values: values.to_vec() }
}

pub fn cmd_transform(a: TransformArgs) -> CliResult<()> {
    let mut s = Settings::load("transform", a.common.config.as_deref(), &["ckpt", "image", "out"])?;
    let ckpt = s.required_path("ckpt", a.ckpt)?;
    let image = s.required_path("image", a.image)?;
    let out = s.required_path("out", a.out)?;
    let params = checkpoint::load(&ckpt)?;
    let p = params.meta.patch_size;
    let img = load_image(&image)?;
    if (img.height, img.width) != (p, p) {
        return Err(AiftError::Integrity(format!(
            "checkpoint expects {p}x{p} patches but {} is {}x{}",
            image.display(),
            img.height,
            img.width
        ))
        .into());
    }
    let patch = aift_core::data::ImagePatch::new(p, p, img.values)?;
    let (x_image, x_frequency) = prepare_pair(&patch)?;
    let shape = vec![1, 1, p, p];
    let forward = params.generate(&Tensor::new(shape.clone(), x_image.values().to_vec())?, Direction::Forward)?;
    let inverse = params.generate(&Tensor::new(shape, x_frequency.clone())?, Direction::Inverse)?;

    let dir = OutDir::acquire(&out, a.common.force)?;
    let panels: [(&str, &[f64]); 4] = [
        ("image", x_image.values()),
        ("frequency", &x_frequency),
        ("generated_frequency", forward.data()),
        ("generated_image", inverse.data()),
    ];
    let mut csv = String::from("row,col,image,frequency,generated_frequency,generated_image\n");
    for i in 0..p * p {
        csv.push_str(&format!("{},{}", i / p, i % p));
        for (_, v) in &panels {
            csv.push_str(&format!(",{}", v[i]));
        }
        csv.push('\n');
    }
    for (name, values) in &panels {
        save_pgm16(dir.join(format!("{name}.pgm")), &panel(values, p))?;
    }
    write_text(&dir.join("panels.csv"), &csv)?;
    dir.write_echo(&s)?;
    Ok(())
}

pub fn cmd_detect(a: DetectArgs) -> CliResult<()> {
    let mut s = Settings::load(
        "detect",
        a.common.config.as_deref(),
        &["ckpt", "data", "image", "mode", "threshold", "stride", "out"],
    )?;
    let ckpt = s.required_path("ckpt", a.ckpt)?;
    let data = s.optional_path("data", a.data);
    let image = s.optional_path("image", a.image);
    let mode = s.value("mode", a.mode, DetectionMode::Fourier)?;
    let threshold = s.value("threshold", a.threshold, 0.05)?;
    let out = s.required_path("out", a.out)?;
    let params = checkpoint::load(&ckpt)?;
    let stride = s.value("stride", a.stride, params.meta.patch_size / 2)?;

    // (path as listed, label, image)
    let items: Vec<(String, String, GrayImage)> = match (data, image) {
        (Some(data), None) => {
            let manifest = open_dataset(&data)?;
            test_items(&manifest)?
                .into_iter()
                .map(|t| (t.entry.path.display().to_string(), t.entry.label.to_string(), t.image))
                .collect()
        }
        (None, Some(image)) => {
            let img = load_image(&image)?;
            let name = image.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            vec![(name, String::new(), img)]
        }
        _ => return Err(CliError::config("detect needs exactly one of --data or --image")),
    };
    let images: Vec<&GrayImage> = items.iter().map(|(_, _, img)| img).collect();
    let maps = score_images(&params, &images, stride, mode)?;

    let dir = OutDir::acquire(&out, a.common.force)?;
    fs::create_dir_all(dir.join(MAPS_DIR))?;
    let scale = maps.iter().map(ScoreMap::max).fold(0.0, f64::max);
    let mut csv = String::from("path,label,image_score,mask_pixels\n");
    for ((path, label, _), map) in items.iter().zip(&maps) {
        let stem = map_stem(Path::new(path));
        map.save_csv(dir.join(MAPS_DIR).join(format!("{stem}.csv")))?;
        map.save_image(dir.join(MAPS_DIR).join(format!("{stem}.pgm")), scale)?;
        let marked = threshold_mask(&map.values, threshold).iter().filter(|&&m| m).count();
        csv.push_str(&format!("{path},{label},{},{marked}\n", image_score(map)));
    }
    write_text(&dir.join(SCORES_FILE), &csv)?;
    dir.write_echo(&s)?;
    eprintln!("scored {} images", maps.len());
    Ok(())
}

/// `(path, image_score)` rows of a scores CSV.
fn read_scores(path: &Path) -> CliResult<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| AiftError::input(path, e.to_string()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let cols: Vec<&str> = header.split(',').collect();
    let (pi, si) = match (cols.iter().position(|c| *c == "path"), cols.iter().position(|c| *c == "image_score")) {
        (Some(p), Some(s)) => (p, s),
        _ => return Err(AiftError::input(path, "header lacks path and image_score columns").into()),
    };
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || CliError::from(AiftError::input(path, format!("row {} is malformed: {l:?}", i + 1)));
            let score = f.get(si).and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad)?;
            Ok((f.get(pi).ok_or_else(bad)?.to_string(), score))
        })
        .collect()
}

fn read_map(path: &Path) -> CliResult<ScoreMap> {
    let text = fs::read_to_string(path).map_err(|e| AiftError::input(path, e.to_string()))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| AiftError::input(path, format!("row {}: {e}", height + 1)))?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(AiftError::input(path, format!("row {} has {} values", height + 1, row.len())).into());
        }
        values.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| AiftError::input(path, "empty score map"))?;
    Ok(ScoreMap { height, width, values })
}

pub fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let mut s = Settings::load("eval", a.common.config.as_deref(), &["scores", "maps", "gt", "tolerance", "out"])?;
    let scores_path = s.optional_path("scores", a.scores);
    let maps_dir = s.optional_path("maps", a.maps);
    let gt = s.required_path("gt", a.gt)?;
    let tolerance = s.value("tolerance", a.tolerance, 0)?;
    let out = s.required_path("out", a.out)?;
    let scores_file = match (&scores_path, &maps_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join(SCORES_FILE),
        (None, None) => return Err(CliError::config("eval needs --scores or --maps")),
    };
    let manifest = open_dataset(&gt)?;
    let rows = read_scores(&scores_file)?;
    let mut labels = Vec::with_capacity(rows.len());
    let mut entries = Vec::with_capacity(rows.len());
    for (path, _) in &rows {
        let entry = manifest
            .entries
            .iter()
            .find(|e| e.path.display().to_string() == *path)
            .ok_or_else(|| AiftError::input(&scores_file, format!("{path} is not in the ground-truth manifest")))?;
        labels.push(entry.label == Label::Defect);
        entries.push(entry);
    }

    let dir = OutDir::acquire(&out, a.common.force)?;
    match maps_dir {
        Some(maps_dir) => {
            let mut maps = Vec::with_capacity(rows.len());
            let mut truths = Vec::with_capacity(rows.len());
            for ((path, _), entry) in rows.iter().zip(&entries) {
                let map_path = maps_dir.join(MAPS_DIR).join(format!("{}.csv", map_stem(Path::new(path))));
                let map = read_map(&map_path)?;
                truths.push(load_truth(&manifest, entry, map.height, map.width)?);
                maps.push(map);
            }
            let report = evaluate(&maps, &truths, &labels, tolerance)?;
            report.save(dir.join(CURVE_FILE), dir.join(SUMMARY_FILE))?;
            eprintln!(
                "AIU {:.4} ODS {:.4} (t={:.2}) OIS {:.4} AUROC {}",
                report.aiu,
                report.ods,
                report.ods_threshold,
                report.ois,
                report.auroc.map_or("NA".into(), |v| format!("{v:.4}"))
            );
        }
        None => {
            let scores: Vec<f64> = rows.iter().map(|(_, v)| *v).collect();
            let a = auroc(&scores, &labels)?;
            let line = format!("{},{tolerance},NA,NA,NA,NA,{a}\n", rows.len());
            write_text(&dir.join(SUMMARY_FILE), &format!("{SUMMARY_HEADER}\n{line}"))?;
            eprintln!("AUROC {a:.4}");
        }
    }
    dir.write_echo(&s)?;
    Ok(())
}

/// Pixel and image metrics of one trained model under both detection modes.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub mode: LossMode,
    pub seed: u64,
    pub fourier: MetricsReport,
    pub roundtrip: MetricsReport,
}

pub const ABLATION_HEADER: &str =
    "mode,seed,AIU,ODS,OIS,AUROC,AIU_roundtrip,ODS_roundtrip,OIS_roundtrip,AUROC_roundtrip";

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| v.to_string())
}

fn report_cells(r: &MetricsReport) -> String {
    format!("{},{},{},{}", r.aiu, r.ods, r.ois, na(r.auroc))
}

pub fn cmd_ablation(a: AblationArgs) -> CliResult<()> {
    let allowed = keys(&["data", "seeds", "modes", "tolerance", "out"], &TRAIN_FLAG_KEYS);
    let mut s = Settings::load("ablation", a.common.config.as_deref(), &allowed)?;
    let data = s.required_path("data", a.data)?;
    let out = s.required_path("out", a.out)?;
    let seeds = s.value("seeds", a.seeds, List(vec![1, 2, 3]))?;
    let modes = s.value("modes", a.modes, List(vec![LossMode::Re, LossMode::Gan, LossMode::Total]))?;
    let tolerance = s.value("tolerance", a.tolerance, 0)?;
    if seeds.0.is_empty() || modes.0.is_empty() {
        return Err(CliError::config("ablation needs at least one seed and one mode"));
    }
    let plan = train_plan(&mut s, &a.train, LossMode::Total, 0)?;
    let (manifest, set) = load_training_set(&data, &plan)?;
    let items = test_items(&manifest)?;
    let stride = plan.patch_size / 2;

    let dir = OutDir::acquire(&out, a.common.force)?;
    dir.write_echo(&s)?;
    fs::create_dir_all(dir.join("logs"))?;
    let started = Instant::now();
    let mut rows = Vec::new();
    for &mode in &modes.0 {
        for &seed in &seeds.0 {
            let config = TrainConfig { loss_mode: mode, seed, ..plan.config.clone() };
            let tag = format!("[{mode} seed {seed}] ");
            let (params, log): (AiftParams, TrainLog) = train_with(&set, &config, progress(&tag))?;
            log.save_csv(dir.join(format!("logs/{mode}_seed{seed}.csv")))?;
            let fourier = evaluate_items(&params, &items, stride, DetectionMode::Fourier, tolerance)?;
            let roundtrip = evaluate_items(&params, &items, stride, DetectionMode::Roundtrip, tolerance)?;
            eprintln!("{tag}AIU {:.4} AUROC {}", fourier.aiu, na(fourier.auroc));
            rows.push(AblationRow { mode, seed, fourier, roundtrip });
        }
    }

    let mut csv = format!("{ABLATION_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.mode, r.seed, report_cells(&r.fourier), report_cells(&r.roundtrip)));
    }
    write_text(&dir.join(ABLATION_FILE), &csv)?;

    let mut mean_csv = String::from("mode,runs,AIU,ODS,OIS,AUROC,AUROC_roundtrip\n");
    for &mode in &modes.0 {
        let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.mode == mode).collect();
        let mean = |f: &dyn Fn(&AblationRow) -> Option<f64>| -> String {
            let v: Option<Vec<f64>> = sel.iter().map(|r| f(r)).collect();
            v.map_or("NA".into(), |v| (v.iter().sum::<f64>() / v.len() as f64).to_string())
        };
        mean_csv.push_str(&format!(
            "{mode},{},{},{},{},{},{}\n",
            sel.len(),
            mean(&|r| Some(r.fourier.aiu)),
            mean(&|r| Some(r.fourier.ods)),
            mean(&|r| Some(r.fourier.ois)),
            mean(&|r| r.fourier.auroc),
            mean(&|r| r.roundtrip.auroc),
        ));
    }
    write_text(&dir.join(ABLATION_MEAN_FILE), &mean_csv)?;
    let mut f = fs::File::create(dir.join("runtime.txt"))?;
    writeln!(f, "seconds = {:.1}", started.elapsed().as_secs_f64())?;
    Ok(())
}
