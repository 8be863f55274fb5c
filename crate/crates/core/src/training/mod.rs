//! Minimax optimization of the generator against both discriminators.
//!
//! Each training step runs `critic_iters` ascent updates of the discriminators
//! on the adversarial loss, then one descent update of the generator. The
//! generator minimizes the non-saturating adversarial objective
//! `-E[log D_F(G+(x_I))] - E[log D_I(G-(x_F))]` plus `lambda` times the
//! reconstruction loss; the logs also carry the plain adversarial loss value.

pub mod losses;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ImagePatch;
use crate::error::{AiftError, Result};
use crate::model::{
    discriminator_features, discriminator_head, generate, init_params_with, AiftParams, Direction, Domain, ModelMeta,
    DEFAULT_WIDTHS,
};
use crate::spectral::spectrum_image;
use crate::tensor::{AdamConfig, AdamState, Graph, Tensor, Var};
use losses::{atcl_loss, mean_log, mean_log_complement, recon_loss};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Reconstruction loss only; the discriminators are never updated.
    Re,
    /// Adversarial loss only (`lambda` treated as 0).
    Gan,
    /// Adversarial plus `lambda`-weighted reconstruction.
    Total,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Re => "re",
            LossMode::Gan => "gan",
            LossMode::Total => "total",
        })
    }
}

impl FromStr for LossMode {
    type Err = AiftError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "re" => Ok(LossMode::Re),
            "gan" => Ok(LossMode::Gan),
            "total" => Ok(LossMode::Total),
            other => Err(AiftError::Config(format!("unknown loss mode {other:?} (expected re, gan or total)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub critic_iters: usize,
    pub adam: AdamConfig,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub widths: [usize; 4],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            lambda: 0.1,
            critic_iters: 10,
            adam: AdamConfig::default(),
            loss_mode: LossMode::Total,
            seed: 0,
            widths: DEFAULT_WIDTHS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(AiftError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(AiftError::Config("batch size must be at least 1".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(AiftError::Config(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        if self.critic_iters == 0 {
            return Err(AiftError::Config("critic iterations must be at least 1".into()));
        }
        if self.adam.lr.is_nan()
            || self.adam.lr < 0.0
            || !(0.0..1.0).contains(&self.adam.beta1)
            || !(0.0..1.0).contains(&self.adam.beta2)
        {
            return Err(AiftError::Config(format!("invalid Adam settings {:?}", self.adam)));
        }
        Ok(())
    }

    /// Reconstruction weight actually applied by the generator update.
    pub fn effective_lambda(&self) -> f64 {
        match self.loss_mode {
            LossMode::Re => 1.0,
            LossMode::Gan => 0.0,
            LossMode::Total => self.lambda,
        }
    }
}

/// Image patches paired with their spectra, stored as flat `[N, 1, P, P]` arrays.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    patch_size: usize,
    images: Vec<f64>,
    frequencies: Vec<f64>,
}

impl TrainingSet {
    /// Min-max normalizes each patch and pairs it with its spectrum.
    pub fn from_patches(patches: &[ImagePatch]) -> Result<Self> {
        let first = patches.first().ok_or_else(|| AiftError::Config("training set is empty".into()))?;
        let patch_size = first.height();
        let mut images = Vec::with_capacity(patches.len() * patch_size * patch_size);
        let mut frequencies = Vec::with_capacity(images.capacity());
        for p in patches {
            if p.height() != patch_size || p.width() != patch_size {
                return Err(AiftError::dim(
                    "training set",
                    format!("patch {}x{} in a set of {patch_size}x{patch_size}", p.height(), p.width()),
                ));
            }
            let (img, freq) = prepare_pair(p)?;
            images.extend_from_slice(img.values());
            frequencies.extend_from_slice(&freq);
        }
        Ok(TrainingSet { patch_size, images, frequencies })
    }

    pub fn len(&self) -> usize {
        self.images.len() / (self.patch_size * self.patch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// Gathers the given samples into `(x_I, x_F)` batch tensors.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let px = self.patch_size * self.patch_size;
        let gather = |src: &[f64]| -> Vec<f64> {
            indices.iter().flat_map(|&i| src[i * px..(i + 1) * px].iter().copied()).collect()
        };
        let shape = vec![indices.len(), 1, self.patch_size, self.patch_size];
        Ok((Tensor::new(shape.clone(), gather(&self.images))?, Tensor::new(shape, gather(&self.frequencies))?))
    }
}

/// Normalizes a patch and computes its frequency-domain pair.
pub fn prepare_pair(patch: &ImagePatch) -> Result<(ImagePatch, Vec<f64>)> {
    let img = ImagePatch::normalized(patch.height(), patch.width(), patch.values().to_vec())?;
    let freq = spectrum_image(&img).values;
    Ok((img, freq))
}

/// Loss values observed during one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    /// Objective minimized by the generator update.
    pub generator: f64,
    /// Adversarial transform consistency loss under the current parameters.
    pub atcl: f64,
    /// Binary cross-entropy of the image discriminator on its last critic update.
    pub d_image: f64,
    /// Binary cross-entropy of the frequency discriminator on its last critic update.
    pub d_frequency: f64,
    pub recon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub g_loss: f64,
    pub d_image_loss: f64,
    pub d_frequency_loss: f64,
    pub recon: f64,
    pub atcl: f64,
    pub seconds: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub records: Vec<EpochRecord>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,g_loss,dI_loss,dF_loss,recon,seconds,atcl";

impl TrainLog {
    pub fn total_steps(&self) -> usize {
        self.records.iter().map(|r| r.steps).sum()
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{TRAIN_LOG_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{:.3},{}",
                r.epoch, r.g_loss, r.d_image_loss, r.d_frequency_loss, r.recon, r.seconds, r.atcl
            )?;
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

fn finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(AiftError::NonFinite(format!("{what} loss ({v})")))
    }
}

/// Owns the model and both optimizers for the duration of a run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub params: AiftParams,
    pub config: TrainConfig,
    opt_generator: AdamState,
    opt_discriminators: AdamState,
}

impl Trainer {
    pub fn new(params: AiftParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let opt_generator = AdamState::new(config.adam, params.generator.tensors());
        let opt_discriminators = AdamState::new(config.adam, params.discriminators.tensors());
        Ok(Trainer { params, config, opt_generator, opt_discriminators })
    }

    /// Outputs of both generator directions with no gradient recording.
    pub fn generate_fakes(&self, image: &Tensor, frequency: &Tensor) -> Result<(Tensor, Tensor)> {
        let fake_frequency = self.params.generate(image, Direction::Forward)?;
        let fake_image = self.params.generate(frequency, Direction::Inverse)?;
        Ok((fake_frequency, fake_image))
    }

    /// One ascent update of the discriminators on the adversarial loss.
    /// Returns `(atcl, d_image_bce, d_frequency_bce)` measured before the update.
    pub fn critic_update(
        &mut self,
        image: &Tensor,
        frequency: &Tensor,
        fake_frequency: &Tensor,
        fake_image: &Tensor,
    ) -> Result<(f64, f64, f64)> {
        let n = image.shape()[0];
        let mut g = Graph::new();
        let bound = self.params.discriminators.bind(&mut g, true);
        let inputs: Vec<Var> = [image, fake_image, frequency, fake_frequency].iter().map(|t| g.constant(t)).collect();
        let stacked = g.concat(&inputs)?;
        let features = discriminator_features(&mut g, &self.params, &bound, stacked)?;
        let image_features = g.narrow(features, 0, 2 * n)?;
        let frequency_features = g.narrow(features, 2 * n, 2 * n)?;
        let o_image = discriminator_head(&mut g, &bound, image_features, Domain::Image)?;
        let o_frequency = discriminator_head(&mut g, &bound, frequency_features, Domain::Frequency)?;
        let image_real = g.narrow(o_image, 0, n)?;
        let image_fake = g.narrow(o_image, n, n)?;
        let frequency_real = g.narrow(o_frequency, 0, n)?;
        let frequency_fake = g.narrow(o_frequency, n, n)?;

        let image_bce = -(mean_log_value(&mut g, image_real)? + mean_log_complement_value(&mut g, image_fake)?);
        let frequency_bce =
            -(mean_log_value(&mut g, frequency_real)? + mean_log_complement_value(&mut g, frequency_fake)?);
        let atcl = atcl_loss(&mut g, image_real, frequency_real, frequency_fake, image_fake)?;
        let atcl_v = finite("atcl", g.scalar(atcl)?)?;
        finite("dI", image_bce)?;
        finite("dF", frequency_bce)?;
        let ascent = g.affine(atcl, -1.0, 0.0);
        let grads = g.backward(ascent)?;
        self.params.discriminators.store_grads(&bound, &grads)?;
        let mut tensors = self.params.discriminators.tensors_mut();
        self.opt_discriminators.step(&mut tensors)?;
        Ok((atcl_v, image_bce, frequency_bce))
    }

    /// Objective minimized by the generator, evaluated on `g` with the
    /// discriminators held fixed. Returns `(objective, recon, atcl)` nodes/values.
    fn generator_objective(
        &self,
        g: &mut Graph,
        image: &Tensor,
        frequency: &Tensor,
        trainable: bool,
    ) -> Result<(Var, f64, f64, crate::model::BoundGenerator)> {
        let n = image.shape()[0];
        let bound = self.params.generator.bind(g, trainable);
        let x_image = g.constant(image);
        let x_frequency = g.constant(frequency);
        let gen_frequency = generate(g, &self.params, &bound, x_image, Direction::Forward)?;
        let gen_image = generate(g, &self.params, &bound, x_frequency, Direction::Inverse)?;
        let recon = recon_loss(g, x_image, x_frequency, gen_frequency, gen_image)?;
        let recon_v = finite("recon", g.scalar(recon)?)?;
        if self.config.loss_mode == LossMode::Re {
            return Ok((recon, recon_v, 0.0, bound));
        }

        let disc = self.params.discriminators.bind(g, false);
        let fakes = g.concat(&[gen_image, gen_frequency])?;
        let features = discriminator_features(g, &self.params, &disc, fakes)?;
        let fi = g.narrow(features, 0, n)?;
        let ff = g.narrow(features, n, n)?;
        let image_fake = discriminator_head(g, &disc, fi, Domain::Image)?;
        let frequency_fake = discriminator_head(g, &disc, ff, Domain::Frequency)?;
        let fool_frequency = mean_log(g, frequency_fake)?;
        let fool_image = mean_log(g, image_fake)?;
        let fool = g.add(fool_frequency, fool_image)?;
        let adversarial = g.affine(fool, -1.0, 0.0);
        finite("generator adversarial", g.scalar(adversarial)?)?;
        let weighted = g.affine(recon, self.config.effective_lambda(), 0.0);
        let objective = g.add(adversarial, weighted)?;

        // Plain adversarial loss value for the log, using fresh real-sample scores.
        let reals = {
            let mut rg = Graph::new();
            let rb = self.params.discriminators.bind(&mut rg, false);
            let xi = rg.constant(image);
            let xf = rg.constant(frequency);
            let stacked = rg.concat(&[xi, xf])?;
            let feats = discriminator_features(&mut rg, &self.params, &rb, stacked)?;
            let a = rg.narrow(feats, 0, n)?;
            let b = rg.narrow(feats, n, n)?;
            let oi = discriminator_head(&mut rg, &rb, a, Domain::Image)?;
            let of = discriminator_head(&mut rg, &rb, b, Domain::Frequency)?;
            (mean_log_value(&mut rg, oi)?, mean_log_value(&mut rg, of)?)
        };
        let atcl_v = reals.0
            + reals.1
            + mean_log_complement_value(g, frequency_fake)?
            + mean_log_complement_value(g, image_fake)?;
        Ok((objective, recon_v, finite("atcl", atcl_v)?, bound))
    }

    /// Value of the generator objective without updating anything.
    pub fn generator_objective_value(&self, image: &Tensor, frequency: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let (obj, ..) = self.generator_objective(&mut g, image, frequency, false)?;
        g.scalar(obj)
    }

    /// One descent update of the generator. Returns `(objective, recon, atcl)`
    /// measured before the update.
    pub fn generator_update(&mut self, image: &Tensor, frequency: &Tensor) -> Result<(f64, f64, f64)> {
        let mut g = Graph::new();
        let (objective, recon, atcl, bound) = self.generator_objective(&mut g, image, frequency, true)?;
        let obj_v = finite("generator", g.scalar(objective)?)?;
        let grads = g.backward(objective)?;
        self.params.generator.store_grads(&bound, &grads)?;
        let mut tensors = self.params.generator.tensors_mut();
        self.opt_generator.step(&mut tensors)?;
        Ok((obj_v, recon, atcl))
    }

    /// `critic_iters` discriminator updates followed by one generator update.
    pub fn step(&mut self, image: &Tensor, frequency: &Tensor) -> Result<StepLosses> {
        let mut out = StepLosses::default();
        if self.config.loss_mode != LossMode::Re {
            let (fake_frequency, fake_image) = self.generate_fakes(image, frequency)?;
            for _ in 0..self.config.critic_iters {
                let (_, di, df) = self.critic_update(image, frequency, &fake_frequency, &fake_image)?;
                out.d_image = di;
                out.d_frequency = df;
            }
        }
        let (generator, recon, atcl) = self.generator_update(image, frequency)?;
        out.generator = generator;
        out.recon = recon;
        out.atcl = atcl;
        Ok(out)
    }
}

fn mean_log_value(g: &mut Graph, v: Var) -> Result<f64> {
    let m = mean_log(g, v)?;
    g.scalar(m)
}

fn mean_log_complement_value(g: &mut Graph, v: Var) -> Result<f64> {
    let m = mean_log_complement(g, v)?;
    g.scalar(m)
}

/// Single training step on a prepared batch.
pub fn train_step(trainer: &mut Trainer, image: &Tensor, frequency: &Tensor) -> Result<StepLosses> {
    trainer.step(image, frequency)
}

pub fn train(set: &TrainingSet, config: &TrainConfig) -> Result<(AiftParams, TrainLog)> {
    train_with(set, config, |_, _| Ok(()))
}

/// Trains from a fresh seeded initialization, calling `on_epoch` after every
/// epoch. Every epoch shuffles the set and consumes `floor(N / batch_size)`
/// full batches. The returned parameters are rounded to `f32` so they equal
/// what a checkpoint of them would hold.
pub fn train_with(
    set: &TrainingSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &AiftParams) -> Result<()>,
) -> Result<(AiftParams, TrainLog)> {
    config.validate()?;
    if set.is_empty() {
        return Err(AiftError::Config("training set is empty".into()));
    }
    let steps_per_epoch = set.len() / config.batch_size;
    if steps_per_epoch == 0 {
        return Err(AiftError::Config(format!(
            "{} training patches cannot fill one batch of {}",
            set.len(),
            config.batch_size
        )));
    }
    let meta = ModelMeta { patch_size: set.patch_size(), seed: config.seed, widths: config.widths };
    let params = init_params_with(meta)?;
    let mut trainer = Trainer::new(params, config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = StepLosses::default();
        for batch in order.chunks_exact(config.batch_size) {
            let (image, frequency) = set.batch(batch)?;
            let s = trainer.step(&image, &frequency)?;
            sum.generator += s.generator;
            sum.atcl += s.atcl;
            sum.d_image += s.d_image;
            sum.d_frequency += s.d_frequency;
            sum.recon += s.recon;
        }
        let k = steps_per_epoch as f64;
        let record = EpochRecord {
            epoch,
            g_loss: sum.generator / k,
            d_image_loss: sum.d_image / k,
            d_frequency_loss: sum.d_frequency / k,
            recon: sum.recon / k,
            atcl: sum.atcl / k,
            seconds: started.elapsed().as_secs_f64(),
            steps: steps_per_epoch,
        };
        on_epoch(&record, &trainer.params)?;
        records.push(record);
    }
    let mut params = trainer.params;
    params.round_to_f32();
    Ok((params, TrainLog { config: config.clone(), records }))
}
