//! The generator and the pair of discriminators.
//!
//! The generator has one convolutional encoder shared by both directions and a
//! transposed-convolution decoder per target domain. The two discriminators
//! share a convolutional trunk and differ only in their dense scalar heads.
//! Every convolution uses kernel 4, stride 2, padding 1, so each encoder layer
//! halves the spatial extent and each decoder layer doubles it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AiftError, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_WIDTHS: [usize; 4] = [32, 64, 128, 256];
pub const SUPPORTED_PATCH_SIZES: [usize; 3] = [16, 32, 64];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Image to frequency.
    Forward,
    /// Frequency to image.
    Inverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Image,
    Frequency,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelMeta {
    pub patch_size: usize,
    pub seed: u64,
    pub widths: [usize; 4],
}

impl ModelMeta {
    pub fn new(patch_size: usize, seed: u64) -> Self {
        ModelMeta { patch_size, seed, widths: DEFAULT_WIDTHS }
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_PATCH_SIZES.contains(&self.patch_size) {
            return Err(AiftError::Config(format!(
                "unsupported patch size {} (expected one of {SUPPORTED_PATCH_SIZES:?})",
                self.patch_size
            )));
        }
        if self.widths.contains(&0) {
            return Err(AiftError::Config(format!("zero channel width in {:?}", self.widths)));
        }
        Ok(())
    }

    /// Spatial extent after the four stride-2 encoder layers.
    pub fn bottleneck_size(&self) -> usize {
        self.patch_size / 16
    }

    fn flat_features(&self) -> usize {
        self.widths[3] * self.bottleneck_size() * self.bottleneck_size()
    }
}

/// Weight and bias of one (transposed) convolution or dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
struct BoundLayer {
    weight: Var,
    bias: Var,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data").into_param()
}

impl Layer {
    fn conv(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Self {
        Layer {
            weight: uniform(rng, &[c_out, c_in, KERNEL, KERNEL], c_in * KERNEL * KERNEL),
            bias: Tensor::zeros(&[c_out]).into_param(),
        }
    }

    fn deconv(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Self {
        Layer {
            weight: uniform(rng, &[c_in, c_out, KERNEL, KERNEL], c_in * KERNEL * KERNEL),
            bias: Tensor::zeros(&[c_out]).into_param(),
        }
    }

    fn dense(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> Self {
        Layer { weight: uniform(rng, &[d_in, d_out], d_in), bias: Tensor::zeros(&[d_out]).into_param() }
    }
}

/// Generator parameters: shared encoder plus one decoder per target domain.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub encoder: Vec<Layer>,
    /// Decoder producing frequency-domain output (image to frequency).
    pub frequency_decoder: Vec<Layer>,
    /// Decoder producing image-domain output (frequency to image).
    pub image_decoder: Vec<Layer>,
}

/// Discriminator parameters: shared trunk plus one scalar head per domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub trunk: Vec<Layer>,
    pub image_head: Layer,
    pub frequency_head: Layer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AiftParams {
    pub meta: ModelMeta,
    pub generator: GeneratorParams,
    pub discriminators: DiscriminatorParams,
}

fn encoder_layers(rng: &mut ChaCha8Rng, widths: &[usize; 4]) -> Vec<Layer> {
    let mut c_in = 1;
    widths
        .iter()
        .map(|&w| {
            let l = Layer::conv(rng, c_in, w);
            c_in = w;
            l
        })
        .collect()
}

fn decoder_layers(rng: &mut ChaCha8Rng, widths: &[usize; 4]) -> Vec<Layer> {
    let chans = [widths[3], widths[2], widths[1], widths[0], 1];
    chans.windows(2).map(|p| Layer::deconv(rng, p[0], p[1])).collect()
}

/// Deterministic initialization: weights uniform in `±sqrt(6 / fan_in)`, biases zero.
pub fn init_params(patch_size: usize, seed: u64) -> Result<AiftParams> {
    init_params_with(ModelMeta::new(patch_size, seed))
}

pub fn init_params_with(meta: ModelMeta) -> Result<AiftParams> {
    meta.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
    let generator = GeneratorParams {
        encoder: encoder_layers(&mut rng, &meta.widths),
        frequency_decoder: decoder_layers(&mut rng, &meta.widths),
        image_decoder: decoder_layers(&mut rng, &meta.widths),
    };
    let trunk = encoder_layers(&mut rng, &meta.widths);
    let flat = meta.flat_features();
    let discriminators = DiscriminatorParams {
        trunk,
        image_head: Layer::dense(&mut rng, flat, 1),
        frequency_head: Layer::dense(&mut rng, flat, 1),
    };
    Ok(AiftParams { meta, generator, discriminators })
}

fn layer_tensors<'a>(layers: impl IntoIterator<Item = &'a Layer>) -> impl Iterator<Item = &'a Tensor> {
    layers.into_iter().flat_map(|l| [&l.weight, &l.bias])
}

fn layer_tensors_mut<'a>(layers: impl IntoIterator<Item = &'a mut Layer>) -> impl Iterator<Item = &'a mut Tensor> {
    layers.into_iter().flat_map(|l| [&mut l.weight, &mut l.bias])
}

fn named_layers<'a>(prefix: &str, layers: &'a [Layer], out: &mut Vec<(String, &'a Tensor)>) {
    for (i, l) in layers.iter().enumerate() {
        out.push((format!("{prefix}.{i}.weight"), &l.weight));
        out.push((format!("{prefix}.{i}.bias"), &l.bias));
    }
}

fn bind_layers(g: &mut Graph, tensors: Vec<&Tensor>, trainable: bool) -> Vec<BoundLayer> {
    tensors
        .chunks(2)
        .map(|wb| {
            let (weight, bias) =
                if trainable { (g.param(wb[0]), g.param(wb[1])) } else { (g.constant(wb[0]), g.constant(wb[1])) };
            BoundLayer { weight, bias }
        })
        .collect()
}

fn store_grads(tensors: Vec<&mut Tensor>, vars: &[Var], grads: &crate::tensor::Gradients) -> Result<()> {
    for (t, &v) in tensors.into_iter().zip(vars) {
        t.zero_grad();
        if let Some(g) = grads.get(v) {
            t.accumulate_grad(g)?;
        }
    }
    Ok(())
}

/// Generator parameters recorded on a graph.
#[derive(Clone, Debug)]
pub struct BoundGenerator {
    encoder: Vec<BoundLayer>,
    frequency_decoder: Vec<BoundLayer>,
    image_decoder: Vec<BoundLayer>,
    vars: Vec<Var>,
}

/// Discriminator parameters recorded on a graph.
#[derive(Clone, Debug)]
pub struct BoundDiscriminators {
    trunk: Vec<BoundLayer>,
    image_head: BoundLayer,
    frequency_head: BoundLayer,
    vars: Vec<Var>,
}

fn flatten_vars(layers: &[&[BoundLayer]]) -> Vec<Var> {
    layers.iter().flat_map(|ls| ls.iter().flat_map(|l| [l.weight, l.bias])).collect()
}

impl GeneratorParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        layer_tensors(self.encoder.iter().chain(&self.frequency_decoder).chain(&self.image_decoder)).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        layer_tensors_mut(
            self.encoder.iter_mut().chain(self.frequency_decoder.iter_mut()).chain(self.image_decoder.iter_mut()),
        )
        .collect()
    }

    /// Records the parameters on `g`, as differentiable leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundGenerator {
        let encoder = bind_layers(g, layer_tensors(&self.encoder).collect(), trainable);
        let frequency_decoder = bind_layers(g, layer_tensors(&self.frequency_decoder).collect(), trainable);
        let image_decoder = bind_layers(g, layer_tensors(&self.image_decoder).collect(), trainable);
        let vars = flatten_vars(&[&encoder, &frequency_decoder, &image_decoder]);
        BoundGenerator { encoder, frequency_decoder, image_decoder, vars }
    }

    /// Replaces every parameter's gradient with the one found in `grads`.
    pub fn store_grads(&mut self, bound: &BoundGenerator, grads: &crate::tensor::Gradients) -> Result<()> {
        store_grads(self.tensors_mut(), &bound.vars, grads)
    }
}

impl DiscriminatorParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        layer_tensors(self.trunk.iter().chain([&self.image_head, &self.frequency_head])).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        layer_tensors_mut(self.trunk.iter_mut().chain([&mut self.image_head, &mut self.frequency_head])).collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundDiscriminators {
        let trunk = bind_layers(g, layer_tensors(&self.trunk).collect(), trainable);
        let heads = bind_layers(g, layer_tensors([&self.image_head, &self.frequency_head]).collect(), trainable);
        let vars = flatten_vars(&[&trunk, &heads]);
        BoundDiscriminators { trunk, image_head: heads[0], frequency_head: heads[1], vars }
    }

    pub fn store_grads(&mut self, bound: &BoundDiscriminators, grads: &crate::tensor::Gradients) -> Result<()> {
        store_grads(self.tensors_mut(), &bound.vars, grads)
    }
}

impl AiftParams {
    /// All tensors with stable hierarchical names, in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        named_layers("generator.encoder", &self.generator.encoder, &mut out);
        named_layers("generator.frequency_decoder", &self.generator.frequency_decoder, &mut out);
        named_layers("generator.image_decoder", &self.generator.image_decoder, &mut out);
        named_layers("discriminators.trunk", &self.discriminators.trunk, &mut out);
        named_layers("discriminators.image_head", std::slice::from_ref(&self.discriminators.image_head), &mut out);
        named_layers(
            "discriminators.frequency_head",
            std::slice::from_ref(&self.discriminators.frequency_head),
            &mut out,
        );
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.generator.tensors_mut();
        v.extend(self.discriminators.tensors_mut());
        v
    }

    /// Rounds every value to the nearest `f32`, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Errors with [`AiftError::Integrity`] if any tensor holds NaN or infinity.
    pub fn check_integrity(&self) -> Result<()> {
        for (name, t) in self.named_tensors() {
            if !t.is_finite() {
                return Err(AiftError::Integrity(format!("non-finite values in {name}")));
            }
        }
        Ok(())
    }

    fn check_input(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        let p = self.meta.patch_size;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != p || shape[3] != p {
            return Err(AiftError::dim(op, format!("expected [N, 1, {p}, {p}], got {shape:?}")));
        }
        Ok(())
    }

    /// Runs one direction of the generator without recording gradients.
    pub fn generate(&self, x: &Tensor, direction: Direction) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.generator.bind(&mut g, false);
        let xv = g.constant(x);
        let y = generate(&mut g, self, &bound, xv, direction)?;
        Ok(g.value(y))
    }

    /// Per-sample likelihood in `(0, 1)` that `x` is a given (not generated) sample.
    pub fn discriminate(&self, x: &Tensor, domain: Domain) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.discriminators.bind(&mut g, false);
        let xv = g.constant(x);
        let y = discriminate(&mut g, self, &bound, xv, domain)?;
        Ok(g.value(y))
    }
}

fn conv_block(g: &mut Graph, x: Var, layer: &BoundLayer) -> Result<Var> {
    let y = g.conv2d(x, layer.weight, STRIDE, PADDING)?;
    g.channel_bias(y, layer.bias)
}

fn encode(g: &mut Graph, layers: &[BoundLayer], x: Var) -> Result<Var> {
    layers.iter().try_fold(x, |h, layer| {
        let y = conv_block(g, h, layer)?;
        Ok(g.leaky_relu(y, LEAKY_SLOPE))
    })
}

fn decode(g: &mut Graph, layers: &[BoundLayer], mut h: Var) -> Result<Var> {
    for (i, layer) in layers.iter().enumerate() {
        let y = g.conv_transpose2d(h, layer.weight, STRIDE, PADDING)?;
        let y = g.channel_bias(y, layer.bias)?;
        h = if i + 1 == layers.len() { g.sigmoid(y) } else { g.leaky_relu(y, LEAKY_SLOPE) };
    }
    Ok(h)
}

/// Records a generator pass on `g`. `x` is `[N, 1, P, P]` with values in `[0, 1]`;
/// the output has the same shape with values in `[0, 1]`.
pub fn generate(
    g: &mut Graph,
    params: &AiftParams,
    bound: &BoundGenerator,
    x: Var,
    direction: Direction,
) -> Result<Var> {
    params.check_input("generate", g.shape(x))?;
    let z = encode(g, &bound.encoder, x)?;
    let decoder = match direction {
        Direction::Forward => &bound.frequency_decoder,
        Direction::Inverse => &bound.image_decoder,
    };
    decode(g, decoder, z)
}

/// Shared discriminator trunk: `[N, 1, P, P]` to flat features `[N, D]`.
pub fn discriminator_features(g: &mut Graph, params: &AiftParams, bound: &BoundDiscriminators, x: Var) -> Result<Var> {
    params.check_input("discriminate", g.shape(x))?;
    let n = g.shape(x)[0];
    let h = encode(g, &bound.trunk, x)?;
    g.reshape(h, &[n, params.meta.flat_features()])
}

/// Domain-specific head on trunk features: `[N, D]` to likelihoods `[N, 1]`.
pub fn discriminator_head(g: &mut Graph, bound: &BoundDiscriminators, features: Var, domain: Domain) -> Result<Var> {
    let head = match domain {
        Domain::Image => bound.image_head,
        Domain::Frequency => bound.frequency_head,
    };
    let logits = g.dense(features, head.weight, head.bias)?;
    Ok(g.sigmoid(logits))
}

pub fn discriminate(
    g: &mut Graph,
    params: &AiftParams,
    bound: &BoundDiscriminators,
    x: Var,
    domain: Domain,
) -> Result<Var> {
    let f = discriminator_features(g, params, bound, x)?;
    discriminator_head(g, bound, f, domain)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> AiftParams {
        init_params_with(ModelMeta { patch_size: 16, seed, widths: [2, 3, 4, 5] }).unwrap()
    }

    fn random_batch(n: usize, p: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, 1, p, p], (0..n * p * p).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        assert_eq!(init_params(16, 4).unwrap(), init_params(16, 4).unwrap());
        assert_ne!(small(4), small(5));
    }

    #[test]
    fn unsupported_patch_size_is_config_error() {
        assert!(matches!(init_params(24, 0), Err(AiftError::Config(_))));
        assert!(matches!(init_params(128, 0), Err(AiftError::Config(_))));
    }

    #[test]
    fn init_bounds_and_zero_biases() {
        let p = small(1);
        for (name, t) in p.named_tensors() {
            if name.ends_with("bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        let w = &p.generator.encoder[1].weight;
        let bound = (6.0f64 / (2 * 16) as f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn generate_preserves_shape_and_range() {
        let p = init_params_with(ModelMeta { patch_size: 32, seed: 2, widths: [4, 4, 8, 8] }).unwrap();
        let x = random_batch(4, 32, 0);
        for dir in [Direction::Forward, Direction::Inverse] {
            let y = p.generate(&x, dir).unwrap();
            assert_eq!(y.shape(), &[4, 1, 32, 32]);
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let bad = random_batch(1, 16, 0);
        assert!(matches!(p.generate(&bad, Direction::Forward), Err(AiftError::Dimension { .. })));
    }

    #[test]
    fn untrained_round_trip_is_not_identity() {
        let p = small(3);
        let x = random_batch(2, 16, 1);
        let y = p.generate(&p.generate(&x, Direction::Forward).unwrap(), Direction::Inverse).unwrap();
        let dist: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(dist > 1e-3);
    }

    #[test]
    fn discriminator_outputs_are_open_unit_interval_per_sample() {
        let p = small(6);
        let x = random_batch(5, 16, 2);
        for domain in [Domain::Image, Domain::Frequency] {
            let o = p.discriminate(&x, domain).unwrap();
            assert_eq!(o.shape(), &[5, 1]);
            assert!(o.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn duplicated_sample_gets_duplicated_score() {
        let p = small(8);
        let x = random_batch(3, 16, 3);
        let mut dup = x.data().to_vec();
        dup[2 * 256..].copy_from_slice(&x.data()[..256]);
        let dup = Tensor::new(vec![3, 1, 16, 16], dup).unwrap();
        let o = p.discriminate(&dup, Domain::Image).unwrap();
        assert_eq!(o.data()[0], o.data()[2]);
        let y = p.generate(&dup, Direction::Inverse).unwrap();
        assert_eq!(&y.data()[..256], &y.data()[512..]);
    }

    #[test]
    fn names_are_unique_and_cover_all_tensors() {
        let p = small(0);
        let names: std::collections::BTreeSet<_> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        let count = p.generator.tensors().len() + p.discriminators.tensors().len();
        assert_eq!(names.len(), count);
        assert_eq!(count, 2 * (4 + 4 + 4 + 4 + 2));
    }
}
