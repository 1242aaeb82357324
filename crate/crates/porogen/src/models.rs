//! Generator and discriminator builders.
//!
//! The generator is a U-Net: the conditional input (value + mask channels) is
//! downsampled by stride-2 convolutions to a 1x1 code and upsampled back by
//! stride-2 transposed convolutions, with skip connections between symmetric
//! levels. The noise vector is spatially replicated and concatenated in front
//! of every encoder convolution. The discriminator stacks five convolutions
//! (strides 2,2,2,2,1) over the conditional channels plus the candidate image
//! and averages a sigmoid map into one probability.
//!
//! All resampling layers use kernel 4, stride 2, padding 1. Encoder and
//! discriminator activations are LeakyReLU, decoder activations ReLU, final
//! layers sigmoid. Instance norm follows each activation by default
//! (`ActThenNorm`); layers with 1x1 spatial extent skip normalization since a
//! single sample has no spread to standardize.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::grid::{BinaryImage, ConditionalInput, SoftImage};
use crate::tensornet::{
    read_checkpoint, write_checkpoint, CheckpointError, Gradients, Graph, Tensor, Var,
    INSTANCE_NORM_EPS,
};

const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid net config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint metadata has no usable net_config: {0}")]
    BadMetadata(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormActivationOrder {
    /// conv -> activation -> norm
    ActThenNorm,
    /// conv -> norm -> activation
    NormThenAct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub n_z: usize,
    pub max_channels: usize,
    pub leaky_slope: f64,
    pub norm_activation_order: NormActivationOrder,
    /// Encoder depth; `None` means the full `log2(image_size)` levels that
    /// reach a 1x1 bottleneck. Smaller values build reduced nets for tests.
    pub levels: Option<usize>,
}

impl NetConfig {
    pub fn new(image_size: usize) -> Self {
        Self {
            image_size,
            base_channels: 16,
            n_z: 8,
            max_channels: 128,
            leaky_slope: 0.2,
            norm_activation_order: NormActivationOrder::ActThenNorm,
            levels: None,
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
            .unwrap_or_else(|| self.image_size.trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |msg: String| Err(ModelError::InvalidConfig(msg));
        if !self.image_size.is_power_of_two() || !(16..=128).contains(&self.image_size) {
            return err(format!(
                "image_size {} must be a power of two in 16..=128",
                self.image_size
            ));
        }
        if self.n_z == 0 {
            return err("n_z must be at least 1".into());
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return err(format!(
                "bad channel plan: base {}, max {}",
                self.base_channels, self.max_channels
            ));
        }
        let max_levels = self.image_size.trailing_zeros() as usize;
        if self.levels() == 0 || self.levels() > max_levels {
            return err(format!(
                "levels {} out of range 1..={max_levels}",
                self.levels()
            ));
        }
        Ok(())
    }

    fn channel(&self, level: usize) -> usize {
        (self.base_channels << level).min(self.max_channels)
    }
}

/// One conv (or transposed conv) layer plus optional instance-norm affine
/// parameters.
#[derive(Debug, Clone)]
struct ConvBlock {
    w: Tensor,
    b: Tensor,
    norm: Option<(Tensor, Tensor)>,
}

impl ConvBlock {
    fn init(w_shape: &[usize], out_ch: usize, with_norm: bool, rng: &mut impl Rng) -> Self {
        Self {
            w: Tensor::randn(w_shape, INIT_STD, rng),
            b: Tensor::zeros(&[out_ch]),
            norm: with_norm.then(|| (Tensor::filled(&[out_ch], 1.0), Tensor::zeros(&[out_ch]))),
        }
    }

    fn push_named(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
        if let Some((gamma, beta)) = &self.norm {
            out.push((format!("{prefix}.gamma"), gamma.clone()));
            out.push((format!("{prefix}.beta"), beta.clone()));
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.w, &mut self.b];
        if let Some((gamma, beta)) = &mut self.norm {
            v.push(gamma);
            v.push(beta);
        }
        v
    }
}

struct BlockVars {
    w: Var,
    b: Var,
    norm: Option<(Var, Var)>,
}

fn bind_block(g: &mut Graph, block: &ConvBlock, trainable: bool) -> BlockVars {
    let mut leaf = |t: &Tensor| {
        if trainable {
            g.param(t.clone())
        } else {
            g.input(t.clone())
        }
    };
    BlockVars {
        w: leaf(&block.w),
        b: leaf(&block.b),
        norm: block.norm.as_ref().map(|(gm, bt)| (leaf(gm), leaf(bt))),
    }
}

fn block_vars(blocks: &mut Vec<Var>, vars: &BlockVars) {
    blocks.push(vars.w);
    blocks.push(vars.b);
    if let Some((gamma, beta)) = vars.norm {
        blocks.push(gamma);
        blocks.push(beta);
    }
}

enum Activation {
    Relu,
    LeakyRelu(f64),
}

fn act_norm(
    g: &mut Graph,
    x: Var,
    act: &Activation,
    norm: Option<(Var, Var)>,
    order: NormActivationOrder,
) -> Var {
    let apply_act = |g: &mut Graph, v: Var| match act {
        Activation::Relu => g.relu(v),
        Activation::LeakyRelu(slope) => g.leaky_relu(v, *slope),
    };
    match (order, norm) {
        (_, None) => apply_act(g, x),
        (NormActivationOrder::ActThenNorm, Some((gamma, beta))) => {
            let a = apply_act(g, x);
            g.instance_norm(a, gamma, beta, INSTANCE_NORM_EPS)
        }
        (NormActivationOrder::NormThenAct, Some((gamma, beta))) => {
            let n = g.instance_norm(x, gamma, beta, INSTANCE_NORM_EPS);
            apply_act(g, n)
        }
    }
}

/// Conditional input as a `(1, 2, H, W)` tensor: value channel then mask
/// channel.
pub fn cond_to_tensor(cond: &ConditionalInput) -> Tensor {
    let (w, h) = (cond.width(), cond.height());
    let mut data = Vec::with_capacity(2 * w * h);
    data.extend_from_slice(cond.values.data());
    data.extend(cond.mask.data().iter().map(|&b| b as u8 as f64));
    Tensor::new(&[1, 2, h, w], data)
}

/// Binary image as a `(1, 1, H, W)` tensor of 0/1 values.
pub fn binary_to_tensor(img: &BinaryImage) -> Tensor {
    Tensor::new(
        &[1, 1, img.height(), img.width()],
        img.data().iter().map(|&v| v as f64).collect(),
    )
}

#[derive(Clone)]
pub struct Generator {
    pub cfg: NetConfig,
    enc: Vec<ConvBlock>,
    dec: Vec<ConvBlock>,
}

/// Tape handles for one bound generator; create with [`Generator::bind`].
pub struct GeneratorVars {
    enc: Vec<BlockVars>,
    dec: Vec<BlockVars>,
    ordered: Vec<Var>,
}

pub fn build_generator(cfg: &NetConfig, rng: &mut impl Rng) -> Result<Generator, ModelError> {
    cfg.validate()?;
    let levels = cfg.levels();
    let mut enc = Vec::with_capacity(levels);
    let mut in_ch = 2usize;
    for i in 0..levels {
        let out_ch = cfg.channel(i);
        let spatial_out = cfg.image_size >> (i + 1);
        enc.push(ConvBlock::init(
            &[out_ch, in_ch + cfg.n_z, KERNEL, KERNEL],
            out_ch,
            spatial_out > 1,
            rng,
        ));
        in_ch = out_ch;
    }
    // decoder blocks ordered from the bottleneck up
    let mut dec = Vec::with_capacity(levels);
    for j in (1..=levels).rev() {
        let in_ch = if j == levels {
            cfg.channel(levels - 1)
        } else {
            2 * cfg.channel(j - 1)
        };
        let out_ch = if j == 1 { 1 } else { cfg.channel(j - 2) };
        dec.push(ConvBlock::init(
            &[in_ch, out_ch, KERNEL, KERNEL],
            out_ch,
            j > 1,
            rng,
        ));
    }
    Ok(Generator { cfg: *cfg, enc, dec })
}

impl Generator {
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.enc.iter().enumerate() {
            b.push_named(&format!("gen.enc{i}"), &mut out);
        }
        for (i, b) in self.dec.iter().enumerate() {
            b.push_named(&format!("gen.dec{i}"), &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.enc {
            out.extend(b.tensors_mut());
        }
        for b in &mut self.dec {
            out.extend(b.tensors_mut());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Registers all parameters on a tape, as trackable params or frozen
    /// inputs.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> GeneratorVars {
        let mut ordered = Vec::new();
        let enc = self
            .enc
            .iter()
            .map(|b| {
                let v = bind_block(g, b, trainable);
                block_vars(&mut ordered, &v);
                v
            })
            .collect();
        let dec = self
            .dec
            .iter()
            .map(|b| {
                let v = bind_block(g, b, trainable);
                block_vars(&mut ordered, &v);
                v
            })
            .collect();
        GeneratorVars { enc, dec, ordered }
    }
}

impl GeneratorVars {
    /// Gradients in the order of [`Generator::params_mut`]; zeros where the
    /// loss did not touch a parameter.
    pub fn collect_grads(&self, g: &Graph, grads: &Gradients) -> Vec<Tensor> {
        self.ordered
            .iter()
            .map(|&v| grads.get_or_zeros(v, g.value(v).shape()))
            .collect()
    }

    /// Forward pass on the tape: `(1, 2, H, W)` conditional node plus a noise
    /// vector node to a `(1, 1, H, W)` soft output in (0, 1).
    pub fn forward(&self, g: &mut Graph, cfg: &NetConfig, cond: Var, noise: Var) -> Var {
        let levels = cfg.levels();
        assert_eq!(
            g.value(cond).shape(),
            &[1, 2, cfg.image_size, cfg.image_size],
            "conditional input does not match the configured image size"
        );
        let mut skips = Vec::with_capacity(levels);
        let mut x = cond;
        for block in &self.enc {
            let with_noise = g.replicate_and_concat(x, noise);
            let conv = g.conv2d(with_noise, block.w, block.b, STRIDE, PAD);
            x = act_norm(
                g,
                conv,
                &Activation::LeakyRelu(cfg.leaky_slope),
                block.norm,
                cfg.norm_activation_order,
            );
            skips.push(x);
        }
        let mut d = x;
        for (idx, block) in self.dec.iter().enumerate() {
            let j = levels - idx; // decoder level, counting down to 1
            let up = g.conv_transpose2d(d, block.w, block.b, STRIDE, PAD);
            if j > 1 {
                let activated = act_norm(
                    g,
                    up,
                    &Activation::Relu,
                    block.norm,
                    cfg.norm_activation_order,
                );
                d = g.concat_channels(activated, skips[j - 2]);
            } else {
                return g.sigmoid(up);
            }
        }
        unreachable!("decoder always terminates at level 1")
    }
}

/// Convenience forward pass outside any training loop.
pub fn generator_forward(gen: &Generator, cond: &ConditionalInput, z: &[f64]) -> SoftImage {
    assert_eq!(z.len(), gen.cfg.n_z, "noise vector must have n_z entries");
    let mut g = Graph::new();
    let vars = gen.bind(&mut g, false);
    let cond_var = g.input(cond_to_tensor(cond));
    let noise = g.input(Tensor::new(&[z.len()], z.to_vec()));
    let out = vars.forward(&mut g, &gen.cfg, cond_var, noise);
    let t = g.value(out);
    let (_, _, h, w) = t.dims4();
    SoftImage::new(w, h, t.data().to_vec())
}

#[derive(Clone)]
pub struct Discriminator {
    pub cfg: NetConfig,
    layers: Vec<ConvBlock>,
}

pub struct DiscriminatorVars {
    layers: Vec<BlockVars>,
    ordered: Vec<Var>,
}

/// Discriminator strides. Five layers at 2,2,2,2,1 for the regular image
/// sizes; 16px test images cannot absorb four halvings, so they fall back to
/// 2,2,1,1,1.
fn disc_strides(image_size: usize) -> [usize; 5] {
    if image_size >= 32 {
        [2, 2, 2, 2, 1]
    } else {
        [2, 2, 1, 1, 1]
    }
}

pub fn build_discriminator(cfg: &NetConfig, rng: &mut impl Rng) -> Result<Discriminator, ModelError> {
    cfg.validate()?;
    // five layers, channels base*{1,2,4,8} then 1
    let mut layers = Vec::with_capacity(5);
    let mut in_ch = 3usize;
    for i in 0..4 {
        let out_ch = cfg.channel(i);
        layers.push(ConvBlock::init(
            &[out_ch, in_ch, KERNEL, KERNEL],
            out_ch,
            true,
            rng,
        ));
        in_ch = out_ch;
    }
    layers.push(ConvBlock::init(&[1, in_ch, KERNEL, KERNEL], 1, false, rng));
    Ok(Discriminator { cfg: *cfg, layers })
}

impl Discriminator {
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.layers.iter().enumerate() {
            b.push_named(&format!("disc.l{i}"), &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|b| b.tensors_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> DiscriminatorVars {
        let mut ordered = Vec::new();
        let layers = self
            .layers
            .iter()
            .map(|b| {
                let v = bind_block(g, b, trainable);
                block_vars(&mut ordered, &v);
                v
            })
            .collect();
        DiscriminatorVars { layers, ordered }
    }
}

impl DiscriminatorVars {
    pub fn collect_grads(&self, g: &Graph, grads: &Gradients) -> Vec<Tensor> {
        self.ordered
            .iter()
            .map(|&v| grads.get_or_zeros(v, g.value(v).shape()))
            .collect()
    }

    /// Probability node for a (conditional, candidate image) pair. `image`
    /// must be a `(1, 1, H, W)` node, real or generated.
    pub fn forward(&self, g: &mut Graph, cfg: &NetConfig, cond: Var, image: Var) -> Var {
        let mut x = g.concat_channels(cond, image);
        let strides = disc_strides(cfg.image_size);
        let last = self.layers.len() - 1;
        for (i, block) in self.layers.iter().enumerate() {
            let conv = g.conv2d(x, block.w, block.b, strides[i], PAD);
            if i == last {
                let prob_map = g.sigmoid(conv);
                return g.mean(prob_map);
            }
            x = act_norm(
                g,
                conv,
                &Activation::LeakyRelu(cfg.leaky_slope),
                block.norm,
                cfg.norm_activation_order,
            );
        }
        unreachable!("discriminator has at least one layer")
    }
}

/// Plain-value discriminator probability.
pub fn discriminator_forward(
    disc: &Discriminator,
    cond: &ConditionalInput,
    img: &BinaryImage,
) -> f64 {
    let mut g = Graph::new();
    let vars = disc.bind(&mut g, false);
    let cond_var = g.input(cond_to_tensor(cond));
    let img_var = g.input(binary_to_tensor(img));
    let out = vars.forward(&mut g, &disc.cfg, cond_var, img_var);
    g.value(out).item()
}

// ----- checkpoint glue ----------------------------------------------------------

/// Writes both networks and the net config into one checkpoint file.
pub fn save_models(
    path: &Path,
    gen: &Generator,
    disc: &Discriminator,
    extra_meta: serde_json::Value,
) -> Result<(), ModelError> {
    let meta = serde_json::json!({
        "net_config": gen.cfg,
        "extra": extra_meta,
    });
    let mut tensors = gen.named_params();
    tensors.extend(disc.named_params());
    let borrowed: Vec<(String, &Tensor)> =
        tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_checkpoint(path, &meta, &borrowed)?;
    Ok(())
}

fn fill_from_checkpoint(
    expected: Vec<(String, Tensor)>,
    stored: &[(String, Tensor)],
    assign: &mut dyn FnMut(usize, Tensor),
) -> Result<(), ModelError> {
    for (idx, (name, template)) in expected.into_iter().enumerate() {
        let found = stored
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
        if found.1.shape() != template.shape() {
            return Err(ModelError::ShapeMismatch {
                name,
                expected: template.shape().to_vec(),
                found: found.1.shape().to_vec(),
            });
        }
        assign(idx, found.1.clone());
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_models`]; the discriminator is
/// optional for inference-only uses.
pub fn load_models(path: &Path) -> Result<(Generator, Discriminator, serde_json::Value), ModelError> {
    let (meta, stored) = read_checkpoint(path)?;
    let cfg: NetConfig = serde_json::from_value(
        meta.get("net_config")
            .cloned()
            .ok_or_else(|| ModelError::BadMetadata("missing net_config key".into()))?,
    )
    .map_err(|e| ModelError::BadMetadata(e.to_string()))?;
    let mut seed_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut gen = build_generator(&cfg, &mut seed_rng)?;
    let mut disc = build_discriminator(&cfg, &mut seed_rng)?;
    {
        let expected = gen.named_params();
        let mut slots = gen.params_mut();
        fill_from_checkpoint(expected, &stored, &mut |idx, t| *slots[idx] = t)?;
    }
    {
        let expected = disc.named_params();
        let mut slots = disc.params_mut();
        fill_from_checkpoint(expected, &stored, &mut |idx, t| *slots[idx] = t)?;
    }
    let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
    Ok((gen, disc, extra))
}

use rand::SeedableRng;
