use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    BatchNorm, Conv2d, Flatten, GlobalAvgPool, Layer, Linear, MaxPool, Mode, Param, Relu,
    ResidualBlock,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Channel schedule of the eight residual blocks.
pub const RESNET8_CHANNELS: [usize; 8] = [16, 16, 32, 32, 64, 64, 128, 128];
/// Number of 2x2 max-pool stages in MiniCNN.
pub const MINI_CNN_POOLS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Arch {
    MiniCnn,
    MiniResNet8,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::MiniCnn => "MiniCNN",
            Arch::MiniResNet8 => "MiniResNet8",
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Arch::MiniCnn => 0,
            Arch::MiniResNet8 => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Arch::MiniCnn),
            1 => Ok(Arch::MiniResNet8),
            t => Err(Error::Format(format!("unknown architecture tag {t}"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace(['-', '_'], "")
            .as_str()
        {
            "minicnn" => Ok(Arch::MiniCnn),
            "miniresnet8" | "miniresnet" => Ok(Arch::MiniResNet8),
            other => Err(Error::InvalidConfig(format!(
                "unknown architecture `{other}`"
            ))),
        }
    }
}

impl TryFrom<String> for Arch {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Arch> for String {
    fn from(a: Arch) -> String {
        a.name().to_string()
    }
}

/// An ordered stack of layers with optional feature taps.
///
/// `block_taps[i]` is the index of the layer after which the `i + 1`-th probe
/// feature map is read.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub arch: Option<Arch>,
    pub in_channels: usize,
    pub n_classes: usize,
    pub layers: Vec<Layer>,
    pub block_taps: Vec<usize>,
}

/// Builds one of the two reference architectures with seeded Kaiming init.
///
/// MiniCNN expects a spatial side divisible by 8; the Linear layer is sized
/// for `input_side`.
pub fn build_model(
    arch: Arch,
    in_channels: usize,
    n_classes: usize,
    input_side: usize,
    seed: u64,
) -> Result<ModelGraph> {
    if ![1, 8, 16].contains(&in_channels) {
        return Err(Error::UnsupportedChannels(in_channels));
    }
    if n_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut taps = Vec::new();
    match arch {
        Arch::MiniCnn => {
            let side = input_side >> MINI_CNN_POOLS;
            if side == 0 {
                return Err(Error::InvalidConfig(format!(
                    "MiniCNN needs inputs of at least 8 pixels, got {input_side}"
                )));
            }
            let mut ch = in_channels;
            for out in [16, 32, 64] {
                layers.push(Layer::Conv2d(Conv2d::new(ch, out, 3, 1, 1, true, &mut rng)));
                layers.push(Layer::Relu(Relu::default()));
                layers.push(Layer::MaxPool(MaxPool::default()));
                taps.push(layers.len() - 1);
                ch = out;
            }
            layers.push(Layer::Flatten(Flatten::default()));
            layers.push(Layer::Linear(Linear::new(64 * side * side, 128, &mut rng)));
            layers.push(Layer::Relu(Relu::default()));
            layers.push(Layer::Linear(Linear::new(128, n_classes, &mut rng)));
        }
        Arch::MiniResNet8 => {
            layers.push(Layer::Conv2d(Conv2d::new(
                in_channels,
                16,
                3,
                1,
                1,
                false,
                &mut rng,
            )));
            layers.push(Layer::BatchNorm(BatchNorm::new(16)));
            layers.push(Layer::Relu(Relu::default()));
            let mut ch = 16;
            for (i, &out) in RESNET8_CHANNELS.iter().enumerate() {
                let stride = if matches!(i + 1, 3 | 5 | 7) { 2 } else { 1 };
                layers.push(Layer::Residual(ResidualBlock::new(
                    ch, out, stride, &mut rng,
                )));
                taps.push(layers.len() - 1);
                ch = out;
            }
            layers.push(Layer::GlobalAvgPool(GlobalAvgPool::default()));
            layers.push(Layer::Linear(Linear::new(ch, n_classes, &mut rng)));
        }
    }
    Ok(ModelGraph {
        arch: Some(arch),
        in_channels,
        n_classes,
        layers,
        block_taps: taps,
    })
}

impl ModelGraph {
    /// A free-form stack, mostly for tests and toy problems.
    pub fn from_layers(layers: Vec<Layer>) -> Self {
        Self {
            arch: None,
            in_channels: 0,
            n_classes: 0,
            layers,
            block_taps: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Inference with running statistics; never mutates the model.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward_eval(&h)?;
        }
        Ok(h)
    }

    /// Eval-mode activations at every tap, in tap order.
    pub fn forward_taps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let last = match self.block_taps.last() {
            Some(&t) => t,
            None => return Ok(Vec::new()),
        };
        let mut out = Vec::with_capacity(self.block_taps.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate().take(last + 1) {
            h = layer.forward_eval(&h)?;
            if self.block_taps.contains(&i) {
                out.push(h.clone());
            }
        }
        Ok(out)
    }

    /// Eval-mode activation after the 1-based `block`.
    pub fn forward_to_tap(&self, x: &Tensor, block: usize) -> Result<Tensor> {
        let tap = self.tap_layer(block)?;
        let mut h = x.clone();
        for layer in &self.layers[..=tap] {
            h = layer.forward_eval(&h)?;
        }
        Ok(h)
    }

    pub fn tap_layer(&self, block: usize) -> Result<usize> {
        if block == 0 || block > self.block_taps.len() {
            return Err(Error::BadBlockIndex {
                index: block,
                available: self.block_taps.len(),
            });
        }
        Ok(self.block_taps[block - 1])
    }

    /// Back-propagates `grad` through the last train-mode forward, accumulating
    /// parameter gradients. Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Every persistent tensor in a fixed order: each layer's parameters, then
    /// its BatchNorm running mean and variance.
    pub fn state_tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for layer in &self.layers {
            v.extend(layer.params().into_iter().map(|p| &p.value));
            for bn in layer.batchnorms() {
                v.push(&bn.running_mean);
                v.push(&bn.running_var);
            }
        }
        v
    }

    /// Visits the tensors of [`Self::state_tensors`] mutably, in the same order.
    pub fn for_each_state_mut(
        &mut self,
        mut f: impl FnMut(&mut Tensor) -> Result<()>,
    ) -> Result<()> {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                f(&mut p.value)?;
            }
            for bn in layer.batchnorms_mut() {
                f(&mut bn.running_mean)?;
                f(&mut bn.running_var)?;
            }
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of every state tensor.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.state_tensors() {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}
