//! The DIDFuse encoder/decoder.
//!
//! Seven 3x3 convolution layers, each padding -> conv -> batch norm ->
//! activation. With base width W the channel plan is
//! 1->W, W->W, W->W (base, tanh), W->W (detail, tanh), 2W->W, W->W, W->1.
//! conv1 and conv7 use reflection padding, the rest zero padding; conv7 is
//! sigmoid, conv1/2/5/6 PReLU.
//!
//! The outputs of conv1 and conv2 are routed to the last and penultimate
//! decoder layers. By default the skips merge by element-wise addition, which
//! keeps the published channel plan intact; `SkipMode::Concat` instead
//! concatenates and widens conv6/conv7 input channels to 2W.

use crate::error::{Error, Result};
use crate::tensor::{r, Graph, Padding, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    PRelu,
    Tanh,
    Sigmoid,
}

/// How conv1/conv2 activations are merged into the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipMode {
    Add,
    Concat,
}

/// Structural variants used by the ablation experiments. `Full` is the
/// published architecture; the others drop the base path, the detail path,
/// collapse to a single-stream auto-encoder, or disable the skip connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchVariant {
    Full,
    NoBase,
    NoDetail,
    ClassicAe,
    NoSkip,
}

impl ArchVariant {
    pub fn has_base(self) -> bool {
        !matches!(self, ArchVariant::NoBase)
    }

    pub fn has_detail(self) -> bool {
        matches!(self, ArchVariant::Full | ArchVariant::NoBase | ArchVariant::NoSkip)
    }

    pub fn has_skips(self) -> bool {
        !matches!(self, ArchVariant::NoSkip)
    }
}

/// One padding + conv + batch norm + activation layer.
#[derive(Debug, Clone)]
pub struct ConvBlock<R> {
    pub kernel: Tensor<R>,
    pub bias: Tensor<R>,
    pub gamma: Tensor<R>,
    pub beta: Tensor<R>,
    pub running_mean: Vec<R>,
    pub running_var: Vec<R>,
    pub slope: Option<Tensor<R>>,
    pub padding: Padding,
    pub activation: Activation,
    bn_mom: f64,
    bn_eps: f64,
}

impl<R: Real> ConvBlock<R> {
    fn init(
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        padding: Padding,
        activation: Activation,
    ) -> Self {
        let fan_in = in_c * 9;
        let bound = (6.0 / fan_in as f64).sqrt();
        let kernel = Tensor::new(
            [out_c, in_c, 3, 3],
            (0..out_c * in_c * 9).map(|_| r::<R>(rng.gen_range(-bound..bound))).collect(),
        )
        .expect("kernel shape");
        ConvBlock {
            kernel,
            bias: Tensor::zeros([1, out_c, 1, 1]),
            gamma: Tensor::full([1, out_c, 1, 1], R::one()),
            beta: Tensor::zeros([1, out_c, 1, 1]),
            running_mean: vec![R::zero(); out_c],
            running_var: vec![R::one(); out_c],
            slope: match activation {
                Activation::PRelu => Some(Tensor::scalar(r::<R>(0.25))),
                _ => None,
            },
            padding,
            activation,
            bn_mom: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }
}

/// Tracked graph handles for one block's trainable tensors.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub kernel: Var,
    pub bias: Var,
    pub gamma: Var,
    pub beta: Var,
    pub slope: Option<Var>,
}

/// Graph handles for every trainable tensor, in checkpoint order.
#[derive(Debug, Clone)]
pub struct NetVars {
    blocks: Vec<(&'static str, BlockVars)>,
}

impl NetVars {
    pub fn block(&self, name: &str) -> &BlockVars {
        &self.blocks.iter().find(|(n, _)| *n == name).expect("known block name").1
    }

    /// (name, var) pairs in the same order as `NetworkParams::visit_params`.
    pub fn entries(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for (name, b) in &self.blocks {
            out.push((format!("{name}.kernel"), b.kernel));
            out.push((format!("{name}.bias"), b.bias));
            out.push((format!("{name}.gamma"), b.gamma));
            out.push((format!("{name}.beta"), b.beta));
            if let Some(s) = b.slope {
                out.push((format!("{name}.slope"), s));
            }
        }
        out
    }
}

/// Batch-norm mode; fusion and evaluation always run in eval mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Encoder output: base/detail feature maps plus the conv1/conv2 activations
/// retained for the decoder skips. Base or detail is absent under the
/// corresponding ablation variants.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub base: Option<Var>,
    pub detail: Option<Var>,
    pub skip1: Var,
    pub skip2: Var,
}

/// The ordered parameter set of the seven layers.
#[derive(Debug, Clone)]
pub struct NetworkParams<R> {
    pub width: usize,
    pub variant: ArchVariant,
    pub skip_mode: SkipMode,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub conv1: ConvBlock<R>,
    pub conv2: ConvBlock<R>,
    pub conv3: Option<ConvBlock<R>>,
    pub conv4: Option<ConvBlock<R>>,
    pub conv5: ConvBlock<R>,
    pub conv6: ConvBlock<R>,
    pub conv7: ConvBlock<R>,
}

/// (in, out) channel plan for the seven layers; `None` for absent layers.
pub fn channel_plan(
    width: usize,
    variant: ArchVariant,
    skip_mode: SkipMode,
) -> [Option<(usize, usize)>; 7] {
    let w = width;
    let streams = variant.has_base() as usize + variant.has_detail() as usize;
    let skip_in = |c: usize| {
        if variant.has_skips() && skip_mode == SkipMode::Concat {
            c + w
        } else {
            c
        }
    };
    [
        Some((1, w)),
        Some((w, w)),
        variant.has_base().then_some((w, w)),
        variant.has_detail().then_some((w, w)),
        Some((streams * w, w)),
        Some((skip_in(w), w)),
        Some((skip_in(w), 1)),
    ]
}

impl<R: Real> NetworkParams<R> {
    /// Fresh parameters: kernels from a fan-in-scaled uniform distribution
    /// (bound sqrt(6/fan_in)), biases zero, BN gamma 1 / beta 0, running
    /// stats (0, 1), PReLU slopes 0.25. Deterministic for a fixed seed.
    pub fn init(width: usize, seed: u64, variant: ArchVariant, skip_mode: SkipMode) -> Result<Self> {
        if width < 1 {
            return Err(Error::invalid("network width must be >= 1".to_string()));
        }
        let plan = channel_plan(width, variant, skip_mode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut block = |idx: usize, padding, activation| {
            let (i, o) = plan[idx].expect("present layer");
            ConvBlock::init(&mut rng, i, o, padding, activation)
        };
        Ok(NetworkParams {
            width,
            variant,
            skip_mode,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            conv1: block(0, Padding::Reflection, Activation::PRelu),
            conv2: block(1, Padding::Zero, Activation::PRelu),
            conv3: plan[2].map(|_| block(2, Padding::Zero, Activation::Tanh)),
            conv4: plan[3].map(|_| block(3, Padding::Zero, Activation::Tanh)),
            conv5: block(4, Padding::Zero, Activation::PRelu),
            conv6: block(5, Padding::Zero, Activation::PRelu),
            conv7: block(6, Padding::Reflection, Activation::Sigmoid),
        })
    }

    pub fn blocks(&self) -> Vec<(&'static str, &ConvBlock<R>)> {
        let mut out = vec![("conv1", &self.conv1), ("conv2", &self.conv2)];
        if let Some(b) = &self.conv3 {
            out.push(("conv3", b));
        }
        if let Some(b) = &self.conv4 {
            out.push(("conv4", b));
        }
        out.push(("conv5", &self.conv5));
        out.push(("conv6", &self.conv6));
        out.push(("conv7", &self.conv7));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut ConvBlock<R>)> {
        let mut out: Vec<(&'static str, &mut ConvBlock<R>)> =
            vec![("conv1", &mut self.conv1), ("conv2", &mut self.conv2)];
        if let Some(b) = self.conv3.as_mut() {
            out.push(("conv3", b));
        }
        if let Some(b) = self.conv4.as_mut() {
            out.push(("conv4", b));
        }
        out.push(("conv5", &mut self.conv5));
        out.push(("conv6", &mut self.conv6));
        out.push(("conv7", &mut self.conv7));
        out
    }

    /// Visit every trainable tensor in checkpoint order.
    pub fn visit_params(&self, mut f: impl FnMut(&str, &Tensor<R>)) {
        for (name, b) in self.blocks() {
            f(&format!("{name}.kernel"), &b.kernel);
            f(&format!("{name}.bias"), &b.bias);
            f(&format!("{name}.gamma"), &b.gamma);
            f(&format!("{name}.beta"), &b.beta);
            if let Some(s) = &b.slope {
                f(&format!("{name}.slope"), s);
            }
        }
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<R>)) {
        for (name, b) in self.blocks_mut() {
            f(&format!("{name}.kernel"), &mut b.kernel);
            f(&format!("{name}.bias"), &mut b.bias);
            f(&format!("{name}.gamma"), &mut b.gamma);
            f(&format!("{name}.beta"), &mut b.beta);
            if let Some(s) = b.slope.as_mut() {
                f(&format!("{name}.slope"), s);
            }
        }
    }

    /// Register every trainable tensor on the graph as tracked parameters.
    pub fn register(&self, g: &mut Graph<R>) -> NetVars {
        let mut blocks = Vec::new();
        for (name, b) in self.blocks() {
            blocks.push((
                name,
                BlockVars {
                    kernel: g.param(b.kernel.clone()),
                    bias: g.param(b.bias.clone()),
                    gamma: g.param(b.gamma.clone()),
                    beta: g.param(b.beta.clone()),
                    slope: b.slope.as_ref().map(|s| g.param(s.clone())),
                },
            ));
        }
        NetVars { blocks }
    }

    fn forward_block(
        block: &mut ConvBlock<R>,
        vars: &BlockVars,
        g: &mut Graph<R>,
        input: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let conv = g.conv3x3(input, vars.kernel, vars.bias, block.padding)?;
        let bn = g.batch_norm(
            conv,
            vars.gamma,
            vars.beta,
            &mut block.running_mean,
            &mut block.running_var,
            mode == BnMode::Train,
            r::<R>(block.bn_mom),
            r::<R>(block.bn_eps),
        )?;
        match block.activation {
            Activation::PRelu => g.prelu(bn, vars.slope.expect("prelu slope var")),
            Activation::Tanh => Ok(g.tanh(bn)),
            Activation::Sigmoid => Ok(g.sigmoid(bn)),
        }
    }

    /// Run the encoder: x1 = conv1(img), x2 = conv2(x1), base = conv3(x2),
    /// detail = conv4(x2). x1/x2 are retained as the decoder skips.
    pub fn encode(
        &mut self,
        g: &mut Graph<R>,
        vars: &NetVars,
        image: Var,
        mode: BnMode,
    ) -> Result<Features> {
        let [_, c, h, w] = g.shape(image);
        if c != 1 {
            return Err(Error::shape(format!("encoder expects 1 input channel, got {c}")));
        }
        if h < 2 || w < 2 {
            return Err(Error::invalid(format!("encoder needs h,w >= 2, got {h}x{w}")));
        }
        self.stash_bn_hyper();
        let x1 = Self::forward_block(&mut self.conv1, vars.block("conv1"), g, image, mode)?;
        let x2 = Self::forward_block(&mut self.conv2, vars.block("conv2"), g, x1, mode)?;
        let base = match self.conv3.as_mut() {
            Some(b) => Some(Self::forward_block(b, vars.block("conv3"), g, x2, mode)?),
            None => None,
        };
        let detail = match self.conv4.as_mut() {
            Some(b) => Some(Self::forward_block(b, vars.block("conv4"), g, x2, mode)?),
            None => None,
        };
        Ok(Features { base, detail, skip1: x1, skip2: x2 })
    }

    /// Run the decoder on a feature set (from the encoder, or with fused
    /// maps and skips injected at test time).
    pub fn decode(
        &mut self,
        g: &mut Graph<R>,
        vars: &NetVars,
        feats: &Features,
        mode: BnMode,
    ) -> Result<Var> {
        self.stash_bn_hyper();
        let merged = match (feats.base, feats.detail) {
            (Some(b), Some(d)) => g.concat_channels(b, d)?,
            (Some(b), None) => b,
            (None, Some(d)) => d,
            (None, None) => {
                return Err(Error::invalid("decode needs at least one feature map".to_string()))
            }
        };
        if g.shape(merged)[1] != self.conv5.in_channels() {
            return Err(Error::shape(format!(
                "decoder expects {} merged channels, got {}",
                self.conv5.in_channels(),
                g.shape(merged)[1]
            )));
        }
        let y5 = Self::forward_block(&mut self.conv5, vars.block("conv5"), g, merged, mode)?;
        let y6_in = self.apply_skip(g, y5, feats.skip2)?;
        let y6 = Self::forward_block(&mut self.conv6, vars.block("conv6"), g, y6_in, mode)?;
        let y7_in = self.apply_skip(g, y6, feats.skip1)?;
        Self::forward_block(&mut self.conv7, vars.block("conv7"), g, y7_in, mode)
    }

    fn apply_skip(&self, g: &mut Graph<R>, x: Var, skip: Var) -> Result<Var> {
        if !self.variant.has_skips() {
            return Ok(x);
        }
        match self.skip_mode {
            SkipMode::Add => g.add(x, skip),
            SkipMode::Concat => g.concat_channels(x, skip),
        }
    }

    /// Encoder followed by the decoder; returns both the reconstruction and
    /// the feature set for loss computation.
    pub fn reconstruct(
        &mut self,
        g: &mut Graph<R>,
        vars: &NetVars,
        image: Var,
        mode: BnMode,
    ) -> Result<(Var, Features)> {
        let feats = self.encode(g, vars, image, mode)?;
        let out = self.decode(g, vars, &feats, mode)?;
        Ok((out, feats))
    }

    // Batch-norm hyperparameters live on the network, not per block; copy
    // them into the blocks before a forward pass so forward_block can stay
    // a free-standing borrow of a single block.
    fn stash_bn_hyper(&mut self) {
        let (mom, eps) = (self.bn_momentum, self.bn_eps);
        for (_, b) in self.blocks_mut() {
            b.bn_mom = mom;
            b.bn_eps = eps;
        }
    }
}
