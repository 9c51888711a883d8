//! Spectral-normalized convolutional discriminator, instantiated twice
//! during training: one on full images, one on detail layers.
//!
//! Layout: a 3x3 stride-1 stem, four DisBlocks (each a channel-doubling
//! 4x4 stride-2 conv and a 3x3 stride-1 conv, both with batch norm and
//! LReLU 0.2), a 4x4 stride-2 tail conv, then two fully-connected layers
//! down to a single logit. Every conv and FC weight is spectrally
//! normalized; feature-matching taps come from the first LReLU of each
//! DisBlock.

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, SnConv, SnFc};
use crate::tensor::graph::{Graph, Var};
use crate::tensor::init::Prng;
use crate::tensor::param::ParamSet;
use crate::tensor::Element;

pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorConfig {
    /// Channels out of the stem conv; doubled by every DisBlock.
    pub base_channels: usize,
    /// Number of DisBlocks.
    pub blocks: usize,
    /// Expected square input side; must be divisible by 32.
    pub input_side: usize,
    /// Batch-normalize the final 1-wide logit layer (the printed
    /// architecture does; a switch exists for experiments).
    pub final_bn: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            base_channels: 32,
            blocks: 4,
            input_side: 160,
            final_bn: true,
        }
    }
}

impl DiscriminatorConfig {
    pub fn with_side(input_side: usize) -> Self {
        DiscriminatorConfig {
            input_side,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_side % 32 != 0 || self.input_side == 0 {
            return Err(Error::invalid(
                "discriminator_config",
                format!("input side {} not divisible by 32", self.input_side),
            ));
        }
        Ok(())
    }

    /// Channels after all DisBlocks (32 -> 512 for the default).
    fn top_channels(&self) -> usize {
        self.base_channels << self.blocks
    }

    /// Spatial side after the DisBlocks and tail conv.
    fn top_side(&self) -> usize {
        self.input_side >> (self.blocks + 1)
    }
}

pub struct DisBlock<T: Element> {
    down: SnConv<T>,
    down_bn: BatchNorm<T>,
    keep: SnConv<T>,
    keep_bn: BatchNorm<T>,
}

impl<T: Element> DisBlock<T> {
    pub fn new(set: &mut ParamSet<T>, name: &str, c_in: usize, rng: &mut Prng) -> Self {
        let c_out = 2 * c_in;
        DisBlock {
            down: SnConv::new(set, &format!("{name}.down"), c_in, c_out, 4, 2, 1, rng),
            down_bn: BatchNorm::new(set, &format!("{name}.down_bn"), c_out),
            keep: SnConv::new(set, &format!("{name}.keep"), c_out, c_out, 3, 1, 1, rng),
            keep_bn: BatchNorm::new(set, &format!("{name}.keep_bn"), c_out),
        }
    }

    /// Returns `(output, fm_tap)`; the tap is the first LReLU output.
    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let slope = T::from_f64(LRELU_SLOPE);
        let y = self.down_bn.forward(g, self.down.forward(g, x)?)?.lrelu(slope);
        let tap = y;
        let y = self.keep_bn.forward(g, self.keep.forward(g, y)?)?.lrelu(slope);
        Ok((y, tap))
    }
}

/// Per-batch-item logit plus the four feature-matching taps, ordered by
/// depth.
pub struct DiscriminatorOutput<'g, T: Element> {
    pub logit: Var<'g, T>,
    pub fm: Vec<Var<'g, T>>,
}

pub struct Discriminator<T: Element> {
    config: DiscriminatorConfig,
    params: ParamSet<T>,
    stem: SnConv<T>,
    blocks: Vec<DisBlock<T>>,
    tail: SnConv<T>,
    tail_bn: BatchNorm<T>,
    fc_mid: SnFc<T>,
    fc_mid_bn: BatchNorm<T>,
    fc_out: SnFc<T>,
    fc_out_bn: BatchNorm<T>,
}

impl<T: Element> Discriminator<T> {
    /// `name` namespaces the parameters ("d1" or "d2").
    pub fn new(name: &str, config: DiscriminatorConfig, rng: &mut Prng) -> Result<Self> {
        config.validate()?;
        let mut set = ParamSet::new();
        let c = config.base_channels;
        let stem = SnConv::new(&mut set, &format!("{name}.stem"), 3, c, 3, 1, 1, rng);
        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            blocks.push(DisBlock::new(
                &mut set,
                &format!("{name}.db{}", i + 1),
                c << i,
                rng,
            ));
        }
        let top = config.top_channels();
        let tail = SnConv::new(&mut set, &format!("{name}.tail"), top, top, 4, 2, 1, rng);
        let tail_bn = BatchNorm::new(&mut set, &format!("{name}.tail_bn"), top);
        let flat = top * config.top_side() * config.top_side();
        let fc_mid = SnFc::new(&mut set, &format!("{name}.fc_mid"), flat, 512, rng);
        let fc_mid_bn = BatchNorm::new(&mut set, &format!("{name}.fc_mid_bn"), 512);
        let fc_out = SnFc::new(&mut set, &format!("{name}.fc_out"), 512, 1, rng);
        let fc_out_bn = BatchNorm::new(&mut set, &format!("{name}.fc_out_bn"), 1);
        Ok(Discriminator {
            config,
            params: set,
            stem,
            blocks,
            tail,
            tail_bn,
            fc_mid,
            fc_mid_bn,
            fc_out,
            fc_out_bn,
        })
    }

    pub fn config(&self) -> DiscriminatorConfig {
        self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<DiscriminatorOutput<'g, T>> {
        let s = x.shape();
        if s.c != 3 || s.h != self.config.input_side || s.w != self.config.input_side {
            return Err(Error::shape(
                "discriminator_forward",
                format!("nx3x{side}x{side}", side = self.config.input_side),
                s,
            ));
        }
        let slope = T::from_f64(LRELU_SLOPE);
        let mut y = self.stem.forward(g, x)?.lrelu(slope);
        let mut fm = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, tap) = block.forward(g, y)?;
            y = out;
            fm.push(tap);
        }
        let y = self.tail_bn.forward(g, self.tail.forward(g, y)?)?.lrelu(slope);
        let y = self.fc_mid_bn.forward(g, self.fc_mid.forward(g, y)?)?;
        let mut logit = self.fc_out.forward(g, y)?;
        if self.config.final_bn {
            logit = self.fc_out_bn.forward(g, logit)?;
        }
        Ok(DiscriminatorOutput { logit, fm })
    }
}
