//! The three-subnet generator.
//!
//! The input LR SDR frame is split into base and detail layers by the guided
//! filter. The detail-restoration (DR) subnet predicts per-pixel separable
//! up-sampling kernels from the detail layer; the local-contrast-enhancement
//! (LCE) subnet predicts a dense 9x9 up-sampling kernel from the base layer
//! and squashes the filtered result into a (0, 2) contrast mask; the image
//! reconstruction (IR) subnet directly synthesizes a coarse HR HDR image from
//! the raw input plus the DR trunk features. The final prediction is
//! `P = (I + D) * C_l`, with no output clamp.

use crate::dynfilter::{
    dynamic_2d_upsample, dynamic_separable_upsample, LOCAL_SIDE, SEP_TAPS,
};
use crate::error::{Error, Result};
use crate::imagepipe::{decompose, DecompMode};
use crate::layers::{Conv, ResBlock};
use crate::tensor::graph::{Graph, Mode, Var};
use crate::tensor::init::Prng;
use crate::tensor::param::ParamSet;
use crate::tensor::{Element, Tensor};

/// Generator hyperparameters. The layer configuration (feature width 64,
/// four trunk ResBlocks per filter subnet, one head + three tail ResBlocks
/// in the IR subnet, 41-tap separable kernels, 9x9 local kernels) is fixed;
/// only the scale, decomposition mode and guided-filter constants vary.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorConfig {
    pub scale: usize,
    pub features: usize,
    pub decomposition: DecompMode,
    pub gf_radius: usize,
    pub gf_eps: f64,
}

impl GeneratorConfig {
    pub fn new(scale: usize) -> Result<Self> {
        if scale != 2 && scale != 4 {
            return Err(Error::invalid(
                "generator_config",
                format!("scale must be 2 or 4, got {scale}"),
            ));
        }
        Ok(GeneratorConfig {
            scale,
            features: 64,
            decomposition: DecompMode::Division,
            gf_radius: 5,
            gf_eps: 0.01,
        })
    }

    /// Channel count of each DR kernel head.
    pub fn dr_head_channels(&self) -> usize {
        SEP_TAPS * self.scale * self.scale
    }

    /// Channel count of the LCE kernel head.
    pub fn lce_head_channels(&self) -> usize {
        LOCAL_SIDE * LOCAL_SIDE * self.scale * self.scale
    }
}

/// Everything the generator produces for one input, kept as graph variables
/// so losses can differentiate through any of them.
pub struct GeneratorOutput<'g, T: Element> {
    /// Final HR HDR prediction `P = (I + D) * C_l`.
    pub prediction: Var<'g, T>,
    /// Coarse image `I` from the IR subnet.
    pub coarse: Var<'g, T>,
    /// Restored detail residual `D`.
    pub detail: Var<'g, T>,
    /// Contrast mask `C_l`, strictly inside (0, 2).
    pub mask: Var<'g, T>,
    /// Predicted vertical/horizontal separable kernel fields.
    pub vertical_field: Var<'g, T>,
    pub horizontal_field: Var<'g, T>,
    /// Predicted dense kernel field.
    pub local_field: Var<'g, T>,
}

/// Inference result as plain tensors.
pub struct InferenceOutput<T: Element> {
    pub prediction: Tensor<T>,
    pub coarse: Tensor<T>,
    pub detail: Tensor<T>,
    pub mask: Tensor<T>,
}

pub struct Generator<T: Element> {
    config: GeneratorConfig,
    params: ParamSet<T>,

    dr_entry: Conv<T>,
    dr_blocks: Vec<ResBlock<T>>,
    dr_head_v: Conv<T>,
    dr_head_h: Conv<T>,

    lce_entry: Conv<T>,
    lce_blocks: Vec<ResBlock<T>>,
    lce_head: Conv<T>,

    ir_entry: Conv<T>,
    ir_head_block: ResBlock<T>,
    ir_reduce: Conv<T>,
    ir_blocks: Vec<ResBlock<T>>,
    ir_up: Conv<T>,
    ir_out: Conv<T>,
}

impl<T: Element> Generator<T> {
    pub fn new(config: GeneratorConfig, rng: &mut Prng) -> Self {
        let mut set = ParamSet::new();
        let f = config.features;
        let ss = config.scale * config.scale;

        let dr_entry = Conv::new(&mut set, "g.dr.entry", 3, f, 3, 1, 1, rng);
        let dr_blocks = (1..=4)
            .map(|i| ResBlock::new(&mut set, &format!("g.dr.rb{i}"), f, rng))
            .collect();
        let dr_head_v = Conv::new(&mut set, "g.dr.head_v", f, config.dr_head_channels(), 3, 1, 1, rng);
        let dr_head_h = Conv::new(&mut set, "g.dr.head_h", f, config.dr_head_channels(), 3, 1, 1, rng);

        let lce_entry = Conv::new(&mut set, "g.lce.entry", 3, f, 3, 1, 1, rng);
        let lce_blocks = (1..=4)
            .map(|i| ResBlock::new(&mut set, &format!("g.lce.rb{i}"), f, rng))
            .collect();
        let lce_head = Conv::new(&mut set, "g.lce.head", f, config.lce_head_channels(), 3, 1, 1, rng);

        let ir_entry = Conv::new(&mut set, "g.ir.entry", 3, f, 3, 1, 1, rng);
        let ir_head_block = ResBlock::new(&mut set, "g.ir.rb0", f, rng);
        let ir_reduce = Conv::new(&mut set, "g.ir.reduce", 2 * f, f, 3, 1, 1, rng);
        let ir_blocks = (1..=3)
            .map(|i| ResBlock::new(&mut set, &format!("g.ir.rb{i}"), f, rng))
            .collect();
        let ir_up = Conv::new(&mut set, "g.ir.up", f, f * ss, 3, 1, 1, rng);
        let ir_out = Conv::new(&mut set, "g.ir.out", f, 3, 3, 1, 1, rng);

        Generator {
            config,
            params: set,
            dr_entry,
            dr_blocks,
            dr_head_v,
            dr_head_h,
            lce_entry,
            lce_blocks,
            lce_head,
            ir_entry,
            ir_head_block,
            ir_reduce,
            ir_blocks,
            ir_up,
            ir_out,
        }
    }

    pub fn config(&self) -> GeneratorConfig {
        self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// Exact count of learnable scalar values.
    pub fn param_count(&self) -> usize {
        self.params.count_scalars()
    }

    /// Shared DR trunk: entry conv, four ResBlocks, ReLU. The output is the
    /// 64-channel LR-resolution feature map tapped by the IR subnet.
    fn dr_trunk<'g>(&self, g: &'g Graph<T>, detail: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut y = self.dr_entry.forward(g, detail)?;
        for rb in &self.dr_blocks {
            y = rb.forward(g, y)?;
        }
        Ok(y.relu())
    }

    /// DR subnet: predict both separable kernel fields from the detail
    /// layer. Returns `(vertical, horizontal, i_dr)`.
    pub fn dr_subnet<'g>(
        &self,
        g: &'g Graph<T>,
        detail: Var<'g, T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>, Var<'g, T>)> {
        let i_dr = self.dr_trunk(g, detail)?;
        let vertical = self.dr_head_v.forward(g, i_dr)?;
        let horizontal = self.dr_head_h.forward(g, i_dr)?;
        Ok((vertical, horizontal, i_dr))
    }

    /// LCE kernel field predicted from the base layer.
    fn lce_field<'g>(&self, g: &'g Graph<T>, base: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut y = self.lce_entry.forward(g, base)?;
        for rb in &self.lce_blocks {
            y = rb.forward(g, y)?;
        }
        self.lce_head.forward(g, y.relu())
    }

    /// LCE subnet: contrast mask in (0, 2) from the base layer.
    pub fn lce_subnet<'g>(&self, g: &'g Graph<T>, base: Var<'g, T>) -> Result<Var<'g, T>> {
        let field = self.lce_field(g, base)?;
        Ok(apply_lce_mask(base, field, self.config.scale)?)
    }

    /// IR subnet: coarse HR HDR image from the raw input and the DR trunk
    /// features.
    pub fn ir_subnet<'g>(
        &self,
        g: &'g Graph<T>,
        x: Var<'g, T>,
        i_dr: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let i_ir = self.ir_head_block.forward(g, self.ir_entry.forward(g, x)?)?;
        let mut y = self.ir_reduce.forward(g, i_ir.concat_c(i_dr)?)?;
        for rb in &self.ir_blocks {
            y = rb.forward(g, y)?;
        }
        let y = self.ir_up.forward(g, y.relu())?.relu();
        let y = y.pixel_shuffle(self.config.scale)?;
        self.ir_out.forward(g, y)
    }

    /// Full forward pass on a normalized `(n, 3, h, w)` input.
    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<GeneratorOutput<'g, T>> {
        let parts = decompose(
            x,
            self.config.decomposition,
            self.config.gf_radius,
            T::from_f64(self.config.gf_eps),
        )?;
        let (vertical_field, horizontal_field, i_dr) = self.dr_subnet(g, parts.detail)?;
        let detail = dynamic_separable_upsample(
            parts.detail,
            vertical_field,
            horizontal_field,
            self.config.scale,
        )?;
        let local_field = self.lce_field(g, parts.base)?;
        let mask = apply_lce_mask(parts.base, local_field, self.config.scale)?;
        let coarse = self.ir_subnet(g, x, i_dr)?;
        let prediction = coarse.add(detail).mul(mask);
        Ok(GeneratorOutput {
            prediction,
            coarse,
            detail,
            mask,
            vertical_field,
            horizontal_field,
            local_field,
        })
    }

    /// Convenience: run one image (or batch) through a fresh frozen graph
    /// and return plain tensors.
    pub fn infer(&self, x: &Tensor<T>) -> Result<InferenceOutput<T>> {
        let g = Graph::new(Mode::Eval);
        g.set_params_frozen(true);
        let out = self.forward(&g, g.constant(x.clone()))?;
        Ok(InferenceOutput {
            prediction: out.prediction.value(),
            coarse: out.coarse.value(),
            detail: out.detail.value(),
            mask: out.mask.value(),
        })
    }
}

/// Dense filtering of the base layer followed by the scaled sigmoid that
/// centers the mask at 1 for a zero filter response.
fn apply_lce_mask<'g, T: Element>(
    base: Var<'g, T>,
    field: Var<'g, T>,
    scale: usize,
) -> Result<Var<'g, T>> {
    let filtered = dynamic_2d_upsample(base, field, scale)?;
    Ok(filtered.sigmoid().mul_scalar(T::from_f64(2.0)))
}

/// Analytic parameter count of the fixed configuration (used to cross-check
/// the constructed model).
pub fn analytic_param_count(scale: usize, features: usize) -> usize {
    let conv = |ci: usize, co: usize| co * ci * 9 + co;
    let rb = |w: usize| 2 * conv(w, w);
    let f = features;
    let ss = scale * scale;
    let dr = conv(3, f) + 4 * rb(f) + 2 * conv(f, SEP_TAPS * ss);
    let lce = conv(3, f) + 4 * rb(f) + conv(f, LOCAL_SIDE * LOCAL_SIDE * ss);
    let ir = conv(3, f) + rb(f) + conv(2 * f, f) + 3 * rb(f) + conv(f, f * ss) + conv(f, 3);
    dr + lce + ir
}
