//! Reusable network layers: plain and spectrally-normalized convolutions,
//! fully-connected layers, residual blocks and batch-norm wrappers. Each
//! layer owns named parameters registered into a [`ParamSet`].

use crate::error::Result;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::init::{conv_fans, fc_fans, xavier_uniform, Prng};
use crate::tensor::norm::{BnState, SnState, SN_SIGMA_FLOOR};
use crate::tensor::param::{Param, ParamSet};
use crate::tensor::{Element, Shape, Tensor};

/// 2-D convolution with Xavier-initialized weight and zero bias.
pub struct Conv<T: Element> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    stride: usize,
    pad: usize,
}

impl<T: Element> Conv<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        set: &mut ParamSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Prng,
    ) -> Self {
        let wshape = Shape::new(c_out, c_in, k, k);
        let (fan_in, fan_out) = conv_fans(wshape);
        let weight = set.register(Param::new(
            format!("{name}.weight"),
            xavier_uniform(wshape, fan_in, fan_out, rng),
        ));
        let bias = set.register(Param::new(
            format!("{name}.bias"),
            Tensor::zeros(Shape::new(c_out, 1, 1, 1)),
        ));
        Conv {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.conv2d(g.param(&self.weight), g.param(&self.bias), self.stride, self.pad)
    }
}

/// Residual block: ReLU, Conv, ReLU, Conv, plus the skip connection.
/// Width-preserving 3x3 convolutions.
pub struct ResBlock<T: Element> {
    conv1: Conv<T>,
    conv2: Conv<T>,
}

impl<T: Element> ResBlock<T> {
    pub fn new(set: &mut ParamSet<T>, name: &str, width: usize, rng: &mut Prng) -> Self {
        ResBlock {
            conv1: Conv::new(set, &format!("{name}.conv1"), width, width, 3, 1, 1, rng),
            conv2: Conv::new(set, &format!("{name}.conv2"), width, width, 3, 1, 1, rng),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let y = self.conv1.forward(g, x.relu())?;
        let y = self.conv2.forward(g, y.relu())?;
        Ok(y.add(x))
    }
}

/// Convolution whose weight is divided by its leading singular value
/// (estimated by power iteration with persistent vectors) before use.
pub struct SnConv<T: Element> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    sn: SnState<T>,
    stride: usize,
    pad: usize,
}

impl<T: Element> SnConv<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        set: &mut ParamSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Prng,
    ) -> Self {
        let wshape = Shape::new(c_out, c_in, k, k);
        let (fan_in, fan_out) = conv_fans(wshape);
        let weight = set.register(Param::new(
            format!("{name}.weight"),
            xavier_uniform(wshape, fan_in, fan_out, rng),
        ));
        let bias = set.register(Param::new(
            format!("{name}.bias"),
            Tensor::zeros(Shape::new(c_out, 1, 1, 1)),
        ));
        let sn = SnState::new(name, wshape);
        sn.warm_up(&weight.value());
        set.register_buffer(sn.u.clone());
        set.register_buffer(sn.v.clone());
        SnConv {
            weight,
            bias,
            sn,
            stride,
            pad,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        // Conv is linear, so x * (W/sigma) + b == (x * W)/sigma + b; scaling
        // the (much smaller) activation avoids materializing a scaled copy
        // of the weight every forward.
        let (w, inv_sigma) = sigma_scale(g, &self.weight, &self.sn);
        let zero = g.constant(Tensor::zeros(Shape::new(self.bias.shape().n, 1, 1, 1)));
        x.conv2d(w, zero, self.stride, self.pad)?
            .mul_bscalar(inv_sigma)
            .add_bias(g.param(&self.bias))
    }
}

/// Fully-connected layer with spectral normalization.
pub struct SnFc<T: Element> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    sn: SnState<T>,
}

impl<T: Element> SnFc<T> {
    pub fn new(
        set: &mut ParamSet<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut Prng,
    ) -> Self {
        let wshape = Shape::new(out_features, in_features, 1, 1);
        let (fan_in, fan_out) = fc_fans(wshape);
        let weight = set.register(Param::new(
            format!("{name}.weight"),
            xavier_uniform(wshape, fan_in, fan_out, rng),
        ));
        let bias = set.register(Param::new(
            format!("{name}.bias"),
            Tensor::zeros(Shape::new(out_features, 1, 1, 1)),
        ));
        let sn = SnState::new(name, wshape);
        sn.warm_up(&weight.value());
        set.register_buffer(sn.u.clone());
        set.register_buffer(sn.v.clone());
        SnFc { weight, bias, sn }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (w, inv_sigma) = sigma_scale(g, &self.weight, &self.sn);
        let zero = g.constant(Tensor::zeros(Shape::new(self.bias.shape().n, 1, 1, 1)));
        x.fully_connected(w, zero)?
            .mul_bscalar(inv_sigma)
            .add_bias(g.param(&self.bias))
    }
}

/// Insert the raw weight plus `1 / max(sigma, floor)` into the graph. One
/// power iteration refreshes the persistent vectors per training step;
/// frozen or no-update forwards reuse the stored vectors, so repeated
/// evaluation is pure.
fn sigma_scale<'g, T: Element>(
    g: &'g Graph<T>,
    weight: &Param<T>,
    sn: &SnState<T>,
) -> (Var<'g, T>, Var<'g, T>) {
    let (u, v) = if g.update_persistent() {
        sn.power_iterate(&weight.value(), 1)
    } else {
        (sn.u.get(), sn.v.get())
    };
    let w = g.param(weight);
    let sigma = w.sn_sigma(&u, &v).clamp_min(T::from_f64(SN_SIGMA_FLOOR));
    let inv_sigma = g.constant(Tensor::scalar(T::one())).div(sigma);
    (w, inv_sigma)
}

/// Batch-norm layer: learnable gamma/beta plus running statistics.
pub struct BatchNorm<T: Element> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    state: BnState<T>,
}

impl<T: Element> BatchNorm<T> {
    pub fn new(set: &mut ParamSet<T>, name: &str, channels: usize) -> Self {
        let cshape = Shape::new(channels, 1, 1, 1);
        let gamma = set.register(Param::new(
            format!("{name}.gamma"),
            Tensor::full(cshape, T::one()),
        ));
        let beta = set.register(Param::new(format!("{name}.beta"), Tensor::zeros(cshape)));
        let state = BnState::new(name, channels);
        set.register_buffer(state.running_mean.clone());
        set.register_buffer(state.running_var.clone());
        BatchNorm { gamma, beta, state }
    }

    pub fn forward<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.batch_norm(g.param(&self.gamma), g.param(&self.beta), &self.state)
    }
}
