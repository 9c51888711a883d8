//! Batch normalization and spectral normalization.

use super::graph::{Mode, Var};
use super::param::Buffer;
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Persistent batch-norm state: running statistics plus the fixed
/// normalization constants. `momentum` is the decay of the old running value
/// (`new = momentum * old + (1 - momentum) * batch`).
pub struct BnState<T: Element> {
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Element> BnState<T> {
    /// Fresh state for `channels` features: mean 0, variance 1.
    pub fn new(name_prefix: &str, channels: usize) -> Self {
        let shape = Shape::new(channels, 1, 1, 1);
        BnState {
            running_mean: Buffer::new(format!("{name_prefix}.running_mean"), Tensor::zeros(shape)),
            running_var: Buffer::new(
                format!("{name_prefix}.running_var"),
                Tensor::full(shape, T::one()),
            ),
            momentum: T::from_f64(0.9),
            eps: T::from_f64(1e-5),
        }
    }
}

impl<'g, T: Element> Var<'g, T> {
    /// Batch normalization over `(batch, height, width)` per channel.
    ///
    /// Training mode normalizes with batch statistics and, unless parameters
    /// are frozen, updates the running statistics in place. Eval mode uses
    /// the running statistics. `gamma`/`beta` are `(c, 1, 1, 1)`.
    pub fn batch_norm(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        state: &BnState<T>,
    ) -> Result<Var<'g, T>> {
        self.same_graph(&gamma);
        self.same_graph(&beta);
        let xs = self.shape();
        let cshape = Shape::new(xs.c, 1, 1, 1);
        gamma.value().expect_shape("batch_norm", cshape)?;
        beta.value().expect_shape("batch_norm", cshape)?;
        let train = self.graph().mode() == Mode::Train;
        if train && xs.n < 2 {
            return Err(Error::invalid(
                "batch_norm",
                format!("training mode requires batch >= 2, got {}", xs.n),
            ));
        }

        let xv = self.value();
        let per_channel = xs.n * xs.h * xs.w;
        let norm = T::from_usize(per_channel);
        let plane = xs.h * xs.w;

        // Per-channel mean/variance, from the batch or from running state.
        let (mean, var) = if train {
            let mut mean = vec![T::zero(); xs.c];
            let mut var = vec![T::zero(); xs.c];
            for c in 0..xs.c {
                let mut acc = T::zero();
                for n in 0..xs.n {
                    let base = (n * xs.c + c) * plane;
                    for &v in &xv.data()[base..base + plane] {
                        acc += v;
                    }
                }
                let mu = acc / norm;
                let mut acc2 = T::zero();
                for n in 0..xs.n {
                    let base = (n * xs.c + c) * plane;
                    for &v in &xv.data()[base..base + plane] {
                        let d = v - mu;
                        acc2 += d * d;
                    }
                }
                mean[c] = mu;
                var[c] = acc2 / norm;
            }
            if self.graph().update_persistent() {
                let m = state.momentum;
                let one_m = T::one() - m;
                let rm = state.running_mean.get();
                let rv = state.running_var.get();
                state.running_mean.set(Tensor::new(
                    cshape,
                    rm.data()
                        .iter()
                        .zip(&mean)
                        .map(|(&old, &new)| m * old + one_m * new)
                        .collect(),
                ));
                state.running_var.set(Tensor::new(
                    cshape,
                    rv.data()
                        .iter()
                        .zip(&var)
                        .map(|(&old, &new)| m * old + one_m * new)
                        .collect(),
                ));
            }
            (mean, var)
        } else {
            (
                state.running_mean.get().data().to_vec(),
                state.running_var.get().data().to_vec(),
            )
        };

        let istd: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();
        let gv = gamma.value();
        let bv = beta.value();

        let mut xhat = vec![T::zero(); xs.count()];
        let mut y = vec![T::zero(); xs.count()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                let base = (n * xs.c + c) * plane;
                let (mu, is) = (mean[c], istd[c]);
                let (ga, be) = (gv.data()[c], bv.data()[c]);
                for i in base..base + plane {
                    let xh = (xv.data()[i] - mu) * is;
                    xhat[i] = xh;
                    y[i] = ga * xh + be;
                }
            }
        }
        let xhat = Tensor::new(xs, xhat);

        let need_x = self.needs_grad();
        let need_g = gamma.needs_grad();
        let need_b = beta.needs_grad();
        let xhat_c = xhat.clone();
        Ok(self.graph().push_op(
            Tensor::new(xs, y),
            &[self, gamma, beta],
            Box::new(move |gout| {
                let gd = gout.data();
                // Channel sums of g and g*xhat, shared by all three grads.
                let mut sum_g = vec![T::zero(); xs.c];
                let mut sum_gx = vec![T::zero(); xs.c];
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        let base = (n * xs.c + c) * plane;
                        for i in base..base + plane {
                            sum_g[c] += gd[i];
                            sum_gx[c] += gd[i] * xhat_c.data()[i];
                        }
                    }
                }
                let dx = if need_x {
                    let mut dx = vec![T::zero(); xs.count()];
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            let base = (n * xs.c + c) * plane;
                            let k = gv.data()[c] * istd[c];
                            if train {
                                let mg = sum_g[c] / norm;
                                let mgx = sum_gx[c] / norm;
                                for i in base..base + plane {
                                    dx[i] = k * (gd[i] - mg - xhat_c.data()[i] * mgx);
                                }
                            } else {
                                for i in base..base + plane {
                                    dx[i] = k * gd[i];
                                }
                            }
                        }
                    }
                    Some(Tensor::new(xs, dx))
                } else {
                    None
                };
                let dgamma = if need_g {
                    Some(Tensor::new(cshape, sum_gx.clone()))
                } else {
                    None
                };
                let dbeta = if need_b {
                    Some(Tensor::new(cshape, sum_g.clone()))
                } else {
                    None
                };
                vec![dx, dgamma, dbeta]
            }),
        ))
    }

    /// Leading-singular-value estimate `u^T W v` with `u`, `v` held constant.
    /// Gradient w.r.t. the weight is the outer product `u v^T`.
    pub fn sn_sigma(self, u: &Tensor<T>, v: &Tensor<T>) -> Var<'g, T> {
        let ws = self.shape();
        let rows = ws.n;
        let cols = ws.count() / rows;
        assert_eq!(u.shape().count(), rows, "sn_sigma: u length");
        assert_eq!(v.shape().count(), cols, "sn_sigma: v length");
        let wv = self.value();
        let mut sigma = T::zero();
        for i in 0..rows {
            let mut acc = T::zero();
            for j in 0..cols {
                acc += wv.data()[i * cols + j] * v.data()[j];
            }
            sigma += u.data()[i] * acc;
        }
        let (uc, vc) = (u.clone(), v.clone());
        self.graph().push_op(
            Tensor::scalar(sigma),
            &[self],
            Box::new(move |g| {
                let gs = g.item();
                let mut dw = vec![T::zero(); rows * cols];
                for i in 0..rows {
                    let gu = gs * uc.data()[i];
                    for j in 0..cols {
                        dw[i * cols + j] = gu * vc.data()[j];
                    }
                }
                vec![Some(Tensor::new(ws, dw))]
            }),
        )
    }
}

/// Persistent power-iteration vectors for one spectrally-normalized weight.
pub struct SnState<T: Element> {
    pub u: Buffer<T>,
    pub v: Buffer<T>,
}

impl<T: Element> SnState<T> {
    pub fn new(name_prefix: &str, weight_shape: Shape) -> Self {
        let rows = weight_shape.n;
        let cols = weight_shape.count() / rows;
        let uniform = |len: usize| {
            let v = T::one() / T::from_usize(len).sqrt();
            Tensor::new(Shape::new(len, 1, 1, 1), vec![v; len])
        };
        SnState {
            u: Buffer::new(format!("{name_prefix}.sn_u"), uniform(rows)),
            v: Buffer::new(format!("{name_prefix}.sn_v"), uniform(cols)),
        }
    }

    /// Seat the vectors on a fresh weight: iterate until the singular-value
    /// estimate stabilizes (relative change below 1e-5, capped). Keeps the
    /// one-iteration-per-training-step estimate tight from the first step.
    pub fn warm_up(&self, w: &Tensor<T>) {
        let mut last = T::zero();
        for _ in 0..200 {
            self.power_iterate(w, 1);
            let sigma = self.estimate(w);
            if (sigma - last).abs() <= T::from_f64(1e-5) * sigma.abs().max(T::one()) {
                break;
            }
            last = sigma;
        }
    }

    /// `u^T W v` with the stored vectors.
    pub fn estimate(&self, w: &Tensor<T>) -> T {
        let cols = w.shape().count() / w.shape().n;
        let u = self.u.get();
        let v = self.v.get();
        let mut sigma = T::zero();
        for (i, ui) in u.data().iter().enumerate() {
            let row = &w.data()[i * cols..(i + 1) * cols];
            let mut acc = T::zero();
            for (vj, &wij) in v.data().iter().zip(row) {
                acc += wij * *vj;
            }
            sigma += *ui * acc;
        }
        sigma
    }

    /// Run `iters` power iterations on the weight value, updating the stored
    /// vectors in place, and return the updated pair.
    pub fn power_iterate(&self, w: &Tensor<T>, iters: usize) -> (Tensor<T>, Tensor<T>) {
        let ws = w.shape();
        let rows = ws.n;
        let cols = ws.count() / rows;
        let mut u = self.u.get().data().to_vec();
        let mut v = self.v.get().data().to_vec();
        for _ in 0..iters {
            // v = normalize(W^T u); u = normalize(W v). Both passes walk the
            // weight row-major.
            v.iter_mut().for_each(|x| *x = T::zero());
            for (i, ui) in u.iter().enumerate() {
                let row = &w.data()[i * cols..(i + 1) * cols];
                for (vj, &wij) in v.iter_mut().zip(row) {
                    *vj += wij * *ui;
                }
            }
            normalize(&mut v);
            for (i, ui) in u.iter_mut().enumerate() {
                let row = &w.data()[i * cols..(i + 1) * cols];
                let mut acc = T::zero();
                for (vj, &wij) in v.iter().zip(row) {
                    acc += wij * *vj;
                }
                *ui = acc;
            }
            normalize(&mut u);
        }
        let ut = Tensor::new(Shape::new(rows, 1, 1, 1), u);
        let vt = Tensor::new(Shape::new(cols, 1, 1, 1), v);
        self.u.set(ut.clone());
        self.v.set(vt.clone());
        (ut, vt)
    }
}

fn normalize<T: Element>(v: &mut [T]) {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm > T::from_f64(1e-20) {
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
}

/// Floor applied to the singular-value estimate before dividing.
pub const SN_SIGMA_FLOOR: f64 = 1e-12;

/// One-shot spectral normalization of a plain tensor: estimate the leading
/// singular value by `iters` power iterations from a fresh start and divide.
/// A zero weight yields a zero tensor (the estimate is floored).
pub fn spectral_normalize<T: Element>(w: &Tensor<T>, iters: usize) -> Tensor<T> {
    let sigma = spectral_sigma(w, iters);
    let floor = T::from_f64(SN_SIGMA_FLOOR);
    let denom = if sigma > floor { sigma } else { floor };
    w.scale(T::one() / denom)
}

/// Power-iteration estimate of the leading singular value of the
/// `(rows = out-channels) x rest` matrix view of `w`.
pub fn spectral_sigma<T: Element>(w: &Tensor<T>, iters: usize) -> T {
    let state = SnState::new("tmp", w.shape());
    let (u, v) = state.power_iterate(w, iters);
    let cols = w.shape().count() / w.shape().n;
    let mut sigma = T::zero();
    for i in 0..u.shape().count() {
        let mut acc = T::zero();
        for j in 0..cols {
            acc += w.data()[i * cols + j] * v.data()[j];
        }
        sigma += u.data()[i] * acc;
    }
    sigma
}
