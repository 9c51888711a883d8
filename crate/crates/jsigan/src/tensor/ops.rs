//! Differentiable operations on graph variables: elementwise maps, scalar
//! broadcasts, reductions, pixel shuffling, channel concatenation and the
//! replicate-boundary box mean that the guided filter builds on.
//!
//! Convolution-style layers live in [`super::conv`], normalization in
//! [`super::norm`].

use super::graph::Var;
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

impl<'g, T: Element> Var<'g, T> {
    fn unary(self, value: Tensor<T>, dfn: impl Fn(&Tensor<T>) -> Tensor<T> + 'static) -> Self {
        self.graph().push_op(
            value,
            &[self],
            Box::new(move |g| vec![Some(dfn(g))]),
        )
    }

    pub fn relu(self) -> Self {
        let x = self.value();
        let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.unary(y, move |g| {
            g.zip(&x, |gv, xv| if xv > T::zero() { gv } else { T::zero() })
        })
    }

    pub fn lrelu(self, slope: T) -> Self {
        let x = self.value();
        let y = x.map(|v| if v > T::zero() { v } else { slope * v });
        self.unary(y, move |g| {
            g.zip(&x, |gv, xv| if xv > T::zero() { gv } else { slope * gv })
        })
    }

    pub fn sigmoid(self) -> Self {
        let y = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        let yc = y.clone();
        self.unary(y, move |g| {
            g.zip(&yc, |gv, yv| gv * yv * (T::one() - yv))
        })
    }

    /// `max(x, k)` elementwise; gradient passes only where `x > k`.
    pub fn clamp_min(self, k: T) -> Self {
        let x = self.value();
        let y = x.map(|v| if v > k { v } else { k });
        self.unary(y, move |g| {
            g.zip(&x, |gv, xv| if xv > k { gv } else { T::zero() })
        })
    }

    pub fn add_scalar(self, k: T) -> Self {
        let y = self.value().map(|v| v + k);
        self.unary(y, |g| g.clone())
    }

    pub fn mul_scalar(self, k: T) -> Self {
        let y = self.value().scale(k);
        self.unary(y, move |g| g.scale(k))
    }

    /// `k - x`.
    pub fn rsub_scalar(self, k: T) -> Self {
        let y = self.value().map(|v| k - v);
        self.unary(y, |g| g.scale(-T::one()))
    }

    fn binary(
        self,
        other: Self,
        op: &'static str,
        value: Tensor<T>,
        dfn: impl Fn(&Tensor<T>) -> (Option<Tensor<T>>, Option<Tensor<T>>) + 'static,
    ) -> Self {
        self.same_graph(&other);
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op}: shape mismatch {} vs {}",
            self.shape(),
            other.shape()
        );
        let la = self.needs_grad();
        let lb = other.needs_grad();
        self.graph().push_op(
            value,
            &[self, other],
            Box::new(move |g| {
                let (da, db) = dfn(g);
                vec![
                    if la { da } else { None },
                    if lb { db } else { None },
                ]
            }),
        )
    }

    pub fn add(self, other: Self) -> Self {
        let v = self.value().add(&other.value());
        self.binary(other, "add", v, |g| (Some(g.clone()), Some(g.clone())))
    }

    pub fn sub(self, other: Self) -> Self {
        let v = self.value().sub(&other.value());
        self.binary(other, "sub", v, |g| {
            (Some(g.clone()), Some(g.scale(-T::one())))
        })
    }

    pub fn mul(self, other: Self) -> Self {
        let a = self.value();
        let b = other.value();
        let v = a.mul(&b);
        self.binary(other, "mul", v, move |g| {
            (Some(g.mul(&b)), Some(g.mul(&a)))
        })
    }

    /// Elementwise division `a / b`.
    pub fn div(self, other: Self) -> Self {
        let a = self.value();
        let b = other.value();
        let v = a.zip(&b, |x, y| x / y);
        self.binary(other, "div", v, move |g| {
            let da = g.zip(&b, |gv, bv| gv / bv);
            let db = g
                .zip(&a, |gv, av| gv * av)
                .zip(&b, |n, bv| -n / (bv * bv));
            (Some(da), Some(db))
        })
    }

    /// Multiply by a scalar graph variable (broadcast).
    pub fn mul_bscalar(self, s: Self) -> Self {
        self.same_graph(&s);
        assert!(s.shape().is_scalar(), "mul_bscalar: rhs must be scalar");
        let x = self.value();
        let sv = s.value().item();
        let v = x.scale(sv);
        let lx = self.needs_grad();
        let ls = s.needs_grad();
        self.graph().push_op(
            v,
            &[self, s],
            Box::new(move |g| {
                vec![
                    if lx { Some(g.scale(sv)) } else { None },
                    if ls { Some(Tensor::scalar(g.dot(&x))) } else { None },
                ]
            }),
        )
    }

    /// Subtract a scalar graph variable (broadcast): `x - s`.
    pub fn sub_bscalar(self, s: Self) -> Self {
        self.same_graph(&s);
        assert!(s.shape().is_scalar(), "sub_bscalar: rhs must be scalar");
        let sv = s.value().item();
        let v = self.value().map(|x| x - sv);
        let lx = self.needs_grad();
        let ls = s.needs_grad();
        self.graph().push_op(
            v,
            &[self, s],
            Box::new(move |g| {
                vec![
                    if lx { Some(g.clone()) } else { None },
                    if ls { Some(Tensor::scalar(-g.sum())) } else { None },
                ]
            }),
        )
    }

    /// Divide by a scalar graph variable (broadcast): `x / s`.
    pub fn div_bscalar(self, s: Self) -> Self {
        self.same_graph(&s);
        assert!(s.shape().is_scalar(), "div_bscalar: rhs must be scalar");
        let x = self.value();
        let sv = s.value().item();
        let v = x.scale(T::one() / sv);
        let lx = self.needs_grad();
        let ls = s.needs_grad();
        self.graph().push_op(
            v,
            &[self, s],
            Box::new(move |g| {
                vec![
                    if lx { Some(g.scale(T::one() / sv)) } else { None },
                    if ls {
                        Some(Tensor::scalar(-g.dot(&x) / (sv * sv)))
                    } else {
                        None
                    },
                ]
            }),
        )
    }

    pub fn sum_all(self) -> Self {
        let shape = self.shape();
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, move |g| Tensor::full(shape, g.item()))
    }

    pub fn mean_all(self) -> Self {
        let shape = self.shape();
        let count = T::from_usize(shape.count());
        let v = Tensor::scalar(self.value().sum() / count);
        self.unary(v, move |g| Tensor::full(shape, g.item() / count))
    }

    /// Mean squared error against another variable of the same shape.
    pub fn mse(self, other: Self) -> Self {
        let d = self.sub(other);
        d.mul(d).mean_all()
    }

    /// Rearrange `s*s` channel groups into an `s`-times larger spatial grid:
    /// `out(n, c, s*y + k/s, s*x + k%s) = in(n, c*s*s + k, y, x)`.
    pub fn pixel_shuffle(self, s: usize) -> Result<Self> {
        let shape = self.shape();
        if s == 0 || shape.c % (s * s) != 0 {
            return Err(Error::invalid(
                "pixel_shuffle",
                format!("channels {} not divisible by {}^2", shape.c, s),
            ));
        }
        let v = shuffle_forward(&self.value(), s);
        Ok(self.unary(v, move |g| unshuffle_forward(g, s)))
    }

    /// Exact inverse of [`Var::pixel_shuffle`].
    pub fn pixel_unshuffle(self, s: usize) -> Result<Self> {
        let shape = self.shape();
        if s == 0 || shape.h % s != 0 || shape.w % s != 0 {
            return Err(Error::invalid(
                "pixel_unshuffle",
                format!("spatial dims {}x{} not divisible by {}", shape.h, shape.w, s),
            ));
        }
        let v = unshuffle_forward(&self.value(), s);
        Ok(self.unary(v, move |g| shuffle_forward(g, s)))
    }

    /// Concatenate along the channel dimension.
    pub fn concat_c(self, other: Self) -> Result<Self> {
        self.same_graph(&other);
        let a = self.shape();
        let b = other.shape();
        if a.n != b.n || a.h != b.h || a.w != b.w {
            return Err(Error::shape("concat_c", a, b));
        }
        let av = self.value();
        let bv = other.value();
        let out_shape = Shape::new(a.n, a.c + b.c, a.h, a.w);
        let plane = a.h * a.w;
        let mut data = Vec::with_capacity(out_shape.count());
        for n in 0..a.n {
            data.extend_from_slice(&av.data()[n * a.c * plane..(n + 1) * a.c * plane]);
            data.extend_from_slice(&bv.data()[n * b.c * plane..(n + 1) * b.c * plane]);
        }
        let la = self.needs_grad();
        let lb = other.needs_grad();
        Ok(self.graph().push_op(
            Tensor::new(out_shape, data),
            &[self, other],
            Box::new(move |g| {
                let split = |c_take: usize, c_skip: usize, first: bool| {
                    let mut out = Vec::with_capacity(a.n * c_take * plane);
                    for n in 0..a.n {
                        let base = n * (a.c + b.c) * plane;
                        let start = if first { base } else { base + c_skip * plane };
                        out.extend_from_slice(&g.data()[start..start + c_take * plane]);
                    }
                    Tensor::new(Shape::new(a.n, c_take, a.h, a.w), out)
                };
                vec![
                    if la { Some(split(a.c, 0, true)) } else { None },
                    if lb { Some(split(b.c, a.c, false)) } else { None },
                ]
            }),
        ))
    }

    /// Add a per-channel bias `(c, 1, 1, 1)` broadcast over batch and space.
    pub fn add_bias(self, bias: Var<'g, T>) -> Result<Self> {
        self.same_graph(&bias);
        let xs = self.shape();
        bias.value().expect_shape("add_bias", Shape::new(xs.c, 1, 1, 1))?;
        let bv = bias.value();
        let plane = xs.h * xs.w;
        let xv = self.value();
        let mut out = xv.data().to_vec();
        for n in 0..xs.n {
            for c in 0..xs.c {
                let b = bv.data()[c];
                let base = (n * xs.c + c) * plane;
                for v in &mut out[base..base + plane] {
                    *v += b;
                }
            }
        }
        let need_x = self.needs_grad();
        let need_b = bias.needs_grad();
        Ok(self.graph().push_op(
            Tensor::new(xs, out),
            &[self, bias],
            Box::new(move |g| {
                let dx = if need_x { Some(g.clone()) } else { None };
                let db = if need_b {
                    let mut db = vec![T::zero(); xs.c];
                    for n in 0..xs.n {
                        for (c, slot) in db.iter_mut().enumerate() {
                            let base = (n * xs.c + c) * plane;
                            for &v in &g.data()[base..base + plane] {
                                *slot += v;
                            }
                        }
                    }
                    Some(Tensor::new(Shape::new(xs.c, 1, 1, 1), db))
                } else {
                    None
                };
                vec![dx, db]
            }),
        ))
    }

    /// Replicate-boundary box mean over a `(2r+1)^2` window, per channel.
    pub fn box_mean(self, radius: usize) -> Result<Self> {
        let shape = self.shape();
        if radius == 0 {
            return Err(Error::invalid("box_mean", "radius must be >= 1"));
        }
        if radius > shape.h / 2 || radius > shape.w / 2 {
            return Err(Error::invalid(
                "box_mean",
                format!(
                    "radius {} larger than half the image side ({}x{})",
                    radius, shape.h, shape.w
                ),
            ));
        }
        let v = box_mean_forward(&self.value(), radius);
        Ok(self.unary(v, move |g| box_mean_adjoint(g, radius)))
    }
}

pub(crate) fn shuffle_forward<T: Element>(x: &Tensor<T>, s: usize) -> Tensor<T> {
    let sh = x.shape();
    let c_out = sh.c / (s * s);
    let out_shape = Shape::new(sh.n, c_out, sh.h * s, sh.w * s);
    let mut out = vec![T::zero(); out_shape.count()];
    let xd = x.data();
    for n in 0..sh.n {
        for c in 0..c_out {
            for k in 0..s * s {
                let cin = c * s * s + k;
                for y in 0..sh.h {
                    for xx in 0..sh.w {
                        let oy = s * y + k / s;
                        let ox = s * xx + k % s;
                        out[out_shape.offset(n, c, oy, ox)] = xd[sh.offset(n, cin, y, xx)];
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub(crate) fn unshuffle_forward<T: Element>(x: &Tensor<T>, s: usize) -> Tensor<T> {
    let sh = x.shape();
    let out_shape = Shape::new(sh.n, sh.c * s * s, sh.h / s, sh.w / s);
    let mut out = vec![T::zero(); out_shape.count()];
    let xd = x.data();
    for n in 0..sh.n {
        for c in 0..sh.c {
            for k in 0..s * s {
                let cout = c * s * s + k;
                for y in 0..out_shape.h {
                    for xx in 0..out_shape.w {
                        let iy = s * y + k / s;
                        let ix = s * xx + k % s;
                        out[out_shape.offset(n, cout, y, xx)] = xd[sh.offset(n, c, iy, ix)];
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// One clamped 1-D window-sum pass along an axis of a single plane.
fn box1d_rows<T: Element>(src: &[T], h: usize, w: usize, r: usize, dst: &mut [T]) {
    // Sum over horizontal window with clamp-to-edge indexing.
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut dst[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for d in 0..=2 * r {
                let xi = (x + d).saturating_sub(r).min(w - 1);
                acc += row[xi];
            }
            *o = acc;
        }
    }
}

fn box1d_cols<T: Element>(src: &[T], h: usize, w: usize, r: usize, dst: &mut [T]) {
    for y in 0..h {
        let out = &mut dst[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for d in 0..=2 * r {
                let yi = (y + d).saturating_sub(r).min(h - 1);
                acc += src[yi * w + x];
            }
            *o = acc;
        }
    }
}

fn box1d_rows_adjoint<T: Element>(g: &[T], h: usize, w: usize, r: usize, dst: &mut [T]) {
    for y in 0..h {
        let grow = &g[y * w..(y + 1) * w];
        let out = &mut dst[y * w..(y + 1) * w];
        for (x, &gv) in grow.iter().enumerate() {
            for d in 0..=2 * r {
                let xi = (x + d).saturating_sub(r).min(w - 1);
                out[xi] += gv;
            }
        }
    }
}

fn box1d_cols_adjoint<T: Element>(g: &[T], h: usize, w: usize, r: usize, dst: &mut [T]) {
    for y in 0..h {
        let grow = &g[y * w..(y + 1) * w];
        for (x, &gv) in grow.iter().enumerate() {
            for d in 0..=2 * r {
                let yi = (y + d).saturating_sub(r).min(h - 1);
                dst[yi * w + x] += gv;
            }
        }
    }
}

pub(crate) fn box_mean_forward<T: Element>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let sh = x.shape();
    let plane = sh.h * sh.w;
    let win = T::from_usize((2 * r + 1) * (2 * r + 1));
    let mut out = vec![T::zero(); sh.count()];
    let mut tmp = vec![T::zero(); plane];
    for p in 0..sh.n * sh.c {
        let src = &x.data()[p * plane..(p + 1) * plane];
        box1d_rows(src, sh.h, sh.w, r, &mut tmp);
        let dst = &mut out[p * plane..(p + 1) * plane];
        box1d_cols(&tmp, sh.h, sh.w, r, dst);
        for v in dst.iter_mut() {
            *v = *v / win;
        }
    }
    Tensor::new(sh, out)
}

fn box_mean_adjoint<T: Element>(g: &Tensor<T>, r: usize) -> Tensor<T> {
    let sh = g.shape();
    let plane = sh.h * sh.w;
    let win = T::from_usize((2 * r + 1) * (2 * r + 1));
    let mut out = vec![T::zero(); sh.count()];
    let mut tmp = vec![T::zero(); plane];
    for p in 0..sh.n * sh.c {
        let src = &g.data()[p * plane..(p + 1) * plane];
        tmp.iter_mut().for_each(|v| *v = T::zero());
        box1d_cols_adjoint(src, sh.h, sh.w, r, &mut tmp);
        let dst = &mut out[p * plane..(p + 1) * plane];
        box1d_rows_adjoint(&tmp, sh.h, sh.w, r, dst);
        for v in dst.iter_mut() {
            *v = *v / win;
        }
    }
    Tensor::new(sh, out)
}

#[cfg(test)]
mod tests {
    use super::super::graph::{Graph, Mode};
    use super::super::param::Param;
    use super::*;

    #[test]
    fn lrelu_matches_stated_slope() {
        let g = Graph::<f64>::new(Mode::Train);
        let x = g.constant(Tensor::scalar(-1.0));
        assert_eq!(x.lrelu(0.2).value().item(), -0.2);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let g = Graph::<f64>::new(Mode::Train);
        let x = g.constant(Tensor::scalar(0.0));
        assert_eq!(x.sigmoid().value().item(), 0.5);
    }

    #[test]
    fn relu_gradient_is_step() {
        let g = Graph::<f64>::new(Mode::Train);
        for (xv, want) in [(2.0, 1.0), (-2.0, 0.0)] {
            let p = Param::new("x", Tensor::<f64>::scalar(xv));
            let loss = g.param(&p).relu().sum_all();
            g.backward(loss).unwrap();
            assert_eq!(p.grad().item(), want);
        }
    }

    #[test]
    fn grad_of_weighted_sum_is_the_weights() {
        // loss = sum(w ⊙ x) → grad(w) = x
        let g = Graph::<f64>::new(Mode::Train);
        let w = Param::new("w", Tensor::full(Shape::new(1, 1, 2, 2), 1.5));
        let xv = Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let loss = g.param(&w).mul(g.constant(xv.clone())).sum_all();
        g.backward(loss).unwrap();
        assert_eq!(w.grad().data(), xv.data());
    }

    #[test]
    fn pixel_shuffle_maps_channels_to_grid() {
        let g = Graph::<f64>::new(Mode::Train);
        let x = g.constant(Tensor::new(
            Shape::new(1, 4, 1, 1),
            vec![1.0, 2.0, 3.0, 4.0],
        ));
        let y = x.pixel_shuffle(2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pixel_shuffle_s1_is_identity() {
        let g = Graph::<f64>::new(Mode::Train);
        let t = Tensor::from_fn(Shape::new(2, 3, 2, 2), |n, c, y, x| {
            (n + 2 * c + 4 * y + 8 * x) as f64
        });
        let y = g.constant(t.clone()).pixel_shuffle(1).unwrap();
        assert_eq!(y.value().data(), t.data());
    }

    #[test]
    fn pixel_shuffle_rejects_indivisible_channels() {
        let g = Graph::<f64>::new(Mode::Train);
        let x = g.constant(Tensor::zeros(Shape::new(1, 3, 2, 2)));
        assert!(x.pixel_shuffle(2).is_err());
    }

    #[test]
    fn concat_then_backward_splits() {
        let g = Graph::<f64>::new(Mode::Train);
        let a = Param::new("a", Tensor::full(Shape::new(1, 1, 1, 2), 1.0));
        let b = Param::new("b", Tensor::full(Shape::new(1, 2, 1, 2), 2.0));
        let cat = g.param(&a).concat_c(g.param(&b)).unwrap();
        assert_eq!(cat.shape(), Shape::new(1, 3, 1, 2));
        let loss = cat.mul_scalar(3.0).sum_all();
        g.backward(loss).unwrap();
        assert_eq!(a.grad().data(), &[3.0, 3.0]);
        assert_eq!(b.grad().data(), &[3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn box_mean_keeps_constants() {
        let g = Graph::<f64>::new(Mode::Train);
        let x = g.constant(Tensor::full(Shape::new(1, 1, 8, 8), 0.7));
        let y = x.box_mean(2).unwrap();
        for &v in y.value().data() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn box_mean_rejects_oversized_radius() {
        let g = Graph::<f64>::new(Mode::Train);
        let x = g.constant(Tensor::zeros(Shape::new(1, 1, 8, 8)));
        assert!(x.box_mean(5).is_err());
        assert!(x.box_mean(4).is_ok());
    }

    #[test]
    fn box_mean_matches_naive_window() {
        let t = Tensor::from_fn(Shape::new(1, 1, 7, 6), |_, _, y, x| {
            ((y * 31 + x * 17) as f64 * 0.37).sin()
        });
        let g = Graph::<f64>::new(Mode::Train);
        let got = g.constant(t.clone()).box_mean(2).unwrap().value();
        let sh = t.shape();
        for y in 0..sh.h {
            for x in 0..sh.w {
                let mut acc = 0.0;
                for dy in -2i64..=2 {
                    for dx in -2i64..=2 {
                        let yy = (y as i64 + dy).clamp(0, sh.h as i64 - 1) as usize;
                        let xx = (x as i64 + dx).clamp(0, sh.w as i64 - 1) as usize;
                        acc += t.at(0, 0, yy, xx);
                    }
                }
                assert!((got.at(0, 0, y, x) - acc / 25.0).abs() < 1e-12);
            }
        }
    }
}
