//! Convolution and fully-connected layers, lowered to GEMM via im2col.
//!
//! The whole batch shares one GEMM call per layer (columns of the im2col
//! matrix are grouped by sample), so large weight matrices are packed once
//! regardless of batch size. All loops run in a fixed order; results are
//! bit-identical across runs.

use super::gemm::{matmul, matmul_at, matmul_bt_acc};
use super::graph::Var;
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

struct ConvGeom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.ci * self.k * self.k
    }

    /// Output positions per sample.
    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Columns of the batched im2col matrix.
    fn total_cols(&self) -> usize {
        self.n * self.cols()
    }
}

/// Gather one sample's patches into the column block
/// `[col0, col0 + oh*ow)` of a `(ci*k*k) x total_cols` matrix.
/// Out-of-bounds taps stay zero (zero padding).
fn im2col_into<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T], col0: usize) {
    let stride_cols = g.total_cols();
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * stride_cols + col0;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if g.stride == 1 {
                        // Contiguous span: ix = ox + kx - pad within [0, w).
                        let ox_lo = g.pad.saturating_sub(kx);
                        let ox_hi = (g.w + g.pad - kx).min(g.ow);
                        if ox_lo < ox_hi {
                            let ix_lo = ox_lo + kx - g.pad;
                            dst[ox_lo..ox_hi]
                                .copy_from_slice(&src_row[ix_lo..ix_lo + (ox_hi - ox_lo)]);
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn im2col_all<T: Element>(x: &Tensor<T>, g: &ConvGeom) -> Vec<T> {
    let mut cols = vec![T::zero(); g.rows() * g.total_cols()];
    let sample = g.ci * g.h * g.w;
    for i in 0..g.n {
        im2col_into(&x.data()[i * sample..(i + 1) * sample], g, &mut cols, i * g.cols());
    }
    cols
}

/// Adjoint of [`im2col_into`]: scatter-add a column block back onto one
/// sample's image.
fn col2im_from<T: Element>(cols: &[T], g: &ConvGeom, x: &mut [T], col0: usize) {
    let stride_cols = g.total_cols();
    for c in 0..g.ci {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * stride_cols + col0;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src = &cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// im2col buffers above this element count switch stride-1 convolutions to
/// the direct path below, trading GEMM efficiency for a zero-copy sweep.
const DIRECT_CONV_ELEMS: usize = 16 * 1024 * 1024;

/// Forward im2col buffers at or below this element count are kept alive for
/// the weight-gradient GEMM instead of being rebuilt in backward.
const CACHE_COLS_ELEMS: usize = 16 * 1024 * 1024;

fn use_direct(g: &ConvGeom) -> bool {
    g.stride == 1 && g.rows() * g.total_cols() > DIRECT_CONV_ELEMS
}

/// Valid output-row/column range for a kernel offset `d = k_idx - pad` so
/// that `o + d` stays inside `[0, len)` (stride 1).
fn valid_range(d: isize, out_len: usize, in_len: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (in_len as isize - d).clamp(0, out_len as isize) as usize;
    (lo, hi.max(lo))
}

/// Direct stride-1 convolution: accumulate shifted input rows scaled by one
/// weight at a time. No intermediate buffer.
fn conv_forward_direct<T: Element>(x: &Tensor<T>, w: &Tensor<T>, g: &ConvGeom, out: &mut [T]) {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    for i in 0..g.n {
        for ci in 0..g.ci {
            let xplane = &x.data()[(i * g.ci + ci) * plane_in..(i * g.ci + ci + 1) * plane_in];
            for ky in 0..g.k {
                let dy = ky as isize - g.pad as isize;
                let (oy_lo, oy_hi) = valid_range(dy, g.oh, g.h);
                for kx in 0..g.k {
                    let dx = kx as isize - g.pad as isize;
                    let (ox_lo, ox_hi) = valid_range(dx, g.ow, g.w);
                    if oy_lo >= oy_hi || ox_lo >= ox_hi {
                        continue;
                    }
                    for co in 0..g.co {
                        let wv = w.data()[((co * g.ci + ci) * g.k + ky) * g.k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let oplane =
                            &mut out[(i * g.co + co) * plane_out..(i * g.co + co + 1) * plane_out];
                        for oy in oy_lo..oy_hi {
                            let iy = (oy as isize + dy) as usize;
                            let ix = (ox_lo as isize + dx) as usize;
                            let irow = &xplane[iy * g.w + ix..iy * g.w + ix + (ox_hi - ox_lo)];
                            let orow = &mut oplane[oy * g.ow + ox_lo..oy * g.ow + ox_hi];
                            for (o, &v) in orow.iter_mut().zip(irow) {
                                *o += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Direct input gradient: the adjoint scatter of [`conv_forward_direct`].
fn conv_dx_direct<T: Element>(gout: &[T], w: &Tensor<T>, g: &ConvGeom, dx: &mut [T]) {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    for i in 0..g.n {
        for ci in 0..g.ci {
            let xplane = &mut dx[(i * g.ci + ci) * plane_in..(i * g.ci + ci + 1) * plane_in];
            for ky in 0..g.k {
                let dy = ky as isize - g.pad as isize;
                let (oy_lo, oy_hi) = valid_range(dy, g.oh, g.h);
                for kx in 0..g.k {
                    let dx_off = kx as isize - g.pad as isize;
                    let (ox_lo, ox_hi) = valid_range(dx_off, g.ow, g.w);
                    if oy_lo >= oy_hi || ox_lo >= ox_hi {
                        continue;
                    }
                    for co in 0..g.co {
                        let wv = w.data()[((co * g.ci + ci) * g.k + ky) * g.k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let oplane =
                            &gout[(i * g.co + co) * plane_out..(i * g.co + co + 1) * plane_out];
                        for oy in oy_lo..oy_hi {
                            let iy = (oy as isize + dy) as usize;
                            let ix = (ox_lo as isize + dx_off) as usize;
                            let irow = &mut xplane[iy * g.w + ix..iy * g.w + ix + (ox_hi - ox_lo)];
                            let orow = &oplane[oy * g.ow + ox_lo..oy * g.ow + ox_hi];
                            for (x, &o) in irow.iter_mut().zip(orow) {
                                *x += wv * o;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Direct weight gradient: dot products of output-gradient rows with
/// shifted input rows.
fn conv_dw_direct<T: Element>(gout: &[T], x: &Tensor<T>, g: &ConvGeom, dw: &mut [T]) {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    for i in 0..g.n {
        for ci in 0..g.ci {
            let xplane = &x.data()[(i * g.ci + ci) * plane_in..(i * g.ci + ci + 1) * plane_in];
            for ky in 0..g.k {
                let dy = ky as isize - g.pad as isize;
                let (oy_lo, oy_hi) = valid_range(dy, g.oh, g.h);
                for kx in 0..g.k {
                    let dx = kx as isize - g.pad as isize;
                    let (ox_lo, ox_hi) = valid_range(dx, g.ow, g.w);
                    if oy_lo >= oy_hi || ox_lo >= ox_hi {
                        continue;
                    }
                    for co in 0..g.co {
                        let oplane =
                            &gout[(i * g.co + co) * plane_out..(i * g.co + co + 1) * plane_out];
                        let mut acc = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = (oy as isize + dy) as usize;
                            let ix = (ox_lo as isize + dx) as usize;
                            let irow = &xplane[iy * g.w + ix..iy * g.w + ix + (ox_hi - ox_lo)];
                            let orow = &oplane[oy * g.ow + ox_lo..oy * g.ow + ox_hi];
                            for (&o, &v) in orow.iter().zip(irow) {
                                acc += o * v;
                            }
                        }
                        dw[((co * g.ci + ci) * g.k + ky) * g.k + kx] += acc;
                    }
                }
            }
        }
    }
}

/// `(n, co, oh, ow)` tensor data <-> `(co, n*oh*ow)` matrix with sample-major
/// column blocks.
fn scatter_to_nchw<T: Element>(mat: &[T], g: &ConvGeom, out: &mut [T]) {
    let cols = g.cols();
    let total = g.total_cols();
    for i in 0..g.n {
        for c in 0..g.co {
            let src = &mat[c * total + i * cols..c * total + (i + 1) * cols];
            let dst = &mut out[(i * g.co + c) * cols..(i * g.co + c + 1) * cols];
            dst.copy_from_slice(src);
        }
    }
}

fn gather_from_nchw<T: Element>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.cols();
    let total = g.total_cols();
    let mut mat = vec![T::zero(); g.co * total];
    for i in 0..g.n {
        for c in 0..g.co {
            let src = &x[(i * g.co + c) * cols..(i * g.co + c + 1) * cols];
            mat[c * total + i * cols..c * total + (i + 1) * cols].copy_from_slice(src);
        }
    }
    mat
}

/// Forward pass; returns the output and, when worth keeping, the im2col
/// buffer for reuse by the weight gradient.
fn conv_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    g: &ConvGeom,
    keep_cols: bool,
) -> (Tensor<T>, Option<Vec<T>>) {
    let out_shape = Shape::new(g.n, g.co, g.oh, g.ow);
    let mut out = vec![T::zero(); out_shape.count()];
    let mut kept = None;
    if use_direct(g) {
        conv_forward_direct(x, w, g, &mut out);
    } else {
        let cols = im2col_all(x, g);
        let mut out_mat = vec![T::zero(); g.co * g.total_cols()];
        matmul(g.co, g.rows(), g.total_cols(), w.data(), &cols, &mut out_mat);
        scatter_to_nchw(&out_mat, g, &mut out);
        if keep_cols && cols.len() <= CACHE_COLS_ELEMS {
            kept = Some(cols);
        }
    }
    for i in 0..g.n {
        for c in 0..g.co {
            let bias = b.data()[c];
            let base = (i * g.co + c) * g.cols();
            for v in &mut out[base..base + g.cols()] {
                *v += bias;
            }
        }
    }
    (Tensor::new(out_shape, out), kept)
}

impl<'g, T: Element> Var<'g, T> {
    /// 2-D cross-correlation with zero padding.
    ///
    /// `weight` is `(c_out, c_in, k, k)`, `bias` is `(c_out, 1, 1, 1)`.
    /// Output spatial dims are `floor((d + 2*pad - k)/stride) + 1`.
    pub fn conv2d(
        self,
        weight: Var<'g, T>,
        bias: Var<'g, T>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g, T>> {
        self.same_graph(&weight);
        self.same_graph(&bias);
        let xs = self.shape();
        let ws = weight.shape();
        if ws.h != ws.w {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel must be square, got {}x{}", ws.h, ws.w),
            ));
        }
        if xs.c != ws.c {
            return Err(Error::shape("conv2d", format!("input channels {}", ws.c), xs));
        }
        bias.value().expect_shape("conv2d", Shape::new(ws.n, 1, 1, 1))?;
        if stride < 1 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        let k = ws.h;
        if xs.h + 2 * padding < k || xs.w + 2 * padding < k {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {k} exceeds padded input {}x{}", xs.h, xs.w),
            ));
        }
        let geom = ConvGeom {
            n: xs.n,
            ci: xs.c,
            h: xs.h,
            w: xs.w,
            co: ws.n,
            k,
            stride,
            pad: padding,
            oh: (xs.h + 2 * padding - k) / stride + 1,
            ow: (xs.w + 2 * padding - k) / stride + 1,
        };
        let xv = self.value();
        let wv = weight.value();
        let need_x = self.needs_grad();
        let need_w = weight.needs_grad();
        let need_b = bias.needs_grad();
        let (out, cached_cols) = conv_forward(&xv, &wv, &bias.value(), &geom, need_w);

        Ok(self.graph().push_op(
            out,
            &[self, weight, bias],
            Box::new(move |gout| {
                let rows = geom.rows();
                let total = geom.total_cols();
                let direct = use_direct(&geom);

                let dx = if need_x {
                    let mut dx = vec![T::zero(); xv.shape().count()];
                    if direct {
                        conv_dx_direct(gout.data(), &wv, &geom, &mut dx);
                    } else {
                        let gmat = gather_from_nchw(gout.data(), &geom);
                        let mut dcols = vec![T::zero(); rows * total];
                        matmul_at(rows, geom.co, total, wv.data(), &gmat, &mut dcols);
                        let sample = geom.ci * geom.h * geom.w;
                        for i in 0..geom.n {
                            col2im_from(
                                &dcols,
                                &geom,
                                &mut dx[i * sample..(i + 1) * sample],
                                i * geom.cols(),
                            );
                        }
                    }
                    Some(Tensor::new(xv.shape(), dx))
                } else {
                    None
                };

                let dw = if need_w {
                    let mut dw = vec![T::zero(); wv.shape().count()];
                    if direct {
                        conv_dw_direct(gout.data(), &xv, &geom, &mut dw);
                    } else {
                        let gmat = gather_from_nchw(gout.data(), &geom);
                        match &cached_cols {
                            Some(cols) => {
                                matmul_bt_acc(geom.co, total, rows, &gmat, cols, &mut dw, T::zero())
                            }
                            None => {
                                let cols = im2col_all(&xv, &geom);
                                matmul_bt_acc(geom.co, total, rows, &gmat, &cols, &mut dw, T::zero())
                            }
                        }
                    }
                    Some(Tensor::new(wv.shape(), dw))
                } else {
                    None
                };

                let db = if need_b {
                    let mut db = vec![T::zero(); geom.co];
                    let plane = geom.cols();
                    for i in 0..geom.n {
                        for (c, slot) in db.iter_mut().enumerate() {
                            let base = (i * geom.co + c) * plane;
                            let mut acc = T::zero();
                            for &v in &gout.data()[base..base + plane] {
                                acc += v;
                            }
                            *slot += acc;
                        }
                    }
                    Some(Tensor::new(Shape::new(geom.co, 1, 1, 1), db))
                } else {
                    None
                };

                vec![dx, dw, db]
            }),
        ))
    }

    /// Affine map on flattened samples: `y = x_flat @ W^T + b`.
    ///
    /// `weight` is `(out, in, 1, 1)` with `in = c*h*w` of the input.
    pub fn fully_connected(self, weight: Var<'g, T>, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&weight);
        self.same_graph(&bias);
        let xs = self.shape();
        let ws = weight.shape();
        let features = xs.c * xs.h * xs.w;
        if ws.c != features || ws.h != 1 || ws.w != 1 {
            return Err(Error::shape(
                "fully_connected",
                format!("weight (out, {features}, 1, 1)"),
                ws,
            ));
        }
        bias.value()
            .expect_shape("fully_connected", Shape::new(ws.n, 1, 1, 1))?;
        let (n, out_f) = (xs.n, ws.n);
        let xv = self.value();
        let wv = weight.value();
        let bv = bias.value();

        let mut y = vec![T::zero(); n * out_f];
        matmul_bt_acc(n, features, out_f, xv.data(), wv.data(), &mut y, T::zero());
        for i in 0..n {
            for (o, yv) in y[i * out_f..(i + 1) * out_f].iter_mut().enumerate() {
                *yv += bv.data()[o];
            }
        }

        let need_x = self.needs_grad();
        let need_w = weight.needs_grad();
        let need_b = bias.needs_grad();
        Ok(self.graph().push_op(
            Tensor::new(Shape::new(n, out_f, 1, 1), y),
            &[self, weight, bias],
            Box::new(move |gout| {
                let gd = gout.data();
                let dx = if need_x {
                    let mut dx = vec![T::zero(); n * features];
                    matmul(n, out_f, features, gd, wv.data(), &mut dx);
                    Some(Tensor::new(xv.shape(), dx))
                } else {
                    None
                };
                let dw = if need_w {
                    let mut dw = vec![T::zero(); out_f * features];
                    matmul_at(out_f, n, features, gd, xv.data(), &mut dw);
                    Some(Tensor::new(wv.shape(), dw))
                } else {
                    None
                };
                let db = if need_b {
                    let mut db = vec![T::zero(); out_f];
                    for i in 0..n {
                        for (o, acc) in db.iter_mut().enumerate() {
                            *acc += gd[i * out_f + o];
                        }
                    }
                    Some(Tensor::new(Shape::new(out_f, 1, 1, 1), db))
                } else {
                    None
                };
                vec![dx, dw, db]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::graph::{Graph, Mode};
    use super::*;

    #[test]
    fn scalar_kernel_scales_input() {
        let g = Graph::<f64>::new(Mode::Train);
        let x = g.constant(Tensor::full(Shape::new(1, 1, 3, 3), 1.0));
        let w = g.constant(Tensor::new(Shape::new(1, 1, 1, 1), vec![2.0]));
        let b = g.constant(Tensor::zeros(Shape::new(1, 1, 1, 1)));
        let y = x.conv2d(w, b, 1, 0).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        assert!(y.value().data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let g = Graph::<f64>::new(Mode::Train);
        let xt = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, x| (y * 3 + x) as f64);
        let mut wk = vec![0.0; 9];
        wk[4] = 1.0;
        let x = g.constant(xt.clone());
        let w = g.constant(Tensor::new(Shape::new(1, 1, 3, 3), wk));
        let b = g.constant(Tensor::zeros(Shape::new(1, 1, 1, 1)));
        let y = x.conv2d(w, b, 1, 1).unwrap();
        assert_eq!(y.value().data(), xt.data());
    }

    #[test]
    fn conv_matches_naive_loops() {
        let g = Graph::<f64>::new(Mode::Train);
        let xt = Tensor::from_fn(Shape::new(2, 3, 6, 5), |n, c, y, x| {
            ((n * 7 + c * 5 + y * 3 + x) as f64 * 0.31).sin()
        });
        let wt = Tensor::from_fn(Shape::new(4, 3, 3, 3), |o, c, y, x| {
            ((o * 11 + c * 3 + y * 2 + x) as f64 * 0.17).cos()
        });
        let bt = Tensor::new(Shape::new(4, 1, 1, 1), vec![0.1, -0.2, 0.3, 0.0]);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let y = g
                .constant(xt.clone())
                .conv2d(g.constant(wt.clone()), g.constant(bt.clone()), stride, pad)
                .unwrap()
                .value();
            let ys = y.shape();
            // Direct definition.
            for n in 0..2 {
                for o in 0..4 {
                    for oy in 0..ys.h {
                        for ox in 0..ys.w {
                            let mut acc = bt.data()[o];
                            for c in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if iy >= 0 && iy < 6 && ix >= 0 && ix < 5 {
                                            acc += xt.at(n, c, iy as usize, ix as usize)
                                                * wt.at(o, c, ky, kx);
                                        }
                                    }
                                }
                            }
                            let got = y.at(n, o, oy, ox);
                            assert!(
                                (got - acc).abs() < 1e-12,
                                "stride {stride} pad {pad}: {got} vs {acc}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn direct_path_matches_gemm_path() {
        // The direct kernels only engage above a buffer threshold in
        // production; compare them against the im2col route explicitly.
        let geom = ConvGeom {
            n: 2,
            ci: 3,
            h: 7,
            w: 6,
            co: 4,
            k: 3,
            stride: 1,
            pad: 1,
            oh: 7,
            ow: 6,
        };
        let x = Tensor::from_fn(Shape::new(2, 3, 7, 6), |n, c, y, xx| {
            ((n * 31 + c * 17 + y * 5 + xx) as f64 * 0.23).sin()
        });
        let w = Tensor::from_fn(Shape::new(4, 3, 3, 3), |o, c, y, xx| {
            ((o * 13 + c * 7 + y * 3 + xx) as f64 * 0.19).cos()
        });
        let gout = Tensor::from_fn(Shape::new(2, 4, 7, 6), |n, c, y, xx| {
            ((n * 29 + c * 11 + y * 3 + xx) as f64 * 0.31).sin()
        });

        // Forward.
        let mut direct = vec![0.0; 2 * 4 * 42];
        conv_forward_direct(&x, &w, &geom, &mut direct);
        let cols = im2col_all(&x, &geom);
        let mut mat = vec![0.0; 4 * geom.total_cols()];
        matmul(4, geom.rows(), geom.total_cols(), w.data(), &cols, &mut mat);
        let mut via_gemm = vec![0.0; 2 * 4 * 42];
        scatter_to_nchw(&mat, &geom, &mut via_gemm);
        for (a, b) in direct.iter().zip(&via_gemm) {
            assert!((a - b).abs() < 1e-12);
        }

        // Input gradient.
        let mut dx_direct = vec![0.0; x.shape().count()];
        conv_dx_direct(gout.data(), &w, &geom, &mut dx_direct);
        let gmat = gather_from_nchw(gout.data(), &geom);
        let mut dcols = vec![0.0; geom.rows() * geom.total_cols()];
        matmul_at(geom.rows(), 4, geom.total_cols(), w.data(), &gmat, &mut dcols);
        let mut dx_gemm = vec![0.0; x.shape().count()];
        let sample = geom.ci * geom.h * geom.w;
        for i in 0..2 {
            col2im_from(&dcols, &geom, &mut dx_gemm[i * sample..(i + 1) * sample], i * geom.cols());
        }
        for (a, b) in dx_direct.iter().zip(&dx_gemm) {
            assert!((a - b).abs() < 1e-12);
        }

        // Weight gradient.
        let mut dw_direct = vec![0.0; w.shape().count()];
        conv_dw_direct(gout.data(), &x, &geom, &mut dw_direct);
        let mut dw_gemm = vec![0.0; w.shape().count()];
        matmul_bt_acc(4, geom.total_cols(), geom.rows(), &gmat, &cols, &mut dw_gemm, 0.0);
        for (a, b) in dw_direct.iter().zip(&dw_gemm) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let g = Graph::<f64>::new(Mode::Train);
        let x = g.constant(Tensor::zeros(Shape::new(1, 2, 4, 4)));
        let w = g.constant(Tensor::zeros(Shape::new(4, 3, 3, 3)));
        let b = g.constant(Tensor::zeros(Shape::new(4, 1, 1, 1)));
        let err = x.conv2d(w, b, 1, 1).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains('2'), "diagnostic: {err}");
    }

    #[test]
    fn fc_identity_weight_is_identity() {
        let g = Graph::<f64>::new(Mode::Train);
        let x = g.constant(Tensor::new(Shape::new(1, 3, 1, 1), vec![1.0, 2.0, 3.0]));
        let w = g.constant(Tensor::from_fn(Shape::new(3, 3, 1, 1), |o, i, _, _| {
            if o == i {
                1.0
            } else {
                0.0
            }
        }));
        let b = g.constant(Tensor::zeros(Shape::new(3, 1, 1, 1)));
        let y = x.fully_connected(w, b).unwrap();
        assert_eq!(y.value().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn fc_hand_example() {
        let g = Graph::<f64>::new(Mode::Train);
        let x = g.constant(Tensor::new(Shape::new(1, 2, 1, 1), vec![1.0, 2.0]));
        let w = g.constant(Tensor::new(Shape::new(1, 2, 1, 1), vec![1.0, 1.0]));
        let b = g.constant(Tensor::new(Shape::new(1, 1, 1, 1), vec![0.5]));
        let y = x.fully_connected(w, b).unwrap();
        assert_eq!(y.value().item(), 3.5);
    }

    #[test]
    fn fc_rejects_length_mismatch() {
        let g = Graph::<f64>::new(Mode::Train);
        let x = g.constant(Tensor::zeros(Shape::new(1, 4, 1, 1)));
        let w = g.constant(Tensor::zeros(Shape::new(2, 3, 1, 1)));
        let b = g.constant(Tensor::zeros(Shape::new(2, 1, 1, 1)));
        assert!(x.fully_connected(w, b).is_err());
    }
}
