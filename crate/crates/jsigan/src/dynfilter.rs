//! Pixel-adaptive dynamic filtering with built-in up-sampling.
//!
//! A prediction network emits per-pixel kernel coefficients; these operations
//! apply them by local inner product. Two flavors exist: a separable pair of
//! 41-tap 1-D kernels (vertical first, then horizontal) and a dense 9x9 2-D
//! kernel. Both predict `scale*scale` kernel sets per pixel whose outputs are
//! pixel-shuffled into the up-scaled grid, and both share one predicted field
//! across all image channels.
//!
//! Boundary handling is replicate (clamp to edge). Coefficients are raw
//! linear weights: no softmax or sum-to-one normalization is applied.

use crate::error::{Error, Result};
use crate::tensor::graph::Var;
use crate::tensor::ops::{shuffle_forward, unshuffle_forward};
use crate::tensor::{Element, Shape, Tensor};

/// Tap count of the separable 1-D kernels.
pub const SEP_TAPS: usize = 41;
/// Center offset of the separable kernels.
pub const SEP_RADIUS: usize = 20;
/// Side of the dense 2-D kernel.
pub const LOCAL_SIDE: usize = 9;
/// Center offset of the dense kernel.
pub const LOCAL_RADIUS: usize = 4;

/// Per-pixel separable kernel pair with `scale*scale` up-sampling
/// sub-positions. Both fields are `(n, 41*s*s, h, w)`.
pub struct SeparableFilterField<T: Element> {
    pub vertical: Tensor<T>,
    pub horizontal: Tensor<T>,
    pub scale: usize,
}

impl<T: Element> SeparableFilterField<T> {
    pub fn new(vertical: Tensor<T>, horizontal: Tensor<T>, scale: usize) -> Result<Self> {
        let vs = vertical.shape();
        if horizontal.shape() != vs {
            return Err(Error::shape(
                "separable_filter_field",
                vs,
                horizontal.shape(),
            ));
        }
        if vs.c != SEP_TAPS * scale * scale {
            return Err(Error::invalid(
                "separable_filter_field",
                format!("want {} channels, got {}", SEP_TAPS * scale * scale, vs.c),
            ));
        }
        Ok(SeparableFilterField {
            vertical,
            horizontal,
            scale,
        })
    }
}

/// Per-pixel dense 9x9 kernel field, `(n, 81*s*s, h, w)`.
pub struct LocalFilterField2D<T: Element> {
    pub coeffs: Tensor<T>,
    pub scale: usize,
}

impl<T: Element> LocalFilterField2D<T> {
    pub fn new(coeffs: Tensor<T>, scale: usize) -> Result<Self> {
        let cs = coeffs.shape();
        if cs.c != LOCAL_SIDE * LOCAL_SIDE * scale * scale {
            return Err(Error::invalid(
                "local_filter_field_2d",
                format!(
                    "want {} channels, got {}",
                    LOCAL_SIDE * LOCAL_SIDE * scale * scale,
                    cs.c
                ),
            ));
        }
        Ok(LocalFilterField2D { coeffs, scale })
    }
}

fn validate_field(
    op: &'static str,
    x: Shape,
    field: Shape,
    taps: usize,
    s: usize,
) -> Result<()> {
    if s == 0 {
        return Err(Error::invalid(op, "scale must be >= 1"));
    }
    if field.n != x.n || field.h != x.h || field.w != x.w {
        return Err(Error::shape(
            op,
            format!("field {}x{}x{}x{}", x.n, taps * s * s, x.h, x.w),
            field,
        ));
    }
    if field.c != taps * s * s {
        return Err(Error::invalid(
            op,
            format!("field needs {} channels, got {}", taps * s * s, field.c),
        ));
    }
    Ok(())
}

/// Forward of the vertical stage: `t[c*ss+p, y, x] = sum_k in[c, clamp(y+k-R), x] * fv[taps*p+k, y, x]`.
fn vertical_stage<T: Element>(x: &Tensor<T>, fv: &Tensor<T>, ss: usize) -> Tensor<T> {
    let xs = x.shape();
    let out_shape = Shape::new(xs.n, xs.c * ss, xs.h, xs.w);
    let mut out = vec![T::zero(); out_shape.count()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            for p in 0..ss {
                for y in 0..xs.h {
                    for xx in 0..xs.w {
                        let mut acc = T::zero();
                        for k in 0..SEP_TAPS {
                            let yy = (y + k).saturating_sub(SEP_RADIUS).min(xs.h - 1);
                            acc += x.at(n, c, yy, xx) * fv.at(n, SEP_TAPS * p + k, y, xx);
                        }
                        out[out_shape.offset(n, c * ss + p, y, xx)] = acc;
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Forward of the horizontal stage on the vertically filtered intermediate,
/// which already carries per-sub-position channels.
fn horizontal_stage<T: Element>(t: &Tensor<T>, fh: &Tensor<T>, ss: usize) -> Tensor<T> {
    let ts = t.shape();
    let channels = ts.c / ss;
    let mut out = vec![T::zero(); ts.count()];
    for n in 0..ts.n {
        for c in 0..channels {
            for p in 0..ss {
                for y in 0..ts.h {
                    for xx in 0..ts.w {
                        let mut acc = T::zero();
                        for k in 0..SEP_TAPS {
                            let xi = (xx + k).saturating_sub(SEP_RADIUS).min(ts.w - 1);
                            acc += t.at(n, c * ss + p, y, xi) * fh.at(n, SEP_TAPS * p + k, y, xx);
                        }
                        out[ts.offset(n, c * ss + p, y, xx)] = acc;
                    }
                }
            }
        }
    }
    Tensor::new(ts, out)
}

/// Apply a predicted separable kernel pair per pixel and up-sample by `s`.
///
/// The vertical kernel filters first, the horizontal kernel consumes that
/// intermediate at the same sub-position, and the `s*s` sub-position outputs
/// pixel-shuffle into the `(n, c, s*h, s*w)` result. Differentiable w.r.t.
/// the input and both kernel fields.
pub fn dynamic_separable_upsample<'g, T: Element>(
    x: Var<'g, T>,
    vertical: Var<'g, T>,
    horizontal: Var<'g, T>,
    s: usize,
) -> Result<Var<'g, T>> {
    x.same_graph(&vertical);
    x.same_graph(&horizontal);
    let xs = x.shape();
    validate_field("dynamic_separable_upsample", xs, vertical.shape(), SEP_TAPS, s)?;
    validate_field(
        "dynamic_separable_upsample",
        xs,
        horizontal.shape(),
        SEP_TAPS,
        s,
    )?;
    let ss = s * s;
    let xv = x.value();
    let fv = vertical.value();
    let fh = horizontal.value();
    let t = vertical_stage(&xv, &fv, ss);
    let u = horizontal_stage(&t, &fh, ss);
    let out = shuffle_forward(&u, s);

    let need_x = x.needs_grad();
    let need_v = vertical.needs_grad();
    let need_h = horizontal.needs_grad();
    Ok(x.graph().push_op(
        out,
        &[x, vertical, horizontal],
        Box::new(move |gout| {
            let gu = unshuffle_forward(gout, s);
            let (h, w) = (xs.h, xs.w);
            let channels = xs.c;

            // Horizontal stage backward: fills dt always (needed by both
            // remaining grads) and dfh on demand.
            let mut dt = vec![T::zero(); t.shape().count()];
            let mut dfh = if need_h {
                vec![T::zero(); fh.shape().count()]
            } else {
                Vec::new()
            };
            for n in 0..xs.n {
                for c in 0..channels {
                    for p in 0..ss {
                        for y in 0..h {
                            for xx in 0..w {
                                let g = gu.at(n, c * ss + p, y, xx);
                                if g == T::zero() {
                                    continue;
                                }
                                for k in 0..SEP_TAPS {
                                    let xi = (xx + k).saturating_sub(SEP_RADIUS).min(w - 1);
                                    if need_h {
                                        dfh[fh.shape().offset(n, SEP_TAPS * p + k, y, xx)] +=
                                            g * t.at(n, c * ss + p, y, xi);
                                    }
                                    dt[t.shape().offset(n, c * ss + p, y, xi)] +=
                                        g * fh.at(n, SEP_TAPS * p + k, y, xx);
                                }
                            }
                        }
                    }
                }
            }

            // Vertical stage backward.
            let mut dx = if need_x {
                vec![T::zero(); xs.count()]
            } else {
                Vec::new()
            };
            let mut dfv = if need_v {
                vec![T::zero(); fv.shape().count()]
            } else {
                Vec::new()
            };
            let tshape = t.shape();
            for n in 0..xs.n {
                for c in 0..channels {
                    for p in 0..ss {
                        for y in 0..h {
                            for xx in 0..w {
                                let g = dt[tshape.offset(n, c * ss + p, y, xx)];
                                if g == T::zero() {
                                    continue;
                                }
                                for k in 0..SEP_TAPS {
                                    let yy = (y + k).saturating_sub(SEP_RADIUS).min(h - 1);
                                    if need_v {
                                        dfv[fv.shape().offset(n, SEP_TAPS * p + k, y, xx)] +=
                                            g * xv.at(n, c, yy, xx);
                                    }
                                    if need_x {
                                        dx[xs.offset(n, c, yy, xx)] +=
                                            g * fv.at(n, SEP_TAPS * p + k, y, xx);
                                    }
                                }
                            }
                        }
                    }
                }
            }

            vec![
                if need_x {
                    Some(Tensor::new(xs, dx))
                } else {
                    None
                },
                if need_v {
                    Some(Tensor::new(fv.shape(), dfv))
                } else {
                    None
                },
                if need_h {
                    Some(Tensor::new(fh.shape(), dfh))
                } else {
                    None
                },
            ]
        }),
    ))
}

/// Apply a predicted dense 9x9 kernel per pixel and up-sample by `s`.
pub fn dynamic_2d_upsample<'g, T: Element>(
    x: Var<'g, T>,
    coeffs: Var<'g, T>,
    s: usize,
) -> Result<Var<'g, T>> {
    x.same_graph(&coeffs);
    let xs = x.shape();
    validate_field(
        "dynamic_2d_upsample",
        xs,
        coeffs.shape(),
        LOCAL_SIDE * LOCAL_SIDE,
        s,
    )?;
    let ss = s * s;
    let xv = x.value();
    let fv = coeffs.value();
    let fshape = fv.shape();

    let mid_shape = Shape::new(xs.n, xs.c * ss, xs.h, xs.w);
    let mut mid = vec![T::zero(); mid_shape.count()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            for p in 0..ss {
                for y in 0..xs.h {
                    for xx in 0..xs.w {
                        let mut acc = T::zero();
                        for i in 0..LOCAL_SIDE {
                            let yy = (y + i).saturating_sub(LOCAL_RADIUS).min(xs.h - 1);
                            for j in 0..LOCAL_SIDE {
                                let xj = (xx + j).saturating_sub(LOCAL_RADIUS).min(xs.w - 1);
                                acc += xv.at(n, c, yy, xj)
                                    * fv.at(n, 81 * p + LOCAL_SIDE * i + j, y, xx);
                            }
                        }
                        mid[mid_shape.offset(n, c * ss + p, y, xx)] = acc;
                    }
                }
            }
        }
    }
    let out = shuffle_forward(&Tensor::new(mid_shape, mid), s);

    let need_x = x.needs_grad();
    let need_f = coeffs.needs_grad();
    Ok(x.graph().push_op(
        out,
        &[x, coeffs],
        Box::new(move |gout| {
            let gu = unshuffle_forward(gout, s);
            let mut dx = if need_x {
                vec![T::zero(); xs.count()]
            } else {
                Vec::new()
            };
            let mut df = if need_f {
                vec![T::zero(); fshape.count()]
            } else {
                Vec::new()
            };
            for n in 0..xs.n {
                for c in 0..xs.c {
                    for p in 0..ss {
                        for y in 0..xs.h {
                            for xx in 0..xs.w {
                                let g = gu.at(n, c * ss + p, y, xx);
                                if g == T::zero() {
                                    continue;
                                }
                                for i in 0..LOCAL_SIDE {
                                    let yy = (y + i).saturating_sub(LOCAL_RADIUS).min(xs.h - 1);
                                    for j in 0..LOCAL_SIDE {
                                        let xj =
                                            (xx + j).saturating_sub(LOCAL_RADIUS).min(xs.w - 1);
                                        let fi = fshape.offset(
                                            n,
                                            81 * p + LOCAL_SIDE * i + j,
                                            y,
                                            xx,
                                        );
                                        if need_f {
                                            df[fi] += g * xv.at(n, c, yy, xj);
                                        }
                                        if need_x {
                                            dx[xs.offset(n, c, yy, xj)] += g * fv.data()[fi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![
                if need_x {
                    Some(Tensor::new(xs, dx))
                } else {
                    None
                },
                if need_f {
                    Some(Tensor::new(fshape, df))
                } else {
                    None
                },
            ]
        }),
    ))
}
