//! Guided-filter smoothing and base/detail decomposition.
//!
//! The filter is self-guided and applied independently per channel. It is
//! composed entirely from differentiable primitives because the detail layer
//! of the generator *prediction* enters the loss graph: gradients must flow
//! through the decomposition.

use crate::error::Result;
use crate::tensor::graph::{Graph, Mode, Var};
use crate::tensor::{Element, Tensor};

/// Epsilon added to the base layer before dividing (division mode).
pub const DETAIL_EPS: f64 = 1e-15;

/// How the detail layer relates to base and source.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DecompMode {
    /// `detail = x / (base + 1e-15)`; reconstruct with `base * detail`.
    Division,
    /// `detail = x - base`; reconstruct with `base + detail`.
    Subtraction,
}

impl DecompMode {
    pub fn tag(self) -> &'static str {
        match self {
            DecompMode::Division => "division",
            DecompMode::Subtraction => "subtraction",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "division" => Ok(DecompMode::Division),
            "subtraction" => Ok(DecompMode::Subtraction),
            other => Err(crate::error::Error::invalid(
                "decomposition",
                format!("unknown mode {other:?} (want division|subtraction)"),
            )),
        }
    }
}

/// Base + detail pair produced by [`decompose`].
pub struct Decomposition<'g, T: Element> {
    pub base: Var<'g, T>,
    pub detail: Var<'g, T>,
    pub mode: DecompMode,
}

/// Self-guided edge-preserving smoothing.
///
/// With box means `mu` and variances `var` over a `(2r+1)^2` window:
/// `a = var / (var + eps)`, `b = (1 - a) * mu`, and the output is
/// `mean(a) * img + mean(b)`. Box filters use replicate boundaries.
pub fn guided_filter<'g, T: Element>(
    img: Var<'g, T>,
    radius: usize,
    eps: T,
) -> Result<Var<'g, T>> {
    let mu = img.box_mean(radius)?;
    let mean_sq = img.mul(img).box_mean(radius)?;
    let var = mean_sq.sub(mu.mul(mu));
    let a = var.div(var.add_scalar(eps));
    let b = a.rsub_scalar(T::one()).mul(mu);
    Ok(a.box_mean(radius)?.mul(img).add(b.box_mean(radius)?))
}

/// Split an image into base and detail layers.
pub fn decompose<'g, T: Element>(
    x: Var<'g, T>,
    mode: DecompMode,
    radius: usize,
    eps: T,
) -> Result<Decomposition<'g, T>> {
    let base = guided_filter(x, radius, eps)?;
    let detail = match mode {
        DecompMode::Division => x.div(base.add_scalar(T::from_f64(DETAIL_EPS))),
        DecompMode::Subtraction => x.sub(base),
    };
    Ok(Decomposition { base, detail, mode })
}

/// Value-level decomposition (no gradients), for data preparation.
pub fn decompose_value<T: Element>(
    x: &Tensor<T>,
    mode: DecompMode,
    radius: usize,
    eps: T,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = Graph::<T>::new(Mode::Eval);
    let d = decompose(g.constant(x.clone()), mode, radius, eps)?;
    Ok((d.base.value(), d.detail.value()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init::seeded;
    use crate::tensor::Shape;
    use rand::Rng;

    fn rand_img(shape: Shape, lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
        let mut rng = seeded(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let g = Graph::<f64>::new(Mode::Eval);
        let x = g.constant(Tensor::full(Shape::new(1, 1, 12, 12), 0.42));
        let y = guided_filter(x, 3, 0.01).unwrap();
        for &v in y.value().data() {
            assert!((v - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn step_edge_survives_as_eps_vanishes() {
        // a -> 1 pointwise as eps -> 0 wherever variance is nonzero, so the
        // output approaches the input.
        let x = Tensor::from_fn(Shape::new(1, 1, 12, 12), |_, _, _, xx| {
            if xx < 6 {
                0.1
            } else {
                0.9
            }
        });
        let g = Graph::<f64>::new(Mode::Eval);
        let y = guided_filter(g.constant(x.clone()), 2, 1e-8).unwrap().value();
        let max_diff = y
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-3, "max diff {max_diff}");
    }

    #[test]
    fn matches_naive_per_window_implementation() {
        let x = rand_img(Shape::new(1, 1, 16, 16), 0.0, 1.0, 99);
        let r = 2i64;
        let eps = 0.01;
        let g = Graph::<f64>::new(Mode::Eval);
        let got = guided_filter(g.constant(x.clone()), 2, eps).unwrap().value();

        // Naive oracle: every box mean evaluated by direct window sums with
        // clamped indices.
        let (h, w) = (16i64, 16i64);
        let win = ((2 * r + 1) * (2 * r + 1)) as f64;
        let boxm = |src: &dyn Fn(i64, i64) -> f64, y: i64, xx: i64| -> f64 {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    acc += src((y + dy).clamp(0, h - 1), (xx + dx).clamp(0, w - 1));
                }
            }
            acc / win
        };
        let img = |y: i64, xx: i64| x.at(0, 0, y as usize, xx as usize);
        let sq = |y: i64, xx: i64| img(y, xx) * img(y, xx);
        let a_fn = |y: i64, xx: i64| {
            let mu = boxm(&img, y, xx);
            let var = boxm(&sq, y, xx) - mu * mu;
            var / (var + eps)
        };
        let b_fn = |y: i64, xx: i64| {
            let mu = boxm(&img, y, xx);
            (1.0 - a_fn(y, xx)) * mu
        };
        for y in 0..h {
            for xx in 0..w {
                let want = boxm(&a_fn, y, xx) * img(y, xx) + boxm(&b_fn, y, xx);
                let gotv = got.at(0, 0, y as usize, xx as usize);
                assert!(
                    (gotv - want).abs() < 1e-10,
                    "({y},{xx}): {gotv} vs {want}"
                );
            }
        }
    }

    #[test]
    fn scaling_covariance_with_adjusted_eps() {
        // gf(alpha * x) with eps * alpha^2 equals alpha * gf(x).
        let x = rand_img(Shape::new(1, 1, 10, 10), 0.0, 1.0, 7);
        let alpha = 2.0;
        let g = Graph::<f64>::new(Mode::Eval);
        let base = guided_filter(g.constant(x.clone()), 2, 0.01).unwrap().value();
        let scaled = guided_filter(g.constant(x.scale(alpha)), 2, 0.01 * alpha * alpha)
            .unwrap()
            .value();
        for (a, b) in scaled.data().iter().zip(base.data()) {
            assert!((a - b * alpha).abs() < 1e-10);
        }
    }

    #[test]
    fn division_detail_of_constant_is_one() {
        let g = Graph::<f64>::new(Mode::Eval);
        let x = g.constant(Tensor::full(Shape::new(1, 3, 10, 10), 0.6));
        let d = decompose(x, DecompMode::Division, 2, 0.01).unwrap();
        for &v in d.detail.value().data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn subtraction_reconstructs_exactly() {
        let x = rand_img(Shape::new(1, 3, 10, 10), 0.0, 1.0, 11);
        let g = Graph::<f64>::new(Mode::Eval);
        let d = decompose(g.constant(x.clone()), DecompMode::Subtraction, 2, 0.01).unwrap();
        let recon = d.base.value().add(&d.detail.value());
        for (a, b) in recon.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn division_reconstructs_where_base_is_positive() {
        let x = rand_img(Shape::new(1, 3, 10, 10), 0.05, 1.0, 13);
        let g = Graph::<f64>::new(Mode::Eval);
        let d = decompose(g.constant(x.clone()), DecompMode::Division, 2, 0.01).unwrap();
        let base = d.base.value();
        let recon = base.mul(&d.detail.value());
        for ((r, x), b) in recon.data().iter().zip(x.data()).zip(base.data()) {
            if *b > 1e-6 {
                assert!((r - x).abs() < 1e-9);
            }
        }
    }
}
