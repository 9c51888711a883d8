//! Naive-loop oracles for the dynamic filtering operations.
//!
//! The oracles below evaluate the per-pixel filtering formulas directly from
//! their definition, with no staging or shared intermediates, and stay
//! independent of the implementation. Tolerances: 1e-12 for oracle equality,
//! 1e-10 for the separable/outer-product identity.

use jsigan::dynfilter::{
    dynamic_2d_upsample, dynamic_separable_upsample, LOCAL_RADIUS, LOCAL_SIDE, SEP_RADIUS,
    SEP_TAPS,
};
use jsigan::tensor::graph::{Graph, Mode};
use jsigan::tensor::init::seeded;
use jsigan::tensor::{Shape, Tensor};
use rand::Rng;

fn clamp(i: usize, d: usize, r: usize, len: usize) -> usize {
    (i + d).saturating_sub(r).min(len - 1)
}

/// Direct evaluation of the separable filtering: for every output position,
/// expand both 1-D sums with no memoized intermediate.
fn oracle_separable(
    x: &Tensor<f64>,
    fv: &Tensor<f64>,
    fh: &Tensor<f64>,
    s: usize,
) -> Tensor<f64> {
    let xs = x.shape();
    let out_shape = Shape::new(xs.n, xs.c, xs.h * s, xs.w * s);
    let mut out = Tensor::zeros(out_shape).data().to_vec();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for y in 0..xs.h {
                for x0 in 0..xs.w {
                    for p in 0..s * s {
                        let mut u = 0.0;
                        for k in 0..SEP_TAPS {
                            let xk = clamp(x0, k, SEP_RADIUS, xs.w);
                            let mut t = 0.0;
                            for m in 0..SEP_TAPS {
                                let ym = clamp(y, m, SEP_RADIUS, xs.h);
                                t += x.at(n, c, ym, xk) * fv.at(n, SEP_TAPS * p + m, y, xk);
                            }
                            u += t * fh.at(n, SEP_TAPS * p + k, y, x0);
                        }
                        let oy = s * y + p / s;
                        let ox = s * x0 + p % s;
                        out[out_shape.offset(n, c, oy, ox)] = u;
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

fn oracle_2d(x: &Tensor<f64>, f: &Tensor<f64>, s: usize) -> Tensor<f64> {
    let xs = x.shape();
    let out_shape = Shape::new(xs.n, xs.c, xs.h * s, xs.w * s);
    let mut out = Tensor::zeros(out_shape).data().to_vec();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for y in 0..xs.h {
                for x0 in 0..xs.w {
                    for p in 0..s * s {
                        let mut v = 0.0;
                        for i in 0..LOCAL_SIDE {
                            let yi = clamp(y, i, LOCAL_RADIUS, xs.h);
                            for j in 0..LOCAL_SIDE {
                                let xj = clamp(x0, j, LOCAL_RADIUS, xs.w);
                                v += x.at(n, c, yi, xj)
                                    * f.at(n, 81 * p + LOCAL_SIDE * i + j, y, x0);
                            }
                        }
                        let oy = s * y + p / s;
                        let ox = s * x0 + p % s;
                        out[out_shape.offset(n, c, oy, ox)] = v;
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

fn rand_tensor(shape: Shape, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shapes");
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        assert!(
            (x - y).abs() < tol,
            "{what}: index {i}: {x} vs {y} (diff {})",
            (x - y).abs()
        );
    }
}

#[test]
fn separable_matches_naive_oracle_across_scales() {
    let mut rng = seeded(0xface);
    for s in [1usize, 2, 4] {
        for case in 0..20 {
            let (h, w) = (rng.gen_range(3..7), rng.gen_range(3..7));
            let c = rng.gen_range(1..3);
            let x = rand_tensor(Shape::new(1, c, h, w), &mut rng);
            let fshape = Shape::new(1, SEP_TAPS * s * s, h, w);
            let fv = rand_tensor(fshape, &mut rng);
            let fh = rand_tensor(fshape, &mut rng);
            let g = Graph::new(Mode::Train);
            let got = dynamic_separable_upsample(
                g.constant(x.clone()),
                g.constant(fv.clone()),
                g.constant(fh.clone()),
                s,
            )
            .unwrap()
            .value();
            let want = oracle_separable(&x, &fv, &fh, s);
            assert_close(&got, &want, 1e-12, &format!("separable s={s} case={case}"));
        }
    }
}

#[test]
fn dense_2d_matches_naive_oracle_across_scales() {
    let mut rng = seeded(0xbeef);
    for s in [1usize, 2, 4] {
        for case in 0..20 {
            let (h, w) = (rng.gen_range(3..7), rng.gen_range(3..7));
            let c = rng.gen_range(1..3);
            let x = rand_tensor(Shape::new(1, c, h, w), &mut rng);
            let f = rand_tensor(Shape::new(1, 81 * s * s, h, w), &mut rng);
            let g = Graph::new(Mode::Train);
            let got = dynamic_2d_upsample(g.constant(x.clone()), g.constant(f.clone()), s)
                .unwrap()
                .value();
            let want = oracle_2d(&x, &f, s);
            assert_close(&got, &want, 1e-12, &format!("2d s={s} case={case}"));
        }
    }
}

/// At s=1 the separable pair (v, h) equals explicit 41x41 filtering with the
/// outer-product kernel h_k * v_m, sampled with the same replicate clamping.
#[test]
fn separable_equals_outer_product_at_scale_one() {
    let mut rng = seeded(0x07e0);
    let (h, w) = (8, 8);
    let x = rand_tensor(Shape::new(1, 1, h, w), &mut rng);
    let fshape = Shape::new(1, SEP_TAPS, h, w);
    let fv = rand_tensor(fshape, &mut rng);
    let fh = rand_tensor(fshape, &mut rng);

    let g = Graph::new(Mode::Train);
    let got = dynamic_separable_upsample(
        g.constant(x.clone()),
        g.constant(fv.clone()),
        g.constant(fh.clone()),
        1,
    )
    .unwrap()
    .value();

    // Explicit 41x41 accumulation of the outer product at each pixel. The
    // horizontal tap picks the column, whose clamped x also selects which
    // vertical kernel the separable pass used there.
    let mut want = Tensor::zeros(Shape::new(1, 1, h, w)).data().to_vec();
    let shape = Shape::new(1, 1, h, w);
    for y in 0..h {
        for x0 in 0..w {
            let mut acc = 0.0;
            for k in 0..SEP_TAPS {
                let xk = clamp(x0, k, SEP_RADIUS, w);
                for m in 0..SEP_TAPS {
                    let ym = clamp(y, m, SEP_RADIUS, h);
                    let kernel = fh.at(0, k, y, x0) * fv.at(0, m, y, xk);
                    acc += kernel * x.at(0, 0, ym, xk);
                }
            }
            want[shape.offset(0, 0, y, x0)] = acc;
        }
    }
    assert_close(&got, &Tensor::new(shape, want), 1e-10, "outer product");
}

/// F(a*x1 + b*x2) = a*F(x1) + b*F(x2) for fixed fields.
#[test]
fn filtering_is_linear_in_the_input() {
    let mut rng = seeded(0x11ea);
    let s = 2;
    let (h, w) = (5, 5);
    let x1 = rand_tensor(Shape::new(1, 2, h, w), &mut rng);
    let x2 = rand_tensor(Shape::new(1, 2, h, w), &mut rng);
    let fshape = Shape::new(1, SEP_TAPS * s * s, h, w);
    let fv = rand_tensor(fshape, &mut rng);
    let fh = rand_tensor(fshape, &mut rng);
    let (a, b) = (0.75, -1.25);

    let apply = |x: &Tensor<f64>| {
        let g = Graph::new(Mode::Train);
        dynamic_separable_upsample(
            g.constant(x.clone()),
            g.constant(fv.clone()),
            g.constant(fh.clone()),
            s,
        )
        .unwrap()
        .value()
    };
    let combined = apply(&x1.scale(a).add(&x2.scale(b)));
    let separate = apply(&x1).scale(a).add(&apply(&x2).scale(b));
    assert_close(&combined, &separate, 1e-12, "linearity");
}
