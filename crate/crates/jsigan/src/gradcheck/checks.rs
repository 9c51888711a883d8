//! The named finite-difference checks.

use super::*;
use crate::tensor::norm::BnState;

type Check = (&'static str, Box<dyn Fn() -> CheckReport>);

fn registry() -> Vec<Check> {
    let mut checks: Vec<Check> = Vec::new();

    checks.push((
        "conv2d",
        Box::new(|| {
            let mut rng = seeded(11);
            let x = rand_signed(Shape::new(2, 3, 8, 8), &mut rng);
            let w = rand_signed(Shape::new(4, 3, 3, 3), &mut rng);
            let b = rand_signed(Shape::new(4, 1, 1, 1), &mut rng);
            check_fn("conv2d", &[x, w, b], 16, |_, v| {
                v[0].conv2d(v[1], v[2], 1, 1).unwrap().sum_all()
            })
        }),
    ));

    checks.push((
        "conv2d_strided",
        Box::new(|| {
            let mut rng = seeded(12);
            let x = rand_signed(Shape::new(2, 2, 9, 9), &mut rng);
            let w = rand_signed(Shape::new(3, 2, 4, 4), &mut rng);
            let b = rand_signed(Shape::new(3, 1, 1, 1), &mut rng);
            check_fn("conv2d_strided", &[x, w, b], 16, |_, v| {
                scalarize(v[0].conv2d(v[1], v[2], 2, 1).unwrap(), 3)
            })
        }),
    ));

    checks.push((
        "fully_connected",
        Box::new(|| {
            let mut rng = seeded(13);
            let x = rand_signed(Shape::new(3, 2, 2, 2), &mut rng);
            let w = rand_signed(Shape::new(5, 8, 1, 1), &mut rng);
            let b = rand_signed(Shape::new(5, 1, 1, 1), &mut rng);
            check_fn("fully_connected", &[x, w, b], 16, |_, v| {
                scalarize(v[0].fully_connected(v[1], v[2]).unwrap(), 4)
            })
        }),
    ));

    checks.push((
        "batch_norm",
        Box::new(|| {
            let mut rng = seeded(14);
            let x = rand_signed(Shape::new(4, 3, 4, 4), &mut rng);
            let ga = rand_signed(Shape::new(3, 1, 1, 1), &mut rng);
            let be = rand_signed(Shape::new(3, 1, 1, 1), &mut rng);
            check_fn("batch_norm", &[x, ga, be], 16, |_, v| {
                let state = BnState::new("bn", 3);
                scalarize(v[0].batch_norm(v[1], v[2], &state).unwrap(), 5)
            })
        }),
    ));

    checks.push((
        "activations",
        Box::new(|| {
            let mut rng = seeded(15);
            let x = rand_signed(Shape::new(2, 2, 4, 4), &mut rng);
            check_fn("activations", &[x], 24, |_, v| {
                let a = v[0].relu();
                let b = v[0].lrelu(0.2);
                let c = v[0].sigmoid();
                scalarize(a.add(b).add(c), 6)
            })
        }),
    ));

    checks.push((
        "pixel_shuffle",
        Box::new(|| {
            let mut rng = seeded(16);
            let x = rand_signed(Shape::new(2, 8, 3, 3), &mut rng);
            check_fn("pixel_shuffle", &[x], 24, |_, v| {
                scalarize(v[0].pixel_shuffle(2).unwrap(), 7)
            })
        }),
    ));

    checks.push((
        "box_mean",
        Box::new(|| {
            let mut rng = seeded(17);
            let x = rand_signed(Shape::new(1, 2, 8, 8), &mut rng);
            check_fn("box_mean", &[x], 24, |_, v| {
                scalarize(v[0].box_mean(2).unwrap(), 8)
            })
        }),
    ));

    checks.push((
        "spectral_scale",
        Box::new(|| {
            // w / max(sigma, floor) with sigma = u^T w v from stored vectors.
            let mut rng = seeded(18);
            let w = rand_signed(Shape::new(4, 6, 1, 1), &mut rng);
            let u = rand_signed(Shape::new(4, 1, 1, 1), &mut rng);
            let v_vec = rand_signed(Shape::new(6, 1, 1, 1), &mut rng);
            check_fn("spectral_scale", &[w], 24, move |_, v| {
                let sigma = v[0].sn_sigma(&u, &v_vec).clamp_min(1e-12);
                scalarize(v[0].div_bscalar(sigma), 9)
            })
        }),
    ));

    checks.push((
        "dynfilter_separable",
        Box::new(|| {
            let mut rng = seeded(21);
            let s = 2;
            let x = rand_signed(Shape::new(1, 2, 5, 5), &mut rng);
            let fshape = Shape::new(1, crate::dynfilter::SEP_TAPS * s * s, 5, 5);
            let fv = rand_signed(fshape, &mut rng);
            let fh = rand_signed(fshape, &mut rng);
            check_fn("dynfilter_separable", &[x, fv, fh], 14, move |_, v| {
                scalarize(
                    crate::dynfilter::dynamic_separable_upsample(v[0], v[1], v[2], s).unwrap(),
                    12,
                )
            })
        }),
    ));

    checks.push((
        "dynfilter_2d",
        Box::new(|| {
            let mut rng = seeded(22);
            let s = 2;
            let x = rand_signed(Shape::new(1, 2, 5, 5), &mut rng);
            let f = rand_signed(Shape::new(1, 81 * s * s, 5, 5), &mut rng);
            check_fn("dynfilter_2d", &[x, f], 14, move |_, v| {
                scalarize(
                    crate::dynfilter::dynamic_2d_upsample(v[0], v[1], s).unwrap(),
                    13,
                )
            })
        }),
    ));

    checks.push((
        "elementwise_composite",
        Box::new(|| {
            // conv -> lrelu -> fully-connected chain.
            let mut rng = seeded(19);
            let x = rand_signed(Shape::new(2, 2, 5, 5), &mut rng);
            let w = rand_signed(Shape::new(3, 2, 3, 3), &mut rng);
            let b = rand_signed(Shape::new(3, 1, 1, 1), &mut rng);
            let fw = rand_signed(Shape::new(2, 75, 1, 1), &mut rng);
            let fb = rand_signed(Shape::new(2, 1, 1, 1), &mut rng);
            check_fn("elementwise_composite", &[x, w, b, fw, fb], 12, |_, v| {
                let y = v[0].conv2d(v[1], v[2], 1, 1).unwrap().lrelu(0.2);
                scalarize(y.fully_connected(v[3], v[4]).unwrap(), 10)
            })
        }),
    ));

    checks.push((
        "guided_filter",
        Box::new(|| {
            let mut rng = seeded(23);
            let x = rand_tensor(Shape::new(1, 2, 10, 10), 0.1, 1.0, &mut rng);
            check_fn("guided_filter", &[x], 20, |_, v| {
                scalarize(
                    crate::imagepipe::guided_filter(v[0], 2, 0.01).unwrap(),
                    14,
                )
            })
        }),
    ));

    checks.push((
        "decompose",
        Box::new(|| {
            use crate::imagepipe::{decompose, DecompMode};
            let mut rng = seeded(24);
            let x = rand_tensor(Shape::new(1, 3, 10, 10), 0.2, 0.9, &mut rng);
            check_fn("decompose", &[x], 20, |_, v| {
                let div = decompose(v[0], DecompMode::Division, 2, 0.01).unwrap();
                let sub = decompose(v[0], DecompMode::Subtraction, 2, 0.01).unwrap();
                scalarize(div.detail, 15)
                    .add(scalarize(div.base, 16))
                    .add(scalarize(sub.detail, 17))
            })
        }),
    ));

    checks.push((
        "losses",
        Box::new(|| {
            use crate::losses::{feature_matching, rahinge_d, rahinge_g};
            // Logits chosen so every hinge argument sits well away from the
            // kink at zero.
            let real = Tensor::new(Shape::new(2, 1, 1, 1), vec![0.5, -0.25]);
            let fake = Tensor::new(Shape::new(2, 1, 1, 1), vec![0.3, -0.6]);
            let mut rng = seeded(25);
            let tap_shape = Shape::new(2, 2, 3, 3);
            let fm_real: Vec<Tensor<f64>> =
                (0..4).map(|_| rand_signed(tap_shape, &mut rng)).collect();
            let fm_fake0 = rand_signed(tap_shape, &mut rng);
            let fm_fake1 = rand_signed(tap_shape, &mut rng);
            check_fn(
                "losses",
                &[real, fake, fm_fake0, fm_fake1],
                16,
                move |g, v| {
                    let d = rahinge_d(v[0], v[1]).unwrap();
                    let adv = rahinge_g(v[0], v[1]).unwrap();
                    let fm = feature_matching(
                        g,
                        &fm_real,
                        &[v[2], v[3], v[2].mul_scalar(0.5), v[3].add_scalar(0.2)],
                    )
                    .unwrap();
                    d.add(adv).add(fm)
                },
            )
        }),
    ));

    checks.push((
        "dis_block",
        Box::new(|| {
            use crate::discriminator::DisBlock;
            use crate::tensor::param::ParamSet;
            let mut rng = seeded(26);
            let mut set = ParamSet::new();
            let block = DisBlock::<f64>::new(&mut set, "db", 4, &mut rng);
            let input = crate::tensor::param::Param::new(
                "input",
                rand_signed(Shape::new(4, 4, 8, 8), &mut rng),
            );
            let mut params: Vec<_> = set.params().to_vec();
            params.push(input.clone());
            check_params("dis_block", &params, 4, move |g| {
                let (out, tap) = block.forward(g, g.param(&input)).unwrap();
                scalarize(out, 18).add(scalarize(tap, 19))
            })
        }),
    ));

    checks.push((
        "generator",
        Box::new(|| {
            use crate::jsinet::{Generator, GeneratorConfig};
            let mut rng = seeded(27);
            let mut config = GeneratorConfig::new(2).unwrap();
            config.gf_radius = 2;
            let gen = Generator::<f64>::new(config, &mut rng);
            let input = crate::tensor::param::Param::new(
                "input",
                rand_tensor(Shape::new(1, 3, 8, 8), 0.15, 0.9, &mut rng),
            );
            let mut params: Vec<_> = gen.params().params().to_vec();
            params.push(input.clone());
            check_params("generator", &params, 2, move |g| {
                let out = gen.forward(g, g.param(&input)).unwrap();
                scalarize(out.prediction, 20)
            })
        }),
    ));

    checks.push((
        "discriminator",
        Box::new(|| {
            use crate::discriminator::{Discriminator, DiscriminatorConfig};
            let mut rng = seeded(28);
            let d = Discriminator::<f64>::new("d", DiscriminatorConfig::with_side(32), &mut rng)
                .unwrap();
            let input = crate::tensor::param::Param::new(
                "input",
                rand_tensor(Shape::new(4, 3, 32, 32), 0.1, 0.9, &mut rng),
            );
            let mut params: Vec<_> = d.params().params().to_vec();
            params.push(input.clone());
            check_params("discriminator", &params, 2, move |g| {
                let out = d.forward(g, g.param(&input)).unwrap();
                let taps = out
                    .fm
                    .iter()
                    .enumerate()
                    .map(|(i, t)| scalarize(*t, 21 + i as u64))
                    .reduce(|a, b| a.add(b))
                    .unwrap();
                scalarize(out.logit, 30).add(taps.mul_scalar(0.25))
            })
        }),
    ));

    checks.push((
        "arith_ops",
        Box::new(|| {
            let mut rng = seeded(20);
            let a = rand_signed(Shape::new(1, 2, 3, 3), &mut rng);
            let b = rand_tensor(Shape::new(1, 2, 3, 3), 0.5, 1.5, &mut rng);
            check_fn("arith_ops", &[a, b], 18, |_, v| {
                let q = v[0].div(v[1]);
                let m = v[0].mul(v[1]).add(q).sub(v[0].mul_scalar(0.3));
                let s = v[1].mean_all();
                scalarize(m.sub_bscalar(s).mul_bscalar(s), 11)
            })
        }),
    ));

    checks
}

/// Names of every registered check.
pub fn check_names() -> Vec<&'static str> {
    registry().into_iter().map(|(n, _)| n).collect()
}

/// Run all checks, or only those whose name contains `filter`.
pub fn run(filter: Option<&str>) -> Vec<CheckReport> {
    registry()
        .into_iter()
        .filter(|(name, _)| filter.map_or(true, |f| name.contains(f)))
        .map(|(_, f)| f())
        .collect()
}
