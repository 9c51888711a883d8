//! Relativistic average hinge (RaHinge) adversarial losses, feature
//! matching, the detail-layer variants, and the weighted totals.
//!
//! Conventions: expectations are batch means; each logit is compared against
//! the *opposing* class's batch mean; every squared-norm term is a mean over
//! elements (per tap, summed over the four taps for feature matching). The
//! real branch (ground-truth logits and feature taps) always enters the
//! generator objective as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{Element, Tensor};

/// Loss-term weights. `detail` is the weight of every detail-layer term.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub adv: f64,
    pub fm: f64,
    pub detail: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rec: 1.0,
            adv: 1.0,
            fm: 0.5,
            detail: 0.5,
        }
    }
}

/// Scalar values of every loss term for one step (the training-log record).
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub rec: f64,
    pub adv_g: f64,
    pub adv_g_detail: f64,
    pub fm: f64,
    pub fm_detail: f64,
    pub total_g: f64,
    pub d1: f64,
    pub d2: f64,
}

impl LossReport {
    /// Recombine the parts the way the total was built; used by tests to
    /// assert the bookkeeping identity.
    pub fn recombined_total(&self, w: &LossWeights) -> f64 {
        w.rec * self.rec
            + w.adv * (self.adv_g + w.detail * self.adv_g_detail)
            + w.fm * (self.fm + w.detail * self.fm_detail)
    }
}

fn check_nonempty<T: Element>(op: &'static str, v: &Var<'_, T>) -> Result<()> {
    if v.shape().count() == 0 {
        return Err(Error::invalid(op, "empty logit batch"));
    }
    Ok(())
}

/// RaHinge discriminator loss:
/// `E_real[max(0, 1 - (D(real) - E D(fake)))] + E_fake[max(0, 1 + (D(fake) - E D(real)))]`.
pub fn rahinge_d<'g, T: Element>(real: Var<'g, T>, fake: Var<'g, T>) -> Result<Var<'g, T>> {
    check_nonempty("rahinge_d", &real)?;
    check_nonempty("rahinge_d", &fake)?;
    let mean_real = real.mean_all();
    let mean_fake = fake.mean_all();
    let real_term = real
        .sub_bscalar(mean_fake)
        .rsub_scalar(T::one())
        .relu()
        .mean_all();
    let fake_term = fake
        .sub_bscalar(mean_real)
        .add_scalar(T::one())
        .relu()
        .mean_all();
    Ok(real_term.add(fake_term))
}

/// RaHinge generator loss: the mirror of [`rahinge_d`] with the roles of
/// real and fake swapped, so gradients reach the generator from both sides.
pub fn rahinge_g<'g, T: Element>(real: Var<'g, T>, fake: Var<'g, T>) -> Result<Var<'g, T>> {
    check_nonempty("rahinge_g", &real)?;
    check_nonempty("rahinge_g", &fake)?;
    let mean_real = real.mean_all();
    let mean_fake = fake.mean_all();
    let fake_term = fake
        .sub_bscalar(mean_real)
        .rsub_scalar(T::one())
        .relu()
        .mean_all();
    let real_term = real
        .sub_bscalar(mean_fake)
        .add_scalar(T::one())
        .relu()
        .mean_all();
    Ok(fake_term.add(real_term))
}

/// Feature-matching loss: per-tap mean squared difference, summed over taps.
/// Real taps are constants (no gradient flows into the discriminator or the
/// real branch).
pub fn feature_matching<'g, T: Element>(
    g: &'g Graph<T>,
    fm_real: &[Tensor<T>],
    fm_fake: &[Var<'g, T>],
) -> Result<Var<'g, T>> {
    if fm_real.len() != fm_fake.len() {
        return Err(Error::invalid(
            "feature_matching",
            format!("{} real taps vs {} fake taps", fm_real.len(), fm_fake.len()),
        ));
    }
    let mut total: Option<Var<'g, T>> = None;
    for (real, fake) in fm_real.iter().zip(fm_fake) {
        if real.shape() != fake.shape() {
            return Err(Error::shape("feature_matching", real.shape(), fake.shape()));
        }
        let term = fake.sub(g.constant(real.clone())).square_mean();
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(term),
        });
    }
    total.ok_or_else(|| Error::invalid("feature_matching", "no taps"))
}

/// Detached outputs of a discriminator forward on the real branch.
pub struct RealSide<T: Element> {
    pub logits: Tensor<T>,
    pub fm: Vec<Tensor<T>>,
}

/// Graph-connected outputs of a discriminator forward on the fake branch.
pub struct FakeSide<'g, T: Element> {
    pub logits: Var<'g, T>,
    pub fm: Vec<Var<'g, T>>,
}

/// Assemble the full generator objective. Terms with a zero weight are
/// skipped entirely (their report fields stay 0), so a zero-weight GAN
/// objective reduces bit-exactly to plain reconstruction training.
#[allow(clippy::too_many_arguments)]
pub fn generator_total<'g, T: Element>(
    g: &'g Graph<T>,
    target: &Tensor<T>,
    prediction: Var<'g, T>,
    d1_real: &RealSide<T>,
    d1_fake: &FakeSide<'g, T>,
    d2_real: &RealSide<T>,
    d2_fake: &FakeSide<'g, T>,
    weights: &LossWeights,
) -> Result<(Var<'g, T>, LossReport)> {
    let mut report = LossReport::default();
    let mut total: Option<Var<'g, T>> = None;
    let mut accumulate = |term: Var<'g, T>, weight: f64| {
        let scaled = term.mul_scalar(T::from_f64(weight));
        total = Some(match total.take() {
            None => scaled,
            Some(acc) => acc.add(scaled),
        });
    };

    if weights.rec != 0.0 {
        let rec = prediction.mse(g.constant(target.clone()));
        report.rec = rec.value().item().to_f64();
        accumulate(rec, weights.rec);
    }
    if weights.adv != 0.0 {
        let adv = rahinge_g(g.constant(d1_real.logits.clone()), d1_fake.logits)?;
        report.adv_g = adv.value().item().to_f64();
        accumulate(adv, weights.adv);
        if weights.detail != 0.0 {
            let adv_d = rahinge_g(g.constant(d2_real.logits.clone()), d2_fake.logits)?;
            report.adv_g_detail = adv_d.value().item().to_f64();
            accumulate(adv_d, weights.adv * weights.detail);
        }
    }
    if weights.fm != 0.0 {
        let fm = feature_matching(g, &d1_real.fm, &d1_fake.fm)?;
        report.fm = fm.value().item().to_f64();
        accumulate(fm, weights.fm);
        if weights.detail != 0.0 {
            let fm_d = feature_matching(g, &d2_real.fm, &d2_fake.fm)?;
            report.fm_detail = fm_d.value().item().to_f64();
            accumulate(fm_d, weights.fm * weights.detail);
        }
    }

    let total = total.unwrap_or_else(|| g.constant(Tensor::scalar(T::zero())));
    report.total_g = total.value().item().to_f64();
    Ok((total, report))
}

/// The two discriminator objectives: `L_D1 = rahinge_d` on image logits,
/// `L_D2 = detail_weight * rahinge_d` on detail-layer logits.
pub fn discriminator_totals<'g, T: Element>(
    d1_real: Var<'g, T>,
    d1_fake: Var<'g, T>,
    d2_real: Var<'g, T>,
    d2_fake: Var<'g, T>,
    weights: &LossWeights,
) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let d1 = rahinge_d(d1_real, d1_fake)?;
    let d2 = rahinge_d(d2_real, d2_fake)?.mul_scalar(T::from_f64(weights.detail));
    Ok((d1, d2))
}

impl<'g, T: Element> Var<'g, T> {
    /// Mean of squared elements.
    fn square_mean(self) -> Self {
        self.mul(self).mean_all()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::graph::Mode;
    use crate::tensor::init::seeded;
    use crate::tensor::Shape;
    use rand::Rng;

    fn logits<'g>(g: &'g Graph<f64>, vals: &[f64]) -> Var<'g, f64> {
        g.constant(Tensor::new(
            Shape::new(vals.len(), 1, 1, 1),
            vals.to_vec(),
        ))
    }

    #[test]
    fn rahinge_d_hand_values() {
        let g = Graph::<f64>::new(Mode::Train);
        let cases: [(&[f64], &[f64], f64); 3] = [
            (&[0.0, 0.0], &[0.0, 0.0], 2.0),
            (&[1.0, 1.0], &[-1.0, -1.0], 0.0),
            (&[2.0], &[0.0], 0.0),
        ];
        for (real, fake, want) in cases {
            let got = rahinge_d(logits(&g, real), logits(&g, fake))
                .unwrap()
                .value()
                .item();
            assert!((got - want).abs() < 1e-9, "{real:?}/{fake:?}: {got}");
        }
    }

    #[test]
    fn rahinge_g_hand_values() {
        let g = Graph::<f64>::new(Mode::Train);
        let cases: [(&[f64], &[f64], f64); 3] = [
            (&[0.0], &[0.0], 2.0),
            (&[1.0], &[-1.0], 6.0),
            (&[-1.0], &[1.0], 0.0),
        ];
        for (real, fake, want) in cases {
            let got = rahinge_g(logits(&g, real), logits(&g, fake))
                .unwrap()
                .value()
                .item();
            assert!((got - want).abs() < 1e-9, "{real:?}/{fake:?}: {got}");
        }
    }

    #[test]
    fn shift_invariance_at_dyadic_logits() {
        // Adding one constant to every logit cancels out. At dyadic logits
        // the floating-point evaluation is bit-identical too.
        let g = Graph::<f64>::new(Mode::Train);
        let real = [0.5, -1.25];
        let fake = [0.75, 2.0];
        let k = 3.7;
        let shifted = |v: &[f64]| v.iter().map(|x| x + k).collect::<Vec<_>>();
        let d0 = rahinge_d(logits(&g, &real), logits(&g, &fake)).unwrap().value().item();
        let d1 = rahinge_d(logits(&g, &shifted(&real)), logits(&g, &shifted(&fake)))
            .unwrap()
            .value()
            .item();
        assert_eq!(d0.to_bits(), d1.to_bits());
        let g0 = rahinge_g(logits(&g, &real), logits(&g, &fake)).unwrap().value().item();
        let g1 = rahinge_g(logits(&g, &shifted(&real)), logits(&g, &shifted(&fake)))
            .unwrap()
            .value()
            .item();
        assert_eq!(g0.to_bits(), g1.to_bits());
    }

    #[test]
    fn rejects_empty_batch() {
        let g = Graph::<f64>::new(Mode::Train);
        let empty = g.constant(Tensor::new(Shape::new(0, 1, 1, 1), vec![]));
        let one = logits(&g, &[0.0]);
        assert!(rahinge_d(empty, one).is_err());
        assert!(rahinge_g(one, empty).is_err());
    }

    #[test]
    fn feature_matching_hand_values() {
        let g = Graph::<f64>::new(Mode::Train);
        let shape = Shape::new(1, 2, 3, 3);
        let taps: Vec<Tensor<f64>> = (0..4)
            .map(|i| Tensor::full(shape, i as f64 * 0.1))
            .collect();
        let same: Vec<Var<'_, f64>> = taps.iter().map(|t| g.constant(t.clone())).collect();
        let zero = feature_matching(&g, &taps, &same).unwrap().value().item();
        assert_eq!(zero, 0.0);

        let plus_one: Vec<Var<'_, f64>> = taps
            .iter()
            .map(|t| g.constant(t.map(|v| v + 1.0)))
            .collect();
        let four = feature_matching(&g, &taps, &plus_one).unwrap().value().item();
        assert!((four - 4.0).abs() < 1e-12);
    }

    #[test]
    fn feature_matching_matches_double_loop() {
        let g = Graph::<f64>::new(Mode::Train);
        let mut rng = seeded(31);
        let shape = Shape::new(2, 3, 4, 4);
        let real: Vec<Tensor<f64>> = (0..4)
            .map(|_| Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let fake_t: Vec<Tensor<f64>> = (0..4)
            .map(|_| Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let fake: Vec<Var<'_, f64>> = fake_t.iter().map(|t| g.constant(t.clone())).collect();
        let got = feature_matching(&g, &real, &fake).unwrap().value().item();
        let mut want = 0.0;
        for (r, f) in real.iter().zip(&fake_t) {
            let mut acc = 0.0;
            for (a, b) in r.data().iter().zip(f.data()) {
                acc += (a - b) * (a - b);
            }
            want += acc / shape.count() as f64;
        }
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn feature_matching_rejects_shape_mismatch() {
        let g = Graph::<f64>::new(Mode::Train);
        let real = vec![Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2))];
        let fake = vec![g.constant(Tensor::zeros(Shape::new(1, 2, 3, 2)))];
        assert!(feature_matching(&g, &real, &fake).is_err());
    }

    fn trivial_sides<'g>(
        g: &'g Graph<f64>,
        logit: f64,
        tap: f64,
    ) -> (RealSide<f64>, FakeSide<'g, f64>) {
        let shape = Shape::new(1, 2, 2, 2);
        let real = RealSide {
            logits: Tensor::scalar(logit),
            fm: (0..4).map(|_| Tensor::full(shape, tap)).collect(),
        };
        let fake = FakeSide {
            logits: g.constant(Tensor::scalar(logit)),
            fm: (0..4).map(|_| g.constant(Tensor::full(shape, tap))).collect(),
        };
        (real, fake)
    }

    #[test]
    fn generator_total_hand_value() {
        // P == Y and all logits equal: rec = 0, fm = 0, both adversarial
        // terms are 2 each; total = 1*0 + 1*(2 + 0.5*2) + 0.5*0 = 3.
        let g = Graph::<f64>::new(Mode::Train);
        let y = Tensor::full(Shape::new(1, 3, 4, 4), 0.5);
        let p = g.constant(y.clone());
        let (r1, f1) = trivial_sides(&g, 0.7, 0.3);
        let (r2, f2) = trivial_sides(&g, -0.2, 0.1);
        let (total, report) =
            generator_total(&g, &y, p, &r1, &f1, &r2, &f2, &LossWeights::default()).unwrap();
        assert!((total.value().item() - 3.0).abs() < 1e-9, "{report:?}");
        assert_eq!(report.rec, 0.0);
        assert!((report.adv_g - 2.0).abs() < 1e-12);
        assert!((report.adv_g_detail - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_total() {
        let g = Graph::<f64>::new(Mode::Train);
        let y = Tensor::full(Shape::new(1, 3, 4, 4), 0.5);
        let p = g.constant(Tensor::full(Shape::new(1, 3, 4, 4), 0.9));
        let (r1, f1) = trivial_sides(&g, 0.7, 0.3);
        let (r2, f2) = trivial_sides(&g, -0.2, 0.1);
        let w = LossWeights {
            rec: 0.0,
            adv: 0.0,
            fm: 0.0,
            detail: 0.0,
        };
        let (total, _) = generator_total(&g, &y, p, &r1, &f1, &r2, &f2, &w).unwrap();
        assert_eq!(total.value().item(), 0.0);
    }

    #[test]
    fn report_total_matches_recombination() {
        let g = Graph::<f64>::new(Mode::Train);
        let mut rng = seeded(41);
        let shape = Shape::new(2, 3, 4, 4);
        let y = Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(0.0..1.0));
        let p = g.constant(Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(0.0..1.0)));
        fn mk_sides<'g>(g: &'g Graph<f64>, seed: u64) -> (RealSide<f64>, FakeSide<'g, f64>) {
            let mut rng = seeded(seed);
            let tshape = Shape::new(2, 2, 3, 3);
            let real = RealSide {
                logits: Tensor::from_fn(Shape::new(2, 1, 1, 1), |_, _, _, _| {
                    rng.gen_range(-1.0..1.0)
                }),
                fm: (0..4)
                    .map(|_| Tensor::from_fn(tshape, |_, _, _, _| rng.gen_range(-1.0..1.0)))
                    .collect(),
            };
            let fake = FakeSide {
                logits: g.constant(Tensor::from_fn(Shape::new(2, 1, 1, 1), |_, _, _, _| {
                    rng.gen_range(-1.0..1.0)
                })),
                fm: (0..4)
                    .map(|_| {
                        g.constant(Tensor::from_fn(tshape, |_, _, _, _| {
                            rng.gen_range(-1.0..1.0)
                        }))
                    })
                    .collect(),
            };
            (real, fake)
        }
        let (r1, f1) = mk_sides(&g, 42);
        let (r2, f2) = mk_sides(&g, 43);
        let w = LossWeights::default();
        let (total, report) = generator_total(&g, &y, p, &r1, &f1, &r2, &f2, &w).unwrap();
        assert!((total.value().item() - report.recombined_total(&w)).abs() < 1e-9);
        assert!((report.total_g - report.recombined_total(&w)).abs() < 1e-9);
    }

    #[test]
    fn discriminator_totals_hand_values() {
        let g = Graph::<f64>::new(Mode::Train);
        let w = LossWeights::default();
        // All logits zero: d1 = 2, d2 = 0.5 * 2 = 1.
        let z = logits(&g, &[0.0, 0.0]);
        let (d1, d2) = discriminator_totals(z, z, z, z, &w).unwrap();
        assert!((d1.value().item() - 2.0).abs() < 1e-9);
        assert!((d2.value().item() - 1.0).abs() < 1e-9);
        // Perfect D1.
        let (d1, _) = discriminator_totals(
            logits(&g, &[1.0]),
            logits(&g, &[-1.0]),
            z,
            z,
            &w,
        )
        .unwrap();
        assert_eq!(d1.value().item(), 0.0);
        // detail weight zero kills d2.
        let w0 = LossWeights {
            detail: 0.0,
            ..Default::default()
        };
        let (_, d2) = discriminator_totals(z, z, logits(&g, &[5.0]), logits(&g, &[-5.0]), &w0)
            .unwrap();
        assert_eq!(d2.value().item(), 0.0);
    }

    #[test]
    fn totals_monotone_in_each_weight() {
        let g = Graph::<f64>::new(Mode::Train);
        let y = Tensor::full(Shape::new(1, 3, 4, 4), 0.2);
        let p_t = Tensor::full(Shape::new(1, 3, 4, 4), 0.8);
        let (r1, f1) = trivial_sides(&g, 0.3, 0.4);
        let (r2, f2) = trivial_sides(&g, 0.1, 0.6);
        let base = LossWeights::default();
        let total_at = |w: &LossWeights| {
            let p = g.constant(p_t.clone());
            generator_total(&g, &y, p, &r1, &f1, &r2, &f2, w)
                .unwrap()
                .0
                .value()
                .item()
        };
        let t0 = total_at(&base);
        for bump in [
            LossWeights { rec: 2.0, ..base },
            LossWeights { adv: 2.0, ..base },
            LossWeights { fm: 1.0, ..base },
            LossWeights { detail: 1.0, ..base },
        ] {
            assert!(total_at(&bump) >= t0);
        }
    }
}
