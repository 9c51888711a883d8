//! Two-phase training: L2 pretraining of the generator, then alternating
//! GAN fine-tuning with three Adam optimizers (one per network).
//!
//! Each GAN step runs, in order: one D1 update on (ground truth, prediction
//! held constant), one D2 update on the corresponding detail layers, then
//! one generator update on the full objective with fresh frozen
//! discriminator forwards. All state mutation happens on this thread; given
//! a seed, configuration and dataset the whole trajectory is bit-exact.

pub mod checkpoint;
pub mod config;

pub use config::TrainConfig;

use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::imagepipe::{decompose, decompose_value, PatchPair};
use crate::jsinet::{Generator, GeneratorConfig};
use crate::losses::{
    discriminator_totals, generator_total, FakeSide, LossReport, LossWeights, RealSide,
};
use crate::tensor::graph::{Graph, Mode, Var};
use crate::tensor::init::seeded;
use crate::tensor::param::{Param, ParamSet};
use crate::tensor::{Element, Shape, Tensor};

/// Adam optimizer over one parameter set. Moment tensors live in the
/// parameters' optimizer slots; the shared step counter lives here.
pub struct Adam<T: Element> {
    params: Vec<Param<T>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(set: &ParamSet<T>) -> Self {
        Adam {
            params: set.params().to_vec(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }

    /// One bias-corrected update from the accumulated gradients.
    /// A non-finite gradient aborts before touching any parameter.
    pub fn step(&mut self, lr: f64) -> Result<()> {
        for p in &self.params {
            if !p.grad().is_all_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of {}", p.name()),
                });
            }
        }
        self.step += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let eps = T::from_f64(self.eps);
        let c1 = T::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr_t = T::from_f64(lr);
        for p in &self.params {
            let g = p.grad();
            let (m, v) = p.moments();
            let m = m
                .scale(b1)
                .add(&g.scale(T::one() - b1));
            let v = v
                .scale(b2)
                .add(&g.mul(&g).scale(T::one() - b2));
            let update = Tensor::new(
                g.shape(),
                m.data()
                    .iter()
                    .zip(v.data())
                    .map(|(&mi, &vi)| {
                        let mhat = mi / c1;
                        let vhat = vi / c2;
                        -lr_t * mhat / (vhat.sqrt() + eps)
                    })
                    .collect(),
            );
            p.set_value(p.value().add(&update));
            p.set_moments(m, v);
        }
        Ok(())
    }
}

/// Training phase selector.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Phase {
    Pretrain,
    Gan,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Gan => "gan",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "pretrain" => Ok(Phase::Pretrain),
            "gan" => Ok(Phase::Gan),
            other => Err(Error::invalid(
                "phase",
                format!("unknown phase {other:?} (want pretrain|gan)"),
            )),
        }
    }
}

/// Learning rate at a (possibly fractional) epoch position within a phase.
///
/// Pretraining starts at 1e-4 and drops by 10x at epochs 200 and 225 of 250
/// total. GAN fine-tuning holds 1e-6 for 5 epochs then decays linearly to
/// zero at epoch 10.
pub fn lr_at(phase: Phase, epoch: usize, step_in_epoch: usize, steps_per_epoch: usize) -> Result<f64> {
    let t = epoch as f64
        + if steps_per_epoch > 0 {
            step_in_epoch as f64 / steps_per_epoch as f64
        } else {
            0.0
        };
    match phase {
        Phase::Pretrain => match epoch {
            0..=199 => Ok(1e-4),
            200..=224 => Ok(1e-5),
            225..=249 => Ok(1e-6),
            _ => Err(Error::invalid(
                "lr_at",
                format!("pretrain epoch {epoch} outside [0, 250)"),
            )),
        },
        Phase::Gan => {
            if t < 5.0 {
                Ok(1e-6)
            } else if t <= 10.0 {
                Ok(1e-6 * (1.0 - (t - 5.0) / 5.0))
            } else {
                Err(Error::invalid(
                    "lr_at",
                    format!("gan epoch position {t} outside [0, 10]"),
                ))
            }
        }
    }
}

fn lr_for_step(phase: Phase, step: u64, steps_per_epoch: usize) -> Result<f64> {
    let spe = steps_per_epoch.max(1);
    lr_at(phase, (step as usize) / spe, (step as usize) % spe, spe)
}

/// All mutable training state: the three networks, their optimizers and the
/// global step counter.
pub struct TrainState<T: Element> {
    pub config: TrainConfig,
    pub generator: Generator<T>,
    pub d1: Discriminator<T>,
    pub d2: Discriminator<T>,
    pub opt_g: Adam<T>,
    pub opt_d1: Adam<T>,
    pub opt_d2: Adam<T>,
    pub step: u64,
}

impl<T: Element> TrainState<T> {
    /// Fresh state. `hr_side` is the square HR patch side the
    /// discriminators will see (must be divisible by 32).
    pub fn new(config: TrainConfig, hr_side: usize) -> Result<Self> {
        let mut rng = seeded(config.seed);
        let mut gcfg = GeneratorConfig::new(config.scale)?;
        gcfg.decomposition = config.decomposition;
        gcfg.gf_radius = config.gf_radius;
        gcfg.gf_eps = config.gf_eps;
        let generator = Generator::new(gcfg, &mut rng);
        let dcfg = DiscriminatorConfig::with_side(hr_side);
        let d1 = Discriminator::new("d1", dcfg, &mut rng)?;
        let d2 = Discriminator::new("d2", dcfg, &mut rng)?;
        let opt_g = Adam::new(generator.params());
        let opt_d1 = Adam::new(d1.params());
        let opt_d2 = Adam::new(d2.params());
        Ok(TrainState {
            config,
            generator,
            d1,
            d2,
            opt_g,
            opt_d1,
            opt_d2,
            step: 0,
        })
    }

    pub fn weights(&self) -> LossWeights {
        self.config.weights()
    }
}

/// Stack dataset entries into `(LR, HR)` batch tensors, cycling through the
/// dataset in index order (deterministic, no RNG).
pub fn make_batch<T: Element>(
    data: &[PatchPair<T>],
    step: u64,
    batch: usize,
) -> (Tensor<T>, Tensor<T>) {
    assert!(!data.is_empty(), "empty dataset");
    let lr0 = data[0].lr_sdr.data().shape();
    let hr0 = data[0].hr_hdr.data().shape();
    let lr_shape = Shape::new(batch, 3, lr0.h, lr0.w);
    let hr_shape = Shape::new(batch, 3, hr0.h, hr0.w);
    let mut lr = Vec::with_capacity(lr_shape.count());
    let mut hr = Vec::with_capacity(hr_shape.count());
    for i in 0..batch {
        let pair = &data[((step as usize) * batch + i) % data.len()];
        lr.extend_from_slice(pair.lr_sdr.data().data());
        hr.extend_from_slice(pair.hr_hdr.data().data());
    }
    (Tensor::new(lr_shape, lr), Tensor::new(hr_shape, hr))
}

/// Optional global-norm gradient clip (off when the threshold is zero).
fn clip_gradients<T: Element>(set: &ParamSet<T>, clip: f64) {
    if clip <= 0.0 {
        return;
    }
    let mut sq = 0.0f64;
    for p in set.params() {
        for v in p.grad().data() {
            let x = v.to_f64();
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > clip {
        let scale = T::from_f64(clip / norm);
        for p in set.params() {
            let g = p.grad().scale(scale);
            p.zero_grad();
            p.accumulate_grad(&g);
        }
    }
}

/// One L2 pretraining step; returns the reconstruction loss.
pub fn pretrain_step<T: Element>(
    state: &mut TrainState<T>,
    lr_batch: &Tensor<T>,
    hr_batch: &Tensor<T>,
    lr: f64,
) -> Result<f64> {
    let g = Graph::new(Mode::Train);
    let out = state.generator.forward(&g, g.constant(lr_batch.clone()))?;
    let loss = out.prediction.mse(g.constant(hr_batch.clone()));
    let value = loss.value().item().to_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: format!("reconstruction loss at step {}", state.step),
        });
    }
    state.generator.params().zero_grads();
    g.backward(loss)?;
    clip_gradients(state.generator.params(), state.config.grad_clip);
    state.opt_g.step(lr)?;
    Ok(value)
}

/// Run a discriminator forward on a constant input and detach the outputs.
fn real_side<T: Element>(
    d: &Discriminator<T>,
    g: &Graph<T>,
    input: &Tensor<T>,
) -> Result<RealSide<T>> {
    let out = d.forward(g, g.constant(input.clone()))?;
    Ok(RealSide {
        logits: out.logit.value(),
        fm: out.fm.iter().map(|t| t.value()).collect(),
    })
}

/// One discriminator update on (real, fake-held-constant) inputs. Returns
/// the loss value. Persistent state (power iteration, running stats)
/// advances once, on the real forward.
fn discriminator_step<T: Element>(
    d: &Discriminator<T>,
    opt: &mut Adam<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    weight: f64,
    lr: f64,
    grad_clip: f64,
) -> Result<f64> {
    let g = Graph::new(Mode::Train);
    let real_out = d.forward(&g, g.constant(real.clone()))?;
    g.set_persistent_updates(false);
    let fake_out = d.forward(&g, g.constant(fake.clone()))?;
    let loss = crate::losses::rahinge_d(real_out.logit, fake_out.logit)?
        .mul_scalar(T::from_f64(weight));
    let value = loss.value().item().to_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "discriminator loss".to_string(),
        });
    }
    d.params().zero_grads();
    g.backward(loss)?;
    clip_gradients(d.params(), grad_clip);
    opt.step(lr)?;
    Ok(value)
}

/// One full GAN step: D1 update, D2 update, then the generator update with
/// fresh frozen discriminator forwards. Returns the per-term loss report.
pub fn gan_step<T: Element>(
    state: &mut TrainState<T>,
    lr_batch: &Tensor<T>,
    hr_batch: &Tensor<T>,
    lr: f64,
) -> Result<LossReport> {
    let weights = state.weights();
    let cfg = state.config;
    let mode = cfg.decomposition;

    // (1) Current prediction, treated as constant for both D updates.
    let prediction = {
        let g = Graph::new(Mode::Train);
        g.set_params_frozen(true);
        state
            .generator
            .forward(&g, g.constant(lr_batch.clone()))?
            .prediction
            .value()
    };
    let (_, y_detail) = decompose_value(hr_batch, mode, cfg.gf_radius, T::from_f64(cfg.gf_eps))?;
    let (_, p_detail) = decompose_value(&prediction, mode, cfg.gf_radius, T::from_f64(cfg.gf_eps))?;

    // (2) D1 on full images; (3) D2 on detail layers (scaled by the detail
    // weight, matching its objective).
    let d1_loss = discriminator_step(
        &state.d1,
        &mut state.opt_d1,
        hr_batch,
        &prediction,
        1.0,
        lr,
        cfg.grad_clip,
    )?;
    let d2_loss = discriminator_step(
        &state.d2,
        &mut state.opt_d2,
        &y_detail,
        &p_detail,
        weights.detail,
        lr,
        cfg.grad_clip,
    )?;

    // (4) Generator update. Discriminators are frozen: gradients flow
    // through their operations into the prediction, never into their
    // parameters. With every adversarial weight at zero this reduces to the
    // plain reconstruction objective.
    let g = Graph::new(Mode::Train);
    let x = g.constant(lr_batch.clone());
    let out = state.generator.forward(&g, x)?;

    let needs_d = weights.adv != 0.0 || weights.fm != 0.0;
    let needs_d2 = needs_d && weights.detail != 0.0;
    let (d1_real, d1_fake, d2_real, d2_fake) = if needs_d {
        g.set_params_frozen(true);
        let d1_real = real_side(&state.d1, &g, hr_batch)?;
        let d1_fake_out = state.d1.forward(&g, out.prediction)?;
        let d1_fake = FakeSide {
            logits: d1_fake_out.logit,
            fm: d1_fake_out.fm,
        };
        let (d2_real, d2_fake) = if needs_d2 {
            let d2_real = real_side(&state.d2, &g, &y_detail)?;
            let p_d = decompose(out.prediction, mode, cfg.gf_radius, T::from_f64(cfg.gf_eps))?
                .detail;
            let d2_fake_out = state.d2.forward(&g, p_d)?;
            (
                d2_real,
                FakeSide {
                    logits: d2_fake_out.logit,
                    fm: d2_fake_out.fm,
                },
            )
        } else {
            (empty_side(), empty_fake(&g))
        };
        g.set_params_frozen(false);
        (d1_real, d1_fake, d2_real, d2_fake)
    } else {
        (empty_side(), empty_fake(&g), empty_side(), empty_fake(&g))
    };

    let (total, mut report) = generator_total(
        &g, hr_batch, out.prediction, &d1_real, &d1_fake, &d2_real, &d2_fake, &weights,
    )?;
    if !report.total_g.is_finite() {
        return Err(Error::NonFinite {
            context: format!("generator loss at step {}", state.step),
        });
    }
    state.generator.params().zero_grads();
    g.backward(total)?;
    clip_gradients(state.generator.params(), cfg.grad_clip);
    state.opt_g.step(lr)?;

    report.d1 = d1_loss;
    report.d2 = d2_loss;
    Ok(report)
}

fn empty_side<T: Element>() -> RealSide<T> {
    RealSide {
        logits: Tensor::scalar(T::zero()),
        fm: Vec::new(),
    }
}

fn empty_fake<T: Element>(g: &Graph<T>) -> FakeSide<'_, T> {
    FakeSide {
        logits: g.constant(Tensor::scalar(T::zero())),
        fm: Vec::new(),
    }
}

/// Drive `steps` pretraining steps, appending one report per step.
pub fn train_pretrain<T: Element>(
    state: &mut TrainState<T>,
    data: &[PatchPair<T>],
    steps: u64,
    reports: &mut Vec<LossReport>,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("train_pretrain", "empty dataset"));
    }
    for _ in 0..steps {
        let (lr_b, hr_b) = make_batch(data, state.step, state.config.batch);
        let lr = lr_for_step(Phase::Pretrain, state.step, state.config.steps_per_epoch)?;
        let rec = pretrain_step(state, &lr_b, &hr_b, lr)?;
        state.step += 1;
        reports.push(LossReport {
            step: state.step,
            rec,
            total_g: rec,
            ..Default::default()
        });
    }
    Ok(())
}

/// Drive `steps` GAN steps, appending one report per step.
pub fn train_gan<T: Element>(
    state: &mut TrainState<T>,
    data: &[PatchPair<T>],
    steps: u64,
    reports: &mut Vec<LossReport>,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("train_gan", "empty dataset"));
    }
    for _ in 0..steps {
        let (lr_b, hr_b) = make_batch(data, state.step, state.config.batch);
        let lr = lr_for_step(Phase::Gan, state.step, state.config.steps_per_epoch)?;
        let mut report = gan_step(state, &lr_b, &hr_b, lr)?;
        state.step += 1;
        report.step = state.step;
        reports.push(report);
    }
    Ok(())
}
