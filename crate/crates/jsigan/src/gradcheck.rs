//! Central finite-difference verification of every differentiable operation.
//!
//! Analytic gradients from [`Graph::backward`] are compared against central
//! differences `(f(x+h) - f(x-h)) / 2h` with `h = 1e-5 * max(1, |x|)` at
//! 64-bit precision. A coordinate passes when the difference is below an
//! absolute floor of 1e-8 or the relative error is below 1e-4.
//!
//! The named checks in [`run`] cover the full operation set; the CLI
//! `gradcheck` subcommand and the acceptance suite both drive this module.

use rand::Rng;

use crate::tensor::graph::{Graph, Mode, Var};
use crate::tensor::init::{seeded, Prng};
use crate::tensor::param::Param;
use crate::tensor::{Shape, Tensor};

/// Relative tolerance for every check.
pub const REL_TOL: f64 = 1e-4;
/// Differences below this floor pass regardless of relative error.
pub const ABS_FLOOR: f64 = 1e-8;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub probes: usize,
    /// Probes rejected because the loss is locally nonsmooth there (an
    /// activation kink sits inside the finite-difference stencil).
    pub skipped_nonsmooth: usize,
    pub pass: bool,
}

impl CheckReport {
    fn from_errors(name: &str, errs: Vec<f64>, skipped: usize) -> Self {
        let max_rel_err = errs.iter().copied().fold(0.0, f64::max);
        CheckReport {
            name: name.to_string(),
            max_rel_err,
            probes: errs.len(),
            skipped_nonsmooth: skipped,
            pass: max_rel_err < REL_TOL,
        }
    }
}

/// Central differences at step `h` and `h/2` around the current point.
/// On a smooth loss the two estimates agree to O(h^2); a large spread means
/// a kink sits inside the stencil, where finite differences say nothing
/// about the analytic gradient. Returns `None` in that case.
fn fd_smooth(eval: &mut dyn FnMut() -> f64, perturb: &dyn Fn(f64), x: f64) -> Option<f64> {
    let h = 1e-5 * x.abs().max(1.0);
    let mut central = |step: f64| {
        perturb(step);
        let up = eval();
        perturb(-2.0 * step);
        let down = eval();
        perturb(step);
        (up - down) / (2.0 * step)
    };
    let fd1 = central(h);
    let fd2 = central(h / 2.0);
    let spread = (fd1 - fd2).abs();
    if spread > 1e-6 * fd1.abs().max(fd2.abs()).max(ABS_FLOOR) && spread > ABS_FLOOR {
        None
    } else {
        Some(fd1)
    }
}

fn coordinate_error(analytic: f64, fd: f64) -> f64 {
    let diff = (analytic - fd).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(fd.abs()).max(ABS_FLOOR)
    }
}

/// Deterministic subset of coordinate indices to probe.
fn probe_indices(count: usize, max_probes: usize, rng: &mut Prng) -> Vec<usize> {
    if count <= max_probes {
        return (0..count).collect();
    }
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < max_probes {
        picked.insert(rng.gen_range(0..count));
    }
    picked.into_iter().collect()
}

/// Check gradients w.r.t. a set of leaf tensors.
///
/// `build` composes the graph from parameter leaves (one per input, in
/// order) and returns the scalar loss. It is re-invoked for every
/// finite-difference evaluation, so it must be a pure function of the
/// current parameter values.
pub fn check_fn(
    name: &str,
    inputs: &[Tensor<f64>],
    max_probes_per_input: usize,
    build: impl for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
) -> CheckReport {
    let params: Vec<Param<f64>> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| Param::new(format!("in{i}"), t.clone()))
        .collect();
    let eval = |mode_backward: bool| -> f64 {
        let g = Graph::new(Mode::Train);
        g.set_persistent_updates(false);
        let vars: Vec<Var<'_, f64>> = params.iter().map(|p| g.param(p)).collect();
        let loss = build(&g, &vars);
        if mode_backward {
            g.backward(loss).expect("backward");
        }
        loss.value().item()
    };

    for p in &params {
        p.zero_grad();
    }
    eval(true);
    let analytic: Vec<Tensor<f64>> = params.iter().map(|p| p.grad()).collect();

    let mut rng = seeded(0x5eed + inputs.len() as u64);
    let mut errs = Vec::new();
    let mut skipped = 0;
    for (pi, p) in params.iter().enumerate() {
        let base = p.value();
        for idx in probe_indices(base.shape().count(), max_probes_per_input, &mut rng) {
            let x = base.data()[idx];
            match fd_smooth(&mut || eval(false), &|d| p.perturb(idx, d), x) {
                Some(fd) => errs.push(coordinate_error(analytic[pi].data()[idx], fd)),
                None => skipped += 1,
            }
        }
    }
    CheckReport::from_errors(name, errs, skipped)
}

/// Check gradients w.r.t. module parameters (and optionally extra leaf
/// inputs handled by the caller inside `build`).
pub fn check_params(
    name: &str,
    params: &[Param<f64>],
    max_probes_per_param: usize,
    build: impl for<'g> Fn(&'g Graph<f64>) -> Var<'g, f64>,
) -> CheckReport {
    let eval = |mode_backward: bool| -> f64 {
        let g = Graph::new(Mode::Train);
        g.set_persistent_updates(false);
        let loss = build(&g);
        if mode_backward {
            g.backward(loss).expect("backward");
        }
        loss.value().item()
    };

    for p in params {
        p.zero_grad();
    }
    eval(true);
    let analytic: Vec<Tensor<f64>> = params.iter().map(|p| p.grad()).collect();

    let mut rng = seeded(0xc0de + params.len() as u64);
    let mut errs = Vec::new();
    let mut skipped = 0;
    for (pi, p) in params.iter().enumerate() {
        let base = p.value();
        for idx in probe_indices(base.shape().count(), max_probes_per_param, &mut rng) {
            let x = base.data()[idx];
            match fd_smooth(&mut || eval(false), &|d| p.perturb(idx, d), x) {
                Some(fd) => errs.push(coordinate_error(analytic[pi].data()[idx], fd)),
                None => skipped += 1,
            }
        }
    }
    CheckReport::from_errors(name, errs, skipped)
}

/// Random tensor with entries in `lo..hi`.
pub fn rand_tensor(shape: Shape, lo: f64, hi: f64, rng: &mut Prng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Random tensor with magnitudes in `0.1..1.0` (bounded away from the
/// activation kinks that finite differences cannot straddle).
pub fn rand_signed(shape: Shape, rng: &mut Prng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let mag = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Fixed pseudorandom weights turning a tensor output into a scalar loss
/// that exercises every coordinate.
pub fn scalarize<'g>(v: Var<'g, f64>, seed: u64) -> Var<'g, f64> {
    let mut rng = seeded(seed);
    let w = rand_tensor(v.shape(), -1.0, 1.0, &mut rng);
    v.mul(v.graph().constant(w)).sum_all()
}

mod checks;

pub use checks::{check_names, run};
