//! Deterministic parameter initialization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Element, Shape, Tensor};

/// Seeded generator used everywhere randomness is needed; the stream is
/// stable across platforms and releases.
pub type Prng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Xavier (Glorot) uniform initialization: samples from
/// `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Element>(
    shape: Shape,
    fan_in: usize,
    fan_out: usize,
    rng: &mut Prng,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..shape.count())
        .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data)
}

/// Fan-in/fan-out of a conv weight `(c_out, c_in, k, k)`.
pub fn conv_fans(shape: Shape) -> (usize, usize) {
    (shape.c * shape.h * shape.w, shape.n * shape.h * shape.w)
}

/// Fan-in/fan-out of a fully-connected weight `(out, in, 1, 1)`.
pub fn fc_fans(shape: Shape) -> (usize, usize) {
    (shape.c, shape.n)
}
