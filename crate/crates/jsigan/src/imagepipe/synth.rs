//! Deterministic synthetic SDR/HDR patch generation.
//!
//! High-resolution linear-light scenes are composed from sinusoidal
//! gratings, linear ramps, smoothed noise blobs and hard-edged rectangles,
//! with peak luminance capped at 0.8 of the HDR range. The HDR label takes
//! the PQ/BT.2020/10-bit path; the SDR input is box-downsampled in linear
//! light, exposure-clipped at a tenth of peak, gamma-encoded and quantized
//! to 8-bit BT.709 codes.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::error::{Error, Result};
use crate::tensor::init::Prng;
use crate::tensor::ops::box_mean_forward;
use crate::tensor::{Element, Shape, Tensor};

use super::color::{
    pq_oetf, requantize, yuv_rgb_convert, ColorMatrix, ConvertDirection,
};
use super::{Colorimetry, ImageYuv, PatchPair};

/// SDR exposure clip point as a fraction of the linear-light peak.
const SDR_CLIP: f64 = 0.1;
/// SDR encoding gamma (pure power law).
const SDR_GAMMA: f64 = 1.0 / 2.2;

/// Default LR patch side for a scale factor.
pub fn default_lr_size(scale: usize) -> usize {
    match scale {
        2 => 80,
        _ => 40,
    }
}

/// Generate `count` aligned patch pairs. Identical arguments give
/// bit-identical output; each patch derives its own stream from
/// `(seed, index)` so ordering and parallelism cannot change content.
pub fn synth_dataset<T: Element>(
    seed: u64,
    count: usize,
    scale: usize,
    lr_size: usize,
) -> Result<Vec<PatchPair<T>>> {
    if scale != 2 && scale != 4 {
        return Err(Error::invalid(
            "synth_dataset",
            format!("scale must be 2 or 4, got {scale}"),
        ));
    }
    if lr_size < 8 {
        return Err(Error::invalid("synth_dataset", "lr_size must be >= 8"));
    }
    (0..count)
        .map(|index| {
            let mut rng = Prng::seed_from_u64(seed);
            rng.set_stream(index as u64 + 1);
            synth_pair(&mut rng, scale, lr_size)
        })
        .collect()
}

fn synth_pair<T: Element>(rng: &mut Prng, scale: usize, lr_size: usize) -> Result<PatchPair<T>> {
    let hr = lr_size * scale;
    let scene = linear_scene(rng, hr);

    // HR HDR label: PQ encode, BT.2020 matrix, 10-bit codes.
    let (pq, _) = pq_oetf(&scene);
    let hr_yuv = yuv_rgb_convert(&pq, ColorMatrix::Bt2020, ConvertDirection::RgbToYuv)?;
    let hr_yuv = requantize(&clamp01(&hr_yuv), 10)?;
    let hr_hdr = ImageYuv::new(hr_yuv, Colorimetry::Bt2020Pq10)?;

    // LR SDR input: downsample in linear light, clip exposure, normalize,
    // gamma, BT.709 matrix, 8-bit codes.
    let lr_linear = box_downsample(&scene, scale);
    let clipped = lr_linear.map(|v| {
        let x = Element::to_f64(v).min(SDR_CLIP) / SDR_CLIP;
        T::from_f64(x.powf(SDR_GAMMA))
    });
    let lr_yuv = yuv_rgb_convert(&clipped, ColorMatrix::Bt709, ConvertDirection::RgbToYuv)?;
    let lr_yuv = requantize(&clamp01(&lr_yuv), 8)?;
    let lr_sdr = ImageYuv::new(lr_yuv, Colorimetry::Bt709Sdr8)?;

    PatchPair::new(lr_sdr, hr_hdr, scale)
}

fn clamp01<T: Element>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| {
        if v < T::zero() {
            T::zero()
        } else if v > T::one() {
            T::one()
        } else {
            v
        }
    })
}

/// Compose one linear-light RGB scene with peak at most 0.8.
fn linear_scene<T: Element>(rng: &mut Prng, side: usize) -> Tensor<T> {
    let shape = Shape::new(1, 3, side, side);
    let mut acc = vec![0.0f64; shape.count()];

    let add = |color: [f64; 3], f: &dyn Fn(usize, usize) -> f64, acc: &mut [f64]| {
        for (c, &weight) in color.iter().enumerate() {
            for y in 0..side {
                for x in 0..side {
                    acc[shape.offset(0, c, y, x)] += weight * f(y, x);
                }
            }
        }
    };
    let rand_color = |rng: &mut Prng| {
        [
            rng.gen_range(0.1..1.0),
            rng.gen_range(0.1..1.0),
            rng.gen_range(0.1..1.0),
        ]
    };

    // Sinusoidal gratings.
    for _ in 0..rng.gen_range(1..=3) {
        let fx = rng.gen_range(0.5..6.0);
        let fy = rng.gen_range(0.5..6.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let color = rand_color(rng);
        let s = side as f64;
        add(
            color,
            &|y, x| {
                let arg =
                    std::f64::consts::TAU * (fx * x as f64 / s + fy * y as f64 / s) + phase;
                0.5 + 0.5 * arg.sin()
            },
            &mut acc,
        );
    }

    // A linear ramp.
    {
        let dx = rng.gen_range(-1.0..1.0f64);
        let dy = rng.gen_range(-1.0..1.0f64);
        let color = rand_color(rng);
        let s = side as f64;
        add(
            color,
            &|y, x| 0.5 + 0.5 * (dx * (x as f64 / s - 0.5) + dy * (y as f64 / s - 0.5)),
            &mut acc,
        );
    }

    // Hard-edged rectangles.
    for _ in 0..rng.gen_range(1..=3) {
        let x0 = rng.gen_range(0..side / 2);
        let y0 = rng.gen_range(0..side / 2);
        let x1 = rng.gen_range(x0 + 1..side);
        let y1 = rng.gen_range(y0 + 1..side);
        let color = rand_color(rng);
        add(
            color,
            &|y, x| {
                if (y0..y1).contains(&y) && (x0..x1).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            },
            &mut acc,
        );
    }

    // Smoothed noise blobs: white noise blurred by repeated box means.
    {
        let amp = rng.gen_range(0.1..0.4);
        let mut noise = Tensor::<T>::from_fn(shape, |_, _, _, _| T::from_f64(rng.gen_range(0.0..1.0)));
        let radius = (side / 16).clamp(1, side / 2);
        for _ in 0..3 {
            noise = box_mean_forward(&noise, radius);
        }
        for (a, v) in acc.iter_mut().zip(noise.data()) {
            *a += amp * Element::to_f64(*v);
        }
    }

    // Normalize to a random peak at most 0.8.
    let peak_target = rng.gen_range(0.4..0.8);
    let max = acc.iter().copied().fold(f64::MIN, f64::max).max(1e-9);
    Tensor::new(
        shape,
        acc.iter()
            .map(|&v| T::from_f64((v.max(0.0) / max) * peak_target))
            .collect(),
    )
}

/// Average non-overlapping `s x s` blocks.
pub fn box_downsample<T: Element>(x: &Tensor<T>, s: usize) -> Tensor<T> {
    let xs = x.shape();
    debug_assert!(xs.h % s == 0 && xs.w % s == 0);
    let out_shape = Shape::new(xs.n, xs.c, xs.h / s, xs.w / s);
    let norm = T::from_usize(s * s);
    Tensor::from_fn(out_shape, |n, c, y, xx| {
        let mut acc = T::zero();
        for dy in 0..s {
            for dx in 0..s {
                acc += x.at(n, c, y * s + dy, xx * s + dx);
            }
        }
        acc / norm
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let a = synth_dataset::<f32>(7, 3, 2, 16).unwrap();
        let b = synth_dataset::<f32>(7, 3, 2, 16).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.lr_sdr.data().data(), pb.lr_sdr.data().data());
            assert_eq!(pa.hr_hdr.data().data(), pb.hr_hdr.data().data());
        }
    }

    #[test]
    fn different_indices_differ() {
        let set = synth_dataset::<f32>(7, 2, 2, 16).unwrap();
        assert_ne!(set[0].hr_hdr.data().data(), set[1].hr_hdr.data().data());
    }

    #[test]
    fn values_normalized_and_ratio_exact() {
        for pair in synth_dataset::<f64>(3, 4, 4, 12).unwrap() {
            let lr = pair.lr_sdr.data();
            let hr = pair.hr_hdr.data();
            assert!(lr.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(hr.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(hr.shape().h, 4 * lr.shape().h);
            assert_eq!(hr.shape().w, 4 * lr.shape().w);
        }
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(synth_dataset::<f32>(1, 1, 3, 16).is_err());
    }

    #[test]
    fn downsample_averages_blocks() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, xx| (y * 4 + xx) as f64);
        let d = box_downsample(&x, 2);
        assert_eq!(d.at(0, 0, 0, 0), (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        assert_eq!(d.at(0, 0, 1, 1), (10.0 + 11.0 + 14.0 + 15.0) / 4.0);
    }
}
