//! Transfer functions, YUV/RGB matrices and bit-depth quantization.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

// SMPTE ST 2084 constants.
const PQ_M1: f64 = 2610.0 / 16384.0;
const PQ_M2: f64 = 2523.0 / 4096.0 * 128.0;
const PQ_C1: f64 = 3424.0 / 4096.0;
const PQ_C2: f64 = 2413.0 / 4096.0 * 32.0;
const PQ_C3: f64 = 2392.0 / 4096.0 * 32.0;

/// PQ OETF on a luminance fraction in `[0, 1]` (1.0 = peak, 10000 cd/m2).
pub fn pq_oetf_scalar(linear: f64) -> f64 {
    let p = linear.powf(PQ_M1);
    ((PQ_C1 + PQ_C2 * p) / (1.0 + PQ_C3 * p)).powf(PQ_M2)
}

/// PQ EOTF, exact inverse of [`pq_oetf_scalar`] on `[0, 1]`.
pub fn pq_eotf_scalar(signal: f64) -> f64 {
    let p = signal.powf(1.0 / PQ_M2);
    let num = (p - PQ_C1).max(0.0);
    let den = PQ_C2 - PQ_C3 * p;
    (num / den).powf(1.0 / PQ_M1)
}

/// Elementwise PQ encode. Out-of-range inputs are clamped to `[0, 1]`; the
/// returned counter reports how many values needed clamping.
pub fn pq_oetf<T: Element>(linear: &Tensor<T>) -> (Tensor<T>, usize) {
    apply_clamped(linear, pq_oetf_scalar)
}

/// Elementwise PQ decode with the same clamping contract.
pub fn pq_eotf<T: Element>(signal: &Tensor<T>) -> (Tensor<T>, usize) {
    apply_clamped(signal, pq_eotf_scalar)
}

fn apply_clamped<T: Element>(t: &Tensor<T>, f: impl Fn(f64) -> f64) -> (Tensor<T>, usize) {
    let mut clamped = 0usize;
    let data = t
        .data()
        .iter()
        .map(|&v| {
            let mut x = v.to_f64();
            if !(0.0..=1.0).contains(&x) {
                clamped += 1;
                x = x.clamp(0.0, 1.0);
            }
            T::from_f64(f(x))
        })
        .collect();
    (Tensor::new(t.shape(), data), clamped)
}

/// YUV/RGB matrix selector.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ColorMatrix {
    Bt709,
    Bt2020,
}

impl ColorMatrix {
    fn luma_weights(self) -> (f64, f64) {
        // (kr, kb); kg = 1 - kr - kb.
        match self {
            ColorMatrix::Bt709 => (0.2126, 0.0722),
            ColorMatrix::Bt2020 => (0.2627, 0.0593),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ColorMatrix::Bt709 => "BT709",
            ColorMatrix::Bt2020 => "BT2020",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "BT709" => Ok(ColorMatrix::Bt709),
            "BT2020" => Ok(ColorMatrix::Bt2020),
            other => Err(Error::invalid(
                "color_matrix",
                format!("unknown matrix {other:?} (want BT709|BT2020)"),
            )),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ConvertDirection {
    RgbToYuv,
    YuvToRgb,
}

/// Full-range YUV <-> RGB conversion on a `(n, 3, h, w)` tensor. Chroma
/// planes carry a +0.5 offset so neutral colors sit at 0.5.
pub fn yuv_rgb_convert<T: Element>(
    img: &Tensor<T>,
    matrix: ColorMatrix,
    direction: ConvertDirection,
) -> Result<Tensor<T>> {
    let s = img.shape();
    if s.c != 3 {
        return Err(Error::shape(
            "yuv_rgb_convert",
            Shape::new(s.n, 3, s.h, s.w),
            s,
        ));
    }
    let (kr, kb) = matrix.luma_weights();
    let kg = 1.0 - kr - kb;
    let plane = s.h * s.w;
    let mut out = vec![T::zero(); s.count()];
    for n in 0..s.n {
        let base = n * 3 * plane;
        for i in 0..plane {
            let (c0, c1, c2) = (
                img.data()[base + i].to_f64(),
                img.data()[base + plane + i].to_f64(),
                img.data()[base + 2 * plane + i].to_f64(),
            );
            let (o0, o1, o2) = match direction {
                ConvertDirection::RgbToYuv => {
                    let (r, g, b) = (c0, c1, c2);
                    let y = kr * r + kg * g + kb * b;
                    let u = (b - y) / (2.0 * (1.0 - kb)) + 0.5;
                    let v = (r - y) / (2.0 * (1.0 - kr)) + 0.5;
                    (y, u, v)
                }
                ConvertDirection::YuvToRgb => {
                    let (y, u, v) = (c0, c1, c2);
                    let b = y + (u - 0.5) * 2.0 * (1.0 - kb);
                    let r = y + (v - 0.5) * 2.0 * (1.0 - kr);
                    let g = (y - kr * r - kb * b) / kg;
                    (r, g, b)
                }
            };
            out[base + i] = T::from_f64(o0);
            out[base + plane + i] = T::from_f64(o1);
            out[base + 2 * plane + i] = T::from_f64(o2);
        }
    }
    Ok(Tensor::new(s, out))
}

/// Round normalized values to integer codes: `round(x * (2^bits - 1))`.
pub fn quantize<T: Element>(img: &Tensor<T>, bits: u32) -> Result<Vec<u16>> {
    if bits != 8 && bits != 10 {
        return Err(Error::invalid("quantize", format!("bits must be 8 or 10, got {bits}")));
    }
    let max = ((1u32 << bits) - 1) as f64;
    Ok(img
        .data()
        .iter()
        .map(|&v| (v.to_f64().clamp(0.0, 1.0) * max).round() as u16)
        .collect())
}

/// Inverse of [`quantize`]: codes back to normalized values.
pub fn dequantize<T: Element>(codes: &[u16], shape: Shape, bits: u32) -> Result<Tensor<T>> {
    if bits != 8 && bits != 10 {
        return Err(Error::invalid("dequantize", format!("bits must be 8 or 10, got {bits}")));
    }
    if codes.len() != shape.count() {
        return Err(Error::shape("dequantize", shape, format!("{} codes", codes.len())));
    }
    let max = ((1u32 << bits) - 1) as f64;
    Ok(Tensor::new(
        shape,
        codes
            .iter()
            .map(|&c| T::from_f64(c as f64 / max))
            .collect(),
    ))
}

/// Quantize-dequantize round trip at the given bit depth.
pub fn requantize<T: Element>(img: &Tensor<T>, bits: u32) -> Result<Tensor<T>> {
    dequantize(&quantize(img, bits)?, img.shape(), bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init::seeded;
    use rand::Rng;

    #[test]
    fn pq_endpoints() {
        // The curve maps 0 to c1^m2 (~7.3e-7) and 1 to exactly 1.
        assert!(pq_oetf_scalar(0.0).abs() < 1e-6);
        assert!((pq_oetf_scalar(1.0) - 1.0).abs() < 1e-12);
        assert_eq!(pq_eotf_scalar(0.0), 0.0);
    }

    #[test]
    fn pq_round_trip_is_tight() {
        let mut rng = seeded(5);
        let mut max_err = 0.0f64;
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(0.0..1.0);
            max_err = max_err.max((pq_eotf_scalar(pq_oetf_scalar(x)) - x).abs());
        }
        assert!(max_err < 1e-10, "max abs err {max_err}");
    }

    #[test]
    fn pq_clamps_and_counts() {
        let t = Tensor::<f64>::new(Shape::new(1, 1, 1, 3), vec![-0.5, 0.5, 1.5]);
        let (enc, clamped) = pq_oetf(&t);
        assert_eq!(clamped, 2);
        assert!(enc.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn neutral_yuv_is_achromatic() {
        let t = Tensor::<f64>::from_fn(Shape::new(1, 3, 1, 1), |_, c, _, _| {
            if c == 0 {
                0.5
            } else {
                0.5
            }
        });
        for m in [ColorMatrix::Bt709, ColorMatrix::Bt2020] {
            let rgb = yuv_rgb_convert(&t, m, ConvertDirection::YuvToRgb).unwrap();
            for &v in rgb.data() {
                assert!((v - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matrix_round_trip() {
        let mut rng = seeded(6);
        let img = Tensor::<f64>::from_fn(Shape::new(2, 3, 4, 4), |_, _, _, _| {
            rng.gen_range(0.0..1.0)
        });
        for m in [ColorMatrix::Bt709, ColorMatrix::Bt2020] {
            let yuv = yuv_rgb_convert(&img, m, ConvertDirection::RgbToYuv).unwrap();
            let back = yuv_rgb_convert(&yuv, m, ConvertDirection::YuvToRgb).unwrap();
            for (a, b) in back.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bt709_and_bt2020_differ_on_saturated_input() {
        let sat = Tensor::<f64>::from_fn(Shape::new(1, 3, 1, 1), |_, c, _, _| {
            if c == 0 {
                1.0
            } else {
                0.0
            }
        });
        let a = yuv_rgb_convert(&sat, ColorMatrix::Bt709, ConvertDirection::RgbToYuv).unwrap();
        let b = yuv_rgb_convert(&sat, ColorMatrix::Bt2020, ConvertDirection::RgbToYuv).unwrap();
        let max_diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-3);
    }

    #[test]
    fn quantize_hand_values() {
        let one = Tensor::<f64>::scalar(1.0);
        assert_eq!(quantize(&one, 8).unwrap(), vec![255]);
        let half = Tensor::<f64>::scalar(0.5);
        // 0.5 * 1023 = 511.5, round half up -> 512.
        assert_eq!(quantize(&half, 10).unwrap(), vec![512]);
        assert!(quantize(&one, 12).is_err());
    }

    #[test]
    fn all_ten_bit_codes_survive_round_trip() {
        let codes: Vec<u16> = (0..1024).collect();
        let shape = Shape::new(1, 1, 32, 32);
        let t = dequantize::<f64>(&codes, shape, 10).unwrap();
        assert_eq!(quantize(&t, 10).unwrap(), codes);
    }

    #[test]
    fn full_color_chain_error_bound() {
        // Linear RGB -> PQ -> BT.2020 YUV -> 10-bit codes, then all the way
        // back out and in again: at the code-value interface the loop stays
        // within one quantization step per channel.
        let mut rng = seeded(8);
        let img = Tensor::<f64>::from_fn(Shape::new(1, 3, 8, 8), |_, _, _, _| {
            rng.gen_range(0.0..1.0)
        });
        let (pq, _) = pq_oetf(&img);
        let yuv = yuv_rgb_convert(&pq, ColorMatrix::Bt2020, ConvertDirection::RgbToYuv).unwrap();
        let q = requantize(&yuv, 10).unwrap();
        // Decode to linear light and re-encode through the same chain.
        let rgb = yuv_rgb_convert(&q, ColorMatrix::Bt2020, ConvertDirection::YuvToRgb).unwrap();
        let (lin, _) = pq_eotf(&rgb);
        let (pq2, _) = pq_oetf(&lin);
        let yuv2 = yuv_rgb_convert(&pq2, ColorMatrix::Bt2020, ConvertDirection::RgbToYuv).unwrap();
        for (a, b) in yuv2.data().iter().zip(yuv.data()) {
            assert!((a - b).abs() <= 1.0 / 1023.0, "{a} vs {b}");
        }
    }
}
