//! Image-domain pipeline: guided-filter base/detail decomposition, PQ and
//! YUV/RGB color conversions, bit-depth handling, the synthetic SDR/HDR patch
//! generator and image/archive I/O.

pub mod color;
pub mod guided;
pub mod io;
pub mod synth;

pub use guided::{decompose, decompose_value, guided_filter, DecompMode, Decomposition};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Colorimetry tag of a YUV image in normalized code values.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Colorimetry {
    /// BT.709 primaries, SDR gamma, 8-bit codes.
    Bt709Sdr8,
    /// BT.2020 primaries, PQ transfer, 10-bit codes.
    Bt2020Pq10,
}

impl Colorimetry {
    pub fn bits(self) -> u32 {
        match self {
            Colorimetry::Bt709Sdr8 => 8,
            Colorimetry::Bt2020Pq10 => 10,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Colorimetry::Bt709Sdr8 => "BT709_SDR_8bit",
            Colorimetry::Bt2020Pq10 => "BT2020_PQ_10bit",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "BT709_SDR_8bit" => Ok(Colorimetry::Bt709Sdr8),
            "BT2020_PQ_10bit" => Ok(Colorimetry::Bt2020Pq10),
            other => Err(Error::invalid(
                "colorimetry",
                format!("unknown tag {other:?}"),
            )),
        }
    }
}

/// A 3-channel YUV image in normalized `[0, 1]` code values.
pub struct ImageYuv<T: Element> {
    data: Tensor<T>,
    colorimetry: Colorimetry,
}

impl<T: Element> Clone for ImageYuv<T> {
    fn clone(&self) -> Self {
        ImageYuv {
            data: self.data.clone(),
            colorimetry: self.colorimetry,
        }
    }
}

impl<T: Element> ImageYuv<T> {
    /// Wrap a `(n, 3, h, w)` tensor; values must already be in `[0, 1]`.
    pub fn new(data: Tensor<T>, colorimetry: Colorimetry) -> Result<Self> {
        if data.shape().c != 3 {
            return Err(Error::invalid(
                "image_yuv",
                format!("expected 3 channels, got {}", data.shape().c),
            ));
        }
        if data
            .data()
            .iter()
            .any(|&v| v < T::zero() || v > T::one() || !v.is_finite())
        {
            return Err(Error::invalid("image_yuv", "values outside [0, 1]"));
        }
        Ok(ImageYuv { data, colorimetry })
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn colorimetry(&self) -> Colorimetry {
        self.colorimetry
    }
}

/// An aligned (LR SDR, HR HDR) training sample.
pub struct PatchPair<T: Element> {
    pub lr_sdr: ImageYuv<T>,
    pub hr_hdr: ImageYuv<T>,
    pub scale: usize,
}

impl<T: Element> Clone for PatchPair<T> {
    fn clone(&self) -> Self {
        PatchPair {
            lr_sdr: self.lr_sdr.clone(),
            hr_hdr: self.hr_hdr.clone(),
            scale: self.scale,
        }
    }
}

impl<T: Element> PatchPair<T> {
    pub fn new(lr_sdr: ImageYuv<T>, hr_hdr: ImageYuv<T>, scale: usize) -> Result<Self> {
        let lr = lr_sdr.data().shape();
        let hr = hr_hdr.data().shape();
        if hr.h != scale * lr.h || hr.w != scale * lr.w {
            return Err(Error::shape(
                "patch_pair",
                format!("HR {}x{}", scale * lr.h, scale * lr.w),
                format!("{}x{}", hr.h, hr.w),
            ));
        }
        Ok(PatchPair {
            lr_sdr,
            hr_hdr,
            scale,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn image_rejects_out_of_range() {
        let t = Tensor::<f64>::full(Shape::new(1, 3, 2, 2), 1.5);
        assert!(ImageYuv::new(t, Colorimetry::Bt709Sdr8).is_err());
        let ok = Tensor::<f64>::full(Shape::new(1, 3, 2, 2), 0.5);
        assert!(ImageYuv::new(ok, Colorimetry::Bt709Sdr8).is_ok());
    }

    #[test]
    fn pair_enforces_exact_scale_ratio() {
        let lr = ImageYuv::new(
            Tensor::<f64>::zeros(Shape::new(1, 3, 4, 4)),
            Colorimetry::Bt709Sdr8,
        )
        .unwrap();
        let hr_ok = ImageYuv::new(
            Tensor::<f64>::zeros(Shape::new(1, 3, 8, 8)),
            Colorimetry::Bt2020Pq10,
        )
        .unwrap();
        let hr_bad = ImageYuv::new(
            Tensor::<f64>::zeros(Shape::new(1, 3, 9, 8)),
            Colorimetry::Bt2020Pq10,
        )
        .unwrap();
        assert!(PatchPair::new(lr.clone(), hr_ok, 2).is_ok());
        assert!(PatchPair::new(lr, hr_bad, 2).is_err());
    }

    #[test]
    fn colorimetry_tags_round_trip() {
        for c in [Colorimetry::Bt709Sdr8, Colorimetry::Bt2020Pq10] {
            assert_eq!(Colorimetry::from_tag(c.tag()).unwrap(), c);
        }
        assert!(Colorimetry::from_tag("BT601").is_err());
    }
}
