//! Image and dataset file formats: patch archives (tensor snapshots plus a
//! JSON manifest), 8/16-bit PNG, and raw planar YUV with a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::snapshot::{read_tensor, write_tensor};
use crate::tensor::{Element, Shape, Tensor};

use super::color::{dequantize, quantize, ColorMatrix};
use super::{Colorimetry, ImageYuv, PatchPair};

/// Patch-archive manifest, stored as `manifest.json` in the archive dir.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct ArchiveManifest {
    pub seed: u64,
    pub scale: usize,
    pub count: usize,
    pub lr_size: usize,
    pub lr_colorimetry: String,
    pub hr_colorimetry: String,
}

fn pair_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("pair_{index:04}.lr.jsit")),
        dir.join(format!("pair_{index:04}.hr.jsit")),
    )
}

/// Write a patch archive. Snapshots are stored at 32-bit interchange
/// precision regardless of the in-memory element type.
pub fn save_archive<T: Element>(
    dir: &Path,
    pairs: &[PatchPair<T>],
    seed: u64,
    lr_size: usize,
) -> Result<ArchiveManifest> {
    fs::create_dir_all(dir)?;
    let scale = pairs.first().map_or(0, |p| p.scale);
    for (i, pair) in pairs.iter().enumerate() {
        let (lr, hr) = pair_paths(dir, i);
        write_tensor(&lr, &pair.lr_sdr.data().cast::<f32>())?;
        write_tensor(&hr, &pair.hr_hdr.data().cast::<f32>())?;
    }
    let manifest = ArchiveManifest {
        seed,
        scale,
        count: pairs.len(),
        lr_size,
        lr_colorimetry: Colorimetry::Bt709Sdr8.tag().to_string(),
        hr_colorimetry: Colorimetry::Bt2020Pq10.tag().to_string(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<ArchiveManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::BadFormat {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_archive<T: Element>(dir: &Path) -> Result<(Vec<PatchPair<T>>, ArchiveManifest)> {
    let manifest = load_manifest(dir)?;
    let lr_tag = Colorimetry::from_tag(&manifest.lr_colorimetry)?;
    let hr_tag = Colorimetry::from_tag(&manifest.hr_colorimetry)?;
    let mut pairs = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let (lr, hr) = pair_paths(dir, i);
        let lr_t = read_tensor::<T>(&lr)?;
        let hr_t = read_tensor::<T>(&hr)?;
        pairs.push(PatchPair::new(
            ImageYuv::new(lr_t, lr_tag)?,
            ImageYuv::new(hr_t, hr_tag)?,
            manifest.scale,
        )?);
    }
    Ok((pairs, manifest))
}

fn expect_single_rgb(op: &'static str, t: &Tensor<impl Element>) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape(op, "1x3xHxW", s));
    }
    Ok((s.h, s.w))
}

/// Write a `(1, 3, h, w)` tensor of normalized values as an 8-bit RGB PNG.
pub fn write_png8<T: Element>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let (h, w) = expect_single_rgb("write_png8", img)?;
    let codes = quantize(img, 8)?;
    let plane = h * w;
    let mut interleaved = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            interleaved.push(codes[c * plane + i] as u8);
        }
    }
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(w as u32, h as u32, interleaved).expect("sized buffer");
    buf.save(path).map_err(|e| Error::BadFormat {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Write normalized values as a 16-bit RGB PNG carrying 10-bit codes
/// left-justified (code * 64).
pub fn write_png16_10bit<T: Element>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let (h, w) = expect_single_rgb("write_png16", img)?;
    let codes = quantize(img, 10)?;
    let plane = h * w;
    let mut interleaved = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            interleaved.push(codes[c * plane + i] << 6);
        }
    }
    let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(w as u32, h as u32, interleaved).expect("sized buffer");
    image::DynamicImage::ImageRgb16(buf)
        .save(path)
        .map_err(|e| Error::BadFormat {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

/// Read an 8- or 16-bit RGB PNG back to normalized values. 16-bit samples
/// are interpreted as left-justified 10-bit codes.
pub fn read_png<T: Element>(path: &Path) -> Result<(Tensor<T>, u32)> {
    let img = image::open(path).map_err(|e| Error::BadFormat {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let shape = Shape::new(1, 3, h, w);
    match img {
        image::DynamicImage::ImageRgb16(buf) => {
            let mut codes = vec![0u16; plane * 3];
            for (i, px) in buf.pixels().enumerate() {
                for c in 0..3 {
                    codes[c * plane + i] = px.0[c] >> 6;
                }
            }
            Ok((dequantize(&codes, shape, 10)?, 10))
        }
        other => {
            let rgb = other.to_rgb8();
            let mut codes = vec![0u16; plane * 3];
            for (i, px) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    codes[c * plane + i] = px.0[c] as u16;
                }
            }
            Ok((dequantize(&codes, shape, 8)?, 8))
        }
    }
}

/// Sidecar header for raw planar YUV files.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct YuvHeader {
    pub width: usize,
    pub height: usize,
    pub bits: u32,
    pub matrix: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write raw planar YUV (Y then U then V). 8-bit codes as bytes, 10-bit as
/// little-endian u16 with right-justified codes. A JSON sidecar carries the
/// geometry, bit depth and matrix.
pub fn write_raw_yuv<T: Element>(path: &Path, img: &ImageYuv<T>) -> Result<()> {
    let (h, w) = expect_single_rgb("write_raw_yuv", img.data())?;
    let bits = img.colorimetry().bits();
    let codes = quantize(img.data(), bits)?;
    let mut bytes = Vec::with_capacity(codes.len() * 2);
    for &c in &codes {
        if bits == 8 {
            bytes.push(c as u8);
        } else {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    let matrix = match img.colorimetry() {
        Colorimetry::Bt709Sdr8 => ColorMatrix::Bt709,
        Colorimetry::Bt2020Pq10 => ColorMatrix::Bt2020,
    };
    let header = YuvHeader {
        width: w,
        height: h,
        bits,
        matrix: matrix.tag().to_string(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_raw_yuv<T: Element>(path: &Path) -> Result<ImageYuv<T>> {
    let sidecar = sidecar_path(path);
    let header: YuvHeader =
        serde_json::from_str(&fs::read_to_string(&sidecar).map_err(|e| Error::BadFormat {
            path: sidecar.display().to_string(),
            message: e.to_string(),
        })?)?;
    let matrix = ColorMatrix::from_tag(&header.matrix)?;
    let colorimetry = match (header.bits, matrix) {
        (8, ColorMatrix::Bt709) => Colorimetry::Bt709Sdr8,
        (10, ColorMatrix::Bt2020) => Colorimetry::Bt2020Pq10,
        (bits, m) => {
            return Err(Error::invalid(
                "read_raw_yuv",
                format!("unsupported combination: {bits}-bit {}", m.tag()),
            ))
        }
    };
    let bytes = fs::read(path)?;
    let plane = header.width * header.height;
    let expected = plane * 3 * if header.bits == 8 { 1 } else { 2 };
    if bytes.len() != expected {
        return Err(Error::BadFormat {
            path: path.display().to_string(),
            message: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let codes: Vec<u16> = if header.bits == 8 {
        bytes.iter().map(|&b| b as u16).collect()
    } else {
        bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    };
    let shape = Shape::new(1, 3, header.height, header.width);
    ImageYuv::new(dequantize(&codes, shape, header.bits)?, colorimetry)
}

#[cfg(test)]
mod tests {
    use super::super::synth::synth_dataset;
    use super::*;

    #[test]
    fn archive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = synth_dataset::<f32>(5, 2, 2, 16).unwrap();
        save_archive(dir.path(), &pairs, 5, 16).unwrap();
        let (back, manifest) = load_archive::<f32>(dir.path()).unwrap();
        assert_eq!(manifest.count, 2);
        assert_eq!(manifest.scale, 2);
        for (a, b) in back.iter().zip(&pairs) {
            assert_eq!(a.lr_sdr.data().data(), b.lr_sdr.data().data());
            assert_eq!(a.hr_hdr.data().data(), b.hr_hdr.data().data());
        }
    }

    #[test]
    fn png16_preserves_ten_bit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let t = Tensor::<f64>::from_fn(Shape::new(1, 3, 4, 5), |_, c, y, x| {
            ((c * 341 + y * 67 + x * 13) % 1024) as f64 / 1023.0
        });
        write_png16_10bit(&path, &t).unwrap();
        let (back, bits) = read_png::<f64>(&path).unwrap();
        assert_eq!(bits, 10);
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn png8_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img8.png");
        let t = Tensor::<f32>::from_fn(Shape::new(1, 3, 3, 3), |_, c, y, x| {
            ((c * 89 + y * 31 + x * 7) % 256) as f32 / 255.0
        });
        write_png8(&path, &t).unwrap();
        let (back, bits) = read_png::<f32>(&path).unwrap();
        assert_eq!(bits, 8);
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn raw_yuv_round_trip_both_depths() {
        let dir = tempfile::tempdir().unwrap();
        for pair in synth_dataset::<f32>(9, 1, 2, 12).unwrap() {
            let p8 = dir.path().join("a.yuv");
            write_raw_yuv(&p8, &pair.lr_sdr).unwrap();
            let back = read_raw_yuv::<f32>(&p8).unwrap();
            assert_eq!(back.data().data(), pair.lr_sdr.data().data());
            assert_eq!(back.colorimetry(), Colorimetry::Bt709Sdr8);

            let p10 = dir.path().join("b.yuv");
            write_raw_yuv(&p10, &pair.hr_hdr).unwrap();
            let back = read_raw_yuv::<f32>(&p10).unwrap();
            assert_eq!(back.data().data(), pair.hr_hdr.data().data());
            assert_eq!(back.colorimetry(), Colorimetry::Bt2020Pq10);
        }
    }

    #[test]
    fn raw_yuv_rejects_bad_matrix_tag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.yuv");
        std::fs::write(&path, vec![0u8; 3 * 4]).unwrap();
        std::fs::write(
            sidecar_path(&path),
            r#"{"width":2,"height":2,"bits":8,"matrix":"BT601"}"#,
        )
        .unwrap();
        assert!(read_raw_yuv::<f32>(&path).is_err());
    }
}
