//! Tensor snapshot files.
//!
//! Layout: magic `JSIT`, version `u32`, shape `4 x u32`, then the values as
//! a flat little-endian array. Version 1 stores 32-bit floats (the interchange
//! format used by checkpoints and golden tests); version 2 stores 64-bit
//! floats so double-precision checkpoints can round-trip losslessly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dtype, Element, Shape, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"JSIT";
const VERSION_F32: u32 = 1;
const VERSION_F64: u32 = 2;

pub fn write_tensor<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let version = match T::DTYPE {
        Dtype::F32 => VERSION_F32,
        Dtype::F64 => VERSION_F64,
    };
    w.write_all(&version.to_le_bytes())?;
    let s = t.shape();
    for dim in [s.n, s.c, s.h, s.w] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    match T::DTYPE {
        Dtype::F32 => {
            for v in t.data() {
                w.write_all(&(Element::to_f64(*v) as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for v in t.data() {
                w.write_all(&Element::to_f64(*v).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let bad = |message: &str| Error::BadFormat {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic (expected JSIT)"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION_F32 && version != VERSION_F64 {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        r.read_exact(&mut u32buf)?;
        *d = u32::from_le_bytes(u32buf) as usize;
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let count = shape.count();
    let mut data = Vec::with_capacity(count);
    if version == VERSION_F32 {
        let mut buf = vec![0u8; count * 4];
        r.read_exact(&mut buf).map_err(|_| bad("truncated data"))?;
        for chunk in buf.chunks_exact(4) {
            data.push(T::from_f64(
                f32::from_le_bytes(chunk.try_into().unwrap()) as f64
            ));
        }
    } else {
        let mut buf = vec![0u8; count * 8];
        r.read_exact(&mut buf).map_err(|_| bad("truncated data"))?;
        for chunk in buf.chunks_exact(8) {
            data.push(T::from_f64(f64::from_le_bytes(chunk.try_into().unwrap())));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok(Tensor::new(shape, data))
}
