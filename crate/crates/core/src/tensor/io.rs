//! `TNT1` binary tensor files.
//!
//! Layout: the four magic bytes `TNT1`, a `u8` order `N`, `N` little-endian
//! `u64` extents, then the entries as little-endian IEEE-754 `f64` in
//! row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::DenseTensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"TNT1";

pub fn write_tensor<W: Write>(mut w: W, t: &DenseTensor) -> Result<()> {
    let order = u8::try_from(t.order())
        .map_err(|_| Error::Format(format!("order {} does not fit in a byte", t.order())))?;
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[order])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<DenseTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut order = [0u8; 1];
    r.read_exact(&mut order)?;
    let mut shape = Vec::with_capacity(order[0] as usize);
    let mut buf = [0u8; 8];
    for _ in 0..order[0] {
        r.read_exact(&mut buf)?;
        let d = usize::try_from(u64::from_le_bytes(buf))
            .map_err(|_| Error::Format("extent does not fit in usize".into()))?;
        shape.push(d);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    DenseTensor::new(shape, data)
}

pub fn write_tensor_file(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_tensor(BufWriter::new(File::create(path)?), t)
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<DenseTensor> {
    read_tensor(BufReader::new(File::open(path)?))
}
