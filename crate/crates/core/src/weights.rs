//! Flat binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   b"GNXW\0\0\0\x01"
//! meta_len   u32       length of the UTF-8 JSON metadata blob
//! meta       meta_len  architecture description (JSON)
//! count      u32       number of tensors
//! shapes     count × (rows u32, cols u32)
//! values     Σ rows·cols × f64, row-major, tensors in shape-list order
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"GNXW\0\0\0\x01";

pub fn write_weights<W: Write>(mut w: W, meta: &str, tensors: &[&Tensor]) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
    }
    for t in tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_weights<R: Read>(mut r: R) -> Result<(String, Vec<Tensor>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Weights("bad magic".into()));
    }
    let meta_len = read_u32(&mut r)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let meta = String::from_utf8(meta).map_err(|_| Error::Weights("metadata is not UTF-8".into()))?;

    let count = read_u32(&mut r)? as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        shapes.push((read_u32(&mut r)? as usize, read_u32(&mut r)? as usize));
    }
    let mut tensors = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for (rows, cols) in shapes {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push(Tensor::from_vec(rows, cols, data)?);
    }
    Ok((meta, tensors))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
