//! Flat binary tensor format used for checkpoints and golden files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                          |
//! |--------------|----------------------------------|
//! | 4            | magic `DWT0`                     |
//! | 4            | `u32` rank                       |
//! | 4 · rank     | `u32` extents                    |
//! | 8 · numel    | `f64` payload, row-major         |

use std::io::{Read, Write};
use std::path::Path;

use super::{Tensor, MAX_RANK};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"DWT0";

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if bytes.len() < pos + n {
            return Err(Error::Parse {
                offset: bytes.len(),
                message: format!("truncated {what}: need {n} bytes at offset {pos}"),
            });
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let magic = take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("expected magic \"DWT0\", found {:?}", String::from_utf8_lossy(magic)),
        });
    }
    let rank = u32::from_le_bytes(take(4, "rank")?.try_into().unwrap()) as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Parse {
            offset: 4,
            message: format!("rank {rank} not in 1..={MAX_RANK}"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(take(4, "extent")?.try_into().unwrap()) as usize);
    }
    let numel: usize = shape.iter().product();
    let payload = take(8 * numel, "payload")?;
    let data = payload
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if pos != bytes.len() {
        return Err(Error::Parse {
            offset: pos,
            message: format!("{} trailing bytes", bytes.len() - pos),
        });
    }
    Tensor::new(&shape, data)
}

pub fn save<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
