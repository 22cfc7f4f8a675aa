//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | field          | type                          |
//! |----------------|-------------------------------|
//! | magic          | 8 bytes `GRADCKPT`            |
//! | format version | u32 (currently 1)             |
//! | op-set version | u32                           |
//! | entry count    | u32                           |
//! | per entry      | u32 name length, UTF-8 name, u32 rank, rank × u64 dims, f64 values |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{GradError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"GRADCKPT";
const FORMAT_VERSION: u32 = 1;

/// Version of the operator set the stored parameters were trained with.
pub const OP_SET_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> GradError {
    GradError::Checkpoint(msg.into())
}

pub fn write_checkpoint(params: &ParamStore, mut out: impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&OP_SET_VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(mut input: impl Read) -> Result<ParamStore> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let format = read_u32(&mut input)?;
    if format != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {format}")));
    }
    let ops = read_u32(&mut input)?;
    if ops != OP_SET_VERSION {
        return Err(bad(format!("op-set version {ops}, expected {OP_SET_VERSION}")));
    }
    let count = read_u32(&mut input)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name).map_err(|_| bad("truncated"))?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        let rank = read_u32(&mut input)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| read_u64(&mut input).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    read_checkpoint(fs::read(path)?.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut p = ParamStore::new();
        p.insert("conv.w", Tensor::new(vec![2, 1, 3, 3], (0..18).map(|i| i as f64 / 7.0).collect()).unwrap());
        p.insert("gamma", Tensor::scalar(-1e-300));
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn rejects_corruption() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::scalar(1.0));
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
