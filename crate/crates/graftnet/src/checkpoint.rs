//! Binary checkpoints for named parameter collections.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   10 bytes   "GRAFTCKPT1"
//! count   u32        number of tensors
//! per tensor:
//!   name_len  u16
//!   name      name_len bytes, UTF-8
//!   rank      u8
//!   dims      rank x u32
//!   values    product(dims) x f64
//! ```
//!
//! Values round-trip bitwise: the byte encoding is the IEEE bit pattern,
//! so a reloaded checkpoint compares equal down to NaN payloads and signed
//! zeros.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::NamedTensors;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 10] = b"GRAFTCKPT1";

fn format_err(what: impl Into<String>) -> Error {
    Error::Format(what.into())
}

fn read_exactly<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            format_err(format!("checkpoint truncated while reading {what}"))
        } else {
            Error::io("checkpoint stream", e)
        }
    })
}

fn read_u16<R: Read>(r: &mut R, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exactly(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exactly(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Serializes the collection into any writer.
pub fn write_checkpoint<W: Write>(w: &mut W, params: &NamedTensors) -> Result<()> {
    let io_err = |e| Error::io("checkpoint stream", e);
    w.write_all(MAGIC).map_err(io_err)?;
    let count = u32::try_from(params.len())
        .map_err(|_| format_err("too many tensors for checkpoint format"))?;
    w.write_all(&count.to_le_bytes()).map_err(io_err)?;
    for (name, tensor) in params {
        let name_len = u16::try_from(name.len())
            .map_err(|_| format_err(format!("tensor name too long: {name}")))?;
        w.write_all(&name_len.to_le_bytes()).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        let rank = u8::try_from(tensor.rank())
            .map_err(|_| format_err(format!("tensor rank too large: {name}")))?;
        w.write_all(&[rank]).map_err(io_err)?;
        for &dim in tensor.shape() {
            let dim = u32::try_from(dim)
                .map_err(|_| format_err(format!("dimension too large in {name}")))?;
            w.write_all(&dim.to_le_bytes()).map_err(io_err)?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

/// Parses a checkpoint from any reader. Malformed or truncated input is a
/// format error; underlying stream failures surface as io errors.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<NamedTensors> {
    let mut magic = [0u8; 10];
    read_exactly(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(format_err("not a checkpoint: bad magic"));
    }
    let count = read_u32(r, "tensor count")? as usize;
    let mut params = NamedTensors::new();
    for i in 0..count {
        let name_len = read_u16(r, "name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exactly(r, &mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| format_err(format!("tensor name {i} is not valid UTF-8")))?;
        let mut rank_byte = [0u8; 1];
        read_exactly(r, &mut rank_byte, "rank")?;
        let rank = rank_byte[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let dim = read_u32(r, "dimension")? as usize;
            if dim == 0 {
                return Err(format_err(format!("zero dimension in tensor {name}")));
            }
            numel = numel
                .checked_mul(dim)
                .ok_or_else(|| format_err(format!("tensor {name} overflows element count")))?;
            shape.push(dim);
        }
        // Read in bounded chunks so a lying header fails at the first
        // missing byte instead of reserving the claimed size up front.
        let mut data = Vec::new();
        let mut remaining = numel;
        let mut buf = vec![0u8; 8 * 8192];
        while remaining > 0 {
            let take = remaining.min(8192);
            let bytes = &mut buf[..take * 8];
            read_exactly(r, bytes, "tensor values")?;
            for chunk in bytes.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            remaining -= take;
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| format_err(format!("tensor {name} malformed: {e}")))?;
        params
            .push(&name, tensor)
            .map_err(|_| format_err(format!("duplicate tensor name {name}")))?;
    }
    Ok(params)
}

/// Writes a checkpoint file, creating or replacing it.
pub fn save_checkpoint(path: impl AsRef<Path>, params: &NamedTensors) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, params)?;
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NamedTensors> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_checkpoint(&mut BufReader::new(file))
}
