//! Binary model checkpoints.
//!
//! Layout: magic, format version, a JSON-encoded [`EncoderConfig`] header,
//! then every parameter tensor as (name, shape, raw little-endian f64 data).
//! Values round-trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoders::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DNRECKPT";
const VERSION: u32 = 1;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn save(params: &EncoderParams, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(params.config())
        .map_err(|e| corrupt(format!("encoding config: {e}")))?;
    f.write_all(&(header.len() as u64).to_le_bytes())?;
    f.write_all(&header)?;
    let names = params.tensor_names();
    f.write_all(&(names.len() as u64).to_le_bytes())?;
    for name in names {
        let t = params.tensor(name);
        f.write_all(&(name.len() as u64).to_le_bytes())?;
        f.write_all(name.as_bytes())?;
        f.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for &d in t.shape() {
            f.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn load(path: &Path) -> Result<EncoderParams> {
    let mut f = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(corrupt(format!("{}: not a checkpoint file", path.display())));
    }
    let mut ver = [0u8; 4];
    f.read_exact(&mut ver)?;
    let ver = u32::from_le_bytes(ver);
    if ver != VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {ver}")));
    }
    let header_len = read_u64(&mut f)? as usize;
    let mut header = vec![0u8; header_len];
    f.read_exact(&mut header)?;
    let config: EncoderConfig = serde_json::from_slice(&header)
        .map_err(|e| corrupt(format!("bad config header: {e}")))?;
    let mut params = EncoderParams::zeros(&config)?;

    let n_tensors = read_u64(&mut f)? as usize;
    let expected = params.tensor_names();
    if n_tensors != expected.len() {
        return Err(corrupt(format!(
            "checkpoint has {n_tensors} tensors, a {} model needs {}",
            config.arch,
            expected.len()
        )));
    }
    let mut seen = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = read_u64(&mut f)? as usize;
        if name_len > 256 {
            return Err(corrupt(format!("tensor name of {name_len} bytes")));
        }
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| corrupt("tensor name not utf-8"))?;
        let ndims = read_u64(&mut f)? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(read_u64(&mut f)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = vec![0.0f64; len];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            f.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let t = params
            .try_tensor_mut(&name)
            .ok_or_else(|| corrupt(format!("unexpected tensor '{name}'")))?;
        if t.shape() != shape.as_slice() {
            return Err(corrupt(format!(
                "tensor '{name}' has shape {shape:?}, model expects {:?}",
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&data);
        seen.push(name);
    }
    for name in expected {
        if !seen.iter().any(|s| s == name) {
            return Err(corrupt(format!("checkpoint is missing tensor '{name}'")));
        }
    }
    Ok(params)
}
