//! `EEGM` checkpoint files: magic, version, JSON config, named tensors.
//!
//! ```text
//! "EEGM" | u32 version | u32 config_len | config JSON
//!        | u32 n_tensors | { u32 name_len | name | u32 rank | u32 dims[rank] | f32 values }*
//! ```
//! All integers and floats are little-endian.

use std::io::{self, Read, Write};

use super::cnn::{Cnn, CnnConfig};
use super::tensor::{Params, Tensor};
use super::ModelError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EEGM";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>, ModelError> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(ModelError::BadCheckpoint("truncated".into()));
    }
    Ok(buf)
}

pub fn write_checkpoint<W: Write>(model: &Cnn, mut w: W) -> Result<(), ModelError> {
    let config = serde_json::to_vec(&model.config).expect("config serializes");
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut w, CHECKPOINT_VERSION)?;
    put_u32(&mut w, config.len() as u32)?;
    w.write_all(&config)?;
    put_u32(&mut w, model.params.tensors.len() as u32)?;
    for (name, t) in &model.params.tensors {
        put_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, t.shape.len() as u32)?;
        for &d in &t.shape {
            put_u32(&mut w, d as u32)?;
        }
        for &v in &t.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Cnn, ModelError> {
    let magic = get_bytes(&mut r, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::BadCheckpoint(format!("magic {magic:?}")));
    }
    let version = get_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::BadCheckpoint(format!("version {version}")));
    }
    let config_len = get_u32(&mut r)? as usize;
    let config: CnnConfig = serde_json::from_slice(&get_bytes(&mut r, config_len)?)
        .map_err(|e| ModelError::BadCheckpoint(format!("config: {e}")))?;
    let n_tensors = get_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = get_u32(&mut r)? as usize;
        let name = String::from_utf8(get_bytes(&mut r, name_len)?)
            .map_err(|_| ModelError::BadCheckpoint("tensor name not UTF-8".into()))?;
        let rank = get_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| get_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count: usize = shape.iter().product();
        let raw = get_bytes(&mut r, 4 * count)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        tensors.push((name, Tensor::from_vec(&shape, data)));
    }
    Cnn::with_params(config, Params { tensors })
}
