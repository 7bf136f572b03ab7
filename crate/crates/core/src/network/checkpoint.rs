//! Binary checkpoint format: magic `DSPK`, a u32 format version, the
//! network configuration, then every tensor in [`super::TENSOR_NAMES`]
//! order as (rank, dims, row-major little-endian f64). Round trips are
//! byte-exact.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{NetworkConfig, NetworkParams};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DSPK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        msg: msg.into(),
    }
}

pub fn save_checkpoint(
    sink: &mut dyn Write,
    config: &NetworkConfig,
    params: &NetworkParams,
) -> Result<()> {
    sink.write_all(&CHECKPOINT_MAGIC)?;
    sink.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    sink.write_all(&(config.context as u32).to_le_bytes())?;
    sink.write_all(&(config.stride as u32).to_le_bytes())?;
    for h in config.hidden {
        sink.write_all(&(h as u32).to_le_bytes())?;
    }
    sink.write_all(&(config.input_dim as u32).to_le_bytes())?;
    sink.write_all(&config.dropout_rate.to_le_bytes())?;
    sink.write_all(&[config.dropout_layer5 as u8])?;

    let dims: [Vec<usize>; 14] = tensor_dims(params);
    for (flat, dims) in params.tensors().into_iter().zip(dims) {
        sink.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in &dims {
            sink.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in flat {
            sink.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn tensor_dims(params: &NetworkParams) -> [Vec<usize>; 14] {
    [
        vec![params.w1.nrows(), params.w1.ncols()],
        vec![params.b1.len()],
        vec![params.w2.nrows(), params.w2.ncols()],
        vec![params.b2.len()],
        vec![params.w3.nrows(), params.w3.ncols()],
        vec![params.b3.len()],
        vec![params.w4.nrows(), params.w4.ncols()],
        vec![params.b4.len()],
        vec![params.w_rf.nrows(), params.w_rf.ncols()],
        vec![params.w_rb.nrows(), params.w_rb.ncols()],
        vec![params.w5.nrows(), params.w5.ncols()],
        vec![params.b5.len()],
        vec![params.w6.nrows(), params.w6.ncols()],
        vec![params.b6.len()],
    ]
}

pub fn load_checkpoint(source: &mut dyn Read) -> Result<(NetworkConfig, NetworkParams)> {
    let mut magic = [0u8; 4];
    source.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(corrupt("bad checkpoint magic"));
    }
    let version = read_u32(source)?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let context = read_u32(source)? as usize;
    let stride = read_u32(source)? as usize;
    let mut hidden = [0usize; 5];
    for h in &mut hidden {
        *h = read_u32(source)? as usize;
    }
    let input_dim = read_u32(source)? as usize;
    let mut buf = [0u8; 8];
    source.read_exact(&mut buf)?;
    let dropout_rate = f64::from_le_bytes(buf);
    let mut flag = [0u8; 1];
    source.read_exact(&mut flag)?;
    let config = NetworkConfig {
        context,
        stride,
        hidden,
        input_dim,
        dropout_rate,
        dropout_layer5: flag[0] != 0,
    };
    config.validate().map_err(|e| corrupt(e.to_string()))?;

    let mut params = NetworkParams::zeros(&config)?;
    let expected = tensor_dims(&params);
    for (i, (flat, want)) in params
        .tensors_mut()
        .into_iter()
        .zip(expected)
        .enumerate()
    {
        let rank = read_u32(source)? as usize;
        if rank != want.len() {
            return Err(corrupt(format!(
                "tensor {}: rank {rank}, expected {}",
                super::TENSOR_NAMES[i],
                want.len()
            )));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(source)? as usize);
        }
        if dims != want {
            return Err(corrupt(format!(
                "tensor {}: dims {dims:?}, expected {want:?}",
                super::TENSOR_NAMES[i]
            )));
        }
        for v in flat.iter_mut() {
            source.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    Ok((config, params))
}

fn read_u32(source: &mut dyn Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    source.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
