//! Versioned binary checkpoint container: network config, named parameter
//! tensors, optimizer momentum buffers, and the epoch counter. Round-trips
//! bit-exactly; rejects version mismatches.

use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::training::MomentumBuffers;
use ndarray::ArrayD;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TFCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub epoch: usize,
    pub seed: u64,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CheckpointCorrupt(msg.into())
}

fn write_tensor<W: Write>(w: &mut W, name: &str, tensor: &ArrayD<f64>) -> std::io::Result<()> {
    let name_bytes = name.as_bytes();
    w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
    w.write_all(name_bytes)?;
    w.write_all(&[tensor.ndim() as u8])?;
    for &d in tensor.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in tensor.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| corrupt(format!("truncated: {e}")))
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, ArrayD<f64>)> {
    let mut len2 = [0u8; 2];
    read_exact(r, &mut len2)?;
    let name_len = u16::from_le_bytes(len2) as usize;
    let mut name_buf = vec![0u8; name_len];
    read_exact(r, &mut name_buf)?;
    let name = String::from_utf8(name_buf).map_err(|_| corrupt("bad tensor name"))?;
    let mut nd = [0u8; 1];
    read_exact(r, &mut nd)?;
    let mut shape = Vec::with_capacity(nd[0] as usize);
    let mut d4 = [0u8; 4];
    for _ in 0..nd[0] {
        read_exact(r, &mut d4)?;
        shape.push(u32::from_le_bytes(d4) as usize);
    }
    let count: usize = shape.iter().product();
    if count > (1 << 31) {
        return Err(corrupt(format!("tensor {name} implausibly large")));
    }
    let mut data = vec![0f64; count];
    let mut v8 = [0u8; 8];
    for slot in data.iter_mut() {
        read_exact(r, &mut v8)?;
        *slot = f64::from_le_bytes(v8);
    }
    let tensor = ArrayD::from_shape_vec(shape, data).map_err(|e| corrupt(format!("{name}: {e}")))?;
    Ok((name, tensor))
}

/// Writes network parameters, momentum buffers and run metadata to `path`.
pub fn save_checkpoint(
    path: &Path,
    network: &Network,
    buffers: &MomentumBuffers,
    epoch: usize,
    seed: u64,
) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let io = |source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };

    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    let config_json = serde_json::to_vec(&network.config)
        .map_err(|e| Error::InvalidConfig(format!("config json: {e}")))?;
    w.write_all(&(config_json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&config_json).map_err(io)?;
    w.write_all(&(epoch as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&seed.to_le_bytes()).map_err(io)?;

    let params = network.named_params();
    w.write_all(&(params.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, view) in &params {
        write_tensor(&mut w, name, &view.to_owned()).map_err(io)?;
    }
    w.write_all(&(buffers.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, tensor) in buffers {
        write_tensor(&mut w, name, tensor).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Reads a checkpoint back into a network plus optimizer state.
pub fn load_checkpoint(path: &Path) -> Result<(Network, MomentumBuffers, Checkpoint)> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut v4 = [0u8; 4];
    read_exact(&mut r, &mut v4)?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            expected: VERSION,
            found: version,
        });
    }
    read_exact(&mut r, &mut v4)?;
    let config_len = u32::from_le_bytes(v4) as usize;
    let mut config_buf = vec![0u8; config_len];
    read_exact(&mut r, &mut config_buf)?;
    let config: NetworkConfig =
        serde_json::from_slice(&config_buf).map_err(|e| corrupt(format!("config: {e}")))?;
    let mut v8 = [0u8; 8];
    read_exact(&mut r, &mut v8)?;
    let epoch = u64::from_le_bytes(v8) as usize;
    read_exact(&mut r, &mut v8)?;
    let seed = u64::from_le_bytes(v8);

    read_exact(&mut r, &mut v4)?;
    let param_count = u32::from_le_bytes(v4) as usize;
    let mut stored: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
    for _ in 0..param_count {
        let (name, tensor) = read_tensor(&mut r)?;
        stored.insert(name, tensor);
    }

    let mut network = Network::new(config.clone())?;
    for (name, mut view) in network.named_params_mut() {
        let tensor = stored
            .remove(&name)
            .ok_or_else(|| corrupt(format!("missing parameter {name}")))?;
        if tensor.shape() != view.shape() {
            return Err(corrupt(format!(
                "parameter {name}: shape {:?} vs expected {:?}",
                tensor.shape(),
                view.shape()
            )));
        }
        view.assign(&tensor);
    }
    if let Some(extra) = stored.keys().next() {
        return Err(corrupt(format!("unknown parameter {extra}")));
    }

    read_exact(&mut r, &mut v4)?;
    let buffer_count = u32::from_le_bytes(v4) as usize;
    let mut buffers = MomentumBuffers::new();
    for _ in 0..buffer_count {
        let (name, tensor) = read_tensor(&mut r)?;
        buffers.insert(name, tensor);
    }

    Ok((network, buffers, Checkpoint { config, epoch, seed }))
}
