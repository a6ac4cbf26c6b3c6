//! Binary network checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SMERFNET"
//! version    u32
//! input      u32 rank, then u32 per dimension
//! arch       u32 length + UTF-8 layer descriptor ("C32k3s2-R-...")
//! reasoning  u32 length + UTF-8 tag (empty when untagged)
//! seed       u64
//! tensors    u32 count, then per tensor: u32 rank, u32 dims, f32 data
//! ```
//!
//! Tensors follow [`Network::params`] order (weight then bias per layer).

use std::io::{Read, Write};

use super::{parse_layers, Layer, Network, NetworkMeta};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SMERFNET";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(net: &Network<T>, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_dims(&mut out, net.input_shape())?;
    write_str(&mut out, &net.descriptor())?;
    write_str(&mut out, net.meta.reasoning.as_deref().unwrap_or(""))?;
    out.write_all(&net.meta.seed.to_le_bytes())?;
    let params = net.params();
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        write_dims(&mut out, p.shape())?;
        let mut buf = Vec::with_capacity(p.len() * 4);
        for v in p.data() {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Network<f32>> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a network checkpoint".into()));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let input_shape = read_dims(&mut input)?;
    let specs = parse_layers(&read_str(&mut input)?)?;
    let reasoning = read_str(&mut input)?;
    let mut seed = [0u8; 8];
    input.read_exact(&mut seed)?;
    let seed = u64::from_le_bytes(seed);

    let mut net = Network::<f32>::from_specs(&input_shape, &specs, seed)?;
    let count = read_u32(&mut input)? as usize;
    let mut params = net.params_mut();
    if count != params.len() {
        return Err(Error::Format(format!("checkpoint has {count} tensors, architecture needs {}", params.len())));
    }
    for p in params.iter_mut() {
        let dims = read_dims(&mut input)?;
        if dims != p.shape() {
            return Err(Error::Format(format!("tensor shape {dims:?}, expected {:?}", p.shape())));
        }
        let mut buf = vec![0u8; p.len() * 4];
        input.read_exact(&mut buf)?;
        for (v, chunk) in p.data_mut().iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    let layers: Vec<Layer<f32>> = net.layers().to_vec();
    let meta = NetworkMeta { reasoning: (!reasoning.is_empty()).then_some(reasoning), seed };
    Network::from_layers(&input_shape, layers, meta)
}

fn write_dims<W: Write>(out: &mut W, dims: &[usize]) -> Result<()> {
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    Ok(())
}

fn write_str<W: Write>(out: &mut W, s: &str) -> Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_dims<R: Read>(input: &mut R) -> Result<Vec<usize>> {
    let rank = read_u32(input)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    (0..rank).map(|_| read_u32(input).map(|d| d as usize)).collect()
}

fn read_str<R: Read>(input: &mut R) -> Result<String> {
    let len = read_u32(input)? as usize;
    if len > 1 << 16 {
        return Err(Error::Format(format!("implausible string length {len}")));
    }
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    #[test]
    fn round_trip_preserves_network() {
        let specs = [
            LayerSpec::Conv2D { out_channels: 4, kernel_size: 3, stride: 2 },
            LayerSpec::ReLU,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_units: 2 },
            LayerSpec::SoftmaxOutput,
        ];
        let mut net = Network::<f32>::from_specs(&[3, 9, 9], &specs, 42).unwrap();
        net.meta.reasoning = Some("simple-fr".into());
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn truncated_or_foreign_bytes_fail() {
        assert!(read_checkpoint(&b"NOTANET!\x01\x00\x00\x00"[..]).is_err());
        let net = Network::<f32>::from_specs(&[2], &[LayerSpec::Dense { out_units: 2 }], 1).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }
}
