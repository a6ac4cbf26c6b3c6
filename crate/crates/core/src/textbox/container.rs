//! Per-bucket dataset shards.
//!
//! ```text
//! magic    8 bytes "SMERFSHD"
//! version  u32
//! bucket   u8
//! split    u32 length + UTF-8 ("train", "validation", "evaluation")
//! count    u32
//! c, h, w  u32 x 3
//! records  count x {
//!     label u8, seed u64, background f32, foreground f32,
//!     objects u8 x {kind u8, row u16, col u16},
//!     masks   u8 x {kind u8, runs u32, runs x (start u32, len u32)},
//!     pixels  c*h*w f32
//! }
//! ```
//!
//! Little-endian throughout. Reading re-renders every scene and rejects the
//! shard if the stored pixels or masks disagree.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{render, BucketSpec, LabeledScene, ObjectKind, Palette, PixelMask, SceneSpec, CANVAS, CHANNELS};
use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 8] = b"SMERFSHD";
pub const SHARD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardHeader {
    pub bucket: u8,
    pub split: String,
    pub count: usize,
}

pub fn write_shard<W: Write>(mut out: W, bucket: u8, split: &str, samples: &[LabeledScene]) -> Result<()> {
    out.write_all(SHARD_MAGIC)?;
    out.write_all(&SHARD_VERSION.to_le_bytes())?;
    out.write_all(&[bucket])?;
    out.write_all(&(split.len() as u32).to_le_bytes())?;
    out.write_all(split.as_bytes())?;
    out.write_all(&(samples.len() as u32).to_le_bytes())?;
    for d in [CHANNELS, CANVAS, CANVAS] {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(CHANNELS * CANVAS * CANVAS * 4 + 256);
    for s in samples {
        if s.scene.bucket.id != bucket {
            return Err(Error::Usage(format!("sample from bucket {} in shard {bucket}", s.scene.bucket.id)));
        }
        buf.clear();
        let img = render(&s.scene);
        buf.push(s.label as u8);
        buf.extend_from_slice(&s.scene.seed.to_le_bytes());
        buf.extend_from_slice(&s.scene.palette.background.to_le_bytes());
        buf.extend_from_slice(&s.scene.palette.foreground.to_le_bytes());
        buf.push(s.scene.placements.len() as u8);
        for (&k, &(r, c)) in &s.scene.placements {
            buf.push(k.code());
            buf.extend_from_slice(&(r as u16).to_le_bytes());
            buf.extend_from_slice(&(c as u16).to_le_bytes());
        }
        buf.push(img.region_masks.len() as u8);
        for (&k, m) in &img.region_masks {
            let runs = m.to_runs();
            buf.push(k.code());
            buf.extend_from_slice(&(runs.len() as u32).to_le_bytes());
            for (start, len) in runs {
                buf.extend_from_slice(&start.to_le_bytes());
                buf.extend_from_slice(&len.to_le_bytes());
            }
        }
        for v in img.pixels.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_shard<R: Read>(mut input: R) -> Result<(ShardHeader, Vec<LabeledScene>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != SHARD_MAGIC {
        return Err(Error::Format("not a dataset shard".into()));
    }
    let version = u32le(&mut input)?;
    if version != SHARD_VERSION {
        return Err(Error::Format(format!("unsupported shard version {version}")));
    }
    let bucket_id = u8le(&mut input)?;
    let bucket = BucketSpec::from_id(bucket_id)?;
    let split_len = u32le(&mut input)? as usize;
    if split_len > 64 {
        return Err(Error::Format("implausible split name".into()));
    }
    let mut split = vec![0u8; split_len];
    input.read_exact(&mut split)?;
    let split = String::from_utf8(split).map_err(|_| Error::Format("split name is not UTF-8".into()))?;
    let count = u32le(&mut input)? as usize;
    let dims = [u32le(&mut input)?, u32le(&mut input)?, u32le(&mut input)?];
    if dims != [CHANNELS as u32, CANVAS as u32, CANVAS as u32] {
        return Err(Error::Format(format!("unexpected image dims {dims:?}")));
    }
    let mut samples = Vec::with_capacity(count);
    let mut pix = vec![0u8; CHANNELS * CANVAS * CANVAS * 4];
    for i in 0..count {
        let label = u8le(&mut input)? as usize;
        let seed = u64le(&mut input)?;
        let palette = Palette { background: f32le(&mut input)?, foreground: f32le(&mut input)? };
        let n_obj = u8le(&mut input)?;
        let mut placements = BTreeMap::new();
        for _ in 0..n_obj {
            let kind = kind(u8le(&mut input)?)?;
            let r = u16le(&mut input)? as usize;
            let c = u16le(&mut input)? as usize;
            placements.insert(kind, (r, c));
        }
        let n_masks = u8le(&mut input)?;
        let mut masks = BTreeMap::new();
        for _ in 0..n_masks {
            let kind = kind(u8le(&mut input)?)?;
            let n_runs = u32le(&mut input)? as usize;
            if n_runs > CANVAS * CANVAS {
                return Err(Error::Format("implausible run count".into()));
            }
            let runs = (0..n_runs)
                .map(|_| Ok((u32le(&mut input)?, u32le(&mut input)?)))
                .collect::<Result<Vec<_>>>()?;
            masks.insert(kind, PixelMask::from_runs(CANVAS, CANVAS, &runs)?);
        }
        input.read_exact(&mut pix)?;
        let scene = SceneSpec { bucket, placements, seed, palette };
        if !scene.is_valid() {
            return Err(Error::Integrity(format!("record {i} of bucket {bucket_id} has an invalid scene")));
        }
        let img = render(&scene);
        let stored = pix.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
        if !stored.eq(img.pixels.data().iter().copied()) || masks != img.region_masks {
            return Err(Error::Integrity(format!(
                "record {i} of bucket {bucket_id}: stored pixels or masks differ from the scene"
            )));
        }
        samples.push(LabeledScene { scene, label });
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after shard records".into()));
    }
    Ok((ShardHeader { bucket: bucket_id, split, count }, samples))
}

fn kind(code: u8) -> Result<ObjectKind> {
    ObjectKind::from_code(code).ok_or_else(|| Error::Format(format!("unknown object code {code}")))
}

fn u8le<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn u16le<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn u32le<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn u64le<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn f32le<R: Read>(r: &mut R) -> Result<f32> {
    Ok(f32::from_bits(u32le(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoning::ReasoningKind;
    use crate::textbox::{generate_bucket, RenderOptions};

    fn samples() -> Vec<LabeledScene> {
        let b = BucketSpec::from_id(11).unwrap();
        generate_bucket(ReasoningKind::ComplexFr, b, 6, 3, "train", RenderOptions::default()).unwrap()
    }

    #[test]
    fn shard_round_trip() {
        let s = samples();
        let mut bytes = Vec::new();
        write_shard(&mut bytes, 11, "train", &s).unwrap();
        let (h, back) = read_shard(bytes.as_slice()).unwrap();
        assert_eq!(h, ShardHeader { bucket: 11, split: "train".into(), count: 6 });
        assert_eq!(back, s);
    }

    #[test]
    fn flipped_pixel_is_an_integrity_error() {
        let s = samples();
        let mut bytes = Vec::new();
        write_shard(&mut bytes, 11, "train", &s).unwrap();
        // last byte belongs to the final record's last pixel
        let n = bytes.len();
        bytes[n - 2] ^= 0x40;
        assert!(matches!(read_shard(bytes.as_slice()), Err(Error::Integrity(_))));
    }

    #[test]
    fn wrong_bucket_is_rejected_on_write() {
        assert!(write_shard(Vec::new(), 3, "train", &samples()).is_err());
    }
}
