//! Binary interchange container: one JSON header plus named float32 blocks.
//!
//! Byte layout (all integers little-endian):
//!
//! | offset      | size | field                                             |
//! |-------------|------|---------------------------------------------------|
//! | 0           | 8    | magic `HOIF32A1` (format + version in one tag)    |
//! | 8           | 4    | u32 header length `L`                             |
//! | 12          | L    | UTF-8 JSON `{ "meta": …, "blocks": [{name,len}] }`|
//! | 12 + L      | 4·Σlen | block payloads, f32 LE, concatenated in order   |
//!
//! `meta` is caller-defined JSON; block order in the header is the payload
//! order. Floats are f32 on disk by design, so anything that must survive a
//! round trip exactly (seeds, scales, schedules) belongs in `meta` instead.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

use super::atomic_write;

pub const CONTAINER_MAGIC: [u8; 8] = *b"HOIF32A1";

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    meta: M,
    blocks: Vec<BlockInfo>,
}

#[derive(Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    len: u64,
}

/// A loaded container: the deserialized header plus its blocks, in file
/// order.
pub struct Container<M> {
    pub meta: M,
    names: Vec<String>,
    data: Vec<Vec<f32>>,
}

impl<M> Container<M> {
    pub fn block(&self, name: &str) -> Result<&[f32]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
            .ok_or_else(|| Error::invalid(format!("container has no block named {name:?}")))
    }

    pub fn block_names(&self) -> &[String] {
        &self.names
    }
}

pub fn write_container<M: Serialize>(
    path: &Path,
    meta: &M,
    blocks: &[(&str, &[f32])],
) -> Result<()> {
    for (i, (name, _)) in blocks.iter().enumerate() {
        if blocks[..i].iter().any(|(n, _)| n == name) {
            return Err(Error::invalid(format!("duplicate block name {name:?}")));
        }
    }
    let envelope = Envelope {
        meta,
        blocks: blocks
            .iter()
            .map(|(name, data)| BlockInfo {
                name: (*name).to_owned(),
                len: data.len() as u64,
            })
            .collect(),
    };
    let header = serde_json::to_vec(&envelope)?;
    let payload: usize = blocks.iter().map(|(_, d)| 4 * d.len()).sum();
    let mut bytes = Vec::with_capacity(16 + header.len() + payload);
    bytes.extend_from_slice(&CONTAINER_MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    for (_, data) in blocks {
        for x in *data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

pub fn read_container<M: DeserializeOwned>(path: &Path) -> Result<Container<M>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let name = path.display().to_string();
    let bad = |reason: &str| Error::format(&name, reason);
    if bytes.len() < 12 || bytes[..8] != CONTAINER_MAGIC {
        return Err(bad("missing or unknown container magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = 12 + header_len;
    if bytes.len() < body {
        return Err(bad("header extends past end of file"));
    }
    let envelope: Envelope<M> = serde_json::from_slice(&bytes[12..body])?;
    let total: u64 = envelope.blocks.iter().map(|b| b.len).sum();
    if bytes.len() != body + 4 * total as usize {
        return Err(bad("payload size disagrees with the header"));
    }
    let mut names = Vec::with_capacity(envelope.blocks.len());
    let mut data = Vec::with_capacity(envelope.blocks.len());
    let mut at = body;
    for info in envelope.blocks {
        let mut block = Vec::with_capacity(info.len as usize);
        for _ in 0..info.len {
            block.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()));
            at += 4;
        }
        names.push(info.name);
        data.push(block);
    }
    Ok(Container {
        meta: envelope.meta,
        names,
        data,
    })
}

pub fn scalars_to_f32<S: Real>(xs: &[S]) -> Vec<f32> {
    xs.iter().map(|x| x.to64() as f32).collect()
}

pub fn f32_to_scalars<S: Real>(xs: &[f32]) -> Vec<S> {
    xs.iter().map(|&x| S::c(x as f64)).collect()
}

pub fn vectors_to_f32<S: Real>(vs: &[Vector3<S>]) -> Vec<f32> {
    let mut out = Vec::with_capacity(3 * vs.len());
    for v in vs {
        out.push(v.x.to64() as f32);
        out.push(v.y.to64() as f32);
        out.push(v.z.to64() as f32);
    }
    out
}

pub fn f32_to_vectors<S: Real>(xs: &[f32]) -> Result<Vec<Vector3<S>>> {
    if xs.len() % 3 != 0 {
        return Err(Error::ShapeMismatch(
            "vector block length must be a multiple of 3".into(),
        ));
    }
    Ok(xs
        .chunks_exact(3)
        .map(|c| Vector3::new(S::c(c[0] as f64), S::c(c[1] as f64), S::c(c[2] as f64)))
        .collect())
}
