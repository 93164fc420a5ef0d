//! Binary inverter files.
//!
//! ```text
//! magic       b"GLKI"
//! version     u16 (= 1)
//! header_len  u32
//! header      JSON: spec, hash, manifest, lengths
//! payload     f64 LE: scaling mean, scaling inverse std, theta
//! crc         u32  CRC-32 of the payload bytes
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::inverter::InverterSpec;
use super::train::{InputScaling, TrainedInverter, TrainingManifest};
use crate::error::{Error, Result};
use crate::hashing::HashProjection;

pub const INVERTER_MAGIC: &[u8; 4] = b"GLKI";
pub const INVERTER_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: InverterSpec,
    hash: Option<HashProjection>,
    manifest: TrainingManifest,
    input_dim: usize,
    num_params: usize,
}

pub fn encode_inverter(inv: &TrainedInverter) -> Result<Vec<u8>> {
    let n = inv.spec.num_params();
    if inv.theta.len() != n || inv.scaling.mean.len() != inv.spec.input_dim || inv.scaling.inv_std.len() != inv.spec.input_dim {
        return Err(Error::Shape("inverter parameters do not match its spec".into()));
    }
    let header = serde_json::to_vec(&Header {
        spec: inv.spec.clone(),
        hash: inv.hash.clone(),
        manifest: inv.manifest.clone(),
        input_dim: inv.spec.input_dim,
        num_params: n,
    })?;
    let mut out = Vec::with_capacity(header.len() + 8 * (n + 2 * inv.spec.input_dim) + 14);
    out.extend_from_slice(INVERTER_MAGIC);
    out.extend_from_slice(&INVERTER_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let start = out.len();
    for v in inv.scaling.mean.iter().chain(&inv.scaling.inv_std).chain(&inv.theta) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format("inverter file is truncated".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode_inverter(mut bytes: &[u8]) -> Result<TrainedInverter> {
    let b = &mut bytes;
    if take(b, 4)? != INVERTER_MAGIC {
        return Err(Error::Format("not an inverter file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(take(b, 2)?.try_into().expect("2 bytes"));
    if version != INVERTER_VERSION {
        return Err(Error::Format(format!("unsupported inverter version {version}")));
    }
    let len = u32::from_le_bytes(take(b, 4)?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(take(b, len)?)?;
    header.spec.validate()?;
    if header.num_params != header.spec.num_params() || header.input_dim != header.spec.input_dim {
        return Err(Error::Format("inverter header is inconsistent".into()));
    }
    let d = header.input_dim;
    let payload = take(b, 8 * (2 * d + header.num_params))?;
    let crc = u32::from_le_bytes(take(b, 4)?.try_into().expect("4 bytes"));
    if !b.is_empty() {
        return Err(Error::Format("trailing bytes after inverter payload".into()));
    }
    if crc32fast::hash(payload) != crc {
        return Err(Error::Format("inverter checksum mismatch".into()));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut next = |n: usize| values.by_ref().take(n).collect::<Vec<_>>();
    let mean = next(d);
    let inv_std = next(d);
    let theta = next(header.num_params);
    let hash = header.hash.map(|h| h.rebuild()).transpose()?;
    Ok(TrainedInverter {
        spec: header.spec,
        theta,
        hash,
        scaling: InputScaling { mean, inv_std },
        manifest: header.manifest,
    })
}

pub fn save_inverter(inv: &TrainedInverter, path: &Path) -> Result<()> {
    fs::write(path, encode_inverter(inv)?)?;
    Ok(())
}

pub fn load_inverter(path: &Path) -> Result<TrainedInverter> {
    decode_inverter(&fs::read(path)?)
}
