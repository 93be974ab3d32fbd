//! Binary persistence for parameter vectors: magic, version, a named
//! entry table, a little-endian f64 payload in layout order, and a
//! trailing CRC32 guard over everything before it.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use tta_core::layout::{LayoutBuilder, ParamVector};

use crate::MissingCheckpoint;
use crate::csvout::write_atomic;

pub const MAGIC: [u8; 4] = *b"TTA1";
pub const FORMAT_VERSION: u32 = 1;

/// Serialize a parameter vector to the container format.
pub fn encode(params: &ParamVector) -> Vec<u8> {
    let entries = params.layout().entries();
    let mut out = Vec::with_capacity(64 + params.values().len() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for entry in entries {
        out.extend_from_slice(&(entry.name.len() as u16).to_le_bytes());
        out.extend_from_slice(entry.name.as_bytes());
        out.push(entry.shape.len() as u8);
        for &dim in &entry.shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
    }
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parse the container format back into a parameter vector, verifying
/// the CRC and every structural invariant.
pub fn decode(bytes: &[u8]) -> Result<ParamVector> {
    if bytes.len() < 16 {
        bail!("checkpoint too short ({} bytes)", bytes.len());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        bail!("checkpoint CRC mismatch: stored {stored:#010x}, computed {computed:#010x}");
    }
    let mut cur = Cursor { body, pos: 0 };
    if cur.take(4)? != MAGIC {
        bail!("checkpoint magic is not TTA1");
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        bail!("unsupported checkpoint version {version}");
    }
    let count = cur.u32()? as usize;
    let mut builder = LayoutBuilder::new();
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .context("checkpoint entry name is not UTF-8")?
            .to_string();
        let rank = cur.u8()? as usize;
        if rank > 8 {
            bail!("checkpoint entry {name} has implausible rank {rank}");
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        builder.add(&name, &shape)?;
    }
    let layout = builder.build();
    let payload = &cur.body[cur.pos..];
    if payload.len() != layout.total_len() * 8 {
        bail!(
            "checkpoint payload holds {} bytes, layout needs {}",
            payload.len(),
            layout.total_len() * 8
        );
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ParamVector::from_values(layout, values)?)
}

/// Write a checkpoint atomically.
pub fn write_params(path: &Path, params: &ParamVector) -> Result<()> {
    write_atomic(path, &encode(params)).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Read a checkpoint; a nonexistent file is reported as
/// [`MissingCheckpoint`] so drivers can exit with the dedicated code.
pub fn read_params(path: &Path) -> Result<ParamVector> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(MissingCheckpoint(path.to_path_buf()).into());
        }
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    };
    decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

struct Cursor<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.body.len() {
            bail!("checkpoint truncated at byte {}", self.body.len());
        }
        let s = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
