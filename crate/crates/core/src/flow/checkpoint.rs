//! Binary checkpoint format, little-endian throughout:
//!
//! | bytes | field |
//! |-------|-------|
//! | 8     | magic `TRAJRLCK` |
//! | 4     | format version (u32, currently 1) |
//! | 4×4   | frames, hidden width, condition embedding, time frequencies (u32) |
//! | 8     | run-config hash (u64) |
//! | 8     | parameter count (u64) |
//! | 8×n   | parameters (f64) |

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::net::Architecture;
use super::policy::FlowPolicy;

pub const MAGIC: &[u8; 8] = b"TRAJRLCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: FlowPolicy,
    pub config_hash: u64,
}

pub fn write_checkpoint<W: Write>(mut out: W, policy: &FlowPolicy, config_hash: u64) -> Result<()> {
    let a = policy.architecture();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for dim in [a.frames, a.hidden, a.embed, a.freqs] {
        let dim = u32::try_from(dim).map_err(|_| Error::Checkpoint(format!("dimension {dim} exceeds u32")))?;
        out.write_all(&dim.to_le_bytes())?;
    }
    out.write_all(&config_hash.to_le_bytes())?;
    out.write_all(&(policy.params().len() as u64).to_le_bytes())?;
    for p in policy.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("truncated checkpoint while reading {what}")),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let magic: [u8; 8] = read_array(&mut r, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r, "version")?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {version} is not supported (expected {VERSION})"
        )));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u32::from_le_bytes(read_array(&mut r, "architecture")?) as usize;
    }
    let arch = Architecture::new(dims[0], dims[1], dims[2], dims[3])
        .map_err(|e| Error::Checkpoint(format!("bad architecture: {e}")))?;
    let config_hash = u64::from_le_bytes(read_array(&mut r, "config hash")?);
    let count = u64::from_le_bytes(read_array(&mut r, "parameter count")?);
    if count != arch.param_count() as u64 {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match the architecture ({})",
            arch.param_count()
        )));
    }
    let mut params = Vec::with_capacity(arch.param_count());
    for _ in 0..count {
        params.push(f64::from_le_bytes(read_array(&mut r, "parameters")?));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes after parameters", rest.len())));
    }
    let policy = FlowPolicy::from_params(arch, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Checkpoint { policy, config_hash })
}
