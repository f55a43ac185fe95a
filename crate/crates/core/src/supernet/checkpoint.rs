//! Versioned binary checkpoint.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "LNASCKPT" | u32 version | u32 len + cell hash (hex)
//! | u32 len + config JSON | u64 n + n×f64 ω | u64 m + m×f64 α
//! ```

use super::{SupernetConfig, SupernetError, SupernetState};
use crate::search_space::{ArchParams, CellSpec};

const MAGIC: &[u8; 8] = b"LNASCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: SupernetState,
    pub alpha: ArchParams,
}

pub fn save_checkpoint(state: &SupernetState, alpha: &ArchParams) -> Vec<u8> {
    let hash = state.cell().hash();
    let config = serde_json::to_vec(state.config()).expect("config serializes");
    let mut out = Vec::with_capacity(64 + config.len() + 8 * (state.omega().len() + alpha.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for bytes in [hash.as_bytes(), config.as_slice()] {
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(bytes);
    }
    for values in [state.omega(), alpha.as_slice()] {
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SupernetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| SupernetError::Checkpoint("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, SupernetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SupernetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, SupernetError> {
        let n = usize::try_from(self.u64()?).map_err(|_| SupernetError::Checkpoint("length overflow".into()))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| SupernetError::Checkpoint("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Decodes a checkpoint, rejecting it unless its cell hash matches `expected`.
pub fn load_checkpoint(bytes: &[u8], expected: &CellSpec) -> Result<Checkpoint, SupernetError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(SupernetError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(SupernetError::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let hash = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| SupernetError::Checkpoint("hash is not utf-8".into()))?;
    let expected_hash = expected.hash();
    if hash != expected_hash {
        return Err(SupernetError::Checkpoint(format!(
            "cell hash mismatch: file {hash}, expected {expected_hash}"
        )));
    }
    let n = r.u32()? as usize;
    let config: SupernetConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| SupernetError::Checkpoint(format!("config: {e}")))?;
    if config.cell.hash() != hash {
        return Err(SupernetError::Checkpoint("embedded config disagrees with its hash".into()));
    }
    let omega = r.f64s()?;
    let alpha = r.f64s()?;
    if r.pos != bytes.len() {
        return Err(SupernetError::Checkpoint("trailing bytes".into()));
    }
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(SupernetError::Checkpoint("non-finite weights".into()));
    }
    let alpha = ArchParams::new(&config.cell, alpha)?;
    let state = SupernetState::from_omega(config, omega)?;
    Ok(Checkpoint { state, alpha })
}
