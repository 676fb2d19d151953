//! Checkpoint container for pausing and resuming a run.
//!
//! Layout: a 9-byte magic, a 1-byte format version, the payload length as a
//! little-endian u64, then a JSON payload. The length prefix lets a reader
//! distinguish truncation from trailing garbage, and the JSON body keeps the
//! state debuggable with standard tools.

use crate::bandwidth::BandwidthLedger;
use crate::compress::CompressorState;
use crate::error::{Error, Result};
use crate::sim::{OptState, RunConfig};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 9] = b"DLIONCKPT";
const VERSION: u8 = 1;
const HEADER_LEN: usize = MAGIC.len() + 1 + 8;

/// Everything needed to continue a run as if it had never stopped: the
/// original config, the shared iterate, every stateful piece of the
/// optimizers and compressors, and the traffic recorded so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub config: RunConfig,
    pub round_done: u64,
    pub x: Vec<f64>,
    pub worker_opt: Vec<OptState>,
    pub compressors: Vec<CompressorState>,
    pub global_opt: OptState,
    pub ledger: BandwidthLedger,
    pub stopped_early: bool,
}

pub fn save(path: &Path, snap: &Snapshot) -> Result<()> {
    let payload = serde_json::to_vec(snap)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize snapshot: {e}")))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + payload.len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(&payload);
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Snapshot> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptStream(format!(
            "checkpoint too short: {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptStream(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = bytes[MAGIC.len()];
    if version != VERSION {
        return Err(Error::CorruptStream(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[MAGIC.len() + 1..HEADER_LEN]);
    let payload_len = u64::from_le_bytes(len_bytes) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != payload_len {
        return Err(Error::CorruptStream(format!(
            "checkpoint payload is {} bytes but header promises {payload_len}",
            payload.len()
        )));
    }
    let snap: Snapshot = serde_json::from_slice(payload)
        .map_err(|e| Error::CorruptStream(format!("checkpoint payload does not parse: {e}")))?;
    if !snap.ledger.totals_consistent() {
        return Err(Error::CorruptStream(
            "checkpoint ledger totals do not match its per-round entries".into(),
        ));
    }
    Ok(snap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_snapshot() -> Snapshot {
        let config = RunConfig::default_config();
        Snapshot {
            config,
            round_done: 7,
            x: vec![0.25, -1.5, 3.0],
            worker_opt: vec![OptState::None, OptState::None],
            compressors: Vec::new(),
            global_opt: OptState::None,
            ledger: BandwidthLedger::new(),
            stopped_early: false,
        }
    }

    #[test]
    fn roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let snap = sample_snapshot();
        save(&path, &snap).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"NOTACKPT!\x01\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = load(&path).unwrap_err();
        assert!(matches!(err, Error::CorruptStream(_)), "{err}");
    }

    #[test]
    fn rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.ckpt");
        let snap = sample_snapshot();
        save(&path, &snap).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[MAGIC.len()] = 9;
        fs::write(&path, bytes).unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }

    #[test]
    fn rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.ckpt");
        let snap = sample_snapshot();
        save(&path, &snap).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load(&path).unwrap_err();
        assert!(matches!(err, Error::CorruptStream(_)), "{err}");
    }

    #[test]
    fn rejects_trailing_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fat.ckpt");
        let snap = sample_snapshot();
        save(&path, &snap).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(b"junk");
        fs::write(&path, bytes).unwrap();
        let err = load(&path).unwrap_err();
        assert!(matches!(err, Error::CorruptStream(_)), "{err}");
    }
}
