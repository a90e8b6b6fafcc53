//! Versioned binary checkpoints of the full trainer state.
//!
//! Layout (little endian):
//!
//! ```text
//! b"AAFMCKPT" | u32 version | u64 header length | JSON header
//! f64 arrays, each as u64 length | values:
//!   s_min, s_max | embeddings | first-order | factors | omega | (m, v) per optimizer slot
//! ```
//!
//! Floats are stored as raw bits so a reload is exact.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryState;
use crate::dataset::FeatureSchema;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::optim::{Optimizer, OptimizerConfig, Slot};
use crate::trainer::{TrainLog, TrainerState};

const MAGIC: &[u8; 8] = b"AAFMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    schema_fingerprint: String,
    config_hash: String,
    dim: usize,
    epoch: u32,
    tau: u32,
    optimizer: OptimizerConfig,
    slot_steps: Vec<u64>,
    log: TrainLog,
}

/// What a checkpoint was produced from, besides its tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub schema_fingerprint: String,
    pub config_hash: String,
    pub epoch: u32,
}

pub fn save(path: &Path, state: &TrainerState, schema: &FeatureSchema, config_hash: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let f = std::fs::File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
        let mut w = BufWriter::new(f);
        let header = Header {
            version: CHECKPOINT_VERSION,
            schema_fingerprint: hex::encode(schema.fingerprint()),
            config_hash: config_hash.to_owned(),
            dim: state.params.dim(),
            epoch: state.epoch,
            tau: state.adversary.epoch,
            optimizer: state.optimizer.config,
            slot_steps: state.optimizer.slots.iter().map(|s| s.steps).collect(),
            log: state.log.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        write_f64s(&mut w, &[state.adversary.s_min, state.adversary.s_max])?;
        write_f64s(&mut w, &state.params.embeddings)?;
        write_f64s(&mut w, &state.params.first_order)?;
        write_f64s(&mut w, &state.params.factors)?;
        write_f64s(&mut w, &state.adversary.omega)?;
        for s in &state.optimizer.slots {
            write_f64s(&mut w, &s.m)?;
            write_f64s(&mut w, &s.v)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

/// Load a checkpoint, refusing one written for a different schema.
pub fn load(path: &Path, schema: &FeatureSchema) -> Result<(TrainerState, CheckpointInfo)> {
    let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{} is truncated", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = read_u64(&mut r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let expected = hex::encode(schema.fingerprint());
    if header.schema_fingerprint != expected {
        return Err(Error::Checkpoint(format!(
            "schema mismatch: checkpoint {}, data {expected}",
            header.schema_fingerprint
        )));
    }
    let mut params = ModelParams::zeros(schema, header.dim);
    let extremes = read_f64s(&mut r, Some(2))?;
    params.embeddings = read_f64s(&mut r, Some(params.embeddings.len()))?;
    params.first_order = read_f64s(&mut r, Some(params.first_order.len()))?;
    params.factors = read_f64s(&mut r, Some(params.factors.len()))?;
    let omega = read_f64s(&mut r, Some(schema.n_domains()))?;
    let mut slots = Vec::with_capacity(header.slot_steps.len());
    for &steps in &header.slot_steps {
        let m = read_f64s(&mut r, None)?;
        let v = read_f64s(&mut r, Some(m.len()))?;
        slots.push(Slot { m, v, steps });
    }
    let state = TrainerState {
        params,
        adversary: AdversaryState {
            omega,
            epoch: header.tau,
            s_min: extremes[0],
            s_max: extremes[1],
        },
        optimizer: Optimizer {
            config: header.optimizer,
            slots,
        },
        epoch: header.epoch,
        log: header.log,
    };
    let info = CheckpointInfo {
        schema_fingerprint: header.schema_fingerprint,
        config_hash: header.config_hash,
        epoch: header.epoch,
    };
    Ok((state, info))
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    w.write_all(&(xs.len() as u64).to_le_bytes())?;
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, expected: Option<usize>) -> Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    if let Some(e) = expected {
        if n != e {
            return Err(Error::Checkpoint(format!("array of length {n}, expected {e}")));
        }
    }
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("checkpoint is truncated".into()))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("checkpoint is truncated".into()))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Domain, EncodedSample, Side};
    use crate::stats::FeatureStats;
    use crate::trainer::{initial_state, TrainConfig};

    fn schema(card: u32) -> FeatureSchema {
        FeatureSchema::new(
            vec![
                Domain {
                    name: "u".into(),
                    cardinality: card,
                    side: Side::User,
                },
                Domain {
                    name: "i".into(),
                    cardinality: 4,
                    side: Side::Item,
                },
            ],
            0,
            1,
        )
        .unwrap()
    }

    fn state(s: &FeatureSchema) -> TrainerState {
        let train = vec![EncodedSample::new(vec![0, 1], 1), EncodedSample::new(vec![1, 2], 0)];
        let stats = FeatureStats::compute(&train, s).unwrap();
        let mut st = initial_state(s, &stats, &train, &TrainConfig::default());
        st.adversary.omega = vec![0.25, -1.5];
        st.optimizer.slots[0].m[3] = 1e-300;
        st.optimizer.slots[0].steps = 17;
        st.epoch = 4;
        st
    }

    #[test]
    fn round_trip_is_exact() {
        let s = schema(3);
        let st = state(&s);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save(&p, &st, &s, "abc").unwrap();
        let (back, info) = load(&p, &s).unwrap();
        assert_eq!(back, st);
        assert_eq!(info.config_hash, "abc");
        assert_eq!(info.epoch, 4);
    }

    #[test]
    fn saving_twice_gives_identical_bytes() {
        let s = schema(3);
        let st = state(&s);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save(&a, &st, &s, "h").unwrap();
        save(&b, &st, &s, "h").unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn schema_mismatch_is_refused() {
        let s = schema(3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save(&p, &state(&s), &s, "h").unwrap();
        assert!(matches!(load(&p, &schema(5)), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_or_foreign_files_are_refused() {
        let s = schema(3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save(&p, &state(&s), &s, "h").unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load(&p, &s), Err(Error::Checkpoint(_))));
        std::fs::write(&p, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(load(&p, &s), Err(Error::Checkpoint(_))));
    }
}
