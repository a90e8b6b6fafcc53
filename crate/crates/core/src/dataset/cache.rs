//! Binary cache of a prepared dataset.
//!
//! Layout (little endian):
//!
//! ```text
//! b"AAFMDATA" | u32 version | u64 header length | JSON header
//! then four sections (train positives, test positives, train samples, test samples):
//!   u64 count | count x ( n_domains x u32 value | u8 label )
//! ```
//!
//! The JSON header carries the schema (domain list and cardinalities),
//! dictionaries and the input fingerprint.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncodedSample, FeatureSchema, PreparedData, SplitDataset, ValueDictionary};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AAFMDATA";
pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    fingerprint: String,
    schema: FeatureSchema,
    dictionaries: Vec<ValueDictionary>,
    skipped_train_users: usize,
    skipped_test_users: usize,
}

pub fn write_cache(path: &Path, data: &PreparedData) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let f = std::fs::File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
        let mut w = BufWriter::new(f);
        let header = Header {
            version: CACHE_VERSION,
            fingerprint: data.fingerprint.clone(),
            schema: data.split.schema.clone(),
            dictionaries: data.split.dictionaries.clone(),
            skipped_train_users: data.skipped_train_users,
            skipped_test_users: data.skipped_test_users,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for section in [
            &data.split.train,
            &data.split.test,
            &data.train_samples,
            &data.test_samples,
        ] {
            write_samples(&mut w, section)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

fn write_samples<W: Write>(w: &mut W, samples: &[EncodedSample]) -> Result<()> {
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        for v in &s.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[s.label])?;
    }
    Ok(())
}

/// Read just the fingerprint, to decide whether a cache is still current.
pub fn read_fingerprint(path: &Path) -> Result<String> {
    let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    Ok(read_header(&mut BufReader::new(f))?.fingerprint)
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data("not a dataset cache".into()));
    }
    let version = read_u32(r)?;
    if version != CACHE_VERSION {
        return Err(Error::Data(format!(
            "cache version {version}, expected {CACHE_VERSION}"
        )));
    }
    let len = read_u64(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let mut header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::Data(format!("cache header: {e}")))?;
    for d in &mut header.dictionaries {
        d.rebuild_index();
    }
    Ok(header)
}

pub fn read_cache(path: &Path) -> Result<PreparedData> {
    let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = BufReader::new(f);
    let header = read_header(&mut r)?;
    let schema = FeatureSchema::new(
        header.schema.domains().to_vec(),
        header.schema.user_domain(),
        header.schema.item_domain(),
    )?;
    let mut sections = Vec::with_capacity(4);
    for _ in 0..4 {
        sections.push(read_samples(&mut r, &schema)?);
    }
    let test_samples = sections.pop().unwrap();
    let train_samples = sections.pop().unwrap();
    let test = sections.pop().unwrap();
    let train = sections.pop().unwrap();
    Ok(PreparedData {
        split: SplitDataset {
            schema,
            dictionaries: header.dictionaries,
            train,
            test,
        },
        train_samples,
        test_samples,
        skipped_train_users: header.skipped_train_users,
        skipped_test_users: header.skipped_test_users,
        fingerprint: header.fingerprint,
    })
}

fn read_samples<R: Read>(r: &mut R, schema: &FeatureSchema) -> Result<Vec<EncodedSample>> {
    let count = read_u64(r)? as usize;
    let n = schema.n_domains();
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0u8; 4 * n + 1];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let values = buf[..4 * n]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let s = EncodedSample::new(values, buf[4 * n]);
        schema.validate(&s)?;
        out.push(s);
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
