//! Interaction data: schema, encoding, leave-one-out split and negative sampling.

mod cache;
mod ingest;
mod negatives;
mod split;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use cache::{read_cache, read_fingerprint, write_cache, CACHE_VERSION};
pub use ingest::{
    ingest, load_tables, BinSpec, DomainSpec, Extract, IngestOutput, IngestSpec, RawTable, RawTables, TableSpec,
};
pub use negatives::{NegativeSampler, SampledSet};
pub use split::{leave_one_out, LeaveOneOut};

/// Which entity a feature domain describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
    /// Per-interaction feature, copied verbatim onto sampled negatives.
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    pub cardinality: u32,
    pub side: Side,
}

/// Ordered list of categorical feature domains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    domains: Vec<Domain>,
    user_domain: usize,
    item_domain: usize,
}

impl FeatureSchema {
    pub fn new(domains: Vec<Domain>, user_domain: usize, item_domain: usize) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::Schema("schema has no domains".into()));
        }
        if user_domain >= domains.len() || item_domain >= domains.len() {
            return Err(Error::Schema(format!(
                "id domain index out of range (user {user_domain}, item {item_domain}, {} domains)",
                domains.len()
            )));
        }
        if user_domain == item_domain {
            return Err(Error::Schema("user-id and item-id must be different domains".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for d in &domains {
            if d.cardinality == 0 {
                return Err(Error::Schema(format!("domain {:?} has cardinality 0", d.name)));
            }
            if !seen.insert(d.name.as_str()) {
                return Err(Error::Schema(format!("duplicate domain name {:?}", d.name)));
            }
        }
        Ok(Self {
            domains,
            user_domain,
            item_domain,
        })
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn cardinality(&self, domain: usize) -> u32 {
        self.domains[domain].cardinality
    }

    pub fn user_domain(&self) -> usize {
        self.user_domain
    }

    pub fn item_domain(&self) -> usize {
        self.item_domain
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.name == name)
    }

    pub fn is_id_domain(&self, domain: usize) -> bool {
        domain == self.user_domain || domain == self.item_domain
    }

    pub fn total_values(&self) -> usize {
        self.domains.iter().map(|d| d.cardinality as usize).sum()
    }

    pub fn validate(&self, sample: &EncodedSample) -> Result<()> {
        if sample.values.len() != self.domains.len() {
            return Err(Error::Schema(format!(
                "sample has {} values, schema has {} domains",
                sample.values.len(),
                self.domains.len()
            )));
        }
        if sample.label > 1 {
            return Err(Error::Schema(format!("label {} is not binary", sample.label)));
        }
        for (i, (&v, d)) in sample.values.iter().zip(&self.domains).enumerate() {
            if v >= d.cardinality {
                return Err(Error::Schema(format!(
                    "value {v} out of range for domain {i} ({:?}, cardinality {})",
                    d.name, d.cardinality
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over domain names, sides and cardinalities.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for d in &self.domains {
            h.update(d.name.as_bytes());
            h.update([0u8]);
            h.update([d.side as u8]);
            h.update(d.cardinality.to_le_bytes());
        }
        h.update((self.user_domain as u64).to_le_bytes());
        h.update((self.item_domain as u64).to_le_bytes());
        h.finalize().into()
    }
}

/// One interaction: a value index per domain plus a binary label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedSample {
    pub values: Vec<u32>,
    pub label: u8,
}

impl EncodedSample {
    pub fn new(values: Vec<u32>, label: u8) -> Self {
        Self { values, label }
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }

    pub fn target(&self) -> f64 {
        self.label as f64
    }
}

/// A positive interaction together with its per-user ordering key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub sample: EncodedSample,
    pub order_key: i64,
}

/// Raw token <-> value index for one domain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueDictionary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl ValueDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    /// Index of `token`, assigning the next free index when unseen.
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }
}

/// Decode a sample back into its (binned) token sequence.
pub fn decode(sample: &EncodedSample, dictionaries: &[ValueDictionary]) -> Option<Vec<String>> {
    sample
        .values
        .iter()
        .zip(dictionaries)
        .map(|(&v, d)| d.token(v).map(str::to_owned))
        .collect()
}

/// Encode a token sequence; `None` if any token is unknown.
pub fn encode(tokens: &[String], dictionaries: &[ValueDictionary], label: u8) -> Option<EncodedSample> {
    let values = tokens
        .iter()
        .zip(dictionaries)
        .map(|(t, d)| d.get(t))
        .collect::<Option<Vec<_>>>()?;
    Some(EncodedSample::new(values, label))
}

/// Leave-one-out split of the positive interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub schema: FeatureSchema,
    pub dictionaries: Vec<ValueDictionary>,
    pub train: Vec<EncodedSample>,
    pub test: Vec<EncodedSample>,
}

impl SplitDataset {
    pub fn from_ingest(ingested: IngestOutput) -> Self {
        let LeaveOneOut { train, test } = leave_one_out(&ingested.interactions, &ingested.schema);
        Self {
            schema: ingested.schema,
            dictionaries: ingested.dictionaries,
            train,
            test,
        }
    }
}

/// Split positives plus the negative-augmented sets used for training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub split: SplitDataset,
    pub train_samples: Vec<EncodedSample>,
    pub test_samples: Vec<EncodedSample>,
    pub skipped_train_users: usize,
    pub skipped_test_users: usize,
    /// Hex digest of the inputs this data was prepared from.
    pub fingerprint: String,
}

impl PreparedData {
    /// Sample negatives for both splits. Test negatives come from a stream
    /// disjoint from the training one.
    pub fn build(split: SplitDataset, ratio: usize, seed: u64, fingerprint: String) -> Result<Self> {
        let all_positives: Vec<&EncodedSample> = split.train.iter().chain(&split.test).collect();
        let sampler = NegativeSampler::new(&split.schema, all_positives.iter().copied())?;
        let train = sampler.sample(
            &split.train,
            ratio,
            &mut crate::rng::stream(seed, crate::rng::STREAM_TRAIN_NEGATIVES),
        )?;
        let test = sampler.sample(
            &split.test,
            ratio,
            &mut crate::rng::stream(seed, crate::rng::STREAM_TEST_NEGATIVES),
        )?;
        Ok(Self {
            split,
            train_samples: train.samples,
            test_samples: test.samples,
            skipped_train_users: train.skipped,
            skipped_test_users: test.skipped,
            fingerprint,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.split.schema
    }
}
