use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;

use super::{EncodedSample, FeatureSchema, Side};
use crate::error::{Error, Result};

/// Uniform negative sampler over the item catalog seen in the positives.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    user_domain: usize,
    item_domain: usize,
    item_side: Vec<usize>,
    /// Catalog item id -> full value row of its first positive (item-side entries used).
    catalog: Vec<(u32, Vec<u32>)>,
    seen: HashMap<u32, HashSet<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSet {
    /// Each positive followed by its negatives.
    pub samples: Vec<EncodedSample>,
    /// Users who had interacted with every catalog item.
    pub skipped: usize,
}

impl NegativeSampler {
    /// `observed` must hold every known positive so negatives never hit one.
    pub fn new<'a>(schema: &FeatureSchema, observed: impl IntoIterator<Item = &'a EncodedSample>) -> Result<Self> {
        let user_domain = schema.user_domain();
        let item_domain = schema.item_domain();
        let item_side: Vec<usize> = schema
            .domains()
            .iter()
            .enumerate()
            .filter(|(_, d)| d.side == Side::Item)
            .map(|(i, _)| i)
            .collect();
        let mut catalog = BTreeMap::new();
        let mut seen: HashMap<u32, HashSet<u32>> = HashMap::new();
        for s in observed {
            if !s.is_positive() {
                return Err(Error::Data("negative sampler fed a negative as observed".into()));
            }
            let item = s.values[item_domain];
            catalog.entry(item).or_insert_with(|| s.values.clone());
            seen.entry(s.values[user_domain]).or_default().insert(item);
        }
        Ok(Self {
            user_domain,
            item_domain,
            item_side,
            catalog: catalog.into_iter().collect(),
            seen,
        })
    }

    pub fn catalog_size(&self) -> usize {
        self.catalog.len()
    }

    pub fn has_interacted(&self, user: u32, item: u32) -> bool {
        self.seen.get(&user).is_some_and(|s| s.contains(&item))
    }

    /// Emit `ratio` negatives after every positive.
    pub fn sample<R: Rng>(&self, positives: &[EncodedSample], ratio: usize, rng: &mut R) -> Result<SampledSet> {
        if ratio == 0 {
            return Err(Error::Config("negative ratio must be at least 1".into()));
        }
        let empty = HashSet::new();
        let mut samples = Vec::with_capacity(positives.len() * (ratio + 1));
        let mut skipped_users = HashSet::new();
        let mut complements: HashMap<u32, Vec<usize>> = HashMap::new();
        for pos in positives {
            samples.push(pos.clone());
            let user = pos.values[self.user_domain];
            let seen = self.seen.get(&user).unwrap_or(&empty);
            let unseen = self.catalog.len().saturating_sub(seen.len());
            if unseen == 0 {
                skipped_users.insert(user);
                continue;
            }
            // Dense users: draw from the explicit complement instead of rejecting.
            let dense = seen.len() * 2 > self.catalog.len();
            for _ in 0..ratio {
                let slot = if dense {
                    let comp = complements.entry(user).or_insert_with(|| {
                        (0..self.catalog.len())
                            .filter(|&k| !seen.contains(&self.catalog[k].0))
                            .collect()
                    });
                    comp[rng.random_range(0..comp.len())]
                } else {
                    loop {
                        let k = rng.random_range(0..self.catalog.len());
                        if !seen.contains(&self.catalog[k].0) {
                            break k;
                        }
                    }
                };
                let (item, row) = &self.catalog[slot];
                let mut values = pos.values.clone();
                for &d in &self.item_side {
                    values[d] = row[d];
                }
                values[self.item_domain] = *item;
                samples.push(EncodedSample::new(values, 0));
            }
        }
        if !skipped_users.is_empty() {
            log::warn!(
                "{} users interacted with every item; no negatives drawn for them",
                skipped_users.len()
            );
        }
        Ok(SampledSet {
            samples,
            skipped: skipped_users.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Domain;
    use crate::rng;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                Domain {
                    name: "user".into(),
                    cardinality: 3,
                    side: Side::User,
                },
                Domain {
                    name: "gender".into(),
                    cardinality: 2,
                    side: Side::User,
                },
                Domain {
                    name: "item".into(),
                    cardinality: 6,
                    side: Side::Item,
                },
                Domain {
                    name: "genre".into(),
                    cardinality: 3,
                    side: Side::Item,
                },
                Domain {
                    name: "hour".into(),
                    cardinality: 24,
                    side: Side::Context,
                },
            ],
            0,
            2,
        )
        .unwrap()
    }

    fn positives() -> Vec<EncodedSample> {
        let p = |u, g, i, genre, h| EncodedSample::new(vec![u, g, i, genre, h], 1);
        vec![
            p(0, 0, 0, 0, 7),
            p(0, 0, 1, 1, 8),
            p(1, 1, 2, 2, 9),
            p(1, 1, 3, 0, 3),
            p(2, 0, 4, 1, 1),
            p(2, 0, 5, 2, 2),
        ]
    }

    #[test]
    fn ratio_four_emits_five_samples_sharing_user_features() {
        let data = positives();
        let s = NegativeSampler::new(&schema(), &data).unwrap();
        let out = s.sample(&data[..1], 4, &mut rng::stream(7, 0)).unwrap();
        assert_eq!(out.samples.len(), 5);
        assert_eq!(out.samples.iter().filter(|x| x.label == 1).count(), 1);
        for neg in &out.samples[1..] {
            assert_eq!(neg.label, 0);
            assert_eq!(&neg.values[..2], &[0, 0]);
            assert_eq!(neg.values[4], 7, "context copied from the positive");
            assert!(!s.has_interacted(0, neg.values[2]));
            // item-side features follow the sampled item
            let item_row = data.iter().find(|p| p.values[2] == neg.values[2]).unwrap();
            assert_eq!(neg.values[3], item_row.values[3]);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let data = positives();
        let s = NegativeSampler::new(&schema(), &data).unwrap();
        let a = s.sample(&data, 3, &mut rng::stream(11, 2)).unwrap();
        let b = s.sample(&data, 3, &mut rng::stream(11, 2)).unwrap();
        assert_eq!(a, b);
        let c = s.sample(&data, 3, &mut rng::stream(11, 3)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn saturated_user_is_skipped() {
        let mut data = positives();
        for i in 0..6 {
            data.push(EncodedSample::new(vec![0, 0, i, 0, 0], 1));
        }
        let s = NegativeSampler::new(&schema(), &data).unwrap();
        let out = s.sample(&data[..2], 2, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(out.skipped, 1);
        assert_eq!(out.samples.len(), 2);
    }

    #[test]
    fn zero_ratio_is_rejected() {
        let data = positives();
        let s = NegativeSampler::new(&schema(), &data).unwrap();
        assert!(s.sample(&data, 0, &mut rng::stream(1, 0)).is_err());
    }
}
