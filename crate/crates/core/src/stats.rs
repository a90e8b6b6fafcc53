//! Per-value frequency (α) and combination variety (β).
//!
//! α counts how often a value occurs in its domain relative to the number of
//! training samples. β counts the distinct tuples of *other* domains' values a
//! value co-occurs with, so two values with equal frequency can differ in how
//! isolated they are.

use std::collections::HashSet;
use std::io::Write;

use crate::dataset::{EncodedSample, FeatureSchema, ValueDictionary};
use crate::error::{Error, Result};

/// Per-domain occurrence fraction of each value; unseen values get 0.
pub fn compute_alpha(train: &[EncodedSample], schema: &FeatureSchema) -> Vec<Vec<f64>> {
    let counts = value_counts(train, schema);
    let n = train.len().max(1) as f64;
    counts
        .iter()
        .map(|c| c.iter().map(|&k| k as f64 / n).collect())
        .collect()
}

/// Per-domain number of distinct co-occurring tuples of the remaining domains.
pub fn compute_beta(train: &[EncodedSample], schema: &FeatureSchema) -> Vec<Vec<u32>> {
    let n = schema.n_domains();
    (0..n)
        .map(|d| {
            let mut distinct: HashSet<Vec<u32>> = HashSet::with_capacity(train.len());
            let mut beta = vec![0u32; schema.cardinality(d) as usize];
            for s in train {
                // key = (value in d, values of every other domain)
                let mut key = Vec::with_capacity(n);
                key.push(s.values[d]);
                key.extend(s.values.iter().enumerate().filter(|&(j, _)| j != d).map(|(_, &v)| v));
                if distinct.insert(key) {
                    beta[s.values[d] as usize] += 1;
                }
            }
            beta
        })
        .collect()
}

pub fn value_counts(train: &[EncodedSample], schema: &FeatureSchema) -> Vec<Vec<u32>> {
    let mut counts: Vec<Vec<u32>> = schema
        .domains()
        .iter()
        .map(|d| vec![0; d.cardinality as usize])
        .collect();
    for s in train {
        for (d, &v) in s.values.iter().enumerate() {
            counts[d][v as usize] += 1;
        }
    }
    counts
}

/// Which domains enter a joint product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointScope {
    #[default]
    AllDomains,
    /// Leave out the user-id and item-id domains.
    AttributesOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointStatistics {
    /// Π α
    pub joint_alpha: f64,
    /// Π (α·β)
    pub joint_ab: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub counts: Vec<Vec<u32>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<u32>>,
    pub n_train: usize,
    min_alpha: Vec<f64>,
    id_domains: [usize; 2],
}

impl FeatureStats {
    pub fn compute(train: &[EncodedSample], schema: &FeatureSchema) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data(
                "cannot compute feature statistics on an empty train set".into(),
            ));
        }
        let counts = value_counts(train, schema);
        let alpha = compute_alpha(train, schema);
        let beta = compute_beta(train, schema);
        let min_alpha = alpha
            .iter()
            .map(|a| a.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min))
            .collect();
        Ok(Self {
            counts,
            alpha,
            beta,
            n_train: train.len(),
            min_alpha,
            id_domains: [schema.user_domain(), schema.item_domain()],
        })
    }

    /// α, substituting the domain's smallest positive α for train-unseen values.
    pub fn effective_alpha(&self, domain: usize, value: u32) -> f64 {
        let a = self.alpha[domain][value as usize];
        if a > 0.0 {
            a
        } else {
            self.min_alpha[domain]
        }
    }

    /// β, with 1 for train-unseen values.
    pub fn effective_beta(&self, domain: usize, value: u32) -> u32 {
        self.beta[domain][value as usize].max(1)
    }

    pub fn joint(&self, sample: &EncodedSample) -> JointStatistics {
        self.joint_in(sample, JointScope::AllDomains)
    }

    pub fn joint_in(&self, sample: &EncodedSample, scope: JointScope) -> JointStatistics {
        let mut joint_alpha = 1.0;
        let mut joint_ab = 1.0;
        for (d, &v) in sample.values.iter().enumerate() {
            if scope == JointScope::AttributesOnly && self.id_domains.contains(&d) {
                continue;
            }
            let a = self.effective_alpha(d, v);
            joint_alpha *= a;
            joint_ab *= a * self.effective_beta(d, v) as f64;
        }
        JointStatistics { joint_alpha, joint_ab }
    }

    pub fn joint_all(&self, samples: &[EncodedSample], scope: JointScope) -> Vec<JointStatistics> {
        samples.iter().map(|s| self.joint_in(s, scope)).collect()
    }

    /// Audit dump: one row per (domain, value).
    pub fn write_report<W: Write>(
        &self,
        w: &mut W,
        schema: &FeatureSchema,
        dictionaries: &[ValueDictionary],
    ) -> Result<()> {
        writeln!(w, "domain\tvalue\tcount\talpha\tbeta")?;
        for (d, dom) in schema.domains().iter().enumerate() {
            for v in 0..dom.cardinality {
                let token = dictionaries.get(d).and_then(|dict| dict.token(v)).unwrap_or("?");
                writeln!(
                    w,
                    "{}\t{}\t{}\t{:.9e}\t{}",
                    dom.name,
                    token,
                    self.counts[d][v as usize],
                    self.alpha[d][v as usize],
                    self.beta[d][v as usize]
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Domain, Side};
    use proptest::prelude::*;

    fn schema(cards: &[u32]) -> FeatureSchema {
        FeatureSchema::new(
            cards
                .iter()
                .enumerate()
                .map(|(i, &c)| Domain {
                    name: format!("d{i}"),
                    cardinality: c,
                    side: if i == 0 { Side::User } else { Side::Item },
                })
                .collect(),
            0,
            1,
        )
        .unwrap()
    }

    fn s(v: &[u32]) -> EncodedSample {
        EncodedSample::new(v.to_vec(), 1)
    }

    #[test]
    fn alpha_is_a_frequency() {
        // A=0, B=1 in domain 0
        let train = [s(&[0, 0]), s(&[0, 0]), s(&[0, 1]), s(&[1, 0])];
        let a = compute_alpha(&train, &schema(&[2, 2]));
        assert_eq!(a[0], vec![0.75, 0.25]);
    }

    #[test]
    fn single_value_domain_has_alpha_one() {
        let train = [s(&[0, 0]), s(&[0, 1])];
        let a = compute_alpha(&train, &schema(&[1, 2]));
        assert_eq!(a[0], vec![1.0]);
    }

    #[test]
    fn beta_counts_distinct_restricted_tuples() {
        // {(A,x),(A,x),(A,y),(B,x)}
        let train = [s(&[0, 0]), s(&[0, 0]), s(&[0, 1]), s(&[1, 0])];
        let b = compute_beta(&train, &schema(&[2, 2]));
        assert_eq!(b[0], vec![2, 1]);
        assert_eq!(b[1], vec![2, 1]);
    }

    #[test]
    fn unseen_values_get_zero_and_fallbacks() {
        let train = [s(&[0, 0]), s(&[0, 0]), s(&[1, 0])];
        let st = FeatureStats::compute(&train, &schema(&[3, 2])).unwrap();
        assert_eq!(st.alpha[0][2], 0.0);
        assert_eq!(st.beta[0][2], 0);
        assert!((st.effective_alpha(0, 2) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(st.effective_beta(0, 2), 1);
    }

    #[test]
    fn joint_products() {
        let train = [s(&[0, 0])];
        let mut st = FeatureStats::compute(&train, &schema(&[1, 1])).unwrap();
        st.alpha = vec![vec![0.5], vec![0.2]];
        st.beta = vec![vec![3], vec![1]];
        let j = st.joint(&s(&[0, 0]));
        assert!((j.joint_alpha - 0.1).abs() < 1e-15);
        assert!((j.joint_ab - 0.3).abs() < 1e-15);
    }

    #[test]
    fn all_singleton_sample_closed_form() {
        let train: Vec<_> = (0..5).map(|i| s(&[i, i, i])).collect();
        let st = FeatureStats::compute(&train, &schema(&[5, 5, 5])).unwrap();
        let j = st.joint(&train[2]);
        let expected = 5f64.powi(-3);
        assert!((j.joint_alpha - expected).abs() <= 1e-15 * expected);
        assert!((j.joint_ab - expected).abs() <= 1e-15 * expected);
    }

    #[test]
    fn attributes_only_scope_skips_ids() {
        let train = [s(&[0, 0, 0]), s(&[1, 1, 0]), s(&[1, 1, 1])];
        let st = FeatureStats::compute(&train, &schema(&[2, 2, 2])).unwrap();
        let j = st.joint_in(&train[0], JointScope::AttributesOnly);
        assert!((j.joint_alpha - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_train_is_an_error() {
        assert!(FeatureStats::compute(&[], &schema(&[1, 1])).is_err());
    }

    fn samples_strategy() -> impl Strategy<Value = Vec<Vec<u32>>> {
        prop::collection::vec(prop::collection::vec(0u32..4, 3), 1..80)
    }

    proptest! {
        #[test]
        fn alpha_sums_to_one_and_beta_bounded(rows in samples_strategy()) {
            let train: Vec<_> = rows.iter().map(|r| s(r)).collect();
            let sc = schema(&[4, 4, 4]);
            let st = FeatureStats::compute(&train, &sc).unwrap();
            for d in 0..3 {
                let sum: f64 = st.alpha[d].iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                for v in 0..4 {
                    let c = st.counts[d][v];
                    if c > 0 {
                        prop_assert!(st.beta[d][v] >= 1 && st.beta[d][v] <= c);
                    } else {
                        prop_assert_eq!(st.beta[d][v], 0);
                    }
                }
            }
            for t in &train {
                let j = st.joint(t);
                prop_assert!(j.joint_alpha > 0.0 && j.joint_alpha <= 1.0);
            }
        }

        #[test]
        fn joint_is_domain_order_independent(rows in samples_strategy(), perm in Just([2usize, 0, 1])) {
            let train: Vec<_> = rows.iter().map(|r| s(r)).collect();
            let permuted: Vec<_> = rows
                .iter()
                .map(|r| s(&perm.iter().map(|&p| r[p]).collect::<Vec<_>>()))
                .collect();
            let a = FeatureStats::compute(&train, &schema(&[4, 4, 4])).unwrap();
            let b = FeatureStats::compute(&permuted, &schema(&[4, 4, 4])).unwrap();
            for (x, y) in train.iter().zip(&permuted) {
                let (ja, jb) = (a.joint(x), b.joint(y));
                prop_assert!((ja.joint_alpha - jb.joint_alpha).abs() <= 1e-12 * ja.joint_alpha);
                prop_assert!((ja.joint_ab - jb.joint_ab).abs() <= 1e-12 * ja.joint_ab);
            }
        }
    }
}
