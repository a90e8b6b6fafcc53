//! Accuracy, feature-fairness and robustness metrics.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{fgsm_direction, scale_directions};
use crate::dataset::{EncodedSample, FeatureSchema, ValueDictionary};
use crate::error::{Error, Result};
use crate::model::{cross_entropy, forward, ModelParams, Perturbation};
use crate::rng;
use crate::stats::FeatureStats;

pub const N_BUCKETS: usize = 6;
/// Smallest scored set on which fairness metrics are computed.
pub const MIN_FAIRNESS_SAMPLES: usize = 10;

/// Predicted probability for every sample, in input order.
pub fn predict(params: &ModelParams, samples: &[EncodedSample]) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .with_min_len(256)
        .map(|s| forward(s, params, None).map(|t| t.prediction))
        .collect()
}

/// Rank-sum AUC; tied scores share their average rank.
pub fn auc(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    debug_assert_eq!(predictions.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({n_pos} positives, {n_neg} negatives)"
        )));
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && predictions[order[j]] == predictions[order[i]] {
            j += 1;
        }
        // ranks i+1..=j averaged
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += avg_rank * pos_in_tie as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean cross-entropy with predictions clamped away from 0 and 1.
///
/// Accumulated as a running mean, so identical terms average to themselves exactly.
pub fn logloss(predictions: &[f64], labels: &[u8]) -> f64 {
    let mut mean = 0.0;
    for (k, (&p, &y)) in predictions.iter().zip(labels).enumerate() {
        mean += (cross_entropy(p, y) - mean) / (k + 1) as f64;
    }
    mean
}

/// Test samples ranked by descending Π(α·β), split into contiguous buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct Buckets {
    /// Sample indices, highest joint statistic first; ties by index.
    pub order: Vec<usize>,
    /// Bucket boundaries as `[start, end)` positions in `order`.
    pub bounds: Vec<(usize, usize)>,
    /// Positions `[0, decile)` and `[len - decile, len)` in `order`.
    pub decile: usize,
}

impl Buckets {
    pub fn bucket(&self, b: usize) -> &[usize] {
        let (s, e) = self.bounds[b];
        &self.order[s..e]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.bounds.iter().map(|(s, e)| e - s).collect()
    }

    pub fn top(&self) -> &[usize] {
        &self.order[..self.decile]
    }

    pub fn bottom(&self) -> &[usize] {
        &self.order[self.order.len() - self.decile..]
    }
}

/// Rank by `joint_ab` descending and cut into `N_BUCKETS` near-equal buckets.
/// The first `len % N_BUCKETS` buckets carry one extra sample.
pub fn bucketize(joint_ab: &[f64]) -> Result<Buckets> {
    let n = joint_ab.len();
    if n < MIN_FAIRNESS_SAMPLES {
        return Err(Error::UndefinedMetric(format!(
            "fairness metrics need at least {MIN_FAIRNESS_SAMPLES} samples, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| joint_ab[b].total_cmp(&joint_ab[a]).then(a.cmp(&b)));
    let base = n / N_BUCKETS;
    let extra = n % N_BUCKETS;
    let mut bounds = Vec::with_capacity(N_BUCKETS);
    let mut start = 0;
    for b in 0..N_BUCKETS {
        let size = base + usize::from(b < extra);
        bounds.push((start, start + size));
        start += size;
    }
    Ok(Buckets {
        order,
        bounds,
        decile: n / 10,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fairness {
    /// AUC per bucket; `None` where a bucket holds a single class.
    pub bucket_auc: Vec<Option<f64>>,
    pub bucket_sizes: Vec<usize>,
    pub top_auc: f64,
    pub bottom_auc: f64,
    pub efgd: f64,
    pub std: f64,
    pub dropped_buckets: Vec<usize>,
}

fn subset_auc(idx: &[usize], predictions: &[f64], labels: &[u8]) -> Result<f64> {
    let p: Vec<f64> = idx.iter().map(|&i| predictions[i]).collect();
    let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
    auc(&p, &y)
}

/// Population standard deviation.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// EFGD = |AUC(top decile) − AUC(bottom decile)|; STD over bucket AUCs.
pub fn fairness_metrics(predictions: &[f64], labels: &[u8], buckets: &Buckets) -> Result<Fairness> {
    let mut bucket_auc = Vec::with_capacity(N_BUCKETS);
    let mut dropped = Vec::new();
    for b in 0..buckets.bounds.len() {
        match subset_auc(buckets.bucket(b), predictions, labels) {
            Ok(a) => bucket_auc.push(Some(a)),
            Err(Error::UndefinedMetric(_)) => {
                log::warn!("bucket {b} holds a single class; left out of STD");
                dropped.push(b);
                bucket_auc.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = bucket_auc.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMetric("no bucket holds both classes".into()));
    }
    let top_auc = subset_auc(buckets.top(), predictions, labels)
        .map_err(|e| Error::UndefinedMetric(format!("top decile: {e}")))?;
    let bottom_auc = subset_auc(buckets.bottom(), predictions, labels)
        .map_err(|e| Error::UndefinedMetric(format!("bottom decile: {e}")))?;
    Ok(Fairness {
        bucket_auc,
        bucket_sizes: buckets.sizes(),
        top_auc,
        bottom_auc,
        efgd: (top_auc - bottom_auc).abs(),
        std: population_std(&defined),
        dropped_buckets: dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Fast-gradient direction from the true label.
    #[default]
    Adversarial,
    /// Isotropic Gaussian direction.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub levels: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub mode: NoiseMode,
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub level: f64,
    pub auc_clean: f64,
    pub auc_noisy: f64,
    /// 100 · (clean − noisy) / clean
    pub drop_percent: f64,
}

fn random_direction<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Perturbation {
    let rows = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let len = crate::model::norm(&v);
            if len > 0.0 {
                v.into_iter().map(|x| x / len).collect()
            } else {
                v
            }
        })
        .collect();
    Perturbation::from_rows(rows)
}

fn noisy_predictions(
    params: &ModelParams,
    test: &[EncodedSample],
    level: f64,
    mode: NoiseMode,
    seed: u64,
    trial: usize,
) -> Result<Vec<f64>> {
    let n = params.n_domains();
    let eps = vec![level; n];
    match mode {
        NoiseMode::Adversarial => test
            .par_iter()
            .with_min_len(256)
            .map(|s| {
                let clean = forward(s, params, None)?;
                let delta = scale_directions(&fgsm_direction(&clean, s.label), &eps);
                forward(s, params, Some(&delta)).map(|t| t.prediction)
            })
            .collect(),
        NoiseMode::Random => {
            let mut r = rng::stream(seed, (rng::STREAM_ROBUSTNESS << 32) + trial as u64);
            let deltas: Vec<Perturbation> = test
                .iter()
                .map(|_| scale_directions(&random_direction(n, params.dim(), &mut r), &eps))
                .collect();
            test.par_iter()
                .zip(deltas.par_iter())
                .with_min_len(256)
                .map(|(s, d)| forward(s, params, Some(d)).map(|t| t.prediction))
                .collect()
        }
    }
}

/// AUC drop under per-embedding noise of each norm level, averaged over trials.
pub fn robustness_probe(
    params: &ModelParams,
    test: &[EncodedSample],
    config: &RobustnessConfig,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    let auc_clean = auc(&predict(params, test)?, &labels)?;
    let trials = config.trials.max(1);
    config
        .levels
        .iter()
        .map(|&level| {
            let auc_noisy = if level == 0.0 {
                auc_clean
            } else {
                let mut total = 0.0;
                for trial in 0..trials {
                    let p = noisy_predictions(params, test, level, config.mode, seed, trial)?;
                    total += auc(&p, &labels)?;
                }
                total / trials as f64
            };
            Ok(RobustnessRow {
                level,
                auc_clean,
                auc_noisy,
                drop_percent: 100.0 * (auc_clean - auc_noisy) / auc_clean,
            })
        })
        .collect()
}

/// Metrics for one group of samples sharing the same attribute values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub key: Vec<String>,
    pub count: usize,
    pub positives: usize,
    pub mean_prediction: f64,
    pub auc: Option<f64>,
}

/// Per-group table over the given domains, ordered by token key.
pub fn group_table(
    samples: &[EncodedSample],
    predictions: &[f64],
    domains: &[usize],
    dictionaries: &[ValueDictionary],
) -> Vec<GroupRow> {
    let mut groups: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
    for (k, s) in samples.iter().enumerate() {
        let key = domains
            .iter()
            .map(|&d| {
                dictionaries
                    .get(d)
                    .and_then(|dict| dict.token(s.values[d]))
                    .map(str::to_owned)
                    .unwrap_or_else(|| s.values[d].to_string())
            })
            .collect();
        groups.entry(key).or_default().push(k);
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    groups
        .into_iter()
        .map(|(key, idx)| GroupRow {
            count: idx.len(),
            positives: idx.iter().filter(|&&i| labels[i] == 1).count(),
            mean_prediction: idx.iter().map(|&i| predictions[i]).sum::<f64>() / idx.len() as f64,
            auc: subset_auc(&idx, predictions, &labels).ok(),
            key,
        })
        .collect()
}

/// Full evaluation of a scored test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub n_positives: usize,
    pub auc: f64,
    pub logloss: f64,
    pub fairness: Fairness,
    pub robustness: Vec<RobustnessRow>,
    #[serde(skip)]
    pub groups: Vec<GroupRow>,
}

impl EvalReport {
    pub fn bucket_auc(&self) -> &[Option<f64>] {
        &self.fairness.bucket_auc
    }

    pub fn efgd(&self) -> f64 {
        self.fairness.efgd
    }

    pub fn std(&self) -> f64 {
        self.fairness.std
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "samples     {} ({} positive)", self.n_samples, self.n_positives)?;
        writeln!(w, "AUC         {:.4}", self.auc)?;
        writeln!(w, "Logloss     {:.4}", self.logloss)?;
        writeln!(w, "EFGD        {:.4}", self.fairness.efgd)?;
        writeln!(w, "STD         {:.4}", self.fairness.std)?;
        writeln!(w, "top 10%     {:.4}", self.fairness.top_auc)?;
        writeln!(w, "bottom 10%  {:.4}", self.fairness.bottom_auc)?;
        writeln!(w, "buckets (highest joint statistic first):")?;
        for (b, (a, n)) in self
            .fairness
            .bucket_auc
            .iter()
            .zip(&self.fairness.bucket_sizes)
            .enumerate()
        {
            match a {
                Some(a) => writeln!(w, "  {}  n={n:<6} AUC {a:.4}", b + 1)?,
                None => writeln!(w, "  {}  n={n:<6} AUC undefined (single class, dropped)", b + 1)?,
            }
        }
        if !self.robustness.is_empty() {
            writeln!(w, "robustness (AUC drop %):")?;
            for r in &self.robustness {
                writeln!(
                    w,
                    "  level {:<4} AUC {:.4}  drop {:.2}%",
                    r.level, r.auc_noisy, r.drop_percent
                )?;
            }
        }
        Ok(())
    }

    /// Stable `key\tvalue` rows.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "key\tvalue")?;
        writeln!(w, "n_samples\t{}", self.n_samples)?;
        writeln!(w, "n_positives\t{}", self.n_positives)?;
        writeln!(w, "auc\t{:.10}", self.auc)?;
        writeln!(w, "logloss\t{:.10}", self.logloss)?;
        writeln!(w, "efgd\t{:.10}", self.fairness.efgd)?;
        writeln!(w, "std\t{:.10}", self.fairness.std)?;
        writeln!(w, "top_decile_auc\t{:.10}", self.fairness.top_auc)?;
        writeln!(w, "bottom_decile_auc\t{:.10}", self.fairness.bottom_auc)?;
        for (b, (a, n)) in self
            .fairness
            .bucket_auc
            .iter()
            .zip(&self.fairness.bucket_sizes)
            .enumerate()
        {
            let a = a.map_or_else(|| "NA".to_owned(), |a| format!("{a:.10}"));
            writeln!(w, "bucket_{}_auc\t{a}", b + 1)?;
            writeln!(w, "bucket_{}_size\t{n}", b + 1)?;
        }
        let dropped: Vec<String> = self
            .fairness
            .dropped_buckets
            .iter()
            .map(|b| (b + 1).to_string())
            .collect();
        writeln!(w, "dropped_buckets\t{}", dropped.join(","))?;
        for r in &self.robustness {
            writeln!(w, "auc_noise_{}\t{:.10}", r.level, r.auc_noisy)?;
            writeln!(w, "drop_percent_{}\t{:.10}", r.level, r.drop_percent)?;
        }
        Ok(())
    }

    pub fn write_groups_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "group\tcount\tpositives\tmean_prediction\tauc")?;
        for g in &self.groups {
            let a = g.auc.map_or_else(|| "NA".to_owned(), |a| format!("{a:.6}"));
            writeln!(
                w,
                "{}\t{}\t{}\t{:.6}\t{a}",
                g.key.join("|"),
                g.count,
                g.positives,
                g.mean_prediction
            )?;
        }
        Ok(())
    }
}

/// Options controlling which optional report sections are computed.
#[derive(Debug, Clone, Default)]
pub struct EvalOptions<'a> {
    pub robustness: Option<&'a RobustnessConfig>,
    pub seed: u64,
    pub group_domains: &'a [usize],
    pub dictionaries: &'a [ValueDictionary],
}

pub fn evaluate(
    params: &ModelParams,
    test: &[EncodedSample],
    stats: &FeatureStats,
    schema: &FeatureSchema,
    options: &EvalOptions<'_>,
) -> Result<EvalReport> {
    for s in test {
        schema.validate(s)?;
    }
    let predictions = predict(params, test)?;
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    let joint_ab: Vec<f64> = test.iter().map(|s| stats.joint(s).joint_ab).collect();
    let buckets = bucketize(&joint_ab)?;
    let fairness = fairness_metrics(&predictions, &labels, &buckets)?;
    let robustness = match options.robustness {
        Some(cfg) if !cfg.levels.is_empty() => robustness_probe(params, test, cfg, options.seed)?,
        _ => Vec::new(),
    };
    let groups = if options.group_domains.is_empty() {
        Vec::new()
    } else {
        group_table(test, &predictions, options.group_domains, options.dictionaries)
    };
    Ok(EvalReport {
        n_samples: test.len(),
        n_positives: labels.iter().filter(|&&y| y == 1).count(),
        auc: auc(&predictions, &labels)?,
        logloss: logloss(&predictions, &labels),
        fairness,
        robustness,
        groups,
    })
}
