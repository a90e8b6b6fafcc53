//! Data-pipeline and statistics checks on MovieLens-100K.
//!
//! Expected counts were produced by an independent script over the raw files.
//! Needs `data/ml-100k/` (see the README).

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aafm::adversary::{self, AdversaryState};
use aafm::config::{ExperimentConfig, Variant};
use aafm::eval;
use aafm::experiment;

const POSITIVES: usize = 100_000;
const TEST_POSITIVES: usize = 943;
const TRAIN_POSITIVES: usize = 99_057;
const MALE_SHARE_OF_TRAIN: f64 = 0.742906;

fn config(name: &str, out: &Path, overrides: &[&str]) -> ExperimentConfig {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    assert!(
        root.join("data/ml-100k/u.data").exists(),
        "MovieLens-100K not found under data/ml-100k (see README)"
    );
    let mut all: Vec<String> = overrides.iter().map(|s| (*s).to_owned()).collect();
    all.push(format!("output_dir={:?}", out.display().to_string()));
    let path: PathBuf = root.join("configs").join(name);
    ExperimentConfig::load(&path, &all, None).unwrap()
}

#[test]
fn full_configuration_ingests_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ml100k-full.toml", dir.path(), &[]);
    let started = Instant::now();
    let p = experiment::prepare(&cfg).unwrap();
    assert!(started.elapsed().as_secs() < 60);
    assert!(!p.cache_hit);

    let split = &p.data.split;
    assert_eq!(split.schema.n_domains(), 7);
    assert_eq!(split.train.len() + split.test.len(), POSITIVES);
    assert_eq!(split.test.len(), TEST_POSITIVES);
    assert_eq!(split.train.len(), TRAIN_POSITIVES);
    let ratio = cfg.train.negative_ratio;
    assert_eq!(p.data.test_samples.len(), TEST_POSITIVES * (1 + ratio));
    assert_eq!(p.data.train_samples.len(), TRAIN_POSITIVES * (1 + ratio));

    let gender = split.schema.domain_index("gender").unwrap();
    let male = split.dictionaries[gender].get("M").unwrap();
    let share = p.stats.alpha[gender][male as usize];
    assert!((share - MALE_SHARE_OF_TRAIN).abs() < 5e-7, "alpha(M) = {share}");

    // second prepare is served from the cache and identical
    let again = experiment::prepare(&cfg).unwrap();
    assert!(again.cache_hit);
    assert_eq!(again.data, p.data);
    assert_eq!(again.stats, p.stats);
}

#[test]
fn variety_never_exceeds_frequency_and_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ml100k-full.toml", dir.path(), &[]);
    let p = experiment::prepare(&cfg).unwrap();
    let train = &p.data.split.train;
    let stats = &p.stats;
    for d in 0..stats.beta.len() {
        for (v, (&b, &c)) in stats.beta[d].iter().zip(&stats.counts[d]).enumerate() {
            assert!(b <= c, "domain {d} value {v}: beta {b} > count {c}");
        }
    }
    for name in ["occupation", "genre"] {
        let d = p.data.schema().domain_index(name).unwrap();
        let mut tuples: Vec<HashSet<Vec<u32>>> = vec![HashSet::new(); stats.beta[d].len()];
        for s in train {
            let mut rest = s.values.clone();
            rest.remove(d);
            tuples[s.values[d] as usize].insert(rest);
        }
        let brute: Vec<u32> = tuples.iter().map(|t| t.len() as u32).collect();
        assert_eq!(stats.beta[d], brute, "{name}");
    }
}

#[test]
fn stats_report_has_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ml100k-item.toml", dir.path(), &[]);
    let p = experiment::prepare(&cfg).unwrap();
    let report = std::fs::read_to_string(cfg.output_dir.join("stats.tsv")).unwrap();
    let rows = report.lines().filter(|l| !l.starts_with('#')).skip(1).count();
    assert_eq!(rows, p.data.schema().total_values());
}

#[test]
fn test_buckets_and_reweighting_on_item_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ml100k-item.toml", dir.path(), &[]);
    let p = experiment::prepare(&cfg).unwrap();

    let joint: Vec<f64> = p.data.test_samples.iter().map(|s| p.stats.joint(s).joint_ab).collect();
    let sizes = eval::bucketize(&joint).unwrap().sizes();
    assert_eq!(sizes, vec![786, 786, 786, 786, 786, 785]);

    let adv = cfg.with_variant(Variant::Aafm).train_config().adversary;
    assert_eq!(adv.t, 100.0);
    let mut alphas: Vec<f64> = p
        .data
        .train_samples
        .iter()
        .map(|s| p.stats.joint(s).joint_alpha)
        .collect();
    let state = AdversaryState::new(p.data.schema().n_domains(), &alphas);
    alphas.sort_by(f64::total_cmp);
    let median = adversary::reweight_lambda(alphas[alphas.len() / 2], &state, &adv);
    assert!(median > 1.0 && median < 100.0, "median lambda {median}");
    // non-increasing in the joint frequency
    let lambdas: Vec<f64> = alphas
        .iter()
        .map(|&a| adversary::reweight_lambda(a, &state, &adv))
        .collect();
    assert!(lambdas.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn adversarial_training_improves_over_its_first_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ml100k-item.toml", dir.path(), &["variant=\"aafm\"", "train.epochs=6"]);
    let out = experiment::train(&cfg, None).unwrap();
    let mut aucs: Vec<f64> = out.state.log.epochs.iter().map(|e| e.val_auc.unwrap()).collect();
    let median = |xs: &mut [f64]| {
        xs.sort_by(f64::total_cmp);
        xs[1]
    };
    let last = median(&mut aucs[3..].to_vec());
    let first = median(&mut aucs[..3]);
    assert!(last > first, "first {first:.4}, last {last:.4}");
}
