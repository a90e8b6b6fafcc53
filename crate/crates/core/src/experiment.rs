//! Commands behind the CLI, each driven by an [`ExperimentConfig`].
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! data.cache, stats.tsv            shared by every variant
//! <variant>/train_log.tsv          one row per epoch
//! <variant>/adversary.tsv          per-epoch ε, λ and ω diagnostics
//! <variant>/timing.tsv             wall-clock per epoch
//! <variant>/checkpoints/*.ckpt
//! <variant>/eval.txt, eval.tsv, groups.tsv, robustness.tsv
//! sweep-t/<variant>/t-<t>/...      one run per t, plus sweep-t/<variant>/frontier.tsv
//! ```
//!
//! Every text output starts with a `#` provenance line carrying the crate
//! version, config hash, seed and data fingerprint.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset::{self, PreparedData, SplitDataset, CACHE_VERSION};
use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions, EvalReport, RobustnessRow};
use crate::stats::FeatureStats;
use crate::trainer::{self, TrainObserver, TrainerState};
use crate::VERSION;

/// Prepared data plus the statistics computed from its train split.
pub struct Prepared {
    pub data: PreparedData,
    pub stats: FeatureStats,
    pub cache_hit: bool,
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::file(path, e))
}

/// Write `path` atomically, prefixed by `header`.
fn write_with_header(
    path: &Path,
    header: &str,
    body: impl FnOnce(&mut BufWriter<std::fs::File>) -> Result<()>,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let f = std::fs::File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{header}")?;
        body(&mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

fn describe_adversary(cfg: &ExperimentConfig) -> String {
    let a = cfg.variant.adversary(&cfg.adversary);
    if !a.is_active() {
        return "off".into();
    }
    let eps = if a.adaptive_epsilon {
        "adaptive".to_owned()
    } else {
        a.base_epsilon.to_string()
    };
    let lambda = if a.adaptive_lambda {
        format!("adaptive(t={})", a.t)
    } else {
        a.lambda_fixed.to_string()
    };
    let decay = if a.decay {
        format!("on(alpha={})", a.anneal_alpha)
    } else {
        "off".into()
    };
    format!("epsilon={eps},lambda={lambda},decay={decay}")
}

/// Provenance line written at the top of every output file.
pub fn provenance(cfg: &ExperimentConfig, data_hash: &str) -> String {
    format!(
        "# aafm version={VERSION} config_hash={} seed={} data_hash={data_hash} variant={} adversary={}",
        cfg.hash(),
        cfg.seed,
        cfg.variant,
        describe_adversary(cfg)
    )
}

/// Hash of everything the prepared data depends on. Paths are left out so
/// the same files give the same fingerprint wherever they live.
pub fn data_fingerprint(cfg: &ExperimentConfig) -> Result<String> {
    let mut spec = cfg.data.clone();
    spec.interactions.path = PathBuf::new();
    if let Some(t) = &mut spec.user_table {
        t.path = PathBuf::new();
    }
    if let Some(t) = &mut spec.item_table {
        t.path = PathBuf::new();
    }
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.to_le_bytes());
    h.update(serde_json::to_vec(&spec).expect("spec serializes"));
    h.update((cfg.train.negative_ratio as u64).to_le_bytes());
    h.update(cfg.seed.to_le_bytes());
    for p in cfg.data.paths() {
        let bytes = std::fs::read(p).map_err(|e| Error::file(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Ingest, split and sample negatives, or reuse the cache when its inputs are unchanged.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    create_dir(&cfg.output_dir)?;
    let fingerprint = data_fingerprint(cfg)?;
    let cache = cfg.cache_path();
    let cached = cache.exists() && dataset::read_fingerprint(&cache).ok().as_deref() == Some(&fingerprint);
    let data = if cached {
        log::info!("cache hit: {}", cache.display());
        dataset::read_cache(&cache)?
    } else {
        let tables = dataset::load_tables(&cfg.data)?;
        let ingested = dataset::ingest(&tables, &cfg.data)?;
        log::info!(
            "ingested {} of {} rows ({} skipped)",
            ingested.interactions.len(),
            ingested.rows_read,
            ingested.row_errors.len()
        );
        let split = SplitDataset::from_ingest(ingested);
        let data = PreparedData::build(split, cfg.train.negative_ratio, cfg.seed, fingerprint)?;
        if data.skipped_train_users + data.skipped_test_users > 0 {
            log::warn!(
                "{} train and {} test users interacted with every item and got no negatives",
                data.skipped_train_users,
                data.skipped_test_users
            );
        }
        dataset::write_cache(&cache, &data)?;
        data
    };
    let stats = FeatureStats::compute(&data.split.train, data.schema())?;
    let stats_path = cfg.output_dir.join("stats.tsv");
    if !cached || !stats_path.exists() {
        write_stats(cfg, &data, &stats, &stats_path)?;
    }
    Ok(Prepared {
        data,
        stats,
        cache_hit: cached,
    })
}

fn write_stats(cfg: &ExperimentConfig, data: &PreparedData, stats: &FeatureStats, path: &Path) -> Result<()> {
    write_with_header(path, &provenance(cfg, &data.fingerprint), |w| {
        stats.write_report(w, data.schema(), &data.split.dictionaries)
    })
}

/// Summary lines for the `stats` command.
pub fn stats_summary(p: &Prepared) -> Vec<String> {
    let schema = p.data.schema();
    let mut out = vec![format!(
        "train positives {}, test positives {}, train samples {}, test samples {}",
        p.data.split.train.len(),
        p.data.split.test.len(),
        p.data.train_samples.len(),
        p.data.test_samples.len()
    )];
    for (d, dom) in schema.domains().iter().enumerate() {
        let seen = p.stats.counts[d].iter().filter(|&&c| c > 0).count();
        let (lo, hi) = p.stats.alpha[d]
            .iter()
            .filter(|&&a| a > 0.0)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &a| (lo.min(a), hi.max(a)));
        let max_beta = p.stats.beta[d].iter().max().copied().unwrap_or(0);
        out.push(format!(
            "{:<14} values {:>5} (seen {:>5})  alpha [{lo:.3e}, {hi:.3e}]  max beta {max_beta}",
            dom.name, dom.cardinality, seen
        ));
    }
    out
}

/// Write per-epoch checkpoints and the last finite state on divergence.
struct CheckpointWriter<'a> {
    dir: PathBuf,
    every: u32,
    schema: &'a crate::dataset::FeatureSchema,
    config_hash: String,
}

impl TrainObserver for CheckpointWriter<'_> {
    fn epoch_end(&mut self, state: &TrainerState) -> Result<()> {
        if self.every > 0 && state.epoch.is_multiple_of(self.every) {
            let p = self.dir.join(format!("epoch-{:03}.ckpt", state.epoch));
            checkpoint::save(&p, state, self.schema, &self.config_hash)?;
        }
        Ok(())
    }

    fn diverged(&mut self, last_finite: &TrainerState) -> Result<()> {
        let p = self.dir.join("last-finite.ckpt");
        log::error!("training diverged; last finite state saved to {}", p.display());
        checkpoint::save(&p, last_finite, self.schema, &self.config_hash)
    }
}

pub struct TrainOutcome {
    pub state: TrainerState,
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
}

/// Train the configured variant and write its log and checkpoints.
pub fn train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let prepared = prepare(cfg)?;
    train_in(cfg, &prepared, &cfg.run_dir(), resume)
}

/// Train into `run_dir` from already prepared data.
pub fn train_in(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    run_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    let schema = prepared.data.schema();
    let ckpt_dir = run_dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let resume_state = match resume {
        Some(p) => {
            let (state, info) = checkpoint::load(p, schema)?;
            if info.config_hash != cfg.hash() {
                log::warn!("resuming from a checkpoint written under a different configuration");
            }
            Some(state)
        }
        None => None,
    };
    let mut observer = CheckpointWriter {
        dir: ckpt_dir.clone(),
        every: cfg.checkpoint_every,
        schema,
        config_hash: cfg.hash(),
    };
    let state = trainer::train(
        schema,
        &prepared.data.train_samples,
        &prepared.data.test_samples,
        &prepared.stats,
        &cfg.train_config(),
        resume_state,
        &mut observer,
    )?;
    let header = provenance(cfg, &prepared.data.fingerprint);
    write_with_header(&run_dir.join("train_log.tsv"), &header, |w| state.log.write_tsv(w))?;
    write_with_header(&run_dir.join("adversary.tsv"), &header, |w| {
        state.log.write_adversary_tsv(w, schema)
    })?;
    // wall-clock lives apart so the logs above stay byte-comparable
    write_with_header(&run_dir.join("timing.tsv"), &header, |w| state.log.write_timing_tsv(w))?;
    let final_ckpt = ckpt_dir.join("final.ckpt");
    checkpoint::save(&final_ckpt, &state, schema, &cfg.hash())?;
    Ok(TrainOutcome {
        state,
        run_dir: run_dir.to_owned(),
        checkpoint: final_ckpt,
    })
}

fn default_checkpoint(cfg: &ExperimentConfig) -> PathBuf {
    cfg.run_dir().join("checkpoints").join("final.ckpt")
}

/// Evaluate a checkpoint (the variant's final one by default) on the test split.
pub fn eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let prepared = prepare(cfg)?;
    let ckpt = checkpoint.map_or_else(|| default_checkpoint(cfg), Path::to_path_buf);
    let (state, _) = checkpoint::load(&ckpt, prepared.data.schema())?;
    let out_dir = cfg.run_dir();
    create_dir(&out_dir)?;
    eval_in(cfg, &prepared, &state, &out_dir)
}

/// Evaluate `state` and write the reports into `out_dir`.
pub fn eval_in(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    state: &TrainerState,
    out_dir: &Path,
) -> Result<EvalReport> {
    let schema = prepared.data.schema();
    let group_domains = cfg
        .eval
        .group_domains
        .iter()
        .map(|n| {
            schema
                .domain_index(n)
                .ok_or_else(|| Error::Config(format!("group domain {n:?} is not in the schema")))
        })
        .collect::<Result<Vec<_>>>()?;
    let robustness = cfg.eval.robustness();
    let options = EvalOptions {
        robustness: robustness.as_ref(),
        seed: cfg.seed,
        group_domains: &group_domains,
        dictionaries: &prepared.data.split.dictionaries,
    };
    let report = eval::evaluate(
        &state.params,
        &prepared.data.test_samples,
        &prepared.stats,
        schema,
        &options,
    )?;
    let header = provenance(cfg, &prepared.data.fingerprint);
    write_with_header(&out_dir.join("eval.txt"), &header, |w| report.write_text(w))?;
    write_with_header(&out_dir.join("eval.tsv"), &header, |w| report.write_tsv(w))?;
    if !report.groups.is_empty() {
        write_with_header(&out_dir.join("groups.tsv"), &header, |w| report.write_groups_tsv(w))?;
    }
    Ok(report)
}

/// Run only the robustness probe on a checkpoint.
pub fn robustness(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Vec<RobustnessRow>> {
    let probe = cfg
        .eval
        .robustness()
        .ok_or_else(|| Error::Config("eval.robustness_levels is empty".into()))?;
    let prepared = prepare(cfg)?;
    let ckpt = checkpoint.map_or_else(|| default_checkpoint(cfg), Path::to_path_buf);
    let (state, _) = checkpoint::load(&ckpt, prepared.data.schema())?;
    let rows = eval::robustness_probe(&state.params, &prepared.data.test_samples, &probe, cfg.seed)?;
    let out_dir = cfg.run_dir();
    create_dir(&out_dir)?;
    write_with_header(
        &out_dir.join("robustness.tsv"),
        &provenance(cfg, &prepared.data.fingerprint),
        |w| write_robustness(w, &rows),
    )?;
    Ok(rows)
}

pub fn write_robustness<W: Write>(w: &mut W, rows: &[RobustnessRow]) -> Result<()> {
    writeln!(w, "level\tauc_clean\tauc_noisy\tdrop_percent")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{:.10}\t{:.10}\t{:.10}",
            r.level, r.auc_clean, r.auc_noisy, r.drop_percent
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub t: f64,
    pub auc: f64,
    pub logloss: f64,
    pub std: f64,
    pub efgd: f64,
}

/// One full train and evaluation per `t`, plus a consolidated frontier table.
pub fn sweep_t(cfg: &ExperimentConfig, ts: &[f64]) -> Result<Vec<SweepRow>> {
    if !cfg.variant.adversary(&cfg.adversary).adaptive_lambda {
        return Err(Error::Config(format!(
            "variant {} has no adaptive re-weighting to sweep",
            cfg.variant
        )));
    }
    if ts.is_empty() {
        return Err(Error::Config("no t values given".into()));
    }
    let prepared = prepare(cfg)?;
    let sweep_dir = cfg.output_dir.join("sweep-t").join(cfg.variant.name());
    let mut rows = Vec::with_capacity(ts.len());
    for &t in ts {
        let mut run = cfg.clone();
        run.adversary.t = t;
        run.validate()?;
        let dir = sweep_dir.join(format!("t-{t}"));
        let outcome = train_in(&run, &prepared, &dir, None)?;
        let report = eval_in(&run, &prepared, &outcome.state, &dir)?;
        rows.push(SweepRow {
            t,
            auc: report.auc,
            logloss: report.logloss,
            std: report.std(),
            efgd: report.efgd(),
        });
    }
    write_with_header(
        &sweep_dir.join("frontier.tsv"),
        &provenance(cfg, &prepared.data.fingerprint),
        |w| {
            writeln!(w, "t\tauc\tlogloss\tstd\tefgd")?;
            for r in &rows {
                writeln!(
                    w,
                    "{}\t{:.10}\t{:.10}\t{:.10}\t{:.10}",
                    r.t, r.auc, r.logloss, r.std, r.efgd
                )?;
            }
            Ok(())
        },
    )?;
    Ok(rows)
}
