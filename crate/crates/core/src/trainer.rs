//! Min–max training: each epoch runs a normal pass, then an adversarial pass
//! whose perturbations are rebuilt from fresh gradients for every batch.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    decay_gradient, decay_loss, epsilons, fgsm_direction, omega_gradient, sample_lambda, scale_directions,
    AdversaryConfig, AdversaryState,
};
use crate::dataset::{EncodedSample, FeatureSchema};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{backward, forward, loss, GradientBuffer, ModelParams, ParamGradients, INIT_STD};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng;
use crate::stats::FeatureStats;

/// Optimizer slots, one per parameter group.
const SLOT_EMBEDDINGS: usize = 0;
const SLOT_FIRST_ORDER: usize = 1;
const SLOT_FACTORS: usize = 2;
const SLOT_OMEGA: usize = 3;

/// Tolerance on ‖δ_i‖ − ε_i when auditing perturbations.
pub const FGSM_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternation {
    /// Whole normal pass, then whole adversarial pass.
    #[default]
    Epoch,
    /// Normal step then adversarial step on every batch.
    Batch,
}

fn default_epochs() -> u32 {
    30
}
fn default_batch() -> usize {
    256
}
fn default_dim() -> usize {
    16
}
fn default_ratio() -> usize {
    4
}
fn default_init_std() -> f64 {
    INIT_STD
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Set from the experiment, not from the `[train]` table.
    #[serde(skip)]
    pub seed: u64,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Negatives per positive, used when the data is prepared.
    #[serde(default = "default_ratio")]
    pub negative_ratio: usize,
    #[serde(default)]
    pub alternation: Alternation,
    /// Set from the experiment variant.
    #[serde(skip)]
    pub adversary: AdversaryConfig,
    /// Score the test split after every epoch.
    #[serde(default = "default_true")]
    pub validate_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            embedding_dim: default_dim(),
            init_std: INIT_STD,
            negative_ratio: default_ratio(),
            alternation: Alternation::Epoch,
            adversary: AdversaryConfig::default(),
            validate_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be >= 1".into()));
        }
        if self.negative_ratio == 0 {
            return Err(Error::Config("negative_ratio must be >= 1".into()));
        }
        if !self.optimizer.learning_rate.is_finite() || self.optimizer.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be a positive number".into()));
        }
        if !self.init_std.is_finite() || self.init_std <= 0.0 {
            return Err(Error::Config("init_std must be positive".into()));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps.is_nan() || o.eps <= 0.0 {
            return Err(Error::Config("adam moments must lie in [0, 1) and eps > 0".into()));
        }
        self.adversary.validate()
    }
}

/// One completed epoch. Equality ignores wall-clock time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Mean loss over the normal pass.
    pub normal_loss: f64,
    /// Mean unweighted L(Θ+Δ) over the adversarial pass; 0 when it is a second normal pass.
    pub adversarial_loss: f64,
    /// Mean per-batch objective of the adversarial pass, L + λ·L(Θ+Δ) (+ decay).
    pub objective: f64,
    /// L_decay at the end of the epoch.
    pub decay_loss: f64,
    pub omega_norm: f64,
    /// `None` when per-epoch validation is off.
    pub val_auc: Option<f64>,
    pub val_logloss: Option<f64>,
    /// Batches where mean L(Θ+Δ) ≥ mean L(Θ), over adversarial batches.
    pub ascent_fraction: f64,
    /// Largest |‖δ_i‖ − ε_i| over non-guarded perturbations.
    pub fgsm_max_norm_error: f64,
    /// Perturbations that were neither of norm ε nor exactly zero.
    pub fgsm_violations: u64,
    pub adversarial_batches: u64,
    /// Wall-clock seconds; kept out of the deterministic log.
    #[serde(skip)]
    pub seconds: f64,
}

impl PartialEq for EpochRecord {
    fn eq(&self, o: &Self) -> bool {
        let bits = |r: &Self| {
            [
                r.normal_loss,
                r.adversarial_loss,
                r.objective,
                r.decay_loss,
                r.omega_norm,
                r.val_auc.unwrap_or(f64::NAN),
                r.val_logloss.unwrap_or(f64::NAN),
                r.ascent_fraction,
                r.fgsm_max_norm_error,
            ]
            .map(f64::to_bits)
        };
        self.epoch == o.epoch
            && bits(self) == bits(o)
            && self.fgsm_violations == o.fgsm_violations
            && self.adversarial_batches == o.adversarial_batches
    }
}

/// Per-epoch adversary diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryDiagnostics {
    pub epoch: u32,
    pub epsilon_mean: Vec<f64>,
    pub epsilon_max: Vec<f64>,
    /// λ at quantiles 0, .25, .5, .75, 1.
    pub lambda_quantiles: [f64; 5],
    pub omega: Vec<f64>,
    pub decay_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub adversary: Vec<AdversaryDiagnostics>,
}

fn fmt(x: f64) -> String {
    format!("{x:.10}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_owned(), fmt)
}

impl TrainLog {
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "epoch\tnormal_loss\tadversarial_loss\tobjective\tdecay_loss\tomega_norm\tval_auc\tval_logloss\tascent_fraction\tfgsm_max_norm_error\tfgsm_violations\tadversarial_batches"
        )?;
        for r in &self.epochs {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.3e}\t{}\t{}",
                r.epoch,
                fmt(r.normal_loss),
                fmt(r.adversarial_loss),
                fmt(r.objective),
                fmt(r.decay_loss),
                fmt(r.omega_norm),
                fmt_opt(r.val_auc),
                fmt_opt(r.val_logloss),
                fmt(r.ascent_fraction),
                r.fgsm_max_norm_error,
                r.fgsm_violations,
                r.adversarial_batches
            )?;
        }
        Ok(())
    }

    pub fn write_adversary_tsv<W: Write>(&self, w: &mut W, schema: &FeatureSchema) -> Result<()> {
        writeln!(w, "epoch\tdomain\tomega\tepsilon_mean\tepsilon_max\tlambda_min\tlambda_q25\tlambda_median\tlambda_q75\tlambda_max\tdecay_loss")?;
        for d in &self.adversary {
            let q = d.lambda_quantiles;
            for (i, dom) in schema.domains().iter().enumerate() {
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    d.epoch,
                    dom.name,
                    fmt(d.omega[i]),
                    fmt(d.epsilon_mean[i]),
                    fmt(d.epsilon_max[i]),
                    fmt(q[0]),
                    fmt(q[1]),
                    fmt(q[2]),
                    fmt(q[3]),
                    fmt(q[4]),
                    fmt(d.decay_loss)
                )?;
            }
        }
        Ok(())
    }

    pub fn write_timing_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epoch\tseconds")?;
        for r in &self.epochs {
            writeln!(w, "{}\t{:.3}", r.epoch, r.seconds)?;
        }
        Ok(())
    }
}

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub params: ModelParams,
    pub adversary: AdversaryState,
    pub optimizer: Optimizer,
    /// Completed epochs.
    pub epoch: u32,
    pub log: TrainLog,
}

/// Callbacks from the training loop.
pub trait TrainObserver {
    fn epoch_end(&mut self, _state: &TrainerState) -> Result<()> {
        Ok(())
    }
    /// Called with the last state known to be finite before an abort.
    fn diverged(&mut self, _last_finite: &TrainerState) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores every event.
pub struct NoObserver;
impl TrainObserver for NoObserver {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub auc: f64,
    pub logloss: f64,
}

/// AUC and Logloss on `test`; does not touch the parameters.
pub fn evaluate_epoch(params: &ModelParams, test: &[EncodedSample]) -> Result<ValidationMetrics> {
    let p = eval::predict(params, test)?;
    let y: Vec<u8> = test.iter().map(|s| s.label).collect();
    Ok(ValidationMetrics {
        auc: eval::auc(&p, &y)?,
        logloss: eval::logloss(&p, &y),
    })
}

/// Fresh state: N(0, σ²) parameters, ω = 0, τ = 1.
pub fn initial_state(
    schema: &FeatureSchema,
    stats: &FeatureStats,
    train: &[EncodedSample],
    config: &TrainConfig,
) -> TrainerState {
    let params = ModelParams::init(
        schema,
        config.embedding_dim,
        config.init_std,
        &mut rng::stream(config.seed, rng::STREAM_INIT),
    );
    let joint_alpha: Vec<f64> = train
        .iter()
        .map(|s| stats.joint_in(s, config.adversary.reweight_scope).joint_alpha)
        .collect();
    let adversary = AdversaryState::new(schema.n_domains(), &joint_alpha);
    let optimizer = Optimizer::new(
        config.optimizer,
        &[
            params.embeddings.len(),
            params.first_order.len(),
            params.factors.len(),
            adversary.omega.len(),
        ],
    );
    TrainerState {
        params,
        adversary,
        optimizer,
        epoch: 0,
        log: TrainLog::default(),
    }
}

struct SampleOutcome {
    normal_loss: f64,
    normal_grads: ParamGradients,
    adv: Option<AdvOutcome>,
}

struct AdvOutcome {
    loss: f64,
    lambda: f64,
    grads: ParamGradients,
    omega_grad: Option<Vec<f64>>,
    eps: Vec<f64>,
    max_norm_error: f64,
    violations: u64,
}

#[derive(Default)]
struct PassTally {
    loss_sum: f64,
    adv_loss_sum: f64,
    objective_sum: f64,
    samples: u64,
    batches: u64,
    ascent_batches: u64,
    max_norm_error: f64,
    violations: u64,
    eps_sum: Vec<f64>,
    eps_max: Vec<f64>,
    lambdas: Vec<f64>,
}

struct Pass<'a> {
    stats: &'a FeatureStats,
    config: &'a TrainConfig,
}

impl Pass<'_> {
    fn sample_outcome(&self, s: &EncodedSample, state: &TrainerState, adversarial: bool) -> Result<SampleOutcome> {
        let params = &state.params;
        let trace = forward(s, params, None)?;
        let normal_loss = loss(&trace, s.label);
        let normal_grads = backward(&trace, s.label, s, params);
        let adv = if adversarial {
            let cfg = &self.config.adversary;
            let dirs = fgsm_direction(&trace, s.label);
            let eps = epsilons(s, self.stats, &state.adversary, cfg);
            let delta = scale_directions(&dirs, &eps);
            let mut max_norm_error: f64 = 0.0;
            let mut violations = 0;
            for (i, &e) in eps.iter().enumerate() {
                let n = delta.norm(i);
                if n == 0.0 {
                    continue;
                }
                let err = (n - e).abs();
                max_norm_error = max_norm_error.max(err);
                if err > FGSM_NORM_TOLERANCE * e.max(1.0) {
                    violations += 1;
                }
            }
            let perturbed = forward(s, params, Some(&delta))?;
            let lambda = sample_lambda(s, self.stats, &state.adversary, cfg);
            let omega_grad = cfg.learns_omega().then(|| {
                let betas: Vec<f64> = s
                    .values
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| self.stats.effective_beta(i, v) as f64)
                    .collect();
                omega_gradient(&perturbed, s.label, &dirs, &betas, &state.adversary.omega)
            });
            Some(AdvOutcome {
                loss: loss(&perturbed, s.label),
                lambda,
                grads: backward(&perturbed, s.label, s, params),
                omega_grad,
                eps,
                max_norm_error,
                violations,
            })
        } else {
            None
        };
        Ok(SampleOutcome {
            normal_loss,
            normal_grads,
            adv,
        })
    }

    /// One optimizer step on `batch`. Per-sample work runs in parallel and is
    /// reduced in batch order, so results do not depend on the thread count.
    fn step(
        &self,
        batch: &[&EncodedSample],
        state: &mut TrainerState,
        buffer: &mut GradientBuffer,
        adversarial: bool,
        tally: &mut PassTally,
    ) -> Result<()> {
        let outcomes: Vec<SampleOutcome> = {
            let st = &*state;
            batch
                .par_iter()
                .with_min_len(32)
                .map(|s| self.sample_outcome(s, st, adversarial))
                .collect::<Result<_>>()?
        };
        let scale = 1.0 / batch.len() as f64;
        let n_domains = state.adversary.omega.len();
        buffer.clear();
        let mut omega_grad = vec![0.0; n_domains];
        let mut batch_loss = 0.0;
        let mut batch_adv = 0.0;
        let mut batch_objective = 0.0;
        for o in &outcomes {
            buffer.add(&o.normal_grads, scale);
            batch_loss += o.normal_loss;
            batch_objective += o.normal_loss;
            if let Some(a) = &o.adv {
                buffer.add(&a.grads, a.lambda * scale);
                batch_adv += a.loss;
                batch_objective += a.lambda * a.loss;
                if let Some(g) = &a.omega_grad {
                    for (acc, x) in omega_grad.iter_mut().zip(g) {
                        *acc += a.lambda * scale * x;
                    }
                }
                tally.max_norm_error = tally.max_norm_error.max(a.max_norm_error);
                tally.violations += a.violations;
                if tally.eps_sum.is_empty() {
                    tally.eps_sum = vec![0.0; n_domains];
                    tally.eps_max = vec![0.0; n_domains];
                }
                for (i, &e) in a.eps.iter().enumerate() {
                    tally.eps_sum[i] += e;
                    tally.eps_max[i] = tally.eps_max[i].max(e);
                }
                tally.lambdas.push(a.lambda);
            }
        }
        let n = batch.len() as f64;
        let mut objective = batch_objective / n;
        if adversarial {
            objective += decay_loss(&state.adversary, &self.config.adversary);
        }
        if !objective.is_finite() || !batch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch: state.epoch + 1,
                pass: if adversarial { "adversarial" } else { "normal" },
                batch: tally.batches as usize,
            });
        }
        tally.loss_sum += batch_loss;
        tally.samples += batch.len() as u64;
        tally.batches += 1;
        if adversarial {
            tally.adv_loss_sum += batch_adv;
            tally.objective_sum += objective;
            if batch_adv >= batch_loss {
                tally.ascent_batches += 1;
            }
        }

        let TrainerState {
            params,
            optimizer,
            adversary,
            ..
        } = state;
        optimizer.step(SLOT_EMBEDDINGS, &mut params.embeddings, &buffer.embeddings);
        optimizer.step(SLOT_FIRST_ORDER, &mut params.first_order, &buffer.first_order);
        optimizer.step(SLOT_FACTORS, &mut params.factors, &buffer.factors);
        if adversarial && self.config.adversary.learns_omega() {
            for (g, d) in omega_grad
                .iter_mut()
                .zip(decay_gradient(adversary, &self.config.adversary))
            {
                *g += d;
            }
            optimizer.step(SLOT_OMEGA, &mut adversary.omega, &omega_grad);
        }
        Ok(())
    }
}

fn shuffled(train: &[EncodedSample], seed: u64, epoch: u32, pass: u32) -> Vec<&EncodedSample> {
    let mut order: Vec<&EncodedSample> = train.iter().collect();
    order.shuffle(&mut rng::shuffle_stream(seed, epoch, pass));
    order
}

fn quantiles(xs: &mut [f64]) -> [f64; 5] {
    if xs.is_empty() {
        return [0.0; 5];
    }
    xs.sort_by(f64::total_cmp);
    let at = |q: f64| xs[((xs.len() - 1) as f64 * q).round() as usize];
    [at(0.0), at(0.25), at(0.5), at(0.75), at(1.0)]
}

/// Train for `config.epochs` epochs, continuing from `resume` when given.
pub fn train(
    schema: &FeatureSchema,
    train: &[EncodedSample],
    test: &[EncodedSample],
    stats: &FeatureStats,
    config: &TrainConfig,
    resume: Option<TrainerState>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainerState> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    for s in train {
        schema.validate(s)?;
    }
    let mut state = match resume {
        Some(s) => {
            if !s.params.matches(schema) || s.params.dim() != config.embedding_dim {
                return Err(Error::Checkpoint(
                    "checkpoint does not match the schema or embedding size".into(),
                ));
            }
            s
        }
        None => initial_state(schema, stats, train, config),
    };
    let pass = Pass { stats, config };
    let mut buffer = GradientBuffer::new(&state.params);
    let adversarial = config.adversary.is_active();

    while state.epoch < config.epochs {
        let epoch = state.epoch + 1;
        let started = Instant::now();
        let snapshot = state.clone();
        let outcome = run_epoch(&pass, train, &mut state, &mut buffer, adversarial, epoch);
        let (normal, second) = match outcome {
            Ok(t) => t,
            Err(e) => {
                let e = match e {
                    Error::NonFinite { .. } => Error::Diverged {
                        epoch,
                        pass: "forward",
                        batch: 0,
                    },
                    e => e,
                };
                observer.diverged(&snapshot)?;
                return Err(e);
            }
        };
        if state.params.check_finite().is_err() {
            observer.diverged(&snapshot)?;
            return Err(Error::Diverged {
                epoch,
                pass: "update",
                batch: 0,
            });
        }

        let val = if config.validate_each_epoch && !test.is_empty() {
            Some(evaluate_epoch(&state.params, test)?)
        } else {
            None
        };
        let decay = decay_loss(&state.adversary, &config.adversary);
        let (adv_loss, objective, ascent) = if adversarial {
            (
                second.adv_loss_sum / second.samples.max(1) as f64,
                second.objective_sum / second.batches.max(1) as f64,
                second.ascent_batches as f64 / second.batches.max(1) as f64,
            )
        } else {
            let l = second.loss_sum / second.samples.max(1) as f64;
            (0.0, l, 0.0)
        };
        state.log.epochs.push(EpochRecord {
            epoch,
            normal_loss: normal.loss_sum / normal.samples.max(1) as f64,
            adversarial_loss: adv_loss,
            objective,
            decay_loss: decay,
            omega_norm: state.adversary.omega_norm(),
            val_auc: val.map(|v| v.auc),
            val_logloss: val.map(|v| v.logloss),
            ascent_fraction: ascent,
            fgsm_max_norm_error: second.max_norm_error,
            fgsm_violations: second.violations,
            adversarial_batches: if adversarial { second.batches } else { 0 },
            seconds: started.elapsed().as_secs_f64(),
        });
        if adversarial {
            let mut lambdas = second.lambdas;
            let count = second.samples.max(1) as f64;
            let n = schema.n_domains();
            state.log.adversary.push(AdversaryDiagnostics {
                epoch,
                epsilon_mean: if second.eps_sum.is_empty() {
                    vec![0.0; n]
                } else {
                    second.eps_sum.iter().map(|s| s / count).collect()
                },
                epsilon_max: if second.eps_max.is_empty() {
                    vec![0.0; n]
                } else {
                    second.eps_max.clone()
                },
                lambda_quantiles: quantiles(&mut lambdas),
                omega: state.adversary.omega.clone(),
                decay_loss: decay,
            });
        }
        log::info!(
            "epoch {epoch}: loss {:.5} val AUC {} ({:.1}s)",
            state.log.epochs.last().map_or(0.0, |r| r.normal_loss),
            val.map_or_else(|| "-".to_owned(), |v| format!("{:.4}", v.auc)),
            started.elapsed().as_secs_f64()
        );
        state.adversary.epoch += 1;
        state.epoch = epoch;
        observer.epoch_end(&state)?;
    }
    Ok(state)
}

fn run_epoch(
    pass: &Pass<'_>,
    train: &[EncodedSample],
    state: &mut TrainerState,
    buffer: &mut GradientBuffer,
    adversarial: bool,
    epoch: u32,
) -> Result<(PassTally, PassTally)> {
    let seed = pass.config.seed;
    let bs = pass.config.batch_size;
    let mut normal = PassTally::default();
    let mut second = PassTally::default();
    match pass.config.alternation {
        Alternation::Epoch => {
            for batch in shuffled(train, seed, epoch, 0).chunks(bs) {
                pass.step(batch, state, buffer, false, &mut normal)?;
            }
            for batch in shuffled(train, seed, epoch, 1).chunks(bs) {
                pass.step(batch, state, buffer, adversarial, &mut second)?;
            }
        }
        Alternation::Batch => {
            for batch in shuffled(train, seed, epoch, 0).chunks(bs) {
                pass.step(batch, state, buffer, false, &mut normal)?;
                pass.step(batch, state, buffer, adversarial, &mut second)?;
            }
        }
    }
    Ok((normal, second))
}
