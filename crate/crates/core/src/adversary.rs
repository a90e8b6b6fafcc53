//! Fast-gradient perturbations over feature embeddings, with automatic
//! adaptation of their strength (per value) and weight (per sample).
//!
//! * Perturbation: `δ_i = ε_i · g_i / ‖g_i‖₂` where `g_i = ∂L/∂e_i`.
//! * Strength: `ε_{v_i} = softplus(ω_i / β_{v_i})`, `ω_i` learned per domain.
//! * Weight: `λ_k` maps `s = −Π α` affinely from the train range onto `[1, t]`.
//! * Decay: `L_decay = a / (τ · ‖ω‖₂)` keeps ω from collapsing early.

use serde::{Deserialize, Serialize};

use crate::dataset::EncodedSample;
use crate::error::{Error, Result};
use crate::model::{dot, norm, sigmoid, ForwardTrace, Perturbation};
use crate::stats::{FeatureStats, JointScope};

/// Gradients smaller than this produce no perturbation.
pub const ZERO_GRADIENT_GUARD: f64 = 1e-12;
/// Lower clamp on ‖ω‖ inside the decay term.
pub const OMEGA_NORM_FLOOR: f64 = 1e-8;

fn default_base_epsilon() -> f64 {
    0.5
}
fn default_lambda() -> f64 {
    1.0
}
fn default_t() -> f64 {
    100.0
}
fn default_anneal() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    /// ε used for every feature when strength adaptation is off.
    #[serde(default = "default_base_epsilon")]
    pub base_epsilon: f64,
    /// λ used for every sample when re-weighting is off.
    #[serde(default = "default_lambda")]
    pub lambda_fixed: f64,
    /// Re-weighting ceiling; λ ∈ [1, t].
    #[serde(default = "default_t")]
    pub t: f64,
    /// Strength of the decay regulariser.
    #[serde(default = "default_anneal")]
    pub anneal_alpha: f64,
    #[serde(default)]
    pub adaptive_epsilon: bool,
    #[serde(default)]
    pub adaptive_lambda: bool,
    #[serde(default)]
    pub decay: bool,
    /// Domains entering Π α for re-weighting.
    #[serde(default)]
    pub reweight_scope: JointScope,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            base_epsilon: default_base_epsilon(),
            lambda_fixed: default_lambda(),
            t: default_t(),
            anneal_alpha: default_anneal(),
            adaptive_epsilon: false,
            adaptive_lambda: false,
            decay: false,
            reweight_scope: JointScope::AllDomains,
        }
    }
}

impl AdversaryConfig {
    /// No adversarial term at all: ε = 0, λ = 0.
    pub fn disabled() -> Self {
        Self {
            base_epsilon: 0.0,
            lambda_fixed: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.is_nan() || self.t < 1.0 {
            return Err(Error::Config(format!("t must be >= 1, got {}", self.t)));
        }
        if self.base_epsilon.is_nan() || self.base_epsilon < 0.0 {
            return Err(Error::Config("base_epsilon must be >= 0".into()));
        }
        if self.lambda_fixed.is_nan() || self.lambda_fixed < 0.0 {
            return Err(Error::Config("lambda_fixed must be >= 0".into()));
        }
        if self.anneal_alpha.is_nan() || self.anneal_alpha < 0.0 {
            return Err(Error::Config("anneal_alpha must be >= 0".into()));
        }
        Ok(())
    }

    /// Whether the adversarial loss term contributes anything.
    pub fn is_active(&self) -> bool {
        self.adaptive_lambda || self.lambda_fixed > 0.0
    }

    /// Whether ω is trained (strength adaptation on).
    pub fn learns_omega(&self) -> bool {
        self.is_active() && self.adaptive_epsilon
    }
}

/// Learnable and schedule state of the adversary.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryState {
    pub omega: Vec<f64>,
    /// Epoch counter τ, starting at 1.
    pub epoch: u32,
    /// Extremes of s = −Π α over the training samples.
    pub s_min: f64,
    pub s_max: f64,
}

impl AdversaryState {
    /// ω = 0 for every domain, τ = 1, extremes from the training joint α.
    pub fn new(n_domains: usize, train_joint_alpha: &[f64]) -> Self {
        let (s_min, s_max) = train_joint_alpha
            .iter()
            .map(|a| -a)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
        let (s_min, s_max) = if s_min.is_finite() { (s_min, s_max) } else { (0.0, 0.0) };
        Self {
            omega: vec![0.0; n_domains],
            epoch: 1,
            s_min,
            s_max,
        }
    }

    pub fn omega_norm(&self) -> f64 {
        norm(&self.omega)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Unit fast-gradient direction per domain, zero where ‖∂L/∂e_i‖ is below the guard.
pub fn fgsm_direction(trace: &ForwardTrace, label: u8) -> Perturbation {
    let n = trace.n_domains();
    let mut dirs = Perturbation::zeros(n, trace.dim());
    let r = trace.residual(label);
    for i in 0..n {
        let g = trace.logit_grad(i);
        let g_norm = r.abs() * norm(g);
        if g_norm < ZERO_GRADIENT_GUARD {
            continue;
        }
        let scale = r / g_norm;
        for (d, x) in dirs.delta_mut(i).iter_mut().zip(g) {
            *d = scale * x;
        }
    }
    dirs
}

/// `δ_i = ε_i · u_i` from precomputed unit directions.
pub fn scale_directions(directions: &Perturbation, eps: &[f64]) -> Perturbation {
    let mut out = directions.clone();
    for (i, &e) in eps.iter().enumerate() {
        for x in out.delta_mut(i) {
            *x *= e;
        }
    }
    out
}

/// Fast-gradient perturbation: ‖δ_i‖₂ = ε_i, or 0 under the zero-gradient guard.
pub fn fgsm_delta(trace: &ForwardTrace, label: u8, eps: &[f64]) -> Perturbation {
    debug_assert!(eps.iter().all(|&e| e >= 0.0));
    scale_directions(&fgsm_direction(trace, label), eps)
}

/// ε_{v_i} = softplus(ω_i / β_{v_i}), with β = 1 for train-unseen values.
pub fn adaptive_epsilon(domain: usize, value: u32, stats: &FeatureStats, state: &AdversaryState) -> f64 {
    let beta = stats.effective_beta(domain, value) as f64;
    softplus(state.omega[domain] / beta)
}

/// Per-domain ε for one sample under the configured mode.
pub fn epsilons(
    sample: &EncodedSample,
    stats: &FeatureStats,
    state: &AdversaryState,
    config: &AdversaryConfig,
) -> Vec<f64> {
    if config.adaptive_epsilon {
        sample
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| adaptive_epsilon(i, v, stats, state))
            .collect()
    } else {
        vec![config.base_epsilon; sample.values.len()]
    }
}

/// Sample weight of the adversarial loss.
pub fn reweight_lambda(joint_alpha: f64, state: &AdversaryState, config: &AdversaryConfig) -> f64 {
    if !config.adaptive_lambda {
        return config.lambda_fixed;
    }
    let t = config.t;
    let span = state.s_max - state.s_min;
    if span <= 0.0 {
        return (1.0 + t) / 2.0;
    }
    let s = -joint_alpha;
    let unit = ((s - state.s_min) / span).clamp(0.0, 1.0);
    1.0 + (t - 1.0) * unit
}

pub fn sample_lambda(
    sample: &EncodedSample,
    stats: &FeatureStats,
    state: &AdversaryState,
    config: &AdversaryConfig,
) -> f64 {
    if !config.adaptive_lambda {
        return config.lambda_fixed;
    }
    let ja = stats.joint_in(sample, config.reweight_scope).joint_alpha;
    reweight_lambda(ja, state, config)
}

/// `a / (τ · ‖ω‖)`, or 0 when decay is off.
pub fn decay_loss(state: &AdversaryState, config: &AdversaryConfig) -> f64 {
    if !config.decay {
        return 0.0;
    }
    config.anneal_alpha / (state.epoch as f64 * state.omega_norm().max(OMEGA_NORM_FLOOR))
}

/// ∂L_decay/∂ω = −a·ω / (τ·‖ω‖³); zero where the norm clamp is active.
pub fn decay_gradient(state: &AdversaryState, config: &AdversaryConfig) -> Vec<f64> {
    let n = state.omega_norm();
    if !config.decay || n < OMEGA_NORM_FLOOR {
        return vec![0.0; state.omega.len()];
    }
    let c = -config.anneal_alpha / (state.epoch as f64 * n * n * n);
    state.omega.iter().map(|w| c * w).collect()
}

/// Per-sample ∂L_adv/∂ω through ε with the perturbation direction frozen:
/// `(ŷ'−y)·⟨∂logit/∂e_i |_{Θ+δ}, u_i⟩ · softplus'(ω_i/β_i) / β_i`.
pub fn omega_gradient(
    perturbed: &ForwardTrace,
    label: u8,
    directions: &Perturbation,
    betas: &[f64],
    omega: &[f64],
) -> Vec<f64> {
    let r = perturbed.residual(label);
    (0..perturbed.n_domains())
        .map(|i| {
            let d_loss_d_eps = r * dot(perturbed.logit_grad(i), directions.delta(i));
            d_loss_d_eps * sigmoid(omega[i] / betas[i]) / betas[i]
        })
        .collect()
}

/// One sample's contribution to a batch ω gradient.
pub struct OmegaTerm<'a> {
    pub sample: &'a EncodedSample,
    pub perturbed: &'a ForwardTrace,
    pub directions: &'a Perturbation,
    pub lambda: f64,
}

/// Batch-mean λ-weighted ∂L_adv/∂ω.
pub fn omega_gradient_batch(terms: &[OmegaTerm<'_>], stats: &FeatureStats, state: &AdversaryState) -> Vec<f64> {
    let mut out = vec![0.0; state.omega.len()];
    if terms.is_empty() {
        return out;
    }
    for t in terms {
        let betas: Vec<f64> = t
            .sample
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| stats.effective_beta(i, v) as f64)
            .collect();
        let g = omega_gradient(t.perturbed, t.sample.label, t.directions, &betas, &state.omega);
        for (o, x) in out.iter_mut().zip(g) {
            *o += t.lambda * x;
        }
    }
    let n = terms.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Domain, FeatureSchema, Side};
    use crate::model::{forward, loss, ModelParams};
    use crate::rng;
    use rand::Rng;

    fn schema(n: usize, card: u32) -> FeatureSchema {
        FeatureSchema::new(
            (0..n)
                .map(|i| Domain {
                    name: format!("d{i}"),
                    cardinality: card,
                    side: if i == 0 { Side::User } else { Side::Item },
                })
                .collect(),
            0,
            1,
        )
        .unwrap()
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(1.0) - 1.3132616875182228).abs() < 1e-12);
        assert!((softplus(0.1) - 0.7443966600735709).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(-40.0) > 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn zero_epsilon_gives_exact_zero_delta() {
        let s = schema(3, 4);
        let p = ModelParams::init(&s, 5, 0.3, &mut rng::stream(1, 0));
        let x = EncodedSample::new(vec![1, 2, 3], 1);
        let t = forward(&x, &p, None).unwrap();
        let d = fgsm_delta(&t, 1, &[0.0, 0.0, 0.0]);
        assert!((0..3).all(|i| d.delta(i).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn delta_norm_equals_epsilon() {
        let s = schema(4, 6);
        let mut r = rng::stream(2, 0);
        for _ in 0..200 {
            let p = ModelParams::init(&s, 8, 0.5, &mut r);
            let x = EncodedSample::new((0..4).map(|_| r.random_range(0..6)).collect(), r.random_range(0..2));
            let t = forward(&x, &p, None).unwrap();
            let eps: Vec<f64> = (0..4).map(|_| r.random_range(0.0..2.0)).collect();
            let d = fgsm_delta(&t, x.label, &eps);
            for (i, &e) in eps.iter().enumerate() {
                assert!((d.norm(i) - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_gradient_guard() {
        let s = schema(2, 2);
        let p = ModelParams::zeros(&s, 3);
        let x = EncodedSample::new(vec![0, 1], 1);
        let t = forward(&x, &p, None).unwrap();
        let d = fgsm_delta(&t, 1, &[1.0, 1.0]);
        assert_eq!(d.norm(0), 0.0);
        assert_eq!(d.norm(1), 0.0);
    }

    #[test]
    fn perturbation_ascends_the_loss() {
        let s = schema(4, 5);
        let mut r = rng::stream(3, 0);
        let mut ascents = 0;
        let trials = 500;
        for _ in 0..trials {
            let p = ModelParams::init(&s, 6, 0.4, &mut r);
            let x = EncodedSample::new((0..4).map(|_| r.random_range(0..5)).collect(), r.random_range(0..2));
            let t = forward(&x, &p, None).unwrap();
            let d = fgsm_delta(&t, x.label, &[0.01; 4]);
            let tp = forward(&x, &p, Some(&d)).unwrap();
            if loss(&tp, x.label) >= loss(&t, x.label) {
                ascents += 1;
            }
        }
        assert!(ascents as f64 >= 0.99 * trials as f64, "{ascents}");
    }

    #[test]
    fn fast_gradient_beats_random_directions_of_equal_norm() {
        let s = schema(3, 4);
        let mut r = rng::stream(9, 0);
        let p = ModelParams::init(&s, 5, 0.5, &mut r);
        for _ in 0..50 {
            let x = EncodedSample::new((0..3).map(|_| r.random_range(0..4)).collect(), r.random_range(0..2));
            let t = forward(&x, &p, None).unwrap();
            let adv = fgsm_delta(&t, x.label, &[0.01; 3]);
            let adv_loss = loss(&forward(&x, &p, Some(&adv)).unwrap(), x.label);
            let beaten = (0..100)
                .filter(|_| {
                    let rows = (0..3)
                        .map(|i| {
                            let g: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
                            let n = norm(&g);
                            g.iter().map(|v| v / n * adv.norm(i)).collect()
                        })
                        .collect();
                    let rand = Perturbation::from_rows(rows);
                    adv_loss >= loss(&forward(&x, &p, Some(&rand)).unwrap(), x.label)
                })
                .count();
            assert!(beaten >= 95, "{beaten}");
        }
    }

    #[test]
    fn adaptive_epsilon_direction() {
        let s = schema(2, 3);
        let train = vec![
            EncodedSample::new(vec![0, 0], 1),
            EncodedSample::new(vec![0, 1], 1),
            EncodedSample::new(vec![0, 2], 1),
            EncodedSample::new(vec![1, 0], 1),
        ];
        let st = FeatureStats::compute(&train, &s).unwrap();
        let mut state = AdversaryState::new(2, &[0.5]);
        // ω = 0: every value gets ln 2
        assert!((adaptive_epsilon(0, 0, &st, &state) - std::f64::consts::LN_2).abs() < 1e-15);
        state.omega = vec![1.0, 1.0];
        // β(d0=0) = 3 > β(d0=1) = 1 → weaker perturbation for the more varied value
        assert!(adaptive_epsilon(0, 0, &st, &state) < adaptive_epsilon(0, 1, &st, &state));
        // unseen value (d0 has cardinality 3, value 2 never seen) uses β = 1
        assert!((adaptive_epsilon(0, 2, &st, &state) - softplus(1.0)).abs() < 1e-15);
        state.omega = vec![-1e6, 0.0];
        let e = adaptive_epsilon(0, 1, &st, &state);
        assert!((0.0..1e-300).contains(&e));
    }

    #[test]
    fn fixed_mode_epsilons() {
        let s = schema(2, 2);
        let st = FeatureStats::compute(&[EncodedSample::new(vec![0, 0], 1)], &s).unwrap();
        let state = AdversaryState::new(2, &[1.0]);
        let cfg = AdversaryConfig::default();
        assert_eq!(
            epsilons(&EncodedSample::new(vec![0, 1], 0), &st, &state, &cfg),
            vec![0.5, 0.5]
        );
    }

    #[test]
    fn lambda_endpoints_and_degenerate_cases() {
        let cfg = AdversaryConfig {
            adaptive_lambda: true,
            t: 100.0,
            ..Default::default()
        };
        let ja = [0.2, 0.05, 0.01];
        let st = AdversaryState::new(3, &ja);
        assert_eq!(reweight_lambda(0.01, &st, &cfg), 100.0);
        assert_eq!(reweight_lambda(0.2, &st, &cfg), 1.0);
        let mid = reweight_lambda(0.05, &st, &cfg);
        assert!(mid > 1.0 && mid < 100.0);
        let one = AdversaryConfig { t: 1.0, ..cfg };
        assert!(ja.iter().all(|&a| reweight_lambda(a, &st, &one) == 1.0));
        let flat = AdversaryState::new(3, &[0.1, 0.1]);
        assert_eq!(reweight_lambda(0.1, &flat, &cfg), 50.5);
        let fixed = AdversaryConfig::default();
        assert_eq!(reweight_lambda(0.01, &st, &fixed), 1.0);
    }

    #[test]
    fn decay_term() {
        let mut cfg = AdversaryConfig {
            decay: true,
            anneal_alpha: 0.0,
            ..Default::default()
        };
        let mut st = AdversaryState::new(2, &[0.1]);
        st.omega = vec![0.3, -0.4];
        assert_eq!(decay_loss(&st, &cfg), 0.0);
        assert!(decay_gradient(&st, &cfg).iter().all(|&g| g == 0.0));
        cfg.anneal_alpha = 1e-3;
        let l1 = decay_loss(&st, &cfg);
        assert!((l1 - 1e-3 / 0.5).abs() < 1e-15);
        st.epoch = 2;
        assert!((decay_loss(&st, &cfg) - l1 / 2.0).abs() < 1e-15);
        // zero ω: clamped, finite
        st.omega = vec![0.0, 0.0];
        assert!(decay_loss(&st, &cfg).is_finite());
        cfg.decay = false;
        assert_eq!(decay_loss(&st, &cfg), 0.0);
    }

    #[test]
    fn decay_gradient_matches_finite_differences_and_grows_norm() {
        let cfg = AdversaryConfig {
            decay: true,
            anneal_alpha: 0.01,
            ..Default::default()
        };
        let mut r = rng::stream(4, 0);
        for _ in 0..100 {
            let mut st = AdversaryState::new(3, &[0.1]);
            st.epoch = r.random_range(1..10);
            st.omega = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
            let g = decay_gradient(&st, &cfg);
            let h = 1e-6;
            for (k, gk) in g.iter().enumerate() {
                let mut a = st.clone();
                a.omega[k] += h;
                let mut b = st.clone();
                b.omega[k] -= h;
                let fd = (decay_loss(&a, &cfg) - decay_loss(&b, &cfg)) / (2.0 * h);
                assert!((fd - gk).abs() <= 1e-6 * fd.abs().max(1e-3));
            }
            // a descent step on L_decay increases ‖ω‖
            let mut stepped = st.clone();
            for (w, gk) in stepped.omega.iter_mut().zip(&g) {
                *w -= 1e-3 * gk;
            }
            assert!(stepped.omega_norm() > st.omega_norm());
        }
    }

    #[test]
    fn omega_gradient_zero_when_no_direction() {
        let s = schema(2, 2);
        let p = ModelParams::zeros(&s, 3);
        let x = EncodedSample::new(vec![0, 1], 1);
        let t = forward(&x, &p, None).unwrap();
        let dirs = fgsm_direction(&t, 1);
        let g = omega_gradient(&t, 1, &dirs, &[1.0, 1.0], &[0.3, 0.3]);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn omega_gradient_matches_finite_differences() {
        let s = schema(3, 4);
        let mut r = rng::stream(6, 0);
        for _ in 0..200 {
            let p = ModelParams::init(&s, 5, 0.5, &mut r);
            let x = EncodedSample::new((0..3).map(|_| r.random_range(0..4)).collect(), r.random_range(0..2));
            let betas: Vec<f64> = (0..3).map(|_| r.random_range(1..20) as f64).collect();
            let omega: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
            let dirs = fgsm_direction(&forward(&x, &p, None).unwrap(), x.label);
            let adv_loss = |om: &[f64]| {
                let eps: Vec<f64> = om.iter().zip(&betas).map(|(w, b)| softplus(w / b)).collect();
                let d = scale_directions(&dirs, &eps);
                loss(&forward(&x, &p, Some(&d)).unwrap(), x.label)
            };
            let eps: Vec<f64> = omega.iter().zip(&betas).map(|(w, b)| softplus(w / b)).collect();
            let tp = forward(&x, &p, Some(&scale_directions(&dirs, &eps))).unwrap();
            let g = omega_gradient(&tp, x.label, &dirs, &betas, &omega);
            let h = 1e-5;
            for k in 0..3 {
                let mut a = omega.clone();
                a[k] += h;
                let mut b = omega.clone();
                b[k] -= h;
                let fd = (adv_loss(&a) - adv_loss(&b)) / (2.0 * h);
                let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-8);
                assert!(err < 1e-4 || (fd - g[k]).abs() < 1e-9, "fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn increasing_omega_increases_epsilon() {
        let mut r = rng::stream(7, 0);
        for _ in 0..1000 {
            let w = r.random_range(-5.0..5.0);
            let b = r.random_range(1..100) as f64;
            assert!(softplus((w + 0.1) / b) > softplus(w / b));
        }
    }
}
