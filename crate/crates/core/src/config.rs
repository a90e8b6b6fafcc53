//! Experiment configuration: one TOML file plus `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::AdversaryConfig;
use crate::dataset::IngestSpec;
use crate::error::{Error, Result};
use crate::eval::{NoiseMode, RobustnessConfig};
use crate::stats::JointScope;
use crate::trainer::TrainConfig;

/// Model variant; fixes which adversary mechanisms are on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain factorization machine.
    Fm,
    /// Fixed ε and λ = 1.
    Advfm,
    /// Adaptive λ, fixed ε.
    AafmLambda,
    /// Adaptive ε, λ = 1.
    AafmEpsilon,
    /// Adaptive ε and λ.
    Aafm,
    /// Adaptive ε and λ with the decay regulariser.
    DAafm,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Fm,
        Variant::Advfm,
        Variant::AafmLambda,
        Variant::AafmEpsilon,
        Variant::Aafm,
        Variant::DAafm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fm => "fm",
            Variant::Advfm => "advfm",
            Variant::AafmLambda => "aafm-lambda",
            Variant::AafmEpsilon => "aafm-epsilon",
            Variant::Aafm => "aafm",
            Variant::DAafm => "d-aafm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }

    /// Adversary flags for this variant, with magnitudes from `settings`.
    pub fn adversary(self, settings: &AdversarySettings) -> AdversaryConfig {
        let base = AdversaryConfig {
            base_epsilon: settings.base_epsilon,
            lambda_fixed: 1.0,
            t: settings.t,
            anneal_alpha: settings.anneal_alpha,
            adaptive_epsilon: false,
            adaptive_lambda: false,
            decay: false,
            reweight_scope: settings.reweight_scope,
        };
        match self {
            Variant::Fm => AdversaryConfig {
                base_epsilon: 0.0,
                lambda_fixed: 0.0,
                ..base
            },
            Variant::Advfm => base,
            Variant::AafmLambda => AdversaryConfig {
                adaptive_lambda: true,
                ..base
            },
            Variant::AafmEpsilon => AdversaryConfig {
                adaptive_epsilon: true,
                ..base
            },
            Variant::Aafm => AdversaryConfig {
                adaptive_epsilon: true,
                adaptive_lambda: true,
                ..base
            },
            Variant::DAafm => AdversaryConfig {
                adaptive_epsilon: true,
                adaptive_lambda: true,
                decay: true,
                ..base
            },
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_base_epsilon() -> f64 {
    0.5
}
fn default_t() -> f64 {
    100.0
}
fn default_anneal() -> f64 {
    1e-3
}

/// Adversary magnitudes; which of them apply depends on the variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySettings {
    #[serde(default = "default_base_epsilon")]
    pub base_epsilon: f64,
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default = "default_anneal")]
    pub anneal_alpha: f64,
    #[serde(default)]
    pub reweight_scope: JointScope,
}

impl Default for AdversarySettings {
    fn default() -> Self {
        Self {
            base_epsilon: default_base_epsilon(),
            t: default_t(),
            anneal_alpha: default_anneal(),
            reweight_scope: JointScope::AllDomains,
        }
    }
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    /// Noise norms for the robustness probe; empty disables it.
    #[serde(default)]
    pub robustness_levels: Vec<f64>,
    #[serde(default = "default_trials")]
    pub robustness_trials: usize,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    /// Domains whose value combinations key the per-group table.
    #[serde(default)]
    pub group_domains: Vec<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            robustness_levels: Vec::new(),
            robustness_trials: default_trials(),
            noise_mode: NoiseMode::Adversarial,
            group_domains: Vec::new(),
        }
    }
}

impl EvalSettings {
    pub fn robustness(&self) -> Option<RobustnessConfig> {
        (!self.robustness_levels.is_empty()).then(|| RobustnessConfig {
            levels: self.robustness_levels.clone(),
            trials: self.robustness_trials,
            mode: self.noise_mode,
        })
    }
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub variant: Variant,
    /// Root of all outputs; each variant writes to a subdirectory.
    pub output_dir: PathBuf,
    /// Save a checkpoint every N epochs (0: final checkpoint only).
    #[serde(default)]
    pub checkpoint_every: u32,
    pub data: IngestSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub adversary: AdversarySettings,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse `path`, apply overrides and resolve relative paths against the
    /// file's directory (`output_root`, when given, for the output directory).
    pub fn load(path: &Path, overrides: &[String], output_root: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base, output_root);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path, output_root: Option<&Path>) {
        let join = |p: &mut PathBuf, root: &Path| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        join(&mut self.data.interactions.path, base);
        if let Some(t) = &mut self.data.user_table {
            join(&mut t.path, base);
        }
        if let Some(t) = &mut self.data.item_table {
            join(&mut t.path, base);
        }
        join(&mut self.output_dir, output_root.unwrap_or(base));
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config("name must be a non-empty file name".into()));
        }
        self.data.validate()?;
        self.train_config().validate()?;
        if self.eval.robustness_levels.iter().any(|&l| !l.is_finite() || l < 0.0) {
            return Err(Error::Config("robustness levels must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Training configuration with seed and adversary filled in from the variant.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            adversary: self.variant.adversary(&self.adversary),
            ..self.train.clone()
        }
    }

    /// SHA-256 over the configuration, excluding the output location.
    pub fn hash(&self) -> String {
        let mut view = self.clone();
        view.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&view).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&json);
        hex::encode(h.finalize())
    }

    /// Directory for this variant's run outputs.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.variant.name())
    }

    pub fn cache_path(&self) -> PathBuf {
        self.output_dir.join("data.cache")
    }

    /// Copy with a different variant.
    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }
}

/// Apply `a.b.c=value`; the value is parsed as TOML, falling back to a string.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?} crosses a non-table value")))?;
        node = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?} crosses a non-table value")))?
        .insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}
