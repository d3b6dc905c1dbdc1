//! Run configuration, read from TOML.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ablation::AblationToggles;
use crate::data::{SampleShape, SyntheticOod};
use crate::error::{Error, Result};
use crate::eval::{OdinConfig, ScoreKind};
use crate::losses::LossConfig;
use crate::moe::{EncoderSpec, DEFAULT_CENTER_MOMENTUM, DEFAULT_GLOBAL_TAU};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Parent of the timestamped run directories.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    pub optim: OptimConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

/// Rows of the ablation grid as `NOD/RCL/AALA/CBCL` 0/1 codes; empty means
/// the default eight rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub rows: Vec<String>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticConfig),
    ImageFolder(ImageFolderConfig),
}

/// Gaussian-mixture task with an exponential long-tail profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub n_max: usize,
    pub imbalance_ratio: f64,
    #[serde(default = "default_shape")]
    pub shape: SampleShape,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_val_per_class")]
    pub val_per_class: usize,
    /// Named OOD generators used for the test report.
    #[serde(default = "default_ood_sources")]
    pub ood: Vec<NamedOod>,
    /// Generator used for per-epoch validation AUROC.
    #[serde(default = "default_val_ood")]
    pub val_ood: SyntheticOod,
    #[serde(default = "default_ood_count")]
    pub ood_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedOod {
    pub name: String,
    pub source: SyntheticOod,
}

fn default_shape() -> SampleShape {
    SampleShape::new(1, 4, 8)
}
fn default_radius() -> f64 {
    3.0
}
fn default_noise() -> f64 {
    1.0
}
fn default_test_per_class() -> usize {
    100
}
fn default_val_per_class() -> usize {
    50
}
fn default_ood_count() -> usize {
    1000
}
fn default_val_ood() -> SyntheticOod {
    SyntheticOod::Blob { scale: 1.0 }
}
fn default_ood_sources() -> Vec<NamedOod> {
    vec![
        NamedOod {
            name: "held_out".into(),
            source: SyntheticOod::HeldOut { classes: 5 },
        },
        NamedOod {
            name: "blob".into(),
            source: SyntheticOod::Blob { scale: 1.0 },
        },
        NamedOod {
            name: "uniform".into(),
            source: SyntheticOod::Uniform { half_width: 2.0 },
        },
    ]
}

/// PNG images in `<dir>/<class name>/*.png`; OOD folders hold unlabelled
/// images of the same size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageFolderConfig {
    pub train_dir: PathBuf,
    pub test_dir: PathBuf,
    #[serde(default)]
    pub ood_dirs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Local experts plus the global one.
    pub num_experts: usize,
    pub feature_dim: usize,
    pub encoder: EncoderSpec,
    pub proj_dim: usize,
    pub pred_hidden: usize,
    /// Prior scale of the global expert.
    pub global_tau: f64,
    pub center_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_experts: 3,
            feature_dim: 64,
            encoder: EncoderSpec::Mlp { hidden: vec![128] },
            proj_dim: 128,
            pred_hidden: 64,
            global_tau: DEFAULT_GLOBAL_TAU,
            center_momentum: DEFAULT_CENTER_MOMENTUM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Decay {
    /// Half-cosine from `base_lr` to 0 over the post-warmup epochs.
    #[default]
    Cosine,
    /// Multiply by `gamma` every `every` post-warmup epochs.
    Step { every: usize, gamma: f64 },
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_warmup_epochs")]
    pub warmup_epochs: usize,
    #[serde(default = "default_warmup_scale")]
    pub warmup_scale: f64,
    #[serde(default)]
    pub decay: Decay,
    /// Beta(alpha, alpha) law of the mixing coefficient.
    #[serde(default = "default_mix_alpha")]
    pub mix_alpha: f64,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_warmup_epochs() -> usize {
    5
}
fn default_warmup_scale() -> f64 {
    0.1
}
fn default_mix_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub detector: ScoreKind,
    /// Energy temperature at test time.
    pub tau: f64,
    pub odin: OdinConfig,
    /// Validate every this many epochs (and always after the last one).
    pub validate_every: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            detector: ScoreKind::Energy,
            tau: 1.0,
            odin: OdinConfig::default(),
            validate_every: 1,
        }
    }
}

fn field(name: &str, why: &str) -> Error {
    Error::Config(format!("{name}: {why}"))
}

impl RunConfig {
    /// Ablation rows to run.
    pub fn ablation_grid(&self) -> Vec<AblationToggles> {
        if self.ablation.rows.is_empty() {
            super::ablation::default_grid()
        } else {
            self.ablation
                .rows
                .iter()
                .map(|c| AblationToggles::from_code(c).expect("validated"))
                .collect()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.eval.odin.validate()?;
        let o = &self.optim;
        if o.epochs < 1 {
            return Err(field("optim.epochs", "must be >= 1"));
        }
        if o.batch_size < 2 {
            return Err(field("optim.batch_size", "must be >= 2"));
        }
        if !(o.base_lr > 0.0 && o.base_lr.is_finite()) {
            return Err(field("optim.base_lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(field("optim.momentum", "must lie in [0, 1)"));
        }
        if !(o.weight_decay >= 0.0) {
            return Err(field("optim.weight_decay", "must be >= 0"));
        }
        if !(o.warmup_scale > 0.0) {
            return Err(field("optim.warmup_scale", "must be > 0"));
        }
        if !(o.mix_alpha > 0.0) {
            return Err(field("optim.mix_alpha", "must be > 0"));
        }
        if let Decay::Step { every, gamma } = o.decay {
            if every == 0 {
                return Err(field("optim.decay.every", "must be >= 1"));
            }
            if !(gamma > 0.0) {
                return Err(field("optim.decay.gamma", "must be > 0"));
            }
        }
        let m = &self.model;
        if m.num_experts < 2 {
            return Err(field("model.num_experts", "need at least one local expert plus the global one"));
        }
        if m.feature_dim == 0 || m.proj_dim == 0 || m.pred_hidden == 0 {
            return Err(field("model", "feature_dim, proj_dim and pred_hidden must be >= 1"));
        }
        if !(m.center_momentum > 0.0 && m.center_momentum <= 1.0) {
            return Err(field("model.center_momentum", "must lie in (0, 1]"));
        }
        if !(m.global_tau.is_finite()) {
            return Err(field("model.global_tau", "must be finite"));
        }
        if !(self.eval.tau > 0.0) {
            return Err(field("eval.tau", "must be > 0"));
        }
        for code in &self.ablation.rows {
            AblationToggles::from_code(code).map_err(|_| field("ablation.rows", &format!("{code:?} is not four 0/1 digits")))?;
        }
        if self.eval.validate_every == 0 {
            return Err(field("eval.validate_every", "must be >= 1"));
        }
        if let DataConfig::Synthetic(s) = &self.data {
            if s.num_classes < 2 {
                return Err(field("data.num_classes", "must be >= 2"));
            }
            if s.num_classes < m.num_experts - 1 {
                return Err(field("model.num_experts", "more local experts than classes"));
            }
            if s.n_max < 1 {
                return Err(field("data.n_max", "must be >= 1"));
            }
            if !(s.imbalance_ratio >= 1.0) {
                return Err(field("data.imbalance_ratio", "must be >= 1"));
            }
            if s.shape.is_empty() {
                return Err(field("data.shape", "must have at least one value"));
            }
            if !(s.noise >= 0.0 && s.radius >= 0.0) {
                return Err(field("data.noise", "radius and noise must be >= 0"));
            }
            if s.test_per_class == 0 || s.val_per_class == 0 || s.ood_count == 0 {
                return Err(field("data", "test_per_class, val_per_class and ood_count must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Learning rate of `epoch`: `base * warmup_scale` during warmup, then
/// `base` decayed by the configured family.
pub fn lr_at(epoch: usize, optim: &OptimConfig) -> Result<f64> {
    if epoch >= optim.epochs {
        return Err(Error::invalid(format!(
            "epoch {epoch} outside 0..{}",
            optim.epochs
        )));
    }
    let w = optim.warmup_epochs;
    if epoch < w {
        return Ok(optim.base_lr * optim.warmup_scale);
    }
    let t = epoch - w;
    let span = optim.epochs - w;
    Ok(match optim.decay {
        Decay::Constant => optim.base_lr,
        Decay::Cosine => optim.base_lr * 0.5 * (1.0 + (PI * t as f64 / span as f64).cos()),
        Decay::Step { every, gamma } => optim.base_lr * gamma.powi((t / every) as i32),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optim(epochs: usize) -> OptimConfig {
        OptimConfig {
            base_lr: 0.1,
            epochs,
            batch_size: 8,
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_epochs: 5,
            warmup_scale: 0.1,
            decay: Decay::Cosine,
            mix_alpha: 1.0,
        }
    }

    #[test]
    fn schedule_examples() {
        let o = optim(400);
        assert!((lr_at(0, &o).unwrap() - 0.01).abs() < 1e-15);
        assert!((lr_at(4, &o).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(lr_at(5, &o).unwrap(), 0.1);
        assert!(lr_at(399, &o).unwrap() < 1e-5);
        assert!(lr_at(400, &o).is_err());
        let step = OptimConfig {
            decay: Decay::Step { every: 10, gamma: 0.5 },
            ..optim(40)
        };
        assert_eq!(lr_at(14, &step).unwrap(), 0.1);
        assert_eq!(lr_at(15, &step).unwrap(), 0.05);
        let constant = OptimConfig {
            decay: Decay::Constant,
            ..optim(40)
        };
        assert_eq!(lr_at(39, &constant).unwrap(), 0.1);
    }

    #[test]
    fn cosine_is_nonincreasing_after_warmup() {
        let o = optim(60);
        let lrs: Vec<f64> = (5..60).map(|e| lr_at(e, &o).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    const MINIMAL: &str = r#"
[data]
kind = "synthetic"
num_classes = 4
n_max = 20
imbalance_ratio = 10.0

[optim]
base_lr = 0.05
epochs = 2
batch_size = 8
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.loss, LossConfig::default());
        assert_eq!(c.optim.momentum, 0.9);
        assert_eq!(c.eval.detector, ScoreKind::Energy);
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn schema_errors_name_the_field() {
        let missing = MINIMAL.replace("epochs = 2\n", "");
        let err = RunConfig::from_toml_str(&missing).unwrap_err().to_string();
        assert!(err.contains("epochs"), "{err}");
        let unknown = format!("{MINIMAL}\n[loss]\nlambda9 = 1.0\n");
        let err = RunConfig::from_toml_str(&unknown).unwrap_err().to_string();
        assert!(err.contains("lambda9"), "{err}");
        let bad = MINIMAL.replace("batch_size = 8", "batch_size = 1");
        let err = RunConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("optim.batch_size"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seed = 9;
        assert_ne!(a.hash(), b.hash());
    }
}
