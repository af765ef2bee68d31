use serde::{Deserialize, Serialize};

use crate::dataset::SplitSpec;
use crate::diversification::DbConfig;
use crate::error::{invalid, Result};
use crate::losses::{DclAblation, GceConfig, LocMode};
use crate::model::ModelSpec;
use crate::rng::fnv1a;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Baseline,
    Rotation,
    Pirl,
    Dcl,
    DbGce,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Baseline, Mode::Rotation, Mode::Pirl, Mode::Dcl, Mode::DbGce];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Rotation => "rotation",
            Mode::Pirl => "pirl",
            Mode::Dcl => "dcl",
            Mode::DbGce => "db_gce",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .map_or_else(|| invalid(format!("unknown mode {s}")), Ok)
    }
}

/// Region confusion grid and neighbourhood range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcmConfig {
    pub k: usize,
    pub d: usize,
}

impl Default for RcmConfig {
    fn default() -> Self {
        Self { k: 4, d: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PirlConfig {
    pub tau: f64,
    pub beta: f64,
    pub negatives: usize,
    pub grid: usize,
    pub patch_size: usize,
    pub resize: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<usize>,
}

impl Default for PirlConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            beta: 0.5,
            negatives: 1000,
            grid: 3,
            patch_size: 8,
            resize: 36,
            crop: None,
        }
    }
}

/// Everything that defines a training run. Scalars come first so the TOML
/// form keeps them above the tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epoch: usize,
    pub lambda: f64,
    pub loc_mode: LocMode,
    pub seed: u64,
    pub rcm: RcmConfig,
    pub pirl: PirlConfig,
    pub db: DbConfig,
    pub gce: GceConfig,
    pub dcl_ablation: DclAblation,
    pub split: SplitSpec,
}

impl Default for TrainConfig {
    /// Schedule sized for the 32×32 synthetic data on one CPU.
    fn default() -> Self {
        Self {
            mode: Mode::Baseline,
            epochs: 40,
            batch_size: 8,
            lr: 0.01,
            momentum: 0.9,
            lr_decay_factor: 0.1,
            lr_decay_epoch: 20,
            lambda: 0.3,
            loc_mode: LocMode::Mse,
            seed: 0,
            rcm: RcmConfig::default(),
            pirl: PirlConfig::default(),
            db: DbConfig::default(),
            gce: GceConfig::default(),
            dcl_ablation: DclAblation::default(),
            split: SplitSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    /// The full-scale schedule: 110 epochs, decay after 50, lr 0.001.
    pub fn full_scale() -> Self {
        Self {
            epochs: 110,
            lr_decay_epoch: 50,
            lr: 0.001,
            ..Self::default()
        }
    }

    pub fn validate(&self, num_classes: usize, image_size: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return invalid("epochs and batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("learning rate {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return invalid(format!("lr_decay_factor {} outside (0, 1]", self.lr_decay_factor));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return invalid(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.split.label_fraction > 0.0 && self.split.label_fraction <= 1.0) {
            return invalid(format!("label_fraction {} outside (0, 1]", self.split.label_fraction));
        }
        if image_size % 4 != 0 {
            return invalid(format!("image size {image_size} must be divisible by 4"));
        }
        match self.mode {
            Mode::Dcl => {
                let RcmConfig { k, d } = self.rcm;
                if k < 2 || d >= k {
                    return invalid(format!("rcm needs k ≥ 2 and d < k, got k={k} d={d}"));
                }
                if image_size % k != 0 {
                    return invalid(format!("image size {image_size} not divisible by rcm k={k}"));
                }
                if k > image_size / 4 {
                    return invalid(format!("rcm k={k} finer than the {0}×{0} feature map", image_size / 4));
                }
                if self.dcl_ablation.is_empty() {
                    return invalid("dcl_ablation disables every term");
                }
            }
            Mode::Pirl => {
                let p = &self.pirl;
                if p.tau <= 0.0 || !(0.0..=1.0).contains(&p.beta) {
                    return invalid("pirl needs tau > 0 and beta in [0, 1]");
                }
                if p.grid * p.grid != 4 && p.grid * p.grid != 9 {
                    return invalid(format!("pirl grid {} must give 4 or 9 patches", p.grid));
                }
                if p.patch_size == 0 || p.patch_size % 4 != 0 {
                    return invalid(format!("patch size {} must be a positive multiple of 4", p.patch_size));
                }
                let side = p.crop.unwrap_or(p.resize);
                if p.patch_size > side / p.grid {
                    return invalid(format!("patch {} larger than cell {}", p.patch_size, side / p.grid));
                }
            }
            Mode::DbGce => {
                self.db.validate()?;
                if (image_size / 4) % self.db.patch_k != 0 {
                    return invalid(format!("db patch_k {} does not divide the feature map", self.db.patch_k));
                }
                self.gce.validate(num_classes)?;
            }
            Mode::Baseline | Mode::Rotation => {}
        }
        Ok(())
    }

    pub fn model_spec(&self, num_classes: usize) -> ModelSpec {
        let base = ModelSpec::classifier(num_classes);
        match self.mode {
            Mode::Baseline => base,
            Mode::Rotation => base.with_rotation(),
            Mode::Pirl => base.with_pirl(self.pirl.grid * self.pirl.grid),
            Mode::Dcl => base.with_dcl(self.rcm.k, self.loc_mode == LocMode::Bce),
            Mode::DbGce => base.with_cam(),
        }
    }

    /// Stable hash of the serialized config.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_toml().as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| crate::Error::Config(e.to_string()))
    }
}
