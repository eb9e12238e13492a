use std::path::{Path, PathBuf};

use bmfnet_core::bmfnet::{ModelConfig, Variant};
use bmfnet_core::distill::TrainConfig;
use bmfnet_core::numerics::AdamConfig;
use bmfnet_core::signals::{default_profiles, PreferenceProfile, SignalConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// e = 320, h = 8, full encoders.
    Paper,
    /// Reduced widths for desk-scale runs.
    Tiny,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    pub n_subjects: usize,
    /// The last `minority` subjects get the flipped preference profile.
    pub minority: usize,
    pub signal: SignalConfig,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self { n_subjects: 8, minority: 2, signal: SignalConfig::default() }
    }
}

impl DatasetParams {
    pub fn profiles(&self) -> Vec<PreferenceProfile> {
        default_profiles(self.n_subjects, self.minority)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub profile: Profile,
    /// Hidden width for the tiny profile.
    pub hidden: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { profile: Profile::Tiny, hidden: 16 }
    }
}

impl ModelParams {
    pub fn config(&self, variant: Variant) -> ModelConfig {
        match self.profile {
            Profile::Paper => ModelConfig::paper(variant),
            Profile::Tiny => ModelConfig::tiny(variant, self.hidden),
        }
    }
}

/// Everything a `loso` or `train` run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub dataset: DatasetParams,
    pub model: ModelParams,
    pub variants: Vec<Variant>,
    pub train: TrainConfig,
    /// Folds trained concurrently.
    pub workers: usize,
    pub eval_batch: usize,
    pub save_checkpoints: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("runs/default"),
            dataset: DatasetParams::default(),
            model: ModelParams::default(),
            variants: vec![Variant::Student, Variant::MnetS],
            train: desk_training(),
            workers: 1,
            eval_batch: 64,
            save_checkpoints: false,
        }
    }
}

/// Training schedule sized for the tiny profile on one CPU core.
pub fn desk_training() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        teacher_epochs: 15,
        student_epochs: 10,
        joint_epochs: 10,
        adam: AdamConfig { lr: 1e-3, weight_decay: 1e-3, ..AdamConfig::default() },
        ..TrainConfig::default()
    }
}

/// How one variant is trained: the student variant distils from a teacher,
/// every other variant trains on its hard loss alone.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantPlan {
    pub variant: Variant,
    pub teacher: Option<ModelConfig>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("no model variants selected".into()));
        }
        if self.workers == 0 || self.eval_batch == 0 {
            return Err(Error::Config("workers and eval_batch must be positive".into()));
        }
        if self.dataset.minority > self.dataset.n_subjects {
            return Err(Error::Config(format!(
                "{} minority subjects requested out of {}",
                self.dataset.minority, self.dataset.n_subjects
            )));
        }
        for &v in &self.variants {
            let plan = self.plan(v);
            plan.model.validate()?;
            if let Some(t) = &plan.teacher {
                t.validate()?;
            }
        }
        self.train.distill.validate()?;
        Ok(())
    }

    pub fn plan(&self, variant: Variant) -> VariantPlan {
        let t = &self.train;
        match variant {
            Variant::Student => VariantPlan {
                variant,
                teacher: Some(self.model.config(Variant::Teacher)),
                model: self.model.config(Variant::Student),
                train: t.clone(),
            },
            Variant::Teacher => VariantPlan {
                variant,
                teacher: None,
                model: self.model.config(Variant::Teacher),
                train: TrainConfig { teacher_epochs: 0, student_epochs: t.teacher_epochs, joint_epochs: 0, ..t.clone() },
            },
            _ => VariantPlan {
                variant,
                teacher: None,
                model: self.model.config(variant),
                train: TrainConfig {
                    teacher_epochs: 0,
                    student_epochs: t.student_epochs + t.joint_epochs,
                    joint_epochs: 0,
                    ..t.clone()
                },
            },
        }
    }
}
