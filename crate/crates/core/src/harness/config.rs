use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::eval::{EvalSettings, DEFAULT_MAX_NEW_TOKENS};
use super::sampling::ShotSetting;
use super::task::{load_task, Task};
use crate::error::{Error, Result};
use crate::fusion::{FusionMode, ScoreNormalization};
use crate::model::{load_checkpoint, Checkpoint};
use crate::prompt::{Placement, PromptPlan, PromptTemplates};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default)]
    pub placement: Placement,
    #[serde(default)]
    pub use_sentinel: bool,
    #[serde(default)]
    pub mode_tag: Option<String>,
    /// Overrides the template file's separator when set.
    #[serde(default)]
    pub separator: Option<String>,
}

/// Harness config file. Relative paths resolve against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub checkpoint: PathBuf,
    pub task: PathBuf,
    pub template: PathBuf,
    pub plan: PlanConfig,
    #[serde(default)]
    pub mode: FusionMode,
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub setting: ShotSetting,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub normalization: ScoreNormalization,
    #[serde(default)]
    pub truncate_left: bool,
}

fn default_max_new_tokens() -> usize {
    DEFAULT_MAX_NEW_TOKENS
}

impl HarnessConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: HarnessConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.checkpoint, &mut cfg.task, &mut cfg.template] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn settings(&self) -> EvalSettings {
        EvalSettings {
            mode: self.mode,
            k: self.k,
            seed: self.seed,
            setting: self.setting,
            limit: self.limit,
            workers: self.workers,
            normalization: self.normalization,
            max_new_tokens: self.max_new_tokens,
            truncate_left: self.truncate_left,
        }
    }

    pub fn load_templates(&self) -> Result<PromptTemplates> {
        let text = fs::read_to_string(&self.template)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", self.template.display())))
    }

    pub fn plan(&self, templates: &PromptTemplates) -> Result<PromptPlan> {
        let mut templates = templates.clone();
        if let Some(sep) = &self.plan.separator {
            templates.separator = sep.clone();
        }
        PromptPlan::new(
            self.plan.placement,
            self.plan.use_sentinel,
            self.plan.mode_tag.as_deref(),
            &templates,
        )
    }
}

/// Everything a run needs, loaded from a config.
pub struct Harness {
    pub checkpoint: Checkpoint,
    pub task: Task,
    pub plan: PromptPlan,
    pub settings: EvalSettings,
}

impl Harness {
    pub fn from_config(cfg: &HarnessConfig) -> Result<Self> {
        let templates = cfg.load_templates()?;
        let plan = cfg.plan(&templates)?;
        let mut task = load_task(&cfg.task)?;
        task.template_ref = Some(cfg.template.display().to_string());
        let checkpoint = load_checkpoint(&cfg.checkpoint)?;
        Ok(Self {
            checkpoint,
            task,
            plan,
            settings: cfg.settings(),
        })
    }
}
