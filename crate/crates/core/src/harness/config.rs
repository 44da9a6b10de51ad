use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::data::SynthConfig;
use crate::error::{Error, Result};
use crate::fusion::{AgpConfig, FusionConfig};
use crate::lm::{LmConfig, VID_MARKER};
use crate::tensor::optim::OptimizerKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerativeTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Cap on training samples taken from the front of the training split.
    pub train_limit: Option<usize>,
    /// Cap on validation and test samples used for selection and evaluation.
    pub eval_limit: Option<usize>,
    pub max_new_tokens: usize,
    /// `{video}` expands to one marker per video token, `{domain}` to the domain name.
    pub prompt_template: String,
}

impl Default for GenerativeTraining {
    fn default() -> Self {
        Self {
            epochs: 16,
            batch_size: 8,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.003,
            train_limit: Some(640),
            eval_limit: Some(100),
            max_new_tokens: 140,
            prompt_template: "{video}Assess the {domain} attempt.".into(),
        }
    }
}

impl GenerativeTraining {
    pub fn prompt(&self, video_tokens: usize, domain: &str) -> String {
        self.prompt_template
            .replace("{video}", &VID_MARKER.repeat(video_tokens))
            .replace("{domain}", domain)
    }
}

/// Everything a run needs; serialized into checkpoints as the config snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for model initialization and shuffling (data has its own seed).
    pub seed: u64,
    pub data: SynthConfig,
    pub fusion: FusionConfig,
    pub agp: AgpConfig,
    pub lm: LmConfig,
    pub classifier: ClassifierTraining,
    pub generative: GenerativeTraining,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: SynthConfig::default(),
            fusion: FusionConfig::default(),
            agp: AgpConfig::default(),
            lm: LmConfig::default(),
            classifier: ClassifierTraining::default(),
            generative: GenerativeTraining::default(),
            output_dir: "runs".into(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides with dotted paths such as
    /// `data.noise_std=0.5` or `data.uninformative_view_ids=[1,2]`. Values are
    /// read as JSON, falling back to a plain string. Unknown keys are rejected.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut tree;
            for part in key.split('.') {
                node = node
                    .as_object_mut()
                    .and_then(|o| o.get_mut(part))
                    .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
            }
            *node = value;
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("invalid override: {e}")))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let d = self.data.feature_dim;
        if self.fusion.dim != d || self.agp.d_vis != d {
            return Err(Error::Config(format!(
                "fusion.dim ({}) and agp.d_vis ({}) must equal data.feature_dim ({d})",
                self.fusion.dim, self.agp.d_vis
            )));
        }
        if self.agp.d_lm != self.lm.dim {
            return Err(Error::Config(format!(
                "agp.d_lm ({}) must equal lm.dim ({})",
                self.agp.d_lm, self.lm.dim
            )));
        }
        if self.data.view_count > self.fusion.max_views {
            return Err(Error::Config(format!(
                "{} views exceed fusion.max_views {}",
                self.data.view_count, self.fusion.max_views
            )));
        }
        for (what, epochs, bs, lr) in [
            (
                "classifier",
                self.classifier.epochs,
                self.classifier.batch_size,
                self.classifier.learning_rate,
            ),
            (
                "generative",
                self.generative.epochs,
                self.generative.batch_size,
                self.generative.learning_rate,
            ),
        ] {
            if epochs == 0 || bs == 0 || !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!(
                    "{what} training needs epochs >= 1, batch_size >= 1 and a positive learning rate"
                )));
            }
        }
        if self.generative.prompt_template.matches("{video}").count() != 1 {
            return Err(Error::Config(
                "prompt_template must contain `{video}` exactly once".into(),
            ));
        }
        Ok(())
    }
}
