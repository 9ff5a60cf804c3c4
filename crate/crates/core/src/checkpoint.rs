//! Single-file JSON checkpoints: configuration, vocabulary and named
//! parameter tensors under a schema version.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{fingerprint, EncoderConfig, ModelConfig};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::scoring::Model;
use crate::tape::{Params, Tensor};

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub domain: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub model_config: ModelConfig,
    pub encoder_config: EncoderConfig,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub vocab: Vec<String>,
    /// Parameter names in creation order, so reloading keeps identifiers.
    pub param_order: Vec<String>,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, domain: &str, seed: u64, best_epoch: usize, best_dev_f1: f64) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA,
            domain: domain.to_string(),
            seed,
            config_fingerprint: fingerprint(&(&model.config, &model.encoder)),
            model_config: model.config.clone(),
            encoder_config: model.encoder.clone(),
            best_epoch,
            best_dev_f1,
            vocab: (0..model.vocab.len())
                .map(|i| model.vocab.token(i).to_string())
                .collect(),
            param_order: model.params.ids().map(|id| model.params.name(id).to_string()).collect(),
            params: model.params.to_named(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.schema_version != CHECKPOINT_SCHEMA {
            return Err(Error::Checkpoint(format!(
                "schema version {} not supported (expected {CHECKPOINT_SCHEMA})",
                self.schema_version
            )));
        }
        let mut params = Params::new();
        for name in &self.param_order {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("parameter `{name}` listed but absent")))?;
            if t.data.len() != t.rows * t.cols || !t.is_finite() {
                return Err(Error::Checkpoint(format!("parameter `{name}` is malformed")));
            }
            params.add(name.clone(), t.clone());
        }
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint("parameter list and tensors disagree".into()));
        }
        Model::from_params(
            self.model_config,
            self.encoder_config,
            Vocab::from_tokens(self.vocab),
            params,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
