//! Model, encoder, training and run configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{NegativeSampling, SplitRatios};
use crate::error::{Error, Result};
use crate::kb_mining::{DEFAULT_LOOKUP_CAP, DEFAULT_RHO};
use crate::knowledge::MAX_MERGED_KNOWLEDGE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EncoderMode {
    /// Trainable sub-token embedding table.
    ToyTrainable,
    /// Precomputed contextual vectors read from a file, kept frozen.
    FrozenPretrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub mode: EncoderMode,
    /// Span-vector width `d`.
    pub embed_dim: usize,
    /// Width of the trainable token table (TOY mode).
    pub token_dim: usize,
    /// Width of the precomputed vectors (FROZEN mode).
    pub frozen_dim: usize,
    pub frozen_vectors: Option<PathBuf>,
    pub max_seq_len: usize,
    /// Dependency-distance window `L` of syntax attention.
    pub attention_window: usize,
    /// Lower bounds of the span-length buckets.
    pub length_buckets: Vec<usize>,
    pub length_embed_dim: usize,
    /// Corpus words seen at least this often get their own vocabulary entry.
    pub vocab_min_count: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            mode: EncoderMode::ToyTrainable,
            embed_dim: 32,
            token_dim: 32,
            frozen_dim: 768,
            frozen_vectors: None,
            max_seq_len: 256,
            attention_window: 2,
            length_buckets: vec![1, 2, 3, 4, 5, 8, 16],
            length_embed_dim: 20,
            vocab_min_count: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.token_dim == 0 {
            return Err(Error::Config("embed_dim and token_dim must be > 0".into()));
        }
        if self.attention_window < 1 {
            return Err(Error::Config("attention_window must be >= 1".into()));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be > 0".into()));
        }
        if self.length_buckets.first() != Some(&1) || self.length_buckets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "length_buckets must start at 1 and increase strictly".into(),
            ));
        }
        if self.mode == EncoderMode::FrozenPretrained && self.frozen_vectors.is_none() {
            return Err(Error::Config("FROZEN_PRETRAINED mode needs frozen_vectors".into()));
        }
        Ok(())
    }

    /// Shape checks only; file paths are checked at run level.
    pub fn validate_shape(&self) -> Result<()> {
        let mut probe = self.clone();
        probe.frozen_vectors.get_or_insert_with(Default::default);
        probe.validate()
    }

    /// Bucket index for a span of `words` words.
    pub fn length_bucket(&self, words: usize) -> usize {
        self.length_buckets.iter().rposition(|&lo| words >= lo).unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttentionVariant {
    /// Distance-discounted attention over the span's dependency structure.
    Syntax,
    /// Scaled dot product against the head sub-token.
    Dot,
    /// Uniform average (attention removed).
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub use_domain_kb: bool,
    pub use_general_kb: bool,
    pub use_affect: bool,
    pub enable_f_c: bool,
    pub enable_f_k: bool,
    pub enable_f_sk: bool,
    pub attention_variant: AttentionVariant,
    pub dropout: f64,
    pub ffn_hidden: usize,
    /// Per-source knowledge lookup cap.
    pub knowledge_cap: usize,
    /// Cap on the merged knowledge list.
    pub max_knowledge: usize,
    /// Use the knowledge-score input as printed, with the anaphor product
    /// term repeated instead of the mention product term.
    pub literal_knowledge_features: bool,
    /// Width of the affect lexicon vectors; 0 when no lexicon is attached.
    pub affect_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            use_domain_kb: true,
            use_general_kb: true,
            use_affect: true,
            enable_f_c: true,
            enable_f_k: true,
            enable_f_sk: true,
            attention_variant: AttentionVariant::Syntax,
            dropout: 0.1,
            ffn_hidden: 32,
            knowledge_cap: DEFAULT_LOOKUP_CAP,
            max_knowledge: MAX_MERGED_KNOWLEDGE,
            literal_knowledge_features: false,
            affect_width: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.enable_f_c || self.enable_f_k || self.enable_f_sk) {
            return Err(Error::Config("at least one score head must be enabled".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.ffn_hidden == 0 || self.knowledge_cap == 0 || self.max_knowledge == 0 {
            return Err(Error::Config(
                "ffn_hidden, knowledge_cap and max_knowledge must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn uses_affect(&self) -> bool {
        self.use_affect && self.affect_width > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerConfig {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd { momentum: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// The rate decays linearly to `learning_rate * lr_floor_factor`.
    pub lr_floor_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub rho: f64,
    pub max_seq_len: usize,
    pub optimizer: OptimizerConfig,
    pub negative_sampling: NegativeSampling,
    pub split: SplitRatios,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 3e-5,
            lr_floor_factor: 1e-4,
            batch_size: 16,
            seed: 42,
            rho: DEFAULT_RHO,
            max_seq_len: 256,
            optimizer: OptimizerConfig::default(),
            negative_sampling: NegativeSampling::default(),
            split: SplitRatios::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_floor_factor) {
            return Err(Error::Config("lr_floor_factor must be in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be > 0".into()));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::Config("rho must be >= 0".into()));
        }
        Ok(())
    }
}

/// Input and output locations of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPaths {
    pub corpus: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    /// Pre-built labeled triples; used instead of `annotations` when set.
    pub triples: Option<PathBuf>,
    pub split_assignment: Option<PathBuf>,
    pub triple_store: Option<PathBuf>,
    pub affect_lexicon: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub domain: String,
    pub paths: RunPaths,
    pub model: ModelConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            domain: String::new(),
            paths: RunPaths::default(),
            model: ModelConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        // relative paths are resolved against the config file's directory
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
            if let Some(p) = cfg.encoder.frozen_vectors.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        if self.encoder.max_seq_len != self.train.max_seq_len {
            return Err(Error::Config(format!(
                "encoder.max_seq_len {} differs from train.max_seq_len {}",
                self.encoder.max_seq_len, self.train.max_seq_len
            )));
        }
        for (name, p) in self.paths.inputs() {
            if !p.exists() {
                return Err(Error::Config(format!("{name} path {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

impl RunPaths {
    fn rebase(&mut self, base: &std::path::Path) {
        for p in [
            &mut self.corpus,
            &mut self.annotations,
            &mut self.triples,
            &mut self.split_assignment,
            &mut self.triple_store,
            &mut self.affect_lexicon,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn inputs(&self) -> Vec<(&'static str, &PathBuf)> {
        [
            ("corpus", &self.corpus),
            ("annotations", &self.annotations),
            ("triples", &self.triples),
            ("split_assignment", &self.split_assignment),
            ("triple_store", &self.triple_store),
            ("affect_lexicon", &self.affect_lexicon),
        ]
        .into_iter()
        .filter_map(|(n, p)| p.as_ref().map(|p| (n, p)))
        .collect()
    }
}

/// Hex SHA-256 of the canonical JSON of `value`, truncated to 16 characters.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}
