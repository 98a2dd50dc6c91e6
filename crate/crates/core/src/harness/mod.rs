//! Training, Exact Matching Accuracy evaluation, ablation, checkpoints and
//! gradient checking.

mod ablate;
mod checkpoint;
mod eval;
mod gradcheck;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{split_corpus, CorpusSplit, Document};
use crate::error::{Error, Result};
use crate::fusion::{encode_sample, EncodedSample, ModelConfig};
use crate::tokenizer::{build_vocab, Vocabulary};

pub use ablate::{ablate, AblationRow, AblationTable};
pub use checkpoint::{
    config_path, decode_tensors, encode_tensors, load_checkpoint, load_params_into, read_tensors, save_checkpoint,
    vocab_path, write_tensors, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use eval::{ema, evaluate, evaluate_samples, predict, EvalOutput, EvalReport, Prediction, PredictionRecord};
pub use gradcheck::{gradcheck, gradcheck_sample, GradcheckOptions, GradcheckReport, ParamCheck, GRADCHECK_TOLERANCE};
pub use train::{train, train_epoch, train_on, EpochMetrics, TrainReport, Trained};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-6;
pub const TOY_LEARNING_RATE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Questions per SGD step.
    pub batch_size: usize,
    pub seed: u64,
    /// Decision threshold on the per-candidate sigmoid.
    pub threshold: f64,
    /// Stops training after this many steps.
    pub max_steps: Option<usize>,
    /// Keeps only the first this-many training questions.
    pub max_train_samples: Option<usize>,
    /// Train/val/test document ratios.
    pub split: [f64; 3],
    pub min_count: usize,
    pub model: ModelConfig,
    pub data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 10,
            batch_size: 8,
            seed: 42,
            threshold: 0.5,
            max_steps: None,
            max_train_samples: None,
            split: [0.8, 0.1, 0.1],
            min_count: 1,
            model: ModelConfig::default(),
            data: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale settings trained from scratch.
    pub fn toy() -> Self {
        Self {
            learning_rate: TOY_LEARNING_RATE,
            epochs: 30,
            batch_size: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.max_steps == Some(0) || self.max_train_samples == Some(0) {
            return Err(Error::Config(
                "max_steps and max_train_samples must be at least 1".into(),
            ));
        }
        self.model.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn split_corpus(&self, docs: &[Document]) -> Result<CorpusSplit> {
        split_corpus(docs, self.split, self.seed)
    }
}

/// Vocabulary over element texts and questions of `docs`.
pub fn corpus_vocab(docs: &[Document], min_count: usize) -> Vocabulary {
    let texts: Vec<&str> = docs
        .iter()
        .flat_map(|d| {
            d.elements
                .iter()
                .map(|e| e.text.as_str())
                .chain(d.questions.iter().map(|q| q.question.as_str()))
        })
        .collect();
    build_vocab(&texts, min_count)
}

/// Every question of every document, in corpus order.
pub fn encode_corpus(docs: &[Document], vocab: &Vocabulary, cfg: &ModelConfig) -> Result<Vec<EncodedSample>> {
    docs.iter()
        .flat_map(|d| d.questions.iter().map(move |q| encode_sample(d, q, vocab, cfg)))
        .collect()
}
