//! Run configuration, read from JSON.
//!
//! Optional fields are filled by [`RunConfig::resolve`]; the resolved form is
//! what gets written next to the outputs, so a run can be repeated from it.

use std::fs;
use std::path::{Path, PathBuf};

use longconv_core::attention::AttentionConfig;
use longconv_core::data::{GeneratorSpec, ListOpsSpec, RetrievalSpec, TextRules};
use longconv_core::model::{EncoderConfig, Paradigm, TaskSpec};
use longconv_core::optim::{AdamParams, ScheduleConfig, ScheduleKind};
use longconv_core::presets;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, io_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Conversations,
    Listops,
    Text,
    Retrieval,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Conversations => "conversations",
            Task::Listops => "listops",
            Task::Text => "text",
            Task::Retrieval => "retrieval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CnnLarge,
    CnnSmall,
    /// Uses `architecture`, or the task's default TCN when that is absent.
    CnnCustom,
    FullAttention,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CnnLarge => "cnn_large",
            ModelKind::CnnSmall => "cnn_small",
            ModelKind::CnnCustom => "cnn_custom",
            ModelKind::FullAttention => "full_attention",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// SGD for convolutional models, Adam for attention when unset.
    pub kind: Option<OptimizerKind>,
    pub max_lr: Option<f64>,
    pub momentum: f64,
    pub weight_decay: Option<f64>,
    pub schedule: Option<ScheduleKind>,
    pub warmup_fraction: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: None,
            max_lr: None,
            momentum: 0.9,
            weight_decay: None,
            schedule: None,
            warmup_fraction: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn schedule(&self, total_steps: usize) -> ScheduleConfig {
        ScheduleConfig {
            total_steps,
            kind: self.schedule.unwrap_or(ScheduleKind::OneCycle),
            max_lr: self.max_lr.unwrap_or(0.01),
            warmup_fraction: self.warmup_fraction,
            div_factor: self.div_factor,
            final_div_factor: self.final_div_factor,
        }
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Conversation corpus, split 80/10/10 by id hash.
    pub corpus: Option<PathBuf>,
    /// Explicit train and test files (any task).
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Seed of generated data, independent of the training seed.
    pub seed: u64,
    /// Generated example counts for the byte-level tasks.
    pub n_train: usize,
    pub n_test: usize,
    pub conversations: GeneratorSpec,
    pub listops: ListOpsSpec,
    pub text: TextRules,
    pub retrieval: RetrievalSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            train: None,
            test: None,
            seed: 0,
            n_train: 2000,
            n_test: 200,
            conversations: GeneratorSpec::default(),
            listops: ListOpsSpec::default(),
            text: TextRules::default(),
            retrieval: RetrievalSpec::default(),
        }
    }
}

fn default_paradigm() -> Paradigm {
    Paradigm::Mtl
}

fn default_embedding_dim() -> usize {
    128
}

fn default_threshold() -> f64 {
    0.5
}

fn default_lambda() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub model: ModelKind,
    #[serde(default = "default_paradigm")]
    pub paradigm: Paradigm,
    #[serde(default)]
    pub seed: u64,
    /// Runs once per seed when non-empty; `seed` is ignored then.
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub total_steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub architecture: Option<EncoderConfig>,
    /// Embedding width of the named conversation configurations.
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub data: DataConfig,
    /// Probability threshold of the utterance decision rule.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_lambda")]
    pub lambda_utt: f64,
    /// LCV1 file holding an `embedding.weight` tensor to start from.
    #[serde(default)]
    pub embedding_file: Option<PathBuf>,
    /// Sequence length at which `flops_g` is reported; the task's maximum
    /// length when unset.
    #[serde(default)]
    pub flops_len: Option<usize>,
    #[serde(default)]
    pub precision: Precision,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn is_attention(&self) -> bool {
        self.model == ModelKind::FullAttention
    }

    /// Longest input the task produces.
    pub fn max_len(&self) -> usize {
        match self.task {
            Task::Conversations => self.data.conversations.max_len,
            Task::Listops => self.data.listops.max_len,
            Task::Text => self.data.text.max_len,
            Task::Retrieval => self.data.retrieval.doc_len,
        }
    }

    /// Embedding rows: base vocabulary plus the two speaker tokens for
    /// conversations, bytes otherwise.
    pub fn vocab_rows(&self) -> usize {
        match self.task {
            Task::Conversations => self.data.conversations.vocab_size + 2,
            _ => presets::BYTE_VOCAB,
        }
    }

    pub fn task_spec(&self) -> TaskSpec {
        match self.task {
            Task::Conversations => TaskSpec::Conversation {
                k_conv: self.data.conversations.k_conv,
                k_utt: self.data.conversations.k_utt,
                paradigm: self.paradigm,
                lambda_utt: self.lambda_utt,
            },
            Task::Listops => TaskSpec::Sequence { classes: 10 },
            Task::Text => TaskSpec::Sequence { classes: 2 },
            Task::Retrieval => TaskSpec::Pair { classes: 2 },
        }
    }

    /// The encoder this run trains, with the embedding table sized for the
    /// task.
    pub fn encoder(&self) -> Result<EncoderConfig> {
        let enc = match (self.model, &self.architecture) {
            (ModelKind::CnnLarge, _) => {
                EncoderConfig::Tcn(presets::cnn_large(self.vocab_rows(), self.embedding_dim))
            }
            (ModelKind::CnnSmall, _) => {
                EncoderConfig::Tcn(presets::cnn_small(self.vocab_rows(), self.embedding_dim))
            }
            (ModelKind::CnnCustom, Some(a @ EncoderConfig::Tcn(_))) => a.clone(),
            (ModelKind::CnnCustom, Some(_)) => {
                return Err(config_err(
                    "architecture.kind",
                    "cnn_custom needs a tcn architecture",
                ))
            }
            (ModelKind::CnnCustom, None) => match self.task {
                Task::Listops | Task::Text => EncoderConfig::Tcn(presets::lra_text()),
                Task::Retrieval => EncoderConfig::Tcn(presets::retrieval(17)),
                Task::Conversations => {
                    return Err(config_err(
                        "architecture",
                        "cnn_custom on conversations needs an architecture",
                    ))
                }
            },
            (ModelKind::FullAttention, Some(a @ EncoderConfig::Attention(_))) => a.clone(),
            (ModelKind::FullAttention, Some(_)) => {
                return Err(config_err(
                    "architecture.kind",
                    "full_attention needs an attention architecture",
                ))
            }
            (ModelKind::FullAttention, None) => EncoderConfig::Attention(AttentionConfig {
                vocab_size: self.vocab_rows(),
                ..presets::attention_lra(self.max_len())
            }),
        };
        Ok(enc.with_vocab(self.vocab_rows()))
    }

    /// Fills every optional field with its effective value and checks the
    /// result.
    pub fn resolve(mut self) -> Result<Self> {
        let attention = self.is_attention();
        let o = &mut self.optimizer;
        o.kind.get_or_insert(if attention {
            OptimizerKind::Adam
        } else {
            OptimizerKind::Sgd
        });
        let adam = o.kind == Some(OptimizerKind::Adam);
        o.max_lr.get_or_insert(if adam { 1e-4 } else { 0.01 });
        o.weight_decay.get_or_insert(if adam { 0.01 } else { 0.0 });
        o.schedule.get_or_insert(if adam {
            ScheduleKind::WarmupLinear
        } else {
            ScheduleKind::OneCycle
        });
        if self.architecture.is_none()
            && matches!(self.model, ModelKind::CnnCustom | ModelKind::FullAttention)
        {
            self.architecture = Some(self.encoder()?);
        }
        if let Some(a) = self.architecture.take() {
            self.architecture = Some(a.with_vocab(self.vocab_rows()));
        }
        self.flops_len.get_or_insert(self.max_len());
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(config_err("total_steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.threshold) || self.threshold == 0.0 {
            return Err(config_err("threshold", "must lie in (0,1)"));
        }
        if self.lambda_utt < 0.0 {
            return Err(config_err("lambda_utt", "must be non-negative"));
        }
        if self.task != Task::Conversations && self.paradigm != Paradigm::Mtl {
            return Err(config_err(
                "paradigm",
                "only conversations distinguish mtl and stl",
            ));
        }
        let sched = self.optimizer.schedule(self.total_steps);
        sched
            .validate()
            .map_err(|e| config_err("optimizer", e.to_string()))?;
        if self.optimizer.momentum < 0.0 {
            return Err(config_err("optimizer.momentum", "must be non-negative"));
        }
        for (field, p) in [
            ("data.corpus", &self.data.corpus),
            ("data.train", &self.data.train),
            ("data.test", &self.data.test),
            ("embedding_file", &self.embedding_file),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(config_err(field, format!("{} does not exist", p.display())));
                }
            }
        }
        if self.data.train.is_some() != self.data.test.is_some() {
            return Err(config_err(
                "data.train",
                "train and test files must be given together",
            ));
        }
        if self.data.corpus.is_some() && self.task != Task::Conversations {
            return Err(config_err(
                "data.corpus",
                "only conversation corpora are split by id",
            ));
        }
        if self.data.corpus.is_none() && self.data.train.is_none() {
            if self.task == Task::Conversations {
                self.data
                    .conversations
                    .validate()
                    .map_err(|e| config_err("data.conversations", e.to_string()))?;
            } else if self.data.n_train == 0 || self.data.n_test == 0 {
                return Err(config_err(
                    "data.n_train",
                    "generated splits must be non-empty",
                ));
            }
        }
        let enc = self.encoder()?;
        if let EncoderConfig::Attention(a) = &enc {
            a.validate()
                .map_err(|e| config_err("architecture", e.to_string()))?;
            if a.max_len < self.max_len() {
                return Err(config_err(
                    "architecture.max_len",
                    format!(
                        "{} is shorter than the task's inputs ({})",
                        a.max_len,
                        self.max_len()
                    ),
                ));
            }
        }
        enc.tcn()
            .map_err(|e| config_err("architecture", e.to_string()))?;
        Ok(())
    }

    /// Seeds to run: `seeds` when given, else `[seed]`.
    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_carries_field_path() {
        let err = RunConfig::from_json(
            r#"{"task":"text","model":"cnn_custom","total_steps":10,"batch_size":2,"optimizer":{"max_lr":"fast"}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("optimizer.max_lr"), "{err}");
        let err = RunConfig::from_json(
            r#"{"task":"text","model":"cnn_custom","total_steps":10,"batch_size":0}"#,
        )
        .unwrap()
        .resolve()
        .unwrap_err();
        assert!(err.to_string().contains("batch_size"), "{err}");
    }

    #[test]
    fn resolution_fills_optimizer_defaults() {
        let cnn = RunConfig::from_json(
            r#"{"task":"text","model":"cnn_custom","total_steps":10,"batch_size":2}"#,
        )
        .unwrap()
        .resolve()
        .unwrap();
        assert_eq!(cnn.optimizer.kind, Some(OptimizerKind::Sgd));
        assert_eq!(cnn.optimizer.max_lr, Some(0.01));
        assert_eq!(cnn.optimizer.schedule, Some(ScheduleKind::OneCycle));
        let att = RunConfig::from_json(
            r#"{"task":"text","model":"full_attention","total_steps":10,"batch_size":2}"#,
        )
        .unwrap()
        .resolve()
        .unwrap();
        assert_eq!(att.optimizer.kind, Some(OptimizerKind::Adam));
        assert_eq!(att.optimizer.max_lr, Some(1e-4));
        assert_eq!(att.optimizer.weight_decay, Some(0.01));
        assert_eq!(att.optimizer.schedule, Some(ScheduleKind::WarmupLinear));
        let again = RunConfig::from_json(&att.to_json())
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(again, att);
    }
}
