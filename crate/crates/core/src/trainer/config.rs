use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{PromptConfig, Template, WordOrder};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::objectives::{LossWeights, ObjectiveConfig};

/// Learning rate used when fine-tuning a pretrained encoder. Far too small to
/// move a randomly initialized one, so it is opt-in via `learning_rate`.
pub const PRETRAINED_LEARNING_RATE: f64 = 2e-7;

/// Every knob of a training run. Defaults describe the desk-scale setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<usize>,
    pub insertion_probability: f64,
    pub temperature: f64,
    pub template: Template,
    pub word_order: WordOrder,
    pub enable_prompt: bool,
    pub enable_mlm: bool,
    pub enable_cp: bool,
    pub prototype_count: usize,
    pub sinkhorn_iters: usize,
    pub sinkhorn_epsilon: f64,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
    pub min_count: usize,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = EncoderConfig::desk(0);
        let obj = ObjectiveConfig::default();
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            warmup_fraction: 0.05,
            epochs: 5,
            steps: None,
            insertion_probability: 0.2,
            temperature: obj.temperature,
            template: Template::IsLabels,
            word_order: WordOrder::Spo,
            enable_prompt: true,
            enable_mlm: true,
            enable_cp: true,
            prototype_count: obj.prototype_count,
            sinkhorn_iters: obj.sinkhorn_iters,
            sinkhorn_epsilon: obj.sinkhorn_epsilon,
            hidden_dim: enc.hidden_dim,
            num_layers: enc.num_layers,
            num_heads: enc.num_heads,
            ffn_dim: enc.ffn_dim,
            max_positions: enc.max_positions,
            dropout_rate: enc.dropout_rate,
            min_count: 1,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key:?}")))
}

impl TrainConfig {
    /// Sets one field from its textual form, as used by config files.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "warmup_fraction" => self.warmup_fraction = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "steps" => self.steps = Some(parse(key, value)?),
            "pi" | "insertion_probability" => self.insertion_probability = parse(key, value)?,
            "tau" | "temperature" => self.temperature = parse(key, value)?,
            "template" => self.template = value.parse()?,
            "word_order" => self.word_order = value.parse()?,
            "enable_prompt" => self.enable_prompt = parse(key, value)?,
            "enable_mlm" => self.enable_mlm = parse(key, value)?,
            "enable_cp" => self.enable_cp = parse(key, value)?,
            "prototype_count" => self.prototype_count = parse(key, value)?,
            "sinkhorn_iters" => self.sinkhorn_iters = parse(key, value)?,
            "sinkhorn_epsilon" => self.sinkhorn_epsilon = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "num_layers" => self.num_layers = parse(key, value)?,
            "num_heads" => self.num_heads = parse(key, value)?,
            "ffn_dim" => self.ffn_dim = parse(key, value)?,
            "max_positions" => self.max_positions = parse(key, value)?,
            "dropout_rate" | "dropout" => self.dropout_rate = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        // an explicit `steps = 0` is allowed and yields the initial model
        if self.steps.is_none() && self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1 when steps is unset".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("learning_rate > 0 and warmup_fraction in [0,1] required".into()));
        }
        self.prompt_config().validate()?;
        self.objective_config().validate()?;
        self.encoder_config(Self::MIN_VOCAB).validate()
    }

    const MIN_VOCAB: usize = crate::text::RESERVED.len();

    /// Augmentation settings; a disabled prompt means π = 0.
    pub fn prompt_config(&self) -> PromptConfig {
        PromptConfig {
            insertion_probability: if self.enable_prompt {
                self.insertion_probability
            } else {
                0.0
            },
            template: self.template,
            word_order: self.word_order,
            rng_seed: self.seed,
        }
    }

    pub fn objective_config(&self) -> ObjectiveConfig {
        let on = |b: bool| if b { 1.0 } else { 0.0 };
        ObjectiveConfig {
            temperature: self.temperature,
            prototype_count: self.prototype_count,
            sinkhorn_iters: self.sinkhorn_iters,
            sinkhorn_epsilon: self.sinkhorn_epsilon,
            loss_weights: LossWeights {
                cl: 1.0,
                mlm: on(self.enable_mlm),
                cp: on(self.enable_cp),
            },
        }
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            max_positions: self.max_positions,
            dropout_rate: self.dropout_rate,
            seed: self.seed,
        }
    }

    /// Total optimizer steps for a corpus of `corpus_len` events.
    pub fn total_steps(&self, corpus_len: usize) -> usize {
        self.steps
            .unwrap_or(self.epochs * (corpus_len / self.batch_size.max(1)))
    }
}
