//! Batch assembly, the optimization loop, and checkpointing.

mod batch;
mod config;
mod model;

pub use batch::{build_batch, TrainingBatch};
pub use config::{TrainConfig, PRETRAINED_LEARNING_RATE};
pub use model::{Model, PROTOTYPE_TENSOR};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::augment::{Event, Template};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, write_atomic, AdamState, Graph};
use crate::objectives::{overall_loss, LossBreakdown, PrototypeBank};
use crate::text::Vocabulary;

/// File names written into a run directory.
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const DIVERGENCE_FILE: &str = "divergence.json";

/// One line of the metrics stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub learning_rate: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<StepMetrics>,
    /// Final checkpoint, when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

/// Corpus vocabulary plus every template scaffold token, so that all
/// ablations of one corpus share identical token ids.
pub fn build_vocabulary(corpus: &[Event], min_count: usize) -> Result<Vocabulary> {
    let mut vocab = Vocabulary::build(corpus, min_count)?;
    for t in Template::scaffold_tokens() {
        vocab.insert(t);
    }
    Ok(vocab)
}

/// A freshly initialized model for `corpus`, as training would start from.
pub fn initial_model(corpus: &[Event], cfg: &TrainConfig) -> Result<Model> {
    let vocab = build_vocabulary(corpus, cfg.min_count)?;
    let encoder = Encoder::new(cfg.encoder_config(vocab.len()))?;
    let prototypes = PrototypeBank::new(cfg.prototype_count, cfg.hidden_dim, cfg.seed ^ PROTOTYPE_SEED_SALT);
    Ok(Model {
        encoder,
        vocab,
        prototypes,
    })
}

const PROTOTYPE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Linear warmup over the first `warmup_fraction` of steps, then constant.
pub fn learning_rate_at(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    let warmup = (cfg.warmup_fraction * total as f64).ceil() as usize;
    if warmup == 0 || step >= warmup {
        cfg.learning_rate
    } else {
        cfg.learning_rate * (step + 1) as f64 / warmup as f64
    }
}

/// Runs the full optimization loop.
///
/// With `out_dir`, the metrics stream, vocabulary, and checkpoints are written
/// there. The run is a pure function of `(corpus, cfg)`.
pub fn train(corpus: &[Event], cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.len() < cfg.batch_size {
        return Err(Error::Input(format!(
            "corpus has {} events, fewer than batch_size {}",
            corpus.len(),
            cfg.batch_size
        )));
    }
    let mut model = initial_model(corpus, cfg)?;
    let prompt = cfg.prompt_config();
    let objective = cfg.objective_config();
    let total = cfg.total_steps(corpus.len());

    let mut metrics_out = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            model.vocab.save(&dir.join(VOCAB_FILE))?;
            Some(BufWriter::new(File::create(dir.join(METRICS_FILE))?))
        }
        None => None,
    };

    let mut adam: Vec<AdamState> = model
        .encoder
        .params
        .iter()
        .map(|(_, t)| AdamState::new(t.numel(), cfg.learning_rate))
        .collect();
    let mut proto_adam = AdamState::new(model.prototypes.prototypes.numel(), cfg.learning_rate);

    // stream 0 drives shuffling; step s draws augmentation and dropout from stream s + 1
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let per_epoch = corpus.len() / cfg.batch_size;
    let mut metrics = Vec::with_capacity(total);

    for step in 0..total {
        let slot = step % per_epoch;
        if slot == 0 {
            order.shuffle(&mut shuffle_rng);
        }
        let events: Vec<Event> = order[slot * cfg.batch_size..(slot + 1) * cfg.batch_size]
            .iter()
            .map(|&i| corpus[i].clone())
            .collect();
        let mut step_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        step_rng.set_stream(step as u64 + 1);

        let batch = build_batch(&events, &model.vocab, &prompt, &mut step_rng)?;
        let mut g = Graph::new();
        let bound = model.encoder.bind(&mut g, true);
        let proto_var = g.param(model.prototypes.prototypes.clone());
        let loss = match overall_loss(&mut g, &model.encoder, &bound, proto_var, &batch, &objective, &mut step_rng, None) {
            Ok(l) if l.breakdown.total.is_finite() => l,
            Ok(l) => return Err(diverged(out_dir, step, &batch, format!("non-finite loss {:?}", l.breakdown))),
            Err(Error::Numeric(msg)) => return Err(diverged(out_dir, step, &batch, msg)),
            Err(e) => return Err(e),
        };

        g.backward(loss.total)?;
        let lr = learning_rate_at(cfg, step, total);
        let vars = bound.vars().to_vec();
        drop(bound);
        for (i, var) in vars.into_iter().enumerate() {
            // parameters outside every enabled term have no gradient and stay untouched
            if let Some(grad) = g.grad(var) {
                adam[i].learning_rate = lr;
                adam_step(model.encoder.params.at_mut(i), grad, &mut adam[i])?;
            }
        }
        if let Some(grad) = g.grad(proto_var) {
            proto_adam.learning_rate = lr;
            adam_step(&mut model.prototypes.prototypes, grad, &mut proto_adam)?;
            model.prototypes.renormalize();
        }

        let m = StepMetrics {
            step: step + 1,
            learning_rate: lr,
            loss: loss.breakdown,
        };
        if let Some(w) = metrics_out.as_mut() {
            serde_json::to_writer(&mut *w, &m)?;
            w.write_all(b"\n")?;
        }
        metrics.push(m);

        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < total {
                model.save(&dir.join(format!("step-{:06}.ckpt", step + 1)), run_metadata(cfg, step + 1))?;
            }
        }
    }

    if let Some(mut w) = metrics_out {
        w.flush()?;
    }
    let checkpoint = match out_dir {
        Some(dir) => {
            let path = dir.join(CHECKPOINT_FILE);
            model.save(&path, run_metadata(cfg, total))?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome {
        model,
        metrics,
        checkpoint,
    })
}

/// Builds the divergence error, dumping the offending batch when possible.
fn diverged(out_dir: Option<&Path>, step: usize, batch: &TrainingBatch, message: String) -> Error {
    if let Some(dir) = out_dir {
        let dump = json!({
            "step": step,
            "message": message,
            "batch_texts": batch.texts,
        });
        let written = serde_json::to_string_pretty(&dump)
            .map_err(Error::from)
            .and_then(|s| write_atomic(&dir.join(DIVERGENCE_FILE), s.as_bytes()));
        if let Err(e) = written {
            return Error::Divergence {
                step,
                message: format!("{message} (batch dump failed: {e})"),
            };
        }
    }
    Error::Divergence { step, message }
}

fn run_metadata(cfg: &TrainConfig, step: usize) -> serde_json::Value {
    json!({ "train_config": cfg, "step": step })
}

/// Mean of the first and last `window` total losses.
pub fn smoothed_endpoints(metrics: &[StepMetrics], window: usize) -> Option<(f64, f64)> {
    if metrics.is_empty() {
        return None;
    }
    let w = window.clamp(1, metrics.len());
    let mean = |s: &[StepMetrics]| s.iter().map(|m| m.loss.total).sum::<f64>() / s.len() as f64;
    Some((mean(&metrics[..w]), mean(&metrics[metrics.len() - w..])))
}
