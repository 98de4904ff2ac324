use std::path::Path;

use serde_json::json;

use crate::encoder::{Encoder, EncoderConfig, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::Checkpoint;
use crate::objectives::PrototypeBank;
use crate::text::Vocabulary;

/// Checkpoint tensor name of the prototype matrix.
pub const PROTOTYPE_TENSOR: &str = "proto.centers";

/// A self-contained trained model: encoder weights, the vocabulary they index,
/// and the prototype bank.
#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: Encoder,
    pub vocab: Vocabulary,
    pub prototypes: PrototypeBank,
}

impl Model {
    /// Packs the model into a checkpoint. `extra` is merged into the metadata.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut metadata = json!({
            "encoder_config": self.encoder.config,
            "vocab": self.vocab.tokens(),
        });
        if let (Some(m), serde_json::Value::Object(e)) = (metadata.as_object_mut(), extra) {
            m.extend(e);
        }
        let mut tensors: Vec<_> = self
            .encoder
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        tensors.push((PROTOTYPE_TENSOR.to_string(), self.prototypes.prototypes.clone()));
        Checkpoint { metadata, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: EncoderConfig = serde_json::from_value(
            ckpt.metadata
                .get("encoder_config")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("metadata lacks encoder_config".into()))?,
        )?;
        let tokens: Vec<String> = serde_json::from_value(
            ckpt.metadata
                .get("vocab")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("metadata lacks vocab".into()))?,
        )?;
        let vocab = Vocabulary::from_tokens(tokens)?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} tokens but encoder expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let params: ParamStore = ckpt
            .tensors
            .iter()
            .filter(|(n, _)| n != PROTOTYPE_TENSOR)
            .cloned()
            .collect();
        let encoder = Encoder::from_params(config, params)?;
        let prototypes = ckpt
            .get(PROTOTYPE_TENSOR)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {PROTOTYPE_TENSOR}")))?
            .clone();
        Ok(Self {
            encoder,
            vocab,
            prototypes: PrototypeBank { prototypes },
        })
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        self.to_checkpoint(extra).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
