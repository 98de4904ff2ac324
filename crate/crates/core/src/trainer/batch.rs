use rand::Rng;

use crate::augment::{make_dual_positives, render, sample_event_mask, Event, PromptConfig};
use crate::error::{Error, Result};
use crate::text::{encode, pad_batch, PaddedBatch, TokenSequence, Vocabulary};

/// Everything one optimization step needs, packed into a single padded batch.
///
/// Rows `0..B` are anchors (plain rendering), `B..2B` the first positives,
/// `2B..3B` the second positives, and `3B..4B` the masked variants.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    pub sequences: PaddedBatch,
    pub batch_size: usize,
    /// Per event, `(position, original id)` of every masked token.
    pub mlm_targets: Vec<Vec<(usize, usize)>>,
    /// Surface texts of all `4B` rows, kept for divergence diagnostics.
    pub texts: Vec<String>,
}

impl TrainingBatch {
    pub fn anchor_rows(&self) -> Vec<usize> {
        (0..self.batch_size).collect()
    }

    pub fn positive_rows(&self, which: usize) -> Vec<usize> {
        let b = self.batch_size;
        ((1 + which) * b..(2 + which) * b).collect()
    }

    /// `(row, position, target id)` for every masked token in the batch.
    pub fn mlm_positions(&self) -> Vec<(usize, usize, usize)> {
        let base = 3 * self.batch_size;
        self.mlm_targets
            .iter()
            .enumerate()
            .flat_map(|(i, ts)| ts.iter().map(move |&(pos, id)| (base + i, pos, id)))
            .collect()
    }
}

/// Builds anchors, dual positives, and masked variants for `events`.
///
/// `prompt.insertion_probability` should already reflect whether prompt
/// insertion is enabled.
pub fn build_batch<R: Rng + ?Sized>(
    events: &[Event],
    vocab: &Vocabulary,
    prompt: &PromptConfig,
    rng: &mut R,
) -> Result<TrainingBatch> {
    if events.is_empty() {
        return Err(Error::Input("cannot build an empty batch".into()));
    }
    let b = events.len();
    let order = prompt.word_order;
    let mut texts = vec![String::new(); 4 * b];
    let mut seqs = vec![TokenSequence { ids: Vec::new() }; 4 * b];
    let mut mlm_targets = Vec::with_capacity(b);
    for (i, e) in events.iter().enumerate() {
        let anchor = render(e, order);
        let dual = make_dual_positives(e, prompt, rng);
        let masked = sample_event_mask(e, vocab, order, rng);
        seqs[i] = encode(&anchor, vocab);
        seqs[b + i] = encode(&dual.first, vocab);
        seqs[2 * b + i] = encode(&dual.second, vocab);
        texts[3 * b + i] = crate::text::decode(&masked.ids, vocab);
        seqs[3 * b + i] = masked.ids;
        texts[i] = anchor;
        texts[b + i] = dual.first;
        texts[2 * b + i] = dual.second;
        mlm_targets.push(masked.targets);
    }
    let max_len = seqs.iter().map(TokenSequence::len).max().unwrap_or(2);
    Ok(TrainingBatch {
        sequences: pad_batch(&seqs, max_len)?,
        batch_size: b,
        mlm_targets,
        texts,
    })
}
