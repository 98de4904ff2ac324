//! Word-level vocabulary, encoding, and batch padding.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::augment::Event;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;

pub const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Lowercased whitespace tokens.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|w| w.to_lowercase())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            token_to_id,
            id_to_token,
        }
    }
}

impl Vocabulary {
    /// Counts words across all three components of every event and keeps
    /// those seen at least `min_count` times, most frequent first (ties
    /// broken alphabetically).
    pub fn build<'a, I>(corpus: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Event>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_any = false;
        for e in corpus {
            seen_any = true;
            for part in [&e.subject, &e.predicate, &e.object] {
                for w in words(part) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        if !seen_any {
            return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab = Self::default();
        for (w, _) in kept {
            vocab.insert(&w);
        }
        Ok(vocab)
    }

    /// Adds a token if absent and returns its id.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        id
    }

    /// Adds every whitespace token of `text` (lowercased).
    pub fn extend_with_text(&mut self, text: &str) {
        for w in words(text) {
            self.insert(&w);
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Rebuilds a vocabulary from an id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len()
            || tokens.iter().zip(RESERVED).any(|(t, r)| t != r)
        {
            return Err(Error::Input(
                "vocabulary must start with the reserved tokens [PAD] [UNK] [CLS] [SEP] [MASK]".into(),
            ));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self {
            token_to_id,
            id_to_token: tokens,
        })
    }

    /// One token per line; line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for t in &self.id_to_token {
            writeln!(f, "{t}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let tokens = f.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_tokens(tokens)
    }
}

/// `[CLS] w_1 … w_n [SEP]` token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn encode(text: &str, vocab: &Vocabulary) -> TokenSequence {
    let mut ids = vec![CLS];
    ids.extend(words(text).map(|w| vocab.id(&w)));
    ids.push(SEP);
    TokenSequence { ids }
}

/// Inner tokens (without `[CLS]`/`[SEP]`) joined by single spaces.
pub fn decode(seq: &TokenSequence, vocab: &Vocabulary) -> String {
    seq.ids
        .iter()
        .filter(|&&id| id != CLS && id != SEP && id != PAD)
        .map(|&id| vocab.token(id).unwrap_or("[UNK]"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Right-padded id matrix with its attention mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedBatch {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub seq_len: usize,
}

impl PaddedBatch {
    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.seq_len..(b + 1) * self.seq_len]
    }

    pub fn mask_row(&self, b: usize) -> &[bool] {
        &self.mask[b * self.seq_len..(b + 1) * self.seq_len]
    }

    pub fn ids_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.batch, self.seq_len],
            self.ids.iter().map(|&i| i as f64).collect(),
        )
        .expect("padded batch is non-empty")
    }

    pub fn mask_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.batch, self.seq_len],
            self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )
        .expect("padded batch is non-empty")
    }
}

/// Pads every sequence to `max_len`; longer sequences are an error, never truncated.
pub fn pad_batch(seqs: &[TokenSequence], max_len: usize) -> Result<PaddedBatch> {
    if seqs.is_empty() || max_len == 0 {
        return Err(Error::Input("pad_batch needs at least one sequence and max_len > 0".into()));
    }
    let mut ids = Vec::with_capacity(seqs.len() * max_len);
    let mut mask = Vec::with_capacity(seqs.len() * max_len);
    for s in seqs {
        if s.len() > max_len {
            return Err(Error::Truncation {
                len: s.len(),
                max_len,
            });
        }
        ids.extend_from_slice(&s.ids);
        ids.extend(std::iter::repeat_n(PAD, max_len - s.len()));
        mask.extend(std::iter::repeat_n(true, s.len()));
        mask.extend(std::iter::repeat_n(false, max_len - s.len()));
    }
    Ok(PaddedBatch {
        ids,
        mask,
        batch: seqs.len(),
        seq_len: max_len,
    })
}
