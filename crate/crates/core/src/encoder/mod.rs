//! Compact pre-norm transformer encoder with `[CLS]` pooling and an MLM head.

mod params;

pub use params::ParamStore;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::text::{self, PaddedBatch, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Small CPU-friendly defaults: d=64, 2 layers, 4 heads, ffn 128.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 128,
            max_positions: 32,
            dropout_rate: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= text::MASK {
            return Err(Error::Config("vocab_size must cover the reserved tokens".into()));
        }
        if self.hidden_dim == 0 || self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.ffn_dim == 0 || self.max_positions < 2 {
            return Err(Error::Config("ffn_dim must be > 0 and max_positions >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Graph handles for one encoder forward.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `[B·T × d]`: row `b·T + t` is the vector of token `t` in sequence `b`.
    pub token_vectors: Var,
    /// `[B × d]`: the `[CLS]` rows of `token_vectors`.
    pub pooled: Var,
    pub batch: usize,
    pub seq_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamStore,
}

/// Parameters bound into one [`Graph`], indexed like the [`ParamStore`].
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Var {
        self.vars[self.store.index(name).unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Encoder {
    /// Normal(0, 0.02) weights, zero biases, unit layer-norm gains.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut init = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(&mut rng)).collect())
                .expect("positive shape")
        };
        let (v, d, f) = (config.vocab_size, config.hidden_dim, config.ffn_dim);
        let mut params = ParamStore::default();
        params.push("embed.tok", init(&[v, d]));
        params.push("embed.pos", init(&[config.max_positions, d]));
        for l in 0..config.num_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            params.push(&p("ln1.gain"), Tensor::filled(&[d], 1.0));
            params.push(&p("ln1.bias"), Tensor::zeros(&[d]));
            for w in ["wq", "wk", "wv", "wo"] {
                params.push(&p(&format!("attn.{w}")), init(&[d, d]));
                params.push(&p(&format!("attn.b{}", &w[1..])), Tensor::zeros(&[d]));
            }
            params.push(&p("ln2.gain"), Tensor::filled(&[d], 1.0));
            params.push(&p("ln2.bias"), Tensor::zeros(&[d]));
            params.push(&p("ffn.w1"), init(&[d, f]));
            params.push(&p("ffn.b1"), Tensor::zeros(&[f]));
            params.push(&p("ffn.w2"), init(&[f, d]));
            params.push(&p("ffn.b2"), Tensor::zeros(&[d]));
        }
        params.push("final_ln.gain", Tensor::filled(&[d], 1.0));
        params.push("final_ln.bias", Tensor::zeros(&[d]));
        params.push("mlm.w", init(&[d, v]));
        params.push("mlm.b", Tensor::zeros(&[v]));
        Ok(Self { config, params })
    }

    pub fn from_params(config: EncoderConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config.clone())?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn bind<'a>(&'a self, g: &mut Graph, trainable: bool) -> Bound<'a> {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound {
            store: &self.params,
            vars,
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        p: &Bound<'_>,
        batch: &PaddedBatch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<EncoderOutput> {
        let cfg = &self.config;
        let (b, t) = (batch.batch, batch.seq_len);
        if t > cfg.max_positions {
            return Err(dim_err!(
                "sequence length {t} exceeds max_positions {}",
                cfg.max_positions
            ));
        }
        if let Some(&bad) = batch.ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::Index(format!(
                "token id {bad} >= vocab_size {}",
                cfg.vocab_size
            )));
        }
        let drop = match mode {
            Mode::Train => cfg.dropout_rate,
            Mode::Eval => 0.0,
        };
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let tok = g.gather(p.get("embed.tok"), &batch.ids)?;
        let pos = g.gather(p.get("embed.pos"), &positions)?;
        let mut x = g.add(tok, pos)?;
        x = g.dropout(x, drop, rng);

        for l in 0..cfg.num_layers {
            let name = |s: &str| format!("layer{l}.{s}");
            let h = g.layer_norm(x, p.get(&name("ln1.gain")), p.get(&name("ln1.bias")))?;
            let q = linear(g, h, p.get(&name("attn.wq")), p.get(&name("attn.bq")))?;
            let k = linear(g, h, p.get(&name("attn.wk")), p.get(&name("attn.bk")))?;
            let v = linear(g, h, p.get(&name("attn.wv")), p.get(&name("attn.bv")))?;
            let a = g.attention(q, k, v, t, cfg.num_heads, &batch.mask)?;
            let o = linear(g, a, p.get(&name("attn.wo")), p.get(&name("attn.bo")))?;
            let o = g.dropout(o, drop, rng);
            x = g.add(x, o)?;

            let h = g.layer_norm(x, p.get(&name("ln2.gain")), p.get(&name("ln2.bias")))?;
            let f = linear(g, h, p.get(&name("ffn.w1")), p.get(&name("ffn.b1")))?;
            let f = g.gelu(f);
            let f = linear(g, f, p.get(&name("ffn.w2")), p.get(&name("ffn.b2")))?;
            let f = g.dropout(f, drop, rng);
            x = g.add(x, f)?;
        }
        let token_vectors = g.layer_norm(x, p.get("final_ln.gain"), p.get("final_ln.bias"))?;
        let cls_rows: Vec<usize> = (0..b).map(|i| i * t).collect();
        let pooled = g.select_rows(token_vectors, &cls_rows)?;
        Ok(EncoderOutput {
            token_vectors,
            pooled,
            batch: b,
            seq_len: t,
        })
    }

    /// Vocabulary logits for the selected `(sequence, position)` pairs.
    pub fn mlm_logits(
        &self,
        g: &mut Graph,
        p: &Bound<'_>,
        out: &EncoderOutput,
        positions: &[(usize, usize)],
    ) -> Result<Var> {
        let mut rows = Vec::with_capacity(positions.len());
        for &(b, t) in positions {
            if b >= out.batch || t >= out.seq_len {
                return Err(Error::Index(format!(
                    "mlm position ({b},{t}) outside batch {}x{}",
                    out.batch, out.seq_len
                )));
            }
            rows.push(b * out.seq_len + t);
        }
        let h = g.select_rows(out.token_vectors, &rows)?;
        linear(g, h, p.get("mlm.w"), p.get("mlm.b"))
    }

    /// Eval-mode `[CLS]` vectors (not normalized) for already-rendered texts.
    pub fn pooled_vectors(&self, texts: &[String], vocab: &Vocabulary) -> Result<Vec<Vec<f64>>> {
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(texts.len());
        let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(0);
        for chunk in texts.chunks(CHUNK) {
            let seqs: Vec<_> = chunk.iter().map(|s| text::encode(s, vocab)).collect();
            let max_len = seqs.iter().map(|s| s.len()).max().unwrap_or(2);
            let batch = text::pad_batch(&seqs, max_len)?;
            let mut g = Graph::new();
            let bound = self.bind(&mut g, false);
            let o = self.forward(&mut g, &bound, &batch, Mode::Eval, &mut rng)?;
            out.extend(g.value(o.pooled).to_rows());
        }
        Ok(out)
    }
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}
