//! Full self-attention encoder used as the cost and quality reference.
//!
//! Token plus learned absolute position embeddings, then a pre-norm stack of
//! multi-head attention and ReLU feed-forward sublayers. The position table
//! has a fixed size, so inputs longer than `max_len` are rejected.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.vocab_size == 0 || self.max_len == 0 || self.ff_dim == 0 {
            return Err(Error::InvalidArgument(
                "vocab_size, max_len and ff_dim must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} not in [0,1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn param_count(&self) -> usize {
        let d = self.model_dim;
        let per_layer = 4 * (d * d + d) + 2 * d * self.ff_dim + self.ff_dim + d + 4 * d;
        self.vocab_size * d + self.max_len * d + self.layers * per_layer + 2 * d
    }
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

impl Affine {
    fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        d_out: usize,
        d_in: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.add_normal(&format!("{name}.weight"), &[d_out, d_in], INIT_STD, rng),
            b: store.add_constant(&format!("{name}.bias"), &[d_out], 0.0),
        }
    }

    fn apply<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        tape.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, d: usize) -> Self {
        Self {
            gamma: store.add_constant(&format!("{name}.gamma"), &[d], 1.0),
            beta: store.add_constant(&format!("{name}.beta"), &[d], 0.0),
        }
    }

    fn apply<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let (g, b) = (tape.param(self.gamma), tape.param(self.beta));
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Projections of one multi-head attention sublayer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionLayer {
    query: Affine,
    key: Affine,
    value: Affine,
    output: Affine,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    norm1: Norm,
    attn: AttentionLayer,
    norm2: Norm,
    ff1: Affine,
    ff2: Affine,
}

/// Output of [`AttentionEncoder::self_attention`].
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `[T, D]`
    pub output: Var,
    /// One `[T, T]` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct AttentionEncoder {
    cfg: AttentionConfig,
    token_embedding: ParamId,
    position_embedding: ParamId,
    layers: Vec<EncoderLayer>,
    final_norm: Norm,
}

impl AttentionEncoder {
    pub fn new<S: Scalar, R: Rng>(
        cfg: AttentionConfig,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let token_embedding =
            store.add_normal("embedding.weight", &[cfg.vocab_size, d], INIT_STD, rng);
        let position_embedding =
            store.add_normal("position.weight", &[cfg.max_len, d], INIT_STD, rng);
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("attn.layer{l}");
                EncoderLayer {
                    norm1: Norm::new(store, &format!("{p}.norm1"), d),
                    attn: AttentionLayer {
                        query: Affine::new(store, &format!("{p}.query"), d, d, rng),
                        key: Affine::new(store, &format!("{p}.key"), d, d, rng),
                        value: Affine::new(store, &format!("{p}.value"), d, d, rng),
                        output: Affine::new(store, &format!("{p}.output"), d, d, rng),
                    },
                    norm2: Norm::new(store, &format!("{p}.norm2"), d),
                    ff1: Affine::new(store, &format!("{p}.ff1"), cfg.ff_dim, d, rng),
                    ff2: Affine::new(store, &format!("{p}.ff2"), d, cfg.ff_dim, rng),
                }
            })
            .collect();
        let final_norm = Norm::new(store, "attn.final_norm", d);
        Ok(Self {
            cfg,
            token_embedding,
            position_embedding,
            layers,
            final_norm,
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    pub fn embedding(&self) -> ParamId {
        self.token_embedding
    }

    pub fn out_channels(&self) -> usize {
        self.cfg.model_dim
    }

    /// Attention sublayer `layer` of the stack.
    pub fn layer(&self, layer: usize) -> Option<AttentionLayer> {
        self.layers.get(layer).map(|l| l.attn)
    }

    /// Multi-head scaled dot-product attention over `x: [T, D]`, unmasked.
    pub fn self_attention<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        x: Var,
        layer: &AttentionLayer,
    ) -> Result<AttentionOutput> {
        let t = tape.shape(x)[0];
        if t > self.cfg.max_len {
            return Err(Error::SequenceTooLong {
                len: t,
                max: self.cfg.max_len,
            });
        }
        let dh = self.cfg.head_dim();
        let q = layer.query.apply(tape, x)?;
        let q = tape.scale(q, S::of(1.0 / (dh as f64).sqrt()))?;
        let k = layer.key.apply(tape, x)?;
        let v = layer.value.apply(tape, x)?;
        let mut heads = Vec::with_capacity(self.cfg.heads);
        let mut weights = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let p = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(p, vh)?);
            weights.push(p);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let output = layer.output.apply(tape, joined)?;
        Ok(AttentionOutput { output, weights })
    }

    /// Token plus position embeddings as `[T, D]`.
    pub fn embed<S: Scalar>(&self, tape: &mut Tape<'_, S>, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        if ids.len() > self.cfg.max_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: self.cfg.max_len,
            });
        }
        let tok_table = tape.param(self.token_embedding);
        let tok = tape.embed(tok_table, ids)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos_table = tape.param(self.position_embedding);
        let pos = tape.embed(pos_table, &positions)?;
        let sum = tape.add(tok, pos)?;
        tape.transpose(sum)
    }

    /// Encodes token ids into `[D, T]` (channel-major, like the TCN encoder).
    pub fn encode<S: Scalar>(&self, tape: &mut Tape<'_, S>, ids: &[usize]) -> Result<Var> {
        let mut x = self.embed(tape, ids)?;
        let p = self.cfg.dropout;
        for layer in &self.layers {
            let h = layer.norm1.apply(tape, x)?;
            let a = self.self_attention(tape, h, &layer.attn)?.output;
            let a = tape.dropout(a, p)?;
            x = tape.add(x, a)?;
            let h = layer.norm2.apply(tape, x)?;
            let f = layer.ff1.apply(tape, h)?;
            let f = tape.relu(f)?;
            let f = layer.ff2.apply(tape, f)?;
            let f = tape.dropout(f, p)?;
            x = tape.add(x, f)?;
        }
        let x = self.final_norm.apply(tape, x)?;
        tape.transpose(x)
    }
}
