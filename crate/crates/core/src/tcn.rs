//! Dual-tower temporal convolutional encoder.
//!
//! Each tower is a stack of residual temporal blocks with dilations
//! 1, 2, 4, ... One tower uses a small kernel (short range), the other a
//! large one (long range). With cross-feed enabled, the outputs of both
//! towers at layer `l` are concatenated along channels and that
//! concatenation is the input of *both* towers at layer `l + 1`. The final
//! representation is the channel concatenation of the last layer of every
//! tower. Sequence length is preserved everywhere, so any input length works.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub const CONV_INIT_STD: f64 = 0.01;
pub const EMBEDDING_INIT_STD: f64 = 0.02;
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    /// All padding on the left: position `t` only sees `..=t`.
    Causal,
    /// Padding split around the sequence so each position sees both sides.
    Bidirectional,
}

/// Left/right zero padding that keeps the output length equal to the input
/// length for kernel `k` at dilation `d`.
pub fn pad_amounts(k: usize, d: usize, mode: PaddingMode) -> (usize, usize) {
    let total = k.saturating_sub(1) * d;
    match mode {
        PaddingMode::Causal => (total, 0),
        PaddingMode::Bidirectional => (total.div_ceil(2), total / 2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalBlockConfig {
    pub kernel_size: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub padding: PaddingMode,
    pub dropout: f64,
}

impl TemporalBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0
            || self.dilation == 0
            || self.in_channels == 0
            || self.out_channels == 0
        {
            return Err(Error::InvalidArgument(format!(
                "temporal block sizes must be positive: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} not in [0,1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn has_skip_projection(&self) -> bool {
        self.in_channels != self.out_channels
    }

    pub fn param_count(&self) -> usize {
        let (i, o, k) = (self.in_channels, self.out_channels, self.kernel_size);
        let convs = o * i * k + o + o * o * k + o;
        convs
            + if self.has_skip_projection() {
                o * i + o
            } else {
                0
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TowerRole {
    ShortRange,
    LongRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub role: TowerRole,
    pub layers: Vec<TemporalBlockConfig>,
}

impl TowerConfig {
    pub fn kernel_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.kernel_size).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTowerConfig {
    pub embedding_dim: usize,
    /// Rows of the shared embedding table.
    pub vocab_size: usize,
    pub towers: Vec<TowerConfig>,
    pub cross_feed: bool,
}

/// Shape of a TCN described layer by layer; [`DualTowerConfig::build`]
/// derives the channel wiring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnShape {
    pub embedding_dim: usize,
    pub vocab_size: usize,
    /// One kernel size per tower (1 or 2 towers).
    pub kernels: Vec<usize>,
    /// Filters per layer, shared by every tower.
    pub filters: Vec<usize>,
    /// Dilation per layer; `None` means 1, 2, 4, ...
    #[serde(default)]
    pub dilations: Option<Vec<usize>>,
    pub padding: PaddingMode,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}

impl DualTowerConfig {
    /// Wires towers from a [`TcnShape`]: layer 1 reads the embedding, later
    /// layers read the concatenation of all towers' previous outputs.
    pub fn build(shape: &TcnShape) -> Result<Self> {
        let n_towers = shape.kernels.len();
        if !(1..=2).contains(&n_towers) {
            return Err(Error::InvalidArgument(format!(
                "expected 1 or 2 towers, got {n_towers}"
            )));
        }
        let depth = shape.filters.len();
        let dilations: Vec<usize> = match &shape.dilations {
            Some(d) if d.len() != depth => {
                return Err(Error::InvalidArgument(format!(
                    "{} dilations for {depth} layers",
                    d.len()
                )))
            }
            Some(d) => d.clone(),
            None => (0..depth).map(|l| 1usize << l).collect(),
        };
        let cross_feed = n_towers == 2;
        let roles = match shape.kernels.as_slice() {
            [a, b] if a > b => [TowerRole::LongRange, TowerRole::ShortRange],
            [_, _] => [TowerRole::ShortRange, TowerRole::LongRange],
            _ => [TowerRole::LongRange; 2],
        };
        let towers = shape
            .kernels
            .iter()
            .zip(roles)
            .map(|(&k, role)| {
                let mut layers = Vec::with_capacity(depth);
                let mut in_ch = shape.embedding_dim;
                for l in 0..depth {
                    layers.push(TemporalBlockConfig {
                        kernel_size: k,
                        dilation: dilations[l],
                        in_channels: in_ch,
                        out_channels: shape.filters[l],
                        padding: shape.padding,
                        dropout: shape.dropout,
                    });
                    in_ch = if cross_feed {
                        shape.filters[l] * n_towers
                    } else {
                        shape.filters[l]
                    };
                }
                TowerConfig { role, layers }
            })
            .collect();
        let cfg = Self {
            embedding_dim: shape.embedding_dim,
            vocab_size: shape.vocab_size,
            towers,
            cross_feed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_layers(&self) -> usize {
        self.towers.first().map_or(0, |t| t.layers.len())
    }

    /// Channels of the final representation.
    pub fn out_channels(&self) -> usize {
        if self.num_layers() == 0 {
            return self.embedding_dim;
        }
        self.towers
            .iter()
            .filter_map(|t| t.layers.last())
            .map(|l| l.out_channels)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.vocab_size == 0 {
            return Err(Error::InvalidArgument(
                "embedding dim and vocabulary must be positive".into(),
            ));
        }
        if !(1..=2).contains(&self.towers.len()) {
            return Err(Error::InvalidArgument(format!(
                "expected 1 or 2 towers, got {}",
                self.towers.len()
            )));
        }
        if self.cross_feed && self.towers.len() != 2 {
            return Err(Error::InvalidArgument("cross-feed needs two towers".into()));
        }
        let depth = self.num_layers();
        if self.towers.iter().any(|t| t.layers.len() != depth) {
            return Err(Error::InvalidArgument(
                "towers must have the same number of layers".into(),
            ));
        }
        for (ti, tower) in self.towers.iter().enumerate() {
            for (l, layer) in tower.layers.iter().enumerate() {
                layer.validate()?;
                let expect = if l == 0 {
                    self.embedding_dim
                } else if self.cross_feed {
                    self.towers
                        .iter()
                        .map(|t| t.layers[l - 1].out_channels)
                        .sum()
                } else {
                    tower.layers[l - 1].out_channels
                };
                if layer.in_channels != expect {
                    return Err(Error::InvalidArgument(format!(
                        "tower {ti} layer {l} expects {} input channels but receives {expect}",
                        layer.in_channels
                    )));
                }
            }
        }
        Ok(())
    }

    /// Scalar parameters, including the embedding table.
    pub fn param_count(&self) -> usize {
        self.vocab_size * self.embedding_dim
            + self
                .towers
                .iter()
                .flat_map(|t| t.layers.iter())
                .map(TemporalBlockConfig::param_count)
                .sum::<usize>()
    }
}

/// Receptive-field table of a [`DualTowerConfig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceptiveField {
    /// `per_layer[l][t]`: input positions that can influence one output
    /// position of tower `t` after layer `l`.
    pub per_layer: Vec<Vec<usize>>,
    /// Receptive field of the final (concatenated) representation.
    pub total: usize,
}

/// Analytic receptive field. Each block adds `2 (k - 1) d`; with cross-feed
/// both towers continue from the larger of their layer outputs.
pub fn receptive_field(cfg: &DualTowerConfig) -> ReceptiveField {
    let n = cfg.towers.len();
    let mut inputs = vec![1usize; n];
    let mut per_layer = Vec::with_capacity(cfg.num_layers());
    for l in 0..cfg.num_layers() {
        let outs: Vec<usize> = cfg
            .towers
            .iter()
            .zip(&inputs)
            .map(|(t, &rf)| {
                let b = &t.layers[l];
                rf + 2 * (b.kernel_size - 1) * b.dilation
            })
            .collect();
        inputs = if cfg.cross_feed {
            vec![*outs.iter().max().unwrap(); n]
        } else {
            outs.clone()
        };
        per_layer.push(outs);
    }
    let total = per_layer.last().map_or(1, |o| *o.iter().max().unwrap());
    ReceptiveField { per_layer, total }
}

/// Residual block: two (conv, ReLU, dropout) sublayers plus a skip path.
#[derive(Debug, Clone)]
pub struct TemporalBlock {
    pub cfg: TemporalBlockConfig,
    conv1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    skip: Option<(ParamId, ParamId)>,
}

impl TemporalBlock {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        prefix: &str,
        cfg: TemporalBlockConfig,
        rng: &mut R,
    ) -> Self {
        let (i, o, k) = (cfg.in_channels, cfg.out_channels, cfg.kernel_size);
        let conv1 = (
            store.add_normal(
                &format!("{prefix}.conv1.weight"),
                &[o, i, k],
                CONV_INIT_STD,
                rng,
            ),
            store.add_constant(&format!("{prefix}.conv1.bias"), &[o], 0.0),
        );
        let conv2 = (
            store.add_normal(
                &format!("{prefix}.conv2.weight"),
                &[o, o, k],
                CONV_INIT_STD,
                rng,
            ),
            store.add_constant(&format!("{prefix}.conv2.bias"), &[o], 0.0),
        );
        let skip = cfg.has_skip_projection().then(|| {
            (
                store.add_normal(
                    &format!("{prefix}.skip.weight"),
                    &[o, i, 1],
                    CONV_INIT_STD,
                    rng,
                ),
                store.add_constant(&format!("{prefix}.skip.bias"), &[o], 0.0),
            )
        });
        Self {
            cfg,
            conv1,
            conv2,
            skip,
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let c = &self.cfg;
        if tape.shape(x).first() != Some(&c.in_channels) {
            return Err(Error::Shape(format!(
                "temporal block expects {} channels, got {:?}",
                c.in_channels,
                tape.shape(x)
            )));
        }
        let pad = pad_amounts(c.kernel_size, c.dilation, c.padding);
        let mut h = x;
        for (w, b) in [self.conv1, self.conv2] {
            let (w, b) = (tape.param(w), tape.param(b));
            h = tape.conv1d(h, w, Some(b), c.dilation, pad)?;
            h = tape.relu(h)?;
            h = tape.dropout(h, c.dropout)?;
        }
        let residual = match self.skip {
            Some((w, b)) => {
                let (w, b) = (tape.param(w), tape.param(b));
                tape.conv1d(x, w, Some(b), 1, (0, 0))?
            }
            None => x,
        };
        tape.add(h, residual)
    }
}

/// The encoder: shared embedding table followed by one or two towers.
#[derive(Debug, Clone)]
pub struct DualTowerEncoder {
    cfg: DualTowerConfig,
    embedding: ParamId,
    towers: Vec<Vec<TemporalBlock>>,
}

impl DualTowerEncoder {
    pub fn new<S: Scalar, R: Rng>(
        cfg: DualTowerConfig,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let embedding = store.add_normal(
            "embedding.weight",
            &[cfg.vocab_size, cfg.embedding_dim],
            EMBEDDING_INIT_STD,
            rng,
        );
        let towers = cfg
            .towers
            .iter()
            .enumerate()
            .map(|(t, tower)| {
                tower
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(l, &layer)| {
                        TemporalBlock::new(store, &format!("tcn.tower{t}.layer{l}"), layer, rng)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            cfg,
            embedding,
            towers,
        })
    }

    pub fn config(&self) -> &DualTowerConfig {
        &self.cfg
    }

    pub fn embedding(&self) -> ParamId {
        self.embedding
    }

    pub fn out_channels(&self) -> usize {
        self.cfg.out_channels()
    }

    /// Encodes token ids into `[C_final, T]`.
    pub fn encode<S: Scalar>(&self, tape: &mut Tape<'_, S>, ids: &[usize]) -> Result<Var> {
        let layers = self.forward_layers(tape, ids, None)?;
        match layers.last() {
            Some(last) if last.len() == 1 => Ok(last[0]),
            Some(last) => tape.concat(last),
            None => {
                let table = tape.param(self.embedding);
                tape.embed(table, ids)
            }
        }
    }

    /// Runs every layer and returns `outputs[layer][tower]`. When `zero` is
    /// `Some((tower, layer))`, that block's output is replaced by zeros before
    /// it feeds anything downstream.
    pub fn forward_layers<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        ids: &[usize],
        zero: Option<(usize, usize)>,
    ) -> Result<Vec<Vec<Var>>> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        let table = tape.param(self.embedding);
        let emb = tape.embed(table, ids)?;
        let n = self.towers.len();
        let mut inputs = vec![emb; n];
        let mut outputs = Vec::with_capacity(self.cfg.num_layers());
        for l in 0..self.cfg.num_layers() {
            let mut outs = Vec::with_capacity(n);
            for t in 0..n {
                let mut y = self.towers[t][l].forward(tape, inputs[t])?;
                if zero == Some((t, l)) {
                    y = tape.scale(y, S::zero())?;
                }
                outs.push(y);
            }
            inputs = if self.cfg.cross_feed {
                let joined = tape.concat(&outs)?;
                vec![joined; n]
            } else {
                outs.clone()
            };
            outputs.push(outs);
        }
        Ok(outputs)
    }
}
