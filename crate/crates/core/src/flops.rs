//! Analytic cost in multiply-accumulates (one MAC counted as one FLOP).
//!
//! Counts cover a single forward pass of the encoder. Bias additions,
//! nonlinearities, normalization, pooling and embedding lookups are free.

use crate::attention::AttentionConfig;
use crate::tcn::{DualTowerConfig, TemporalBlockConfig};

/// `T_out * C_out * C_in * k`.
pub fn conv_macs(t_out: usize, c_in: usize, c_out: usize, k: usize) -> u64 {
    t_out as u64 * c_out as u64 * c_in as u64 * k as u64
}

/// `T * D_in * D_out`.
pub fn affine_macs(t: usize, d_in: usize, d_out: usize) -> u64 {
    t as u64 * d_in as u64 * d_out as u64
}

/// Two convolutions plus the 1x1 skip projection when channels change.
pub fn block_macs(cfg: &TemporalBlockConfig, t: usize) -> u64 {
    let (i, o, k) = (cfg.in_channels, cfg.out_channels, cfg.kernel_size);
    let skip = if cfg.has_skip_projection() {
        conv_macs(t, i, o, 1)
    } else {
        0
    };
    conv_macs(t, i, o, k) + conv_macs(t, o, o, k) + skip
}

/// `2 * T^2 * D`: query-key scores plus the weighted sum of values.
pub fn attention_score_macs(cfg: &AttentionConfig, t: usize) -> u64 {
    2 * t as u64 * t as u64 * cfg.model_dim as u64
}

/// `4 T D^2 + 2 T^2 D + 2 T D D_ff`.
pub fn attention_layer_macs(cfg: &AttentionConfig, t: usize) -> u64 {
    let d = cfg.model_dim;
    4 * affine_macs(t, d, d) + attention_score_macs(cfg, t) + 2 * affine_macs(t, d, cfg.ff_dim)
}

/// Anything with an analytic per-forward cost at sequence length `T`.
pub trait CostModel {
    fn macs(&self, t: usize) -> u64;
}

impl CostModel for DualTowerConfig {
    fn macs(&self, t: usize) -> u64 {
        self.towers
            .iter()
            .flat_map(|tower| tower.layers.iter())
            .map(|b| block_macs(b, t))
            .sum()
    }
}

impl CostModel for AttentionConfig {
    fn macs(&self, t: usize) -> u64 {
        self.layers as u64 * attention_layer_macs(self, t)
    }
}

pub fn giga(macs: u64) -> f64 {
    macs as f64 / 1e9
}

/// Forward cost in giga-MACs.
pub fn count_flops<M: CostModel + ?Sized>(model: &M, t: usize) -> f64 {
    giga(model.macs(t))
}
