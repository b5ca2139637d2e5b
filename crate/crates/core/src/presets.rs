//! Named encoder configurations.

use alloc::vec;

use crate::attention::AttentionConfig;
use crate::tcn::{PaddingMode, TcnShape, DEFAULT_DROPOUT};

/// Embedding width used for the byte-level LRA configurations.
pub const LRA_EMBEDDING_DIM: usize = 64;
/// Byte vocabulary.
pub const BYTE_VOCAB: usize = 256;
/// Kernel sizes of the retrieval kernel sweep.
pub const ABLATION_KERNELS: [usize; 6] = [17, 21, 65, 129, 257, 513];

fn dual(
    vocab_size: usize,
    embedding_dim: usize,
    kernels: [usize; 2],
    filters: &[usize],
) -> TcnShape {
    TcnShape {
        embedding_dim,
        vocab_size,
        kernels: kernels.to_vec(),
        filters: filters.to_vec(),
        dilations: None,
        padding: PaddingMode::Bidirectional,
        dropout: DEFAULT_DROPOUT,
    }
}

/// k = 11 / 15, filters 128, 256, 512, 1024, dilations 1, 2, 4, 8.
pub fn cnn_large(vocab_size: usize, embedding_dim: usize) -> TcnShape {
    dual(vocab_size, embedding_dim, [11, 15], &[128, 256, 512, 1024])
}

/// k = 5 / 11, filters 48, 96, 192, 384, dilations 1, 2, 4, 8.
pub fn cnn_small(vocab_size: usize, embedding_dim: usize) -> TcnShape {
    dual(vocab_size, embedding_dim, [5, 11], &[48, 96, 192, 384])
}

/// Byte-level text and ListOps: two towers, three layers, k = 9 / 13,
/// filters 8, 16, 32.
pub fn lra_text() -> TcnShape {
    dual(BYTE_VOCAB, LRA_EMBEDDING_DIM, [9, 13], &[8, 16, 32])
}

/// Retrieval: one long-range tower with two layers. Filters and dilations
/// follow the kernel sweep table.
pub fn retrieval(kernel_size: usize) -> TcnShape {
    let filters = if kernel_size <= 17 {
        vec![32, 48]
    } else {
        vec![32, 64]
    };
    let dilations = if kernel_size >= 257 {
        vec![2, 4]
    } else {
        vec![1, 2]
    };
    TcnShape {
        embedding_dim: LRA_EMBEDDING_DIM,
        vocab_size: BYTE_VOCAB,
        kernels: vec![kernel_size],
        filters,
        dilations: Some(dilations),
        padding: PaddingMode::Bidirectional,
        dropout: DEFAULT_DROPOUT,
    }
}

/// Full-attention reference for the byte-level tasks.
pub fn attention_lra(max_len: usize) -> AttentionConfig {
    AttentionConfig {
        vocab_size: BYTE_VOCAB,
        layers: 2,
        model_dim: 64,
        heads: 2,
        ff_dim: 128,
        max_len,
        dropout: DEFAULT_DROPOUT,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flops::count_flops;
    use crate::tcn::DualTowerConfig;

    #[test]
    fn lra_costs_at_4096() {
        let cnn = count_flops(&DualTowerConfig::build(&lra_text()).unwrap(), 4096);
        let att = count_flops(&attention_lra(4096), 4096);
        assert!((cnn - 0.287).abs() < 0.01, "{cnn}");
        assert!((att - 4.56).abs() < 0.05, "{att}");
    }

    #[test]
    fn large_has_2048_output_channels() {
        let cfg = DualTowerConfig::build(&cnn_large(100, 32)).unwrap();
        assert_eq!(cfg.out_channels(), 2048);
        let small = DualTowerConfig::build(&cnn_small(100, 32)).unwrap();
        assert!(2 * small.param_count() < cfg.param_count());
    }
}
