//! Synthetic tasks with exact labeling oracles, plus batching.
//!
//! Every generator is a pure function of its spec. Example `i` draws from its
//! own RNG seeded by [`derive_seed`], so examples can be produced in any order
//! or in parallel without changing the corpus.

mod batch;
mod conversations;
mod listops;
mod retrieval;
mod text;

pub use batch::{decode_batch, encode_batch, encode_conversation, TaskBatch, TokenLayout};
pub use conversations::{
    conversation_oracle, gen_conversations, split_of, utterance_oracle, Conversation,
    GeneratorSpec, PatternTable, Speaker, Split, Utterance,
};
pub use listops::{eval_listops, gen_listops, ListOpsExample, ListOpsSpec, LISTOPS_OPS};
pub use retrieval::{gen_retrieval, retrieval_oracle, topic_of, RetrievalPair, RetrievalSpec};
pub use text::{gen_text_bytes, text_oracle, TextExample, TextRules};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed of example `index` under corpus seed `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        ^ index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn example_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

/// Parameters of a log-normal distribution with the given mean and standard
/// deviation.
pub(crate) fn lognormal_params(mean: f64, sd: f64) -> (f64, f64) {
    use num_traits::Float;
    let sigma2 = Float::ln(1.0 + (sd * sd) / (mean * mean));
    (Float::ln(mean) - sigma2 / 2.0, Float::sqrt(sigma2))
}

/// Byte alphabet used for filler text: lowercase letters and space.
pub(crate) const FILLER_BYTES: &[u8] = b"abcdefghijklmnopqrstuvwxyz ";
