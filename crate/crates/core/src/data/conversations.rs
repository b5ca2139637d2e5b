//! Conversations with a planted conversation label and planted utterance
//! actions.
//!
//! Tokens below [`PatternTable::reserved`] are pattern tokens. Conversation
//! class `c` is the keyword bigram `(2c, 2c+1)`; utterance label `l` is the
//! trigram starting at `2*K_conv + 3l`. Filler is drawn only from the
//! remaining ids, so a pattern occurs exactly where it was planted and the
//! scanning oracles are exact.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use super::{example_rng, lognormal_params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Agent,
    Customer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub tokens: Vec<u32>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub conv_label: usize,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    /// Encoded length: utterance tokens plus one speaker token per utterance.
    pub fn encoded_len(&self) -> usize {
        self.utterances.iter().map(|u| u.tokens.len() + 1).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// 80/10/10 split by FNV-1a hash of the conversation id.
pub fn split_of(id: &str) -> Split {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    match h % 10 {
        0..=7 => Split::Train,
        8 => Split::Valid,
        _ => Split::Test,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_conversations: usize,
    pub k_conv: usize,
    pub k_utt: usize,
    pub vocab_size: usize,
    /// Mean and standard deviation of the encoded length.
    pub mean_len: f64,
    pub sd_len: f64,
    /// Conversations longer than this are never produced.
    pub max_len: usize,
    /// Inclusive range of utterance token counts, speaker token excluded.
    pub min_utt_len: usize,
    pub max_utt_len: usize,
    /// How many times the conversation keyword is planted.
    pub keyword_copies: usize,
    /// Probability that an utterance carries at least one action.
    pub action_rate: f64,
    pub max_actions_per_utt: usize,
    /// Zipf exponent of both label distributions (0 = uniform).
    pub zipf_exponent: f64,
    /// Per-filler-position probability of a lone pattern-start token.
    pub decoy_rate: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_conversations: 1000,
            k_conv: 10,
            k_utt: 30,
            vocab_size: 256,
            mean_len: 252.0,
            sd_len: 92.0,
            max_len: 4096,
            min_utt_len: 8,
            max_utt_len: 24,
            keyword_copies: 1,
            action_rate: 0.3,
            max_actions_per_utt: 2,
            zipf_exponent: 0.5,
            decoy_rate: 0.0,
        }
    }
}

/// Token ids of the planted patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternTable {
    pub k_conv: usize,
    pub k_utt: usize,
}

impl PatternTable {
    pub fn keyword(&self, class: usize) -> [u32; 2] {
        [2 * class as u32, 2 * class as u32 + 1]
    }

    pub fn action(&self, label: usize) -> [u32; 3] {
        let s = (2 * self.k_conv + 3 * label) as u32;
        [s, s + 1, s + 2]
    }

    /// Number of ids reserved for patterns; filler uses ids at or above it.
    pub fn reserved(&self) -> usize {
        2 * self.k_conv + 3 * self.k_utt
    }
}

impl GeneratorSpec {
    pub fn patterns(&self) -> PatternTable {
        PatternTable {
            k_conv: self.k_conv,
            k_utt: self.k_utt,
        }
    }

    /// Shortest utterance that can hold every plant at once.
    pub fn plant_len(&self) -> usize {
        2 * self.keyword_copies.min(1) + 3 * self.max_actions_per_utt
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_conv < 2 || self.k_utt == 0 {
            return Err(Error::InvalidArgument(
                "need k_conv >= 2 and k_utt >= 1".into(),
            ));
        }
        if self.vocab_size <= self.patterns().reserved() {
            return Err(Error::Infeasible(format!(
                "vocab_size {} leaves no filler tokens after {} pattern tokens",
                self.vocab_size,
                self.patterns().reserved()
            )));
        }
        if self.min_utt_len == 0 || self.min_utt_len > self.max_utt_len {
            return Err(Error::InvalidArgument(
                "need 1 <= min_utt_len <= max_utt_len".into(),
            ));
        }
        if self.keyword_copies == 0 {
            return Err(Error::InvalidArgument(
                "keyword_copies must be at least 1".into(),
            ));
        }
        if self.plant_len() > self.min_utt_len {
            return Err(Error::Infeasible(format!(
                "plants need {} tokens but utterances may have only {}",
                self.plant_len(),
                self.min_utt_len
            )));
        }
        if self.min_utt_len + 1 > self.max_len {
            return Err(Error::Infeasible(format!(
                "max_len {} cannot hold one utterance of {} tokens",
                self.max_len, self.min_utt_len
            )));
        }
        if !(self.mean_len > 0.0 && self.sd_len >= 0.0) {
            return Err(Error::InvalidArgument(
                "length mean must be positive and sd non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.action_rate) || !(0.0..=1.0).contains(&self.decoy_rate) {
            return Err(Error::InvalidArgument("rates must lie in [0,1]".into()));
        }
        if self.zipf_exponent < 0.0 {
            return Err(Error::InvalidArgument(
                "zipf_exponent must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn zipf(n: usize, s: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| Float::powf(r as f64, -s))).expect("positive weights")
}

/// Generates the corpus; conversation `i` depends only on `(seed, i)`.
pub fn gen_conversations(spec: &GeneratorSpec) -> Result<Vec<Conversation>> {
    spec.validate()?;
    let conv_dist = zipf(spec.k_conv, spec.zipf_exponent);
    let act_dist = zipf(spec.k_utt, spec.zipf_exponent);
    let (mu, sigma) = lognormal_params(spec.mean_len, spec.sd_len.max(1e-9));
    let len_dist = LogNormal::new(mu, sigma).map_err(|e| Error::InvalidArgument(format!("{e}")))?;
    let min_total = spec.min_utt_len + 1;
    Ok((0..spec.n_conversations)
        .map(|i| {
            let mut rng = example_rng(spec.seed, i as u64);
            let target = loop {
                let l = Float::round(len_dist.sample(&mut rng)) as usize;
                if l <= spec.max_len {
                    break l.max(min_total);
                }
            };
            one_conversation(
                spec,
                &conv_dist,
                &act_dist,
                target,
                &mut rng,
                format!("conv-{}-{i:06}", spec.seed),
            )
        })
        .collect())
}

fn utterance_lengths<R: Rng>(spec: &GeneratorSpec, target: usize, rng: &mut R) -> Vec<usize> {
    let mut lens = Vec::new();
    let mut used = 0;
    while used + 1 + spec.min_utt_len <= target {
        let l = rng
            .random_range(spec.min_utt_len..=spec.max_utt_len)
            .min(target - used - 1);
        lens.push(l);
        used += l + 1;
    }
    lens
}

fn one_conversation<R: Rng>(
    spec: &GeneratorSpec,
    conv_dist: &WeightedIndex<f64>,
    act_dist: &WeightedIndex<f64>,
    target: usize,
    rng: &mut R,
    id: String,
) -> Conversation {
    let pats = spec.patterns();
    let filler_lo = pats.reserved() as u32;
    let filler_hi = spec.vocab_size as u32;
    let conv_label = conv_dist.sample(rng);
    let lens = utterance_lengths(spec, target, rng);
    let mut speaker = if rng.random_bool(0.5) {
        Speaker::Customer
    } else {
        Speaker::Agent
    };

    // Which utterances receive the keyword copies.
    let mut keyword_slots = vec![0usize; lens.len()];
    for _ in 0..spec.keyword_copies {
        keyword_slots[rng.random_range(0..lens.len())] += 1;
    }

    let mut utterances = Vec::with_capacity(lens.len());
    for (u, &len) in lens.iter().enumerate() {
        let mut plants: Vec<Vec<u32>> = Vec::new();
        for _ in 0..keyword_slots[u] {
            plants.push(pats.keyword(conv_label).to_vec());
        }
        let mut labels = Vec::new();
        if rng.random_bool(spec.action_rate) {
            let n = rng.random_range(1..=spec.max_actions_per_utt);
            while labels.len() < n {
                let l = act_dist.sample(rng);
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
            labels.sort_unstable();
        }
        for &l in &labels {
            plants.push(pats.action(l).to_vec());
        }
        // Drop keyword copies that do not fit; the first copy always fits.
        while plants.iter().map(Vec::len).sum::<usize>() > len {
            plants.remove(1);
        }
        plants.shuffle(rng);
        let tokens = place(len, plants, spec, filler_lo, filler_hi, rng);
        utterances.push(Utterance {
            speaker,
            tokens,
            labels,
        });
        speaker = match speaker {
            Speaker::Agent => Speaker::Customer,
            Speaker::Customer => Speaker::Agent,
        };
    }
    Conversation {
        id,
        conv_label,
        utterances,
    }
}

/// Lays out `plants` in order at random gaps inside `len` tokens of filler.
fn place<R: Rng>(
    len: usize,
    plants: Vec<Vec<u32>>,
    spec: &GeneratorSpec,
    lo: u32,
    hi: u32,
    rng: &mut R,
) -> Vec<u32> {
    let planted: usize = plants.iter().map(Vec::len).sum();
    let free = len - planted;
    // Split the free budget into plants.len()+1 gaps.
    let mut cuts: Vec<usize> = (0..plants.len())
        .map(|_| rng.random_range(0..=free))
        .collect();
    cuts.sort_unstable();
    let pats = spec.patterns();
    let filler = |rng: &mut R| -> u32 {
        if spec.decoy_rate > 0.0 && rng.random_bool(spec.decoy_rate) {
            // A lone first token of a keyword or action never completes a pattern.
            if rng.random_bool(0.5) {
                pats.keyword(rng.random_range(0..spec.k_conv))[0]
            } else {
                pats.action(rng.random_range(0..spec.k_utt))[0]
            }
        } else {
            rng.random_range(lo..hi)
        }
    };
    let mut out = Vec::with_capacity(len);
    let mut prev = 0;
    for (cut, plant) in cuts.iter().zip(plants) {
        for _ in prev..*cut {
            out.push(filler(rng));
        }
        out.extend_from_slice(&plant);
        prev = *cut;
    }
    for _ in prev..free {
        out.push(filler(rng));
    }
    out
}

fn contains(hay: &[u32], needle: &[u32]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

/// Conversation class recovered by scanning for keyword bigrams.
pub fn conversation_oracle(conv: &Conversation, pats: &PatternTable) -> Option<usize> {
    (0..pats.k_conv).find(|&c| {
        conv.utterances
            .iter()
            .any(|u| contains(&u.tokens, &pats.keyword(c)))
    })
}

/// Action labels recovered by scanning one utterance for action trigrams.
pub fn utterance_oracle(tokens: &[u32], pats: &PatternTable) -> Vec<usize> {
    (0..pats.k_utt)
        .filter(|&l| contains(tokens, &pats.action(l)))
        .collect()
}
