//! Byte sequences labeled by the presence of short motifs.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{example_rng, lognormal_params, FILLER_BYTES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextExample {
    pub bytes: Vec<u8>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextRules {
    /// Label 1 iff any motif occurs. Motif bytes never appear in filler.
    pub motifs: Vec<Vec<u8>>,
    pub mean_len: f64,
    pub sd_len: f64,
    pub max_len: usize,
    pub positive_rate: f64,
}

impl Default for TextRules {
    fn default() -> Self {
        Self {
            motifs: alloc::vec![b"<+>".to_vec(), b"%&%".to_vec()],
            mean_len: 1296.0,
            sd_len: 893.0,
            max_len: 4096,
            positive_rate: 0.5,
        }
    }
}

/// Label by substring scan.
pub fn text_oracle(bytes: &[u8], rules: &TextRules) -> u8 {
    rules
        .motifs
        .iter()
        .any(|m| !m.is_empty() && bytes.windows(m.len()).any(|w| w == m.as_slice())) as u8
}

pub fn gen_text_bytes(seed: u64, n: usize, rules: &TextRules) -> Result<Vec<TextExample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let motifs: Vec<&Vec<u8>> = rules.motifs.iter().filter(|m| !m.is_empty()).collect();
    let filler: Vec<u8> = FILLER_BYTES
        .iter()
        .copied()
        .filter(|b| !motifs.iter().any(|m| m.contains(b)))
        .collect();
    if filler.is_empty() {
        return Err(Error::Infeasible("motifs use every filler byte".into()));
    }
    let longest = motifs.iter().map(|m| m.len()).max().unwrap_or(0);
    if rules.max_len == 0 || longest > rules.max_len {
        return Err(Error::Infeasible(format!(
            "motif of length {longest} does not fit max_len {}",
            rules.max_len
        )));
    }
    let (mu, sigma) = lognormal_params(rules.mean_len, rules.sd_len.max(1e-9));
    let dist = LogNormal::new(mu, sigma).map_err(|e| Error::InvalidArgument(format!("{e}")))?;
    Ok((0..n)
        .map(|i| {
            let mut rng = example_rng(seed, i as u64);
            let len = loop {
                let l = Float::round(dist.sample(&mut rng)) as usize;
                if l <= rules.max_len {
                    break l.max(longest).max(1);
                }
            };
            let mut bytes: Vec<u8> = (0..len)
                .map(|_| filler[rng.random_range(0..filler.len())])
                .collect();
            let positive = !motifs.is_empty() && rng.random_bool(rules.positive_rate);
            if positive {
                let m = motifs[rng.random_range(0..motifs.len())];
                let at = rng.random_range(0..=len - m.len());
                bytes[at..at + m.len()].copy_from_slice(m);
            }
            TextExample {
                bytes,
                label: positive as u8,
            }
        })
        .collect())
}
