//! Document pairs that match iff they share a topic signature.
//!
//! A topic signature is a set of uppercase bytes scattered across the whole
//! document; filler is lowercase text. Deciding a match requires aggregating
//! evidence from both ends of each document.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, example_rng, FILLER_BYTES};
use crate::error::{Error, Result};

const SIGNATURE_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalPair {
    pub bytes_a: Vec<u8>,
    pub bytes_b: Vec<u8>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSpec {
    pub doc_len: usize,
    pub n_topics: usize,
    pub signature_len: usize,
}

impl Default for RetrievalSpec {
    fn default() -> Self {
        Self {
            doc_len: 4000,
            n_topics: 16,
            signature_len: 4,
        }
    }
}

impl RetrievalSpec {
    /// Distinct sorted signatures, one per topic, fixed by `seed`.
    pub fn signatures(&self, seed: u64) -> Result<Vec<Vec<u8>>> {
        if self.signature_len < 2 || self.signature_len > SIGNATURE_ALPHABET.len() {
            return Err(Error::InvalidArgument(format!(
                "signature_len must be in 2..={}",
                SIGNATURE_ALPHABET.len()
            )));
        }
        if self.n_topics < 2 {
            return Err(Error::InvalidArgument("need at least two topics".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
        let mut out: Vec<Vec<u8>> = Vec::with_capacity(self.n_topics);
        let mut attempts = 0;
        while out.len() < self.n_topics {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Infeasible("not enough distinct signatures".into()));
            }
            let mut sig: Vec<u8> = SIGNATURE_ALPHABET
                .choose_multiple(&mut rng, self.signature_len)
                .copied()
                .collect();
            sig.sort_unstable();
            if !out.contains(&sig) {
                out.push(sig);
            }
        }
        Ok(out)
    }
}

/// Sorted set of signature bytes present in a document.
pub fn topic_of(doc: &[u8]) -> Vec<u8> {
    let mut seen = [false; 256];
    for &b in doc {
        if b.is_ascii_uppercase() {
            seen[b as usize] = true;
        }
    }
    (0..=255u8).filter(|&b| seen[b as usize]).collect()
}

pub fn retrieval_oracle(pair: &RetrievalPair) -> u8 {
    (topic_of(&pair.bytes_a) == topic_of(&pair.bytes_b)) as u8
}

fn document<R: Rng>(sig: &[u8], len: usize, rng: &mut R) -> Vec<u8> {
    let mut doc: Vec<u8> = (0..len)
        .map(|_| FILLER_BYTES[rng.random_range(0..FILLER_BYTES.len())])
        .collect();
    let mut order = sig.to_vec();
    order.shuffle(rng);
    // First signature byte in the first quarter, last in the final quarter,
    // the rest anywhere in between without collisions.
    let q = len / 4;
    let mut used = Vec::with_capacity(order.len());
    let first = rng.random_range(0..q);
    let last = rng.random_range(len - q..len);
    used.push(first);
    used.push(last);
    for _ in 2..order.len() {
        loop {
            let p = rng.random_range(q..len - q);
            if !used.contains(&p) {
                used.push(p);
                break;
            }
        }
    }
    for (&p, &b) in used.iter().zip(&order) {
        doc[p] = b;
    }
    doc
}

/// `n` pairs, `ceil(n/2)` of them matching, in shuffled order.
pub fn gen_retrieval(seed: u64, n: usize, spec: &RetrievalSpec) -> Result<Vec<RetrievalPair>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if spec.doc_len < 4 * spec.signature_len.max(2) {
        return Err(Error::Infeasible(format!(
            "doc_len {} too short for a signature of {}",
            spec.doc_len, spec.signature_len
        )));
    }
    let sigs = spec.signatures(seed)?;
    let mut labels: Vec<u8> = (0..n).map(|i| (i < n.div_ceil(2)) as u8).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        u64::MAX - 1,
    )));
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut rng = example_rng(seed, i as u64);
            let ta = rng.random_range(0..sigs.len());
            let tb = if label == 1 {
                ta
            } else {
                (ta + rng.random_range(1..sigs.len())) % sigs.len()
            };
            RetrievalPair {
                bytes_a: document(&sigs[ta], spec.doc_len, &mut rng),
                bytes_b: document(&sigs[tb], spec.doc_len, &mut rng),
                label,
            }
        })
        .collect())
}
