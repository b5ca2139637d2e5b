//! Conversation batching with speaker tokens, masks and utterance spans.

use alloc::vec;
use alloc::vec::Vec;

use super::conversations::{Conversation, Speaker};
use crate::error::{Error, Result};
use crate::heads::{MtlTargets, UtteranceSpan};

/// Placement of the special tokens after a base vocabulary of `vocab_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub vocab_size: usize,
}

impl TokenLayout {
    pub fn speaker_token(&self, s: Speaker) -> usize {
        match s {
            Speaker::Agent => self.vocab_size,
            Speaker::Customer => self.vocab_size + 1,
        }
    }

    /// Filler id for padded positions. It is never embedded, so it lies
    /// outside the embedding table.
    pub fn pad_token(&self) -> usize {
        self.vocab_size + 2
    }

    /// Rows needed in the embedding table (base vocabulary plus speakers).
    pub fn embedding_rows(&self) -> usize {
        self.vocab_size + 2
    }

    fn speaker_of(&self, id: usize) -> Option<Speaker> {
        match id.checked_sub(self.vocab_size) {
            Some(0) => Some(Speaker::Agent),
            Some(1) => Some(Speaker::Customer),
            _ => None,
        }
    }
}

/// Padded token matrix with masks, spans and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    /// Row-major `[batch, width]` token ids.
    pub tokens: Vec<usize>,
    pub width: usize,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub spans: Vec<Vec<UtteranceSpan>>,
    pub targets: Vec<MtlTargets>,
}

impl TaskBatch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.tokens[i * self.width..(i + 1) * self.width]
    }

    pub fn row_mask(&self, i: usize) -> &[bool] {
        &self.mask[i * self.width..(i + 1) * self.width]
    }

    /// Unpadded tokens of example `i`.
    pub fn valid(&self, i: usize) -> &[usize] {
        &self.row(i)[..self.lengths[i]]
    }
}

/// Token ids and spans of one conversation (no padding).
pub fn encode_conversation(
    conv: &Conversation,
    layout: &TokenLayout,
    max_len: usize,
) -> Result<(Vec<usize>, Vec<UtteranceSpan>)> {
    if conv.utterances.is_empty() {
        return Err(Error::EmptySequence);
    }
    let len = conv.encoded_len();
    if len > max_len {
        return Err(Error::SequenceTooLong { len, max: max_len });
    }
    let mut ids = Vec::with_capacity(len);
    let mut spans = Vec::with_capacity(conv.utterances.len());
    for (u, utt) in conv.utterances.iter().enumerate() {
        let start = ids.len();
        ids.push(layout.speaker_token(utt.speaker));
        for &t in &utt.tokens {
            if t as usize >= layout.vocab_size {
                return Err(Error::OutOfVocabulary {
                    id: t as i64,
                    vocab: layout.vocab_size,
                });
            }
            ids.push(t as usize);
        }
        spans.push(UtteranceSpan::new(start, ids.len(), u));
    }
    Ok((ids, spans))
}

pub fn encode_batch(
    convs: &[&Conversation],
    layout: &TokenLayout,
    k_utt: usize,
    max_len: usize,
) -> Result<TaskBatch> {
    if convs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let encoded: Vec<(Vec<usize>, Vec<UtteranceSpan>)> = convs
        .iter()
        .map(|c| encode_conversation(c, layout, max_len))
        .collect::<Result<_>>()?;
    let width = encoded.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
    let mut tokens = vec![layout.pad_token(); convs.len() * width];
    let mut mask = vec![false; convs.len() * width];
    let mut lengths = Vec::with_capacity(convs.len());
    let mut spans = Vec::with_capacity(convs.len());
    let mut targets = Vec::with_capacity(convs.len());
    for (i, ((ids, sp), conv)) in encoded.into_iter().zip(convs).enumerate() {
        tokens[i * width..i * width + ids.len()].copy_from_slice(&ids);
        mask[i * width..i * width + ids.len()]
            .iter_mut()
            .for_each(|m| *m = true);
        lengths.push(ids.len());
        spans.push(sp);
        let sets: Vec<Vec<usize>> = conv.utterances.iter().map(|u| u.labels.clone()).collect();
        targets.push(MtlTargets::from_sets(conv.conv_label, &sets, k_utt)?);
    }
    Ok(TaskBatch {
        tokens,
        width,
        mask,
        lengths,
        spans,
        targets,
    })
}

/// Recovers `(speaker, tokens)` per utterance of every example.
pub fn decode_batch(
    batch: &TaskBatch,
    layout: &TokenLayout,
) -> Result<Vec<Vec<(Speaker, Vec<u32>)>>> {
    (0..batch.len())
        .map(|i| {
            let row = batch.valid(i);
            batch.spans[i]
                .iter()
                .map(|s| {
                    let speaker = layout.speaker_of(row[s.start]).ok_or_else(|| {
                        Error::InvalidArgument(alloc::format!(
                            "span at {} lacks a speaker token",
                            s.start
                        ))
                    })?;
                    Ok((
                        speaker,
                        row[s.start + 1..s.end].iter().map(|&t| t as u32).collect(),
                    ))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Utterance;
    use alloc::string::String;

    fn conv(lens: &[usize]) -> Conversation {
        Conversation {
            id: String::from("x"),
            conv_label: 1,
            utterances: lens
                .iter()
                .enumerate()
                .map(|(i, &l)| Utterance {
                    speaker: if i % 2 == 0 {
                        Speaker::Customer
                    } else {
                        Speaker::Agent
                    },
                    tokens: (0..l as u32).collect(),
                    labels: vec![i % 3],
                })
                .collect(),
        }
    }

    #[test]
    fn padding_and_tiling() {
        let layout = TokenLayout { vocab_size: 50 };
        let a = conv(&[1, 2]);
        let b = conv(&[3, 4]);
        let batch = encode_batch(&[&a, &b], &layout, 3, 100).unwrap();
        assert_eq!(batch.width, 9);
        assert_eq!(batch.row_mask(0).iter().filter(|&&m| m).count(), 5);
        assert_eq!(batch.row_mask(1).iter().filter(|&&m| m).count(), 9);
        let spans = &batch.spans[1];
        assert_eq!(spans[0].start, 0);
        assert_eq!(spans.last().unwrap().end, 9);
        assert!(spans.windows(2).all(|w| w[0].end == w[1].start));
        assert_eq!(batch.row(0)[5], layout.pad_token());

        let decoded = decode_batch(&batch, &layout).unwrap();
        for (d, c) in decoded.iter().zip([&a, &b]) {
            let orig: Vec<(Speaker, Vec<u32>)> = c
                .utterances
                .iter()
                .map(|u| (u.speaker, u.tokens.clone()))
                .collect();
            assert_eq!(d, &orig);
        }
    }

    #[test]
    fn too_long() {
        let layout = TokenLayout { vocab_size: 50 };
        assert!(matches!(
            encode_batch(&[&conv(&[10])], &layout, 3, 5),
            Err(Error::SequenceTooLong { len: 11, max: 5 })
        ));
    }
}
