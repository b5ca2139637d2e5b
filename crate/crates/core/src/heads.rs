//! Conversation and utterance classification heads, the joint objective, and
//! the evaluation metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

const HEAD_INIT_STD: f64 = 0.02;

/// Default probability threshold of the multi-label decision rule.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Token range `[start, end)` of one utterance inside an encoded conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceSpan {
    pub start: usize,
    pub end: usize,
    pub utterance_index: usize,
}

impl UtteranceSpan {
    pub fn new(start: usize, end: usize, utterance_index: usize) -> Self {
        Self {
            start,
            end,
            utterance_index,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Checks that spans are non-empty, sorted, disjoint and inside `[0, t)`.
pub fn validate_spans(spans: &[UtteranceSpan], t: usize) -> Result<()> {
    let mut prev_end = 0;
    for (i, s) in spans.iter().enumerate() {
        if s.start >= s.end {
            return Err(Error::EmptySpan(s.start));
        }
        if s.end > t {
            return Err(Error::SpanOutOfBounds {
                start: s.start,
                end: s.end,
                len: t,
            });
        }
        if i > 0 && s.start < prev_end {
            return Err(Error::InvalidArgument(format!(
                "span {i} [{}, {}) overlaps or precedes the previous span ending at {prev_end}",
                s.start, s.end
            )));
        }
        prev_end = s.end;
    }
    Ok(())
}

/// Training targets of one conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlTargets {
    pub conversation_label: usize,
    /// One binary vector of length `K_utt` per utterance span.
    pub utterance_labels: Vec<Vec<f32>>,
}

impl MtlTargets {
    /// Builds binary vectors from label sets.
    pub fn from_sets(conversation_label: usize, sets: &[Vec<usize>], k_utt: usize) -> Result<Self> {
        let mut utterance_labels = Vec::with_capacity(sets.len());
        for set in sets {
            let mut row = vec![0.0f32; k_utt];
            for &l in set {
                if l >= k_utt {
                    return Err(Error::ClassOutOfRange {
                        index: l,
                        classes: k_utt,
                    });
                }
                row[l] = 1.0;
            }
            utterance_labels.push(row);
        }
        Ok(Self {
            conversation_label,
            utterance_labels,
        })
    }
}

/// Affine classifier over pooled `[C]` features.
#[derive(Debug, Clone, Copy)]
pub struct LinearHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub classes: usize,
}

impl LinearHead {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        in_features: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add_normal(
                &format!("{name}.weight"),
                &[classes, in_features],
                HEAD_INIT_STD,
                rng,
            ),
            bias: store.add_constant(&format!("{name}.bias"), &[classes], 0.0),
            in_features,
            classes,
        }
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.weight), tape.param(self.bias));
        tape.linear(x, w, Some(b))
    }
}

/// Global max-pool over time (restricted to `mask` when given), then `head`.
pub fn conversation_logits<S: Scalar>(
    tape: &mut Tape<'_, S>,
    head: &LinearHead,
    h: Var,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let shape = tape.shape(h);
    if shape.len() != 2 || shape[1] == 0 {
        return Err(Error::EmptySequence);
    }
    let pooled = match mask {
        Some(m) => tape.pool_max_masked(h, m)?,
        None => tape.pool_max(h, None)?,
    };
    head.apply(tape, pooled)
}

/// One row of `head` logits per span, each from a max-pool over that span.
pub fn utterance_logits<S: Scalar>(
    tape: &mut Tape<'_, S>,
    head: &LinearHead,
    h: Var,
    spans: &[UtteranceSpan],
) -> Result<Var> {
    let shape = tape.shape(h);
    if shape.len() != 2 {
        return Err(Error::Shape(format!(
            "utterance pooling expects [C,T], got {shape:?}"
        )));
    }
    if spans.is_empty() {
        return Err(Error::InvalidArgument("no utterance spans".into()));
    }
    validate_spans(spans, shape[1])?;
    let pooled: Vec<Var> = spans
        .iter()
        .map(|s| tape.pool_max(h, Some((s.start, s.end))))
        .collect::<Result<_>>()?;
    let rows = tape.stack(&pooled)?;
    head.apply(tape, rows)
}

/// Terms of the joint objective.
#[derive(Debug, Clone, Copy)]
pub struct MtlLoss {
    pub total: Var,
    pub conv: Option<Var>,
    /// Unweighted utterance BCE: summed over classes, averaged over spans.
    pub utt: Option<Var>,
}

/// Conversation cross-entropy plus `lambda` times the utterance BCE, summed
/// over classes and averaged over spans.
///
/// With `lambda == 0` or no utterance logits the result is the conversation
/// loss alone.
pub fn mtl_loss<S: Scalar>(
    tape: &mut Tape<'_, S>,
    conv_logits: Option<Var>,
    conv_target: usize,
    utt: Option<(Var, &[Vec<f32>])>,
    lambda: f64,
) -> Result<MtlLoss> {
    let conv = conv_logits
        .map(|z| tape.softmax_cross_entropy(z, conv_target))
        .transpose()?;
    let utt = match utt {
        Some((z, targets)) if lambda != 0.0 => {
            let shape = tape.shape(z).to_vec();
            if shape.len() != 2 || shape[0] != targets.len() {
                return Err(Error::Shape(format!(
                    "{} utterance target rows for logits {shape:?}",
                    targets.len()
                )));
            }
            let flat: Vec<S> = targets
                .iter()
                .flat_map(|r| r.iter().map(|&v| S::of(v as f64)))
                .collect();
            let per_element = tape.sigmoid_bce(z, &flat)?;
            Some(tape.scale(per_element, S::of(shape[1] as f64))?)
        }
        _ => None,
    };
    let weighted = match utt {
        Some(u) if lambda != 1.0 => Some(tape.scale(u, S::of(lambda))?),
        u => u,
    };
    let total = match (conv, weighted) {
        (Some(c), Some(u)) => tape.add(c, u)?,
        (Some(c), None) => c,
        (None, Some(u)) => u,
        (None, None) => {
            return Err(Error::InvalidArgument(
                "objective has no active term".into(),
            ))
        }
    };
    Ok(MtlLoss { total, conv, utt })
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Labels whose sigmoid probability exceeds `threshold`.
pub fn multilabel_decision<S: Scalar>(logits: &[S], threshold: f64) -> Vec<usize> {
    logits
        .iter()
        .enumerate()
        .filter(|(_, &z)| 1.0 / (1.0 + (-z).exp().as_f64()) > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Unweighted mean of per-class F1 over all `num_classes` classes.
///
/// Each example carries a label set (a singleton for multi-class tasks).
/// Classes with `precision + recall == 0`, including classes that never
/// occur, contribute an F1 of 0.
pub fn macro_f1(preds: &[Vec<usize>], golds: &[Vec<usize>], num_classes: usize) -> Result<f64> {
    if preds.is_empty() || golds.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::InvalidArgument(
            "num_classes must be positive".into(),
        ));
    }
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fneg = vec![0u64; num_classes];
    let mut seen = vec![false; num_classes];
    for (p, g) in preds.iter().zip(golds) {
        for &c in p.iter().chain(g) {
            if c >= num_classes {
                return Err(Error::ClassOutOfRange {
                    index: c,
                    classes: num_classes,
                });
            }
        }
        for c in 0..num_classes {
            seen[c] = false;
        }
        for &c in g {
            seen[c] = true;
        }
        for &c in p {
            if seen[c] {
                tp[c] += 1;
            } else {
                fp[c] += 1;
            }
        }
        for &c in g {
            if !p.contains(&c) {
                fneg[c] += 1;
            }
        }
    }
    let total: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if tp[c] == 0 || denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / num_classes as f64)
}

/// Exact-match fraction.
pub fn accuracy<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sets(xs: &[usize]) -> Vec<Vec<usize>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn macro_f1_examples() {
        let f = macro_f1(&sets(&[0, 1, 1]), &sets(&[0, 0, 1]), 2).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(macro_f1(&sets(&[0, 1]), &sets(&[0, 1]), 2).unwrap(), 1.0);
        assert_eq!(macro_f1(&sets(&[0, 0]), &sets(&[0, 0]), 2).unwrap(), 0.5);
        assert!(matches!(macro_f1(&[], &[], 2), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert_eq!(accuracy(&[1], &[2]).unwrap(), 0.0);
        assert!(accuracy::<u8>(&[], &[]).is_err());
    }

    #[test]
    fn mtl_closed_form() {
        let mut tape: Tape<'_, f64> = Tape::new();
        let c = tape.input(Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap());
        let u = tape.input(Tensor::from_f64(&[1, 1], &[0.0]).unwrap());
        let targets = vec![vec![1.0f32]];
        let l = mtl_loss(&mut tape, Some(c), 0, Some((u, &targets)), 1.0)
            .unwrap()
            .total;
        assert!((tape.data(l)[0] - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
        let stl = mtl_loss(&mut tape, Some(c), 0, Some((u, &targets)), 0.0)
            .unwrap()
            .total;
        assert!((tape.data(stl)[0] - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn span_validation() {
        let ok = [UtteranceSpan::new(0, 3, 0), UtteranceSpan::new(3, 5, 1)];
        validate_spans(&ok, 5).unwrap();
        assert!(validate_spans(
            &[UtteranceSpan::new(0, 3, 0), UtteranceSpan::new(2, 5, 1)],
            5
        )
        .is_err());
        assert!(matches!(
            validate_spans(&[UtteranceSpan::new(0, 6, 0)], 5),
            Err(Error::SpanOutOfBounds { .. })
        ));
    }

    #[test]
    fn single_span_matches_global_pool() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = LinearHead::new(&mut store, "h", 2, 3, &mut rng);
        let mut tape = Tape::with_params(&store);
        let h = tape.input(Tensor::from_f64(&[2, 3], &[1.0, 3.0, 0.0, 4.0, 2.0, 5.0]).unwrap());
        let g = conversation_logits(&mut tape, &head, h, None).unwrap();
        let u = utterance_logits(&mut tape, &head, h, &[UtteranceSpan::new(0, 3, 0)]).unwrap();
        assert_eq!(tape.shape(u), &[1, 3]);
        assert_eq!(tape.data(g), tape.data(u));
    }

    #[test]
    fn decision_threshold() {
        assert_eq!(
            multilabel_decision(&[0.1f32, -0.1, 0.0, 3.0], 0.5),
            vec![0, 3]
        );
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0]), 1);
    }
}
