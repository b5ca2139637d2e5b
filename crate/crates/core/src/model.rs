//! Encoders paired with task heads, and the training step.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionEncoder};
use crate::error::{Error, Result};
use crate::flops::CostModel;
use crate::heads::{self, LinearHead, MtlTargets, UtteranceSpan};
use crate::optim::Optimizer;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tcn::{receptive_field, DualTowerConfig, DualTowerEncoder, TcnShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    Tcn(TcnShape),
    Attention(AttentionConfig),
}

impl EncoderConfig {
    /// Same encoder with an embedding table of `rows` rows.
    pub fn with_vocab(mut self, rows: usize) -> Self {
        match &mut self {
            Self::Tcn(s) => s.vocab_size = rows,
            Self::Attention(a) => a.vocab_size = rows,
        }
        self
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Self::Tcn(s) => s.vocab_size,
            Self::Attention(a) => a.vocab_size,
        }
    }

    pub fn tcn(&self) -> Result<Option<DualTowerConfig>> {
        match self {
            Self::Tcn(s) => DualTowerConfig::build(s).map(Some),
            Self::Attention(_) => Ok(None),
        }
    }

    /// Forward MACs of the encoder on one sequence of length `t`.
    pub fn macs(&self, t: usize) -> Result<u64> {
        Ok(match self {
            Self::Tcn(s) => DualTowerConfig::build(s)?.macs(t),
            Self::Attention(a) => a.macs(t),
        })
    }

    /// Receptive field of a TCN encoder; attention sees the whole input.
    pub fn receptive_field(&self) -> Result<Option<usize>> {
        Ok(self.tcn()?.map(|c| receptive_field(&c).total))
    }
}

#[derive(Debug, Clone)]
pub enum Encoder {
    Tcn(DualTowerEncoder),
    Attention(AttentionEncoder),
}

impl Encoder {
    pub fn new<S: Scalar, R: Rng>(
        cfg: &EncoderConfig,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match cfg {
            EncoderConfig::Tcn(s) => Self::Tcn(DualTowerEncoder::new(
                DualTowerConfig::build(s)?,
                store,
                rng,
            )?),
            EncoderConfig::Attention(a) => {
                Self::Attention(AttentionEncoder::new(a.clone(), store, rng)?)
            }
        })
    }

    /// `[C, T]` features.
    pub fn encode<S: Scalar>(&self, tape: &mut Tape<'_, S>, ids: &[usize]) -> Result<Var> {
        match self {
            Self::Tcn(e) => e.encode(tape, ids),
            Self::Attention(e) => e.encode(tape, ids),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Self::Tcn(e) => e.out_channels(),
            Self::Attention(e) => e.out_channels(),
        }
    }

    pub fn embedding(&self) -> ParamId {
        match self {
            Self::Tcn(e) => e.embedding(),
            Self::Attention(e) => e.embedding(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Mtl,
    StlConv,
    StlUtt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    /// Conversation class from a global pool, action labels from one pool
    /// per utterance.
    Conversation {
        k_conv: usize,
        k_utt: usize,
        paradigm: Paradigm,
        lambda_utt: f64,
    },
    /// One label per sequence from a global pool.
    Sequence { classes: usize },
    /// One label per pair of sequences encoded by a shared encoder.
    Pair { classes: usize },
}

#[derive(Debug, Clone)]
enum Heads {
    Conversation {
        conv: Option<LinearHead>,
        utt: Option<LinearHead>,
        lambda: f64,
    },
    Sequence(LinearHead),
    Pair(LinearHead),
}

/// One training or evaluation input.
#[derive(Debug, Clone, Copy)]
pub enum Example<'a> {
    Conversation {
        ids: &'a [usize],
        spans: &'a [UtteranceSpan],
        targets: &'a MtlTargets,
    },
    Sequence {
        ids: &'a [usize],
        label: usize,
    },
    Pair {
        a: &'a [usize],
        b: &'a [usize],
        label: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prediction {
    Conversation {
        conv: Option<usize>,
        utterances: Option<Vec<Vec<usize>>>,
    },
    Class(usize),
}

/// Mean loss of a batch, split into its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Conversation (or single-task) cross-entropy.
    pub loss_main: Option<f64>,
    /// Unweighted utterance BCE.
    pub loss_utt: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TaskModel {
    pub encoder: Encoder,
    heads: Heads,
    pub task: TaskSpec,
}

impl TaskModel {
    pub fn new<S: Scalar, R: Rng>(
        encoder: &EncoderConfig,
        task: TaskSpec,
        store: &mut ParamStore<S>,
        rng: &mut R,
    ) -> Result<Self> {
        let enc = Encoder::new(encoder, store, rng)?;
        let c = enc.out_channels();
        let heads = match task {
            TaskSpec::Conversation {
                k_conv,
                k_utt,
                paradigm,
                lambda_utt,
            } => {
                if k_conv < 2 || k_utt == 0 {
                    return Err(Error::InvalidArgument(
                        "need k_conv >= 2 and k_utt >= 1".into(),
                    ));
                }
                let conv = (paradigm != Paradigm::StlUtt)
                    .then(|| LinearHead::new(store, "head.conversation", c, k_conv, rng));
                let utt = (paradigm != Paradigm::StlConv)
                    .then(|| LinearHead::new(store, "head.utterance", c, k_utt, rng));
                let lambda = if paradigm == Paradigm::StlConv {
                    0.0
                } else {
                    lambda_utt
                };
                Heads::Conversation { conv, utt, lambda }
            }
            TaskSpec::Sequence { classes } => Heads::Sequence(LinearHead::new(
                store,
                "head.sequence",
                c,
                classes.max(2),
                rng,
            )),
            TaskSpec::Pair { classes } => Heads::Pair(LinearHead::new(
                store,
                "head.pair",
                4 * c,
                classes.max(2),
                rng,
            )),
        };
        Ok(Self {
            encoder: enc,
            heads,
            task,
        })
    }

    /// `concat(a, b, |a - b|, a * b)` of the pooled features.
    fn pair_features<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        a: &[usize],
        b: &[usize],
    ) -> Result<Var> {
        let ha = self.encoder.encode(tape, a)?;
        let pa = tape.pool_max(ha, None)?;
        let hb = self.encoder.encode(tape, b)?;
        let pb = tape.pool_max(hb, None)?;
        let diff = tape.sub(pa, pb)?;
        let dist = tape.abs(diff)?;
        let prod = tape.mul(pa, pb)?;
        tape.concat(&[pa, pb, dist, prod])
    }

    /// Loss of one example; returns `(total, main term, utterance term)`.
    pub fn loss<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        ex: &Example<'_>,
    ) -> Result<(Var, Option<Var>, Option<Var>)> {
        match (&self.heads, ex) {
            (
                Heads::Conversation { conv, utt, lambda },
                Example::Conversation {
                    ids,
                    spans,
                    targets,
                },
            ) => {
                let h = self.encoder.encode(tape, ids)?;
                let cz = conv
                    .as_ref()
                    .map(|hd| heads::conversation_logits(tape, hd, h, None))
                    .transpose()?;
                let uz = utt
                    .as_ref()
                    .map(|hd| heads::utterance_logits(tape, hd, h, spans))
                    .transpose()?;
                let l = heads::mtl_loss(
                    tape,
                    cz,
                    targets.conversation_label,
                    uz.map(|z| (z, targets.utterance_labels.as_slice())),
                    *lambda,
                )?;
                Ok((l.total, l.conv, l.utt))
            }
            (Heads::Sequence(hd), Example::Sequence { ids, label }) => {
                let h = self.encoder.encode(tape, ids)?;
                let z = heads::conversation_logits(tape, hd, h, None)?;
                let l = tape.softmax_cross_entropy(z, *label)?;
                Ok((l, Some(l), None))
            }
            (Heads::Pair(hd), Example::Pair { a, b, label }) => {
                let f = self.pair_features(tape, a, b)?;
                let z = hd.apply(tape, f)?;
                let l = tape.softmax_cross_entropy(z, *label)?;
                Ok((l, Some(l), None))
            }
            _ => Err(Error::InvalidArgument(
                "example does not match the task".into(),
            )),
        }
    }

    /// Predicts labels; utterance labels use `sigmoid > threshold`.
    pub fn predict<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        ex: &Example<'_>,
        threshold: f64,
    ) -> Result<Prediction> {
        let mut tape = Tape::with_params(store);
        let tape = &mut tape;
        match (&self.heads, ex) {
            (Heads::Conversation { conv, utt, .. }, Example::Conversation { ids, spans, .. }) => {
                let h = self.encoder.encode(tape, ids)?;
                let conv = match conv {
                    Some(hd) => {
                        let z = heads::conversation_logits(tape, hd, h, None)?;
                        Some(heads::argmax(tape.data(z)))
                    }
                    None => None,
                };
                let utterances = match utt {
                    Some(hd) => {
                        let z = heads::utterance_logits(tape, hd, h, spans)?;
                        let k = hd.classes;
                        Some(
                            tape.data(z)
                                .chunks(k)
                                .map(|row| heads::multilabel_decision(row, threshold))
                                .collect(),
                        )
                    }
                    None => None,
                };
                Ok(Prediction::Conversation { conv, utterances })
            }
            (Heads::Sequence(hd), Example::Sequence { ids, .. }) => {
                let h = self.encoder.encode(tape, ids)?;
                let z = heads::conversation_logits(tape, hd, h, None)?;
                Ok(Prediction::Class(heads::argmax(tape.data(z))))
            }
            (Heads::Pair(hd), Example::Pair { a, b, .. }) => {
                let f = self.pair_features(tape, a, b)?;
                let z = hd.apply(tape, f)?;
                Ok(Prediction::Class(heads::argmax(tape.data(z))))
            }
            _ => Err(Error::InvalidArgument(
                "example does not match the task".into(),
            )),
        }
    }

    /// Forward MACs for one example of length `t` (both documents for pairs).
    pub fn macs(&self, cfg: &EncoderConfig, t: usize) -> Result<u64> {
        let per = cfg.macs(t)?;
        Ok(match self.heads {
            Heads::Pair(_) => 2 * per,
            _ => per,
        })
    }
}

/// Forward and backward over `examples` with the mean loss, then one
/// optimizer update at `lr`. `seed` drives dropout.
pub fn train_step<S: Scalar, O: Optimizer<S>>(
    model: &TaskModel,
    store: &mut ParamStore<S>,
    opt: &mut O,
    examples: &[Example<'_>],
    lr: f64,
    seed: u64,
) -> Result<StepStats> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let (stats, grads) = {
        let mut tape = Tape::with_params(store).train(seed);
        let mut totals = Vec::with_capacity(examples.len());
        let mut mains = Vec::new();
        let mut utts = Vec::new();
        for ex in examples {
            let (t, m, u) = model.loss(&mut tape, ex)?;
            totals.push(t);
            mains.extend(m);
            utts.extend(u);
        }
        let loss = tape.mean(&totals)?;
        let value = tape.data(loss)[0].as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let mean_of = |tape: &Tape<'_, S>, vs: &[Var]| {
            (!vs.is_empty()).then(|| {
                vs.iter().map(|&v| tape.data(v)[0].as_f64()).sum::<f64>() / vs.len() as f64
            })
        };
        let stats = StepStats {
            loss: value,
            loss_main: mean_of(&tape, &mains),
            loss_utt: mean_of(&tape, &utts),
        };
        tape.backward(loss)?;
        (stats, tape.into_param_grads())
    };
    store.zero_grads();
    store.accumulate_grads(grads)?;
    opt.step(store, lr)?;
    Ok(stats)
}
