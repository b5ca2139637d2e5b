use longconv_core::data::{
    decode_batch, encode_batch, Conversation, Speaker, TokenLayout, Utterance,
};
use longconv_core::flops::CostModel;
use longconv_core::heads::{macro_f1, mtl_loss};
use longconv_core::optim::{one_cycle_lr, warmup_linear_lr, ScheduleConfig};
use longconv_core::tcn::{pad_amounts, DualTowerConfig, PaddingMode, TcnShape};
use longconv_core::{Tape, Tensor};
use proptest::prelude::*;

fn label_sets(k: usize, n: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::btree_set(0..k, 0..=k.min(3)), n)
        .prop_map(|v| v.into_iter().map(|s| s.into_iter().collect()).collect())
}

fn padding() -> impl Strategy<Value = PaddingMode> {
    prop_oneof![Just(PaddingMode::Causal), Just(PaddingMode::Bidirectional)]
}

fn conversation(vocab: u32) -> impl Strategy<Value = Conversation> {
    let utt = (
        any::<bool>(),
        prop::collection::vec(0..vocab, 0..12),
        prop::collection::btree_set(0usize..5, 0..3),
    )
        .prop_map(|(agent, tokens, labels)| Utterance {
            speaker: if agent {
                Speaker::Agent
            } else {
                Speaker::Customer
            },
            tokens,
            labels: labels.into_iter().collect(),
        });
    (prop::collection::vec(utt, 1..8), 0usize..4).prop_map(|(utterances, conv_label)| {
        Conversation {
            id: "c".into(),
            conv_label,
            utterances,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn macro_f1_ignores_order_and_relabeling(
        (k, golds, preds, perm, shift) in (2usize..6, 1usize..30).prop_flat_map(|(k, n)| {
            (Just(k), label_sets(k, n), label_sets(k, n), Just((0..n).collect::<Vec<usize>>()).prop_shuffle(), 0..k)
        })
    ) {
        let base = macro_f1(&preds, &golds, k).unwrap();
        let p2: Vec<_> = perm.iter().map(|&i| preds[i].clone()).collect();
        let g2: Vec<_> = perm.iter().map(|&i| golds[i].clone()).collect();
        prop_assert!((macro_f1(&p2, &g2, k).unwrap() - base).abs() < 1e-12);
        let relabel = |s: &[Vec<usize>]| -> Vec<Vec<usize>> {
            s.iter().map(|r| r.iter().map(|&c| (c + shift) % k).collect()).collect()
        };
        prop_assert!((macro_f1(&relabel(&preds), &relabel(&golds), k).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn pad_amounts_preserve_length(k in 1usize..600, d in 1usize..16, mode in padding()) {
        let (l, r) = pad_amounts(k, d, mode);
        prop_assert_eq!(l + r, (k - 1) * d);
        if mode == PaddingMode::Causal {
            prop_assert_eq!(r, 0);
        } else {
            prop_assert!(l >= r && l - r <= 1);
        }
    }

    #[test]
    fn schedules_are_continuous_and_peak_at_max(total in 4usize..3000, max_lr in 1e-5f64..1.0) {
        for cfg in [ScheduleConfig::one_cycle(total, max_lr), ScheduleConfig::warmup_linear(total, max_lr)] {
            let lrs: Vec<f64> = (0..=total).map(|s| cfg.lr(s).unwrap()).collect();
            let peak = cfg.peak_step();
            prop_assert_eq!(lrs[peak], max_lr);
            prop_assert!(lrs.iter().all(|&v| v <= max_lr && v >= 0.0));
            // the largest jump between neighbours is bounded by the steepest slope
            let steepest = std::f64::consts::PI / 2.0 * max_lr / peak.min(total - peak) as f64;
            for w in lrs.windows(2) {
                prop_assert!((w[1] - w[0]).abs() <= steepest * (1.0 + 1e-9));
            }
            prop_assert!(cfg.lr(total + 1).is_err());
        }
        let c = ScheduleConfig::one_cycle(total, max_lr);
        prop_assert_eq!(one_cycle_lr(7.min(total), &c).unwrap(), one_cycle_lr(7.min(total), &c).unwrap());
        let w = ScheduleConfig::warmup_linear(total, max_lr);
        prop_assert_eq!(warmup_linear_lr(0, &w).unwrap(), 0.0);
    }

    #[test]
    fn mtl_conv_term_ignores_utterance_targets(
        logits in prop::collection::vec(-5.0f64..5.0, 4),
        utt in prop::collection::vec(-5.0f64..5.0, 6),
        t1 in prop::collection::vec(prop::bool::ANY, 6),
        t2 in prop::collection::vec(prop::bool::ANY, 6),
        target in 0usize..4,
        lambda in 0.1f64..3.0,
    ) {
        let run = |bits: &[bool]| {
            let mut tape = Tape::<f64>::new();
            let z = tape.input(Tensor::vector(logits.clone()));
            let u = tape.input(Tensor::new(vec![2, 3], utt.clone()).unwrap());
            let rows: Vec<Vec<f32>> = bits.chunks(3).map(|r| r.iter().map(|&b| b as u8 as f32).collect()).collect();
            let l = mtl_loss(&mut tape, Some(z), target, Some((u, &rows)), lambda).unwrap();
            let c = tape.data(l.conv.unwrap())[0];
            let ut = tape.data(l.utt.unwrap())[0];
            let tot = tape.data(l.total)[0];
            (c, ut, tot)
        };
        let (c1, u1, tot1) = run(&t1);
        let (c2, _, _) = run(&t2);
        prop_assert_eq!(c1, c2);
        prop_assert!((tot1 - (c1 + lambda * u1)).abs() < 1e-12);
        prop_assert!(c1 >= 0.0 && u1 >= 0.0);
    }

    #[test]
    fn cnn_cost_is_exactly_linear(
        kernels in prop::collection::vec(1usize..40, 1..=2),
        layers in 1usize..5,
        filters in 1usize..64,
        emb in 1usize..64,
        mode in padding(),
        a in 1usize..5000,
        b in 1usize..5000,
    ) {
        let shape = TcnShape {
            embedding_dim: emb,
            vocab_size: 100,
            kernels,
            filters: vec![filters; layers],
            dilations: None,
            padding: mode,
            dropout: 0.0,
        };
        let cfg = DualTowerConfig::build(&shape).unwrap();
        prop_assert_eq!(cfg.macs(a + b), cfg.macs(a) + cfg.macs(b));
    }

    #[test]
    fn encode_batch_round_trips(convs in prop::collection::vec(conversation(50), 1..5)) {
        let layout = TokenLayout { vocab_size: 50 };
        let refs: Vec<&Conversation> = convs.iter().collect();
        let batch = encode_batch(&refs, &layout, 5, 4096).unwrap();
        prop_assert_eq!(batch.width, convs.iter().map(Conversation::encoded_len).max().unwrap());
        let decoded = decode_batch(&batch, &layout).unwrap();
        for (i, (c, d)) in convs.iter().zip(&decoded).enumerate() {
            prop_assert_eq!(batch.row_mask(i).iter().filter(|&&m| m).count(), c.encoded_len());
            let spans = &batch.spans[i];
            prop_assert_eq!(spans[0].start, 0);
            prop_assert_eq!(spans.last().unwrap().end, c.encoded_len());
            for w in spans.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
            let want: Vec<(Speaker, Vec<u32>)> = c.utterances.iter().map(|u| (u.speaker, u.tokens.clone())).collect();
            prop_assert_eq!(d, &want);
        }
    }
}
