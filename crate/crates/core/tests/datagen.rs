#[macro_use]
#[path = "support/mod.rs"]
mod support;

use longconv_core::data::{
    conversation_oracle, eval_listops, gen_conversations, gen_listops, gen_retrieval,
    gen_text_bytes, retrieval_oracle, text_oracle, utterance_oracle, GeneratorSpec, ListOpsSpec,
    RetrievalSpec, TextRules,
};
use longconv_core::heads::{accuracy, macro_f1};

/// Iterative evaluator over the byte stream, written without recursion.
fn stack_machine(expr: &str) -> u8 {
    let mut frames: Vec<(String, Vec<u8>)> = Vec::new();
    let mut last = None;
    let bytes = expr.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'[' => {
                let start = i + 1;
                while bytes[i] != b' ' && bytes[i] != b']' {
                    i += 1;
                }
                frames.push((expr[start..i].to_string(), Vec::new()));
                continue;
            }
            b']' => {
                let (op, mut args) = frames.pop().unwrap();
                args.sort();
                let v = match op.as_str() {
                    "MIN" => args[0],
                    "MAX" => *args.last().unwrap(),
                    "MED" => args[(args.len() - 1) / 2],
                    "SM" => (args.iter().map(|&a| a as u32).sum::<u32>() % 10) as u8,
                    other => panic!("unknown op {other}"),
                };
                match frames.last_mut() {
                    Some(f) => f.1.push(v),
                    None => last = Some(v),
                }
            }
            b'0'..=b'9' => frames.last_mut().unwrap().1.push(bytes[i] - b'0'),
            _ => {}
        }
        i += 1;
    }
    last.unwrap()
}

pub fn listops_matches_stack_machine_on_10k() {
    let specs = [
        ListOpsSpec::default(),
        ListOpsSpec {
            max_depth: 5,
            max_args: 6,
            max_len: 2000,
            leaf_prob: 0.5,
        },
    ];
    let mut n = 0;
    for (s, spec) in specs.iter().enumerate() {
        for x in gen_listops(s as u64, 5000, spec).unwrap() {
            let want = stack_machine(&x.tokens);
            assert_eq!(eval_listops(&x.tokens).unwrap(), want, "{}", x.tokens);
            assert_eq!(x.label, want);
            n += 1;
        }
    }
    assert_eq!(n, 10_000);
}

pub fn text_length_mean_within_ten_percent() {
    let rules = TextRules::default();
    let xs = gen_text_bytes(3, 10_000, &rules).unwrap();
    let mean = xs.iter().map(|x| x.bytes.len() as f64).sum::<f64>() / xs.len() as f64;
    assert!(
        (mean - rules.mean_len).abs() / rules.mean_len < 0.1,
        "mean {mean}"
    );
    assert!(xs
        .iter()
        .all(|x| !x.bytes.is_empty() && x.bytes.len() <= rules.max_len));
    let preds: Vec<u8> = xs.iter().map(|x| text_oracle(&x.bytes, &rules)).collect();
    let golds: Vec<u8> = xs.iter().map(|x| x.label).collect();
    assert_eq!(accuracy(&preds, &golds).unwrap(), 1.0);
    let pos = golds.iter().filter(|&&g| g == 1).count() as f64 / golds.len() as f64;
    assert!((pos - 0.5).abs() < 0.05);
}

pub fn empty_motif_set_is_all_negative() {
    let rules = TextRules {
        motifs: vec![],
        mean_len: 50.0,
        sd_len: 10.0,
        ..Default::default()
    };
    assert!(gen_text_bytes(0, 200, &rules)
        .unwrap()
        .iter()
        .all(|x| x.label == 0));
}

pub fn conversations_match_length_stats_and_oracle() {
    let spec = GeneratorSpec {
        n_conversations: 10_000,
        seed: 11,
        decoy_rate: 0.02,
        ..Default::default()
    };
    let convs = gen_conversations(&spec).unwrap();
    assert_eq!(convs.len(), 10_000);
    let lens: Vec<f64> = convs.iter().map(|c| c.encoded_len() as f64).collect();
    let mean = lens.iter().sum::<f64>() / lens.len() as f64;
    let sd =
        (lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (lens.len() - 1) as f64).sqrt();
    assert!(
        (mean - spec.mean_len).abs() / spec.mean_len < 0.1,
        "mean {mean}"
    );
    assert!((sd - spec.sd_len).abs() / spec.sd_len < 0.1, "sd {sd}");
    assert!(convs.iter().all(|c| c.encoded_len() <= spec.max_len));

    let pats = spec.patterns();
    let mut conv_pred = Vec::new();
    let mut conv_gold = Vec::new();
    let mut utt_pred = Vec::new();
    let mut utt_gold = Vec::new();
    for c in &convs {
        assert!(c.conv_label < spec.k_conv);
        conv_pred.push(vec![conversation_oracle(c, &pats).unwrap()]);
        conv_gold.push(vec![c.conv_label]);
        for u in &c.utterances {
            utt_pred.push(utterance_oracle(&u.tokens, &pats));
            utt_gold.push(u.labels.clone());
        }
    }
    assert_eq!(macro_f1(&conv_pred, &conv_gold, spec.k_conv).unwrap(), 1.0);
    assert_eq!(macro_f1(&utt_pred, &utt_gold, spec.k_utt).unwrap(), 1.0);
}

pub fn retrieval_signatures_are_dispersed_and_balanced() {
    let spec = RetrievalSpec::default();
    let pairs = gen_retrieval(5, 200, &spec).unwrap();
    let matched = pairs.iter().filter(|p| p.label == 1).count();
    assert_eq!(matched, 100);
    for p in &pairs {
        assert_eq!(retrieval_oracle(p), p.label);
        for doc in [&p.bytes_a, &p.bytes_b] {
            let pos: Vec<usize> = doc
                .iter()
                .enumerate()
                .filter(|(_, b)| b.is_ascii_uppercase())
                .map(|(i, _)| i)
                .collect();
            let span = pos.last().unwrap() - pos[0] + 1;
            assert!(2 * span >= doc.len(), "span {span} of {}", doc.len());
        }
    }
    let two = gen_retrieval(1, 2, &spec).unwrap();
    assert_eq!(two.iter().map(|p| p.label as usize).sum::<usize>(), 1);
}

pub fn generators_are_pure() {
    let spec = GeneratorSpec {
        n_conversations: 50,
        ..Default::default()
    };
    assert_eq!(
        gen_conversations(&spec).unwrap(),
        gen_conversations(&spec).unwrap()
    );
    let rules = TextRules::default();
    assert_eq!(
        gen_text_bytes(9, 20, &rules).unwrap(),
        gen_text_bytes(9, 20, &rules).unwrap()
    );
    let r = RetrievalSpec::default();
    assert_eq!(
        gen_retrieval(9, 10, &r).unwrap(),
        gen_retrieval(9, 10, &r).unwrap()
    );
}

cases!(
    listops_matches_stack_machine_on_10k,
    text_length_mean_within_ten_percent,
    empty_motif_set_is_all_negative,
    conversations_match_length_stats_and_oracle,
    retrieval_signatures_are_dispersed_and_balanced,
    generators_are_pure
);
