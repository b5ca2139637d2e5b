use longconv_core::attention::{AttentionConfig, AttentionEncoder};
use longconv_core::flops::attention_score_macs;
use longconv_core::{ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg() -> AttentionConfig {
    AttentionConfig {
        vocab_size: 20,
        layers: 2,
        model_dim: 8,
        heads: 2,
        ff_dim: 16,
        max_len: 32,
        dropout: 0.0,
    }
}

fn build(seed: u64) -> (AttentionEncoder, ParamStore<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let enc = AttentionEncoder::new(cfg(), &mut store, &mut rng).unwrap();
    (enc, store)
}

fn encode(
    enc: &AttentionEncoder,
    store: &ParamStore<f64>,
    ids: &[usize],
) -> (Vec<usize>, Vec<f64>) {
    let mut tape = Tape::with_params(store);
    let h = enc.encode(&mut tape, ids).unwrap();
    (tape.shape(h).to_vec(), tape.data(h).to_vec())
}

#[test]
fn output_is_channel_major_for_every_length() {
    let (enc, store) = build(0);
    for t in 1..=32 {
        let ids: Vec<usize> = (0..t).map(|i| i % 20).collect();
        assert_eq!(encode(&enc, &store, &ids).0, [8, t]);
    }
    let mut tape = Tape::with_params(&store);
    assert!(enc.encode(&mut tape, &[0; 33]).is_err());
}

#[test]
fn permuting_tokens_changes_output() {
    let (enc, store) = build(1);
    let ids = [3usize, 7, 7, 1, 12, 5];
    let mut rev = ids;
    rev.reverse();
    let (_, a) = encode(&enc, &store, &ids);
    let (_, b) = encode(&enc, &store, &rev);
    // column j of the reversed run is the same token as column T-1-j
    let t = ids.len();
    let mut moved = 0.0;
    for ch in 0..8 {
        for j in 0..t {
            moved += (a[ch * t + j] - b[ch * t + (t - 1 - j)]).abs();
        }
    }
    assert!(moved > 1e-6);
}

#[test]
fn zero_sublayers_leave_normalized_embedding_stream() {
    let (enc, mut store) = build(2);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        if name.starts_with("attn.layer") && !name.contains("norm") {
            for v in store.get_mut(id).data_mut() {
                *v = 0.0;
            }
        }
    }
    let tokens = [4usize, 0, 19, 4];
    let (_, out) = encode(&enc, &store, &tokens);
    let emb = store
        .get(store.find("embedding.weight").unwrap())
        .data()
        .to_vec();
    let pos = store
        .get(store.find("position.weight").unwrap())
        .data()
        .to_vec();
    let d = 8;
    let t = tokens.len();
    for (j, &tok) in tokens.iter().enumerate() {
        let x: Vec<f64> = (0..d).map(|c| emb[tok * d + c] + pos[j * d + c]).collect();
        let mean = x.iter().sum::<f64>() / d as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        for c in 0..d {
            let want = (x[c] - mean) / (var + 1e-5).sqrt();
            assert!((out[c * t + j] - want).abs() < 1e-9, "col {j} ch {c}");
        }
    }
}

#[test]
fn attention_rows_are_distributions() {
    let (enc, store) = build(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let layer = enc.layer(0).unwrap();
    for _ in 0..20 {
        let t = rng.random_range(1..=32);
        let ids: Vec<usize> = (0..t).map(|_| rng.random_range(0..20)).collect();
        let mut tape = Tape::with_params(&store);
        let x = enc.embed(&mut tape, &ids).unwrap();
        let out = enc.self_attention(&mut tape, x, &layer).unwrap();
        assert_eq!(tape.shape(out.output), [t, 8]);
        for w in out.weights {
            for row in tape.data(w).chunks(t) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn score_cost_quadruples_when_length_doubles() {
    let c = cfg();
    for n in [512, 1024] {
        assert_eq!(
            attention_score_macs(&c, 2 * n),
            4 * attention_score_macs(&c, n)
        );
    }
}
