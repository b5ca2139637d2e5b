//! Token-perturbation oracle for the analytic receptive field, padding
//! direction and cross-tower wiring.
//!
//! Weights, biases and embeddings are random but strictly positive, so every
//! ReLU stays active, nothing cancels, and each in-range token has a nonzero
//! path to the probed output.
//! Filter widths are kept tiny: the receptive field depends only on kernel
//! sizes and dilations.

#[macro_use]
#[path = "support/mod.rs"]
mod support;

use longconv_core::presets;
use longconv_core::tcn::{
    pad_amounts, receptive_field, DualTowerConfig, DualTowerEncoder, PaddingMode, TcnShape,
};
use longconv_core::{ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = 11;

fn linearized(cfg: DualTowerConfig, seed: u64) -> (DualTowerEncoder, ParamStore<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let enc = DualTowerEncoder::new(cfg, &mut store, &mut rng).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(0.5..1.0);
        }
    }
    (enc, store)
}

/// Column `t` of each tower's last layer, and of the merged output.
fn columns(
    enc: &DualTowerEncoder,
    store: &ParamStore<f64>,
    ids: &[usize],
    t: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut tape = Tape::with_params(store);
    let layers = enc.forward_layers(&mut tape, ids, None).unwrap();
    let col = |tape: &Tape<'_, f64>, v| {
        let shape = tape.shape(v);
        let (c, len) = (shape[0], shape[1]);
        (0..c)
            .map(|ch| tape.data(v)[ch * len + t])
            .collect::<Vec<_>>()
    };
    let towers: Vec<_> = layers
        .last()
        .unwrap()
        .iter()
        .map(|&v| col(&tape, v))
        .collect();
    let merged = towers.concat();
    (towers, merged)
}

/// Positions whose token change alters column `t`: per tower and merged.
fn influence(
    enc: &DualTowerEncoder,
    store: &ParamStore<f64>,
    ids: &[usize],
    t: usize,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let (base_towers, base) = columns(enc, store, ids, t);
    let mut per_tower = vec![Vec::new(); base_towers.len()];
    let mut merged = Vec::new();
    for j in 0..ids.len() {
        let mut p = ids.to_vec();
        p[j] = (p[j] + 1) % VOCAB;
        let (towers, all) = columns(enc, store, &p, t);
        for (k, tw) in towers.iter().enumerate() {
            if tw != &base_towers[k] {
                per_tower[k].push(j);
            }
        }
        if all != base {
            merged.push(j);
        }
    }
    (per_tower, merged)
}

fn extent(positions: &[usize]) -> usize {
    match (positions.first(), positions.last()) {
        (Some(a), Some(b)) => b - a + 1,
        _ => 0,
    }
}

fn contiguous(positions: &[usize]) -> bool {
    positions.windows(2).all(|w| w[1] == w[0] + 1)
}

/// Independent oracle: how far left and right of `t` the final layer of each
/// tower reaches, from the per-sublayer padding split.
fn expected_reach(cfg: &DualTowerConfig) -> Vec<(usize, usize)> {
    let n = cfg.towers.len();
    let mut reach = vec![(0usize, 0usize); n];
    for l in 0..cfg.num_layers() {
        let outs: Vec<(usize, usize)> = cfg
            .towers
            .iter()
            .zip(&reach)
            .map(|(tw, &(left, right))| {
                let b = &tw.layers[l];
                let (pl, pr) = pad_amounts(b.kernel_size, b.dilation, b.padding);
                (left + 2 * pl, right + 2 * pr)
            })
            .collect();
        reach = if cfg.cross_feed {
            let l = outs.iter().map(|o| o.0).max().unwrap();
            let r = outs.iter().map(|o| o.1).max().unwrap();
            vec![(l, r); n]
        } else {
            outs.clone()
        };
        if l == cfg.num_layers() - 1 {
            return outs;
        }
    }
    reach
}

struct Measured {
    per_tower: Vec<Vec<usize>>,
    merged: Vec<usize>,
    t: usize,
}

fn measure(cfg: &DualTowerConfig, seed: u64) -> Measured {
    let rf = receptive_field(cfg).total;
    let len = 2 * rf + 3;
    let t = rf + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..VOCAB)).collect();
    let (enc, store) = linearized(cfg.clone(), seed);
    let (per_tower, merged) = influence(&enc, &store, &ids, t);
    Measured {
        per_tower,
        merged,
        t,
    }
}

fn large_structure(kernels: &[usize]) -> DualTowerConfig {
    let mut s = presets::cnn_large(VOCAB, 2);
    s.kernels = kernels.to_vec();
    s.filters = vec![2; 4];
    DualTowerConfig::build(&s).unwrap()
}

pub fn cnn_large_single_towers_reach_301_and_421() {
    for (k, want) in [(11, 301), (15, 421)] {
        let cfg = large_structure(&[k]);
        assert_eq!(receptive_field(&cfg).total, want);
        let m = measure(&cfg, k as u64);
        assert!(contiguous(&m.merged));
        assert_eq!(extent(&m.merged), want, "k={k}");
    }
}

pub fn cnn_large_dual_merges_to_421() {
    let cfg = large_structure(&[11, 15]);
    let rf = receptive_field(&cfg);
    assert_eq!(rf.total, 421);
    assert_eq!(rf.per_layer.last().unwrap(), &vec![357, 421]);
    let m = measure(&cfg, 3);
    assert_eq!(extent(&m.merged), 421);
    for (tw, &want) in m.per_tower.iter().zip(rf.per_layer.last().unwrap()) {
        assert!(contiguous(tw));
        assert_eq!(extent(tw), want);
    }
    // bidirectional: some future token matters
    assert!(m.merged.iter().any(|&j| j > m.t));
}

pub fn random_configs_match_analytic_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..10 {
        let towers = rng.random_range(1..=2);
        let layers = rng.random_range(1..=4);
        let kernels: Vec<usize> = (0..towers).map(|_| rng.random_range(1..=7)).collect();
        let dilations: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=4)).collect();
        let padding = if case % 2 == 0 {
            PaddingMode::Bidirectional
        } else {
            PaddingMode::Causal
        };
        let shape = TcnShape {
            embedding_dim: 2,
            vocab_size: VOCAB,
            kernels,
            filters: (0..layers).map(|_| rng.random_range(1..=3)).collect(),
            dilations: Some(dilations),
            padding,
            dropout: 0.0,
        };
        let cfg = DualTowerConfig::build(&shape).unwrap();
        let rf = receptive_field(&cfg);
        let m = measure(&cfg, 100 + case);
        // small kernels with large dilations leave holes, so only the span is checked
        assert_eq!(extent(&m.merged), rf.total, "case {case}: {shape:?}");
        let reach = expected_reach(&cfg);
        for ((tw, &want), &(left, right)) in m
            .per_tower
            .iter()
            .zip(rf.per_layer.last().unwrap())
            .zip(&reach)
        {
            assert_eq!(extent(tw), want, "case {case}");
            assert_eq!(
                (tw[0], *tw.last().unwrap()),
                (m.t - left, m.t + right),
                "case {case}"
            );
        }
        if padding == PaddingMode::Causal {
            assert!(
                m.merged.iter().all(|&j| j <= m.t),
                "causal case {case} saw the future"
            );
        }
    }
}

pub fn causal_never_sees_future_bidirectional_does() {
    for padding in [PaddingMode::Causal, PaddingMode::Bidirectional] {
        let mut s = presets::cnn_small(VOCAB, 2);
        s.filters = vec![2; 4];
        s.padding = padding;
        let m = measure(&DualTowerConfig::build(&s).unwrap(), 9);
        let future = m.merged.iter().any(|&j| j > m.t);
        assert_eq!(future, padding == PaddingMode::Bidirectional);
    }
}

pub fn zeroing_one_tower_changes_the_other() {
    let mut s = presets::cnn_small(VOCAB, 4);
    s.filters = vec![4, 4];
    s.dropout = 0.0;
    let cfg = DualTowerConfig::build(&s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let enc = DualTowerEncoder::new(cfg.clone(), &mut store, &mut rng).unwrap();
    let ids: Vec<usize> = (0..40).map(|i| (i * 7) % VOCAB).collect();
    let run = |enc: &DualTowerEncoder, zero| {
        let mut tape = Tape::with_params(&store);
        let layers = enc.forward_layers(&mut tape, &ids, zero).unwrap();
        tape.data(layers[1][0]).to_vec()
    };
    let base = run(&enc, None);
    let cut = run(&enc, Some((1, 0)));
    let diff: f64 = base.iter().zip(&cut).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 0.0, "tower 0 layer 2 ignored tower 1");

    // without cross-feed the towers are independent
    let mut split = cfg;
    split.cross_feed = false;
    for (l, layer) in split
        .towers
        .iter_mut()
        .flat_map(|t| t.layers.iter_mut().enumerate())
    {
        if l > 0 {
            layer.in_channels = 4;
        }
    }
    let mut store2 = ParamStore::<f64>::new();
    let enc2 = DualTowerEncoder::new(split, &mut store2, &mut rng).unwrap();
    let run2 = |zero| {
        let mut tape = Tape::with_params(&store2);
        let layers = enc2.forward_layers(&mut tape, &ids, zero).unwrap();
        tape.data(layers[1][0]).to_vec()
    };
    assert_eq!(run2(None), run2(Some((1, 0))));
}

pub fn length_is_preserved() {
    let mut shapes = vec![presets::cnn_large(VOCAB, 2), presets::retrieval(65)];
    for s in &mut shapes {
        s.vocab_size = VOCAB;
        s.embedding_dim = 2;
        s.filters = vec![2; s.filters.len()];
    }
    let mut causal = shapes[0].clone();
    causal.padding = PaddingMode::Causal;
    shapes.push(causal);
    for s in shapes {
        let cfg = DualTowerConfig::build(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let enc = DualTowerEncoder::new(cfg.clone(), &mut store, &mut rng).unwrap();
        for t in [1, 7, 64, 1000] {
            let ids: Vec<usize> = (0..t).map(|i| i % VOCAB).collect();
            let mut tape = Tape::with_params(&store);
            let h = enc.encode(&mut tape, &ids).unwrap();
            assert_eq!(tape.shape(h), [cfg.out_channels(), t]);
        }
    }
}

cases!(
    cnn_large_single_towers_reach_301_and_421,
    cnn_large_dual_merges_to_421,
    random_configs_match_analytic_field,
    causal_never_sees_future_bidirectional_does,
    zeroing_one_tower_changes_the_other,
    length_is_preserved
);
