//! Training, evaluation, benchmarking and the kernel-size ablation.

use std::fs;
use std::path::{Path, PathBuf};

use longconv_core::data::{
    derive_seed, encode_conversation, gen_conversations, gen_listops, gen_retrieval,
    gen_text_bytes, split_of, Conversation, ListOpsExample, RetrievalPair, Split, TextExample,
    TokenLayout,
};
use longconv_core::heads::{accuracy, macro_f1, MtlTargets, UtteranceSpan};
use longconv_core::memory;
use longconv_core::model::{
    train_step, EncoderConfig, Example, Prediction, StepStats, TaskModel, TaskSpec,
};
use longconv_core::optim::{Adam, Optimizer, ScheduleConfig, Sgd};
use longconv_core::{presets, ParamStore, Scalar};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{ModelKind, OptimizerKind, RunConfig, Task};
use crate::dataset::{read_jsonl, write_jsonl};
use crate::error::{io_err, Error, Result};
use crate::profiler::{self, measure_throughput};
use crate::report::{append_reports, BenchReport};

/// One encoded conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvItem {
    pub ids: Vec<usize>,
    pub spans: Vec<UtteranceSpan>,
    pub targets: MtlTargets,
}

/// A train or test split, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub enum Examples {
    Conversations(Vec<ConvItem>),
    Sequences(Vec<(Vec<usize>, usize)>),
    Pairs(Vec<(Vec<usize>, Vec<usize>, usize)>),
}

impl Examples {
    pub fn len(&self) -> usize {
        match self {
            Examples::Conversations(v) => v.len(),
            Examples::Sequences(v) => v.len(),
            Examples::Pairs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Example<'_> {
        match self {
            Examples::Conversations(v) => Example::Conversation {
                ids: &v[i].ids,
                spans: &v[i].spans,
                targets: &v[i].targets,
            },
            Examples::Sequences(v) => Example::Sequence {
                ids: &v[i].0,
                label: v[i].1,
            },
            Examples::Pairs(v) => Example::Pair {
                a: &v[i].0,
                b: &v[i].1,
                label: v[i].2,
            },
        }
    }

    /// Longest single input.
    pub fn max_len(&self) -> usize {
        match self {
            Examples::Conversations(v) => v.iter().map(|c| c.ids.len()).max(),
            Examples::Sequences(v) => v.iter().map(|s| s.0.len()).max(),
            Examples::Pairs(v) => v.iter().map(|p| p.0.len().max(p.1.len())).max(),
        }
        .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Examples,
    pub test: Examples,
}

fn bytes_to_ids(b: &[u8]) -> Vec<usize> {
    b.iter().map(|&x| x as usize).collect()
}

pub fn encode_conversations(convs: &[Conversation], cfg: &RunConfig) -> Result<Examples> {
    let spec = &cfg.data.conversations;
    let layout = TokenLayout {
        vocab_size: spec.vocab_size,
    };
    convs
        .iter()
        .map(|c| {
            let (ids, spans) = encode_conversation(c, &layout, spec.max_len)?;
            let sets: Vec<Vec<usize>> = c.utterances.iter().map(|u| u.labels.clone()).collect();
            let targets = MtlTargets::from_sets(c.conv_label, &sets, spec.k_utt)?;
            Ok(ConvItem {
                ids,
                spans,
                targets,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Examples::Conversations)
}

fn listops_examples(v: Vec<ListOpsExample>) -> Examples {
    Examples::Sequences(
        v.into_iter()
            .map(|e| (bytes_to_ids(e.tokens.as_bytes()), e.label as usize))
            .collect(),
    )
}

fn text_examples(v: Vec<TextExample>) -> Examples {
    Examples::Sequences(
        v.into_iter()
            .map(|e| (bytes_to_ids(&e.bytes), e.label as usize))
            .collect(),
    )
}

fn pair_examples(v: Vec<RetrievalPair>) -> Examples {
    Examples::Pairs(
        v.into_iter()
            .map(|p| {
                (
                    bytes_to_ids(&p.bytes_a),
                    bytes_to_ids(&p.bytes_b),
                    p.label as usize,
                )
            })
            .collect(),
    )
}

/// The generated conversation corpus of `cfg`, seeded by `data.seed`.
pub fn generate_conversations(cfg: &RunConfig) -> Result<Vec<Conversation>> {
    let spec = longconv_core::data::GeneratorSpec {
        seed: cfg.data.seed,
        ..cfg.data.conversations.clone()
    };
    Ok(gen_conversations(&spec)?)
}

fn split_corpus(convs: Vec<Conversation>) -> (Vec<Conversation>, Vec<Conversation>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in convs {
        match split_of(&c.id) {
            Split::Train => train.push(c),
            Split::Test => test.push(c),
            Split::Valid => {}
        }
    }
    (train, test)
}

/// Loads or generates the train and test splits of `cfg`.
pub fn load_data(cfg: &RunConfig) -> Result<TaskData> {
    let d = &cfg.data;
    let seed = d.seed;
    let test_seed = derive_seed(seed, 1);
    let (train, test) = match cfg.task {
        Task::Conversations => {
            let (tr, te) = match (&d.corpus, &d.train, &d.test) {
                (Some(p), _, _) => split_corpus(read_jsonl(p)?),
                (None, Some(a), Some(b)) => (read_jsonl(a)?, read_jsonl(b)?),
                _ => split_corpus(generate_conversations(cfg)?),
            };
            (
                encode_conversations(&tr, cfg)?,
                encode_conversations(&te, cfg)?,
            )
        }
        Task::Listops => match (&d.train, &d.test) {
            (Some(a), Some(b)) => (
                listops_examples(read_jsonl(a)?),
                listops_examples(read_jsonl(b)?),
            ),
            _ => (
                listops_examples(gen_listops(seed, d.n_train, &d.listops)?),
                listops_examples(gen_listops(test_seed, d.n_test, &d.listops)?),
            ),
        },
        Task::Text => match (&d.train, &d.test) {
            (Some(a), Some(b)) => (text_examples(read_jsonl(a)?), text_examples(read_jsonl(b)?)),
            _ => (
                text_examples(gen_text_bytes(seed, d.n_train, &d.text)?),
                text_examples(gen_text_bytes(test_seed, d.n_test, &d.text)?),
            ),
        },
        Task::Retrieval => match (&d.train, &d.test) {
            (Some(a), Some(b)) => (pair_examples(read_jsonl(a)?), pair_examples(read_jsonl(b)?)),
            _ => (
                pair_examples(gen_retrieval(seed, d.n_train, &d.retrieval)?),
                pair_examples(gen_retrieval(test_seed, d.n_test, &d.retrieval)?),
            ),
        },
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::Invalid(format!(
            "{} split is empty ({} train, {} test)",
            cfg.task.name(),
            train.len(),
            test.len()
        )));
    }
    Ok(TaskData { train, test })
}

/// Writes the generated corpus of `cfg` into `out_dir`: `corpus.jsonl` for
/// conversations, `train.jsonl` and `test.jsonl` otherwise. Returns the
/// files written.
pub fn gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let d = &cfg.data;
    let (tr, te) = (out_dir.join("train.jsonl"), out_dir.join("test.jsonl"));
    let test_seed = derive_seed(d.seed, 1);
    match cfg.task {
        Task::Conversations => {
            let p = out_dir.join("corpus.jsonl");
            write_jsonl(&p, &generate_conversations(cfg)?)?;
            return Ok(vec![p]);
        }
        Task::Listops => {
            write_jsonl(&tr, &gen_listops(d.seed, d.n_train, &d.listops)?)?;
            write_jsonl(&te, &gen_listops(test_seed, d.n_test, &d.listops)?)?;
        }
        Task::Text => {
            write_jsonl(&tr, &gen_text_bytes(d.seed, d.n_train, &d.text)?)?;
            write_jsonl(&te, &gen_text_bytes(test_seed, d.n_test, &d.text)?)?;
        }
        Task::Retrieval => {
            write_jsonl(&tr, &gen_retrieval(d.seed, d.n_train, &d.retrieval)?)?;
            write_jsonl(&te, &gen_retrieval(test_seed, d.n_test, &d.retrieval)?)?;
        }
    }
    Ok(vec![tr, te])
}

/// Either optimizer, chosen by the config.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyOptimizer<S: Scalar> {
    Sgd(Sgd<S>),
    Adam(Adam<S>),
}

impl<S: Scalar> Optimizer<S> for AnyOptimizer<S> {
    fn step(&mut self, store: &mut ParamStore<S>, lr: f64) -> longconv_core::Result<()> {
        match self {
            AnyOptimizer::Sgd(o) => o.step(store, lr),
            AnyOptimizer::Adam(o) => o.step(store, lr),
        }
    }
}

/// One row of `trace.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss_conv: Option<f64>,
    pub loss_utt: Option<f64>,
    pub lr: f64,
}

/// Test-split metrics. Conversation and utterance scores are macro-F1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub conv_f1: Option<f64>,
    pub utt_f1: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Metrics {
    /// The single number reported as `quality`.
    pub fn quality(&self) -> f64 {
        self.conv_f1
            .or(self.accuracy)
            .or(self.utt_f1)
            .unwrap_or(0.0)
    }
}

/// Model, parameters and optimizer state of one run.
pub struct Trainer<S: Scalar> {
    pub cfg: RunConfig,
    pub encoder: EncoderConfig,
    pub model: TaskModel,
    pub store: ParamStore<S>,
    pub opt: AnyOptimizer<S>,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    step: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl<S: Scalar> Trainer<S> {
    /// Builds a freshly initialized model for `cfg` (which must be resolved)
    /// under training seed `seed`.
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let encoder = cfg.encoder()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = TaskModel::new(&encoder, cfg.task_spec(), &mut store, &mut rng)?;
        if let Some(path) = &cfg.embedding_file {
            checkpoint::load_tensor(path, "embedding.weight", &mut store)?;
        }
        let o = &cfg.optimizer;
        let opt = match o.kind.unwrap_or(OptimizerKind::Sgd) {
            OptimizerKind::Sgd => {
                AnyOptimizer::Sgd(Sgd::new(o.momentum, o.weight_decay.unwrap_or(0.0)))
            }
            OptimizerKind::Adam => AnyOptimizer::Adam(Adam::new(o.adam())),
        };
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            model,
            store,
            opt,
            schedule: o.schedule(cfg.total_steps),
            seed,
            step: 0,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Next minibatch indices; the order is reshuffled every epoch from the
    /// training seed.
    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let b = self.cfg.batch_size.min(n);
        let mut out = Vec::with_capacity(b);
        while out.len() < b {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(self.seed ^ 0x5348_5546, self.epoch));
                self.order.shuffle(&mut rng);
                self.epoch += 1;
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// One optimizer step on the next minibatch of `train`.
    pub fn step(&mut self, train: &Examples) -> Result<TraceRow> {
        let idx = self.next_batch(train.len());
        let batch: Vec<Example<'_>> = idx.iter().map(|&i| train.get(i)).collect();
        let lr = self.schedule.lr(self.step.min(self.schedule.total_steps))?;
        let dropout_seed = derive_seed(self.seed ^ 0x4452_4f50, self.step as u64);
        let step = self.step;
        let stats: StepStats = train_step(
            &self.model,
            &mut self.store,
            &mut self.opt,
            &batch,
            lr,
            dropout_seed,
        )
        .map_err(|e| match e {
            longconv_core::Error::NonFinite(_) => Error::NonFiniteLoss { step },
            e => e.into(),
        })?;
        self.step += 1;
        Ok(TraceRow {
            step,
            loss_conv: stats.loss_main,
            loss_utt: stats.loss_utt,
            lr,
        })
    }

    pub fn evaluate(&self, test: &Examples) -> Result<Metrics> {
        evaluate(&self.model, &self.store, test, self.cfg.threshold)
    }

    pub fn params(&self) -> u64 {
        self.store.num_scalars() as u64
    }

    /// Forward giga-MACs of one example at the configured report length.
    pub fn flops_g(&self) -> Result<f64> {
        let t = self.cfg.flops_len.unwrap_or_else(|| self.cfg.max_len());
        Ok(self.model.macs(&self.encoder, t)? as f64 / 1e9)
    }
}

/// Scores `model` on `test`.
pub fn evaluate<S: Scalar>(
    model: &TaskModel,
    store: &ParamStore<S>,
    test: &Examples,
    threshold: f64,
) -> Result<Metrics> {
    let mut conv_p = Vec::new();
    let mut conv_g = Vec::new();
    let mut utt_p = Vec::new();
    let mut utt_g = Vec::new();
    let mut cls_p = Vec::new();
    let mut cls_g = Vec::new();
    for i in 0..test.len() {
        let ex = test.get(i);
        match (model.predict(store, &ex, threshold)?, &ex) {
            (
                Prediction::Conversation { conv, utterances },
                Example::Conversation { targets, .. },
            ) => {
                if let Some(c) = conv {
                    conv_p.push(vec![c]);
                    conv_g.push(vec![targets.conversation_label]);
                }
                if let Some(us) = utterances {
                    utt_p.extend(us);
                    utt_g.extend(targets.utterance_labels.iter().map(|row| label_set(row)));
                }
            }
            (
                Prediction::Class(c),
                Example::Sequence { label, .. } | Example::Pair { label, .. },
            ) => {
                cls_p.push(c);
                cls_g.push(*label);
            }
            _ => {
                return Err(Error::Invalid(
                    "prediction does not match the example".into(),
                ))
            }
        }
    }
    let mut m = Metrics::default();
    if let TaskSpec::Conversation { k_conv, k_utt, .. } = model.task {
        if !conv_p.is_empty() {
            m.conv_f1 = Some(macro_f1(&conv_p, &conv_g, k_conv)?);
        }
        if !utt_p.is_empty() {
            m.utt_f1 = Some(macro_f1(&utt_p, &utt_g, k_utt)?);
        }
    } else {
        m.accuracy = Some(accuracy(&cls_p, &cls_g)?);
    }
    Ok(m)
}

fn label_set(row: &[f32]) -> Vec<usize> {
    row.iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.5)
        .map(|(j, _)| j)
        .collect()
}

/// Scores of the majority-class predictor fitted on `train`: the most
/// frequent class (lowest id on ties) and, for utterances, the most frequent
/// label set.
pub fn majority_baseline(data: &TaskData, task: TaskSpec) -> Result<Metrics> {
    let mut m = Metrics::default();
    match (&data.train, &data.test, task) {
        (
            Examples::Conversations(tr),
            Examples::Conversations(te),
            TaskSpec::Conversation { k_conv, k_utt, .. },
        ) => {
            let conv = mode(tr.iter().map(|c| vec![c.targets.conversation_label]));
            let utt = mode(
                tr.iter()
                    .flat_map(|c| c.targets.utterance_labels.iter().map(|r| label_set(r))),
            );
            let conv_g: Vec<_> = te
                .iter()
                .map(|c| vec![c.targets.conversation_label])
                .collect();
            let utt_g: Vec<_> = te
                .iter()
                .flat_map(|c| c.targets.utterance_labels.iter().map(|r| label_set(r)))
                .collect();
            m.conv_f1 = Some(macro_f1(&vec![conv; conv_g.len()], &conv_g, k_conv)?);
            m.utt_f1 = Some(macro_f1(&vec![utt; utt_g.len()], &utt_g, k_utt)?);
        }
        (tr, te, _) => {
            let label = |e: &Examples, i| match e.get(i) {
                Example::Sequence { label, .. } | Example::Pair { label, .. } => label,
                Example::Conversation { targets, .. } => targets.conversation_label,
            };
            let c = mode((0..tr.len()).map(|i| label(tr, i)));
            let gold: Vec<_> = (0..te.len()).map(|i| label(te, i)).collect();
            m.accuracy = Some(accuracy(&vec![c; gold.len()], &gold)?);
        }
    }
    Ok(m)
}

fn mode<T: Ord + Clone>(items: impl Iterator<Item = T>) -> T
where
    T: Default,
{
    let mut counts = std::collections::BTreeMap::new();
    for x in items {
        *counts.entry(x).or_insert(0usize) += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    counts
        .into_iter()
        .find(|(_, n)| *n == best)
        .map(|(k, _)| k)
        .unwrap_or_default()
}

/// Everything one seed of a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: BenchReport,
    pub metrics: Metrics,
    pub trace: Vec<TraceRow>,
    pub checkpoint: PathBuf,
}

/// Trains with `seed` on `data` for `cfg.total_steps`, timing the steps as
/// three equal windows after one warmup step.
pub fn train_seed<S: Scalar>(
    cfg: &RunConfig,
    seed: u64,
    data: &TaskData,
) -> Result<(Trainer<S>, Vec<TraceRow>, f64, u64)> {
    let mut tr = Trainer::<S>::new(cfg, seed)?;
    let mut trace = Vec::with_capacity(cfg.total_steps);
    let total = cfg.total_steps;
    let (res, peak) = memory::track_peak_memory(|| -> Result<f64> {
        if total >= 4 {
            let window = (total - 1) / 3;
            let rate = measure_throughput(
                |_| -> Result<()> {
                    trace.push(tr.step(&data.train)?);
                    Ok(())
                },
                window,
                1,
                3,
            )?;
            while tr.steps_done() < total {
                trace.push(tr.step(&data.train)?);
            }
            Ok(rate)
        } else {
            let start = std::time::Instant::now();
            while tr.steps_done() < total {
                trace.push(tr.step(&data.train)?);
            }
            Ok(total as f64 / start.elapsed().as_secs_f64().max(1e-12))
        }
    });
    Ok((tr, trace, res?, peak.peak as u64))
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

/// Trains once per configured seed and writes the checkpoint, trace and
/// resolved config of each run plus a shared `report.csv`. A single seed
/// writes straight into `out_dir`; a sweep uses `out_dir/seed-<n>/`.
pub fn run_training<S: Scalar>(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<RunOutcome>> {
    let cfg = cfg.clone().resolve()?;
    let data = load_data(&cfg)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    fs::write(out_dir.join("resolved_config.json"), cfg.to_json()).map_err(io_err(out_dir))?;
    let seeds = cfg.run_seeds();
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let dir = if seeds.len() > 1 {
            out_dir.join(format!("seed-{seed}"))
        } else {
            out_dir.to_path_buf()
        };
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let run_cfg = RunConfig {
            seed,
            seeds: Vec::new(),
            ..cfg.clone()
        };
        if seeds.len() > 1 {
            fs::write(dir.join("resolved_config.json"), run_cfg.to_json()).map_err(io_err(&dir))?;
        }
        let (tr, trace, rate, peak) = train_seed::<S>(&run_cfg, seed, &data)?;
        let metrics = tr.evaluate(&data.test)?;
        let ck = dir.join("model.lcv");
        checkpoint::save(&ck, &tr.store)?;
        write_trace(&dir.join("trace.csv"), &trace)?;
        let report = BenchReport {
            task: cfg.task.name().into(),
            model: cfg.model.name().into(),
            quality: metrics.quality(),
            flops_g: tr.flops_g()?,
            steps_per_sec: rate,
            peak_bytes: peak,
            params: tr.params(),
            seed,
        };
        outcomes.push(RunOutcome {
            report,
            metrics,
            trace,
            checkpoint: ck,
        });
    }
    let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
    append_reports(&out_dir.join("report.csv"), &reports)?;
    Ok(outcomes)
}

/// Scores a saved checkpoint on the test split of `cfg`.
pub fn run_eval<S: Scalar>(cfg: &RunConfig, checkpoint_path: &Path) -> Result<Metrics> {
    let cfg = cfg.clone().resolve()?;
    let data = load_data(&cfg)?;
    let mut tr = Trainer::<S>::new(&cfg, cfg.seed)?;
    checkpoint::load_into(checkpoint_path, &mut tr.store)?;
    tr.evaluate(&data.test)
}

/// Speed and memory of one model at one input length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchPoint {
    pub model: String,
    pub seq_len: usize,
    pub mode: &'static str,
    pub flops_g: f64,
    pub steps_per_sec: f64,
    pub peak_bytes: u64,
    pub params: u64,
}

/// Times training steps (or, with `inference`, forward passes over a batch)
/// on random byte inputs of length `t`, one example per step unless
/// `inference` is set, in which case a step predicts `batch` examples.
pub fn bench_point<S: Scalar>(
    cfg: &RunConfig,
    t: usize,
    batch: usize,
    n_steps: usize,
    warmup: usize,
    inference: bool,
) -> Result<BenchPoint> {
    let mut run = cfg.clone();
    run.batch_size = batch.max(1);
    let tr = Trainer::<S>::new(&run, run.seed)?;
    let vocab = cfg.encoder()?.vocab_size();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run.seed, t as u64));
    let mut draw = || -> Vec<usize> {
        (0..t)
            .map(|_| rand::Rng::random_range(&mut rng, 0..vocab))
            .collect()
    };
    let examples = match cfg.task_spec() {
        TaskSpec::Pair { .. } => Examples::Pairs(
            (0..run.batch_size)
                .map(|i| (draw(), draw(), i % 2))
                .collect(),
        ),
        TaskSpec::Sequence { classes } => {
            Examples::Sequences((0..run.batch_size).map(|i| (draw(), i % classes)).collect())
        }
        TaskSpec::Conversation { k_conv, k_utt, .. } => {
            let chunk = (t / 8).max(1);
            Examples::Conversations(
                (0..run.batch_size)
                    .map(|i| {
                        let spans: Vec<_> = (0..t)
                            .step_by(chunk)
                            .enumerate()
                            .map(|(u, s)| UtteranceSpan::new(s, (s + chunk).min(t), u))
                            .collect();
                        let sets = vec![Vec::new(); spans.len()];
                        Ok(ConvItem {
                            ids: draw(),
                            spans,
                            targets: MtlTargets::from_sets(i % k_conv, &sets, k_utt)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        }
    };
    let flops_g = tr.model.macs(&tr.encoder, t)? as f64 / 1e9;
    let params = tr.params();
    let threshold = cfg.threshold;
    let mut tr = tr;
    let (rate, peak) = memory::track_peak_memory(|| -> Result<f64> {
        if inference {
            measure_throughput(
                |_| -> Result<()> {
                    for i in 0..examples.len() {
                        tr.model.predict(&tr.store, &examples.get(i), threshold)?;
                    }
                    Ok(())
                },
                n_steps,
                warmup,
                3,
            )
        } else {
            measure_throughput(
                |_| -> Result<()> {
                    tr.step(&examples)?;
                    Ok(())
                },
                n_steps,
                warmup,
                3,
            )
        }
    });
    Ok(BenchPoint {
        model: cfg.model.name().into(),
        seq_len: t,
        mode: if inference { "inference" } else { "train" },
        flops_g,
        steps_per_sec: rate?,
        peak_bytes: peak.peak as u64,
        params,
    })
}

/// One kernel size of the ablation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub kernel_size: usize,
    pub receptive_field: usize,
    pub quality: f64,
    pub flops_g: f64,
    pub steps_per_sec: f64,
    pub peak_bytes: u64,
    pub params: u64,
}

/// Trains the single-tower retrieval encoder once per kernel size, keeping
/// everything else in `base` fixed.
pub fn run_ablation<S: Scalar>(base: &RunConfig, kernels: &[usize]) -> Result<Vec<AblationRow>> {
    if kernels.is_empty() {
        return Err(Error::Invalid(
            "ablation needs at least one kernel size".into(),
        ));
    }
    let mut base = base.clone();
    base.task = Task::Retrieval;
    base.model = ModelKind::CnnCustom;
    base.architecture = Some(EncoderConfig::Tcn(presets::retrieval(kernels[0])));
    let data = load_data(&base.clone().resolve()?)?;
    let mut rows = Vec::with_capacity(kernels.len());
    for &k in kernels {
        let cfg = RunConfig {
            architecture: Some(EncoderConfig::Tcn(presets::retrieval(k))),
            ..base.clone()
        }
        .resolve()?;
        let (tr, _, rate, peak) = train_seed::<S>(&cfg, cfg.seed, &data)?;
        let metrics = tr.evaluate(&data.test)?;
        rows.push(AblationRow {
            kernel_size: k,
            receptive_field: tr.encoder.receptive_field()?.unwrap_or(0),
            quality: metrics.quality(),
            flops_g: tr.flops_g()?,
            steps_per_sec: rate,
            peak_bytes: peak,
            params: tr.params(),
        });
    }
    Ok(rows)
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

/// Peak tensor bytes of one encoder forward pass at `t`, above the bytes
/// already live.
pub fn forward_peak<S: Scalar>(cfg: &RunConfig, t: usize) -> Result<u64> {
    let tr = Trainer::<S>::new(cfg, cfg.seed)?;
    let vocab = tr.encoder.vocab_size();
    let ids: Vec<usize> = (0..t).map(|i| i % vocab).collect();
    let (res, peak) = profiler::track_peak_memory(|| -> Result<()> {
        let mut tape = longconv_core::Tape::with_params(&tr.store);
        tr.model.encoder.encode(&mut tape, &ids)?;
        Ok(())
    });
    res?;
    Ok(peak as u64)
}
