use std::fs;
use std::path::Path;
use std::process::Command;

use longconv::config::RunConfig;
use longconv::dataset::{read_jsonl, write_jsonl};
use longconv::harness::{self, Trainer};
use longconv::Error;
use longconv_core::data::Conversation;

const TINY: &str = r#"{
  "task": "conversations",
  "model": "cnn_custom",
  "seed": 3,
  "total_steps": 6,
  "batch_size": 2,
  "architecture": {"kind": "tcn", "embedding_dim": 8, "vocab_size": 34, "kernels": [3, 5], "filters": [4, 8], "padding": "bidirectional"},
  "data": {"seed": 1, "conversations": {"n_conversations": 40, "vocab_size": 32, "k_conv": 3, "k_utt": 4, "mean_len": 60, "sd_len": 10, "max_len": 200}}
}"#;

fn tiny(edit: impl FnOnce(&mut serde_json::Value)) -> RunConfig {
    let mut v: serde_json::Value = serde_json::from_str(TINY).unwrap();
    edit(&mut v);
    RunConfig::from_json(&v.to_string()).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_longconv"))
}

#[test]
fn same_seed_gives_identical_traces_and_checkpoints() {
    let cfg = tiny(|_| {});
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    harness::run_training::<f32>(&cfg, a.path()).unwrap();
    harness::run_training::<f32>(&cfg, b.path()).unwrap();
    for f in ["trace.csv", "model.lcv", "resolved_config.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let trace = fs::read_to_string(a.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "step,loss_conv,loss_utt,lr");
    assert_eq!(trace.lines().count(), 7);

    let other = tiny(|v| v["seed"] = 4.into());
    let c = tempfile::tempdir().unwrap();
    harness::run_training::<f32>(&other, c.path()).unwrap();
    assert_ne!(
        fs::read(a.path().join("trace.csv")).unwrap(),
        fs::read(c.path().join("trace.csv")).unwrap()
    );
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = harness::run_training::<f32>(&tiny(|_| {}), dir.path()).unwrap();
    let snap = RunConfig::load(&dir.path().join("resolved_config.json")).unwrap();
    let again = tempfile::tempdir().unwrap();
    let second = harness::run_training::<f32>(&snap, again.path()).unwrap();
    assert_eq!(first[0].trace, second[0].trace);
}

#[test]
fn single_task_paradigms_drop_the_other_head() {
    let conv = tiny(|v| v["paradigm"] = "stl_conv".into())
        .resolve()
        .unwrap();
    let tr = Trainer::<f32>::new(&conv, 0).unwrap();
    let names = tr.store.names();
    assert!(names.iter().any(|n| n.starts_with("head.conversation")));
    assert!(!names.iter().any(|n| n.starts_with("head.utterance")));

    let dir = tempfile::tempdir().unwrap();
    let out = harness::run_training::<f32>(&conv, dir.path()).unwrap();
    assert!(out[0].metrics.utt_f1.is_none());
    assert!(out[0].trace.iter().all(|r| r.loss_utt.is_none()));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(2) == Some("")));

    let utt = tiny(|v| v["paradigm"] = "stl_utt".into())
        .resolve()
        .unwrap();
    let names = Trainer::<f32>::new(&utt, 0).unwrap().store.names();
    assert!(!names.iter().any(|n| n.starts_with("head.conversation")));
    assert!(names.iter().any(|n| n.starts_with("head.utterance")));
}

#[test]
fn seed_sweep_reports_mean_and_sd() {
    let cfg = tiny(|v| v["seeds"] = serde_json::json!([0, 1, 2, 3]));
    let dir = tempfile::tempdir().unwrap();
    let out = harness::run_training::<f32>(&cfg, dir.path()).unwrap();
    assert_eq!(out.len(), 4);
    for s in 0..4 {
        assert!(dir.path().join(format!("seed-{s}/model.lcv")).exists());
        assert!(dir.path().join(format!("seed-{s}/trace.csv")).exists());
    }
    let report = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(
        lines[0],
        "task,model,quality,flops_g,steps_per_sec,peak_bytes,params,seed"
    );
    assert_eq!(lines.len(), 6);
    let summary: Vec<&str> = lines[5].split(',').collect();
    assert_eq!(summary[7], "mean");
    let q: Vec<f64> = out.iter().map(|o| o.report.quality).collect();
    assert_eq!(summary[2], longconv::report::format_mean_sd(&q));
    let (num, rest) = summary[2].split_once(" (±").unwrap();
    assert!(rest.ends_with(')'));
    assert_eq!(num.split_once('.').unwrap().1.len(), 1);
}

#[test]
fn config_errors_name_the_field() {
    let mut v: serde_json::Value = serde_json::from_str(TINY).unwrap();
    v["optimizer"] = serde_json::json!({"max_lrr": 0.1});
    match RunConfig::from_json(&v.to_string()) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "optimizer.max_lrr"),
        other => panic!("{other:?}"),
    }
    let mut v: serde_json::Value = serde_json::from_str(TINY).unwrap();
    v["data"]["conversations"]["k_conv"] = "ten".into();
    match RunConfig::from_json(&v.to_string()) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "data.conversations.k_conv"),
        other => panic!("{other:?}"),
    }
    let bad = tiny(|v| v["batch_size"] = 0.into());
    match bad.resolve() {
        Err(Error::Config { field, .. }) => assert_eq!(field, "batch_size"),
        other => panic!("{other:?}"),
    }
    let missing = tiny(|v| v["data"]["corpus"] = "/nonexistent/corpus.jsonl".into());
    match missing.resolve() {
        Err(Error::Config { field, .. }) => assert_eq!(field, "data.corpus"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn eval_reloads_the_checkpoint() {
    let cfg = tiny(|_| {});
    let dir = tempfile::tempdir().unwrap();
    let out = harness::run_training::<f32>(&cfg, dir.path()).unwrap();
    let m = harness::run_eval::<f32>(&cfg, &out[0].checkpoint).unwrap();
    assert_eq!(m, out[0].metrics);
    let missing = harness::run_eval::<f32>(&cfg, &dir.path().join("nope.lcv"));
    assert!(missing.is_err());
}

#[test]
fn jsonl_round_trip_and_line_errors() {
    let cfg = tiny(|_| {});
    let dir = tempfile::tempdir().unwrap();
    let convs = harness::generate_conversations(&cfg).unwrap();
    let p = dir.path().join("c.jsonl");
    write_jsonl(&p, &convs).unwrap();
    let back: Vec<Conversation> = read_jsonl(&p).unwrap();
    assert_eq!(back, convs);
    let first = fs::read_to_string(&p)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(first.starts_with(r#"{"id":"#));
    let order = [
        "\"id\"",
        "\"conv_label\"",
        "\"utterances\"",
        "\"speaker\"",
        "\"tokens\"",
        "\"labels\"",
    ];
    let pos: Vec<usize> = order.iter().map(|k| first.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));

    let text = fs::read_to_string(&p).unwrap();
    let cut = &text[..text.len() - 10];
    fs::write(&p, cut).unwrap();
    match read_jsonl::<Conversation>(&p) {
        Err(Error::Json { line, .. }) => assert_eq!(line, convs.len()),
        other => panic!("{other:?}"),
    }
    fs::write(&p, "").unwrap();
    assert!(read_jsonl::<Conversation>(&p).unwrap().is_empty());
}

#[test]
fn cli_subcommands_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.json");
    fs::write(&cfg_path, TINY).unwrap();
    let out = dir.path().join("out");
    let run = |args: &[&str]| {
        let o = bin()
            .args(args)
            .args([
                "--config",
                cfg_path.to_str().unwrap(),
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            o.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    };

    run(&["gen-data", "--seed", "5"]);
    let corpus: Vec<Conversation> = read_jsonl(&out.join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.len(), 40);

    run(&["train", "--seed", "2"]);
    for f in [
        "model.lcv",
        "trace.csv",
        "report.csv",
        "resolved_config.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let resolved = RunConfig::load(&out.join("resolved_config.json")).unwrap();
    assert_eq!(resolved.seed, 2);

    let eval = run(&["eval", "--seed", "2"]);
    let m: serde_json::Value = serde_json::from_str(eval.trim()).unwrap();
    assert!(m["conv_f1"].is_number());

    run(&[
        "bench",
        "--len",
        "16,32",
        "--steps",
        "2",
        "--precision",
        "f64",
    ]);
    let bench = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 3);
    run(&["bench", "--len", "16", "--inference", "--steps", "1"]);
    assert!(fs::read_to_string(out.join("bench.csv"))
        .unwrap()
        .contains("inference"));

    let bad = bin()
        .args(["train", "--config", "/nonexistent.json"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn ablation_rows_follow_the_kernel_sweep() {
    let cfg = RunConfig::from_json(
        r#"{"task": "retrieval", "model": "cnn_custom", "total_steps": 2, "batch_size": 1,
            "data": {"n_train": 4, "n_test": 2, "retrieval": {"doc_len": 64, "n_topics": 4, "signature_len": 2}}}"#,
    )
    .unwrap();
    let rows = harness::run_ablation::<f32>(&cfg, &[3, 5, 9]).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.kernel_size).collect::<Vec<_>>(),
        [3, 5, 9]
    );
    assert!(rows.windows(2).all(|w| w[0].flops_g < w[1].flops_g));
    assert!(rows
        .windows(2)
        .all(|w| w[0].receptive_field < w[1].receptive_field));
    assert!(harness::run_ablation::<f32>(&cfg, &[]).is_err());
}

#[test]
fn diverging_run_reports_the_step() {
    let cfg = tiny(|v| v["optimizer"] = serde_json::json!({"kind": "sgd", "max_lr": 1e30}));
    let dir = tempfile::tempdir().unwrap();
    match harness::run_training::<f32>(&cfg, dir.path()) {
        Err(Error::NonFiniteLoss { step }) => assert!(step > 0 && step < 6),
        other => panic!("{:?}", other.map(|o| o.len())),
    }
    assert!(!Path::new(&dir.path().join("model.lcv")).exists());
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        RunConfig::load(&p)
            .and_then(RunConfig::resolve)
            .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        n += 1;
    }
    assert!(n >= 5);
}
