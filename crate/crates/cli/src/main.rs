use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use longconv::config::{Precision, RunConfig};
use longconv::harness::{self, BenchPoint};
use longconv_core::presets::ABLATION_KERNELS;

#[derive(Parser)]
#[command(
    name = "longconv",
    version,
    about = "Dual-tower TCN experiments on long sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed (and any seed sweep).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the configured floating-point precision.
    #[arg(long, value_enum)]
    precision: Option<Precision>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.seeds.clear();
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic corpus as JSON lines.
    GenData(Common),
    /// Train, evaluate and write model.lcv, trace.csv and report.csv.
    Train(Common),
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out-dir>/model.lcv.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Measure steps/sec and peak tensor memory at given lengths.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Input lengths; the configured report length when omitted.
        #[arg(long = "len", value_delimiter = ',')]
        lens: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Time forward passes over a batch instead of training steps.
        #[arg(long)]
        inference: bool,
        /// Examples per step (8 with --inference unless set).
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Sweep the retrieval kernel size.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = ABLATION_KERNELS)]
        kernels: Vec<usize>,
    },
}

fn dispatch<T>(p: Precision, f32_fn: impl FnOnce() -> T, f64_fn: impl FnOnce() -> T) -> T {
    match p {
        Precision::F32 => f32_fn(),
        Precision::F64 => f64_fn(),
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::GenData(c) => {
            let mut cfg = c.load()?;
            if let Some(s) = c.seed {
                cfg.data.seed = s;
            }
            for p in harness::gen_data(&cfg, &c.out_dir)? {
                println!("{}", p.display());
            }
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let outs = dispatch(
                cfg.precision,
                || harness::run_training::<f32>(&cfg, &c.out_dir),
                || harness::run_training::<f64>(&cfg, &c.out_dir),
            )?;
            for o in &outs {
                let m = &o.metrics;
                println!(
                    "seed {}: quality {:.4} conv_f1 {} utt_f1 {} acc {} ({:.2} steps/s)",
                    o.report.seed,
                    o.report.quality,
                    fmt(m.conv_f1),
                    fmt(m.utt_f1),
                    fmt(m.accuracy),
                    o.report.steps_per_sec
                );
            }
            println!("wrote {}", c.out_dir.join("report.csv").display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.load()?;
            let ck = checkpoint.unwrap_or_else(|| common.out_dir.join("model.lcv"));
            let m = dispatch(
                cfg.precision,
                || harness::run_eval::<f32>(&cfg, &ck),
                || harness::run_eval::<f64>(&cfg, &ck),
            )?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Bench {
            common,
            lens,
            steps,
            warmup,
            inference,
            batch,
        } => {
            let cfg = common.load()?.resolve()?;
            let lens = if lens.is_empty() {
                vec![cfg.flops_len.unwrap_or(cfg.max_len())]
            } else {
                lens
            };
            let batch = batch.unwrap_or(if inference { 8 } else { 1 });
            let mut rows: Vec<BenchPoint> = Vec::new();
            for t in lens {
                let p = dispatch(
                    cfg.precision,
                    || harness::bench_point::<f32>(&cfg, t, batch, steps, warmup, inference),
                    || harness::bench_point::<f64>(&cfg, t, batch, steps, warmup, inference),
                )?;
                println!(
                    "{} T={} {}: {:.3} G, {:.3} steps/s, {} peak bytes",
                    p.model, p.seq_len, p.mode, p.flops_g, p.steps_per_sec, p.peak_bytes
                );
                rows.push(p);
            }
            write_csv(&common.out_dir, "bench.csv", &rows)?;
        }
        Command::Ablate { common, kernels } => {
            let cfg = common.load()?;
            let rows = dispatch(
                cfg.precision,
                || harness::run_ablation::<f32>(&cfg, &kernels),
                || harness::run_ablation::<f64>(&cfg, &kernels),
            )?;
            for r in &rows {
                println!(
                    "k={} rf={} quality {:.4} {:.3} G {:.3} steps/s {} peak bytes",
                    r.kernel_size,
                    r.receptive_field,
                    r.quality,
                    r.flops_g,
                    r.steps_per_sec,
                    r.peak_bytes
                );
            }
            write_csv(&common.out_dir, "ablation.csv", &rows)?;
        }
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn write_csv<T: serde::Serialize>(dir: &Path, name: &str, rows: &[T]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    harness::write_rows(&path, rows)?;
    println!("wrote {}", path.display());
    Ok(())
}
