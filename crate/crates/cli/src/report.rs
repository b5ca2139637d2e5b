//! Benchmark rows and the `report.csv` file.

use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Column order of `report.csv`.
pub const REPORT_HEADER: [&str; 8] = [
    "task",
    "model",
    "quality",
    "flops_g",
    "steps_per_sec",
    "peak_bytes",
    "params",
    "seed",
];

/// Quality and cost of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub task: String,
    pub model: String,
    /// Macro-F1 for conversations, accuracy otherwise, in [0, 1].
    pub quality: f64,
    /// Forward-pass giga-MACs of one example at the reported length.
    pub flops_g: f64,
    pub steps_per_sec: f64,
    pub peak_bytes: u64,
    pub params: u64,
    pub seed: u64,
}

impl BenchReport {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.quality, self.flops_g, self.steps_per_sec]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !ok || self.steps_per_sec == 0.0 {
            return Err(Error::Invalid(format!(
                "report for {}/{} has invalid metrics",
                self.task, self.model
            )));
        }
        Ok(())
    }

    fn record(&self) -> [String; 8] {
        [
            self.task.clone(),
            self.model.clone(),
            format!("{:.6}", self.quality),
            format!("{:.6}", self.flops_g),
            format!("{:.4}", self.steps_per_sec),
            self.peak_bytes.to_string(),
            self.params.to_string(),
            self.seed.to_string(),
        ]
    }
}

/// `mean (±sd)` of scores in [0, 1], shown in percent with one decimal.
/// The deviation is the sample standard deviation (0 for one value).
pub fn format_mean_sd(values: &[f64]) -> String {
    let (mean, sd) = mean_sd(values);
    format!("{:.1} (±{:.1})", 100.0 * mean, 100.0 * sd)
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// The summary line of a seed sweep: quality as `mean (±sd)`, cost columns
/// averaged, and `seed` set to `mean`.
pub fn summary_record(reports: &[BenchReport]) -> Option<[String; 8]> {
    let first = reports.first()?;
    let avg =
        |f: fn(&BenchReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    Some([
        first.task.clone(),
        first.model.clone(),
        format_mean_sd(&reports.iter().map(|r| r.quality).collect::<Vec<_>>()),
        format!("{:.6}", avg(|r| r.flops_g)),
        format!("{:.4}", avg(|r| r.steps_per_sec)),
        format!("{:.0}", avg(|r| r.peak_bytes as f64)),
        first.params.to_string(),
        "mean".into(),
    ])
}

/// Appends rows to `path`, writing the header first when the file is new or
/// empty. With more than one report a summary line follows.
pub fn append_reports(path: &Path, reports: &[BenchReport]) -> Result<()> {
    for r in reports {
        r.validate()?;
    }
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(REPORT_HEADER)?;
    }
    for r in reports {
        w.write_record(r.record())?;
    }
    if reports.len() > 1 {
        w.write_record(summary_record(reports).expect("non-empty"))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(q: f64, seed: u64) -> BenchReport {
        BenchReport {
            task: "conversations".into(),
            model: "cnn_small".into(),
            quality: q,
            flops_g: 1.5,
            steps_per_sec: 2.0,
            peak_bytes: 100,
            params: 10,
            seed,
        }
    }

    #[test]
    fn mean_sd_format() {
        assert_eq!(format_mean_sd(&[0.946, 0.952, 0.949, 0.949]), "94.9 (±0.2)");
        assert_eq!(format_mean_sd(&[0.5]), "50.0 (±0.0)");
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.290_994_448_735_805_6).abs() < 1e-15);
    }

    #[test]
    fn csv_has_header_rows_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let rows: Vec<_> = (0..4).map(|s| row(0.9 + 0.01 * s as f64, s)).collect();
        append_reports(&path, &rows).unwrap();
        append_reports(&path, &rows[..1]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "task,model,quality,flops_g,steps_per_sec,peak_bytes,params,seed"
        );
        assert_eq!(lines.len(), 1 + 4 + 1 + 1);
        assert!(lines[5].contains("91.5 (±1.3)"), "{}", lines[5]);
        assert!(lines[5].ends_with(",mean"));
    }

    #[test]
    fn rejects_zero_speed() {
        let mut r = row(0.5, 0);
        r.steps_per_sec = 0.0;
        assert!(r.validate().is_err());
    }
}
