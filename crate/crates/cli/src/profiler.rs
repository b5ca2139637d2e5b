//! Wall-clock throughput and tensor-memory measurement.

use std::time::Instant;

use longconv_core::memory;

use crate::error::{Error, Result};

/// Repetitions used when a caller does not choose.
pub const DEFAULT_REPS: usize = 3;

/// Steps per second of `step`, the median over `reps` timed windows of
/// `n_steps` calls each. The first `warmup_steps` calls run untimed. The
/// closure receives a running step index.
pub fn measure_throughput<E>(
    mut step: impl FnMut(usize) -> std::result::Result<(), E>,
    n_steps: usize,
    warmup_steps: usize,
    reps: usize,
) -> Result<f64>
where
    Error: From<E>,
{
    if n_steps == 0 {
        return Err(Error::Invalid(
            "measure_throughput needs n_steps >= 1".into(),
        ));
    }
    let reps = reps.max(DEFAULT_REPS);
    let mut index = 0;
    for _ in 0..warmup_steps {
        step(index)?;
        index += 1;
    }
    let mut rates = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for _ in 0..n_steps {
            step(index)?;
            index += 1;
        }
        let secs = start.elapsed().as_secs_f64().max(1e-12);
        rates.push(n_steps as f64 / secs);
    }
    Ok(median(&mut rates))
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Maximum live tensor bytes while `run` executes, above what was live
/// before it started.
pub fn track_peak_memory<R>(run: impl FnOnce() -> R) -> (R, usize) {
    let (out, peak) = memory::track_peak_memory(run);
    (out, peak.above_baseline())
}
