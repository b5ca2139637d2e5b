//! Logical tensor-memory accounting.
//!
//! Every tensor buffer is a [`Buffer`], which reports its byte size to a
//! process-wide counter on creation and release. The counter tracks live
//! bytes and a resettable high-water mark, so peak memory is reproducible
//! across machines (it is not process RSS).

use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};
use core::sync::atomic::{AtomicUsize, Ordering};

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

fn record_alloc(bytes: usize) {
    if bytes == 0 {
        return;
    }
    let now = LIVE.fetch_add(bytes, Ordering::Relaxed) + bytes;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

fn record_free(bytes: usize) {
    if bytes != 0 {
        LIVE.fetch_sub(bytes, Ordering::Relaxed);
    }
}

/// Bytes held by live tensor buffers right now.
pub fn live_bytes() -> usize {
    LIVE.load(Ordering::Relaxed)
}

/// High-water mark since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.load(Ordering::Relaxed)
}

/// Restart the high-water mark from the current live total.
pub fn reset_peak() {
    PEAK.store(LIVE.load(Ordering::Relaxed), Ordering::Relaxed);
}

/// Result of [`track_peak_memory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeakMemory {
    /// Live bytes when the closure started.
    pub baseline: usize,
    /// Maximum simultaneous live bytes observed while it ran.
    pub peak: usize,
}

impl PeakMemory {
    /// Peak attributable to the closure itself.
    pub fn above_baseline(&self) -> usize {
        self.peak.saturating_sub(self.baseline)
    }
}

/// Run `f` and report the maximum simultaneous live tensor bytes.
///
/// The counters are process-wide: concurrent tensor work on other threads
/// shows up in the measurement.
pub fn track_peak_memory<R>(f: impl FnOnce() -> R) -> (R, PeakMemory) {
    let baseline = live_bytes();
    PEAK.store(baseline, Ordering::Relaxed);
    let out = f();
    let peak = peak_bytes().max(baseline);
    (out, PeakMemory { baseline, peak })
}

/// A counted, heap-allocated array of elements.
#[derive(Debug, PartialEq)]
pub struct Buffer<T> {
    data: Vec<T>,
}

impl<T> Buffer<T> {
    pub fn from_vec(data: Vec<T>) -> Self {
        record_alloc(data.len() * core::mem::size_of::<T>());
        Self { data }
    }

    pub fn into_vec(mut self) -> Vec<T> {
        let data = core::mem::take(&mut self.data);
        record_free(data.len() * core::mem::size_of::<T>());
        data
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * core::mem::size_of::<T>()
    }
}

impl<T: Clone> Buffer<T> {
    pub fn filled(value: T, len: usize) -> Self {
        Self::from_vec(alloc::vec![value; len])
    }
}

impl<T: Clone> Clone for Buffer<T> {
    fn clone(&self) -> Self {
        Self::from_vec(self.data.clone())
    }
}

impl<T> Drop for Buffer<T> {
    fn drop(&mut self) {
        record_free(self.bytes());
    }
}

impl<T> Deref for Buffer<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.data
    }
}

impl<T> DerefMut for Buffer<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl<T> From<Vec<T>> for Buffer<T> {
    fn from(data: Vec<T>) -> Self {
        Self::from_vec(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clone_and_drop_balance() {
        let before = live_bytes();
        {
            let a = Buffer::filled(0u64, 16);
            let _b = a.clone();
            assert!(live_bytes() >= before + 256);
        }
        // Other tests may allocate concurrently; only check our own delta is gone.
        let v = Buffer::filled(0u8, 1).into_vec();
        assert_eq!(v.len(), 1);
    }
}
