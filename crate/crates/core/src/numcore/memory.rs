//! Byte accounting for tensor payloads.
//!
//! Every [`Buffer`] registers its payload size on allocation and releases it on
//! drop, and FFT convolutions register their complex scratch for as long as it
//! is held. Counters are kept per thread so concurrent test threads and
//! benchmark workers do not see each other's allocations. Shapes and tape
//! bookkeeping are not counted.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};

thread_local! {
    static LIVE: Cell<u64> = const { Cell::new(0) };
    static PEAK: Cell<u64> = const { Cell::new(0) };
    static COUNT: Cell<u64> = const { Cell::new(0) };
}

/// Snapshot of the calling thread's tensor memory counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemoryLedger {
    pub live_bytes: u64,
    pub peak_bytes: u64,
    pub allocation_count: u64,
}

pub fn memory_stats() -> MemoryLedger {
    MemoryLedger {
        live_bytes: LIVE.with(Cell::get),
        peak_bytes: PEAK.with(Cell::get),
        allocation_count: COUNT.with(Cell::get),
    }
}

/// Lowers the high-water mark to the current live byte count.
pub fn reset_peak() {
    let live = LIVE.with(Cell::get);
    PEAK.with(|p| p.set(live));
}

fn record_alloc(bytes: u64) {
    let live = LIVE.with(|l| {
        let v = l.get() + bytes;
        l.set(v);
        v
    });
    PEAK.with(|p| {
        if live > p.get() {
            p.set(live);
        }
    });
    COUNT.with(|c| c.set(c.get() + 1));
}

fn record_free(bytes: u64) {
    // A buffer released on a thread other than the one that allocated it
    // cannot push that thread's counter below zero.
    LIVE.with(|l| l.set(l.get().saturating_sub(bytes)));
}

/// Accounts for transient working memory that is not a tensor payload.
pub(crate) struct Scratch(u64);

impl Scratch {
    pub(crate) fn new(bytes: u64) -> Self {
        record_alloc(bytes);
        Scratch(bytes)
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        record_free(self.0);
    }
}

/// An accounted `f64` payload.
#[derive(Debug, PartialEq)]
pub struct Buffer {
    data: Vec<f64>,
}

impl Buffer {
    pub fn new(data: Vec<f64>) -> Self {
        record_alloc(Self::bytes_of(data.len()));
        Buffer { data }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn bytes(&self) -> u64 {
        Self::bytes_of(self.data.len())
    }

    fn bytes_of(len: usize) -> u64 {
        (len * std::mem::size_of::<f64>()) as u64
    }

    pub fn into_vec(mut self) -> Vec<f64> {
        record_free(self.bytes());
        std::mem::take(&mut self.data)
    }
}

impl Clone for Buffer {
    fn clone(&self) -> Self {
        Buffer::new(self.data.clone())
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        record_free(Self::bytes_of(self.data.len()));
    }
}

impl Deref for Buffer {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Buffer {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}
