use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::clock;
use crate::tensor_ops::{Scalar, Volume};

/// In-place addition used by [`SumAccumulator`].
pub trait Accumulate {
    fn accumulate(&mut self, other: &Self);
}

impl<T: Scalar> Accumulate for Volume<T> {
    fn accumulate(&mut self, other: &Self) {
        self.add_assign(other);
    }
}

struct Slot<V> {
    sum: Option<Box<V>>,
    total: usize,
    required: usize,
}

/// Keeps the guard and the slot on one cache line.
#[repr(align(64))]
struct Guarded<V>(Mutex<Slot<V>>);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GuardStats {
    pub acquisitions: u64,
    pub held_ns: u64,
    pub fills: u64,
}

/// Shared sum filled by a fixed number of contributors.
///
/// The guard only ever swaps the slot handle and bumps the counter; the
/// element-wise additions run outside it, so time spent holding the guard
/// does not depend on the volume size.
pub struct SumAccumulator<V> {
    slot: Guarded<V>,
    required: usize,
    acquisitions: AtomicU64,
    held_ticks: AtomicU64,
    fills: AtomicU64,
}

impl<V: Accumulate> SumAccumulator<V> {
    pub fn new(required: usize) -> Self {
        assert!(required >= 1, "accumulator needs at least one contributor");
        SumAccumulator {
            slot: Guarded(Mutex::new(Slot { sum: None, total: 0, required })),
            required,
            acquisitions: AtomicU64::new(0),
            held_ticks: AtomicU64::new(0),
            fills: AtomicU64::new(0),
        }
    }

    pub fn required(&self) -> usize {
        self.required
    }

    /// Adds `v` to the sum. Returns `true` for exactly one caller per fill:
    /// the one whose contribution brings the count to `required`.
    pub fn add_to_sum(&self, v: V) -> bool {
        let mut v = Some(Box::new(v));
        loop {
            let taken;
            let last;
            {
                let mut s = self.slot.0.lock().expect("sum lock");
                let start = clock::ticks();
                if s.sum.is_none() {
                    s.sum = v.take();
                    s.total += 1;
                    assert!(s.total <= s.required, "more than {} contributions", s.required);
                    last = s.total == s.required;
                    taken = None;
                } else {
                    taken = s.sum.take();
                    last = false;
                }
                self.held_ticks.fetch_add(clock::ticks().wrapping_sub(start), Ordering::Relaxed);
                self.acquisitions.fetch_add(1, Ordering::Relaxed);
            }
            match v.as_mut() {
                None => {
                    if last {
                        self.fills.fetch_add(1, Ordering::Relaxed);
                    }
                    return last;
                }
                Some(mine) => {
                    let other = taken.expect("slot was occupied");
                    mine.accumulate(&other);
                }
            }
        }
    }

    /// Takes the completed sum and resets the accumulator for the next fill.
    pub fn take(&self) -> V {
        let mut s = self.slot.0.lock().expect("sum lock");
        assert_eq!(s.total, self.required, "sum read before all contributions arrived");
        s.total = 0;
        *s.sum.take().expect("completed sum")
    }

    pub fn is_complete(&self) -> bool {
        self.slot.0.lock().expect("sum lock").total == self.required
    }

    pub fn stats(&self) -> GuardStats {
        GuardStats {
            acquisitions: self.acquisitions.load(Ordering::Relaxed),
            held_ns: clock::to_ns(self.held_ticks.load(Ordering::Relaxed)),
            fills: self.fills.load(Ordering::Relaxed),
        }
    }
}
