use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use crate::tensor_ops::{Dim3, Scalar};

use super::Spectrum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MemoOwner {
    Node(usize),
    Edge(usize),
}

/// Purpose of a cached spectrum. Without memoization the backward and update
/// passes use their own roles instead of the forward ones, so nothing is
/// shared across passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MemoRole {
    ForwardImage,
    BackwardImage,
    Kernel,
    BackwardKernel,
    UpdateImage,
    UpdateGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MemoKey {
    pub epoch: u64,
    pub owner: MemoOwner,
    pub role: MemoRole,
    pub box_dims: Dim3,
}

type Slot<T> = Arc<OnceLock<Arc<Spectrum<T>>>>;

/// Frequency-domain images cached within an iteration.
///
/// Each entry is computed exactly once by whichever task asks first; later
/// readers block on the same `OnceLock` only while it is being filled.
pub struct MemoStore<T: Scalar> {
    slots: Mutex<HashMap<MemoKey, Slot<T>>>,
    computed: AtomicU64,
    reused: AtomicU64,
}

impl<T: Scalar> Default for MemoStore<T> {
    fn default() -> Self {
        MemoStore { slots: Mutex::new(HashMap::new()), computed: AtomicU64::new(0), reused: AtomicU64::new(0) }
    }
}

impl<T: Scalar> MemoStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute(&self, key: MemoKey, f: impl FnOnce() -> Spectrum<T>) -> Arc<Spectrum<T>> {
        let slot = Arc::clone(self.slots.lock().expect("memo lock").entry(key).or_default());
        let mut fresh = false;
        let spec = slot.get_or_init(|| {
            fresh = true;
            Arc::new(f())
        });
        if fresh {
            self.computed.fetch_add(1, Ordering::Relaxed);
        } else {
            self.reused.fetch_add(1, Ordering::Relaxed);
        }
        Arc::clone(spec)
    }

    pub fn contains(&self, key: &MemoKey) -> bool {
        self.slots.lock().expect("memo lock").get(key).is_some_and(|s| s.get().is_some())
    }

    /// Drops every entry owned by `owner` (a kernel whose weights just changed).
    pub fn evict_owner(&self, owner: MemoOwner) {
        self.slots.lock().expect("memo lock").retain(|k, _| k.owner != owner);
    }

    pub fn evict_before(&self, epoch: u64) {
        self.slots.lock().expect("memo lock").retain(|k, _| k.epoch >= epoch);
    }

    pub fn clear(&self) {
        self.slots.lock().expect("memo lock").clear();
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("memo lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(computed, reused)` lookup counts.
    pub fn hits(&self) -> (u64, u64) {
        (self.computed.load(Ordering::Relaxed), self.reused.load(Ordering::Relaxed))
    }
}
