//! Power-of-two chunk pools.
//!
//! A pool keeps 32 size classes; class `i` holds free chunks of exactly `2^i`
//! bytes. A request for `s` bytes is rounded up to the next power of two and
//! served from the matching class, falling back to the system allocator when
//! the class is empty. Released chunks go back to their class and are never
//! handed back to the system while the pool is alive, so the footprint of a
//! loop that repeats the same work stops growing after a few iterations.
//!
//! Free lists are lock-free queues, one per class; there is no lock shared
//! across classes.

use std::alloc::{self, Layout};
use std::fmt;
use std::marker::PhantomData;
use std::mem;
use std::ops::{Deref, DerefMut};
use std::ptr::{self, NonNull};
use std::slice;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_queue::SegQueue;
use rustfft::num_complex::Complex;

pub const NUM_CLASSES: usize = 32;

/// Largest request a pool accepts, in bytes.
pub const MAX_CHUNK_BYTES: usize = 1 << (NUM_CLASSES - 1);

/// Alignment of the volume pool. Covers 512-bit vector loads.
pub const VOLUME_ALIGN: usize = 64;

/// Alignment of the small-object pool (enough for any scalar or complex element).
pub const SMALL_ALIGN: usize = 16;

static NEXT_POOL_ID: AtomicUsize = AtomicUsize::new(1);

/// Size class for a request of `size` bytes: `ceil(log2(size))`, with 0 and 1
/// both mapping to class 0.
pub fn size_class(size: usize) -> usize {
    if size <= 1 {
        0
    } else {
        (usize::BITS - (size - 1).leading_zeros()) as usize
    }
}

/// Capacity handed out for a request of `size` bytes.
pub fn rounded_capacity(size: usize) -> usize {
    1usize << size_class(size)
}

struct FreeChunk(NonNull<u8>);

// The pointer is owned exclusively by whichever queue slot holds it.
unsafe impl Send for FreeChunk {}

#[derive(Default)]
struct SizeClass {
    free: SegQueue<FreeChunk>,
    free_count: AtomicUsize,
    live_count: AtomicUsize,
    peak_live: AtomicUsize,
}

/// A chunk of raw memory checked out from a [`ChunkPool`].
#[derive(Debug)]
pub struct Chunk {
    ptr: NonNull<u8>,
    class: u8,
    pool_id: usize,
    requested: usize,
}

unsafe impl Send for Chunk {}
unsafe impl Sync for Chunk {}

impl Chunk {
    pub fn capacity(&self) -> usize {
        1usize << self.class
    }

    pub fn requested(&self) -> usize {
        self.requested
    }

    pub fn as_ptr(&self) -> *mut u8 {
        self.ptr.as_ptr()
    }

    /// Address of the chunk, used to observe reuse.
    pub fn addr(&self) -> usize {
        self.ptr.as_ptr() as usize
    }
}

/// Snapshot of pool counters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PoolStats {
    /// Number of chunks ever obtained from the system allocator.
    pub system_allocs: u64,
    /// Bytes ever obtained from the system allocator (the pool footprint).
    pub system_bytes: u64,
    /// Bytes requested by callers for chunks currently checked out.
    pub live_bytes: u64,
    /// Highest `live_bytes` seen since the pool was created.
    pub peak_live_bytes: u64,
    pub live_chunks: usize,
    pub free_chunks: usize,
    /// `(live, free)` chunk counts per size class.
    pub per_class: Vec<(usize, usize)>,
}

pub struct ChunkPool {
    id: usize,
    align: usize,
    classes: Vec<SizeClass>,
    system_allocs: AtomicU64,
    system_bytes: AtomicU64,
    live_bytes: AtomicU64,
    peak_live_bytes: AtomicU64,
    aux: Option<Arc<ChunkPool>>,
}

impl fmt::Debug for ChunkPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChunkPool")
            .field("id", &self.id)
            .field("align", &self.align)
            .field("system_bytes", &self.system_bytes.load(Ordering::Relaxed))
            .finish()
    }
}

impl ChunkPool {
    pub fn new(align: usize) -> Self {
        assert!(align.is_power_of_two(), "alignment must be a power of two");
        ChunkPool {
            id: NEXT_POOL_ID.fetch_add(1, Ordering::Relaxed),
            align,
            classes: (0..NUM_CLASSES).map(|_| SizeClass::default()).collect(),
            system_allocs: AtomicU64::new(0),
            system_bytes: AtomicU64::new(0),
            live_bytes: AtomicU64::new(0),
            peak_live_bytes: AtomicU64::new(0),
            aux: None,
        }
    }

    /// A 64-byte aligned pool for volumes and spectra. It owns a separate
    /// small-object pool reachable through [`ChunkPool::aux`]; the two never
    /// share memory.
    pub fn for_volumes() -> Arc<Self> {
        let mut pool = ChunkPool::new(VOLUME_ALIGN);
        pool.aux = Some(Arc::new(ChunkPool::new(SMALL_ALIGN)));
        Arc::new(pool)
    }

    pub fn for_small_objects() -> Arc<Self> {
        Arc::new(ChunkPool::new(SMALL_ALIGN))
    }

    /// The pool used for auxiliary objects (argmax records). Pools without a
    /// companion return themselves.
    pub fn aux(self: &Arc<Self>) -> Arc<ChunkPool> {
        match &self.aux {
            Some(aux) => Arc::clone(aux),
            None => Arc::clone(self),
        }
    }

    pub fn alignment(&self) -> usize {
        self.align
    }

    pub fn acquire(&self, size: usize) -> Chunk {
        assert!(size <= MAX_CHUNK_BYTES, "chunk request of {size} bytes exceeds the largest size class");
        let class = size_class(size);
        let slot = &self.classes[class];
        let ptr = match slot.free.pop() {
            Some(FreeChunk(ptr)) => {
                slot.free_count.fetch_sub(1, Ordering::Relaxed);
                ptr
            }
            None => self.system_alloc(class),
        };
        let in_class = slot.live_count.fetch_add(1, Ordering::Relaxed) + 1;
        slot.peak_live.fetch_max(in_class, Ordering::Relaxed);
        let live = self.live_bytes.fetch_add(size as u64, Ordering::Relaxed) + size as u64;
        self.peak_live_bytes.fetch_max(live, Ordering::Relaxed);
        Chunk { ptr, class: class as u8, pool_id: self.id, requested: size }
    }

    /// Tops every class that has been used up so it owns at least
    /// `peak + max(ceil(peak * headroom), min_extra)` chunks, where `peak` is
    /// the most chunks of that class ever live at once. Meant to be called
    /// between runs, after a few representative iterations. Returns the
    /// number of chunks allocated.
    pub fn reserve_headroom(&self, headroom: f64, min_extra: usize) -> usize {
        let mut added = 0;
        for (class, slot) in self.classes.iter().enumerate() {
            let peak = slot.peak_live.load(Ordering::Relaxed);
            if peak == 0 {
                continue;
            }
            let target = peak + ((peak as f64 * headroom).ceil() as usize).max(min_extra);
            let owned = slot.live_count.load(Ordering::Relaxed) + slot.free_count.load(Ordering::Relaxed);
            for _ in owned..target {
                slot.free.push(FreeChunk(self.system_alloc(class)));
                slot.free_count.fetch_add(1, Ordering::Relaxed);
                added += 1;
            }
        }
        added
    }

    pub fn release(&self, chunk: Chunk) {
        debug_assert_eq!(chunk.pool_id, self.id, "chunk released into a pool it did not come from");
        let slot = &self.classes[chunk.class as usize];
        slot.live_count.fetch_sub(1, Ordering::Relaxed);
        self.live_bytes.fetch_sub(chunk.requested as u64, Ordering::Relaxed);
        slot.free.push(FreeChunk(chunk.ptr));
        slot.free_count.fetch_add(1, Ordering::Relaxed);
    }

    pub fn stats(&self) -> PoolStats {
        let per_class: Vec<(usize, usize)> = self
            .classes
            .iter()
            .map(|c| (c.live_count.load(Ordering::Relaxed), c.free_count.load(Ordering::Relaxed)))
            .collect();
        PoolStats {
            system_allocs: self.system_allocs.load(Ordering::Relaxed),
            system_bytes: self.system_bytes.load(Ordering::Relaxed),
            live_bytes: self.live_bytes.load(Ordering::Relaxed),
            peak_live_bytes: self.peak_live_bytes.load(Ordering::Relaxed),
            live_chunks: per_class.iter().map(|c| c.0).sum(),
            free_chunks: per_class.iter().map(|c| c.1).sum(),
            per_class,
        }
    }

    fn layout(&self, class: usize) -> Layout {
        Layout::from_size_align(1usize << class, self.align).expect("valid chunk layout")
    }

    fn system_alloc(&self, class: usize) -> NonNull<u8> {
        let layout = self.layout(class);
        // SAFETY: layout has non-zero size.
        let raw = unsafe { alloc::alloc(layout) };
        let ptr = NonNull::new(raw).unwrap_or_else(|| alloc::handle_alloc_error(layout));
        self.system_allocs.fetch_add(1, Ordering::Relaxed);
        self.system_bytes.fetch_add(layout.size() as u64, Ordering::Relaxed);
        ptr
    }
}

impl Drop for ChunkPool {
    fn drop(&mut self) {
        for class in 0..NUM_CLASSES {
            let layout = self.layout(class);
            while let Some(FreeChunk(ptr)) = self.classes[class].free.pop() {
                // SAFETY: every free chunk of this class was allocated with `layout`.
                unsafe { alloc::dealloc(ptr.as_ptr(), layout) };
            }
        }
    }
}

/// Element types that may live in pooled memory: plain data for which the
/// all-zero bit pattern is a valid value.
///
/// # Safety
/// Implementors must be `Copy`, have no drop glue, and accept all-zero bytes.
pub unsafe trait Pod: Copy + Send + Sync + 'static {}

unsafe impl Pod for f32 {}
unsafe impl Pod for f64 {}
unsafe impl Pod for u32 {}
unsafe impl Pod for u64 {}
unsafe impl Pod for usize {}
// Complex<T> is two consecutive T fields.
unsafe impl<T: Pod> Pod for Complex<T> {}

/// A zero-initialised slice of `T` backed by a pooled chunk. Dropping the
/// buffer returns the chunk to its pool.
pub struct PooledBuf<T: Pod> {
    chunk: Option<Chunk>,
    len: usize,
    pool: Arc<ChunkPool>,
    _marker: PhantomData<T>,
}

impl<T: Pod> PooledBuf<T> {
    pub fn zeroed(pool: &Arc<ChunkPool>, len: usize) -> Self {
        assert!(mem::align_of::<T>() <= pool.alignment(), "element alignment exceeds pool alignment");
        let bytes = len.checked_mul(mem::size_of::<T>()).expect("buffer size overflow");
        let chunk = pool.acquire(bytes.max(1));
        // SAFETY: the chunk holds at least `bytes` writable bytes.
        unsafe { ptr::write_bytes(chunk.as_ptr(), 0, bytes) };
        PooledBuf { chunk: Some(chunk), len, pool: Arc::clone(pool), _marker: PhantomData }
    }

    pub fn from_slice(pool: &Arc<ChunkPool>, data: &[T]) -> Self {
        let mut buf = Self::zeroed(pool, data.len());
        buf.copy_from_slice(data);
        buf
    }

    pub fn pool(&self) -> &Arc<ChunkPool> {
        &self.pool
    }

    pub fn chunk_addr(&self) -> usize {
        self.chunk.as_ref().map(Chunk::addr).unwrap_or(0)
    }
}

impl<T: Pod> Deref for PooledBuf<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        let chunk = self.chunk.as_ref().expect("live buffer");
        // SAFETY: the chunk is aligned for T, zero-initialised, and at least len*size_of::<T>() bytes.
        unsafe { slice::from_raw_parts(chunk.as_ptr() as *const T, self.len) }
    }
}

impl<T: Pod> DerefMut for PooledBuf<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        let chunk = self.chunk.as_ref().expect("live buffer");
        // SAFETY: as above; &mut self guarantees exclusive access.
        unsafe { slice::from_raw_parts_mut(chunk.as_ptr() as *mut T, self.len) }
    }
}

impl<T: Pod> Clone for PooledBuf<T> {
    fn clone(&self) -> Self {
        PooledBuf::from_slice(&self.pool, self)
    }
}

impl<T: Pod> Drop for PooledBuf<T> {
    fn drop(&mut self) {
        if let Some(chunk) = self.chunk.take() {
            self.pool.release(chunk);
        }
    }
}

impl<T: Pod + fmt::Debug> fmt::Debug for PooledBuf<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.iter()).finish()
    }
}
