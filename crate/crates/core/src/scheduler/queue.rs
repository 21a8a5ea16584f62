use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::sync::{Condvar, Mutex};

/// Handle for removing a specific queued item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Ticket {
    key: u64,
    id: u64,
}

impl Ticket {
    pub fn key(&self) -> u64 {
        self.key
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub pushed: u64,
    pub popped: u64,
    pub removed: u64,
}

struct Inner<T> {
    heap: BinaryHeap<Reverse<u64>>,
    buckets: HashMap<u64, VecDeque<(u64, T)>>,
    // ids still in the queue; a removed id stays in its bucket as a tombstone
    queued: HashSet<u64>,
    next_id: u64,
    outstanding: usize,
    closed: bool,
    stats: QueueStats,
}

/// Priority queue implemented as a heap of FIFO lists, one list per distinct
/// key. Smaller keys are served first. Push, pop and removal cost
/// `O(log K)` in the number of distinct live keys.
///
/// The queue also counts outstanding work: a pushed item stays outstanding
/// until the worker that popped it calls [`task_done`](Self::task_done), so
/// blocking pops can tell an idle moment from the end of the run.
pub struct BucketQueue<T> {
    inner: Mutex<Inner<T>>,
    ready: Condvar,
}

impl<T> Default for BucketQueue<T> {
    fn default() -> Self {
        BucketQueue {
            inner: Mutex::new(Inner {
                heap: BinaryHeap::new(),
                buckets: HashMap::new(),
                queued: HashSet::new(),
                next_id: 0,
                outstanding: 0,
                closed: false,
                stats: QueueStats::default(),
            }),
            ready: Condvar::new(),
        }
    }
}

impl<T> BucketQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, key: u64, item: T) -> Ticket {
        let mut q = self.inner.lock().expect("queue lock");
        let id = q.next_id;
        q.next_id += 1;
        match q.buckets.get_mut(&key) {
            Some(b) => b.push_back((id, item)),
            None => {
                q.buckets.insert(key, VecDeque::from([(id, item)]));
                q.heap.push(Reverse(key));
            }
        }
        q.queued.insert(id);
        q.outstanding += 1;
        q.stats.pushed += 1;
        drop(q);
        self.ready.notify_one();
        Ticket { key, id }
    }

    fn pop_locked(q: &mut Inner<T>) -> Option<(u64, T)> {
        while let Some(&Reverse(key)) = q.heap.peek() {
            let bucket = q.buckets.get_mut(&key).expect("bucket for heap key");
            let mut found = None;
            while let Some((id, item)) = bucket.pop_front() {
                if q.queued.remove(&id) {
                    found = Some(item);
                    break;
                }
            }
            if bucket.is_empty() {
                q.buckets.remove(&key);
                q.heap.pop();
            }
            if let Some(item) = found {
                q.stats.popped += 1;
                return Some((key, item));
            }
        }
        None
    }

    /// Highest-priority item, or `None` if the queue is empty.
    pub fn try_pop(&self) -> Option<(u64, T)> {
        Self::pop_locked(&mut self.inner.lock().expect("queue lock"))
    }

    /// Blocks until an item is available. Returns `None` once the queue is
    /// closed, or once it is empty with no outstanding work left.
    pub fn pop_blocking(&self) -> Option<(u64, T)> {
        let mut q = self.inner.lock().expect("queue lock");
        loop {
            if q.closed {
                return None;
            }
            if let Some(item) = Self::pop_locked(&mut q) {
                return Some(item);
            }
            if q.outstanding == 0 {
                drop(q);
                self.ready.notify_all();
                return None;
            }
            q = self.ready.wait(q).expect("queue lock");
        }
    }

    /// Removes the item behind `t` if it has not been popped yet.
    pub fn remove_specific(&self, t: Ticket) -> bool {
        let mut q = self.inner.lock().expect("queue lock");
        if q.queued.remove(&t.id) {
            // The remover now runs the item inside its own outstanding task.
            q.outstanding -= 1;
            q.stats.removed += 1;
            true
        } else {
            false
        }
    }

    pub fn task_done(&self) {
        let mut q = self.inner.lock().expect("queue lock");
        assert!(q.outstanding > 0, "task_done without outstanding work");
        q.outstanding -= 1;
        let finished = q.outstanding == 0;
        drop(q);
        if finished {
            self.ready.notify_all();
        }
    }

    /// Wakes every blocked worker and makes further pops return `None`.
    pub fn close(&self) {
        self.inner.lock().expect("queue lock").closed = true;
        self.ready.notify_all();
    }

    /// Number of queued (not removed, not popped) items.
    pub fn len(&self) -> usize {
        self.inner.lock().expect("queue lock").queued.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn distinct_keys(&self) -> usize {
        self.inner.lock().expect("queue lock").heap.len()
    }

    pub fn outstanding(&self) -> usize {
        self.inner.lock().expect("queue lock").outstanding
    }

    pub fn stats(&self) -> QueueStats {
        self.inner.lock().expect("queue lock").stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priority_then_fifo() {
        let q = BucketQueue::new();
        q.push(3, 'a');
        q.push(1, 'b');
        q.push(3, 'c');
        let order: Vec<char> = std::iter::from_fn(|| q.try_pop().map(|(_, c)| c)).collect();
        assert_eq!(order, ['b', 'a', 'c']);
    }

    #[test]
    fn removed_items_never_dequeue() {
        let q = BucketQueue::new();
        let t = q.push(5, "update");
        q.push(5, "other");
        assert!(q.remove_specific(t));
        assert!(!q.remove_specific(t));
        assert_eq!(q.len(), 1);
        assert_eq!(q.try_pop(), Some((5, "other")));
        assert_eq!(q.try_pop(), None);
        assert_eq!(q.distinct_keys(), 0);
    }

    #[test]
    fn popped_items_cannot_be_removed() {
        let q = BucketQueue::new();
        let t = q.push(0, 1);
        assert_eq!(q.try_pop(), Some((0, 1)));
        assert!(!q.remove_specific(t));
    }

    #[test]
    fn blocking_pop_ends_when_work_drains() {
        let q = BucketQueue::new();
        q.push(0, ());
        assert!(q.pop_blocking().is_some());
        q.task_done();
        assert!(q.pop_blocking().is_none());
    }

    #[test]
    fn close_releases_waiters() {
        let q = std::sync::Arc::new(BucketQueue::<()>::new());
        q.push(0, ());
        q.try_pop();
        let waiter = {
            let q = q.clone();
            std::thread::spawn(move || q.pop_blocking())
        };
        std::thread::sleep(std::time::Duration::from_millis(20));
        q.close();
        assert!(waiter.join().unwrap().is_none());
    }
}
