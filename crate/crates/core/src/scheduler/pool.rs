use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::Instant;

use crate::error::{Error, Result};

use super::queue::BucketQueue;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorkerStats {
    /// Tasks popped by each worker.
    pub tasks: Vec<u64>,
    /// Nanoseconds each worker spent inside blocking pops.
    pub idle_ns: Vec<u64>,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".into()
    }
}

/// Runs `threads` workers that pop from `queue` until it drains.
///
/// `exec(worker, key, item)` runs each popped item. The first error or panic
/// closes the queue, lets the other workers finish their current item, and
/// is returned.
pub fn run_workers<T: Send>(
    queue: &BucketQueue<T>,
    threads: usize,
    exec: impl Fn(usize, u64, T) -> Result<()> + Sync,
) -> Result<WorkerStats> {
    assert!(threads >= 1, "need at least one worker");
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let per_worker: Vec<(u64, u64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let exec = &exec;
                let failure = &failure;
                scope.spawn(move || {
                    let (mut tasks, mut idle) = (0u64, 0u64);
                    loop {
                        let t0 = Instant::now();
                        let Some((key, item)) = queue.pop_blocking() else { break };
                        idle += t0.elapsed().as_nanos() as u64;
                        tasks += 1;
                        let res = catch_unwind(AssertUnwindSafe(|| exec(w, key, item)));
                        let err = match res {
                            Ok(Ok(())) => None,
                            Ok(Err(e)) => Some(e),
                            Err(p) => Some(Error::Worker(format!("worker {w}: {}", panic_message(p)))),
                        };
                        queue.task_done();
                        if let Some(e) = err {
                            failure.lock().expect("failure lock").get_or_insert(e);
                            queue.close();
                            break;
                        }
                    }
                    (tasks, idle)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker thread")).collect()
    });
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    Ok(WorkerStats {
        tasks: per_worker.iter().map(|p| p.0).collect(),
        idle_ns: per_worker.iter().map(|p| p.1).collect(),
    })
}
