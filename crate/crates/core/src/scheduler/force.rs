use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::queue::Ticket;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateState {
    Completed,
    Queued(Ticket),
    Executing,
}

/// What the forcing worker must do next.
#[derive(Debug)]
pub enum ForceAction<S> {
    /// The update already ran; execute the subtask now.
    Run(S),
    /// The update was pulled out of the queue: run it, call
    /// [`UpdateCell::finish`], then run the subtask.
    RunUpdateThen(S),
    /// The subtask was handed to the worker executing the update.
    Attached,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForceStats {
    pub completed: u64,
    pub queued: u64,
    pub executing: u64,
    /// Queued case where a worker had already popped the update.
    pub lost_races: u64,
}

struct Cell<S> {
    state: UpdateState,
    attached: Option<S>,
}

/// Update-task state for one trainable edge, plus the forward subtask that
/// may be attached to it.
pub struct UpdateCell<S> {
    cell: Mutex<Cell<S>>,
    completed: AtomicU64,
    queued: AtomicU64,
    executing: AtomicU64,
    lost_races: AtomicU64,
}

impl<S> Default for UpdateCell<S> {
    fn default() -> Self {
        UpdateCell {
            cell: Mutex::new(Cell { state: UpdateState::Completed, attached: None }),
            completed: AtomicU64::new(0),
            queued: AtomicU64::new(0),
            executing: AtomicU64::new(0),
            lost_races: AtomicU64::new(0),
        }
    }
}

impl<S> UpdateCell<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> UpdateState {
        self.cell.lock().expect("update lock").state
    }

    /// Records that the update task was enqueued under `t`.
    pub fn mark_queued(&self, t: Ticket) {
        let mut c = self.cell.lock().expect("update lock");
        assert_eq!(c.state, UpdateState::Completed, "update enqueued while previous one pending");
        c.state = UpdateState::Queued(t);
    }

    /// Enqueues the update via `push` while holding the guard, so no worker
    /// can pop it before its state reads `Queued`.
    pub fn enqueue_with(&self, push: impl FnOnce() -> Ticket) {
        let mut c = self.cell.lock().expect("update lock");
        assert_eq!(c.state, UpdateState::Completed, "update enqueued while previous one pending");
        c.state = UpdateState::Queued(push());
    }

    /// Called by a worker that popped the update from the queue.
    pub fn begin(&self) {
        let mut c = self.cell.lock().expect("update lock");
        assert!(matches!(c.state, UpdateState::Queued(_)), "update dequeued in state {:?}", c.state);
        c.state = UpdateState::Executing;
    }

    /// Marks the update completed and hands back an attached subtask, if any.
    pub fn finish(&self) -> Option<S> {
        let mut c = self.cell.lock().expect("update lock");
        assert_eq!(c.state, UpdateState::Executing, "finish outside execution");
        c.state = UpdateState::Completed;
        c.attached.take()
    }

    /// Ensures the update runs before `sub` without ever waiting for it.
    /// `remove` pulls the queued update out of the task queue.
    pub fn force(&self, sub: S, remove: impl FnOnce(Ticket) -> bool) -> ForceAction<S> {
        let mut c = self.cell.lock().expect("update lock");
        match c.state {
            UpdateState::Completed => {
                self.completed.fetch_add(1, Ordering::Relaxed);
                ForceAction::Run(sub)
            }
            UpdateState::Queued(t) => {
                self.queued.fetch_add(1, Ordering::Relaxed);
                if remove(t) {
                    c.state = UpdateState::Executing;
                    ForceAction::RunUpdateThen(sub)
                } else {
                    // A worker popped it and is about to call `begin`.
                    self.lost_races.fetch_add(1, Ordering::Relaxed);
                    assert!(c.attached.is_none(), "double attachment");
                    c.attached = Some(sub);
                    ForceAction::Attached
                }
            }
            UpdateState::Executing => {
                self.executing.fetch_add(1, Ordering::Relaxed);
                assert!(c.attached.is_none(), "double attachment");
                c.attached = Some(sub);
                ForceAction::Attached
            }
        }
    }

    pub fn stats(&self) -> ForceStats {
        ForceStats {
            completed: self.completed.load(Ordering::Relaxed),
            queued: self.queued.load(Ordering::Relaxed),
            executing: self.executing.load(Ordering::Relaxed),
            lost_races: self.lost_races.load(Ordering::Relaxed),
        }
    }
}

impl std::ops::Add for ForceStats {
    type Output = ForceStats;

    fn add(self, o: ForceStats) -> ForceStats {
        ForceStats {
            completed: self.completed + o.completed,
            queued: self.queued + o.queued,
            executing: self.executing + o.executing,
            lost_races: self.lost_races + o.lost_races,
        }
    }
}
