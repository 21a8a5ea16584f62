//! Task queue, worker pool, the Force protocol and concurrent summation.

mod clock;
mod force;
mod pool;
mod queue;
mod sum;

pub use force::{ForceAction, ForceStats, UpdateCell, UpdateState};
pub use pool::{run_workers, WorkerStats};
pub use queue::{BucketQueue, QueueStats, Ticket};
pub use sum::{Accumulate, GuardStats, SumAccumulator};
