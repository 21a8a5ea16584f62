//! Dense 3D volumes and the non-convolutional edge operations (transfer
//! functions, max-pooling, max-filtering) with their Jacobians.

mod io;
mod pooling;
mod transfer;
mod volume;

pub use io::{load_volume, read_volume, save_volume, write_volume};
pub use pooling::{
    maxfilter_backward, maxfilter_forward, maxpool_backward, maxpool_forward, reflect, sliding_max, ArgmaxRecord,
    FilterSpec, PoolSpec,
};
pub use transfer::{
    bias_gradient, transfer_backward, transfer_forward, transfer_forward_checked, NonFinite, TransferFn, TransferKind,
};
pub use volume::{default_pool, voxels, Dim3, Scalar, Volume};
