//! Forward and backward kernels of the primitive operations.
//!
//! Every function here is pure. The autodiff tape in [`crate::tape`] wires
//! them together; the kernels are also usable directly.

pub mod consensus;
pub mod conv;
pub mod dense;
pub mod elementwise;
pub mod norm;
pub mod pool;

pub use consensus::{tsn_consensus, tsn_consensus_backward};
pub use conv::{
    conv2d, conv2d_backward, conv3d_plane, conv3d_plane_backward, window_extent, Conv2dGeometry,
};
pub use dense::{argmax_rows, linear, linear_backward, softmax_cross_entropy};
pub use elementwise::{
    activation_backward, activation_map, dropout_mask, hadamard_broadcast,
    hadamard_broadcast_backward, shift_bw, shift_fw, temporal_shift, Activation, ShiftDirection,
};
pub use norm::{batch_norm, batch_norm_backward, BatchStats, NormMode, BN_EPS, BN_MOMENTUM};
pub use pool::{pool, pool_backward, PoolGeometry, PoolKind};
