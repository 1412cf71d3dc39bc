//! Core algorithms for generating ground-truth trajectories of ground sensor
//! rigs against airborne LiDAR.
//!
//! Mobile LiDAR submaps are registered to an airborne reference cloud whose
//! missing façades are completed from roof hulls, and the resulting aerial
//! constraints are fused with odometry, IMU preintegration, GNSS and loop
//! closures in a batch pose graph solved by sparse Levenberg-Marquardt.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the
//! pipeline runner and the command line live in the `aerogt` crate.

#![no_std]
// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod cloud;
pub mod factors;
pub mod geom;
pub mod metrics;
pub mod preint;
pub mod registration;
pub mod sim;
pub mod solver;
pub mod spatial;

pub use geom::{RigidTransform, Rotation3, State, Vec3};
