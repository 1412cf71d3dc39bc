//! Dataset IO, the ground-truth pipeline and the `aerogt` command line,
//! built on [`aerogt_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataio;
pub mod pipeline;
pub mod report;

pub use aerogt_core as core;
