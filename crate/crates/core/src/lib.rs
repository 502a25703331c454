//! Peeling-decoder analysis and simulation for multi-edge-type LDPC
//! ensembles on the binary erasure channel.

// `!(x > 0.0)` is used to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decoder;
pub mod ensemble;
pub mod evolution;
pub mod harness;
pub mod pathsim;
