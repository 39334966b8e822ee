//! Sparse Cholesky factors of elliptic solution operators recovered from
//! black-box solves.
//!
//! The pipeline: partition the degrees of freedom ([`geometry`]), build an
//! orthonormal Haar-type basis ([`basis`]), color basis functions so that
//! distant ones share a probe ([`coloring`]), observe `Theta M` through the
//! solver ([`measurement`]) and peel off the factor color by color
//! ([`recovery`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod basis;
pub mod coloring;
mod dense;
pub mod error;
pub mod factor;
pub mod geometry;
pub mod measurement;
pub mod oracles;
pub mod recovery;

pub use analysis::{
    build_problem, estimate_rel_error, recover, run_experiment, ErrorEstimate, ExperimentConfig, Mode, Problem,
    ProblemKind, ProblemSpec, Recovery, SweepRow,
};
pub use basis::{build_haar_basis, MultiresBasis};
pub use coloring::{aggregate_supernodes, color_simplicial, color_supernodal, Coloring, SupernodeSet};
pub use error::{Error, Result};
pub use factor::{Provenance, SparseFactor};
pub use geometry::{build_general_partition, build_regular_partition, PartitionTree, PointSet};
pub use measurement::{build_measurements, build_supernodal_measurements, observe, Measurements, ObservationSet};
pub use oracles::SolverOracle;
pub use recovery::{cholesky_recover, supernodal_cholesky_recover, truncate_low_rank, Truncation};
