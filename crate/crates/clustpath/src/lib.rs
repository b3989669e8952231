//! Convex clustering and bi-clustering with full regularization paths.
//!
//! The toolkit solves the convex clustering problem
//!
//! ```text
//!   minimize_U  1/2 ||X - U||_F^2  +  lambda * sum_l w_l ||U_i(l). - U_j(l).||_q
//! ```
//!
//! over the rows of a data matrix `X`, where the sum runs over a sparse
//! weight graph of observation pairs. Two families of path algorithms are
//! provided:
//!
//! * exact solvers ([`solver`]): warm-started ADMM and AMA over a
//!   multiplicative grid of `lambda` values, run to convergence at each
//!   grid point;
//! * algorithmically regularized paths ([`carp`], [`cbass`]): a single
//!   ADMM update per grid value, which traces the same path at a fraction
//!   of the cost and, in the back-tracking variant, resolves every fusion
//!   individually so the full dendrogram is recovered.
//!
//! Fusion events along a path are assembled into dendrograms
//! ([`dendrogram`]) and compared with path metrics ([`metrics`]).
//! [`dataio`] holds matrix I/O and the synthetic benchmark generators,
//! and [`weights`] builds the sparse Gaussian-kernel weight graph that
//! everything downstream consumes.

pub mod carp;
pub mod cbass;
pub mod dataio;
pub mod dendrogram;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod prox;
pub mod solver;
mod uf;
pub mod weights;

pub use carp::{CarpPath, FusionEvent, FusionKind, PathConfig};
pub use cbass::{BiClusterState, CbassPath};
pub use dataio::{DataMatrix, Partition};
pub use dendrogram::{Dendrogram, MergeRecord, NodeRef};
pub use error::{Error, Result};
pub use metrics::PathDistanceReport;
pub use prox::{Norm, PenaltySpec};
pub use solver::{GridPathResult, SolverState};
pub use weights::{KernelScale, WeightGraph, WeightedEdge};
