//! Robustness certificates for PageRank-based node classifiers.
//!
//! The classifier's prediction at node `t` is `argmax_c π(e_t)ᵀ H[:, c]`, where
//! `π(e_t)` is the personalized PageRank vector of `t` and `H` holds per-node
//! logits. An adversary may toggle a set of fragile edges subject to per-node
//! and global budgets. This crate computes
//!
//! * exact worst-case margins under local budgets ([`policy_iter`]),
//! * sound lower bounds under local and global budgets through a linear
//!   relaxation ([`qclp_global`], [`lp_solver`]),
//! * brute-force ground truth for small instances ([`oracle`]),
//! * robust training objectives over worst-case margins ([`robust_train`]).

pub mod analysis;
pub mod error;
pub mod graph;
pub mod lp_solver;
pub mod models;
pub mod oracle;
pub mod policy_iter;
pub mod ppr;
pub mod qclp_global;
pub mod robust_train;

pub use error::{Error, Result};
pub use graph::{DirectedGraph, EdgePolicy, PerturbationScenario};

/// Margins at or below this value are not trusted to be positive.
pub const EPS_MARGIN: f64 = 1e-7;
