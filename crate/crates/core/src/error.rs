use std::io;

/// Errors produced by the certification engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("graph has no edges")]
    EmptyGraph,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("scenario validation failed: node {node} has no fixed outgoing edge")]
    NoFixedOutEdge { node: usize },

    #[error("scenario validation failed: {0}")]
    InvalidScenario(String),

    #[error("node {node} has zero out-degree")]
    ZeroDegree { node: usize },

    #[error("edge ({src}, {dst}) is not in the fragile set")]
    NotFragile { src: usize, dst: usize },

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("policy iteration exceeded {cap} iterations without a stable policy")]
    IterationCap {
        cap: usize,
        /// Value vector of every evaluated policy, oldest first.
        trace: Vec<Vec<f64>>,
    },

    #[error(
        "upper bound undefined at node {node}: all {degree} outgoing edges are fragile; \
         add a fixed outgoing edge or shrink its fragile set"
    )]
    BoundUndefined { node: usize, degree: usize },

    #[error("enumeration limited to 20 fragile edges, got {0}")]
    EnumerationCap(usize),

    #[error("linear program is malformed: {0}")]
    MalformedLp(String),

    #[error("numerical breakdown in LP solve: {0}")]
    LpNumerical(String),

    #[error("unexpected LP status {status} for a {context} instance")]
    LpStatus { status: String, context: String },

    #[error("unknown variable `{0}` in solution file")]
    UnknownVariable(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("training diverged at epoch {epoch} (last finite loss {last_finite_loss})")]
    Diverged {
        epoch: usize,
        last_finite_loss: f64,
        /// Flattened parameters from the last epoch with a finite loss.
        last_finite_params: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
