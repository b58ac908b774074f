//! Personalized PageRank and mean-reward solves.
//!
//! With `P = D⁻¹A` the row-stochastic walk matrix, the two systems are
//!
//! > (I − αP) x = r                    (mean reward, one solve for all targets)
//! > π(z) = (1 − α)(I − αPᵀ)⁻¹ z       (PageRank vector for teleport z)
//!
//! and `rᵀπ(z) = (1 − α) zᵀx`. Both are solved either by the stationary
//! iteration `x ← r + αPx` (contraction factor α) or by a dense LU
//! factorization for small graphs.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, LU, Dyn};

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;

/// Graphs up to this many nodes use the dense backend under `Auto`.
pub const DENSE_LIMIT: usize = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SolverBackend {
    #[default]
    Auto,
    Iterative,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub backend: SolverBackend,
    /// Relative residual target for the iterative backend.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            backend: SolverBackend::Auto,
            tolerance: 1e-10,
        }
    }
}

impl SolverOptions {
    pub fn with_backend(self, backend: SolverBackend) -> Self {
        SolverOptions { backend, ..self }
    }

    pub fn with_tolerance(self, tolerance: f64) -> Self {
        SolverOptions { tolerance, ..self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PageRankVector {
    pub values: Vec<f64>,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueVector {
    pub values: Vec<f64>,
}

type DenseLu = LU<f64, Dyn, Dyn>;

struct DenseFactors {
    matrix: DMatrix<f64>,
    forward: OnceLock<DenseLu>,
    transpose: OnceLock<DenseLu>,
}

/// Reusable solver for one graph and damping factor.
pub struct PprSolver<'g> {
    graph: &'g DirectedGraph,
    alpha: f64,
    tolerance: f64,
    inv_degree: Vec<f64>,
    dense: Option<DenseFactors>,
}

impl<'g> PprSolver<'g> {
    pub fn new(graph: &'g DirectedGraph, alpha: f64, options: SolverOptions) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if let Some(node) = graph.first_sink() {
            return Err(Error::ZeroDegree { node });
        }
        let n = graph.node_count();
        let inv_degree: Vec<f64> = (0..n).map(|v| 1.0 / graph.out_degree(v) as f64).collect();
        let use_dense = match options.backend {
            SolverBackend::Dense => true,
            SolverBackend::Iterative => false,
            SolverBackend::Auto => n <= DENSE_LIMIT,
        };
        let dense = use_dense.then(|| {
            let mut matrix = DMatrix::<f64>::identity(n, n);
            for (u, v) in graph.edges() {
                matrix[(u, v)] -= alpha * inv_degree[u];
            }
            DenseFactors {
                matrix,
                forward: OnceLock::new(),
                transpose: OnceLock::new(),
            }
        });
        Ok(PprSolver {
            graph,
            alpha,
            tolerance: options.tolerance,
            inv_degree,
            dense,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn graph(&self) -> &DirectedGraph {
        self.graph
    }

    /// Solves `(I − αP) x = r`.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_len(r)?;
        match &self.dense {
            Some(f) => {
                let lu = f.forward.get_or_init(|| f.matrix.clone().lu());
                dense_solve(lu, r)
            }
            None => self.iterate(r, false),
        }
    }

    /// Solves `(I − αPᵀ) y = z`.
    pub fn solve_transpose(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z)?;
        match &self.dense {
            Some(f) => {
                let lu = f.transpose.get_or_init(|| f.matrix.transpose().lu());
                dense_solve(lu, z)
            }
            None => self.iterate(z, true),
        }
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.graph.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "vector of length {} for a graph with {} nodes",
                v.len(),
                self.graph.node_count()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("right-hand side is not finite".into()));
        }
        Ok(())
    }

    fn iterate(&self, rhs: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let n = rhs.len();
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return Ok(vec![0.0; n]);
        }
        // Below this the update is dominated by rounding and cannot shrink further.
        let floor = 64.0 * f64::EPSILON / (1.0 - self.alpha);
        let target = self.tolerance.max(floor);
        let cap = 10 * ((target.ln() / self.alpha.ln()).ceil() as usize).max(1);
        let mut x = rhs.to_vec();
        let mut next = vec![0.0; n];
        let mut delta = f64::INFINITY;
        for _ in 0..cap {
            if transpose {
                next.copy_from_slice(rhs);
                for u in 0..n {
                    let share = self.alpha * self.inv_degree[u] * x[u];
                    for &v in self.graph.neighbors(u) {
                        next[v] += share;
                    }
                }
            } else {
                for (u, out) in next.iter_mut().enumerate() {
                    let sum: f64 = self.graph.neighbors(u).iter().map(|&v| x[v]).sum();
                    *out = rhs[u] + self.alpha * self.inv_degree[u] * sum;
                }
            }
            delta = x
                .iter()
                .zip(&next)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                / scale;
            std::mem::swap(&mut x, &mut next);
            if delta <= target {
                return Ok(x);
            }
        }
        Err(Error::NotConverged {
            iterations: cap,
            residual: self.alpha * delta,
        })
    }
}

fn dense_solve(lu: &DenseLu, rhs: &[f64]) -> Result<Vec<f64>> {
    let b = DVector::from_column_slice(rhs);
    let x = lu
        .solve(&b)
        .ok_or_else(|| Error::InvalidInput("singular PageRank system".into()))?;
    Ok(x.iter().copied().collect())
}

fn check_distribution(z: &[f64]) -> Result<()> {
    let total: f64 = z.iter().sum();
    if z.iter().any(|&v| v < 0.0 || !v.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("teleport vector must be a distribution".into()));
    }
    Ok(())
}

/// PageRank vector `π(z)`; entries in `[-1e-12, 0)` are clamped to zero.
pub fn ppr_vector(graph: &DirectedGraph, alpha: f64, z: &[f64]) -> Result<PageRankVector> {
    ppr_vector_with(graph, alpha, z, SolverOptions::default())
}

pub fn ppr_vector_with(
    graph: &DirectedGraph,
    alpha: f64,
    z: &[f64],
    options: SolverOptions,
) -> Result<PageRankVector> {
    let solver = PprSolver::new(graph, alpha, options)?;
    check_distribution(z)?;
    Ok(PageRankVector {
        values: pagerank_from(&solver, z)?,
        alpha,
    })
}

/// `π(z)` with a prebuilt solver.
pub fn pagerank_from(solver: &PprSolver<'_>, z: &[f64]) -> Result<Vec<f64>> {
    let mut values = solver.solve_transpose(z)?;
    for v in &mut values {
        *v *= 1.0 - solver.alpha();
        if *v < 0.0 && *v >= -1e-12 {
            *v = 0.0;
        }
    }
    Ok(values)
}

/// Personalized PageRank `π(e_v)`.
pub fn personalized(solver: &PprSolver<'_>, v: usize) -> Result<Vec<f64>> {
    let mut z = vec![0.0; solver.graph().node_count()];
    z[v] = 1.0;
    pagerank_from(solver, &z)
}

/// Mean reward `x` solving `(I − αP)x = r`.
pub fn mean_reward(graph: &DirectedGraph, alpha: f64, r: &[f64]) -> Result<ValueVector> {
    mean_reward_with(graph, alpha, r, SolverOptions::default())
}

pub fn mean_reward_with(
    graph: &DirectedGraph,
    alpha: f64,
    r: &[f64],
    options: SolverOptions,
) -> Result<ValueVector> {
    let solver = PprSolver::new(graph, alpha, options)?;
    Ok(ValueVector {
        values: solver.solve(r)?,
    })
}

/// `m_t = π(e_t)ᵀh` for every target `t` from a single solve.
pub fn diffused_margins(graph: &DirectedGraph, alpha: f64, h: &[f64]) -> Result<Vec<f64>> {
    diffused_margins_with(graph, alpha, h, SolverOptions::default())
}

pub fn diffused_margins_with(
    graph: &DirectedGraph,
    alpha: f64,
    h: &[f64],
    options: SolverOptions,
) -> Result<Vec<f64>> {
    let solver = PprSolver::new(graph, alpha, options)?;
    margins_from(&solver, h)
}

pub fn margins_from(solver: &PprSolver<'_>, h: &[f64]) -> Result<Vec<f64>> {
    let mut m = solver.solve(h)?;
    for v in &mut m {
        *v *= 1.0 - solver.alpha();
    }
    Ok(m)
}
