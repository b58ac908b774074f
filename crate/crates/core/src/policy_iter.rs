//! Policy iteration for PageRank optimization under local budgets, and the
//! exact local-budget certificates built on it.
//!
//! Each round solves `(I − αP)x = r` on the current perturbed graph and scores
//! every fragile edge `(i, j)` by
//!
//! > l_ij = (1 − 2A_ij)(x_j − mean_{k ∈ N(i)} x_k)
//!
//! where `A` is the clean adjacency and `N(i)` the current out-neighbors of `i`
//! (their mean equals `(x_i − r_i)/α`). Each node then flips its `b_i` best
//! strictly positive edges. The chosen graph is optimal for `rᵀπ(z)`
//! simultaneously for every teleport `z`.

use rayon::prelude::*;

use crate::analysis::CertStatus;
use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, EdgePolicy, PerturbationScenario};
use crate::models::LogitsMatrix;
use crate::ppr::{PprSolver, SolverBackend, SolverOptions};
use crate::EPS_MARGIN;

/// Scores at or below this (times `max(1, ‖x‖∞)`) do not count as improvements.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-12;
pub const ITERATION_CAP: usize = 100;

/// Solver settings used inside policy iteration.
pub fn default_pi_solver() -> SolverOptions {
    SolverOptions {
        backend: SolverBackend::Auto,
        tolerance: 1e-14,
    }
}

#[derive(Clone, Debug)]
pub struct PolicyIterationResult {
    pub policy: EdgePolicy,
    /// Flip mask indexed like the scenario's fragile edges.
    pub mask: Vec<bool>,
    /// Optimal perturbed graph.
    pub graph: DirectedGraph,
    /// Mean-reward vector on the optimal graph.
    pub values: Vec<f64>,
    /// Number of evaluated policies.
    pub iterations: usize,
    /// Value vector of every evaluated policy, oldest first.
    pub trace: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl PolicyIterationResult {
    /// `rᵀπ(z)` on the optimal graph.
    pub fn objective(&self, z: &[f64]) -> f64 {
        (1.0 - self.alpha) * z.iter().zip(&self.values).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Maximizes `rᵀπ(z)` over all graphs admissible under the local budgets.
/// The global budget of `scenario` is ignored.
pub fn optimize_local(
    scenario: &PerturbationScenario,
    alpha: f64,
    r: &[f64],
    init: Option<&EdgePolicy>,
) -> Result<PolicyIterationResult> {
    optimize_local_with(scenario, alpha, r, init, default_pi_solver())
}

pub fn optimize_local_with(
    scenario: &PerturbationScenario,
    alpha: f64,
    r: &[f64],
    init: Option<&EdgePolicy>,
    options: SolverOptions,
) -> Result<PolicyIterationResult> {
    let n = scenario.node_count();
    if r.len() != n {
        return Err(Error::ShapeMismatch(format!("reward of length {} for {n} nodes", r.len())));
    }
    let mut mask = match init {
        Some(p) => scenario.mask_of(p)?,
        None => vec![false; scenario.fragile_count()],
    };
    let mut trace = Vec::new();
    loop {
        let graph = scenario.perturbed_graph(&mask);
        let x = PprSolver::new(&graph, alpha, options)?.solve(r)?;
        trace.push(x.clone());
        let changed = improve(scenario, &graph, &x, &mut mask);
        if !changed {
            return Ok(PolicyIterationResult {
                policy: scenario.policy_of(&mask),
                mask,
                graph,
                values: x,
                iterations: trace.len(),
                trace,
                alpha,
            });
        }
        if trace.len() >= ITERATION_CAP {
            return Err(Error::IterationCap {
                cap: ITERATION_CAP,
                trace,
            });
        }
    }
}

/// One greedy improvement step. Returns whether any node changed its flips.
fn improve(scenario: &PerturbationScenario, graph: &DirectedGraph, x: &[f64], mask: &mut [bool]) -> bool {
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let threshold = IMPROVEMENT_THRESHOLD * scale;
    let mut changed = false;
    let mut scored: Vec<(f64, bool, usize, usize)> = Vec::new();
    for v in 0..scenario.node_count() {
        let range = scenario.fragile_range(v);
        if range.is_empty() {
            continue;
        }
        let neighbors = graph.neighbors(v);
        let mean = neighbors.iter().map(|&u| x[u]).sum::<f64>() / neighbors.len() as f64;
        let budget = scenario.local_budget(v);
        scored.clear();
        let mut current_sum = 0.0;
        let mut current_count = 0;
        for idx in range.clone() {
            let j = scenario.fragile_target(idx);
            let sign = if scenario.fragile_in_base(idx) { -1.0 } else { 1.0 };
            let l = sign * (x[j] - mean);
            if mask[idx] {
                current_sum += l;
                current_count += 1;
            }
            if l > threshold {
                scored.push((l, mask[idx], j, idx));
            }
        }
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| b.1.cmp(&a.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        scored.truncate(budget);
        let best_sum: f64 = scored.iter().map(|s| s.0).sum();
        let feasible = current_count <= budget;
        if feasible && best_sum <= current_sum + threshold {
            continue;
        }
        let before: Vec<bool> = mask[range.clone()].to_vec();
        for idx in range.clone() {
            mask[idx] = false;
        }
        for &(_, _, _, idx) in scored.iter() {
            mask[idx] = true;
        }
        if mask[range] != before[..] {
            changed = true;
        }
    }
    changed
}

/// Outcome of one ordered class pair `(y, c)`: the perturbed graph minimizing
/// `π(e_t)ᵀ(H[:, y] − H[:, c])` for every `t` at once.
#[derive(Clone, Debug)]
pub struct PairOutcome {
    pub y: usize,
    pub c: usize,
    pub result: PolicyIterationResult,
    /// Worst margin `m*_{y,c}(t)` for every node `t`.
    pub margins: Vec<f64>,
}

/// Runs policy iteration for the given ordered pairs in parallel.
pub fn run_pairs(
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    pairs: &[(usize, usize)],
    options: SolverOptions,
) -> Result<Vec<PairOutcome>> {
    check_logits(scenario, h)?;
    pairs
        .par_iter()
        .map(|&(y, c)| {
            let r: Vec<f64> = (0..h.nodes()).map(|v| h.get(v, c) - h.get(v, y)).collect();
            let result = optimize_local_with(scenario, alpha, &r, None, options)?;
            let margins = result.values.iter().map(|x| -(1.0 - alpha) * x).collect();
            Ok(PairOutcome { y, c, result, margins })
        })
        .collect()
}

fn check_logits(scenario: &PerturbationScenario, h: &LogitsMatrix) -> Result<()> {
    if h.nodes() != scenario.node_count() {
        return Err(Error::ShapeMismatch(format!(
            "logits have {} rows for {} nodes",
            h.nodes(),
            scenario.node_count()
        )));
    }
    Ok(())
}

/// All ordered pairs `(y, c)` with `y` in `used` and `c ≠ y`.
pub fn ordered_pairs(classes: usize, used: &[bool]) -> Vec<(usize, usize)> {
    (0..classes)
        .filter(|&y| used[y])
        .flat_map(|y| (0..classes).filter(move |&c| c != y).map(move |c| (y, c)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalCertificate {
    pub node: usize,
    /// Class being certified (label or clean prediction).
    pub y: usize,
    pub worst_margin: f64,
    pub worst_class: usize,
    pub status: CertStatus,
    /// Margin within `(-EPS_MARGIN, EPS_MARGIN]`.
    pub marginal: bool,
    pub witness: EdgePolicy,
}

/// Exact worst-case margins under local budgets for every node.
/// `classes[t]` is the class certified at node `t`.
pub fn certify_local_all(
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    classes: &[usize],
) -> Result<Vec<LocalCertificate>> {
    certify_local_with(scenario, alpha, h, classes, default_pi_solver())
}

pub fn certify_local_with(
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    classes: &[usize],
    options: SolverOptions,
) -> Result<Vec<LocalCertificate>> {
    check_logits(scenario, h)?;
    let k = h.classes();
    if classes.len() != h.nodes() {
        return Err(Error::ShapeMismatch("one class per node required".into()));
    }
    if let Some(&bad) = classes.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidInput(format!("class {bad} out of range for {k} classes")));
    }
    let mut used = vec![false; k];
    for &y in classes {
        used[y] = true;
    }
    let outcomes = run_pairs(scenario, alpha, h, &ordered_pairs(k, &used), options)?;
    let clean = crate::models::diffuse_logits_with(scenario.base(), alpha, h, options)?;
    Ok(collect_certificates(&outcomes, &clean, classes, k))
}

fn collect_certificates(
    outcomes: &[PairOutcome],
    clean: &LogitsMatrix,
    classes: &[usize],
    k: usize,
) -> Vec<LocalCertificate> {
    let mut index = vec![vec![usize::MAX; k]; k];
    for (i, o) in outcomes.iter().enumerate() {
        index[o.y][o.c] = i;
    }
    classes
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let mut worst = f64::INFINITY;
            let mut worst_class = if y == 0 { 1 } else { 0 };
            for c in (0..k).filter(|&c| c != y) {
                let m = outcomes[index[y][c]].margins[t];
                if m < worst {
                    worst = m;
                    worst_class = c;
                }
            }
            let tie = (0..k)
                .filter(|&c| c != y)
                .any(|c| (clean.get(t, y) - clean.get(t, c)).abs() <= EPS_MARGIN);
            if tie {
                worst = worst.min(0.0);
            }
            let (status, marginal) = classify_margin(worst);
            LocalCertificate {
                node: t,
                y,
                worst_margin: worst,
                worst_class,
                status,
                marginal,
                witness: outcomes[index[y][worst_class]].result.policy.clone(),
            }
        })
        .collect()
}

/// Status for an exact margin plus the "numerically marginal" flag.
pub fn classify_margin(margin: f64) -> (CertStatus, bool) {
    if margin > EPS_MARGIN {
        (CertStatus::Robust, false)
    } else {
        (CertStatus::Nonrobust, margin > -EPS_MARGIN)
    }
}
