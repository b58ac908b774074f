//! Brute-force ground truth for small instances.
//!
//! Every subset of the fragile edges is enumerated, filtered by the budgets and
//! evaluated with a dense Gaussian elimination that shares no code with the
//! solvers in [`crate::ppr`].

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, EdgePolicy, PerturbationScenario};
use crate::models::LogitsMatrix;

/// Largest fragile set the oracle will enumerate.
pub const ENUMERATION_CAP: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct EnumerationResult {
    pub optimum: f64,
    pub policy: EdgePolicy,
    /// Number of budget-feasible subsets evaluated.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstMarginResult {
    pub margin: f64,
    pub worst_class: usize,
    pub policy: EdgePolicy,
    pub count: usize,
}

/// Solves `M x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    x
}

/// Adjacency lists of the graph obtained by flipping the fragile edges in
/// `flipped` (by fragile index).
fn flipped_adjacency(scenario: &PerturbationScenario, flipped: &[bool]) -> Vec<Vec<usize>> {
    let n = scenario.node_count();
    let mut adj: Vec<Vec<usize>> = (0..n).map(|v| scenario.fixed().neighbors(v).to_vec()).collect();
    for (idx, (u, v), in_base) in scenario.fragile_edges() {
        if in_base != flipped[idx] {
            adj[u].push(v);
        }
    }
    adj
}

/// `I − αPᵀ` for the given adjacency.
fn transposed_system(adj: &[Vec<usize>], alpha: f64) -> Vec<Vec<f64>> {
    let n = adj.len();
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for (u, out) in adj.iter().enumerate() {
        let p = alpha / out.len() as f64;
        for &v in out {
            m[v][u] -= p;
        }
    }
    m
}

/// `π(z) = (1 − α)(I − αPᵀ)⁻¹ z` by dense elimination.
pub fn dense_pagerank(adj: &[Vec<usize>], alpha: f64, z: &[f64]) -> Vec<f64> {
    let x = gauss_solve(transposed_system(adj, alpha), z.to_vec());
    x.into_iter().map(|v| (1.0 - alpha) * v).collect()
}

pub fn graph_adjacency(graph: &DirectedGraph) -> Vec<Vec<usize>> {
    (0..graph.node_count()).map(|v| graph.neighbors(v).to_vec()).collect()
}

fn feasible(scenario: &PerturbationScenario, flipped: &[bool], respect_global: bool) -> bool {
    let mut total = 0;
    for v in 0..scenario.node_count() {
        let k = scenario.fragile_range(v).filter(|&i| flipped[i]).count();
        if k > scenario.local_budget(v) {
            return false;
        }
        total += k;
    }
    !respect_global || total <= scenario.global_budget()
}

/// Calls `visit` on every budget-feasible flip mask in increasing bit order.
fn for_each_feasible(
    scenario: &PerturbationScenario,
    respect_global: bool,
    mut visit: impl FnMut(&[bool]),
) -> Result<usize> {
    let m = scenario.fragile_count();
    if m > ENUMERATION_CAP {
        return Err(Error::EnumerationCap(m));
    }
    let mut flipped = vec![false; m];
    let mut count = 0;
    for bits in 0u64..(1u64 << m) {
        for (i, f) in flipped.iter_mut().enumerate() {
            *f = bits >> i & 1 == 1;
        }
        if feasible(scenario, &flipped, respect_global) {
            count += 1;
            visit(&flipped);
        }
    }
    Ok(count)
}

fn policy_from(scenario: &PerturbationScenario, flipped: &[bool]) -> EdgePolicy {
    EdgePolicy::from_edges(
        scenario
            .fragile_edges()
            .filter(|&(i, _, _)| flipped[i])
            .map(|(_, e, _)| e),
    )
}

/// Maximum of `rᵀπ(z)` over all admissible graphs.
pub fn brute_force_pagerank_opt(
    scenario: &PerturbationScenario,
    alpha: f64,
    r: &[f64],
    z: &[f64],
    respect_global: bool,
) -> Result<EnumerationResult> {
    let mut best = f64::NEG_INFINITY;
    let mut best_mask = Vec::new();
    let count = for_each_feasible(scenario, respect_global, |flipped| {
        let pi = dense_pagerank(&flipped_adjacency(scenario, flipped), alpha, z);
        let value: f64 = r.iter().zip(&pi).map(|(a, b)| a * b).sum();
        if value > best {
            best = value;
            best_mask = flipped.to_vec();
        }
    })?;
    Ok(EnumerationResult {
        optimum: best,
        policy: policy_from(scenario, &best_mask),
        count,
    })
}

/// Minimum over admissible graphs and classes `c ≠ y` of
/// `π(e_t)ᵀ(H[:, y] − H[:, c])`.
pub fn brute_force_worst_margin(
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    t: usize,
    y: usize,
    respect_global: bool,
) -> Result<WorstMarginResult> {
    let n = scenario.node_count();
    let mut z = vec![0.0; n];
    z[t] = 1.0;
    let mut best = f64::INFINITY;
    let mut best_class = if y == 0 { 1 } else { 0 };
    let mut best_mask = Vec::new();
    let count = for_each_feasible(scenario, respect_global, |flipped| {
        let pi = dense_pagerank(&flipped_adjacency(scenario, flipped), alpha, &z);
        for c in (0..h.classes()).filter(|&c| c != y) {
            let m: f64 = (0..n).map(|i| pi[i] * (h.get(i, y) - h.get(i, c))).sum();
            if m < best {
                best = m;
                best_class = c;
                best_mask = flipped.to_vec();
            }
        }
    })?;
    Ok(WorstMarginResult {
        margin: best,
        worst_class: best_class,
        policy: policy_from(scenario, &best_mask),
        count,
    })
}

/// Worst margins for every node at once; `classes[t]` is the class certified
/// at `t`. One dense inversion per admissible graph.
pub fn brute_force_all_margins(
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    classes: &[usize],
    respect_global: bool,
) -> Result<Vec<f64>> {
    let n = scenario.node_count();
    let mut worst = vec![f64::INFINITY; n];
    for_each_feasible(scenario, respect_global, |flipped| {
        let adj = flipped_adjacency(scenario, flipped);
        for t in 0..n {
            let mut z = vec![0.0; n];
            z[t] = 1.0;
            let pi = dense_pagerank(&adj, alpha, &z);
            let y = classes[t];
            for c in (0..h.classes()).filter(|&c| c != y) {
                let m: f64 = (0..n).map(|i| pi[i] * (h.get(i, y) - h.get(i, c))).sum();
                worst[t] = worst[t].min(m);
            }
        }
    })?;
    Ok(worst)
}

/// Largest `x_v = π_v / (1 − k_v/d_v)` over admissible graphs, where `k_v`
/// counts fragile edges of `v` that are off and `d_v` is fixed plus fragile
/// out-degree.
pub fn brute_force_max_x(
    scenario: &PerturbationScenario,
    alpha: f64,
    z: &[f64],
    respect_global: bool,
) -> Result<Vec<f64>> {
    let n = scenario.node_count();
    let mut best = vec![f64::NEG_INFINITY; n];
    for_each_feasible(scenario, respect_global, |flipped| {
        let pi = dense_pagerank(&flipped_adjacency(scenario, flipped), alpha, z);
        for v in 0..n {
            let d = scenario.total_degree(v) as f64;
            let off = scenario
                .fragile_range(v)
                .filter(|&i| scenario.fragile_in_base(i) == flipped[i])
                .count() as f64;
            best[v] = best[v].max(pi[v] / (1.0 - off / d));
        }
    })?;
    Ok(best)
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of subsets satisfying the local budgets (and the global budget when
/// requested), counted combinatorially.
pub fn feasible_subset_count(scenario: &PerturbationScenario, respect_global: bool) -> u128 {
    // ways[k] = number of ways to pick k flips in total over the nodes seen so far.
    let mut ways = vec![1u128];
    for v in 0..scenario.node_count() {
        let f = scenario.fragile_range(v).len();
        let b = scenario.local_budget(v).min(f);
        let mut next = vec![0u128; ways.len() + b];
        for (k, &w) in ways.iter().enumerate() {
            for j in 0..=b {
                next[k + j] += w * binomial(f, j);
            }
        }
        ways = next;
    }
    let limit = if respect_global {
        scenario.global_budget().min(ways.len() - 1)
    } else {
        ways.len() - 1
    };
    ways[..=limit].iter().sum()
}

/// Random certification instance for cross-checking.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub scenario: PerturbationScenario,
    pub alpha: f64,
    pub logits: LogitsMatrix,
    /// Class certified at each node (clean prediction).
    pub classes: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct InstanceShape {
    pub max_nodes: usize,
    pub max_fragile: usize,
    pub classes: usize,
}

/// Random connected instance: a random bidirected spanning tree is fixed,
/// random ordered pairs are fragile (each present in the clean graph with
/// probability 1/2), and budgets are uniform in their valid ranges.
pub fn random_instance(seed: u64, shape: InstanceShape) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=shape.max_nodes.max(3));
    let mut fixed = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        fixed.push((u, v));
        fixed.push((v, u));
    }
    fixed.sort_unstable();
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (0..n).map(move |v| (u, v)))
        .filter(|&(u, v)| u != v && fixed.binary_search(&(u, v)).is_err())
        .collect();
    candidates.shuffle(&mut rng);
    let cap = shape.max_fragile.min(candidates.len());
    let m = rng.random_range(cap / 2..=cap);
    let fragile: Vec<(usize, usize)> = candidates[..m].to_vec();
    let mut base = fixed.clone();
    for &e in &fragile {
        if rng.random_bool(0.5) {
            base.push(e);
        }
    }
    let base = DirectedGraph::from_edges(n, base).expect("valid random graph");
    let mut per_node = vec![0usize; n];
    for &(u, _) in &fragile {
        per_node[u] += 1;
    }
    let local: Vec<usize> = per_node.iter().map(|&f| rng.random_range(0..=f)).collect();
    let global = rng.random_range(0..=m);
    let scenario = PerturbationScenario::new(base, fixed, fragile, local, global).expect("valid random scenario");
    let alpha = rng.random_range(0.5..0.95);
    let k = shape.classes;
    let logits = LogitsMatrix::new(n, k, (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("finite logits");
    let adj = graph_adjacency(scenario.base());
    let classes = (0..n)
        .map(|t| {
            let mut z = vec![0.0; n];
            z[t] = 1.0;
            let pi = dense_pagerank(&adj, alpha, &z);
            let score = |c: usize| (0..n).map(|i| pi[i] * logits.get(i, c)).sum::<f64>();
            let mut best = 0;
            for c in 1..k {
                if score(c) > score(best) {
                    best = c;
                }
            }
            best
        })
        .collect();
    RandomInstance {
        scenario,
        alpha,
        logits,
        classes,
    }
}
