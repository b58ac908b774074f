//! Lower-bound certificates under local and global budgets.
//!
//! Each fragile edge `(i, j)` becomes an auxiliary state `v_ij` of an MDP with
//! two actions: "on" continues to `j` with probability α, "off" returns to `i`
//! and cancels the reward `r_i` collected on re-entry. The occupation measure
//! of that MDP gives a linear program with variables `x_v` per node and
//! `x⁰_ij`, `x¹_ij` per fragile edge:
//!
//! ```text
//! max  Σ_v r_v x_v − Σ_(i,j)∈F r_i x⁰_ij
//! s.t. x_v − α Σ_(i,v)∈E_f x_i/d_i − α Σ_(j,v)∈F x¹_jv − Σ_(v,k)∈F x⁰_vk = (1−α) z_v
//!      x⁰_ij + x¹_ij − x_i/d_i = 0
//!      Σ_(v,i)∈F∩E x⁰_vi + Σ_(v,i)∈F∖E x¹_vi − (b_v/d_v) x_v ≤ 0
//!      Σ_(i,j)∈F (d_i/x̄_i) · [x⁰_ij if (i,j)∈E else x¹_ij] ≤ B
//!      0 ≤ x_v ≤ x̄_v,  x⁰, x¹ ≥ 0
//! ```
//!
//! with `d_i = |E_f^i| + |F^i|`. Without the last row the program is exact;
//! the last row is a linearization of the global budget and makes the optimum
//! an upper bound on `rᵀπ(z)` over all admissible graphs.

use rayon::prelude::*;

use crate::analysis::CertStatus;
use crate::error::{Error, Result};
use crate::graph::{EdgePolicy, PerturbationScenario};
use crate::lp_solver::{solve_lp, LinearProgram, LpSolution, LpStatus, RowSense, Sense};
use crate::models::LogitsMatrix;
use crate::policy_iter::{optimize_local_with, default_pi_solver};
use crate::ppr::{personalized, PprSolver, SolverOptions};
use crate::EPS_MARGIN;

/// LP values at or below this are treated as zero.
pub const ZERO_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub to: usize,
    pub prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuxState {
    /// Fragile edge `(i, j)` this state represents.
    pub edge: (usize, usize),
    pub fragile_index: usize,
}

/// Auxiliary MDP. States `0..N` are the graph nodes, state `N + k` is the
/// auxiliary state of fragile edge `k`.
#[derive(Clone, Debug)]
pub struct AuxiliaryMdp {
    pub node_count: usize,
    pub alpha: f64,
    pub degrees: Vec<usize>,
    pub rewards: Vec<f64>,
    pub aux: Vec<AuxState>,
    fixed: Vec<Vec<usize>>,
    fragile_out: Vec<Vec<usize>>,
}

impl AuxiliaryMdp {
    pub fn state_count(&self) -> usize {
        self.node_count + self.aux.len()
    }

    /// The single action of original state `i` (reward `r_i`).
    pub fn original_transitions(&self, i: usize) -> Vec<Transition> {
        let d = self.degrees[i] as f64;
        let fixed = self.fixed[i].iter().map(|&j| Transition {
            to: j,
            prob: self.alpha / d,
        });
        let aux = self.fragile_out[i].iter().map(|&k| Transition {
            to: self.node_count + k,
            prob: 1.0 / d,
        });
        fixed.chain(aux).collect()
    }

    /// "on": move to `j` with probability α, reward 0.
    pub fn on_action(&self, k: usize) -> (Transition, f64) {
        let (_, j) = self.aux[k].edge;
        (Transition { to: j, prob: self.alpha }, 0.0)
    }

    /// "off": return to `i` with probability 1, reward `−r_i`.
    pub fn off_action(&self, k: usize) -> (Transition, f64) {
        let (i, _) = self.aux[k].edge;
        (Transition { to: i, prob: 1.0 }, -self.rewards[i])
    }
}

pub fn build_aux_mdp(scenario: &PerturbationScenario, alpha: f64, r: &[f64]) -> Result<AuxiliaryMdp> {
    let n = scenario.node_count();
    if r.len() != n {
        return Err(Error::ShapeMismatch("reward length".into()));
    }
    Ok(AuxiliaryMdp {
        node_count: n,
        alpha,
        degrees: (0..n).map(|v| scenario.total_degree(v)).collect(),
        rewards: r.to_vec(),
        aux: scenario
            .fragile_edges()
            .map(|(k, edge, _)| AuxState { edge, fragile_index: k })
            .collect(),
        fixed: (0..n).map(|v| scenario.fixed().neighbors(v).to_vec()).collect(),
        fragile_out: (0..n).map(|v| scenario.fragile_range(v).collect()).collect(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BoundMethod {
    /// `x̄_v = (1 − |F^v|/d_v)⁻¹`.
    #[default]
    ClosedForm,
    /// Maximal `π_v` under local budgets, scaled by `(1 − |F^v|/d_v)⁻¹`.
    PolicyOpt,
}

/// Smallest upper bound handed to the LP.
const BOUND_FLOOR: f64 = 1e-9;

/// Per-node upper bounds on the LP variables `x_v`.
#[derive(Clone, Debug)]
pub struct UpperBounds {
    method: BoundMethod,
    alpha: f64,
    /// `(1 − |F^v|/d_v)⁻¹`.
    inflation: Vec<f64>,
    /// For `PolicyOpt`: value vector of the `π_v`-maximizing graph, per node
    /// with fragile edges.
    values: Vec<Option<Vec<f64>>>,
}

impl UpperBounds {
    /// Bounds for the teleport vector `z`.
    pub fn for_teleport(&self, z: &[f64]) -> Vec<f64> {
        match self.method {
            BoundMethod::ClosedForm => self.inflation.clone(),
            BoundMethod::PolicyOpt => self
                .inflation
                .iter()
                .zip(&self.values)
                .map(|(&inf, vals)| match vals {
                    None => inf,
                    Some(x) => {
                        let pi_max: f64 = (1.0 - self.alpha) * z.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                        let pi_max = pi_max.min(1.0);
                        ((pi_max * inf) * (1.0 + 1e-9) + 1e-12).max(BOUND_FLOOR).min(inf)
                    }
                })
                .collect(),
        }
    }
}

/// Precomputes the data behind [`UpperBounds::for_teleport`].
pub fn compute_upper_bounds(
    scenario: &PerturbationScenario,
    alpha: f64,
    method: BoundMethod,
    options: SolverOptions,
) -> Result<UpperBounds> {
    let n = scenario.node_count();
    let mut inflation = Vec::with_capacity(n);
    for v in 0..n {
        let d = scenario.total_degree(v);
        let f = scenario.fragile_range(v).len();
        if d == f {
            return Err(Error::BoundUndefined { node: v, degree: d });
        }
        inflation.push(d as f64 / (d - f) as f64);
    }
    let values = match method {
        BoundMethod::ClosedForm => vec![None; n],
        BoundMethod::PolicyOpt => (0..n)
            .into_par_iter()
            .map(|v| {
                if scenario.fragile_range(v).is_empty() {
                    return Ok(None);
                }
                let mut r = vec![0.0; n];
                r[v] = 1.0;
                Ok(Some(optimize_local_with(scenario, alpha, &r, None, options)?.values))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(UpperBounds {
        method,
        alpha,
        inflation,
        values,
    })
}

/// Assembled relaxation with its variable layout: `x_v` is variable `v`,
/// `x⁰_k` is `N + 2k` and `x¹_k` is `N + 2k + 1` for fragile edge `k`.
#[derive(Clone, Debug)]
pub struct RelaxedLpInstance {
    pub lp: LinearProgram,
    pub node_count: usize,
    pub fragile_count: usize,
}

impl RelaxedLpInstance {
    pub fn x(&self, v: usize) -> usize {
        v
    }

    pub fn x_off(&self, k: usize) -> usize {
        self.node_count + 2 * k
    }

    pub fn x_on(&self, k: usize) -> usize {
        self.node_count + 2 * k + 1
    }
}

/// Builds the relaxed program for teleport `z` and bounds `xbar`. Passing
/// `None` for the global budget omits the last row, which gives the exact
/// local-budget program.
pub fn assemble_relaxed_lp(
    mdp: &AuxiliaryMdp,
    scenario: &PerturbationScenario,
    z: &[f64],
    xbar: &[f64],
    global_budget: Option<usize>,
) -> Result<RelaxedLpInstance> {
    let n = mdp.node_count;
    let m = mdp.aux.len();
    if z.len() != n || xbar.len() != n {
        return Err(Error::ShapeMismatch("teleport or bound length".into()));
    }
    if xbar.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
        return Err(Error::InvalidInput("upper bounds must be positive and finite".into()));
    }
    let alpha = mdp.alpha;
    let deg: Vec<f64> = mdp.degrees.iter().map(|&d| d as f64).collect();
    let mut lp = LinearProgram::new(Sense::Maximize);
    for v in 0..n {
        lp.add_var(format!("x_{v}"), mdp.rewards[v], Some(xbar[v]));
    }
    for st in &mdp.aux {
        let (i, j) = st.edge;
        lp.add_var(format!("x0_{i}_{j}"), -mdp.rewards[i], None);
        lp.add_var(format!("x1_{i}_{j}"), 0.0, None);
    }
    let off = |k: usize| n + 2 * k;
    let on = |k: usize| n + 2 * k + 1;
    // Flow conservation.
    let mut flow: Vec<Vec<(usize, f64)>> = (0..n).map(|v| vec![(v, 1.0)]).collect();
    for i in 0..n {
        for &j in &mdp.fixed[i] {
            flow[j].push((i, -alpha / deg[i]));
        }
    }
    for (k, st) in mdp.aux.iter().enumerate() {
        let (i, j) = st.edge;
        flow[j].push((on(k), -alpha));
        flow[i].push((off(k), -1.0));
    }
    for (v, coeffs) in flow.into_iter().enumerate() {
        lp.add_row(format!("flow_{v}"), coeffs, RowSense::Eq, (1.0 - alpha) * z[v]);
    }
    // Coupling of the two actions of each auxiliary state.
    for (k, st) in mdp.aux.iter().enumerate() {
        let (i, j) = st.edge;
        lp.add_row(
            format!("couple_{i}_{j}"),
            vec![(off(k), 1.0), (on(k), 1.0), (i, -1.0 / deg[i])],
            RowSense::Eq,
            0.0,
        );
    }
    // Local budgets.
    let perturbing = |k: usize| {
        if scenario.fragile_in_base(mdp.aux[k].fragile_index) {
            off(k)
        } else {
            on(k)
        }
    };
    for v in 0..n {
        let mut coeffs: Vec<(usize, f64)> = mdp.fragile_out[v].iter().map(|&k| (perturbing(k), 1.0)).collect();
        coeffs.push((v, -(scenario.local_budget(v) as f64) / deg[v]));
        lp.add_row(format!("local_{v}"), coeffs, RowSense::Le, 0.0);
    }
    if let Some(budget) = global_budget {
        let coeffs = (0..m)
            .map(|k| {
                let (i, _) = mdp.aux[k].edge;
                (perturbing(k), deg[i] / xbar[i])
            })
            .collect();
        lp.add_row("global", coeffs, RowSense::Le, budget as f64);
    }
    Ok(RelaxedLpInstance {
        lp,
        node_count: n,
        fragile_count: m,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recovered {
    /// `π_v = (1 − k_v/d_v) x_v`.
    pub pagerank: Vec<f64>,
    /// Fragile edges at each node carrying "off" flow.
    pub off_counts: Vec<usize>,
    /// No fragile edge carries both "on" and "off" flow.
    pub integral: bool,
    /// Whether each fragile edge is present in the extracted graph.
    pub present: Vec<bool>,
}

/// Reads the PageRank vector and the perturbed graph back from an LP solution.
pub fn recover_pagerank(
    instance: &RelaxedLpInstance,
    scenario: &PerturbationScenario,
    solution: &LpSolution,
) -> Recovered {
    let n = instance.node_count;
    let x = &solution.primal;
    let mut off_counts = vec![0usize; n];
    let mut present = vec![false; instance.fragile_count];
    let mut integral = true;
    for (k, (i, _), in_base) in scenario.fragile_edges() {
        let (a, b) = (x[instance.x_off(k)], x[instance.x_on(k)]);
        if a > ZERO_TOL {
            off_counts[i] += 1;
        }
        if a > ZERO_TOL && b > ZERO_TOL {
            integral = false;
        }
        present[k] = if a <= ZERO_TOL && b <= ZERO_TOL { in_base } else { b >= a };
    }
    let pagerank = (0..n)
        .map(|v| {
            let d = scenario.total_degree(v) as f64;
            (1.0 - off_counts[v] as f64 / d) * x[instance.x(v)]
        })
        .collect();
    Recovered {
        pagerank,
        off_counts,
        integral,
        present,
    }
}

/// Rounds an LP solution to an admissible flip mask: an edge is on iff
/// `x¹ ≥ x⁰` (edges without flow keep their clean state); flips over budget
/// are dropped starting with the smallest `|x¹ − x⁰|`.
pub fn round_attack(instance: &RelaxedLpInstance, scenario: &PerturbationScenario, solution: &LpSolution) -> Vec<bool> {
    let x = &solution.primal;
    let m = scenario.fragile_count();
    let mut flipped = vec![false; m];
    let mut strength = vec![0.0; m];
    for (k, _, in_base) in scenario.fragile_edges() {
        let (a, b) = (x[instance.x_off(k)], x[instance.x_on(k)]);
        let on = if a <= ZERO_TOL && b <= ZERO_TOL { in_base } else { b >= a };
        flipped[k] = on != in_base;
        strength[k] = (b - a).abs();
    }
    let weakest_first = |mut ks: Vec<usize>| {
        ks.sort_by(|&p, &q| strength[p].total_cmp(&strength[q]).then(p.cmp(&q)));
        ks
    };
    for v in 0..scenario.node_count() {
        let mine: Vec<usize> = scenario.fragile_range(v).filter(|&k| flipped[k]).collect();
        let excess = mine.len().saturating_sub(scenario.local_budget(v));
        for &k in weakest_first(mine).iter().take(excess) {
            flipped[k] = false;
        }
    }
    let all: Vec<usize> = (0..m).filter(|&k| flipped[k]).collect();
    let excess = all.len().saturating_sub(scenario.global_budget());
    for &k in weakest_first(all).iter().take(excess) {
        flipped[k] = false;
    }
    flipped
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalCertificate {
    pub node: usize,
    pub y: usize,
    /// Lower bound on the worst-case margin.
    pub lower_bound_margin: f64,
    pub worst_class: usize,
    pub status: CertStatus,
    pub marginal: bool,
    /// Best rounded attack over all class LPs.
    pub rounded_attack: EdgePolicy,
    /// Exact margin on the rounded attack graph.
    pub attack_margin: f64,
    pub attack_verified: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GlobalOptions {
    pub bound_method: BoundMethod,
    pub solver: SolverOptions,
}

/// Lower-bound certificates for `targets`; `classes[t]` is the class
/// certified at node `t`.
pub fn certify_global(
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    classes: &[usize],
    targets: &[usize],
    options: GlobalOptions,
) -> Result<Vec<GlobalCertificate>> {
    let n = scenario.node_count();
    if targets.is_empty() {
        return Err(Error::InvalidInput("no targets to certify".into()));
    }
    if h.nodes() != n || classes.len() != n {
        return Err(Error::ShapeMismatch("logits or classes do not match the graph".into()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= n) {
        return Err(Error::InvalidInput(format!("target {t} out of range")));
    }
    let pi_solver = if options.solver == SolverOptions::default() {
        default_pi_solver()
    } else {
        options.solver
    };
    let bounds = compute_upper_bounds(scenario, alpha, options.bound_method, pi_solver)?;
    let k = h.classes();
    targets
        .par_iter()
        .map(|&t| certify_target(scenario, alpha, h, classes[t], t, k, &bounds, options.solver))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn certify_target(
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    y: usize,
    t: usize,
    k: usize,
    bounds: &UpperBounds,
    solver: SolverOptions,
) -> Result<GlobalCertificate> {
    let n = scenario.node_count();
    let mut z = vec![0.0; n];
    z[t] = 1.0;
    let xbar = bounds.for_teleport(&z);
    let mut lower = f64::INFINITY;
    let mut worst_class = if y == 0 { 1 } else { 0 };
    let mut best_attack: Option<(f64, Vec<bool>)> = None;
    for c in (0..k).filter(|&c| c != y) {
        let r: Vec<f64> = (0..n).map(|v| h.get(v, c) - h.get(v, y)).collect();
        let mdp = build_aux_mdp(scenario, alpha, &r)?;
        let inst = assemble_relaxed_lp(&mdp, scenario, &z, &xbar, Some(scenario.global_budget()))?;
        let sol = solve_lp(&inst.lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(Error::LpStatus {
                status: sol.status.to_string(),
                context: format!("relaxed certificate (node {t}, class {c})"),
            });
        }
        let bound = -sol.objective;
        if bound < lower {
            lower = bound;
            worst_class = c;
        }
        let mask = round_attack(&inst, scenario, &sol);
        let margin = exact_margin(scenario, alpha, h, &mask, t, y, solver)?;
        if best_attack.as_ref().is_none_or(|(m, _)| margin < *m) {
            best_attack = Some((margin, mask));
        }
    }
    let (attack_margin, mask) = best_attack.expect("at least two classes");
    let (status, marginal) = if lower > EPS_MARGIN {
        (CertStatus::Robust, false)
    } else if attack_margin < -EPS_MARGIN {
        (CertStatus::NonrobustWitnessed, false)
    } else {
        (CertStatus::Unknown, lower > -EPS_MARGIN)
    };
    Ok(GlobalCertificate {
        node: t,
        y,
        lower_bound_margin: lower,
        worst_class,
        status,
        marginal,
        rounded_attack: scenario.policy_of(&mask),
        attack_margin,
        attack_verified: attack_margin < -EPS_MARGIN,
    })
}

/// `min_{c ≠ y} π(e_t)ᵀ(H[:, y] − H[:, c])` on the graph given by `mask`.
pub fn exact_margin(
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    mask: &[bool],
    t: usize,
    y: usize,
    solver: SolverOptions,
) -> Result<f64> {
    let graph = scenario.perturbed_graph(mask);
    let pi = personalized(&PprSolver::new(&graph, alpha, solver)?, t)?;
    Ok((0..h.classes())
        .filter(|&c| c != y)
        .map(|c| (0..h.nodes()).map(|i| pi[i] * (h.get(i, y) - h.get(i, c))).sum::<f64>())
        .fold(f64::INFINITY, f64::min))
}
