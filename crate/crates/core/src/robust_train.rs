//! Robust training objectives over worst-case margins.
//!
//! For a labeled node `v` with class `y`, the worst-case margin against class
//! `c` is `m*_{y,c}(v) = π*(e_v)ᵀ(H[:, y] − H[:, c])` where `π*` is the
//! PageRank vector on the pair's optimal perturbed graph. Treating that graph
//! as constant (Danskin), `∂m*/∂H[:, y] = π*(e_v)` and `∂m*/∂H[:, c] = −π*(e_v)`,
//! so the gradient of a sum over nodes needs one transposed solve per pair.

use std::fmt::Write as _;

use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, EdgePolicy, PerturbationScenario};
use crate::models::{cross_entropy, diffuse_logits_with, softmax, FeatureMatrix, LogitsMatrix, Model};
use crate::policy_iter::{ordered_pairs, run_pairs, PairOutcome};
use crate::ppr::{margins_from, personalized, PprSolver, SolverBackend, SolverOptions};
use crate::EPS_MARGIN;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Cross-entropy on the clean diffused logits.
    Ce,
    /// Cross-entropy on the negated worst-case margins.
    Rce,
    /// Cross-entropy plus a hinge on the worst-case margins.
    Cem,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustLossConfig {
    pub kind: LossKind,
    /// Hinge margin `M` of the CEM loss.
    pub hinge_margin: f64,
    /// Recompute the worst-case graphs every this many epochs.
    pub cadence: usize,
}

impl Default for RobustLossConfig {
    fn default() -> Self {
        RobustLossConfig {
            kind: LossKind::Ce,
            hinge_margin: 1.0,
            cadence: 1,
        }
    }
}

impl RobustLossConfig {
    fn needs_bundle(&self) -> bool {
        self.kind != LossKind::Ce
    }
}

/// Optimal perturbed graph of one ordered class pair.
#[derive(Clone, Debug)]
pub struct PairGraph {
    pub y: usize,
    pub c: usize,
    pub graph: DirectedGraph,
    pub policy: EdgePolicy,
    /// `m*_{y,c}(t)` for every node `t` under the logits the bundle was scored with.
    pub margins: Vec<f64>,
}

/// Worst-case graphs and margins for every ordered pair `(y, c)` whose `y`
/// occurs among the labels.
#[derive(Clone, Debug)]
pub struct WorstCaseBundle {
    pub alpha: f64,
    pub classes: usize,
    pairs: Vec<Option<PairGraph>>,
    solver: SolverOptions,
}

impl WorstCaseBundle {
    pub fn pair(&self, y: usize, c: usize) -> Option<&PairGraph> {
        self.pairs.get(y * self.classes + c).and_then(Option::as_ref)
    }

    pub fn pairs(&self) -> impl Iterator<Item = &PairGraph> {
        self.pairs.iter().flatten()
    }

    /// `m*_{y,c}(v)`; zero for `c = y`.
    pub fn margin(&self, v: usize, y: usize, c: usize) -> f64 {
        if c == y {
            return 0.0;
        }
        self.pair(y, c).expect("pair covered by the bundle").margins[v]
    }

    pub fn worst_margin(&self, v: usize, y: usize) -> f64 {
        (0..self.classes)
            .filter(|&c| c != y)
            .map(|c| self.margin(v, y, c))
            .fold(f64::INFINITY, f64::min)
    }

    /// `π*(e_v)` on the optimal graph of pair `(y, c)`.
    pub fn pagerank_star(&self, v: usize, y: usize, c: usize) -> Result<Vec<f64>> {
        let pair = self
            .pair(y, c)
            .ok_or_else(|| Error::InvalidInput(format!("pair ({y}, {c}) not in bundle")))?;
        personalized(&PprSolver::new(&pair.graph, self.alpha, self.solver)?, v)
    }

    /// Margins on the stored graphs for new logits.
    pub fn rescore(&self, h: &LogitsMatrix) -> Result<WorstCaseBundle> {
        let mut out = self.clone();
        for pair in out.pairs.iter_mut().flatten() {
            let diff: Vec<f64> = (0..h.nodes()).map(|v| h.get(v, pair.y) - h.get(v, pair.c)).collect();
            pair.margins = margins_from(&PprSolver::new(&pair.graph, self.alpha, self.solver)?, &diff)?;
        }
        Ok(out)
    }

    /// Share of `nodes` whose worst margin exceeds the robustness threshold.
    pub fn certified_ratio(&self, labeled: &[(usize, usize)]) -> f64 {
        if labeled.is_empty() {
            return 0.0;
        }
        labeled
            .iter()
            .filter(|&&(v, y)| self.worst_margin(v, y) > EPS_MARGIN)
            .count() as f64
            / labeled.len() as f64
    }
}

/// Runs policy iteration for every pair needed by `labeled`.
pub fn compute_worst_bundle(
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    labeled: &[(usize, usize)],
    solver: SolverOptions,
) -> Result<WorstCaseBundle> {
    let k = h.classes();
    let mut used = vec![false; k];
    for &(v, y) in labeled {
        if v >= h.nodes() || y >= k {
            return Err(Error::InvalidInput(format!("label ({v}, {y}) out of range")));
        }
        used[y] = true;
    }
    let pi_solver = SolverOptions {
        tolerance: solver.tolerance.min(1e-13),
        ..solver
    };
    let outcomes = run_pairs(scenario, alpha, h, &ordered_pairs(k, &used), pi_solver)?;
    let mut pairs = vec![None; k * k];
    for PairOutcome { y, c, result, margins } in outcomes {
        pairs[y * k + c] = Some(PairGraph {
            y,
            c,
            graph: result.graph,
            policy: result.policy,
            margins,
        });
    }
    Ok(WorstCaseBundle {
        alpha,
        classes: k,
        pairs,
        solver,
    })
}

/// `Σ_v CE(H_diff[v], y_v)`.
pub fn loss_ce(h_diff: &LogitsMatrix, labeled: &[(usize, usize)]) -> f64 {
    labeled.iter().map(|&(v, y)| cross_entropy(h_diff.row(v), y)).sum()
}

fn pseudo_logits(bundle: &WorstCaseBundle, v: usize, y: usize) -> Vec<f64> {
    (0..bundle.classes).map(|c| -bundle.margin(v, y, c)).collect()
}

/// Robust cross-entropy: pseudo-logits `−m*_{y,c}(v)` with 0 at `y`.
pub fn loss_rce(bundle: &WorstCaseBundle, labeled: &[(usize, usize)]) -> f64 {
    labeled
        .iter()
        .map(|&(v, y)| cross_entropy(&pseudo_logits(bundle, v, y), y))
        .sum()
}

/// Cross-entropy plus `Σ_{c≠y} max(0, M − m*_{y,c}(v))`.
pub fn loss_cem(bundle: &WorstCaseBundle, h_diff: &LogitsMatrix, labeled: &[(usize, usize)], m: f64) -> f64 {
    labeled
        .iter()
        .map(|&(v, y)| {
            let hinge: f64 = (0..bundle.classes)
                .filter(|&c| c != y)
                .map(|c| (m - bundle.margin(v, y, c)).max(0.0))
                .sum();
            cross_entropy(h_diff.row(v), y) + hinge
        })
        .sum()
}

/// Summed loss over `labeled` and its gradient with respect to `H`.
pub fn loss_and_grad(
    config: &RobustLossConfig,
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    labeled: &[(usize, usize)],
    bundle: Option<&WorstCaseBundle>,
    solver: SolverOptions,
) -> Result<(f64, LogitsMatrix)> {
    let n = h.nodes();
    let k = h.classes();
    let mut grad = LogitsMatrix::zeros(n, k);
    let mut loss = 0.0;
    if config.kind != LossKind::Rce {
        let h_diff = diffuse_logits_with(scenario.base(), alpha, h, solver)?;
        loss += loss_ce(&h_diff, labeled);
        let mut g = vec![vec![0.0; n]; k];
        for &(v, y) in labeled {
            let p = softmax(h_diff.row(v));
            for c in 0..k {
                g[c][v] += p[c] - if c == y { 1.0 } else { 0.0 };
            }
        }
        let clean = PprSolver::new(scenario.base(), alpha, solver)?;
        for (c, col) in g.iter().enumerate() {
            if col.iter().all(|&x| x == 0.0) {
                continue;
            }
            let back = clean.solve_transpose(col)?;
            for i in 0..n {
                grad.set(i, c, grad.get(i, c) + (1.0 - alpha) * back[i]);
            }
        }
    }
    if config.needs_bundle() {
        let bundle = bundle.ok_or_else(|| Error::InvalidInput("robust loss needs a worst-case bundle".into()))?;
        // dL/dm*_{y,c}(v) accumulated per pair.
        let mut dm = vec![vec![0.0; n]; k * k];
        for &(v, y) in labeled {
            match config.kind {
                LossKind::Rce => {
                    let pseudo = pseudo_logits(bundle, v, y);
                    loss += cross_entropy(&pseudo, y);
                    let s = softmax(&pseudo);
                    for c in (0..k).filter(|&c| c != y) {
                        dm[y * k + c][v] -= s[c];
                    }
                }
                LossKind::Cem => {
                    for c in (0..k).filter(|&c| c != y) {
                        let gap = config.hinge_margin - bundle.margin(v, y, c);
                        if gap > 0.0 {
                            loss += gap;
                            dm[y * k + c][v] -= 1.0;
                        }
                    }
                }
                LossKind::Ce => unreachable!(),
            }
        }
        for pair in bundle.pairs() {
            let u = &dm[pair.y * k + pair.c];
            if u.iter().all(|&x| x == 0.0) {
                continue;
            }
            let back = PprSolver::new(&pair.graph, alpha, solver)?.solve_transpose(u)?;
            for i in 0..n {
                let d = (1.0 - alpha) * back[i];
                grad.set(i, pair.y, grad.get(i, pair.y) + d);
                grad.set(i, pair.c, grad.get(i, pair.c) - d);
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: RobustLossConfig,
    pub learning_rate: f64,
    /// L2 strength `λ` on weights; the objective adds `λ/2 ‖W‖²`.
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub solver: SolverOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: RobustLossConfig::default(),
            learning_rate: 1e-2,
            weight_decay: 5e-2,
            max_epochs: 3000,
            patience: 100,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_loss: f64,
    /// Share of training nodes certified under the current worst-case graphs.
    pub certified_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_loss,certified_ratio\n");
        for e in &self.epochs {
            let ratio = e.certified_ratio.map_or(String::new(), |r| r.to_string());
            let _ = writeln!(out, "{},{},{},{ratio}", e.epoch, e.loss, e.val_loss);
        }
        out
    }
}

/// Training data shared by the loops and the gradient check.
#[derive(Clone, Debug)]
pub struct TrainingInstance<'a> {
    pub features: &'a FeatureMatrix,
    pub scenario: &'a PerturbationScenario,
    pub alpha: f64,
    pub train: &'a [(usize, usize)],
    pub val: &'a [(usize, usize)],
}

fn l2(model: &dyn Model, mask: &[bool], lambda: f64) -> f64 {
    0.5 * lambda
        * model
            .params()
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(w, _)| w * w)
            .sum::<f64>()
}

/// Mean training loss plus L2 and its parameter gradient, with a fresh or
/// given bundle.
fn objective(
    model: &dyn Model,
    inst: &TrainingInstance<'_>,
    config: &TrainConfig,
    bundle: Option<&WorstCaseBundle>,
) -> Result<(f64, Vec<f64>)> {
    let h = model.forward(inst.features)?;
    let n = inst.train.len().max(1) as f64;
    let (loss, mut gh) = loss_and_grad(&config.loss, inst.scenario, inst.alpha, &h, inst.train, bundle, config.solver)?;
    for v in gh.values_mut() {
        *v /= n;
    }
    let mut grad = model.backward(inst.features, &gh)?;
    let mask = model.weight_mask();
    for ((g, w), &m) in grad.iter_mut().zip(model.params()).zip(&mask) {
        if m {
            *g += config.weight_decay * w;
        }
    }
    Ok((loss / n + l2(model, &mask, config.weight_decay), grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains `model` in place with Adam and early stopping on the validation
/// loss; the best parameters are restored at the end.
pub fn train_robust(model: &mut dyn Model, inst: &TrainingInstance<'_>, config: &TrainConfig) -> Result<TrainHistory> {
    if !(config.loss.hinge_margin >= 0.0) {
        return Err(Error::InvalidInput("hinge margin must be non-negative".into()));
    }
    if inst.train.is_empty() {
        return Err(Error::InvalidInput("no training nodes".into()));
    }
    let cadence = config.loss.cadence.max(1);
    let everyone: Vec<(usize, usize)> = inst.train.iter().chain(inst.val).copied().collect();
    let mut adam = Adam::new(model.params().len());
    let mut bundle: Option<WorstCaseBundle> = None;
    let mut epochs = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params().to_vec());
    let mut last_finite = (f64::NAN, model.params().to_vec());
    let mut stopped_early = false;
    for epoch in 0..config.max_epochs {
        let h = model.forward(inst.features)?;
        if h.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                last_finite_loss: last_finite.0,
                last_finite_params: last_finite.1,
            });
        }
        let mut ratio = None;
        if config.loss.needs_bundle() {
            let fresh = match &bundle {
                Some(b) if epoch % cadence != 0 => b.rescore(&h)?,
                _ => compute_worst_bundle(inst.scenario, inst.alpha, &h, &everyone, config.solver)?,
            };
            ratio = Some(fresh.certified_ratio(inst.train));
            bundle = Some(fresh);
        }
        let (loss, grad) = objective(model, inst, config, bundle.as_ref())?;
        let val_loss = if inst.val.is_empty() {
            loss
        } else {
            let (v, _) = loss_and_grad(&config.loss, inst.scenario, inst.alpha, &h, inst.val, bundle.as_ref(), config.solver)?;
            v / inst.val.len() as f64
        };
        if !loss.is_finite() || !val_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                last_finite_loss: last_finite.0,
                last_finite_params: last_finite.1,
            });
        }
        last_finite = (loss, model.params().to_vec());
        epochs.push(EpochRecord {
            epoch,
            loss,
            val_loss,
            certified_ratio: ratio,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, model.params().to_vec());
        } else if epoch - best.1 >= config.patience {
            stopped_early = true;
            break;
        }
        adam.step(model.params_mut(), &grad, config.learning_rate);
    }
    model.params_mut().copy_from_slice(&best.2);
    Ok(TrainHistory {
        epochs,
        best_epoch: best.1,
        stopped_early,
    })
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over the checked parameters.
    pub max_relative_error: f64,
    /// A worst-case graph or rectifier pattern changed inside the stencil.
    pub kink: bool,
    pub checked: usize,
}

/// Denominator floor of the relative error.
const REL_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient of the training objective with central
/// differences, recomputing the inner maximization at every stencil point
/// with dense solves.
pub fn grad_check(model: &dyn Model, inst: &TrainingInstance<'_>, loss: RobustLossConfig, h: f64) -> Result<GradCheckReport> {
    let config = TrainConfig {
        loss,
        solver: SolverOptions::default().with_backend(SolverBackend::Dense),
        ..TrainConfig::default()
    };
    let policies = |m: &dyn Model| -> Result<Option<Vec<EdgePolicy>>> {
        if !loss.needs_bundle() {
            return Ok(None);
        }
        let b = compute_worst_bundle(inst.scenario, inst.alpha, &m.forward(inst.features)?, inst.train, config.solver)?;
        Ok(Some(b.pairs().map(|p| p.policy.clone()).collect()))
    };
    let eval = |m: &dyn Model| -> Result<(f64, Vec<f64>)> {
        let bundle = if loss.needs_bundle() {
            Some(compute_worst_bundle(inst.scenario, inst.alpha, &m.forward(inst.features)?, inst.train, config.solver)?)
        } else {
            None
        };
        objective(m, inst, &config, bundle.as_ref())
    };
    let (_, analytic) = eval(model)?;
    let base_policies = policies(model)?;
    let base_pattern = model.activation_pattern(inst.features);
    let mut probe = ModelProbe::new(model);
    let mut max_err = 0.0f64;
    let mut kink = false;
    for j in 0..analytic.len() {
        let theta = probe.params[j];
        let mut side = [0.0; 2];
        for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
            probe.params[j] = theta + sign * h;
            let m = probe.model(model)?;
            side[s] = eval(m.as_ref())?.0;
            if policies(m.as_ref())? != base_policies || m.activation_pattern(inst.features) != base_pattern {
                kink = true;
            }
        }
        probe.params[j] = theta;
        let numeric = (side[0] - side[1]) / (2.0 * h);
        let err = (numeric - analytic[j]).abs() / numeric.abs().max(analytic[j].abs()).max(REL_FLOOR);
        max_err = max_err.max(err);
    }
    Ok(GradCheckReport {
        max_relative_error: max_err,
        kink,
        checked: analytic.len(),
    })
}

/// Parameter perturbation helper that rebuilds models through a boxed clone.
struct ModelProbe {
    params: Vec<f64>,
}

impl ModelProbe {
    fn new(model: &dyn Model) -> Self {
        ModelProbe {
            params: model.params().to_vec(),
        }
    }

    fn model(&self, template: &dyn Model) -> Result<Box<dyn Model>> {
        let mut m = template.boxed_clone();
        m.params_mut().copy_from_slice(&self.params);
        Ok(m)
    }
}

/// Seeded RNG for callers that want reproducible model initialisation.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
