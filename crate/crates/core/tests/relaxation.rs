use ppr_cert::analysis::CertStatus;
use ppr_cert::lp_solver::{solve_lp, LpStatus};
use ppr_cert::oracle::{
    brute_force_max_x, brute_force_pagerank_opt, brute_force_worst_margin, dense_pagerank, graph_adjacency,
    random_instance, InstanceShape, RandomInstance,
};
use ppr_cert::policy_iter::optimize_local;
use ppr_cert::ppr::{mean_reward, SolverOptions};
use ppr_cert::qclp_global::{
    assemble_relaxed_lp, build_aux_mdp, certify_global, compute_upper_bounds, exact_margin, recover_pagerank,
    round_attack, BoundMethod, GlobalOptions,
};
use ppr_cert::{DirectedGraph, PerturbationScenario, EPS_MARGIN};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: InstanceShape = InstanceShape {
    max_nodes: 7,
    max_fragile: 9,
    classes: 2,
};

fn unit(n: usize, t: usize) -> Vec<f64> {
    let mut z = vec![0.0; n];
    z[t] = 1.0;
    z
}

fn rewards(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Solves the relaxation and returns `(objective, instance, solution)`.
fn relaxed(
    s: &PerturbationScenario,
    alpha: f64,
    r: &[f64],
    z: &[f64],
    method: BoundMethod,
    global: Option<usize>,
) -> (f64, ppr_cert::qclp_global::RelaxedLpInstance, ppr_cert::lp_solver::LpSolution) {
    let bounds = compute_upper_bounds(s, alpha, method, SolverOptions::default()).unwrap();
    let mdp = build_aux_mdp(s, alpha, r).unwrap();
    let inst = assemble_relaxed_lp(&mdp, s, z, &bounds.for_teleport(z), global).unwrap();
    let sol = solve_lp(&inst.lp).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    (sol.objective, inst, sol)
}

#[test]
fn no_budget_means_clean_value() {
    let inst = random_instance(21, SHAPE);
    let n = inst.scenario.node_count();
    let s = inst.scenario.with_local_budgets(vec![0; n]).unwrap();
    let s = s.with_global_budget(ppr_cert::graph::GlobalBudget::Limited(0));
    let r = rewards(1, n);
    let z = unit(n, 0);
    let (obj, ..) = relaxed(&s, inst.alpha, &r, &z, BoundMethod::ClosedForm, Some(0));
    let pi = dense_pagerank(&graph_adjacency(s.base()), inst.alpha, &z);
    let clean: f64 = r.iter().zip(&pi).map(|(a, b)| a * b).sum();
    assert!((obj - clean).abs() < 1e-8, "{obj} vs {clean}");
}

#[test]
fn three_nodes_two_fragile_edges_give_seven_variables_and_nine_rows() {
    let base = DirectedGraph::from_edges(3, [(0, 1), (1, 0), (1, 2), (2, 1), (0, 2)]).unwrap();
    let s = PerturbationScenario::new(
        base,
        vec![(0, 1), (1, 0), (1, 2), (2, 1)],
        vec![(0, 2), (2, 0)],
        vec![1, 1, 1],
        2,
    )
    .unwrap();
    let mdp = build_aux_mdp(&s, 0.85, &[1.0, 0.0, 0.0]).unwrap();
    let inst = assemble_relaxed_lp(&mdp, &s, &[1.0, 0.0, 0.0], &[2.0, 1.0, 2.0], Some(2)).unwrap();
    assert_eq!(inst.lp.var_count(), 7);
    assert_eq!(inst.lp.row_count(), 9);
    let text = ppr_cert::lp_solver::lp_to_text(&inst.lp).unwrap();
    let body = text.split("Subject To").nth(1).unwrap().split("Bounds").next().unwrap();
    assert_eq!(body.lines().filter(|l| l.contains(':')).count(), 9);
}

/// Expected total reward of the auxiliary chain under a fixed on/off policy,
/// estimated by simulation, against the mean-reward value of the matching
/// perturbed graph.
#[test]
fn auxiliary_chain_return_matches_value_by_simulation() {
    let base = DirectedGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (2, 0)]).unwrap();
    let s = PerturbationScenario::new(
        base,
        vec![(0, 1), (1, 2), (2, 3), (3, 0)],
        vec![(0, 2), (2, 0), (1, 3)],
        vec![1, 1, 1, 0],
        3,
    )
    .unwrap();
    let alpha = 0.6;
    let r = [1.0, -0.5, 2.0, 0.25];
    let mdp = build_aux_mdp(&s, alpha, &r).unwrap();
    // Turn (0, 2) off, keep (2, 0) on and add (1, 3).
    let on = [false, true, true];
    let mask: Vec<bool> = s.fragile_edges().map(|(k, _, present)| on[k] != present).collect();
    let graph = s.perturbed_graph(&mask);
    let x = mean_reward(&graph, alpha, &r).unwrap().values;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let episodes = 200_000;
    let n = s.node_count();
    for start in 0..n {
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..episodes {
            let mut state = start;
            let mut ret = 0.0;
            loop {
                let (moves, reward) = if state < n {
                    (mdp.original_transitions(state), r[state])
                } else {
                    let k = state - n;
                    let (t, rew) = if on[k] { mdp.on_action(k) } else { mdp.off_action(k) };
                    (vec![t], rew)
                };
                ret += reward;
                let mut u: f64 = rng.random();
                let mut next = None;
                for t in moves {
                    if u < t.prob {
                        next = Some(t.to);
                        break;
                    }
                    u -= t.prob;
                }
                match next {
                    Some(s) => state = s,
                    None => break,
                }
            }
            sum += ret;
            sq += ret * ret;
        }
        let mean = sum / episodes as f64;
        let sd = (sq / episodes as f64 - mean * mean).sqrt() / (episodes as f64).sqrt();
        assert!((mean - x[start]).abs() < 5.0 * sd + 1e-3, "start {start}: {mean} vs {}", x[start]);
    }
}

#[test]
fn closed_form_bound_arithmetic() {
    // d = 5 with two fragile edges.
    let edges = [(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (1, 0), (2, 0), (3, 0), (4, 0), (5, 0)];
    let base = DirectedGraph::from_edges(6, edges).unwrap();
    let fixed = vec![(0, 1), (0, 2), (0, 3), (1, 0), (2, 0), (3, 0), (4, 0), (5, 0)];
    let s = PerturbationScenario::new(base, fixed, vec![(0, 4), (0, 5)], vec![1; 6], 1).unwrap();
    let b = compute_upper_bounds(&s, 0.85, BoundMethod::ClosedForm, SolverOptions::default()).unwrap();
    let xbar = b.for_teleport(&unit(6, 0));
    assert!((xbar[0] - 5.0 / 3.0).abs() < 1e-15);
    assert_eq!(xbar[1], 1.0);
}

fn with_random_budget(inst: &RandomInstance, seed: u64) -> PerturbationScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(0..=inst.scenario.fragile_count());
    inst.scenario.with_global_budget(ppr_cert::graph::GlobalBudget::Limited(b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relaxation_is_sound(seed in any::<u64>()) {
        let inst = random_instance(seed, SHAPE);
        let s = with_random_budget(&inst, seed);
        let n = s.node_count();
        let r = rewards(seed, n);
        let t = (seed % n as u64) as usize;
        let z = unit(n, t);
        let exact = brute_force_pagerank_opt(&s, inst.alpha, &r, &z, true).unwrap().optimum;
        for method in [BoundMethod::ClosedForm, BoundMethod::PolicyOpt] {
            let (obj, lp, sol) = relaxed(&s, inst.alpha, &r, &z, method, Some(s.global_budget()));
            prop_assert!(obj >= exact - 1e-8, "{obj} < {exact}");
            // Coupling rows hold at the returned point.
            for (k, (i, _), _) in s.fragile_edges() {
                let d = s.total_degree(i) as f64;
                let gap = sol.primal[lp.x_off(k)] + sol.primal[lp.x_on(k)] - sol.primal[lp.x(i)] / d;
                prop_assert!(gap.abs() <= 1e-7);
            }
            // Recovery identity on integral optima.
            let rec = recover_pagerank(&lp, &s, &sol);
            if rec.integral {
                let mask: Vec<bool> = s.fragile_edges().map(|(k, _, b)| rec.present[k] != b).collect();
                let pi = dense_pagerank(&graph_adjacency(&s.perturbed_graph(&mask)), inst.alpha, &z);
                for v in 0..n {
                    prop_assert!((rec.pagerank[v] - pi[v]).abs() <= 1e-7);
                }
            }
            // The rounded attack is admissible.
            prop_assert!(s.is_admissible(&round_attack(&lp, &s, &sol), true));
        }
    }

    #[test]
    fn local_program_is_exact(seed in any::<u64>()) {
        let inst = random_instance(seed, SHAPE);
        let s = &inst.scenario;
        let n = s.node_count();
        let r = rewards(seed, n);
        let z = unit(n, 0);
        let pi = optimize_local(s, inst.alpha, &r, None).unwrap();
        let (local, ..) = relaxed(s, inst.alpha, &r, &z, BoundMethod::ClosedForm, None);
        prop_assert!((local - pi.objective(&z)).abs() <= 1e-6);
        let all = s.with_global_budget(ppr_cert::graph::GlobalBudget::Unlimited);
        let (obj, lp, sol) = relaxed(&all, inst.alpha, &r, &z, BoundMethod::ClosedForm, Some(all.fragile_count()));
        if recover_pagerank(&lp, &all, &sol).integral {
            prop_assert!((obj - pi.objective(&z)).abs() <= 1e-6);
        }
    }

    #[test]
    fn optimum_grows_with_budgets(seed in any::<u64>()) {
        let inst = random_instance(seed, SHAPE);
        let s = &inst.scenario;
        let n = s.node_count();
        let r = rewards(seed, n);
        let z = unit(n, n - 1);
        let mut last = f64::NEG_INFINITY;
        for b in 0..=s.fragile_count() {
            let (obj, ..) = relaxed(s, inst.alpha, &r, &z, BoundMethod::ClosedForm, Some(b));
            prop_assert!(obj >= last - 1e-9);
            last = obj;
        }
        let (before, ..) = relaxed(s, inst.alpha, &r, &z, BoundMethod::ClosedForm, Some(s.global_budget()));
        let mut more = s.local_budgets().to_vec();
        if let Some(v) = (0..n).find(|&v| more[v] < s.fragile_range(v).len()) {
            more[v] += 1;
            let bigger = s.with_local_budgets(more).unwrap();
            let (after, ..) = relaxed(&bigger, inst.alpha, &r, &z, BoundMethod::ClosedForm, Some(s.global_budget()));
            prop_assert!(after >= before - 1e-9);
        }
    }

    #[test]
    fn upper_bounds_dominate_feasible_values(seed in any::<u64>()) {
        let inst = random_instance(seed, SHAPE);
        let s = &inst.scenario;
        let n = s.node_count();
        let z = unit(n, (seed % n as u64) as usize);
        let max_x = brute_force_max_x(s, inst.alpha, &z, false).unwrap();
        for method in [BoundMethod::ClosedForm, BoundMethod::PolicyOpt] {
            let xbar = compute_upper_bounds(s, inst.alpha, method, SolverOptions::default()).unwrap().for_teleport(&z);
            for v in 0..n {
                prop_assert!(max_x[v] <= xbar[v] + 1e-12, "node {v}: {} > {}", max_x[v], xbar[v]);
            }
        }
    }

    #[test]
    fn global_certificates_are_sound(seed in any::<u64>(), k in 2usize..=3) {
        let inst = random_instance(seed, InstanceShape { classes: k, ..SHAPE });
        let s = with_random_budget(&inst, seed);
        let n = s.node_count();
        let targets: Vec<usize> = (0..n).collect();
        let certs = certify_global(&s, inst.alpha, &inst.logits, &inst.classes, &targets, GlobalOptions::default()).unwrap();
        for c in &certs {
            let oracle = brute_force_worst_margin(&s, inst.alpha, &inst.logits, c.node, c.y, true).unwrap();
            prop_assert!(c.lower_bound_margin <= oracle.margin + 1e-8);
            prop_assert!(c.attack_margin >= oracle.margin - 1e-8);
            let mask = s.mask_of(&c.rounded_attack).unwrap();
            prop_assert!(s.is_admissible(&mask, true));
            let m = exact_margin(&s, inst.alpha, &inst.logits, &mask, c.node, c.y, SolverOptions::default()).unwrap();
            prop_assert!((m - c.attack_margin).abs() <= 1e-12);
            match c.status {
                CertStatus::Robust => prop_assert!(c.lower_bound_margin > EPS_MARGIN),
                CertStatus::NonrobustWitnessed => prop_assert!(c.attack_verified && c.attack_margin < -EPS_MARGIN),
                CertStatus::Unknown => prop_assert!(c.lower_bound_margin <= EPS_MARGIN && !c.attack_verified),
                CertStatus::Nonrobust => prop_assert!(false, "local status in a global certificate"),
            }
        }
    }

    #[test]
    fn zero_global_budget_certifies_the_clean_margin(seed in any::<u64>()) {
        let inst = random_instance(seed, SHAPE);
        let s = inst.scenario.with_global_budget(ppr_cert::graph::GlobalBudget::Limited(0));
        let n = s.node_count();
        let targets: Vec<usize> = (0..n).collect();
        let certs = certify_global(&s, inst.alpha, &inst.logits, &inst.classes, &targets, GlobalOptions::default()).unwrap();
        let clean = vec![false; s.fragile_count()];
        for c in &certs {
            let m = exact_margin(&s, inst.alpha, &inst.logits, &clean, c.node, c.y, SolverOptions::default()).unwrap();
            prop_assert!((c.lower_bound_margin - m).abs() <= 1e-7, "{} vs {m}", c.lower_bound_margin);
        }
    }
}
