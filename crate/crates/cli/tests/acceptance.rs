//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ppr_cert::analysis::{parse_jsonl, CertStatus};
use ppr_cert::graph::{build_scenario, generate_sbm_with_blocks, largest_component, GlobalBudget, LocalBudget, ScenarioMode};
use ppr_cert::lp_solver::{solve_lp, LpStatus};
use ppr_cert::models::{feature_propagation_logits, FeatureMatrix, LogisticFitOptions, MlpModel};
use ppr_cert::oracle::{
    brute_force_worst_margin, dense_pagerank, graph_adjacency, random_instance, InstanceShape,
};
use ppr_cert::policy_iter::{certify_local_all, optimize_local};
use ppr_cert::ppr::{mean_reward, ppr_vector};
use ppr_cert::qclp_global::{
    assemble_relaxed_lp, build_aux_mdp, certify_global, compute_upper_bounds, recover_pagerank, BoundMethod,
    GlobalOptions,
};
use ppr_cert::ppr::SolverOptions;
use ppr_cert::robust_train::{grad_check, LossKind, RobustLossConfig, TrainingInstance};
use ppr_cert::{PerturbationScenario, EPS_MARGIN};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn unit(n: usize, t: usize) -> Vec<f64> {
    let mut z = vec![0.0; n];
    z[t] = 1.0;
    z
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure!(took <= limit, "{what} took {took:.1?}, limit {limit:?}");
    Ok(())
}

fn local_exactness() -> Check {
    let start = Instant::now();
    let (mut instances, mut nodes) = (0, 0);
    for seed in 0..200u64 {
        let k = 2 + (seed % 2) as usize;
        let inst = random_instance(seed, InstanceShape { max_nodes: 10, max_fragile: 10, classes: k });
        let s = &inst.scenario;
        let certs = certify_local_all(s, inst.alpha, &inst.logits, &inst.classes).map_err(|e| e.to_string())?;
        for c in &certs {
            let oracle = brute_force_worst_margin(s, inst.alpha, &inst.logits, c.node, c.y, false)
                .map_err(|e| e.to_string())?
                .margin;
            ensure!(
                (c.worst_margin - oracle).abs() <= 1e-8,
                "seed {seed} node {}: {} vs {oracle}",
                c.node,
                c.worst_margin
            );
            nodes += 1;
        }
        instances += 1;
    }
    within(start, Duration::from_secs(120), "exactness sweep")?;
    Ok(format!("{instances} instances, {nodes} node margins match enumeration"))
}

fn global_soundness() -> Check {
    let start = Instant::now();
    let (mut targets_checked, mut integral, mut instances) = (0, 0, 0);
    for seed in 0..200u64 {
        let k = 2 + (seed % 2) as usize;
        let inst = random_instance(1000 + seed, InstanceShape { max_nodes: 10, max_fragile: 10, classes: k });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rng.random_range(0..=inst.scenario.fragile_count());
        let s = inst.scenario.with_global_budget(GlobalBudget::Limited(b));
        let n = s.node_count();
        let targets: Vec<usize> = (0..n).collect();
        let certs = certify_global(&s, inst.alpha, &inst.logits, &inst.classes, &targets, GlobalOptions::default())
            .map_err(|e| e.to_string())?;
        for c in &certs {
            let oracle = brute_force_worst_margin(&s, inst.alpha, &inst.logits, c.node, c.y, true)
                .map_err(|e| e.to_string())?
                .margin;
            ensure!(
                c.lower_bound_margin <= oracle + 1e-8,
                "seed {seed} node {}: bound {} above oracle {oracle}",
                c.node,
                c.lower_bound_margin
            );
            targets_checked += 1;
        }

        // With B = |F| the relaxation is exact whenever its optimum is integral.
        let all = s.with_global_budget(GlobalBudget::Limited(s.fragile_count()));
        let bounds = compute_upper_bounds(&all, inst.alpha, BoundMethod::ClosedForm, SolverOptions::default())
            .map_err(|e| e.to_string())?;
        for t in 0..n {
            let y = inst.classes[t];
            for c in (0..k).filter(|&c| c != y) {
                let r: Vec<f64> = (0..n).map(|v| inst.logits.get(v, c) - inst.logits.get(v, y)).collect();
                let z = unit(n, t);
                let mdp = build_aux_mdp(&all, inst.alpha, &r).map_err(|e| e.to_string())?;
                let lp = assemble_relaxed_lp(&mdp, &all, &z, &bounds.for_teleport(&z), Some(all.fragile_count()))
                    .map_err(|e| e.to_string())?;
                let sol = solve_lp(&lp.lp).map_err(|e| e.to_string())?;
                ensure!(sol.status == LpStatus::Optimal, "seed {seed}: LP status {}", sol.status);
                if recover_pagerank(&lp, &all, &sol).integral {
                    let exact = optimize_local(&all, inst.alpha, &r, None).map_err(|e| e.to_string())?.objective(&z);
                    ensure!(
                        (sol.objective - exact).abs() <= 1e-6,
                        "seed {seed} node {t}: integral LP {} vs local exact {exact}",
                        sol.objective
                    );
                    integral += 1;
                }
            }
        }
        instances += 1;
    }
    within(start, Duration::from_secs(300), "soundness sweep")?;
    ensure!(integral > 0, "no integral LP optimum to compare");
    Ok(format!(
        "{instances} instances, {targets_checked} bounds sound, {integral} integral optima exact"
    ))
}

fn policy_iteration_behavior() -> Check {
    let mut report = Vec::new();
    let setups = [
        ("remove-only", generate_sbm_with_blocks(800, 2, 0.03, 0.003, 3), ScenarioMode::RemoveOnly),
        ("add-and-remove", generate_sbm_with_blocks(100, 2, 0.2, 0.02, 4), ScenarioMode::AddAndRemove),
    ];
    for (name, sbm, mode) in setups {
        let sbm = sbm.map_err(|e| e.to_string())?;
        let (g, _) = largest_component(&sbm.graph);
        let s = build_scenario(&g, mode, &LocalBudget::Unlimited, GlobalBudget::Unlimited).map_err(|e| e.to_string())?;
        ensure!(s.fragile_count() <= 10_000, "{name}: |F| = {}", s.fragile_count());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut worst_iters = 0;
        for _ in 0..3 {
            let r: Vec<f64> = (0..g.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let start = Instant::now();
            let res = optimize_local(&s, 0.85, &r, None).map_err(|e| e.to_string())?;
            within(start, Duration::from_secs(30), name)?;
            ensure!(res.iterations <= 25, "{name}: {} iterations", res.iterations);
            for w in res.trace.windows(2) {
                ensure!(
                    w[0].iter().zip(&w[1]).all(|(a, b)| *b >= a - 1e-8),
                    "{name}: value vector decreased"
                );
            }
            worst_iters = worst_iters.max(res.iterations);
        }
        report.push(format!("{name} |F|={} max {worst_iters} iterations", s.fragile_count()));
    }
    Ok(report.join("; "))
}

/// Runs the CLI; `Err` carries the exit code.
fn cli(args: &[String]) -> Result<(), String> {
    let mut full = vec!["ppr-cert".to_string(), "run".to_string(), "--quiet".to_string()];
    full.extend_from_slice(args);
    match ppr_cert_cli::run(full) {
        0 => Ok(()),
        code => Err(format!("ppr-cert run {} exited with {code}", args.join(" "))),
    }
}

fn quoted(p: &Path) -> String {
    format!("\"{}\"", p.display())
}

fn sweep_column(dir: &Path) -> Result<Vec<(f64, f64)>, String> {
    let text = fs::read_to_string(dir.join("sweep.csv")).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .skip(1)
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect())
}

/// Synthetic stand-in for a citation graph: SBM with noisy one-hot features.
struct Surrogate {
    dir: PathBuf,
    graph: PathBuf,
    labels: PathBuf,
    features: PathBuf,
    logits: PathBuf,
}

fn surrogate(root: &Path) -> Result<Surrogate, String> {
    let dir = root.join("surrogate");
    cli(&[
        "mode=gen-sbm".into(),
        "sbm.nodes=600".into(),
        "sbm.blocks=2".into(),
        "sbm.p_in=0.04".into(),
        "sbm.p_out=0.006".into(),
        "sbm.seed=11".into(),
        "sbm.feature_noise=1.2".into(),
        format!("paths.output={}", quoted(&dir)),
    ])?;
    let s = Surrogate {
        graph: dir.join("graph.tsv"),
        labels: dir.join("labels.tsv"),
        features: dir.join("features.csv"),
        logits: dir.join("logits.csv"),
        dir,
    };
    // Fixed logits from feature propagation, shared by the alpha comparison.
    let loaded = ppr_cert::graph::load_graph(&s.graph, &Default::default()).map_err(|e| e.to_string())?;
    let x = FeatureMatrix::load(&s.features).map_err(|e| e.to_string())?;
    let labels = ppr_cert::models::load_labels(&s.labels).map_err(|e| e.to_string())?;
    let ys = ppr_cert::models::dense_labels(&labels, x.nodes()).map_err(|e| e.to_string())?;
    let split = ppr_cert::models::split_per_class(&ys, 20, 0);
    let train: Vec<(usize, usize)> = split.train.iter().map(|&v| (v, ys[v])).collect();
    let (h, _) = feature_propagation_logits(&loaded.graph, 0.85, &x, &train, 2, LogisticFitOptions::default(), 0)
        .map_err(|e| e.to_string())?;
    fs::write(&s.logits, h.to_csv()).map_err(|e| e.to_string())?;
    Ok(s)
}

fn surrogate_args(s: &Surrogate, out: &Path) -> Vec<String> {
    vec![
        format!("paths.graph={}", quoted(&s.graph)),
        format!("paths.labels={}", quoted(&s.labels)),
        format!("paths.logits={}", quoted(&s.logits)),
        format!("paths.output={}", quoted(out)),
    ]
}

fn strength_curves(s: &Surrogate) -> Check {
    let strengths = "[-6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0]";
    let mut curves = Vec::new();
    for mode in ["remove-only", "add-and-remove"] {
        let out = s.dir.join(format!("sweep-{mode}"));
        let mut args = surrogate_args(s, &out);
        args.extend([
            "mode=sweep".to_string(),
            "sweep.parameter=strength".into(),
            format!("sweep.values={strengths}"),
            format!("scenario.mode={mode}"),
        ]);
        cli(&args)?;
        let curve = sweep_column(&out)?;
        ensure!(
            curve.windows(2).all(|w| w[1].1 <= w[0].1),
            "{mode}: ratio not monotone in s: {curve:?}"
        );
        curves.push(curve);
    }
    for (a, b) in curves[0].iter().zip(&curves[1]) {
        ensure!(a.1 >= b.1, "s = {}: remove-only {} < add-and-remove {}", a.0, a.1, b.1);
    }
    let fmt = |c: &[(f64, f64)]| c.iter().map(|p| format!("{:.3}", p.1)).collect::<Vec<_>>().join(" ");
    Ok(format!("remove-only [{}], add-and-remove [{}]", fmt(&curves[0]), fmt(&curves[1])))
}

fn alpha_comparison(s: &Surrogate) -> Check {
    let out = s.dir.join("sweep-alpha");
    let mut args = surrogate_args(s, &out);
    args.extend([
        "mode=sweep".to_string(),
        "sweep.parameter=alpha".into(),
        "sweep.values=[0.7, 0.9]".into(),
        "scenario.mode=remove-only".into(),
        "scenario.strength=6".into(),
    ]);
    cli(&args)?;
    let curve = sweep_column(&out)?;
    ensure!(curve[0].1 >= curve[1].1, "alpha 0.7 ratio {} < alpha 0.9 ratio {}", curve[0].1, curve[1].1);
    Ok(format!("alpha 0.7: {:.3}, alpha 0.9: {:.3}", curve[0].1, curve[1].1))
}

fn global_budget_curve(root: &Path) -> Check {
    let dir = root.join("global");
    cli(&[
        "mode=gen-sbm".into(),
        "sbm.nodes=150".into(),
        "sbm.p_in=0.08".into(),
        "sbm.p_out=0.01".into(),
        "sbm.seed=5".into(),
        "sbm.feature_noise=1.0".into(),
        format!("paths.output={}", quoted(&dir)),
    ])?;
    let common = |out: &Path| {
        vec![
            format!("paths.graph={}", quoted(&dir.join("graph.tsv"))),
            format!("paths.labels={}", quoted(&dir.join("labels.tsv"))),
            format!("paths.features={}", quoted(&dir.join("features.csv"))),
            "model.kind=feature-propagation".to_string(),
            "train.per_class=10".into(),
            "scenario.mode=remove-only".into(),
            "scenario.strength=8".into(),
            "targets.count=30".into(),
            "solver.bound_method=policy-opt".into(),
            "targets.seed=1".into(),
            format!("paths.output={}", quoted(out)),
        ]
    };
    let out = dir.join("sweep");
    let mut args = common(&out);
    args.extend(["mode=sweep".to_string(), "sweep.parameter=global-budget".into(), "sweep.values=[20.0, 5.0, 2.0, 1.0, 0.0]".into()]);
    cli(&args)?;
    let curve = sweep_column(&out)?;
    ensure!(
        curve.windows(2).all(|w| w[1].1 >= w[0].1),
        "ratio not nondecreasing as B shrinks: {curve:?}"
    );

    // At B = 0 the certificate is the clean margin.
    let cert = dir.join("b0");
    let mut args = common(&cert);
    args.extend(["mode=certify-global".to_string(), "scenario.global_budget=0".into()]);
    cli(&args)?;
    let records = parse_jsonl(&fs::read_to_string(cert.join("certificates.jsonl")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let dump = ppr_cert::graph::ScenarioDump::parse(&fs::read_to_string(cert.join("scenario.json")).unwrap())
        .map_err(|e| e.to_string())?;
    let scenario = PerturbationScenario::from_dump(&dump).map_err(|e| e.to_string())?;
    let adj = graph_adjacency(scenario.base());
    let h = {
        // Recompute the logits the pipeline used.
        let loaded = ppr_cert::graph::load_graph(&dir.join("graph.tsv"), &Default::default()).unwrap();
        let x = FeatureMatrix::load(&dir.join("features.csv")).unwrap();
        let labels = ppr_cert::models::load_labels(&dir.join("labels.tsv")).unwrap();
        let ys = ppr_cert::models::dense_labels(&labels, x.nodes()).unwrap();
        let split = ppr_cert::models::split_per_class(&ys, 10, 0);
        let train: Vec<(usize, usize)> = split.train.iter().map(|&v| (v, ys[v])).collect();
        feature_propagation_logits(&loaded.graph, 0.85, &x, &train, 2, LogisticFitOptions::default(), 0)
            .map_err(|e| e.to_string())?
            .0
    };
    let n = scenario.node_count();
    let clean_positive = records
        .iter()
        .filter(|r| {
            let pi = dense_pagerank(&adj, 0.85, &unit(n, r.node));
            let m: f64 = (0..n).map(|i| pi[i] * (h.get(i, r.y) - h.get(i, 1 - r.y))).sum();
            m > EPS_MARGIN
        })
        .count() as f64
        / records.len() as f64;
    let at_zero = curve.last().unwrap().1;
    ensure!(
        (at_zero - clean_positive).abs() < 1e-12,
        "B = 0 ratio {at_zero} vs clean-margin-positive ratio {clean_positive}"
    );
    let robust = records.iter().filter(|r| r.status == CertStatus::Robust).count() as f64 / records.len() as f64;
    ensure!((robust - clean_positive).abs() < 1e-12, "certify-global at B = 0 gives {robust}");
    let fmt = curve.iter().map(|p| format!("B={}:{:.3}", p.0, p.1)).collect::<Vec<_>>().join(" ");
    Ok(format!("{fmt}; clean-positive {clean_positive:.3}"))
}

fn robust_training(root: &Path) -> Check {
    let dir = root.join("training");
    cli(&[
        "mode=gen-sbm".into(),
        "sbm.nodes=90".into(),
        "sbm.p_in=0.2".into(),
        "sbm.p_out=0.005".into(),
        "sbm.seed=21".into(),
        "sbm.feature_noise=0.8".into(),
        format!("paths.output={}", quoted(&dir)),
    ])?;
    let mut means = Vec::new();
    for loss in ["ce", "cem", "rce"] {
        let mut total = 0.0;
        for seed in 0..5 {
            let out = dir.join(format!("{loss}-{seed}"));
            cli(&[
                "mode=train".into(),
                format!("paths.graph={}", quoted(&dir.join("graph.tsv"))),
                format!("paths.labels={}", quoted(&dir.join("labels.tsv"))),
                format!("paths.features={}", quoted(&dir.join("features.csv"))),
                format!("paths.output={}", quoted(&out)),
                "scenario.mode=remove-only".into(),
                "scenario.strength=6".into(),
                format!("train.loss={loss}"),
                format!("train.seed={seed}"),
                "train.per_class=10".into(),
                "train.epochs=1000".into(),
                "model.hidden=32".into(),
                "targets.pool=test".into(),
            ])?;
            let records = parse_jsonl(&fs::read_to_string(out.join("certificates.jsonl")).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            total += ppr_cert::analysis::certified_ratio(&records);
        }
        means.push(total / 5.0);
    }
    let (ce, cem, rce) = (means[0], means[1], means[2]);
    ensure!(cem >= ce && rce >= ce, "mean certified ratio CE {ce:.3}, CEM {cem:.3}, RCE {rce:.3}");
    Ok(format!("mean certified ratio CE {ce:.3}, CEM {cem:.3}, RCE {rce:.3}"))
}

fn gradient_checks() -> Check {
    let (mut stable, mut worst, mut attempts) = (0, 0.0f64, 0);
    for seed in 0..200u64 {
        if stable >= 24 {
            break;
        }
        attempts += 1;
        let sbm = generate_sbm_with_blocks(20, 2, 0.35, 0.05, seed).map_err(|e| e.to_string())?;
        let (g, ids) = largest_component(&sbm.graph);
        let n = g.node_count();
        if n < 8 {
            continue;
        }
        let blocks: Vec<usize> = ids.iter().map(|&v| sbm.blocks[v]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = blocks
            .iter()
            .flat_map(|&b| (0..4).map(move |d| if d == b { 1.0 } else { 0.0 }).collect::<Vec<_>>())
            .map(|v| v + rng.random_range(-0.6..0.6))
            .collect();
        let features = FeatureMatrix::new(n, 4, x).map_err(|e| e.to_string())?;
        let scenario = build_scenario(&g, ScenarioMode::AddAndRemove, &LocalBudget::Strength(10), GlobalBudget::Unlimited)
            .map_err(|e| e.to_string())?;
        let train: Vec<(usize, usize)> = (0..n).step_by(2).map(|v| (v, blocks[v])).collect();
        let inst = TrainingInstance { features: &features, scenario: &scenario, alpha: 0.85, train: &train, val: &[] };
        let model = MlpModel::seeded(4, 16, 2, seed);
        let kind = [LossKind::Cem, LossKind::Rce][(seed % 2) as usize];
        let loss = RobustLossConfig { kind, ..RobustLossConfig::default() };
        let report = grad_check(&model, &inst, loss, 1e-5).map_err(|e| e.to_string())?;
        if report.kink {
            continue;
        }
        ensure!(
            report.max_relative_error <= 1e-4,
            "seed {seed} ({kind:?}): relative error {}",
            report.max_relative_error
        );
        worst = worst.max(report.max_relative_error);
        stable += 1;
    }
    ensure!(stable >= 20, "only {stable} stable instances in {attempts} attempts");
    Ok(format!("{stable} stable instances, max relative error {worst:.2e}"))
}

fn kernel_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut worst_norm, mut worst_reward) = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let n = rng.random_range(20..120);
        let g = ppr_cert::graph::generate_sbm(n, 3, 0.2, 0.05, seed).map_err(|e| e.to_string())?;
        let (g, _) = largest_component(&g);
        let n = g.node_count();
        let alpha = rng.random_range(0.5..0.95);
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let z: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pi = ppr_vector(&g, alpha, &z).map_err(|e| e.to_string())?;
        worst_norm = worst_norm.max((pi.values.iter().sum::<f64>() - 1.0).abs());
        let x = mean_reward(&g, alpha, &r).map_err(|e| e.to_string())?;
        let lhs: f64 = r.iter().zip(&pi.values).map(|(a, b)| a * b).sum();
        let rhs: f64 = (1.0 - alpha) * z.iter().zip(&x.values).map(|(a, b)| a * b).sum::<f64>();
        worst_reward = worst_reward.max((lhs - rhs).abs());
    }
    ensure!(worst_norm <= 1e-8, "normalization off by {worst_norm}");
    ensure!(worst_reward <= 1e-9, "reward identity off by {worst_reward}");

    let (mut integral, mut worst_recovery) = (0, 0.0f64);
    for seed in 0..200u64 {
        let inst = random_instance(5000 + seed, InstanceShape { max_nodes: 9, max_fragile: 10, classes: 2 });
        let s = &inst.scenario;
        let n = s.node_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rng.random_range(0..=s.fragile_count());
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = unit(n, (seed as usize) % n);
        let bounds = compute_upper_bounds(s, inst.alpha, BoundMethod::ClosedForm, SolverOptions::default())
            .map_err(|e| e.to_string())?;
        let mdp = build_aux_mdp(s, inst.alpha, &r).map_err(|e| e.to_string())?;
        let lp = assemble_relaxed_lp(&mdp, s, &z, &bounds.for_teleport(&z), Some(b)).map_err(|e| e.to_string())?;
        let sol = solve_lp(&lp.lp).map_err(|e| e.to_string())?;
        let rec = recover_pagerank(&lp, s, &sol);
        if !rec.integral {
            continue;
        }
        let mask: Vec<bool> = s.fragile_edges().map(|(k, _, in_base)| rec.present[k] != in_base).collect();
        let pi = dense_pagerank(&graph_adjacency(&s.perturbed_graph(&mask)), inst.alpha, &z);
        for v in 0..n {
            worst_recovery = worst_recovery.max((rec.pagerank[v] - pi[v]).abs());
        }
        integral += 1;
    }
    ensure!(integral > 0, "no integral LP solutions");
    ensure!(worst_recovery <= 1e-7, "recovery identity off by {worst_recovery}");
    Ok(format!(
        "normalization {worst_norm:.1e}, reward identity {worst_reward:.1e}, recovery {worst_recovery:.1e} over {integral} integral solutions"
    ))
}

fn manifest_determinism(root: &Path) -> Check {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut checked = Vec::new();
    for (config, extra) in [("certify_local.toml", vec![]), ("certify_global.toml", vec!["scenario.global_budget=4".to_string()])] {
        let first = root.join(format!("det-{config}"));
        let mut args = vec!["-c".to_string(), fixtures.join(config).display().to_string(), format!("paths.output={}", quoted(&first))];
        args.extend(extra);
        cli(&args)?;
        let manifest = first.join("manifest.json");
        let mut copies = Vec::new();
        for i in 0..2 {
            let out = root.join(format!("det-{config}-{i}"));
            ppr_cert_cli::rerun(&manifest, Some(&out)).map_err(|e| e.to_string())?;
            copies.push(fs::read(out.join("certificates.jsonl")).map_err(|e| e.to_string())?);
        }
        let original = fs::read(first.join("certificates.jsonl")).map_err(|e| e.to_string())?;
        ensure!(copies[0] == copies[1] && copies[0] == original, "{config}: certificate files differ");
        checked.push(config);
    }
    Ok(format!("reruns byte-identical for {}", checked.join(", ")))
}

fn main() {
    let root = tempfile::tempdir().expect("temporary directory");
    let root = root.path().to_path_buf();
    let surrogate_data = catch_unwind(|| surrogate(&root)).unwrap_or_else(|_| Err("surrogate generation panicked".into()));
    let needs_surrogate = |f: fn(&Surrogate) -> Check| -> Check {
        match &surrogate_data {
            Ok(s) => f(s),
            Err(e) => Err(format!("surrogate unavailable: {e}")),
        }
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("exactness under local budgets", Box::new(local_exactness)),
        ("soundness under global budgets", Box::new(global_soundness)),
        ("policy iteration behavior", Box::new(policy_iteration_behavior)),
        ("certified ratio vs attack strength", Box::new(|| needs_surrogate(strength_curves))),
        ("certified ratio vs teleport", Box::new(|| needs_surrogate(alpha_comparison))),
        ("certified ratio vs global budget", Box::new(|| global_budget_curve(&root))),
        ("robust training", Box::new(|| robust_training(&root))),
        ("gradient checks", Box::new(gradient_checks)),
        ("kernel identities", Box::new(kernel_identities)),
        ("manifest determinism", Box::new(|| manifest_determinism(&root))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
