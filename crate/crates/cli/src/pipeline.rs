//! The pipelines behind each run mode. Every pipeline returns its output
//! files in memory; the caller writes them and the manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ppr_cert::analysis::{
    all_purities, parse_jsonl, purity_buckets, ratio_by_degree, records_to_jsonl, sample_targets, series_csv,
    summary_csv, certified_ratio, CertificateRecord,
};
use ppr_cert::graph::{
    build_scenario, generate_sbm_with_blocks, load_graph, write_edge_list, GlobalBudget, LoadOptions, LoadedGraph,
    LocalBudget,
};
use ppr_cert::models::{
    argmax_rows, diffuse_logits_with, feature_propagation_logits, label_propagation_logits, load_labels, parse_labels,
    FeatureMatrix, LogisticFitOptions, LogitsMatrix, MlpModel, Model,
};
use ppr_cert::policy_iter::{certify_local_with, default_pi_solver};
use ppr_cert::ppr::SolverOptions;
use ppr_cert::qclp_global::{certify_global, exact_margin, GlobalOptions};
use ppr_cert::robust_train::{seeded_rng, train_robust, RobustLossConfig, TrainingInstance};
use ppr_cert::{EdgePolicy, PerturbationScenario, EPS_MARGIN};
use rand::RngExt;
use serde::Serialize;

use crate::config::{CertifyClass, Mode, ModelKind, RunConfig, SweepParameter, TargetPool};
use crate::CliError;

/// Output file name to contents.
pub type Files = BTreeMap<String, Vec<u8>>;

pub fn load_options(config: &RunConfig) -> LoadOptions {
    LoadOptions {
        symmetrize: config.graph.symmetrize,
        allow_self_loops: config.graph.allow_self_loops,
        largest_component: config.graph.largest_component,
    }
}

/// Graph plus labels in the loaded graph's ids.
struct Workspace {
    loaded: LoadedGraph,
    labels: Vec<Option<usize>>,
    has_labels: bool,
}

impl Workspace {
    fn load(config: &RunConfig) -> Result<Self, CliError> {
        let path = config
            .paths
            .graph
            .as_ref()
            .ok_or_else(|| CliError::Config("paths.graph required".into()))?;
        let loaded = load_graph(path, &load_options(config))?;
        let n = loaded.graph.node_count();
        let mut labels = vec![None; n];
        let has_labels = config.paths.labels.is_some();
        if let Some(path) = &config.paths.labels {
            let mut dropped = 0;
            for (v, y) in load_labels(path)? {
                match loaded.node_of(v) {
                    Some(i) => labels[i] = Some(y),
                    None => dropped += 1,
                }
            }
            if dropped > 0 {
                log::warn!("{dropped} labeled nodes are not in the graph");
            }
        }
        Ok(Workspace {
            loaded,
            labels,
            has_labels,
        })
    }

    fn n(&self) -> usize {
        self.loaded.graph.node_count()
    }

    fn file_id(&self, v: usize) -> usize {
        self.loaded.original_ids[v]
    }

    fn rows_needed(&self) -> usize {
        self.loaded.original_ids.last().map_or(0, |&m| m + 1)
    }

    fn classes_in_labels(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |&m| m + 1)
    }

    /// Keeps the rows of a per-file-id matrix that belong to loaded nodes.
    fn select_rows(&self, what: &str, rows: usize, cols: usize, values: &[f64]) -> Result<Vec<f64>, CliError> {
        if rows < self.rows_needed() {
            return Err(CliError::Validation(format!(
                "{what} has {rows} rows but the graph uses node ids up to {}",
                self.rows_needed() - 1
            )));
        }
        Ok(self
            .loaded
            .original_ids
            .iter()
            .flat_map(|&v| values[v * cols..(v + 1) * cols].iter().copied())
            .collect())
    }

    fn features(&self, config: &RunConfig) -> Result<(FeatureMatrix, FeatureMatrix), CliError> {
        let path = config
            .paths
            .features
            .as_ref()
            .ok_or_else(|| CliError::Config("paths.features required".into()))?;
        let full = FeatureMatrix::load(path)?;
        let values = self.select_rows("feature file", full.nodes(), full.dims(), full.values())?;
        let local = FeatureMatrix::new(self.n(), full.dims(), values)?;
        Ok((full, local))
    }

    fn budgets(&self, path: &Path) -> Result<Vec<usize>, CliError> {
        let mut out = vec![0; self.n()];
        for (v, b) in parse_labels(&fs::read_to_string(path)?)? {
            match self.loaded.node_of(v) {
                Some(i) => out[i] = b,
                None => log::warn!("budget for node {v}, which is not in the graph"),
            }
        }
        Ok(out)
    }

    /// Train/val/test split over labeled nodes.
    fn split(&self, config: &RunConfig) -> Split {
        let labeled: Vec<usize> = (0..self.n()).filter(|&v| self.labels[v].is_some()).collect();
        let ys: Vec<usize> = labeled.iter().map(|&v| self.labels[v].unwrap()).collect();
        let s = ppr_cert::models::split_per_class(&ys, config.train.per_class, config.train.seed);
        let pick = |idx: &[usize]| -> Vec<(usize, usize)> { idx.iter().map(|&i| (labeled[i], ys[i])).collect() };
        Split {
            train: pick(&s.train),
            val: pick(&s.val),
            test: s.test.iter().map(|&i| labeled[i]).collect(),
        }
    }

    fn scenario(
        &self,
        config: &RunConfig,
        strength: Option<i64>,
        global: GlobalBudget,
    ) -> Result<PerturbationScenario, CliError> {
        let local = match strength {
            Some(s) => LocalBudget::Strength(s),
            None => {
                let budgets = config.paths.budgets.as_ref().map(|p| self.budgets(p)).transpose()?;
                config.local_budget(budgets)?
            }
        };
        let s = build_scenario(&self.loaded.graph, config.scenario.mode, &local, GlobalBudget::Unlimited)?;
        let global = match global {
            GlobalBudget::Limited(b) if b > s.fragile_count() => {
                log::warn!("global budget {b} exceeds the {} fragile edges; clamped", s.fragile_count());
                GlobalBudget::Limited(s.fragile_count())
            }
            g => g,
        };
        Ok(s.with_global_budget(global))
    }

    fn record_to_file_ids(&self, mut r: CertificateRecord) -> CertificateRecord {
        r.node = self.file_id(r.node);
        for e in &mut r.witness_flips {
            *e = [self.file_id(e[0]), self.file_id(e[1])];
        }
        r
    }

    fn record_from_file_ids(&self, mut r: CertificateRecord) -> Result<CertificateRecord, CliError> {
        let map = |v: usize| {
            self.loaded
                .node_of(v)
                .ok_or_else(|| CliError::Validation(format!("certificate node {v} is not in the graph")))
        };
        r.node = map(r.node)?;
        for e in &mut r.witness_flips {
            *e = [map(e[0])?, map(e[1])?];
        }
        Ok(r)
    }

    fn label_vector(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.unwrap_or(usize::MAX)).collect()
    }
}

struct Split {
    train: Vec<(usize, usize)>,
    val: Vec<(usize, usize)>,
    test: Vec<usize>,
}

fn pi_solver(config: &RunConfig) -> SolverOptions {
    let options = config.solver.options();
    if options == SolverOptions::default() {
        default_pi_solver()
    } else {
        options
    }
}

/// Logits `H` in the loaded graph's ids.
fn logits(config: &RunConfig, ws: &Workspace, alpha: f64) -> Result<LogitsMatrix, CliError> {
    match config.model.kind {
        ModelKind::Logits => {
            let path = config
                .paths
                .logits
                .as_ref()
                .ok_or_else(|| CliError::Config("paths.logits required".into()))?;
            let full = LogitsMatrix::load_csv(path)?;
            let values = ws.select_rows("logits file", full.nodes(), full.classes(), full.values())?;
            Ok(LogitsMatrix::new(ws.n(), full.classes(), values)?)
        }
        ModelKind::LabelPropagation => {
            let split = ws.split(config);
            Ok(label_propagation_logits(&split.train, ws.n(), ws.classes_in_labels())?)
        }
        ModelKind::FeaturePropagation => {
            let (_, x) = ws.features(config)?;
            let split = ws.split(config);
            let options = LogisticFitOptions {
                reg: config.model.reg,
                ..LogisticFitOptions::default()
            };
            let (h, _) = feature_propagation_logits(
                &ws.loaded.graph,
                alpha,
                &x,
                &split.train,
                ws.classes_in_labels(),
                options,
                config.train.seed,
            )?;
            Ok(h)
        }
        ModelKind::Mlp => {
            let path = config
                .paths
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Config("paths.checkpoint required".into()))?;
            let model = MlpModel::from_checkpoint(&fs::read(path)?)?;
            let (_, x) = ws.features(config)?;
            Ok(model.forward(&x)?)
        }
    }
}

/// Class certified at every node.
fn certified_classes(
    config: &RunConfig,
    ws: &Workspace,
    h: &LogitsMatrix,
    alpha: f64,
    targets: &[usize],
) -> Result<Vec<usize>, CliError> {
    let predicted = argmax_rows(&diffuse_logits_with(&ws.loaded.graph, alpha, h, config.solver.options())?);
    match config.model.certify_class {
        CertifyClass::Predicted => Ok(predicted),
        CertifyClass::Label => {
            let mut out = predicted;
            for &t in targets {
                let y = ws.labels[t].ok_or_else(|| {
                    CliError::Validation(format!("target {} has no label", ws.file_id(t)))
                })?;
                if y >= h.classes() {
                    return Err(CliError::Validation(format!("label {y} out of range for {} classes", h.classes())));
                }
                out[t] = y;
            }
            Ok(out)
        }
    }
}

fn targets(config: &RunConfig, ws: &Workspace) -> Result<Vec<usize>, CliError> {
    let pool: Vec<usize> = match config.targets.pool {
        TargetPool::All => (0..ws.n()).collect(),
        TargetPool::Labeled => (0..ws.n()).filter(|&v| ws.labels[v].is_some()).collect(),
        TargetPool::Test => ws.split(config).test,
    };
    if pool.is_empty() {
        return Err(CliError::Validation("target pool is empty".into()));
    }
    Ok(if config.targets.count == 0 {
        pool
    } else {
        sample_targets(&pool, config.targets.count, config.targets.seed)
    })
}

fn summary(ws: &Workspace, records: &[CertificateRecord], predicted: &[usize]) -> String {
    let labeled = ws.has_labels && records.iter().all(|r| ws.labels[r.node].is_some());
    let labels = ws.label_vector();
    if labeled {
        summary_csv(records, Some(predicted), Some(&labels))
    } else {
        summary_csv(records, None, None)
    }
}

fn text(files: &mut Files, name: &str, body: String) {
    files.insert(name.to_string(), body.into_bytes());
}

fn certificate_files(files: &mut Files, ws: &Workspace, records: Vec<CertificateRecord>, predicted: &[usize]) {
    text(files, "summary.csv", summary(ws, &records, predicted));
    let mapped: Vec<_> = records.into_iter().map(|r| ws.record_to_file_ids(r)).collect();
    text(files, "certificates.jsonl", records_to_jsonl(&mapped));
}

fn local_records(
    config: &RunConfig,
    ws: &Workspace,
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    targets: &[usize],
) -> Result<(Vec<CertificateRecord>, Vec<usize>), CliError> {
    let classes = certified_classes(config, ws, h, alpha, targets)?;
    let certs = certify_local_with(scenario, alpha, h, &classes, pi_solver(config))?;
    let predicted = argmax_rows(&diffuse_logits_with(scenario.base(), alpha, h, config.solver.options())?);
    Ok((targets.iter().map(|&t| CertificateRecord::from(&certs[t])).collect(), predicted))
}

fn global_records(
    config: &RunConfig,
    ws: &Workspace,
    scenario: &PerturbationScenario,
    alpha: f64,
    h: &LogitsMatrix,
    targets: &[usize],
) -> Result<(Vec<CertificateRecord>, Vec<usize>), CliError> {
    let classes = certified_classes(config, ws, h, alpha, targets)?;
    let options = GlobalOptions {
        bound_method: config.solver.bound(),
        solver: config.solver.options(),
    };
    let certs = certify_global(scenario, alpha, h, &classes, targets, options)?;
    let predicted = argmax_rows(&diffuse_logits_with(scenario.base(), alpha, h, config.solver.options())?);
    Ok((certs.iter().map(CertificateRecord::from).collect(), predicted))
}

pub fn execute(config: &RunConfig) -> Result<Files, CliError> {
    match config.mode {
        Mode::CertifyLocal => certify_local(config),
        Mode::CertifyGlobal => certify_global_mode(config),
        Mode::Train => train(config),
        Mode::Attack => attack(config),
        Mode::GenSbm => gen_sbm(config),
        Mode::Report => report(config),
        Mode::Sweep => sweep(config),
    }
}

fn certify_local(config: &RunConfig) -> Result<Files, CliError> {
    let ws = Workspace::load(config)?;
    let scenario = ws.scenario(config, None, GlobalBudget::Unlimited)?;
    let h = logits(config, &ws, config.alpha)?;
    let targets = targets(config, &ws)?;
    let (records, predicted) = local_records(config, &ws, &scenario, config.alpha, &h, &targets)?;
    let mut files = Files::new();
    certificate_files(&mut files, &ws, records, &predicted);
    text(&mut files, "scenario.json", scenario.to_dump().to_json());
    Ok(files)
}

fn certify_global_mode(config: &RunConfig) -> Result<Files, CliError> {
    let ws = Workspace::load(config)?;
    let scenario = ws.scenario(config, None, config.global_budget())?;
    let h = logits(config, &ws, config.alpha)?;
    let targets = targets(config, &ws)?;
    let (records, predicted) = global_records(config, &ws, &scenario, config.alpha, &h, &targets)?;
    let mut files = Files::new();
    certificate_files(&mut files, &ws, records, &predicted);
    text(&mut files, "scenario.json", scenario.to_dump().to_json());
    Ok(files)
}

fn train(config: &RunConfig) -> Result<Files, CliError> {
    let ws = Workspace::load(config)?;
    let scenario = ws.scenario(config, None, GlobalBudget::Unlimited)?;
    let (full_x, x) = ws.features(config)?;
    let split = ws.split(config);
    let classes = ws.classes_in_labels();
    if classes < 2 {
        return Err(CliError::Validation("training needs at least two classes".into()));
    }
    let t = &config.train;
    let mut model = MlpModel::seeded(x.dims(), config.model.hidden, classes, t.seed);
    let train_config = ppr_cert::robust_train::TrainConfig {
        loss: RobustLossConfig {
            kind: t.loss.into(),
            hinge_margin: t.margin,
            cadence: t.cadence,
        },
        learning_rate: t.lr,
        weight_decay: t.reg,
        max_epochs: t.epochs,
        patience: t.patience,
        solver: config.solver.options(),
    };
    let inst = TrainingInstance {
        features: &x,
        scenario: &scenario,
        alpha: config.alpha,
        train: &split.train,
        val: &split.val,
    };
    let history = train_robust(&mut model, &inst, &train_config)?;
    log::info!(
        "trained {} epochs, kept epoch {}",
        history.epochs.len(),
        history.best_epoch
    );

    let mut files = Files::new();
    files.insert("model.bin".into(), model.to_checkpoint());
    text(&mut files, "history.csv", history.to_csv());
    text(&mut files, "logits.csv", model.forward(&full_x)?.to_csv());
    let h = model.forward(&x)?;
    let targets = targets(config, &ws)?;
    let (records, predicted) = local_records(config, &ws, &scenario, config.alpha, &h, &targets)?;
    certificate_files(&mut files, &ws, records, &predicted);
    text(&mut files, "scenario.json", scenario.to_dump().to_json());
    Ok(files)
}

#[derive(Serialize)]
struct AttackRecord {
    node: usize,
    y: usize,
    predicted_after: usize,
    margin: f64,
    flips: Vec<[usize; 2]>,
}

fn attack(config: &RunConfig) -> Result<Files, CliError> {
    let ws = Workspace::load(config)?;
    let global = config.global_budget();
    let scenario = ws.scenario(config, None, global)?;
    let h = logits(config, &ws, config.alpha)?;
    let targets = targets(config, &ws)?;
    let (records, _) = match global {
        GlobalBudget::Limited(_) => global_records(config, &ws, &scenario, config.alpha, &h, &targets)?,
        GlobalBudget::Unlimited => local_records(config, &ws, &scenario, config.alpha, &h, &targets)?,
    };
    let mut out = String::new();
    let mut found = 0usize;
    for r in &records {
        let policy = EdgePolicy::from_edges(r.witness_flips.iter().map(|e| (e[0], e[1])));
        let mask = scenario.mask_of(&policy)?;
        let margin = exact_margin(&scenario, config.alpha, &h, &mask, r.node, r.y, config.solver.options())?;
        if margin >= -EPS_MARGIN {
            continue;
        }
        let graph = scenario.perturbed_graph(&mask);
        let after = argmax_rows(&diffuse_logits_with(&graph, config.alpha, &h, config.solver.options())?)[r.node];
        found += 1;
        let rec = AttackRecord {
            node: ws.file_id(r.node),
            y: r.y,
            predicted_after: after,
            margin,
            flips: r.witness_flips.iter().map(|e| [ws.file_id(e[0]), ws.file_id(e[1])]).collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("attack serializes"));
        out.push('\n');
    }
    let mut files = Files::new();
    text(&mut files, "attacks.jsonl", out);
    text(
        &mut files,
        "summary.csv",
        format!("metric,value\ntargets,{}\nattacked,{found}\n", records.len()),
    );
    text(&mut files, "scenario.json", scenario.to_dump().to_json());
    Ok(files)
}

fn gen_sbm(config: &RunConfig) -> Result<Files, CliError> {
    let s = &config.sbm;
    let sbm = generate_sbm_with_blocks(s.nodes, s.blocks, s.p_in, s.p_out, s.seed)?;
    let mut labels = String::new();
    for (v, b) in sbm.blocks.iter().enumerate() {
        let _ = writeln!(labels, "{v}\t{b}");
    }
    let dims = s.blocks + 2;
    let mut rng = seeded_rng(s.seed.wrapping_add(1));
    let w = s.feature_noise.abs();
    let values: Vec<f64> = sbm
        .blocks
        .iter()
        .flat_map(|&b| {
            (0..dims)
                .map(|d| {
                    let noise = if w > 0.0 { rng.random_range(-w..w) } else { 0.0 };
                    noise + if d == b { 1.0 } else { 0.0 }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let features = FeatureMatrix::new(s.nodes, dims, values)?;
    let mut files = Files::new();
    text(&mut files, "graph.tsv", write_edge_list(&sbm.graph));
    text(&mut files, "labels.tsv", labels);
    text(&mut files, "features.csv", features.to_csv());
    Ok(files)
}

fn report(config: &RunConfig) -> Result<Files, CliError> {
    let ws = Workspace::load(config)?;
    let path = config
        .paths
        .certificates
        .as_ref()
        .ok_or_else(|| CliError::Config("paths.certificates required".into()))?;
    let records = parse_jsonl(&fs::read_to_string(path)?)?
        .into_iter()
        .map(|r| ws.record_from_file_ids(r))
        .collect::<Result<Vec<_>, _>>()?;
    let mut predicted = vec![usize::MAX; ws.n()];
    for r in &records {
        predicted[r.node] = r.y;
    }
    let mut files = Files::new();
    text(&mut files, "summary.csv", summary(&ws, &records, &predicted));
    let mut degree = String::from("degree,nodes,certified_ratio\n");
    for (d, n, ratio) in ratio_by_degree(&records, &ws.loaded.graph) {
        let _ = writeln!(degree, "{d},{n},{ratio}");
    }
    text(&mut files, "degree.csv", degree);
    if ws.has_labels && records.iter().all(|r| ws.labels[r.node].is_some()) {
        // Unlabeled nodes get a class no labeled node has.
        let fill = ws.classes_in_labels();
        let labels: Vec<usize> = ws.labels.iter().map(|l| l.unwrap_or(fill)).collect();
        let purity = all_purities(&ws.loaded.graph, &labels);
        let mut out = String::from("purity,nodes,mean_worst_margin\n");
        for (p, n, m) in purity_buckets(&records, &purity, 10) {
            let _ = writeln!(out, "{p},{n},{m}");
        }
        text(&mut files, "purity.csv", out);
    }
    Ok(files)
}

fn sweep(config: &RunConfig) -> Result<Files, CliError> {
    let ws = Workspace::load(config)?;
    let h = logits(config, &ws, config.alpha)?;
    let targets = targets(config, &ws)?;
    let mut rows = Vec::new();
    for &value in &config.sweep.values {
        let ratio = match config.sweep.parameter {
            SweepParameter::Strength => {
                let scenario = ws.scenario(config, Some(value as i64), GlobalBudget::Unlimited)?;
                certified_ratio(&local_records(config, &ws, &scenario, config.alpha, &h, &targets)?.0)
            }
            SweepParameter::Alpha => {
                let scenario = ws.scenario(config, None, GlobalBudget::Unlimited)?;
                certified_ratio(&local_records(config, &ws, &scenario, value, &h, &targets)?.0)
            }
            SweepParameter::GlobalBudget => {
                let scenario = ws.scenario(config, None, GlobalBudget::Limited(value as usize))?;
                certified_ratio(&global_records(config, &ws, &scenario, config.alpha, &h, &targets)?.0)
            }
        };
        log::info!("sweep value {value}: certified ratio {ratio}");
        rows.push((value, ratio));
    }
    let key = match config.sweep.parameter {
        SweepParameter::Strength => "strength",
        SweepParameter::Alpha => "alpha",
        SweepParameter::GlobalBudget => "global_budget",
    };
    let mut files = Files::new();
    text(&mut files, "sweep.csv", series_csv(key, "certified_ratio", &rows));
    Ok(files)
}
