//! Run configuration: a TOML file with a flat set of dotted keys.
//!
//! Every key can be overridden with a `key=value` argument on the command
//! line, e.g. `alpha=0.7` or `scenario.strength=5`. Values are read as TOML
//! literals and fall back to plain strings.

use std::fs;
use std::path::{Path, PathBuf};

use ppr_cert::graph::{build_scenario, load_graph, GlobalBudget, LocalBudget, ScenarioMode};
use ppr_cert::qclp_global::BoundMethod;
use ppr_cert::ppr::{SolverBackend, SolverOptions};
use ppr_cert::robust_train::LossKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    CertifyLocal,
    CertifyGlobal,
    Train,
    Attack,
    GenSbm,
    Report,
    Sweep,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub graph: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub logits: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// `node<TAB>budget` lines; overrides `scenario.strength`.
    pub budgets: Option<PathBuf>,
    /// Certificate file read by `report`.
    pub certificates: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub symmetrize: bool,
    pub largest_component: bool,
    pub allow_self_loops: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            symmetrize: true,
            largest_component: false,
            allow_self_loops: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: ScenarioMode,
    pub strength: Option<i64>,
    pub unlimited_local: bool,
    pub global_budget: Option<usize>,
    pub unlimited_global: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode: ScenarioMode::RemoveOnly,
            strength: None,
            unlimited_local: false,
            global_budget: None,
            unlimited_global: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Auto,
    Iterative,
    Dense,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    #[default]
    ClosedForm,
    PolicyOpt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub backend: Backend,
    pub tolerance: f64,
    pub bound_method: BoundKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            backend: Backend::Auto,
            tolerance: 1e-10,
            bound_method: BoundKind::ClosedForm,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        let backend = match self.backend {
            Backend::Auto => SolverBackend::Auto,
            Backend::Iterative => SolverBackend::Iterative,
            Backend::Dense => SolverBackend::Dense,
        };
        SolverOptions {
            backend,
            tolerance: self.tolerance,
        }
    }

    pub fn bound(&self) -> BoundMethod {
        match self.bound_method {
            BoundKind::ClosedForm => BoundMethod::ClosedForm,
            BoundKind::PolicyOpt => BoundMethod::PolicyOpt,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Logits,
    LabelPropagation,
    FeaturePropagation,
    Mlp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertifyClass {
    #[default]
    Predicted,
    Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden width of the MLP trained by `train`.
    pub hidden: usize,
    /// L2 strength of the feature-propagation fit.
    pub reg: f64,
    pub certify_class: CertifyClass,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Logits,
            hidden: 64,
            reg: 1e-3,
            certify_class: CertifyClass::Predicted,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossName {
    #[default]
    Ce,
    Rce,
    Cem,
}

impl From<LossName> for LossKind {
    fn from(l: LossName) -> Self {
        match l {
            LossName::Ce => LossKind::Ce,
            LossName::Rce => LossKind::Rce,
            LossName::Cem => LossKind::Cem,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossName,
    /// Hinge margin of the CEM loss.
    pub margin: f64,
    pub lr: f64,
    pub reg: f64,
    pub patience: usize,
    pub epochs: usize,
    pub cadence: usize,
    pub seed: u64,
    /// Training and validation nodes drawn per class.
    pub per_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossName::Ce,
            margin: 1.0,
            lr: 1e-2,
            reg: 5e-2,
            patience: 100,
            epochs: 3000,
            cadence: 1,
            seed: 0,
            per_class: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetPool {
    #[default]
    All,
    /// Labeled nodes outside the training and validation split.
    Test,
    Labeled,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    /// Number of sampled targets; 0 keeps the whole pool.
    pub count: usize,
    pub seed: u64,
    pub pool: TargetPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub nodes: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
    /// Half-width of the uniform noise added to the one-hot block features.
    pub feature_noise: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            nodes: 500,
            blocks: 2,
            p_in: 0.04,
            p_out: 0.004,
            seed: 0,
            feature_noise: 0.8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    #[default]
    Strength,
    Alpha,
    GlobalBudget,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub alpha: f64,
    pub paths: Paths,
    pub graph: GraphConfig,
    pub scenario: ScenarioConfig,
    pub solver: SolverConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub targets: TargetConfig,
    pub sbm: SbmConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::CertifyLocal,
            alpha: 0.85,
            paths: Paths {
                output: PathBuf::from("out"),
                ..Paths::default()
            },
            graph: GraphConfig::default(),
            scenario: ScenarioConfig::default(),
            solver: SolverConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            targets: TargetConfig::default(),
            sbm: SbmConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text and applies `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("config parse error: {e}")))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {e}")))
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&text, &[])?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let dir = std::path::absolute(dir).unwrap_or_else(|_| dir.to_path_buf());
        config.resolve_relative(&dir);
        let mut table = toml::Table::try_from(&config).expect("config serializes");
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {e}")))
    }

    fn resolve_relative(&mut self, dir: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.graph,
            &mut p.features,
            &mut p.labels,
            &mut p.logits,
            &mut p.checkpoint,
            &mut p.budgets,
            &mut p.certificates,
        ] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = dir.join(&*path);
                }
            }
        }
        if p.output.is_relative() {
            p.output = dir.join(&p.output);
        }
    }

    /// Canonical TOML text of the resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn local_budget(&self, budgets: Option<Vec<usize>>) -> Result<LocalBudget, CliError> {
        match (budgets, self.scenario.strength, self.scenario.unlimited_local) {
            (Some(b), None, false) => Ok(LocalBudget::PerNode(b)),
            (None, Some(s), false) => Ok(LocalBudget::Strength(s)),
            (None, None, true) => Ok(LocalBudget::Unlimited),
            (None, None, false) => Err(CliError::Config(
                "one of scenario.strength, paths.budgets or scenario.unlimited_local required".into(),
            )),
            _ => Err(CliError::Config(
                "scenario.strength, paths.budgets and scenario.unlimited_local are exclusive".into(),
            )),
        }
    }

    pub fn global_budget(&self) -> GlobalBudget {
        match self.scenario.global_budget {
            Some(b) if !self.scenario.unlimited_global => GlobalBudget::Limited(b),
            _ => GlobalBudget::Unlimited,
        }
    }

    fn needs_scenario(&self) -> bool {
        match self.mode {
            Mode::CertifyLocal | Mode::CertifyGlobal | Mode::Train | Mode::Attack => true,
            Mode::Sweep => self.sweep.parameter != SweepParameter::Strength,
            Mode::GenSbm | Mode::Report => false,
        }
    }

    fn needs_logits(&self) -> bool {
        matches!(
            self.mode,
            Mode::CertifyLocal | Mode::CertifyGlobal | Mode::Attack | Mode::Sweep
        )
    }
}

/// Sets a dotted key in a TOML table from `key=value`.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
    let key = key.trim().trim_start_matches("--");
    if key.is_empty() {
        return Err(CliError::Config(format!("override `{item}` has an empty key")));
    }
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Errors and warnings found without running the pipeline.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.errors {
            out.push_str(&format!("error: {e}\n"));
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// Loads and checks a config file.
pub fn validate_config(path: &Path, overrides: &[String]) -> Result<Diagnostics, CliError> {
    let config = RunConfig::load(path, overrides)?;
    Ok(check(&config))
}

/// Consistency checks on a parsed config.
pub fn check(config: &RunConfig) -> Diagnostics {
    let mut d = Diagnostics::default();
    let p = &config.paths;
    let require = |key: &str, path: &Option<PathBuf>, d: &mut Diagnostics| match path {
        None => d.errors.push(format!("{key} required")),
        Some(f) if !f.exists() => d.errors.push(format!("{key}: {} not found", f.display())),
        Some(_) => {}
    };
    if config.mode != Mode::GenSbm {
        require("paths.graph", &p.graph, &mut d);
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        d.errors.push(format!("alpha must lie in (0, 1), got {}", config.alpha));
    }
    if !(config.solver.tolerance > 0.0) {
        d.errors.push("solver.tolerance must be positive".into());
    }
    for (key, path) in [
        ("paths.features", &p.features),
        ("paths.labels", &p.labels),
        ("paths.logits", &p.logits),
        ("paths.checkpoint", &p.checkpoint),
        ("paths.budgets", &p.budgets),
        ("paths.certificates", &p.certificates),
    ] {
        if let Some(f) = path {
            if !f.exists() {
                d.errors.push(format!("{key}: {} not found", f.display()));
            }
        }
    }

    if config.needs_scenario() {
        if let Err(CliError::Config(m)) = config.local_budget(p.budgets.as_ref().map(|_| Vec::new())) {
            d.errors.push(m);
        }
    }
    if let Some(s) = config.scenario.strength {
        if s < 0 {
            d.warnings.push(format!("scenario.strength is negative ({s}); budgets clamp at 0"));
        }
    }
    let sc = &config.scenario;
    match config.mode {
        Mode::CertifyGlobal => {
            if sc.global_budget.is_none() && !sc.unlimited_global {
                d.errors
                    .push("certify-global requires scenario.global_budget or scenario.unlimited_global".into());
            }
            if sc.global_budget.is_some() && sc.unlimited_global {
                d.errors
                    .push("scenario.global_budget and scenario.unlimited_global are exclusive".into());
            }
        }
        Mode::CertifyLocal if sc.global_budget.is_some() => {
            d.warnings
                .push("scenario.global_budget is ignored by certify-local".into());
        }
        _ => {}
    }

    if config.needs_logits() {
        match config.model.kind {
            ModelKind::Logits => require("paths.logits", &p.logits, &mut d),
            ModelKind::LabelPropagation => require("paths.labels", &p.labels, &mut d),
            ModelKind::FeaturePropagation => {
                require("paths.features", &p.features, &mut d);
                require("paths.labels", &p.labels, &mut d);
            }
            ModelKind::Mlp => {
                require("paths.features", &p.features, &mut d);
                require("paths.checkpoint", &p.checkpoint, &mut d);
            }
        }
        if config.model.certify_class == CertifyClass::Label {
            require("paths.labels", &p.labels, &mut d);
        }
    }
    if config.targets.pool != TargetPool::All && config.mode != Mode::GenSbm {
        require("paths.labels", &p.labels, &mut d);
    }

    match config.mode {
        Mode::Train => {
            require("paths.features", &p.features, &mut d);
            require("paths.labels", &p.labels, &mut d);
            let t = &config.train;
            if !(t.margin >= 0.0) {
                d.errors.push("train.margin must be non-negative".into());
            }
            if !(t.lr > 0.0) {
                d.errors.push("train.lr must be positive".into());
            }
            if !(t.reg >= 0.0) {
                d.errors.push("train.reg must be non-negative".into());
            }
            if t.per_class == 0 {
                d.errors.push("train.per_class must be positive".into());
            }
            if config.model.hidden == 0 {
                d.errors.push("model.hidden must be positive".into());
            }
        }
        Mode::Report => require("paths.certificates", &p.certificates, &mut d),
        Mode::Sweep => {
            if config.sweep.values.is_empty() {
                d.errors.push("sweep.values must not be empty".into());
            }
            if config.sweep.parameter == SweepParameter::Alpha
                && config.sweep.values.iter().any(|a| !(*a > 0.0 && *a < 1.0))
            {
                d.errors.push("sweep.values: every alpha must lie in (0, 1)".into());
            }
            if config.sweep.parameter == SweepParameter::GlobalBudget
                && config.sweep.values.iter().any(|b| !(*b >= 0.0) || b.fract() != 0.0)
            {
                d.errors.push("sweep.values: global budgets must be non-negative integers".into());
            }
        }
        Mode::GenSbm => {
            let s = &config.sbm;
            if s.blocks == 0 || s.nodes < s.blocks {
                d.errors.push("sbm.nodes must be at least sbm.blocks > 0".into());
            }
            if !(0.0..=1.0).contains(&s.p_in) || !(0.0..=1.0).contains(&s.p_out) || s.p_out > s.p_in {
                d.errors.push("sbm: require 0 <= p_out <= p_in <= 1".into());
            }
        }
        _ => {}
    }

    if d.is_ok() && config.mode == Mode::CertifyGlobal {
        if let Some(b) = sc.global_budget {
            budget_warning(config, b, &mut d);
        }
    }
    d
}

/// Warns when `B` exceeds the number of fragile edges.
fn budget_warning(config: &RunConfig, b: usize, d: &mut Diagnostics) {
    let Some(path) = &config.paths.graph else { return };
    let options = crate::pipeline::load_options(config);
    let Ok(loaded) = load_graph(path, &options) else { return };
    let local = match config.local_budget(None) {
        Ok(l) => l,
        Err(_) => LocalBudget::Unlimited,
    };
    if let Ok(s) = build_scenario(&loaded.graph, config.scenario.mode, &local, GlobalBudget::Unlimited) {
        if b > s.fragile_count() {
            d.warnings.push(format!(
                "scenario.global_budget {b} exceeds the {} fragile edges; clamped",
                s.fragile_count()
            ));
        }
    }
}
