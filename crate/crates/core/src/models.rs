//! Logit producers: external logits, label propagation, feature propagation
//! and a one-hidden-layer MLP.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::ppr::{margins_from, PprSolver, SolverOptions};

/// Dense row-major `N × K` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitsMatrix {
    nodes: usize,
    classes: usize,
    values: Vec<f64>,
}

impl LogitsMatrix {
    pub fn new(nodes: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 classes, got {classes}")));
        }
        if values.len() != nodes * classes {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {nodes}x{classes} logits matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("logits must be finite".into()));
        }
        Ok(LogitsMatrix { nodes, classes, values })
    }

    pub fn zeros(nodes: usize, classes: usize) -> Self {
        LogitsMatrix {
            nodes,
            classes,
            values: vec![0.0; nodes * classes],
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, v: usize, c: usize) -> f64 {
        self.values[v * self.classes + c]
    }

    pub fn set(&mut self, v: usize, c: usize, value: f64) {
        self.values[v * self.classes + c] = value;
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.values[v * self.classes..(v + 1) * self.classes]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.nodes).map(|v| self.get(v, c)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let classes = columns.len();
        let nodes = columns.first().map_or(0, Vec::len);
        let mut values = vec![0.0; nodes * classes];
        for (c, col) in columns.iter().enumerate() {
            if col.len() != nodes {
                return Err(Error::ShapeMismatch("ragged columns".into()));
            }
            for (v, &x) in col.iter().enumerate() {
                values[v * classes + c] = x;
            }
        }
        Self::new(nodes, classes, values)
    }

    /// Parses comma-separated rows, one per node.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let (rows, cols, values) = parse_csv_rows(text)?;
        Self::new(rows, cols, values)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::parse_csv(&fs::read_to_string(path)?)
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.values, self.classes)
    }
}

/// Node features, `N × D` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    nodes: usize,
    dims: usize,
    values: Vec<f64>,
}

/// Magic prefix of the binary feature format.
pub const FEATURE_MAGIC: &[u8; 8] = b"PPRFEAT1";

impl FeatureMatrix {
    pub fn new(nodes: usize, dims: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nodes * dims {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {nodes}x{dims} feature matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("features must be finite".into()));
        }
        Ok(FeatureMatrix { nodes, dims, values })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn get(&self, v: usize, d: usize) -> f64 {
        self.values[v * self.dims + d]
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.values[v * self.dims..(v + 1) * self.dims]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let (rows, cols, values) = parse_csv_rows(text)?;
        Self::new(rows, cols, values)
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.values, self.dims)
    }

    /// Binary layout: magic, `u64` rows, `u64` columns, row-major `f64`
    /// values; all little-endian.
    pub fn parse_binary(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("feature file: {m}"));
        if bytes.len() < 24 || &bytes[..8] != FEATURE_MAGIC {
            return Err(bad("missing header"));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let count = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| bad("dimensions overflow"))?;
        if count != (bytes.len() - 24) as u64 {
            return Err(bad("payload length does not match dimensions"));
        }
        let values = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows as usize, cols as usize, values)
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.values.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(self.nodes as u64).to_le_bytes());
        out.extend_from_slice(&(self.dims as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Loads the binary format when the file starts with the magic, CSV otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(FEATURE_MAGIC) {
            Self::parse_binary(&bytes)
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::InvalidInput("feature CSV is not UTF-8".into()))?;
            Self::parse_csv(&text)
        }
    }
}

fn parse_csv_rows(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let before = values.len();
        for field in line.split(',') {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("`{field}` is not a number"),
            })?;
            values.push(v);
        }
        let width = values.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {c} columns, got {width}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::InvalidInput("matrix file has no rows".into()))?;
    Ok((rows, cols, values))
}

fn rows_to_csv(values: &[f64], cols: usize) -> String {
    let mut out = String::new();
    for row in values.chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Parses `node<TAB>label` lines. Nodes may appear once.
pub fn parse_labels(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("`{s}` is not a non-negative integer"),
            })
        };
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: idx + 1,
                message: "expected `node<TAB>label`".into(),
            });
        }
        let (node, label) = (parse(fields[0])?, parse(fields[1])?);
        if !seen.insert(node) {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("node {node} labeled twice"),
            });
        }
        out.push((node, label));
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<Vec<(usize, usize)>> {
    parse_labels(&fs::read_to_string(path)?)
}

/// Dense label vector of length `n`; errors if a node is out of range or unlabeled.
pub fn dense_labels(entries: &[(usize, usize)], n: usize) -> Result<Vec<usize>> {
    let mut out = vec![usize::MAX; n];
    for &(v, y) in entries {
        if v >= n {
            return Err(Error::InvalidInput(format!("labeled node {v} out of range")));
        }
        out[v] = y;
    }
    if let Some(v) = out.iter().position(|&y| y == usize::MAX) {
        return Err(Error::InvalidInput(format!("node {v} has no label")));
    }
    Ok(out)
}

/// One-hot logits for labeled nodes, zero rows elsewhere.
pub fn label_propagation_logits(labels: &[(usize, usize)], nodes: usize, classes: usize) -> Result<LogitsMatrix> {
    if labels.is_empty() {
        log::warn!("label propagation with an empty label set gives all-zero logits");
    }
    let mut h = LogitsMatrix::new(nodes, classes, vec![0.0; nodes * classes])?;
    for &(v, y) in labels {
        if v >= nodes || y >= classes {
            return Err(Error::InvalidInput(format!("label ({v}, {y}) out of range")));
        }
        h.set(v, y, 1.0);
    }
    Ok(h)
}

/// Diffused logits `ΠH`: row `t` is `π(e_t)ᵀH`.
pub fn diffuse_logits(graph: &DirectedGraph, alpha: f64, h: &LogitsMatrix) -> Result<LogitsMatrix> {
    diffuse_logits_with(graph, alpha, h, SolverOptions::default())
}

pub fn diffuse_logits_with(
    graph: &DirectedGraph,
    alpha: f64,
    h: &LogitsMatrix,
    options: SolverOptions,
) -> Result<LogitsMatrix> {
    if h.nodes() != graph.node_count() {
        return Err(Error::ShapeMismatch("logits rows do not match the graph".into()));
    }
    let solver = PprSolver::new(graph, alpha, options)?;
    let columns = (0..h.classes())
        .map(|c| margins_from(&solver, &h.column(c)))
        .collect::<Result<Vec<_>>>()?;
    LogitsMatrix::from_columns(&columns)
}

/// Row-wise argmax; ties go to the lowest class id.
pub fn argmax_rows(h: &LogitsMatrix) -> Vec<usize> {
    (0..h.nodes())
        .map(|v| {
            let row = h.row(v);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Predicted class per node from the diffused logits.
pub fn predict(graph: &DirectedGraph, alpha: f64, h: &LogitsMatrix) -> Result<Vec<usize>> {
    Ok(argmax_rows(&diffuse_logits(graph, alpha, h)?))
}

/// A differentiable map from features to logits with flat parameters.
pub trait Model: Send + Sync {
    fn classes(&self) -> usize;
    fn forward(&self, x: &FeatureMatrix) -> Result<LogitsMatrix>;
    /// Gradient of a loss with respect to the parameters given `dL/dH`.
    fn backward(&self, x: &FeatureMatrix, grad_h: &LogitsMatrix) -> Result<Vec<f64>>;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Which parameters are weights (regularized) rather than biases.
    fn weight_mask(&self) -> Vec<bool>;
    /// Hidden activation signs; changes indicate nondifferentiable points.
    fn activation_pattern(&self, _x: &FeatureMatrix) -> Vec<bool> {
        Vec::new()
    }
    fn boxed_clone(&self) -> Box<dyn Model>;
}

/// `H = XW` without bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    dims: usize,
    classes: usize,
    /// `D × K` row-major.
    weights: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(dims: usize, classes: usize) -> Self {
        LinearModel {
            dims,
            classes,
            weights: vec![0.0; dims * classes],
        }
    }

    pub fn from_weights(dims: usize, classes: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != dims * classes {
            return Err(Error::ShapeMismatch("weight length".into()));
        }
        Ok(LinearModel { dims, classes, weights })
    }

    pub fn seeded(dims: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (6.0 / (dims + classes) as f64).sqrt();
        LinearModel {
            dims,
            classes,
            weights: (0..dims * classes).map(|_| rng.random_range(-limit..limit)).collect(),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn check_features(x: &FeatureMatrix, dims: usize) -> Result<()> {
    if x.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "model expects {dims} features, got {}",
            x.dims()
        )));
    }
    Ok(())
}

impl Model for LinearModel {
    fn boxed_clone(&self) -> Box<dyn Model> {
        Box::new(self.clone())
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn forward(&self, x: &FeatureMatrix) -> Result<LogitsMatrix> {
        check_features(x, self.dims)?;
        let mut h = LogitsMatrix::zeros(x.nodes(), self.classes);
        for v in 0..x.nodes() {
            for (d, &xv) in x.row(v).iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let w = &self.weights[d * self.classes..(d + 1) * self.classes];
                for c in 0..self.classes {
                    h.values[v * self.classes + c] += xv * w[c];
                }
            }
        }
        Ok(h)
    }

    fn backward(&self, x: &FeatureMatrix, grad_h: &LogitsMatrix) -> Result<Vec<f64>> {
        check_features(x, self.dims)?;
        let mut g = vec![0.0; self.weights.len()];
        for v in 0..x.nodes() {
            for (d, &xv) in x.row(v).iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for c in 0..self.classes {
                    g[d * self.classes + c] += xv * grad_h.get(v, c);
                }
            }
        }
        Ok(g)
    }

    fn params(&self) -> &[f64] {
        &self.weights
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn weight_mask(&self) -> Vec<bool> {
        vec![true; self.weights.len()]
    }
}

/// `[D, hidden, K]` perceptron with a rectifier on the hidden layer.
///
/// Parameters are stored flat as `W1 (D×H) | b1 (H) | W2 (H×K) | b2 (K)`,
/// each matrix row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    dims: usize,
    hidden: usize,
    classes: usize,
    params: Vec<f64>,
}

/// Magic prefix of the binary checkpoint format.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PPRMLP01";

impl MlpModel {
    pub fn param_count(dims: usize, hidden: usize, classes: usize) -> usize {
        dims * hidden + hidden + hidden * classes + classes
    }

    /// Glorot-uniform weights, zero biases.
    pub fn seeded(dims: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::param_count(dims, hidden, classes));
        let l1 = (6.0 / (dims + hidden) as f64).sqrt();
        params.extend((0..dims * hidden).map(|_| rng.random_range(-l1..l1)));
        params.extend(std::iter::repeat_n(0.0, hidden));
        let l2 = (6.0 / (hidden + classes) as f64).sqrt();
        params.extend((0..hidden * classes).map(|_| rng.random_range(-l2..l2)));
        params.extend(std::iter::repeat_n(0.0, classes));
        MlpModel {
            dims,
            hidden,
            classes,
            params,
        }
    }

    pub fn from_params(dims: usize, hidden: usize, classes: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count(dims, hidden, classes) {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a [{dims}, {hidden}, {classes}] network",
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("parameters must be finite".into()));
        }
        Ok(MlpModel {
            dims,
            hidden,
            classes,
            params,
        })
    }

    pub fn layer_sizes(&self) -> [usize; 3] {
        [self.dims, self.hidden, self.classes]
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (w1, rest) = self.params.split_at(self.dims * self.hidden);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.hidden * self.classes);
        (w1, b1, w2, b2)
    }

    /// Hidden pre-activations, `N × H`.
    fn hidden_pre(&self, x: &FeatureMatrix) -> Vec<f64> {
        let (w1, b1, _, _) = self.split();
        let h = self.hidden;
        let mut z = vec![0.0; x.nodes() * h];
        for v in 0..x.nodes() {
            let out = &mut z[v * h..(v + 1) * h];
            out.copy_from_slice(b1);
            for (d, &xv) in x.row(v).iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (o, w) in out.iter_mut().zip(&w1[d * h..(d + 1) * h]) {
                    *o += xv * w;
                }
            }
        }
        z
    }

    /// Binary layout: magic, `u64` D, H, K, then the flat parameters as
    /// `f64`; all little-endian.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for d in [self.dims, self.hidden, self.classes] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("checkpoint: {m}"));
        if bytes.len() < 32 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing header"));
        }
        let dim = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let (d, h, k) = (dim(0), dim(1), dim(2));
        let count = d
            .checked_mul(h)
            .and_then(|a| a.checked_add(h))
            .and_then(|a| h.checked_mul(k).and_then(|b| a.checked_add(b)))
            .and_then(|a| a.checked_add(k))
            .ok_or_else(|| bad("dimensions overflow"))?;
        if count.checked_mul(8) != Some((bytes.len() - 32) as u64) {
            return Err(bad("payload length does not match dimensions"));
        }
        let params = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(d as usize, h as usize, k as usize, params)
    }
}

impl Model for MlpModel {
    fn boxed_clone(&self) -> Box<dyn Model> {
        Box::new(self.clone())
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn forward(&self, x: &FeatureMatrix) -> Result<LogitsMatrix> {
        check_features(x, self.dims)?;
        let (_, _, w2, b2) = self.split();
        let (h, k) = (self.hidden, self.classes);
        let z = self.hidden_pre(x);
        let mut out = LogitsMatrix::zeros(x.nodes(), k);
        for v in 0..x.nodes() {
            let row = &mut out.values[v * k..(v + 1) * k];
            row.copy_from_slice(b2);
            for j in 0..h {
                let a = z[v * h + j].max(0.0);
                if a == 0.0 {
                    continue;
                }
                for c in 0..k {
                    row[c] += a * w2[j * k + c];
                }
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &FeatureMatrix, grad_h: &LogitsMatrix) -> Result<Vec<f64>> {
        check_features(x, self.dims)?;
        let (_, _, w2, _) = self.split();
        let (d, h, k) = (self.dims, self.hidden, self.classes);
        let z = self.hidden_pre(x);
        let mut grad = vec![0.0; self.params.len()];
        let (gw1, rest) = grad.split_at_mut(d * h);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(h * k);
        let mut dz = vec![0.0; h];
        for v in 0..x.nodes() {
            let g = grad_h.row(v);
            for c in 0..k {
                gb2[c] += g[c];
            }
            for j in 0..h {
                let pre = z[v * h + j];
                let a = pre.max(0.0);
                let mut back = 0.0;
                for c in 0..k {
                    gw2[j * k + c] += a * g[c];
                    back += w2[j * k + c] * g[c];
                }
                dz[j] = if pre > 0.0 { back } else { 0.0 };
                gb1[j] += dz[j];
            }
            for (di, &xv) in x.row(v).iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for j in 0..h {
                    gw1[di * h + j] += xv * dz[j];
                }
            }
        }
        Ok(grad)
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weight_mask(&self) -> Vec<bool> {
        let (d, h, k) = (self.dims, self.hidden, self.classes);
        let mut mask = vec![true; d * h];
        mask.extend(std::iter::repeat_n(false, h));
        mask.extend(std::iter::repeat_n(true, h * k));
        mask.extend(std::iter::repeat_n(false, k));
        mask
    }

    fn activation_pattern(&self, x: &FeatureMatrix) -> Vec<bool> {
        self.hidden_pre(x).into_iter().map(|z| z > 0.0).collect()
    }
}

/// Forward pass of an MLP over every node.
pub fn mlp_logits(model: &MlpModel, x: &FeatureMatrix) -> Result<LogitsMatrix> {
    model.forward(x)
}

/// Row-wise softmax, numerically stabilized.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−log softmax(row)[y]`.
pub fn cross_entropy(row: &[f64], y: usize) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - row[y]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticFitOptions {
    /// L2 strength on the weights.
    pub reg: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LogisticFitOptions {
    fn default() -> Self {
        LogisticFitOptions {
            reg: 1e-3,
            tolerance: 1e-8,
            max_iterations: 50_000,
        }
    }
}

/// Multinomial logistic regression without bias on the given rows, fitted by
/// full-batch gradient descent with a fixed step.
pub fn fit_logistic(
    x: &FeatureMatrix,
    labeled: &[(usize, usize)],
    classes: usize,
    options: LogisticFitOptions,
    seed: u64,
) -> Result<LinearModel> {
    if labeled.is_empty() {
        return Err(Error::DegenerateFit("no labeled nodes".into()));
    }
    if x.dims() == 0 {
        return Err(Error::DegenerateFit("feature matrix has no columns".into()));
    }
    for &(v, y) in labeled {
        if v >= x.nodes() || y >= classes {
            return Err(Error::InvalidInput(format!("label ({v}, {y}) out of range")));
        }
    }
    let n = labeled.len() as f64;
    let frob: f64 = labeled
        .iter()
        .map(|&(v, _)| x.row(v).iter().map(|a| a * a).sum::<f64>())
        .sum();
    if frob == 0.0 {
        return Err(Error::DegenerateFit("labeled feature rows are all zero".into()));
    }
    // Lipschitz bound of the gradient: softmax curvature ≤ 1/2 times ‖X‖²_F / n.
    let step = 1.0 / (0.5 * frob / n + options.reg);
    let mut model = LinearModel::seeded(x.dims(), classes, seed);
    for w in &mut model.weights {
        *w *= 1e-2;
    }
    let rows = FeatureMatrix::new(
        labeled.len(),
        x.dims(),
        labeled.iter().flat_map(|&(v, _)| x.row(v).iter().copied()).collect(),
    )?;
    for _ in 0..options.max_iterations {
        let h = model.forward(&rows)?;
        let mut gh = LogitsMatrix::zeros(labeled.len(), classes);
        for (i, &(_, y)) in labeled.iter().enumerate() {
            let p = softmax(h.row(i));
            for c in 0..classes {
                gh.set(i, c, (p[c] - if c == y { 1.0 } else { 0.0 }) / n);
            }
        }
        let mut g = model.backward(&rows, &gh)?;
        for (gi, w) in g.iter_mut().zip(&model.weights) {
            *gi += options.reg * w;
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::DegenerateFit("gradient is not finite".into()));
        }
        if norm < options.tolerance {
            return Ok(model);
        }
        for (w, gi) in model.weights.iter_mut().zip(&g) {
            *w -= step * gi;
        }
    }
    log::warn!(
        "logistic regression stopped after {} iterations before reaching the gradient tolerance",
        options.max_iterations
    );
    Ok(model)
}

/// Diffused features `ΠX`.
pub fn diffuse_features(graph: &DirectedGraph, alpha: f64, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    if x.nodes() != graph.node_count() {
        return Err(Error::ShapeMismatch("feature rows do not match the graph".into()));
    }
    let solver = PprSolver::new(graph, alpha, SolverOptions::default())?;
    let mut values = vec![0.0; x.nodes() * x.dims()];
    for d in 0..x.dims() {
        let col: Vec<f64> = (0..x.nodes()).map(|v| x.get(v, d)).collect();
        let diffused = margins_from(&solver, &col)?;
        for (v, val) in diffused.into_iter().enumerate() {
            values[v * x.dims() + d] = val;
        }
    }
    FeatureMatrix::new(x.nodes(), x.dims(), values)
}

/// Feature propagation: fits `W` on diffused features of the labeled nodes
/// and returns the undiffused logits `H = XW` with the fitted model.
pub fn feature_propagation_logits(
    graph: &DirectedGraph,
    alpha: f64,
    x: &FeatureMatrix,
    labels: &[(usize, usize)],
    classes: usize,
    options: LogisticFitOptions,
    seed: u64,
) -> Result<(LogitsMatrix, LinearModel)> {
    let diffused = diffuse_features(graph, alpha, x)?;
    let model = fit_logistic(&diffused, labels, classes, options, seed)?;
    Ok((model.forward(x)?, model))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Samples `per_class` training and `per_class` validation nodes for every
/// class (fewer when a class is small); the rest is the test set.
pub fn split_per_class(labels: &[usize], per_class: usize, seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&v| labels[v] == c).collect();
        members.shuffle(&mut rng);
        let t = per_class.min(members.len());
        let s = per_class.min(members.len() - t);
        train.extend_from_slice(&members[..t]);
        val.extend_from_slice(&members[t..t + s]);
    }
    train.sort_unstable();
    val.sort_unstable();
    let mut in_split = vec![false; labels.len()];
    for &v in train.iter().chain(&val) {
        in_split[v] = true;
    }
    let test = (0..labels.len()).filter(|&v| !in_split[v]).collect();
    Split { train, val, test }
}
