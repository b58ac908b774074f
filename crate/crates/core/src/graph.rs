//! Graph storage, threat-model construction and edge-flip application.
//!
//! A [`DirectedGraph`] is an immutable compressed-row adjacency structure with
//! sorted, duplicate-free neighbor lists. A [`PerturbationScenario`] splits the
//! node pairs into fixed edges (never touched), fragile edges (each one can be
//! toggled by the adversary) and the implicit remainder (never present), and
//! carries the per-node and global flip budgets.

use std::collections::BTreeSet;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed edge `(src, dst)`.
pub type Edge = (usize, usize);

/// Largest node id accepted from text inputs.
pub const MAX_NODE_ID: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectedGraph {
    node_count: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl DirectedGraph {
    /// Builds a graph from an edge iterator. Duplicates are merged; self-loops
    /// and out-of-range ids are rejected.
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        Self::from_edges_with(node_count, edges, false)
    }

    pub fn from_edges_with(
        node_count: usize,
        edges: impl IntoIterator<Item = Edge>,
        allow_self_loops: bool,
    ) -> Result<Self> {
        let mut list = Vec::new();
        for (src, dst) in edges {
            if src >= node_count || dst >= node_count {
                return Err(Error::InvalidInput(format!(
                    "edge ({src}, {dst}) out of range for {node_count} nodes"
                )));
            }
            if src == dst && !allow_self_loops {
                return Err(Error::InvalidInput(format!("self-loop at node {src}")));
            }
            list.push((src, dst));
        }
        Ok(Self::from_sorted_unique(node_count, sort_dedup(list)))
    }

    /// Internal constructor; `edges` must be sorted, unique and in range.
    pub(crate) fn from_sorted_unique(node_count: usize, edges: Vec<Edge>) -> Self {
        let mut offsets = vec![0usize; node_count + 1];
        for &(src, _) in &edges {
            offsets[src + 1] += 1;
        }
        for v in 0..node_count {
            offsets[v + 1] += offsets[v];
        }
        let targets = edges.into_iter().map(|(_, dst)| dst).collect();
        DirectedGraph {
            node_count,
            offsets,
            targets,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Sorted out-neighbors of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        src < self.node_count && self.neighbors(src).binary_search(&dst).is_ok()
    }

    /// Edges in (src, dst) lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.node_count).flat_map(move |v| self.neighbors(v).iter().map(move |&u| (v, u)))
    }

    /// First node with zero out-degree, if any.
    pub fn first_sink(&self) -> Option<usize> {
        (0..self.node_count).find(|&v| self.out_degree(v) == 0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(u, v)| self.has_edge(v, u))
    }

    pub fn symmetrized(&self) -> DirectedGraph {
        let edges = self.edges().flat_map(|(u, v)| [(u, v), (v, u)]).collect();
        DirectedGraph::from_sorted_unique(self.node_count, sort_dedup(edges))
    }

    /// Neighbors of `v` ignoring edge direction, sorted and unique.
    pub fn undirected_neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.neighbors(v).to_vec();
        for u in 0..self.node_count {
            if u != v && self.has_edge(u, v) {
                out.push(u);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Undirected adjacency lists for every node at once.
    pub fn undirected_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for (u, v) in self.edges() {
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

fn sort_dedup(mut edges: Vec<Edge>) -> Vec<Edge> {
    edges.sort_unstable();
    edges.dedup();
    edges
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    /// Add the reverse of every edge.
    pub symmetrize: bool,
    pub allow_self_loops: bool,
    /// Keep only the largest weakly connected component (ids are relabeled).
    pub largest_component: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            symmetrize: true,
            allow_self_loops: false,
            largest_component: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadedGraph {
    pub graph: DirectedGraph,
    /// Repeated lines in the input file.
    pub duplicates: usize,
    pub self_loops_dropped: usize,
    /// `original_ids[v]` is the id used in the file for node `v`; ascending.
    pub original_ids: Vec<usize>,
}

impl LoadedGraph {
    /// Maps a file id to the loaded graph's id.
    pub fn node_of(&self, original: usize) -> Option<usize> {
        self.original_ids.binary_search(&original).ok()
    }
}

/// Parses an edge list: one `src<TAB>dst` pair per line, `#` comments and
/// blank lines ignored. Any run of whitespace is accepted as the separator.
pub fn parse_edge_list(text: &str, options: &LoadOptions) -> Result<LoadedGraph> {
    let mut edges = Vec::new();
    let mut max_id = None::<usize>;
    let mut self_loops_dropped = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected two fields, got `{line}`"),
            });
        };
        let src = parse_node_id(a, line_no)?;
        let dst = parse_node_id(b, line_no)?;
        max_id = Some(max_id.map_or(src.max(dst), |m: usize| m.max(src).max(dst)));
        if src == dst && !options.allow_self_loops {
            self_loops_dropped += 1;
            continue;
        }
        edges.push((src, dst));
    }
    let Some(max_id) = max_id else {
        return Err(Error::EmptyGraph);
    };
    if edges.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let listed = edges.len();
    let edges = sort_dedup(edges);
    let duplicates = listed - edges.len();
    if duplicates > 0 {
        log::warn!("edge list contained {duplicates} duplicate edges");
    }
    let node_count = max_id + 1;
    let mut graph = DirectedGraph::from_sorted_unique(node_count, edges);
    if options.symmetrize {
        graph = graph.symmetrized();
    }
    let mut original_ids: Vec<usize> = (0..node_count).collect();
    if options.largest_component {
        let (sub, kept) = largest_component(&graph);
        graph = sub;
        original_ids = kept;
    }
    Ok(LoadedGraph {
        graph,
        duplicates,
        self_loops_dropped,
        original_ids,
    })
}

fn parse_node_id(field: &str, line: usize) -> Result<usize> {
    let id: usize = field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{field}` is not a node id"),
    })?;
    if id >= MAX_NODE_ID {
        return Err(Error::Parse {
            line,
            message: format!("node id {id} exceeds the limit {MAX_NODE_ID}"),
        });
    }
    Ok(id)
}

pub fn load_graph(path: &Path, options: &LoadOptions) -> Result<LoadedGraph> {
    let text = fs::read_to_string(path)?;
    parse_edge_list(&text, options)
}

/// Writes `src<TAB>dst` lines.
pub fn write_edge_list(graph: &DirectedGraph) -> String {
    let mut out = String::with_capacity(graph.edge_count() * 8);
    for (u, v) in graph.edges() {
        out.push_str(&format!("{u}\t{v}\n"));
    }
    out
}

struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Largest weakly connected component, relabeled in ascending id order.
/// Ties go to the component holding the smallest node id.
pub fn largest_component(graph: &DirectedGraph) -> (DirectedGraph, Vec<usize>) {
    let n = graph.node_count();
    let mut sets = DisjointSets::new(n);
    for (u, v) in graph.edges() {
        sets.union(u, v);
    }
    let mut best_root = None;
    let mut best_size = 0;
    for v in 0..n {
        let root = sets.find(v);
        let size = sets.size[root];
        if size > best_size {
            best_size = size;
            best_root = Some(root);
        }
    }
    let Some(best_root) = best_root else {
        return (graph.clone(), Vec::new());
    };
    let kept: Vec<usize> = (0..n).filter(|&v| sets.find(v) == best_root).collect();
    let mut new_id = vec![usize::MAX; n];
    for (i, &v) in kept.iter().enumerate() {
        new_id[v] = i;
    }
    let edges = graph
        .edges()
        .filter(|&(u, _)| new_id[u] != usize::MAX)
        .map(|(u, v)| (new_id[u], new_id[v]))
        .collect();
    (
        DirectedGraph::from_sorted_unique(kept.len(), sort_dedup(edges)),
        kept,
    )
}

/// Fixed edges that keep every node connected: a spanning forest of the
/// undirected graph built with unit weights, visiting node pairs in
/// (min id, max id) order. Every tree pair contributes each direction that
/// exists in `graph`. A node still lacking a fixed outgoing edge afterwards
/// (possible only for non-symmetric inputs) receives its smallest outgoing
/// edge.
pub fn spanning_tree_edges(graph: &DirectedGraph) -> Vec<Edge> {
    let n = graph.node_count();
    let pairs: BTreeSet<Edge> = graph
        .edges()
        .filter(|&(u, v)| u != v)
        .map(|(u, v)| (u.min(v), u.max(v)))
        .collect();
    let mut sets = DisjointSets::new(n);
    let mut fixed = Vec::new();
    for (a, b) in pairs {
        if sets.union(a, b) {
            if graph.has_edge(a, b) {
                fixed.push((a, b));
            }
            if graph.has_edge(b, a) {
                fixed.push((b, a));
            }
        }
    }
    let mut fixed = sort_dedup(fixed);
    let mut has_out = vec![false; n];
    for &(u, _) in &fixed {
        has_out[u] = true;
    }
    let mut extra = Vec::new();
    for v in 0..n {
        if !has_out[v] {
            if let Some(&u) = graph.neighbors(v).iter().find(|&&u| u != v) {
                extra.push((v, u));
            }
        }
    }
    if !extra.is_empty() {
        fixed.extend(extra);
        fixed = sort_dedup(fixed);
    }
    fixed
}

/// A set of fragile edges whose state differs from the clean graph.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgePolicy {
    flipped: BTreeSet<Edge>,
}

impl EdgePolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_edges(edges: impl IntoIterator<Item = Edge>) -> Self {
        EdgePolicy {
            flipped: edges.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, edge: Edge) -> bool {
        self.flipped.insert(edge)
    }

    pub fn contains(&self, edge: Edge) -> bool {
        self.flipped.contains(&edge)
    }

    pub fn len(&self) -> usize {
        self.flipped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flipped.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Edge> + '_ {
        self.flipped.iter().copied()
    }

    /// Flipped edges as `[src, dst]` pairs in sorted order.
    pub fn to_pairs(&self) -> Vec<[usize; 2]> {
        self.flipped.iter().map(|&(u, v)| [u, v]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioMode {
    /// Fragile set is every non-tree edge of the clean graph.
    RemoveOnly,
    /// Fragile set is every ordered non-tree pair without self-loops.
    AddAndRemove,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LocalBudget {
    /// `b_v = max(d_v - 11 + s, 0)` with `d_v` the clean out-degree.
    Strength(i64),
    PerNode(Vec<usize>),
    Unlimited,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlobalBudget {
    Limited(usize),
    Unlimited,
}

/// Local budget derived from the clean out-degree and the attack strength.
pub fn strength_budget(degree: usize, strength: i64) -> usize {
    (degree as i64 - 11 + strength).max(0) as usize
}

#[derive(Clone, Debug)]
pub struct PerturbationScenario {
    base: DirectedGraph,
    fixed: DirectedGraph,
    fragile_offsets: Vec<usize>,
    fragile_targets: Vec<usize>,
    fragile_in_base: Vec<bool>,
    local_budget: Vec<usize>,
    global_budget: usize,
}

impl PerturbationScenario {
    /// Validates and assembles a scenario. Budgets above the number of
    /// fragile edges they can act on are clamped.
    pub fn new(
        base: DirectedGraph,
        fixed: Vec<Edge>,
        fragile: Vec<Edge>,
        local_budget: Vec<usize>,
        global_budget: usize,
    ) -> Result<Self> {
        let n = base.node_count();
        if local_budget.len() != n {
            return Err(Error::InvalidScenario(format!(
                "{} local budgets for {n} nodes",
                local_budget.len()
            )));
        }
        let fixed = DirectedGraph::from_edges_with(n, fixed, true)?;
        let fragile = sort_dedup(fragile);
        for &(u, v) in &fragile {
            if u >= n || v >= n {
                return Err(Error::InvalidScenario(format!(
                    "fragile edge ({u}, {v}) out of range"
                )));
            }
            if fixed.has_edge(u, v) {
                return Err(Error::InvalidScenario(format!(
                    "edge ({u}, {v}) is both fixed and fragile"
                )));
            }
        }
        for (u, v) in fixed.edges() {
            if !base.has_edge(u, v) {
                return Err(Error::InvalidScenario(format!(
                    "fixed edge ({u}, {v}) is not in the clean graph"
                )));
            }
        }
        let mut fragile_offsets = vec![0usize; n + 1];
        for &(u, _) in &fragile {
            fragile_offsets[u + 1] += 1;
        }
        for v in 0..n {
            fragile_offsets[v + 1] += fragile_offsets[v];
        }
        let fragile_in_base: Vec<bool> = fragile.iter().map(|&(u, v)| base.has_edge(u, v)).collect();
        let fragile_targets: Vec<usize> = fragile.iter().map(|&(_, v)| v).collect();
        let scenario = PerturbationScenario {
            base,
            fixed,
            fragile_offsets,
            fragile_targets,
            fragile_in_base,
            local_budget,
            global_budget,
        };
        for (u, v) in scenario.base.edges() {
            if !scenario.fixed.has_edge(u, v) && scenario.fragile_index((u, v)).is_none() {
                return Err(Error::InvalidScenario(format!(
                    "clean edge ({u}, {v}) is neither fixed nor fragile"
                )));
            }
        }
        if let Some(node) = scenario.fixed.first_sink() {
            return Err(Error::NoFixedOutEdge { node });
        }
        Ok(scenario.clamped())
    }

    fn clamped(mut self) -> Self {
        for v in 0..self.node_count() {
            let cap = self.fragile_range(v).len();
            self.local_budget[v] = self.local_budget[v].min(cap);
        }
        self.global_budget = self.global_budget.min(self.fragile_count());
        self
    }

    pub fn node_count(&self) -> usize {
        self.base.node_count()
    }

    /// The clean graph `E`.
    pub fn base(&self) -> &DirectedGraph {
        &self.base
    }

    pub fn fixed(&self) -> &DirectedGraph {
        &self.fixed
    }

    pub fn fragile_count(&self) -> usize {
        self.fragile_targets.len()
    }

    /// Indices of the fragile edges leaving `v`; sorted by target.
    pub fn fragile_range(&self, v: usize) -> Range<usize> {
        self.fragile_offsets[v]..self.fragile_offsets[v + 1]
    }

    pub fn fragile_target(&self, idx: usize) -> usize {
        self.fragile_targets[idx]
    }

    /// Source node of fragile edge `idx`.
    pub fn fragile_source(&self, idx: usize) -> usize {
        self.fragile_offsets.partition_point(|&o| o <= idx) - 1
    }

    pub fn fragile_edge(&self, idx: usize) -> Edge {
        (self.fragile_source(idx), self.fragile_targets[idx])
    }

    /// Whether fragile edge `idx` is present in the clean graph.
    pub fn fragile_in_base(&self, idx: usize) -> bool {
        self.fragile_in_base[idx]
    }

    /// `(index, edge, in_base)` for every fragile edge, ordered by edge.
    pub fn fragile_edges(&self) -> impl Iterator<Item = (usize, Edge, bool)> + '_ {
        (0..self.node_count()).flat_map(move |v| {
            self.fragile_range(v)
                .map(move |i| (i, (v, self.fragile_targets[i]), self.fragile_in_base[i]))
        })
    }

    pub fn fragile_index(&self, (src, dst): Edge) -> Option<usize> {
        if src >= self.node_count() {
            return None;
        }
        let range = self.fragile_range(src);
        self.fragile_targets[range.clone()]
            .binary_search(&dst)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn local_budget(&self, v: usize) -> usize {
        self.local_budget[v]
    }

    pub fn local_budgets(&self) -> &[usize] {
        &self.local_budget
    }

    pub fn global_budget(&self) -> usize {
        self.global_budget
    }

    /// Number of fixed plus fragile edges leaving `v`.
    pub fn total_degree(&self, v: usize) -> usize {
        self.fixed.out_degree(v) + self.fragile_range(v).len()
    }

    pub fn with_global_budget(&self, budget: GlobalBudget) -> Self {
        let mut out = self.clone();
        out.global_budget = match budget {
            GlobalBudget::Limited(b) => b.min(self.fragile_count()),
            GlobalBudget::Unlimited => self.fragile_count(),
        };
        out
    }

    pub fn with_local_budgets(&self, budgets: Vec<usize>) -> Result<Self> {
        if budgets.len() != self.node_count() {
            return Err(Error::InvalidScenario("local budget length mismatch".into()));
        }
        let mut out = self.clone();
        out.local_budget = budgets;
        Ok(out.clamped())
    }

    /// Converts a policy into a flip mask indexed like the fragile edges.
    pub fn mask_of(&self, policy: &EdgePolicy) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.fragile_count()];
        for (src, dst) in policy.iter() {
            let idx = self
                .fragile_index((src, dst))
                .ok_or(Error::NotFragile { src, dst })?;
            mask[idx] = true;
        }
        Ok(mask)
    }

    pub fn policy_of(&self, mask: &[bool]) -> EdgePolicy {
        EdgePolicy::from_edges(
            self.fragile_edges()
                .filter(|&(i, _, _)| mask[i])
                .map(|(_, e, _)| e),
        )
    }

    /// Whether fragile edge `idx` is present once `mask` is applied.
    pub fn fragile_present(&self, idx: usize, mask: &[bool]) -> bool {
        self.fragile_in_base[idx] != mask[idx]
    }

    /// Graph with edge set `E_f ∪ F_+` for the flips in `mask`.
    pub fn perturbed_graph(&self, mask: &[bool]) -> DirectedGraph {
        let n = self.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(self.fixed.edge_count() + self.fragile_count());
        offsets.push(0);
        for v in 0..n {
            let start = targets.len();
            targets.extend_from_slice(self.fixed.neighbors(v));
            for i in self.fragile_range(v) {
                if self.fragile_present(i, mask) {
                    targets.push(self.fragile_targets[i]);
                }
            }
            targets[start..].sort_unstable();
            offsets.push(targets.len());
        }
        DirectedGraph {
            node_count: n,
            offsets,
            targets,
        }
    }

    /// Flips per source node.
    pub fn flip_counts(&self, mask: &[bool]) -> Vec<usize> {
        (0..self.node_count())
            .map(|v| self.fragile_range(v).filter(|&i| mask[i]).count())
            .collect()
    }

    pub fn is_admissible(&self, mask: &[bool], respect_global: bool) -> bool {
        let counts = self.flip_counts(mask);
        let local_ok = counts
            .iter()
            .zip(&self.local_budget)
            .all(|(&c, &b)| c <= b);
        local_ok && (!respect_global || counts.iter().sum::<usize>() <= self.global_budget)
    }

    pub fn to_dump(&self) -> ScenarioDump {
        ScenarioDump {
            node_count: self.node_count(),
            base_edges: self.base.edges().map(|(u, v)| [u, v]).collect(),
            fixed_edges: self.fixed.edges().map(|(u, v)| [u, v]).collect(),
            fragile_edges: self.fragile_edges().map(|(_, (u, v), _)| [u, v]).collect(),
            local_budget: self.local_budget.clone(),
            global_budget: self.global_budget,
        }
    }

    pub fn from_dump(dump: &ScenarioDump) -> Result<Self> {
        if dump.node_count > MAX_NODE_ID {
            return Err(Error::InvalidScenario("node count too large".into()));
        }
        let base = DirectedGraph::from_edges_with(
            dump.node_count,
            dump.base_edges.iter().map(|&[u, v]| (u, v)),
            true,
        )?;
        Self::new(
            base,
            dump.fixed_edges.iter().map(|&[u, v]| (u, v)).collect(),
            dump.fragile_edges.iter().map(|&[u, v]| (u, v)).collect(),
            dump.local_budget.clone(),
            dump.global_budget,
        )
    }
}

/// Serializable form of a scenario. Keys: `node_count`, `base_edges`,
/// `fixed_edges`, `fragile_edges` (lists of `[src, dst]`), `local_budget`
/// (one entry per node) and `global_budget`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDump {
    pub node_count: usize,
    pub base_edges: Vec<[usize; 2]>,
    pub fixed_edges: Vec<[usize; 2]>,
    pub fragile_edges: Vec<[usize; 2]>,
    pub local_budget: Vec<usize>,
    pub global_budget: usize,
}

impl ScenarioDump {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario dump serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Builds the fixed/fragile split used in the experiments: spanning-tree
/// edges are fixed and the remaining edges (or pairs) are fragile.
pub fn build_scenario(
    graph: &DirectedGraph,
    mode: ScenarioMode,
    local: &LocalBudget,
    global: GlobalBudget,
) -> Result<PerturbationScenario> {
    let n = graph.node_count();
    let fixed = spanning_tree_edges(graph);
    let fixed_graph = DirectedGraph::from_sorted_unique(n, fixed.clone());
    let fragile: Vec<Edge> = match mode {
        ScenarioMode::RemoveOnly => graph
            .edges()
            .filter(|&(u, v)| !fixed_graph.has_edge(u, v))
            .collect(),
        ScenarioMode::AddAndRemove => (0..n)
            .flat_map(|u| (0..n).map(move |v| (u, v)))
            .filter(|&(u, v)| u != v && !fixed_graph.has_edge(u, v))
            .collect(),
    };
    let budgets = match local {
        LocalBudget::Strength(s) => (0..n).map(|v| strength_budget(graph.out_degree(v), *s)).collect(),
        LocalBudget::PerNode(b) => b.clone(),
        LocalBudget::Unlimited => vec![usize::MAX; n],
    };
    let global = match global {
        GlobalBudget::Limited(b) => b,
        GlobalBudget::Unlimited => usize::MAX,
    };
    PerturbationScenario::new(graph.clone(), fixed, fragile, budgets, global)
}

/// Applies a policy: fragile edges present in the clean graph are removed
/// when flipped, absent ones are added.
pub fn apply_policy(scenario: &PerturbationScenario, policy: &EdgePolicy) -> Result<DirectedGraph> {
    let mask = scenario.mask_of(policy)?;
    Ok(scenario.perturbed_graph(&mask))
}

#[derive(Clone, Debug)]
pub struct SbmGraph {
    pub graph: DirectedGraph,
    /// Block of each node; blocks are contiguous ranges of node ids.
    pub blocks: Vec<usize>,
}

/// Stochastic block model. Each unordered pair is drawn once and, when
/// present, emitted in both directions.
pub fn generate_sbm(n: usize, blocks: usize, p_in: f64, p_out: f64, seed: u64) -> Result<DirectedGraph> {
    generate_sbm_with_blocks(n, blocks, p_in, p_out, seed).map(|g| g.graph)
}

pub fn generate_sbm_with_blocks(
    n: usize,
    blocks: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<SbmGraph> {
    if blocks == 0 || n < blocks {
        return Err(Error::InvalidInput(format!(
            "need at least one node per block (n = {n}, blocks = {blocks})"
        )));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) || p_out > p_in {
        return Err(Error::InvalidInput(format!(
            "require 0 <= p_out <= p_in <= 1, got p_in = {p_in}, p_out = {p_out}"
        )));
    }
    if n > MAX_NODE_ID {
        return Err(Error::InvalidInput("too many nodes".into()));
    }
    let block_of: Vec<usize> = (0..n).map(|v| v * blocks / n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block_of[u] == block_of[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
                edges.push((v, u));
            }
        }
    }
    Ok(SbmGraph {
        graph: DirectedGraph::from_sorted_unique(n, sort_dedup(edges)),
        blocks: block_of,
    })
}
