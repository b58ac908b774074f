//! Certificate records and aggregate metrics.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::DirectedGraph;
use crate::policy_iter::LocalCertificate;
use crate::qclp_global::GlobalCertificate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertStatus {
    Robust,
    /// Exact margin not positive (local budgets).
    Nonrobust,
    /// Lower bound not positive and no attack found (global budgets).
    Unknown,
    /// A concrete admissible graph flips the prediction.
    NonrobustWitnessed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundType {
    Exact,
    Lower,
}

/// One line of a certificate file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub node: usize,
    pub y: usize,
    pub worst_class: usize,
    pub worst_margin: f64,
    pub status: CertStatus,
    pub bound_type: BoundType,
    pub witness_flips: Vec<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attack_verified: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attack_margin: Option<f64>,
    pub marginal: bool,
}

impl From<&LocalCertificate> for CertificateRecord {
    fn from(c: &LocalCertificate) -> Self {
        CertificateRecord {
            node: c.node,
            y: c.y,
            worst_class: c.worst_class,
            worst_margin: c.worst_margin,
            status: c.status,
            bound_type: BoundType::Exact,
            witness_flips: c.witness.to_pairs(),
            attack_verified: None,
            attack_margin: None,
            marginal: c.marginal,
        }
    }
}

impl From<&GlobalCertificate> for CertificateRecord {
    fn from(c: &GlobalCertificate) -> Self {
        CertificateRecord {
            node: c.node,
            y: c.y,
            worst_class: c.worst_class,
            worst_margin: c.lower_bound_margin,
            status: c.status,
            bound_type: BoundType::Lower,
            witness_flips: c.rounded_attack.to_pairs(),
            attack_verified: Some(c.attack_verified),
            attack_margin: Some(c.attack_margin),
            marginal: c.marginal,
        }
    }
}

impl CertificateRecord {
    pub fn is_robust(&self) -> bool {
        self.status == CertStatus::Robust
    }
}

/// JSON lines, one record per line.
pub fn records_to_jsonl(records: &[CertificateRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> crate::Result<Vec<CertificateRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Share of records certified robust; 0 for an empty report.
pub fn certified_ratio(records: &[CertificateRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.is_robust()).count() as f64 / records.len() as f64
}

/// Share of records that are robust and whose clean prediction matches the
/// true label.
pub fn certified_accuracy(records: &[CertificateRecord], predictions: &[usize], labels: &[usize]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = records
        .iter()
        .filter(|r| r.is_robust() && predictions[r.node] == labels[r.node])
        .count();
    hits as f64 / records.len() as f64
}

/// Share of correct clean predictions among the recorded nodes.
pub fn clean_accuracy(records: &[CertificateRecord], predictions: &[usize], labels: &[usize]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let hits = records.iter().filter(|r| predictions[r.node] == labels[r.node]).count();
    hits as f64 / records.len() as f64
}

/// Fraction of `v`'s undirected two-hop neighbors (excluding `v`) that share
/// its label; 0 when the neighborhood is empty.
pub fn neighborhood_purity(graph: &DirectedGraph, labels: &[usize], v: usize) -> f64 {
    purity_with(&graph.undirected_adjacency(), labels, v)
}

fn purity_with(adj: &[Vec<usize>], labels: &[usize], v: usize) -> f64 {
    let mut hood: Vec<usize> = adj[v].clone();
    for &u in &adj[v] {
        hood.extend_from_slice(&adj[u]);
    }
    hood.sort_unstable();
    hood.dedup();
    hood.retain(|&u| u != v);
    if hood.is_empty() {
        return 0.0;
    }
    hood.iter().filter(|&&u| labels[u] == labels[v]).count() as f64 / hood.len() as f64
}

/// Purity of every node.
pub fn all_purities(graph: &DirectedGraph, labels: &[usize]) -> Vec<f64> {
    let adj = graph.undirected_adjacency();
    (0..graph.node_count()).map(|v| purity_with(&adj, labels, v)).collect()
}

/// Mean worst margin per purity bucket `[i/b, (i+1)/b)` (last bucket closed).
/// Rows: `(bucket lower edge, node count, mean margin)`; empty buckets skipped.
pub fn purity_buckets(records: &[CertificateRecord], purity: &[f64], buckets: usize) -> Vec<(f64, usize, f64)> {
    let buckets = buckets.max(1);
    let mut sums = vec![(0usize, 0.0f64); buckets];
    for r in records {
        let b = ((purity[r.node] * buckets as f64) as usize).min(buckets - 1);
        sums[b].0 += 1;
        sums[b].1 += r.worst_margin;
    }
    sums.iter()
        .enumerate()
        .filter(|(_, s)| s.0 > 0)
        .map(|(b, s)| (b as f64 / buckets as f64, s.0, s.1 / s.0 as f64))
        .collect()
}

/// Ratio of robust nodes grouped by clean out-degree.
pub fn ratio_by_degree(records: &[CertificateRecord], graph: &DirectedGraph) -> Vec<(usize, usize, f64)> {
    let mut by: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for r in records {
        let e = by.entry(graph.out_degree(r.node)).or_default();
        e.0 += 1;
        if r.is_robust() {
            e.1 += 1;
        }
    }
    by.into_iter().map(|(d, (n, k))| (d, n, k as f64 / n as f64)).collect()
}

/// Two-column CSV with a header row.
pub fn series_csv(key: &str, value: &str, rows: &[(f64, f64)]) -> String {
    let mut out = format!("{key},{value}\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

/// Summary CSV of a report.
pub fn summary_csv(records: &[CertificateRecord], predictions: Option<&[usize]>, labels: Option<&[usize]>) -> String {
    let mut out = String::from("metric,value\n");
    let _ = writeln!(out, "nodes,{}", records.len());
    let _ = writeln!(out, "robust,{}", records.iter().filter(|r| r.is_robust()).count());
    let _ = writeln!(out, "certified_ratio,{}", certified_ratio(records));
    let witnessed = records
        .iter()
        .filter(|r| matches!(r.status, CertStatus::Nonrobust | CertStatus::NonrobustWitnessed) && r.worst_margin < 0.0)
        .count();
    let _ = writeln!(out, "nonrobust_witnessed,{witnessed}");
    let _ = writeln!(out, "marginal,{}", records.iter().filter(|r| r.marginal).count());
    if let (Some(p), Some(l)) = (predictions, labels) {
        let _ = writeln!(out, "clean_accuracy,{}", clean_accuracy(records, p, l));
        let _ = writeln!(out, "certified_accuracy,{}", certified_accuracy(records, p, l));
    }
    out
}

/// Up to `count` distinct nodes from `pool`, sorted; deterministic in `seed`.
pub fn sample_targets(pool: &[usize], count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = pool.to_vec();
    v.shuffle(&mut rng);
    v.truncate(count);
    v.sort_unstable();
    v
}
