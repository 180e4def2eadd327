//! Radial feeder model and LinDistFlow voltage evaluation.
//!
//! Node 0 is the slack bus and never appears in the matrices; node `j` in
//! `1..=n` maps to row/column `j - 1`. Horizon vectors (`n·K` entries) are
//! stored time-major: the entry for node `j` at slot `t` lives at
//! `t * n + (j - 1)`.
//!
//! Voltages are squared magnitudes in V², impedances in ohms and power in
//! watts inside the matrices. Feeder documents and baseline profiles use kV
//! and kW.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;
use thiserror::Error;

/// Watts per kilowatt.
pub const W_PER_KW: f64 = 1_000.0;

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("cycle detected: edge {0}-{1} closes a loop")]
    Cycle(usize, usize),
    #[error("node {0} is not connected to the slack node")]
    Disconnected(usize),
    #[error("expected {expected} edges for {nodes} non-slack nodes, found {found}")]
    EdgeCount { nodes: usize, expected: usize, found: usize },
    #[error("edge {parent}-{child} references a node outside 0..={max}")]
    UnknownNode { parent: usize, child: usize, max: usize },
    #[error("edge {0}-{1} is a self loop")]
    SelfLoop(usize, usize),
    #[error("edge {parent}-{child} has negative impedance (r = {r}, x = {x})")]
    NegativeImpedance { parent: usize, child: usize, r: f64, x: f64 },
    #[error("invalid feeder data: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("failed to parse feeder document: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Edge {
    pub parent: usize,
    pub child: usize,
    /// Resistance in ohms.
    #[serde(rename = "r_ohm")]
    pub resistance: f64,
    /// Reactance in ohms.
    #[serde(rename = "x_ohm", default)]
    pub reactance: f64,
}

impl Edge {
    pub fn new(parent: usize, child: usize, resistance: f64, reactance: f64) -> Self {
        Self { parent, child, resistance, reactance }
    }
}

/// Per-node scenario data carried by the feeder document.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeData {
    pub ev_count: usize,
    /// Fraction of the feeder baseline load served at this node.
    pub load_share: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeederDocument {
    name: Option<String>,
    slack_voltage_kv: f64,
    #[serde(default, rename = "edge")]
    edges: Vec<Edge>,
    #[serde(default, rename = "node")]
    nodes: Vec<NodeEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: usize,
    #[serde(default)]
    evs: usize,
    #[serde(default)]
    load_share: f64,
}

/// A radial distribution feeder with its graphical R/X matrices.
#[derive(Debug, Clone)]
pub struct FeederModel {
    name: String,
    node_count: usize,
    edges: Vec<Edge>,
    slack_voltage: f64,
    parent: Vec<usize>,
    nodes: Vec<NodeData>,
    r_matrix: DMatrix<f64>,
    x_matrix: DMatrix<f64>,
}

impl FeederModel {
    /// Builds a feeder from a tree of `node_count` non-slack nodes.
    ///
    /// Edges may be listed in either orientation; they are re-oriented away
    /// from the slack node. `slack_voltage` is in volts.
    pub fn new(node_count: usize, edges: Vec<Edge>, slack_voltage: f64) -> Result<Self, FeederError> {
        if !(slack_voltage.is_finite() && slack_voltage > 0.0) {
            return Err(FeederError::Invalid(format!(
                "slack voltage must be positive, got {slack_voltage}"
            )));
        }
        let parent = orient_tree(node_count, &edges)?;
        let edges = edges
            .into_iter()
            .map(|e| {
                // Re-orient so that `parent` is on the slack side.
                if parent[e.child] == e.parent {
                    e
                } else {
                    Edge { parent: e.child, child: e.parent, ..e }
                }
            })
            .collect::<Vec<_>>();
        let (r_matrix, x_matrix) = build_graph_matrices(node_count, &edges)?;
        Ok(Self {
            name: String::from("feeder"),
            node_count,
            edges,
            slack_voltage,
            parent,
            nodes: vec![NodeData::default(); node_count],
            r_matrix,
            x_matrix,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Attaches per-node scenario data (EV counts, baseline shares).
    pub fn with_node_data(mut self, nodes: Vec<NodeData>) -> Result<Self, FeederError> {
        if nodes.len() != self.node_count {
            return Err(FeederError::Dimension(format!(
                "{} node entries for {} nodes",
                nodes.len(),
                self.node_count
            )));
        }
        if let Some(bad) = nodes.iter().find(|d| !(d.load_share >= 0.0 && d.load_share.is_finite())) {
            return Err(FeederError::Invalid(format!("negative load share {}", bad.load_share)));
        }
        self.nodes = nodes;
        Ok(self)
    }

    /// Parses a feeder document (TOML).
    pub fn from_toml_str(source: &str) -> Result<Self, FeederError> {
        let doc: FeederDocument = toml::from_str(source)?;
        let n = doc.edges.len();
        let mut nodes = vec![NodeData::default(); n];
        for entry in &doc.nodes {
            if entry.id == 0 || entry.id > n {
                return Err(FeederError::Invalid(format!(
                    "node entry {} outside 1..={n}",
                    entry.id
                )));
            }
            nodes[entry.id - 1] = NodeData { ev_count: entry.evs, load_share: entry.load_share };
        }
        let model = Self::new(n, doc.edges, doc.slack_voltage_kv * 1_000.0)?
            .with_node_data(nodes)?;
        Ok(match doc.name {
            Some(name) => model.with_name(name),
            None => model,
        })
    }

    /// Reads and parses a feeder document from disk.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeederError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of non-slack nodes `n`.
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Slack voltage magnitude `V0` in volts.
    pub fn slack_voltage(&self) -> f64 {
        self.slack_voltage
    }

    /// `V0²` in V².
    pub fn slack_voltage_sq(&self) -> f64 {
        self.slack_voltage * self.slack_voltage
    }

    /// Parent of node `j` (1-based); the slack node has no parent.
    pub fn parent_of(&self, node: usize) -> Option<usize> {
        (node != 0 && node <= self.node_count).then(|| self.parent[node])
    }

    pub fn node_data(&self) -> &[NodeData] {
        &self.nodes
    }

    pub fn r_matrix(&self) -> &DMatrix<f64> {
        &self.r_matrix
    }

    pub fn x_matrix(&self) -> &DMatrix<f64> {
        &self.x_matrix
    }

    /// Resistance entry `R_ij` for 1-based node ids.
    pub fn r(&self, i: usize, j: usize) -> f64 {
        self.r_matrix[(i - 1, j - 1)]
    }
}

/// Checks that `edges` form a tree over `0..=node_count` and returns the
/// parent of every node (index 0 maps to itself).
fn orient_tree(node_count: usize, edges: &[Edge]) -> Result<Vec<usize>, FeederError> {
    for e in edges {
        if e.parent > node_count || e.child > node_count {
            return Err(FeederError::UnknownNode { parent: e.parent, child: e.child, max: node_count });
        }
        if e.parent == e.child {
            return Err(FeederError::SelfLoop(e.parent, e.child));
        }
        if !(e.resistance >= 0.0 && e.reactance >= 0.0) {
            return Err(FeederError::NegativeImpedance {
                parent: e.parent,
                child: e.child,
                r: e.resistance,
                x: e.reactance,
            });
        }
    }

    // Union-find pass to report cycles before connectivity.
    let mut root: Vec<usize> = (0..=node_count).collect();
    fn find(root: &mut [usize], mut a: usize) -> usize {
        while root[a] != a {
            root[a] = root[root[a]];
            a = root[a];
        }
        a
    }
    for e in edges {
        let (a, b) = (find(&mut root, e.parent), find(&mut root, e.child));
        if a == b {
            return Err(FeederError::Cycle(e.parent, e.child));
        }
        root[a] = b;
    }
    if edges.len() != node_count {
        if let Some(node) = (1..=node_count).find(|&j| find(&mut root, j) != find(&mut root, 0)) {
            return Err(FeederError::Disconnected(node));
        }
        return Err(FeederError::EdgeCount {
            nodes: node_count,
            expected: node_count,
            found: edges.len(),
        });
    }

    let mut adjacency = vec![Vec::new(); node_count + 1];
    for e in edges {
        adjacency[e.parent].push(e.child);
        adjacency[e.child].push(e.parent);
    }
    let mut parent = vec![usize::MAX; node_count + 1];
    parent[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &w in &adjacency[u] {
            if parent[w] == usize::MAX {
                parent[w] = u;
                queue.push_back(w);
            }
        }
    }
    if let Some(node) = parent.iter().position(|&p| p == usize::MAX) {
        return Err(FeederError::Disconnected(node));
    }
    Ok(parent)
}

/// Builds the graphical resistance and reactance matrices of a tree.
///
/// `R_ij` is the resistance accumulated from the slack node down to the
/// deepest common ancestor of `i` and `j`, i.e. the sum over the edges
/// shared by both root paths. Edges must already be a valid tree.
pub fn build_graph_matrices(
    node_count: usize,
    edges: &[Edge],
) -> Result<(DMatrix<f64>, DMatrix<f64>), FeederError> {
    let parent = orient_tree(node_count, edges)?;
    let mut edge_r = vec![0.0; node_count + 1];
    let mut edge_x = vec![0.0; node_count + 1];
    for e in edges {
        let child = if parent[e.child] == e.parent { e.child } else { e.parent };
        edge_r[child] = e.resistance;
        edge_x[child] = e.reactance;
    }

    // Depth and cumulative impedance, filled in BFS order so parents come first.
    let mut order = Vec::with_capacity(node_count + 1);
    let mut children = vec![Vec::new(); node_count + 1];
    for j in 1..=node_count {
        children[parent[j]].push(j);
    }
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        queue.extend(children[u].iter().copied());
    }
    let mut depth = vec![0usize; node_count + 1];
    let mut cum_r = vec![0.0; node_count + 1];
    let mut cum_x = vec![0.0; node_count + 1];
    for &u in order.iter().skip(1) {
        let p = parent[u];
        depth[u] = depth[p] + 1;
        cum_r[u] = cum_r[p] + edge_r[u];
        cum_x[u] = cum_x[p] + edge_x[u];
    }

    let lca = |mut a: usize, mut b: usize| {
        while depth[a] > depth[b] {
            a = parent[a];
        }
        while depth[b] > depth[a] {
            b = parent[b];
        }
        while a != b {
            a = parent[a];
            b = parent[b];
        }
        a
    };

    let mut r = DMatrix::zeros(node_count, node_count);
    let mut x = DMatrix::zeros(node_count, node_count);
    for i in 1..=node_count {
        for j in i..=node_count {
            let c = lca(i, j);
            r[(i - 1, j - 1)] = cum_r[c];
            r[(j - 1, i - 1)] = cum_r[c];
            x[(i - 1, j - 1)] = cum_x[c];
            x[(j - 1, i - 1)] = cum_x[c];
        }
    }
    Ok((r, x))
}

/// Baseline operating point over a scheduling horizon.
#[derive(Debug, Clone)]
pub struct HorizonLoad {
    slots: usize,
    node_count: usize,
    baseline_power_kw: Vec<f64>,
    baseline_drop: Vec<f64>,
    slack_sq: f64,
}

impl HorizonLoad {
    /// Spreads the feeder-level baseline `baseline_kw` over nodes by their
    /// `load_share` and computes the LinDistFlow drop it causes.
    pub fn from_baseline(
        feeder: &FeederModel,
        baseline_kw: &[f64],
        power_factor: f64,
    ) -> Result<Self, FeederError> {
        if !(power_factor > 0.0 && power_factor <= 1.0) {
            return Err(FeederError::Invalid(format!("power factor {power_factor} outside (0, 1]")));
        }
        let n = feeder.node_count();
        let total_share: f64 = feeder.node_data().iter().map(|d| d.load_share).sum();
        if !(total_share > 0.0) && baseline_kw.iter().any(|&p| p != 0.0) {
            return Err(FeederError::Invalid("baseline load needs at least one node with load_share > 0".into()));
        }
        let q_ratio = (1.0 / (power_factor * power_factor) - 1.0).max(0.0).sqrt();
        let mut drop = vec![0.0; n * baseline_kw.len()];
        let r = feeder.r_matrix();
        let x = feeder.x_matrix();
        for (t, &p_total) in baseline_kw.iter().enumerate() {
            let p: Vec<f64> = feeder
                .node_data()
                .iter()
                .map(|d| if total_share > 0.0 { p_total * W_PER_KW * d.load_share / total_share } else { 0.0 })
                .collect();
            for j in 0..n {
                let mut v = 0.0;
                for k in 0..n {
                    v += r[(j, k)] * p[k] + x[(j, k)] * p[k] * q_ratio;
                }
                drop[t * n + j] = 2.0 * v;
            }
        }
        Self::from_parts(n, baseline_kw.to_vec(), drop, feeder.slack_voltage())
    }

    /// Assembles a horizon from explicit vectors (`baseline_drop` is `n·K`, time-major).
    pub fn from_parts(
        node_count: usize,
        baseline_power_kw: Vec<f64>,
        baseline_drop: Vec<f64>,
        slack_voltage: f64,
    ) -> Result<Self, FeederError> {
        let slots = baseline_power_kw.len();
        if baseline_drop.len() != node_count * slots {
            return Err(FeederError::Dimension(format!(
                "baseline drop has {} entries, expected {}",
                baseline_drop.len(),
                node_count * slots
            )));
        }
        let slack_sq = slack_voltage * slack_voltage;
        if let Some(idx) = baseline_drop.iter().position(|&v| !(slack_sq - v > 0.0)) {
            return Err(FeederError::Invalid(format!(
                "baseline drop collapses voltage at node {} slot {}",
                idx % node_count.max(1) + 1,
                idx / node_count.max(1)
            )));
        }
        Ok(Self { slots, node_count, baseline_power_kw, baseline_drop, slack_sq })
    }

    /// Number of slots `K`.
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn baseline_power_kw(&self) -> &[f64] {
        &self.baseline_power_kw
    }

    /// Baseline drop `V_b`, time-major `n·K`.
    pub fn baseline_drop(&self) -> &[f64] {
        &self.baseline_drop
    }

    pub fn slack_voltage_sq(&self) -> f64 {
        self.slack_sq
    }

    /// `V_c = V0²·1 − V_b`.
    pub fn compensated(&self) -> Vec<f64> {
        self.baseline_drop.iter().map(|v| self.slack_sq - v).collect()
    }
}

/// LinDistFlow voltages `V_c − Σ_i D_i U_i` (V², time-major `n·K`).
///
/// `d_matrix` is `n × v`; `profiles` holds `v` rows of `K` normalized rates.
pub fn evaluate_voltages(
    model: &FeederModel,
    loads: &HorizonLoad,
    d_matrix: &DMatrix<f64>,
    profiles: &crate::fleet::ChargingProfiles,
) -> Result<Vec<f64>, FeederError> {
    let n = model.node_count();
    let k = loads.slots();
    if loads.node_count() != n || d_matrix.nrows() != n {
        return Err(FeederError::Dimension(format!(
            "feeder has {n} nodes, load has {}, D has {} rows",
            loads.node_count(),
            d_matrix.nrows()
        )));
    }
    if d_matrix.ncols() != profiles.ev_count() || profiles.slots() != k {
        return Err(FeederError::Dimension(format!(
            "D has {} columns and horizon {k} slots, profiles are {}x{}",
            d_matrix.ncols(),
            profiles.ev_count(),
            profiles.slots()
        )));
    }
    let mut v = loads.compensated();
    for i in 0..profiles.ev_count() {
        let column = d_matrix.column(i);
        for (t, &u) in profiles.row(i).iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            let block = &mut v[t * n..(t + 1) * n];
            for (slot, d) in block.iter_mut().zip(column.iter()) {
                *slot -= d * u;
            }
        }
    }
    Ok(v)
}

/// Writes a square matrix as CSV with a header row of 1-based node ids.
pub fn write_matrix_csv<W: Write>(out: W, matrix: &DMatrix<f64>) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![String::from("node")];
    header.extend((1..=matrix.ncols()).map(|j| j.to_string()));
    writer.write_record(&header)?;
    for i in 0..matrix.nrows() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(matrix.row(i).iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::ChargingProfiles;
    use approx::assert_relative_eq;

    fn chain() -> FeederModel {
        FeederModel::new(2, vec![Edge::new(0, 1, 0.1, 0.0), Edge::new(1, 2, 0.2, 0.0)], 1.0).unwrap()
    }

    #[test]
    fn chain_resistance_matrix() {
        let f = chain();
        let r = f.r_matrix();
        assert_relative_eq!(r[(0, 0)], 0.1);
        assert_relative_eq!(r[(0, 1)], 0.1);
        assert_relative_eq!(r[(1, 0)], 0.1);
        assert_relative_eq!(r[(1, 1)], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn single_node() {
        let f = FeederModel::new(1, vec![Edge::new(0, 1, 0.5, 0.25)], 1.0).unwrap();
        assert_eq!(f.r_matrix().as_slice(), &[0.5]);
        assert_eq!(f.x_matrix().as_slice(), &[0.25]);
    }

    #[test]
    fn star_paths_share_nothing() {
        let f = FeederModel::new(2, vec![Edge::new(0, 1, 0.1, 0.0), Edge::new(0, 2, 0.2, 0.0)], 1.0).unwrap();
        let r = f.r_matrix();
        assert_eq!(r[(0, 1)], 0.0);
        assert_eq!(r[(1, 0)], 0.0);
        assert_eq!(r[(0, 0)], 0.1);
        assert_eq!(r[(1, 1)], 0.2);
    }

    #[test]
    fn reversed_edges_are_reoriented() {
        let f = FeederModel::new(2, vec![Edge::new(1, 0, 0.1, 0.0), Edge::new(2, 1, 0.2, 0.0)], 1.0).unwrap();
        assert_eq!(f.parent_of(2), Some(1));
        assert_relative_eq!(f.r(2, 2), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn topology_errors() {
        let cycle = FeederModel::new(2, vec![Edge::new(2, 1, 0.1, 0.0), Edge::new(1, 2, 0.2, 0.0)], 1.0);
        assert!(matches!(cycle, Err(FeederError::Cycle(..))));

        let disconnected = FeederModel::new(3, vec![Edge::new(0, 1, 0.1, 0.0), Edge::new(2, 3, 0.1, 0.0)], 1.0);
        assert!(matches!(disconnected, Err(FeederError::Disconnected(_))));

        let negative = FeederModel::new(1, vec![Edge::new(0, 1, -0.1, 0.0)], 1.0);
        assert!(matches!(negative, Err(FeederError::NegativeImpedance { .. })));

        let unknown = FeederModel::new(1, vec![Edge::new(0, 4, 0.1, 0.0)], 1.0);
        assert!(matches!(unknown, Err(FeederError::UnknownNode { .. })));
    }

    #[test]
    fn parse_minimal_document() {
        let doc = r#"
            name = "chain"
            slack_voltage_kv = 4.16
            [[edge]]
            parent = 0
            child = 1
            r_ohm = 0.1
            [[edge]]
            parent = 1
            child = 2
            r_ohm = 0.2
            x_ohm = 0.05
            [[node]]
            id = 2
            evs = 3
            load_share = 1.0
        "#;
        let f = FeederModel::from_toml_str(doc).unwrap();
        assert_eq!(f.node_count(), 2);
        assert_eq!(f.name(), "chain");
        assert_relative_eq!(f.slack_voltage(), 4160.0);
        assert_eq!(f.node_data()[1].ev_count, 3);
        assert_relative_eq!(f.x_matrix()[(1, 1)], 0.05);
    }

    #[test]
    fn parse_rejects_cycle() {
        let doc = r#"
            slack_voltage_kv = 1.0
            [[edge]]
            parent = 2
            child = 1
            r_ohm = 0.1
            [[edge]]
            parent = 1
            child = 2
            r_ohm = 0.2
        "#;
        assert!(matches!(FeederModel::from_toml_str(doc), Err(FeederError::Cycle(..))));
    }

    #[test]
    fn voltages_without_load() {
        let f = chain();
        let loads = HorizonLoad::from_parts(2, vec![0.0; 3], vec![0.0; 6], 1.0).unwrap();
        let d = DMatrix::from_row_slice(2, 1, &[0.2, 0.6]);
        let u = ChargingProfiles::zeros(1, 3);
        let v = evaluate_voltages(&f, &loads, &d, &u).unwrap();
        assert!(v.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn one_slot_drop_matches_column() {
        let f = chain();
        let drop = vec![0.01, 0.02, 0.03, 0.04];
        let loads = HorizonLoad::from_parts(2, vec![0.0; 2], drop.clone(), 1.0).unwrap();
        let d = DMatrix::from_row_slice(2, 1, &[0.2, 0.6]);
        let mut u = ChargingProfiles::zeros(1, 2);
        u.row_mut(0)[1] = 1.0;
        let v = evaluate_voltages(&f, &loads, &d, &u).unwrap();
        assert_eq!(v[0], 1.0 - drop[0]);
        assert_eq!(v[1], 1.0 - drop[1]);
        assert_relative_eq!(v[2], 1.0 - drop[2] - 0.2, epsilon = 1e-15);
        assert_relative_eq!(v[3], 1.0 - drop[3] - 0.6, epsilon = 1e-15);
    }

    #[test]
    fn voltage_dimension_mismatch() {
        let f = chain();
        let loads = HorizonLoad::from_parts(2, vec![0.0; 2], vec![0.0; 4], 1.0).unwrap();
        let d = DMatrix::from_row_slice(2, 1, &[0.2, 0.6]);
        let u = ChargingProfiles::zeros(1, 3);
        assert!(matches!(evaluate_voltages(&f, &loads, &d, &u), Err(FeederError::Dimension(_))));
    }

    #[test]
    fn baseline_drop_follows_shares() {
        let f = chain()
            .with_node_data(vec![
                NodeData { ev_count: 0, load_share: 0.0 },
                NodeData { ev_count: 0, load_share: 1.0 },
            ])
            .unwrap();
        // 1 kW at node 2 with unity power factor: drop = 2 R[:,2] * 1000.
        let loads = HorizonLoad::from_baseline(&f, &[1.0], 1.0);
        // slack voltage of 1 V cannot carry this load.
        assert!(loads.is_err());
        let f = FeederModel::new(2, f.edges().to_vec(), 100.0)
            .unwrap()
            .with_node_data(f.node_data().to_vec())
            .unwrap();
        let loads = HorizonLoad::from_baseline(&f, &[1.0], 1.0).unwrap();
        assert_relative_eq!(loads.baseline_drop()[0], 2.0 * 0.1 * 1000.0, epsilon = 1e-9);
        assert_relative_eq!(loads.baseline_drop()[1], 2.0 * 0.3 * 1000.0, epsilon = 1e-9);
    }

    #[test]
    fn matrix_csv_has_header() {
        let f = chain();
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, f.r_matrix()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("node,1,2"));
        assert_eq!(text.lines().count(), 3);
    }
}
