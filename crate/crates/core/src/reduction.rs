//! Network dimension reduction: commonly-reduced and peak-preserved
//! matrices, EV groups and their voltage subsets.
//!
//! Node ids are 1-based throughout this module.

use std::cmp::Reverse;
use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `R_ij − G(R)/n²` where `G` is the grand sum.
pub fn commonly_reduced(r: &DMatrix<f64>) -> DMatrix<f64> {
    let cells = (r.nrows() * r.ncols()) as f64;
    if cells == 0.0 {
        return r.clone();
    }
    let mean = r.sum() / cells;
    r.map(|v| v - mean)
}

/// `R_ij − mean(column j)`.
pub fn peak_preserved(r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = r.clone();
    let rows = r.nrows() as f64;
    for mut column in out.column_iter_mut() {
        let mean = column.sum() / rows;
        column.add_scalar_mut(-mean);
    }
    out
}

/// Row index (1-based) of the peak of each column of `r_col`.
///
/// A peak is the column maximum when it is strictly positive; ties go to the
/// lower node. Columns with no variation have no peak.
pub fn column_peaks(r_col: &DMatrix<f64>) -> Vec<Option<usize>> {
    r_col
        .column_iter()
        .map(|column| {
            let mut best: Option<(usize, f64)> = None;
            for (i, &v) in column.iter().enumerate() {
                if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            best.map(|(i, _)| i + 1)
        })
        .collect()
}

/// One EV group: the nodes whose EVs it collects and the voltages it watches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvGroup {
    pub members: Vec<usize>,
    pub subset: Vec<usize>,
}

impl EvGroup {
    pub fn new(members: Vec<usize>, subset: Vec<usize>) -> Self {
        Self { members, subset }
    }

    /// Group with inclusive node ranges for members and subset.
    pub fn from_ranges(members: (usize, usize), subset: (usize, usize)) -> Self {
        Self {
            members: (members.0..=members.1).collect(),
            subset: (subset.0..=subset.1).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionPlan {
    pub node_count: usize,
    pub reduction: usize,
    pub groups: Vec<EvGroup>,
}

impl ReductionPlan {
    pub fn new(node_count: usize, reduction: usize, groups: Vec<EvGroup>) -> Self {
        Self { node_count, reduction, groups }
    }

    /// The full-dimension plan: a single group watching every node.
    pub fn full(node_count: usize) -> Self {
        let all: Vec<usize> = (1..=node_count).collect();
        Self::new(node_count, 0, vec![EvGroup::new(all.clone(), all)])
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Length of every voltage subset, `n − d`.
    pub fn subset_len(&self) -> usize {
        self.node_count.saturating_sub(self.reduction)
    }

    /// Group index whose member set contains `node`.
    pub fn group_of_node(&self, node: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.members.contains(&node))
    }
}

/// Largest admissible `d` for `r` groups: `floor(n(1 − 1/r))`.
pub fn reduction_bound(node_count: usize, groups: usize) -> usize {
    if groups == 0 {
        return 0;
    }
    node_count * (groups - 1) / groups
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanViolation {
    NoGroups,
    ReductionBound { reduction: usize, bound: usize },
    SubsetSize { group: usize, expected: usize, actual: usize },
    NodeOutOfRange { group: usize, node: usize },
    DuplicateSubsetNode { group: usize, node: usize },
    Uncovered { nodes: Vec<usize> },
    SharedMember { node: usize, groups: Vec<usize> },
    UnassignedEvNode { node: usize },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoGroups => write!(f, "plan has no groups"),
            Self::ReductionBound { reduction, bound } => {
                write!(f, "dimension reduction d = {reduction} exceeds the bound {bound}")
            }
            Self::SubsetSize { group, expected, actual } => {
                write!(f, "group {} voltage subset has {actual} nodes, expected {expected}", group + 1)
            }
            Self::NodeOutOfRange { group, node } => {
                write!(f, "group {} references node {node} outside the feeder", group + 1)
            }
            Self::DuplicateSubsetNode { group, node } => {
                write!(f, "group {} lists node {node} twice in its voltage subset", group + 1)
            }
            Self::Uncovered { nodes } => write!(f, "nodes {nodes:?} are not covered by any voltage subset"),
            Self::SharedMember { node, groups } => {
                let groups: Vec<usize> = groups.iter().map(|g| g + 1).collect();
                write!(f, "node {node} is a member of groups {groups:?}")
            }
            Self::UnassignedEvNode { node } => write!(f, "node {node} hosts EVs but belongs to no group"),
        }
    }
}

/// Checks coverage, the `d` bound, subset sizes and the member partition.
///
/// Every violation found is reported, not just the first.
pub fn validate_plan(plan: &ReductionPlan, node_count: usize, ev_nodes: &[usize]) -> Result<(), Vec<PlanViolation>> {
    let mut violations = Vec::new();
    let r = plan.groups.len();
    if r == 0 {
        violations.push(PlanViolation::NoGroups);
        return Err(violations);
    }
    let bound = reduction_bound(node_count, r);
    // d ≤ n(1 − 1/r)  ⇔  d·r ≤ n(r − 1)
    if plan.reduction * r > node_count * (r - 1) {
        violations.push(PlanViolation::ReductionBound { reduction: plan.reduction, bound });
    }
    let expected = node_count.saturating_sub(plan.reduction);
    let mut covered = vec![false; node_count + 1];
    let mut owner: Vec<Vec<usize>> = vec![Vec::new(); node_count + 1];
    for (g, group) in plan.groups.iter().enumerate() {
        if group.subset.len() != expected {
            violations.push(PlanViolation::SubsetSize { group: g, expected, actual: group.subset.len() });
        }
        let mut seen = BTreeSet::new();
        for &node in &group.subset {
            if node == 0 || node > node_count {
                violations.push(PlanViolation::NodeOutOfRange { group: g, node });
            } else if !seen.insert(node) {
                violations.push(PlanViolation::DuplicateSubsetNode { group: g, node });
            } else {
                covered[node] = true;
            }
        }
        for &node in &group.members {
            if node == 0 || node > node_count {
                violations.push(PlanViolation::NodeOutOfRange { group: g, node });
            } else if !owner[node].contains(&g) {
                owner[node].push(g);
            }
        }
    }
    let uncovered: Vec<usize> = (1..=node_count).filter(|&j| !covered[j]).collect();
    if !uncovered.is_empty() {
        violations.push(PlanViolation::Uncovered { nodes: uncovered });
    }
    for (node, groups) in owner.iter().enumerate() {
        if groups.len() > 1 {
            violations.push(PlanViolation::SharedMember { node, groups: groups.clone() });
        }
    }
    let mut ev_nodes: Vec<usize> = ev_nodes.to_vec();
    ev_nodes.sort_unstable();
    ev_nodes.dedup();
    for node in ev_nodes {
        if node >= 1 && node <= node_count && owner[node].is_empty() {
            violations.push(PlanViolation::UnassignedEvNode { node });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReductionError {
    #[error("d = {reduction} exceeds the bound {bound} for {groups} groups on {nodes} nodes")]
    Bound { reduction: usize, bound: usize, groups: usize, nodes: usize },
    #[error("cannot form {groups} contiguous windows of width {width} covering {nodes} nodes")]
    Infeasible { groups: usize, width: usize, nodes: usize },
    #[error("matrices must be square {nodes}x{nodes}")]
    Shape { nodes: usize },
}

/// Proposes `r` groups with contiguous voltage windows of width `n − d`.
///
/// Group `g` collects the EV nodes in `[start_g, start_{g+1})` and watches the
/// window `[start_g, start_g + n − d − 1]`. The first window starts at node 1
/// and the last ends at node `n`. Window starts are chosen to keep the most
/// member column peaks of `r_col` inside their group's window, then the most
/// positive (preserved) `r_all` entries of member columns inside the window;
/// remaining ties favour balanced groups and then lower starts.
pub fn propose_grouping(
    r_all: &DMatrix<f64>,
    r_col: &DMatrix<f64>,
    groups: usize,
    reduction: usize,
    ev_nodes: &[usize],
) -> Result<ReductionPlan, ReductionError> {
    let n = r_col.nrows();
    if r_col.ncols() != n || r_all.nrows() != n || r_all.ncols() != n {
        return Err(ReductionError::Shape { nodes: n });
    }
    let bound = reduction_bound(n, groups);
    if groups == 0 || groups > n || reduction * groups > n * (groups - 1) {
        return Err(ReductionError::Bound { reduction, bound, groups, nodes: n });
    }
    let width = n - reduction;
    let last_start = n - width + 1;
    if groups == 1 {
        if last_start != 1 {
            return Err(ReductionError::Infeasible { groups, width, nodes: n });
        }
    } else if last_start < groups {
        // Starts must be strictly increasing between 1 and last_start.
        return Err(ReductionError::Infeasible { groups, width, nodes: n });
    }

    let peaks = column_peaks(r_col);
    let mut hosts = vec![0usize; n + 2];
    for &node in ev_nodes {
        if node >= 1 && node <= n {
            hosts[node] += 1;
        }
    }

    // Score of a group spanning members [a, b) with window starting at a.
    let score = |a: usize, b: usize| -> Score {
        let mut score = Score::default();
        let mut size = 0;
        for node in a..b {
            if hosts[node] == 0 {
                continue;
            }
            size += hosts[node];
            if let Some(p) = peaks[node - 1] {
                if p >= a && p < a + width {
                    score.peaks += 1;
                }
            }
            score.preserved += (a..a + width).filter(|&row| r_all[(row - 1, node - 1)] > 0.0).count();
        }
        score.spread = Reverse(size * size);
        score
    };

    // best[g][s]: best score of groups g.. given that group g starts at s,
    // with the start of group g + 1.
    let mut best: Vec<Vec<Option<(Score, usize)>>> = vec![vec![None; n + 2]; groups];
    best[groups - 1][last_start] = Some((score(last_start, n + 1), n + 1));
    for g in (0..groups - 1).rev() {
        for s in 1..=last_start {
            let mut cell: Option<(Score, usize)> = None;
            for next in (s + 1)..=(s + width).min(last_start) {
                let Some((rest, _)) = best[g + 1][next] else {
                    continue;
                };
                let value = score(s, next).combine(rest);
                if cell.is_none_or(|(v, _)| value > v) {
                    cell = Some((value, next));
                }
            }
            best[g][s] = cell;
        }
    }
    if best[0][1].is_none() {
        return Err(ReductionError::Infeasible { groups, width, nodes: n });
    }
    let mut starts = vec![1usize];
    for g in 0..groups - 1 {
        let (_, next) = best[g][starts[g]].expect("reachable state");
        starts.push(next);
    }
    let plan_groups = starts
        .iter()
        .enumerate()
        .map(|(g, &s)| {
            let end = starts.get(g + 1).copied().unwrap_or(n + 1);
            let members = (s..end).filter(|&j| hosts[j] > 0).collect();
            EvGroup::new(members, (s..s + width).collect())
        })
        .collect();
    Ok(ReductionPlan::new(n, reduction, plan_groups))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord)]
struct Score {
    peaks: usize,
    preserved: usize,
    spread: Reverse<usize>,
}

impl Score {
    fn combine(self, other: Score) -> Score {
        Score {
            peaks: self.peaks + other.peaks,
            preserved: self.preserved + other.preserved,
            spread: Reverse(self.spread.0 + other.spread.0),
        }
    }
}

/// Writes a matrix as `row,col,value` triples (1-based) for heatmaps.
pub fn write_heatmap_csv<W: std::io::Write>(out: W, matrix: &DMatrix<f64>) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["row", "col", "value"])?;
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            writer.write_record([(i + 1).to_string(), (j + 1).to_string(), matrix[(i, j)].to_string()])?;
        }
    }
    writer.flush()?;
    Ok(())
}
