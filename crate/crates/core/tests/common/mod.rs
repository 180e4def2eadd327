#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use spmds::feeder::Edge;
use spmds::{ChargingProblem, ChargingProfiles, EvSpec};

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Random tree over nodes `0..=n` (0 is the slack). Labels are shuffled so
/// parents may carry larger ids than children, and edges come in random
/// orientation and order. Impedances are multiples of 1/1024, so any
/// summation order is exact.
pub fn random_tree(rng: &mut impl Rng, n: usize) -> Vec<Edge> {
    let mut labels: Vec<usize> = (1..=n).collect();
    labels.shuffle(rng);
    let label = |k: usize| if k == 0 { 0 } else { labels[k - 1] };
    let mut edges: Vec<Edge> = (1..=n)
        .map(|k| {
            let parent = rng.gen_range(0..k);
            let r = rng.gen_range(1..512) as f64 / 1024.0;
            let x = rng.gen_range(0..512) as f64 / 1024.0;
            let (a, b) = if rng.gen_bool(0.5) { (label(parent), label(k)) } else { (label(k), label(parent)) };
            Edge::new(a, b, r, x)
        })
        .collect();
    edges.shuffle(rng);
    edges
}

/// Edges on the path from `node` to the slack, found by walking the
/// undirected edge list.
fn root_path(edges: &[Edge], node: usize) -> Vec<usize> {
    let n = edges.len();
    // Parent search by repeated relaxation from the slack.
    let mut parent_edge: Vec<Option<usize>> = vec![None; n + 1];
    let mut reached = vec![false; n + 1];
    reached[0] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for (k, e) in edges.iter().enumerate() {
            for (from, to) in [(e.parent, e.child), (e.child, e.parent)] {
                if reached[from] && !reached[to] {
                    reached[to] = true;
                    parent_edge[to] = Some(k);
                    changed = true;
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut cur = node;
    while cur != 0 {
        let k = parent_edge[cur].expect("connected tree");
        out.push(k);
        let e = edges[k];
        cur = if e.child == cur { e.parent } else { e.child };
    }
    out
}

/// `(R, X)` by summing impedances of the edges common to both root paths.
pub fn shared_path_matrices(edges: &[Edge]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = edges.len();
    let paths: Vec<Vec<usize>> = (1..=n).map(|j| root_path(edges, j)).collect();
    let mut r = DMatrix::zeros(n, n);
    let mut x = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            for &k in &paths[i] {
                if paths[j].contains(&k) {
                    r[(i, j)] += edges[k].resistance;
                    x[(i, j)] += edges[k].reactance;
                }
            }
        }
    }
    (r, x)
}

/// Projection onto `{u ∈ [0,1]^K : Σu = target}` by enumerating every
/// lower/upper/free pattern and keeping the closest feasible candidate.
pub fn brute_force_projection(point: &[f64], target: f64) -> Vec<f64> {
    let k = point.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let patterns = 3usize.pow(k as u32);
    for code in 0..patterns {
        let mut c = code;
        let status: Vec<usize> = (0..k)
            .map(|_| {
                let s = c % 3;
                c /= 3;
                s
            })
            .collect();
        let uppers = status.iter().filter(|&&s| s == 1).count() as f64;
        let free: Vec<usize> = (0..k).filter(|&i| status[i] == 2).collect();
        let mut u: Vec<f64> = status.iter().map(|&s| if s == 1 { 1.0 } else { 0.0 }).collect();
        if free.is_empty() {
            if (uppers - target).abs() > 1e-12 {
                continue;
            }
        } else {
            let shift = (free.iter().map(|&i| point[i]).sum::<f64>() - (target - uppers)) / free.len() as f64;
            for &i in &free {
                u[i] = point[i] - shift;
            }
            if free.iter().any(|&i| u[i] < -1e-12 || u[i] > 1.0 + 1e-12) {
                continue;
            }
        }
        let dist: f64 = u.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, u));
        }
    }
    best.expect("feasible target").1
}

/// Unit-scale problem: random tree, EVs at `ev_nodes`, slack voltage 1.
pub fn unit_instance(rng: &mut impl Rng, n: usize, ev_nodes: &[usize], slots: usize, floor: f64) -> ChargingProblem {
    let edges = random_tree(rng, n);
    let (r, _) = spmds::feeder::build_graph_matrices(n, &edges).unwrap();
    let r = r * 0.1;
    let specs: Vec<EvSpec> = ev_nodes
        .iter()
        .map(|&node| EvSpec {
            node,
            p_max_kw: 1.0,
            efficiency: 1.0,
            energy_need_kwh: rng.gen_range(0.5..0.5 * slots as f64),
            slot_hours: 1.0,
        })
        .collect();
    let mut d = DMatrix::zeros(n, specs.len());
    for (i, s) in specs.iter().enumerate() {
        for j in 0..n {
            d[(j, i)] = 2.0 * r[(j, s.node - 1)];
        }
    }
    let baseline: Vec<f64> = (0..slots).map(|_| rng.gen_range(1.0..4.0)).collect();
    let compensated: Vec<f64> = (0..n * slots).map(|_| rng.gen_range(0.93..0.98)).collect();
    ChargingProblem::from_parts(specs.clone(), vec![1.0; specs.len()], baseline, d, compensated, 1.0, floor).unwrap()
}

pub fn random_feasible_profiles(rng: &mut impl Rng, problem: &ChargingProblem) -> ChargingProfiles {
    let rows = problem
        .specs()
        .iter()
        .map(|s| {
            let raw: Vec<f64> = (0..problem.slots()).map(|_| rng.gen_range(-1.0..2.0)).collect();
            s.project(&raw).unwrap()
        })
        .collect();
    ChargingProfiles::from_rows(rows, problem.slots())
}
