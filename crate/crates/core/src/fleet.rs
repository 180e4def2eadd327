//! EV models, aggregation matrices and the local feasible-set projection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{FeederModel, W_PER_KW};
use crate::reduction::ReductionPlan;

#[derive(Debug, Error, PartialEq)]
pub enum FleetError {
    #[error("EV {ev} is attached to node {node}, outside 1..={max}")]
    UnknownNode { ev: usize, node: usize, max: usize },
    #[error("EV {ev}: {reason}")]
    InvalidSpec { ev: usize, reason: String },
    #[error("EV {ev} at node {node} belongs to no group")]
    Ungrouped { ev: usize, node: usize },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("required rate sum {target} is outside [0, {slots}]")]
    Infeasible { target: f64, slots: usize },
    #[error("projection input contains a non-finite value")]
    NonFinite,
}

/// One EV and its charging requirement over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvSpec {
    /// Attachment node (1-based).
    pub node: usize,
    /// Maximum charging power in kW.
    pub p_max_kw: f64,
    /// Charging efficiency in (0, 1].
    pub efficiency: f64,
    /// Energy still owed at the start of the horizon, `x_i(k)`, in kWh.
    /// Charging drives it to zero: `x_i(k) + B_i Σ_t u_i(t) = 0`.
    pub energy_need_kwh: f64,
    /// Slot length in hours.
    pub slot_hours: f64,
}

impl EvSpec {
    /// `B_i = −η Δt P̄_i` in kWh per slot at full rate.
    pub fn b(&self) -> f64 {
        -self.efficiency * self.slot_hours * self.p_max_kw
    }

    /// Sum of normalized rates needed to deliver the energy need.
    pub fn rate_sum(&self) -> f64 {
        if self.energy_need_kwh == 0.0 {
            0.0
        } else {
            -self.energy_need_kwh / self.b()
        }
    }

    /// Residual of the energy constraint, `x_i(k) + B_i Σ_t u_t`.
    pub fn energy_residual(&self, profile: &[f64]) -> f64 {
        self.energy_need_kwh + self.b() * profile.iter().sum::<f64>()
    }

    pub fn validate(&self, slots: usize) -> Result<(), String> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(format!("efficiency {} outside (0, 1]", self.efficiency));
        }
        if !(self.p_max_kw > 0.0 && self.p_max_kw.is_finite()) {
            return Err(format!("maximum power {} must be positive", self.p_max_kw));
        }
        if !(self.slot_hours > 0.0 && self.slot_hours.is_finite()) {
            return Err(format!("slot length {} must be positive", self.slot_hours));
        }
        let deliverable = -self.b() * slots as f64;
        if !(self.energy_need_kwh >= 0.0 && self.energy_need_kwh <= deliverable * (1.0 + 1e-12)) {
            return Err(format!(
                "energy need {} kWh outside [0, {deliverable}] deliverable in {slots} slots",
                self.energy_need_kwh
            ));
        }
        Ok(())
    }

    /// Projects `profile` onto this EV's feasible set.
    pub fn project(&self, profile: &[f64]) -> Result<Vec<f64>, ProjectionError> {
        project_local(profile, self.rate_sum())
    }

    /// Uncontrolled profile: full rate from the first slot until the need is met.
    pub fn earliest_profile(&self, slots: usize) -> Vec<f64> {
        let mut remaining = self.rate_sum();
        (0..slots)
            .map(|_| {
                let u = remaining.clamp(0.0, 1.0);
                remaining -= u;
                u
            })
            .collect()
    }
}

/// Euclidean projection of `point` onto `{u ∈ [0,1]^K : Σ u = target}`.
///
/// The projection is `clip(point − μ, 0, 1)` for the unique shift `μ` that
/// meets the sum. `μ` is bracketed by bisection and then solved exactly on
/// the resulting set of free coordinates.
pub fn project_local(point: &[f64], target: f64) -> Result<Vec<f64>, ProjectionError> {
    const TOL: f64 = 1e-12;
    let k = point.len();
    if !target.is_finite() || point.iter().any(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite);
    }
    let scale = 1e-12 * (k as f64).max(1.0);
    if target < -scale || target > k as f64 + scale {
        return Err(ProjectionError::Infeasible { target, slots: k });
    }
    let target = target.clamp(0.0, k as f64);
    if target == 0.0 {
        return Ok(vec![0.0; k]);
    }
    if target == k as f64 {
        return Ok(vec![1.0; k]);
    }

    let clipped = |mu: f64| -> Vec<f64> { point.iter().map(|a| (a - mu).clamp(0.0, 1.0)).collect() };
    let residual = |u: &[f64]| u.iter().sum::<f64>() - target;

    let (mut lo, mut hi) = point
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    lo -= 1.0;
    let mut best = clipped(0.5 * (lo + hi));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let u = clipped(mid);
        let r = residual(&u);
        if r.abs() <= TOL {
            return Ok(u);
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        best = u;
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
    }

    // Exact shift on the free set identified by the bracket.
    let mid = 0.5 * (lo + hi);
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut ones = 0usize;
    for &a in point {
        let v = a - mid;
        if v >= 1.0 {
            ones += 1;
        } else if v > 0.0 {
            free += 1;
            free_sum += a;
        }
    }
    if free > 0 {
        let mu = (free_sum - (target - ones as f64)) / free as f64;
        let refined = clipped(mu);
        if residual(&refined).abs() < residual(&best).abs() {
            best = refined;
        }
    }
    Ok(best)
}

/// Normalized charging rates, one row of `K` slots per EV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingProfiles {
    ev_count: usize,
    slots: usize,
    data: Vec<f64>,
}

impl ChargingProfiles {
    pub fn zeros(ev_count: usize, slots: usize) -> Self {
        Self { ev_count, slots, data: vec![0.0; ev_count * slots] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, slots: usize) -> Self {
        assert!(rows.iter().all(|r| r.len() == slots), "ragged profile rows");
        Self { ev_count: rows.len(), slots, data: rows.into_iter().flatten().collect() }
    }

    pub fn ev_count(&self) -> usize {
        self.ev_count
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn row(&self, ev: usize) -> &[f64] {
        &self.data[ev * self.slots..(ev + 1) * self.slots]
    }

    pub fn row_mut(&mut self, ev: usize) -> &mut [f64] {
        &mut self.data[ev * self.slots..(ev + 1) * self.slots]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.slots.max(1)).take(self.ev_count)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Flat Euclidean distance over all `v·K` entries.
    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Aggregate EV load per slot, `Σ_i P_i u_i(t)`, in the units of `p_max`.
pub fn aggregate_load(profiles: &ChargingProfiles, p_max: &[f64]) -> Vec<f64> {
    let mut load = vec![0.0; profiles.slots()];
    for (row, &p) in profiles.rows().zip(p_max) {
        for (l, u) in load.iter_mut().zip(row) {
            *l += p * u;
        }
    }
    load
}

/// Valley-filling objective `½‖P_b + P̃U‖²`.
///
/// `p_max` and `baseline` must share units; the result is in their square.
pub fn evaluate_objective(profiles: &ChargingProfiles, p_max: &[f64], baseline: &[f64]) -> f64 {
    let ev = aggregate_load(profiles, p_max);
    0.5 * baseline.iter().zip(&ev).map(|(b, e)| (b + e) * (b + e)).sum::<f64>()
}

/// A fleet attached to a feeder, with its `G` and `D` matrices.
#[derive(Debug, Clone)]
pub struct Fleet {
    evs: Vec<EvSpec>,
    node_count: usize,
    d_matrix: DMatrix<f64>,
}

impl Fleet {
    pub fn evs(&self) -> &[EvSpec] {
        &self.evs
    }

    pub fn len(&self) -> usize {
        self.evs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evs.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// `G`: `n × v`, one 1 per column at the EV's node.
    pub fn aggregation_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.node_count, self.evs.len());
        for (i, ev) in self.evs.iter().enumerate() {
            g[(ev.node - 1, i)] = 1.0;
        }
        g
    }

    /// `D = 2 R G P̄` with `P̄` in watts: V² drop per unit charging rate.
    pub fn d_matrix(&self) -> &DMatrix<f64> {
        &self.d_matrix
    }

    /// `D` restricted to the rows of `subset` (1-based nodes, in order).
    pub fn reduced_d(&self, subset: &[usize]) -> DMatrix<f64> {
        let rows: Vec<usize> = subset.iter().map(|&j| j - 1).collect();
        self.d_matrix.select_rows(&rows)
    }

    /// Maximum power of every EV in watts.
    pub fn p_max_w(&self) -> Vec<f64> {
        self.evs.iter().map(|e| e.p_max_kw * W_PER_KW).collect()
    }

    /// Nodes hosting at least one EV, ascending.
    pub fn ev_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self.evs.iter().map(|e| e.node).collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Group index of every EV under `plan`.
    pub fn group_membership(&self, plan: &ReductionPlan) -> Result<Vec<usize>, FleetError> {
        self.evs
            .iter()
            .enumerate()
            .map(|(ev, spec)| {
                plan.group_of_node(spec.node)
                    .ok_or(FleetError::Ungrouped { ev, node: spec.node })
            })
            .collect()
    }

    /// Feasible starting profiles: the projection of zero for every EV.
    pub fn initial_profiles(&self, slots: usize) -> Result<ChargingProfiles, FleetError> {
        let zero = vec![0.0; slots];
        let rows = self.evs.iter().map(|e| e.project(&zero)).collect::<Result<Vec<_>, _>>()?;
        Ok(ChargingProfiles::from_rows(rows, slots))
    }

    /// Uncontrolled earliest-charging profiles.
    pub fn earliest_profiles(&self, slots: usize) -> ChargingProfiles {
        ChargingProfiles::from_rows(self.evs.iter().map(|e| e.earliest_profile(slots)).collect(), slots)
    }
}

/// Attaches `evs` to `feeder` and builds `D = 2 R G P̄`.
pub fn build_aggregation(feeder: &FeederModel, evs: Vec<EvSpec>) -> Result<Fleet, FleetError> {
    let n = feeder.node_count();
    for (ev, spec) in evs.iter().enumerate() {
        if spec.node == 0 || spec.node > n {
            return Err(FleetError::UnknownNode { ev, node: spec.node, max: n });
        }
    }
    let r = feeder.r_matrix();
    let mut d = DMatrix::zeros(n, evs.len());
    for (i, spec) in evs.iter().enumerate() {
        let scale = 2.0 * spec.p_max_kw * W_PER_KW;
        for j in 0..n {
            d[(j, i)] = scale * r[(j, spec.node - 1)];
        }
    }
    Ok(Fleet { evs, node_count: n, d_matrix: d })
}

/// Checks every EV spec against a horizon of `slots` slots.
pub fn validate_fleet(evs: &[EvSpec], slots: usize) -> Result<(), FleetError> {
    for (ev, spec) in evs.iter().enumerate() {
        spec.validate(slots).map_err(|reason| FleetError::InvalidSpec { ev, reason })?;
    }
    Ok(())
}
