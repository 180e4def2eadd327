//! Shrunken primal multi-dual subgradient iteration and the full-dimension
//! single-dual baseline.
//!
//! One round follows the operator/EV protocol:
//!
//! 1. the operator computes the group weights `ω_s` from the current
//!    profiles and broadcasts the weighted dual `λ_e = Σ_s ω_s ⊙ λ_s`;
//! 2. every EV takes a shrunken projected step on its own profile using only
//!    its reduced `D` rows and `λ_e` (no EV-to-EV traffic);
//! 3. the operator takes a shrunken projected ascent step on every `λ_s`.
//!
//! Horizon vectors are time-major. A group's dual and weight vectors have
//! `(n − d)·K` entries ordered by slot, then by the group's voltage subset.
//! `λ_e` is kept node-indexed (`n·K`); each EV reads only the rows of its
//! group's subset, which is the `(n − d)·K` slice the operator sends it.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{OpCounters, PhaseCounts};
use crate::feeder::{FeederModel, HorizonLoad, W_PER_KW};
use crate::fleet::{self, ChargingProfiles, EvSpec, Fleet, FleetError, ProjectionError};
use crate::reduction::{validate_plan, PlanViolation, ReductionPlan};

/// Objective values are reported in kW².
const OBJECTIVE_SCALE: f64 = 1.0 / (W_PER_KW * W_PER_KW);

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("reduction plan is invalid: {}", join(.0))]
    Plan(Vec<PlanViolation>),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error("EV {ev}: {source}")]
    Projection { ev: usize, source: ProjectionError },
}

fn join(violations: &[PlanViolation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Order of the dual step relative to the primal step within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualOrder {
    /// Dual gradients use the profiles from the start of the round.
    #[default]
    Jacobi,
    /// Dual gradients use the freshly uploaded profiles.
    GaussSeidel,
}

/// Which EVs' drop enters a group's dual gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualDrop {
    /// `ω_s ⊙ Y_{b,s} + Σ_{i ∈ s} D_{d,i} U_i`: the group's own EVs. Since
    /// the own drop is `ω_s` times the total, this is `ω_s` times the
    /// constraint residual on the subset rows.
    #[default]
    Group,
    /// `ω_s ⊙ Y_{b,s} + Σ_{i=1}^{v} D_{d,i} U_i`: every EV. Stricter than the
    /// constraint wherever `ω_s < 1`.
    All,
}

/// Per-iteration scaling of the step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSchedule {
    #[default]
    Constant,
    /// `step / sqrt(ℓ + 1)`.
    InverseSqrt,
}

impl StepSchedule {
    pub fn factor(self, iteration: usize) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::InverseSqrt => 1.0 / ((iteration + 1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Primal step size `α`.
    pub alpha: f64,
    /// Dual step sizes `β_s`; a single value applies to every group.
    pub beta: Vec<f64>,
    /// Primal shrinking parameter `τ_U`.
    pub tau_u: f64,
    /// Dual shrinking parameters `τ_λs`; a single value applies to every group.
    pub tau_lambda: Vec<f64>,
    /// Convergence tolerance on `‖U^(ℓ+1) − U^(ℓ)‖₂`.
    pub epsilon0: f64,
    pub max_iter: usize,
    /// Upper bound of the dual box `[0, dual_cap]`.
    pub dual_cap: f64,
    #[serde(default)]
    pub dual_order: DualOrder,
    #[serde(default)]
    pub dual_drop: DualDrop,
    #[serde(default)]
    pub schedule: StepSchedule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 2.8e-10,
            beta: vec![1.8],
            tau_u: 0.98,
            tau_lambda: vec![0.98],
            epsilon0: 1e-3,
            max_iter: 20,
            dual_cap: 1e6,
            dual_order: DualOrder::Jacobi,
            dual_drop: DualDrop::Group,
            schedule: StepSchedule::Constant,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, groups: usize) -> Result<(), SolverError> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            problems.push(format!("alpha must be positive, got {}", self.alpha));
        }
        for (name, values) in [("beta", &self.beta), ("tau_lambda", &self.tau_lambda)] {
            if values.len() != 1 && values.len() != groups {
                problems.push(format!("{name} needs 1 or {groups} values, got {}", values.len()));
            }
        }
        if self.beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            problems.push("every beta must be positive".into());
        }
        // A zero shrink factor makes 1/τ undefined.
        if !(self.tau_u > 0.0 && self.tau_u <= 1.0) {
            problems.push(format!("tau_u {} outside (0, 1]", self.tau_u));
        }
        if self.tau_lambda.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            problems.push("every tau_lambda must lie in (0, 1]".into());
        }
        if !(self.epsilon0 > 0.0) {
            problems.push(format!("epsilon0 must be positive, got {}", self.epsilon0));
        }
        if self.max_iter == 0 {
            problems.push("max_iter must be at least 1".into());
        }
        if !(self.dual_cap >= 0.0) {
            problems.push(format!("dual_cap must be nonnegative, got {}", self.dual_cap));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SolverError::Config(problems.join("; ")))
        }
    }

    pub fn beta_for(&self, group: usize) -> f64 {
        self.beta.get(group).copied().unwrap_or(self.beta[0])
    }

    pub fn tau_lambda_for(&self, group: usize) -> f64 {
        self.tau_lambda.get(group).copied().unwrap_or(self.tau_lambda[0])
    }
}

/// Everything the iteration needs, in solver units (W, V²).
#[derive(Debug, Clone)]
pub struct ChargingProblem {
    node_count: usize,
    slots: usize,
    specs: Vec<EvSpec>,
    p_max: Vec<f64>,
    baseline: Vec<f64>,
    d: DMatrix<f64>,
    compensated: Vec<f64>,
    y_b: Vec<f64>,
    slack_sq: f64,
}

impl ChargingProblem {
    /// Assembles the problem for a feeder, fleet, horizon and voltage floor (p.u.).
    pub fn new(
        feeder: &FeederModel,
        fleet: &Fleet,
        loads: &HorizonLoad,
        voltage_floor: f64,
    ) -> Result<Self, SolverError> {
        if loads.node_count() != feeder.node_count() || fleet.node_count() != feeder.node_count() {
            return Err(SolverError::Dimension("feeder, fleet and horizon disagree on n".into()));
        }
        fleet::validate_fleet(fleet.evs(), loads.slots())?;
        Self::from_parts(
            fleet.evs().to_vec(),
            fleet.p_max_w(),
            loads.baseline_power_kw().iter().map(|p| p * W_PER_KW).collect(),
            fleet.d_matrix().clone(),
            loads.compensated(),
            loads.slack_voltage_sq(),
            voltage_floor,
        )
    }

    /// Assembles a problem from raw arrays.
    ///
    /// `p_max` and `baseline` share a power unit; `d` (`n × v`), `compensated`
    /// (`n·K`) and `slack_sq` share a voltage unit.
    pub fn from_parts(
        specs: Vec<EvSpec>,
        p_max: Vec<f64>,
        baseline: Vec<f64>,
        d: DMatrix<f64>,
        compensated: Vec<f64>,
        slack_sq: f64,
        voltage_floor: f64,
    ) -> Result<Self, SolverError> {
        let n = d.nrows();
        let slots = baseline.len();
        let v = specs.len();
        if p_max.len() != v || d.ncols() != v || compensated.len() != n * slots {
            return Err(SolverError::Dimension(format!(
                "v = {v}, n = {n}, K = {slots}: p_max {}, D {}x{}, V_c {}",
                p_max.len(),
                d.nrows(),
                d.ncols(),
                compensated.len()
            )));
        }
        if !(voltage_floor > 0.0 && voltage_floor < 1.0) {
            return Err(SolverError::Config(format!("voltage floor {voltage_floor} outside (0, 1)")));
        }
        let floor_sq = voltage_floor * voltage_floor * slack_sq;
        let y_b = compensated.iter().map(|vc| floor_sq - vc).collect();
        Ok(Self { node_count: n, slots, specs, p_max, baseline, d, compensated, y_b, slack_sq })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn ev_count(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[EvSpec] {
        &self.specs
    }

    pub fn p_max(&self) -> &[f64] {
        &self.p_max
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn d_matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// `Y_b = v̲² V0 − V_c`, time-major `n·K`.
    pub fn y_b(&self) -> &[f64] {
        &self.y_b
    }

    pub fn slack_voltage_sq(&self) -> f64 {
        self.slack_sq
    }

    /// Relaxed Lagrangian `F(U) + λᵀ(Y_b + Σ_i D_i U_i)` for a full `n·K` dual.
    pub fn lagrangian(&self, profiles: &ChargingProfiles, lambda: &[f64]) -> f64 {
        let f = fleet::evaluate_objective(profiles, &self.p_max, &self.baseline);
        let drop = self.total_drop(profiles);
        f + lambda.iter().zip(self.y_b.iter().zip(&drop)).map(|(l, (y, t))| l * (y + t)).sum::<f64>()
    }

    /// `Σ_i D_i U_i` over all EVs, time-major `n·K`.
    pub fn total_drop(&self, profiles: &ChargingProfiles) -> Vec<f64> {
        accumulate_drop(&self.d, profiles, 0..self.ev_count(), self.slots)
    }

    /// Voltages in p.u. for the given profiles, time-major `n·K`.
    pub fn voltages_pu(&self, profiles: &ChargingProfiles) -> Vec<f64> {
        let drop = self.total_drop(profiles);
        self.voltages_pu_from_drop(&drop)
    }

    fn voltages_pu_from_drop(&self, drop: &[f64]) -> Vec<f64> {
        self.compensated
            .iter()
            .zip(drop)
            .map(|(vc, t)| ((vc - t).max(0.0) / self.slack_sq).sqrt())
            .collect()
    }

    /// Objective in kW² (assuming watts in the problem).
    pub fn objective(&self, profiles: &ChargingProfiles) -> f64 {
        fleet::evaluate_objective(profiles, &self.p_max, &self.baseline) * OBJECTIVE_SCALE
    }

    fn initial_profiles(&self) -> Result<ChargingProfiles, SolverError> {
        let zero = vec![0.0; self.slots];
        let rows = self
            .specs
            .iter()
            .enumerate()
            .map(|(ev, s)| s.project(&zero).map_err(|source| SolverError::Projection { ev, source }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ChargingProfiles::from_rows(rows, self.slots))
    }
}

/// `Σ_{i ∈ evs} D_i U_i` on all rows, time-major `n·K`.
fn accumulate_drop(
    d: &DMatrix<f64>,
    profiles: &ChargingProfiles,
    evs: impl IntoIterator<Item = usize>,
    slots: usize,
) -> Vec<f64> {
    let n = d.nrows();
    let mut out = vec![0.0; n * slots];
    for i in evs {
        let column = d.column(i);
        for (t, &u) in profiles.row(i).iter().enumerate() {
            for (slot, dj) in out[t * n..(t + 1) * n].iter_mut().zip(column.iter()) {
                *slot += dj * u;
            }
        }
    }
    out
}

/// `Π_U((1/τ) Π_U(τ U − α ∇))` for one EV.
pub fn shrunken_project_primal(
    profile: &[f64],
    gradient: &[f64],
    alpha: f64,
    tau: f64,
    spec: &EvSpec,
) -> Result<Vec<f64>, ProjectionError> {
    let inner: Vec<f64> = profile.iter().zip(gradient).map(|(u, g)| tau * u - alpha * g).collect();
    let inner = spec.project(&inner)?;
    let expanded: Vec<f64> = inner.iter().map(|u| u / tau).collect();
    spec.project(&expanded)
}

/// `Π_D((1/τ) Π_D(τ λ + β ∇))` with `D = [0, cap]`.
pub fn shrunken_project_dual(lambda: &[f64], gradient: &[f64], beta: f64, tau: f64, cap: f64) -> Vec<f64> {
    lambda
        .iter()
        .zip(gradient)
        .map(|(l, g)| {
            let inner = (tau * l + beta * g).clamp(0.0, cap);
            (inner / tau).clamp(0.0, cap)
        })
        .collect()
}

/// `(ε, ε < ε₀)` with `ε` the flat 2-norm of the profile change.
pub fn check_convergence(new: &ChargingProfiles, old: &ChargingProfiles, epsilon0: f64) -> (f64, bool) {
    let eps = new.distance(old);
    (eps, eps < epsilon0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    Diverged,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Converged => "converged",
            Self::MaxIterations => "max-iterations",
            Self::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Spmds,
    Spds,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Spmds => "spmds",
            Self::Spds => "spds",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub epsilon: f64,
    /// Objective in kW².
    pub objective: f64,
    pub min_voltage_pu: f64,
}

/// Outcome of a solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algorithm: Algorithm,
    pub termination: Termination,
    pub iterations: usize,
    pub node_count: usize,
    pub slots: usize,
    pub objective: f64,
    pub trace: Vec<TraceRow>,
    pub profiles: ChargingProfiles,
    pub baseline_kw: Vec<f64>,
    pub ev_load_kw: Vec<f64>,
    /// Final voltages in p.u., time-major `n·K`.
    pub voltages_pu: Vec<f64>,
    /// Voltages under baseline load only, p.u., time-major `n·K`.
    pub baseline_voltages_pu: Vec<f64>,
    pub counters: OpCounters,
}

impl RunReport {
    pub fn min_voltage_pu(&self) -> f64 {
        self.voltages_pu.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn total_load_kw(&self) -> Vec<f64> {
        self.baseline_kw.iter().zip(&self.ev_load_kw).map(|(b, e)| b + e).collect()
    }
}

/// Group structure resolved against a fleet: 0-based rows and EV indices.
#[derive(Debug, Clone)]
struct GroupLayout {
    rows: Vec<Vec<usize>>,
    members: Vec<Vec<usize>>,
    membership: Vec<usize>,
}

impl GroupLayout {
    fn new(plan: &ReductionPlan, problem: &ChargingProblem) -> Result<Self, SolverError> {
        let ev_nodes: Vec<usize> = problem.specs.iter().map(|s| s.node).collect();
        validate_plan(plan, problem.node_count, &ev_nodes).map_err(SolverError::Plan)?;
        let rows = plan.groups.iter().map(|g| g.subset.iter().map(|j| j - 1).collect()).collect();
        let mut members = vec![Vec::new(); plan.groups.len()];
        let mut membership = Vec::with_capacity(ev_nodes.len());
        for (i, &node) in ev_nodes.iter().enumerate() {
            let g = plan
                .group_of_node(node)
                .ok_or(FleetError::Ungrouped { ev: i, node })?;
            members[g].push(i);
            membership.push(g);
        }
        Ok(Self { rows, members, membership })
    }

    fn subset_len(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Iterate of the multi-dual scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub profiles: ChargingProfiles,
    /// One dual vector per group, `(n − d)·K`.
    pub lambda: Vec<Vec<f64>>,
    /// Weighted dual of the last round, node-indexed `n·K`.
    pub lambda_e: Vec<f64>,
    /// Group weights of the last round, `(n − d)·K` each.
    pub omega: Vec<Vec<f64>>,
    pub iteration: usize,
    pub last_epsilon: f64,
    pub trace: Vec<TraceRow>,
}

/// The shrunken primal multi-dual subgradient solver.
pub struct Spmds<'a> {
    problem: &'a ChargingProblem,
    layout: GroupLayout,
    config: SolverConfig,
    state: SolverState,
    counters: OpCounters,
    termination: Option<Termination>,
}

impl<'a> Spmds<'a> {
    pub fn new(problem: &'a ChargingProblem, plan: &ReductionPlan, config: SolverConfig) -> Result<Self, SolverError> {
        let layout = GroupLayout::new(plan, problem)?;
        config.validate(layout.rows.len())?;
        let m = layout.subset_len() * problem.slots;
        let r = layout.rows.len();
        let state = SolverState {
            profiles: problem.initial_profiles()?,
            lambda: vec![vec![0.0; m]; r],
            lambda_e: vec![0.0; problem.node_count * problem.slots],
            omega: vec![vec![1.0; m]; r],
            iteration: 0,
            last_epsilon: f64::INFINITY,
            trace: Vec::new(),
        };
        Ok(Self { problem, layout, config, state, counters: OpCounters::default(), termination: None })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Replaces the starting profiles (they must be feasible).
    pub fn set_profiles(&mut self, profiles: ChargingProfiles) {
        self.state.profiles = profiles;
    }

    pub fn set_lambda(&mut self, lambda: Vec<Vec<f64>>) {
        self.state.lambda = lambda;
    }

    /// Per-group drop contributions (`n·K`, own members only) and their total.
    fn drops(&self, profiles: &ChargingProfiles) -> (Vec<Vec<f64>>, Vec<f64>) {
        let own: Vec<Vec<f64>> = self
            .layout
            .members
            .iter()
            .map(|m| accumulate_drop(&self.problem.d, profiles, m.iter().copied(), self.problem.slots))
            .collect();
        let mut total = own[0].clone();
        for g in &own[1..] {
            for (t, v) in total.iter_mut().zip(g) {
                *t += v;
            }
        }
        (own, total)
    }

    /// `ω_s`: share of group `s` in the total drop on its subset rows, 1 where
    /// nothing is charging.
    pub fn omega_weights(&self, profiles: &ChargingProfiles) -> Vec<Vec<f64>> {
        let (own, total) = self.drops(profiles);
        self.omega_from(&own, &total)
    }

    fn omega_from(&self, own: &[Vec<f64>], total: &[f64]) -> Vec<Vec<f64>> {
        let n = self.problem.node_count;
        self.layout
            .rows
            .iter()
            .zip(own)
            .map(|(rows, own)| {
                (0..self.problem.slots)
                    .flat_map(|t| rows.iter().map(move |&j| t * n + j))
                    .map(|idx| if total[idx] == 0.0 { 1.0 } else { own[idx] / total[idx] })
                    .collect()
            })
            .collect()
    }

    /// `λ_e = Σ_s ω_s ⊙ λ_s`, scattered onto node rows.
    pub fn weighted_dual(&self, omega: &[Vec<f64>], lambda: &[Vec<f64>]) -> Vec<f64> {
        let n = self.problem.node_count;
        let mut out = vec![0.0; n * self.problem.slots];
        for ((rows, w), l) in self.layout.rows.iter().zip(omega).zip(lambda) {
            let m = rows.len();
            for t in 0..self.problem.slots {
                for (pos, &j) in rows.iter().enumerate() {
                    out[t * n + j] += w[t * m + pos] * l[t * m + pos];
                }
            }
        }
        out
    }

    /// Reduced primal gradient of EV `i`:
    /// `P_i (P_b + Σ_j P_j u_j) + D_{d,i}ᵀ λ_e`.
    pub fn primal_gradient_reduced(&self, ev: usize, total_load: &[f64], lambda_e: &[f64]) -> Vec<f64> {
        let problem = self.problem;
        let n = problem.node_count;
        let p = problem.p_max[ev];
        let rows = &self.layout.rows[self.layout.membership[ev]];
        let column = problem.d.column(ev);
        (0..problem.slots)
            .map(|t| {
                let mut g = p * (problem.baseline[t] + total_load[t]);
                for &j in rows {
                    g += column[j] * lambda_e[t * n + j];
                }
                g
            })
            .collect()
    }

    /// Reduced dual gradient of group `s`: `ω_s ⊙ Y_{b,s} + drop` on the
    /// group's subset rows. `drop` is node-indexed `n·K`, either the total or
    /// the group's own contribution (see [`DualDrop`]).
    pub fn dual_gradient_reduced(&self, group: usize, omega: &[f64], drop: &[f64]) -> Vec<f64> {
        let n = self.problem.node_count;
        let rows = &self.layout.rows[group];
        let m = rows.len();
        let mut out = vec![0.0; m * self.problem.slots];
        for t in 0..self.problem.slots {
            for (pos, &j) in rows.iter().enumerate() {
                let idx = t * n + j;
                out[t * m + pos] = omega[t * m + pos] * self.problem.y_b[idx] + drop[idx];
            }
        }
        out
    }

    fn primal_step(&self, lambda_e: &[f64], alpha: f64) -> Result<ChargingProfiles, SolverError> {
        let problem = self.problem;
        let profiles = &self.state.profiles;
        let ev_load = fleet::aggregate_load(profiles, &problem.p_max);
        let rows = (0..problem.ev_count())
            .into_par_iter()
            .map(|i| {
                let grad = self.primal_gradient_reduced(i, &ev_load, lambda_e);
                shrunken_project_primal(profiles.row(i), &grad, alpha, self.config.tau_u, &problem.specs[i])
                    .map_err(|source| SolverError::Projection { ev: i, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ChargingProfiles::from_rows(rows, problem.slots))
    }

    /// Runs one round and returns `ε`.
    pub fn step(&mut self) -> Result<f64, SolverError> {
        let factor = self.config.schedule.factor(self.state.iteration);
        let (own, total) = self.drops(&self.state.profiles);
        let omega = self.omega_from(&own, &total);
        let lambda_e = self.weighted_dual(&omega, &self.state.lambda);

        let next = self.primal_step(&lambda_e, self.config.alpha * factor)?;

        let ((dual_own, dual_total), next_drop) = match self.config.dual_order {
            DualOrder::Jacobi => ((own, total), None),
            DualOrder::GaussSeidel => {
                let fresh = self.drops(&next);
                let next_total = fresh.1.clone();
                (fresh, Some(next_total))
            }
        };
        let lambda = (0..self.layout.rows.len())
            .map(|s| {
                let drop = match self.config.dual_drop {
                    DualDrop::All => &dual_total,
                    DualDrop::Group => &dual_own[s],
                };
                let grad = self.dual_gradient_reduced(s, &omega[s], drop);
                shrunken_project_dual(
                    &self.state.lambda[s],
                    &grad,
                    self.config.beta_for(s) * factor,
                    self.config.tau_lambda_for(s),
                    self.config.dual_cap,
                )
            })
            .collect();

        let (eps, _) = check_convergence(&next, &self.state.profiles, self.config.epsilon0);
        let next_drop = next_drop.unwrap_or_else(|| self.problem.total_drop(&next));
        let min_voltage = self
            .problem
            .voltages_pu_from_drop(&next_drop)
            .into_iter()
            .fold(f64::INFINITY, f64::min);

        self.counters.record(self.round_counts());
        self.state.profiles = next;
        self.state.lambda = lambda;
        self.state.lambda_e = lambda_e;
        self.state.omega = omega;
        self.state.iteration += 1;
        self.state.last_epsilon = eps;
        self.state.trace.push(TraceRow {
            iteration: self.state.iteration,
            epsilon: eps,
            objective: self.problem.objective(&self.state.profiles),
            min_voltage_pu: min_voltage,
        });
        Ok(eps)
    }

    fn round_counts(&self) -> PhaseCounts {
        let k = self.problem.slots as u64;
        let m = self.layout.subset_len() as u64;
        let r = self.layout.rows.len() as u64;
        let v = self.problem.ev_count() as u64;
        let group_cost = |size: u64| (2 * size * k + 1) * m * k;
        let dual: Vec<u64> = match self.config.dual_drop {
            DualDrop::All => vec![group_cost(v); self.layout.members.len()],
            DualDrop::Group => self.layout.members.iter().map(|g| group_cost(g.len() as u64)).collect(),
        };
        let primal_per_ev = PhaseCounts::primal_per_ev(m, k);
        PhaseCounts {
            primal_per_ev,
            primal_total: primal_per_ev * v,
            dual_critical: dual.iter().copied().max().unwrap_or(0),
            dual_total: dual.iter().sum(),
            // ω divisions plus the weighted sum forming λ_e.
            reduction: r * m * k + (2 * r).saturating_sub(1) * m * k,
        }
    }

    /// Iterates until `ε < ε₀`, `ℓ = ℓ_max`, or divergence.
    pub fn run(mut self) -> Result<RunReport, SolverError> {
        let (max_iter, epsilon0) = (self.config.max_iter, self.config.epsilon0);
        let termination = drive(&mut self, max_iter, epsilon0)?;
        self.termination = Some(termination);
        Ok(self.report())
    }

    /// Snapshot of the current iterate as a report.
    pub fn report(&self) -> RunReport {
        build_report(
            self.problem,
            Algorithm::Spmds,
            self.termination.unwrap_or(Termination::MaxIterations),
            &self.state.profiles,
            &self.state.trace,
            self.counters.clone(),
        )
    }
}

trait Iterate {
    fn step(&mut self) -> Result<f64, SolverError>;
    fn trace(&self) -> &[TraceRow];
}

/// Shared outer loop; returns the termination reason.
fn drive(solver: &mut impl Iterate, max_iter: usize, epsilon0: f64) -> Result<Termination, SolverError> {
    loop {
        solver.step()?;
        let trace = solver.trace();
        let last = trace.last().expect("step pushes a trace row");
        let eps = last.epsilon;
        if !eps.is_finite() || !last.objective.is_finite() {
            return Ok(Termination::Diverged);
        }
        if trace.len() > DIVERGENCE_WINDOW {
            let earlier = trace[trace.len() - 1 - DIVERGENCE_WINDOW].epsilon;
            if eps > DIVERGENCE_GROWTH * earlier {
                return Ok(Termination::Diverged);
            }
        }
        if eps < epsilon0 {
            return Ok(Termination::Converged);
        }
        if trace.len() >= max_iter {
            return Ok(Termination::MaxIterations);
        }
    }
}

/// ε growing by more than this factor over the window flags divergence.
pub const DIVERGENCE_GROWTH: f64 = 10.0;
pub const DIVERGENCE_WINDOW: usize = 50;

fn build_report(
    problem: &ChargingProblem,
    algorithm: Algorithm,
    termination: Termination,
    profiles: &ChargingProfiles,
    trace: &[TraceRow],
    counters: OpCounters,
) -> RunReport {
    let p_kw: Vec<f64> = problem.p_max.iter().map(|p| p / W_PER_KW).collect();
    let zero = ChargingProfiles::zeros(problem.ev_count(), problem.slots);
    RunReport {
        algorithm,
        termination,
        iterations: trace.len(),
        node_count: problem.node_count,
        slots: problem.slots,
        objective: problem.objective(profiles),
        trace: trace.to_vec(),
        profiles: profiles.clone(),
        baseline_kw: problem.baseline.iter().map(|p| p / W_PER_KW).collect(),
        ev_load_kw: fleet::aggregate_load(profiles, &p_kw),
        voltages_pu: problem.voltages_pu(profiles),
        baseline_voltages_pu: problem.voltages_pu(&zero),
        counters,
    }
}

impl Iterate for Spmds<'_> {
    fn step(&mut self) -> Result<f64, SolverError> {
        Spmds::step(self)
    }

    fn trace(&self) -> &[TraceRow] {
        &self.state.trace
    }
}

impl Iterate for Spds<'_> {
    fn step(&mut self) -> Result<f64, SolverError> {
        Spds::step(self)
    }

    fn trace(&self) -> &[TraceRow] {
        &self.trace
    }
}

/// Full-dimension single-dual baseline.
pub struct Spds<'a> {
    problem: &'a ChargingProblem,
    config: SolverConfig,
    profiles: ChargingProfiles,
    lambda: Vec<f64>,
    trace: Vec<TraceRow>,
    counters: OpCounters,
    termination: Option<Termination>,
}

impl<'a> Spds<'a> {
    pub fn new(problem: &'a ChargingProblem, config: SolverConfig) -> Result<Self, SolverError> {
        config.validate(1)?;
        Ok(Self {
            problem,
            profiles: problem.initial_profiles()?,
            lambda: vec![0.0; problem.node_count * problem.slots],
            config,
            trace: Vec::new(),
            counters: OpCounters::default(),
            termination: None,
        })
    }

    pub fn profiles(&self) -> &ChargingProfiles {
        &self.profiles
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn set_profiles(&mut self, profiles: ChargingProfiles) {
        self.profiles = profiles;
    }

    pub fn set_lambda(&mut self, lambda: Vec<f64>) {
        self.lambda = lambda;
    }

    /// Full primal gradient `P_i (P_b + Σ_j P_j u_j) + D_iᵀ λ`.
    pub fn primal_gradient(&self, ev: usize, total_load: &[f64], lambda: &[f64]) -> Vec<f64> {
        let problem = self.problem;
        let n = problem.node_count;
        let p = problem.p_max[ev];
        let column = problem.d.column(ev);
        (0..problem.slots)
            .map(|t| {
                let mut g = p * (problem.baseline[t] + total_load[t]);
                for j in 0..n {
                    g += column[j] * lambda[t * n + j];
                }
                g
            })
            .collect()
    }

    /// Full dual gradient `Y_b + Σ_i D_i U_i`.
    pub fn dual_gradient(&self, total_drop: &[f64]) -> Vec<f64> {
        self.problem.y_b.iter().zip(total_drop).map(|(y, t)| y + t).collect()
    }

    pub fn step(&mut self) -> Result<f64, SolverError> {
        let problem = self.problem;
        let factor = self.config.schedule.factor(self.trace.len());
        let alpha = self.config.alpha * factor;
        let ev_load = fleet::aggregate_load(&self.profiles, &problem.p_max);
        let drop = problem.total_drop(&self.profiles);
        let rows = (0..problem.ev_count())
            .into_par_iter()
            .map(|i| {
                let grad = self.primal_gradient(i, &ev_load, &self.lambda);
                shrunken_project_primal(self.profiles.row(i), &grad, alpha, self.config.tau_u, &problem.specs[i])
                    .map_err(|source| SolverError::Projection { ev: i, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let next = ChargingProfiles::from_rows(rows, problem.slots);
        let next_drop = problem.total_drop(&next);
        let dual_drop = match self.config.dual_order {
            DualOrder::Jacobi => &drop,
            DualOrder::GaussSeidel => &next_drop,
        };
        let grad = self.dual_gradient(dual_drop);
        let lambda = shrunken_project_dual(
            &self.lambda,
            &grad,
            self.config.beta_for(0) * factor,
            self.config.tau_lambda_for(0),
            self.config.dual_cap,
        );
        let (eps, _) = check_convergence(&next, &self.profiles, self.config.epsilon0);
        let min_voltage = problem.voltages_pu_from_drop(&next_drop).into_iter().fold(f64::INFINITY, f64::min);

        let n = problem.node_count as u64;
        let k = problem.slots as u64;
        let v = problem.ev_count() as u64;
        let primal_per_ev = PhaseCounts::primal_per_ev(n, k);
        self.counters.record(PhaseCounts {
            primal_per_ev,
            primal_total: primal_per_ev * v,
            dual_critical: 2 * v * n * k * k,
            dual_total: 2 * v * n * k * k,
            reduction: 0,
        });
        self.profiles = next;
        self.lambda = lambda;
        self.trace.push(TraceRow {
            iteration: self.trace.len() + 1,
            epsilon: eps,
            objective: problem.objective(&self.profiles),
            min_voltage_pu: min_voltage,
        });
        Ok(eps)
    }

    pub fn run(mut self) -> Result<RunReport, SolverError> {
        let (max_iter, epsilon0) = (self.config.max_iter, self.config.epsilon0);
        let termination = drive(&mut self, max_iter, epsilon0)?;
        self.termination = Some(termination);
        Ok(self.report())
    }

    pub fn report(&self) -> RunReport {
        build_report(
            self.problem,
            Algorithm::Spds,
            self.termination.unwrap_or(Termination::MaxIterations),
            &self.profiles,
            &self.trace,
            self.counters.clone(),
        )
    }
}

/// Runs the multi-dual solver under `plan`.
pub fn spmds_run(
    problem: &ChargingProblem,
    plan: &ReductionPlan,
    config: SolverConfig,
) -> Result<RunReport, SolverError> {
    Spmds::new(problem, plan, config)?.run()
}

/// Runs the full-dimension baseline.
pub fn spds_run(problem: &ChargingProblem, config: SolverConfig) -> Result<RunReport, SolverError> {
    Spds::new(problem, config)?.run()
}
