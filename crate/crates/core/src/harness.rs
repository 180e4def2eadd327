//! Scenario files, end-to-end runs and result artifacts.
//!
//! A scenario is a TOML document naming a feeder file, a baseline load CSV,
//! the fleet recipe, the EV grouping and the solver settings. Relative paths
//! resolve against the scenario file's directory.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{FlopsReport, MeasuredSavings};
use crate::feeder::{FeederError, FeederModel, HorizonLoad};
use crate::fleet::{self, EvSpec, Fleet};
use crate::reduction::{self, EvGroup, ReductionPlan};
use crate::solver::{self, Algorithm, ChargingProblem, DualDrop, DualOrder, RunReport, SolverConfig, SolverError, Termination};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("horizon mismatch: {0} slots against {1}")]
    HorizonMismatch(usize, usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl HarnessError {
    /// Process exit code: 1 validation, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } => 3,
            _ => 1,
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    /// Wall-clock label of slot 0, `HH:MM`.
    #[serde(default = "default_start")]
    pub start: String,
    pub slots: usize,
    pub slot_hours: f64,
    /// Declared window length; must equal `slots · slot_hours`.
    pub window_hours: f64,
    /// Spread of the total load is measured from this label on.
    #[serde(default)]
    pub spread_from: Option<String>,
}

fn default_start() -> String {
    "19:00".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    pub p_max_kw: f64,
    pub efficiency: f64,
    /// Bounds of the uniformly drawn SOC still to be charged.
    pub soc_need_min: f64,
    pub soc_need_max: f64,
    pub battery_kwh: f64,
    pub seed: u64,
    /// EVs per node (length `n`); defaults to the feeder's `evs` entries.
    #[serde(default)]
    pub evs_per_node: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupingMode {
    /// Groups listed in the scenario.
    Manual,
    /// Groups proposed from the reduced matrices.
    Auto,
    /// One group watching every node.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    /// Member nodes as ranges, e.g. `"1-3"` or `"1-3,5"`.
    pub members: String,
    /// Voltage subset as ranges.
    pub subset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingConfig {
    pub mode: GroupingMode,
    #[serde(default)]
    pub reduction: usize,
    /// Number of groups for `auto`.
    #[serde(default)]
    pub groups: Option<usize>,
    #[serde(default, rename = "group")]
    pub manual: Vec<GroupSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub feeder: PathBuf,
    pub baseline: PathBuf,
    #[serde(default = "default_floor")]
    pub voltage_floor: f64,
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    pub horizon: HorizonConfig,
    pub fleet: FleetConfig,
    pub grouping: GroupingConfig,
    pub solver: SolverConfig,
    /// Directory used to resolve relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_floor() -> f64 {
    0.954
}

fn default_power_factor() -> f64 {
    0.95
}

fn default_algorithm() -> Algorithm {
    Algorithm::Spmds
}

/// Command-line overrides; `None` keeps the scenario value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub tau_u: Option<f64>,
    pub tau_lambda: Option<f64>,
    pub epsilon0: Option<f64>,
    pub max_iter: Option<usize>,
    pub dual_cap: Option<f64>,
    pub dual_order: Option<DualOrder>,
    pub dual_drop: Option<DualDrop>,
    pub voltage_floor: Option<f64>,
    pub algorithm: Option<Algorithm>,
    pub grouping: Option<GroupingMode>,
    pub reduction: Option<usize>,
    pub groups: Option<usize>,
}

impl ScenarioConfig {
    pub fn from_toml_str(source: &str, base_dir: impl Into<PathBuf>) -> Result<Self, String> {
        let mut config: Self = toml::from_str(source).map_err(|e| e.to_string())?;
        config.base_dir = base_dir.into();
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let source = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&source, base).map_err(|message| HarnessError::Parse { path: path.to_path_buf(), message })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.fleet.seed = v;
        }
        if let Some(v) = o.alpha {
            self.solver.alpha = v;
        }
        if let Some(v) = o.beta {
            self.solver.beta = vec![v];
        }
        if let Some(v) = o.tau_u {
            self.solver.tau_u = v;
        }
        if let Some(v) = o.tau_lambda {
            self.solver.tau_lambda = vec![v];
        }
        if let Some(v) = o.epsilon0 {
            self.solver.epsilon0 = v;
        }
        if let Some(v) = o.max_iter {
            self.solver.max_iter = v;
        }
        if let Some(v) = o.dual_cap {
            self.solver.dual_cap = v;
        }
        if let Some(v) = o.dual_order {
            self.solver.dual_order = v;
        }
        if let Some(v) = o.dual_drop {
            self.solver.dual_drop = v;
        }
        if let Some(v) = o.voltage_floor {
            self.voltage_floor = v;
        }
        if let Some(v) = o.algorithm {
            self.algorithm = v;
            // The baseline has a single full-dimension dual.
            if v == Algorithm::Spds && o.grouping.is_none() {
                self.grouping.mode = GroupingMode::Full;
                self.grouping.reduction = 0;
            }
        }
        if let Some(v) = o.grouping {
            self.grouping.mode = v;
        }
        if let Some(v) = o.reduction {
            self.grouping.reduction = v;
        }
        if let Some(v) = o.groups {
            self.grouping.groups = Some(v);
        }
    }

    pub fn feeder_path(&self) -> PathBuf {
        self.base_dir.join(&self.feeder)
    }

    pub fn baseline_path(&self) -> PathBuf {
        self.base_dir.join(&self.baseline)
    }

    /// Field checks that need no files; `node_count` enables the `d` bound.
    pub fn violations(&self, node_count: Option<usize>) -> Vec<String> {
        let mut out = Vec::new();
        let h = &self.horizon;
        if h.slots == 0 {
            out.push("horizon.slots must be at least 1".into());
        }
        if !(h.slot_hours > 0.0) {
            out.push(format!("horizon.slot_hours must be positive, got {}", h.slot_hours));
        }
        let span = h.slots as f64 * h.slot_hours;
        if (span - h.window_hours).abs() > 1e-9 * h.window_hours.abs().max(1.0) {
            out.push(format!(
                "horizon: slots * slot_hours = {span} h differs from window_hours = {} h",
                h.window_hours
            ));
        }
        if parse_clock(&h.start).is_none() {
            out.push(format!("horizon.start {:?} is not HH:MM", h.start));
        }
        if let Some(s) = &h.spread_from {
            if parse_clock(s).is_none() {
                out.push(format!("horizon.spread_from {s:?} is not HH:MM"));
            }
        }
        if !(self.voltage_floor > 0.0 && self.voltage_floor < 1.0) {
            out.push(format!("voltage_floor {} outside (0, 1)", self.voltage_floor));
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            out.push(format!("power_factor {} outside (0, 1]", self.power_factor));
        }

        let f = &self.fleet;
        if !(f.p_max_kw > 0.0 && f.p_max_kw.is_finite()) {
            out.push(format!("fleet.p_max_kw must be positive, got {}", f.p_max_kw));
        }
        if !(f.efficiency > 0.0 && f.efficiency <= 1.0) {
            out.push(format!("fleet.efficiency {} outside (0, 1]", f.efficiency));
        }
        if !(0.0 <= f.soc_need_min && f.soc_need_min <= f.soc_need_max && f.soc_need_max <= 1.0) {
            out.push(format!(
                "fleet SOC need bounds [{}, {}] must satisfy 0 <= min <= max <= 1",
                f.soc_need_min, f.soc_need_max
            ));
        }
        if !(f.battery_kwh > 0.0 && f.battery_kwh.is_finite()) {
            out.push(format!("fleet.battery_kwh must be positive, got {}", f.battery_kwh));
        }
        let deliverable = f.efficiency * f.p_max_kw * span;
        if f.soc_need_max * f.battery_kwh > deliverable * (1.0 + 1e-12) {
            out.push(format!(
                "fleet: largest need {} kWh exceeds the {deliverable} kWh deliverable over the horizon",
                f.soc_need_max * f.battery_kwh
            ));
        }
        if let (Some(counts), Some(n)) = (&f.evs_per_node, node_count) {
            if counts.len() != n {
                out.push(format!("fleet.evs_per_node has {} entries, expected {n}", counts.len()));
            }
        }

        let g = &self.grouping;
        let r = match g.mode {
            GroupingMode::Manual => {
                if g.manual.is_empty() {
                    out.push("grouping.mode = manual needs at least one [[grouping.group]]".into());
                }
                for (idx, spec) in g.manual.iter().enumerate() {
                    for (field, text) in [("members", &spec.members), ("subset", &spec.subset)] {
                        if let Err(e) = parse_ranges(text) {
                            out.push(format!("grouping.group[{}].{field}: {e}", idx + 1));
                        }
                    }
                }
                g.manual.len()
            }
            GroupingMode::Auto => match g.groups {
                Some(r) if r >= 1 => r,
                _ => {
                    out.push("grouping.mode = auto needs grouping.groups >= 1".into());
                    0
                }
            },
            GroupingMode::Full => {
                if g.reduction != 0 {
                    out.push(format!("grouping.mode = full needs reduction = 0, got {}", g.reduction));
                }
                1
            }
        };
        if let Some(n) = node_count {
            if r >= 1 && g.reduction * r > n * (r - 1) {
                out.push(format!(
                    "grouping.reduction = {} exceeds the bound n(1 - 1/r) = {} for n = {n}, r = {r}",
                    g.reduction,
                    reduction::reduction_bound(n, r)
                ));
            }
        }
        if self.algorithm == Algorithm::Spds && !(g.mode == GroupingMode::Full || r == 1 && g.reduction == 0) {
            out.push("algorithm = spds runs the full dimension; use grouping.mode = full".into());
        }
        let groups = if self.algorithm == Algorithm::Spds { 1 } else { r.max(1) };
        if let Err(e) = self.solver.validate(groups) {
            out.push(e.to_string());
        }
        out
    }
}

/// Parses `"1-3,5,7-9"` into a sorted node list.
pub fn parse_ranges(text: &str) -> Result<Vec<usize>, String> {
    let mut nodes = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (part, part),
        };
        let lo: usize = lo.parse().map_err(|_| format!("bad node {lo:?} in {text:?}"))?;
        let hi: usize = hi.parse().map_err(|_| format!("bad node {hi:?} in {text:?}"))?;
        if lo > hi {
            return Err(format!("descending range {part:?}"));
        }
        nodes.extend(lo..=hi);
    }
    if nodes.is_empty() {
        return Err(format!("empty node list {text:?}"));
    }
    nodes.sort_unstable();
    nodes.dedup();
    Ok(nodes)
}

fn parse_clock(text: &str) -> Option<u32> {
    let (h, m) = text.split_once(':')?;
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    (h < 24 && m < 60).then_some(h * 60 + m)
}

/// `HH:MM` label of slot `t`.
pub fn slot_label(start: &str, slot_hours: f64, t: usize) -> String {
    let start = parse_clock(start).unwrap_or(0) as f64;
    let minutes = (start + t as f64 * slot_hours * 60.0).round() as u64 % (24 * 60);
    format!("{:02}:{:02}", minutes / 60, minutes % 60)
}

/// Reads the feeder-level baseline load (kW) from the `baseline_kw` column.
pub fn load_baseline(path: &Path) -> Result<Vec<f64>, HarnessError> {
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let parse = |message: String| HarnessError::Parse { path: path.to_path_buf(), message };
    let headers = reader.headers().map_err(|e| parse(e.to_string()))?.clone();
    let column = headers
        .iter()
        .position(|h| h == "baseline_kw")
        .ok_or_else(|| parse("missing baseline_kw column".into()))?;
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse(e.to_string()))?;
        let value: f64 = record
            .get(column)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse(format!("row {}: baseline_kw is not a number", row + 1)))?;
        values.push(value);
    }
    Ok(values)
}

/// Everything assembled from a scenario, ready to solve.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub feeder: FeederModel,
    pub fleet: Fleet,
    pub loads: HorizonLoad,
    pub plan: ReductionPlan,
    pub problem: ChargingProblem,
}

/// Draws the fleet: EVs in node order, SOC needs from a seeded ChaCha stream.
pub fn draw_fleet(config: &ScenarioConfig, feeder: &FeederModel) -> Vec<EvSpec> {
    let f = &config.fleet;
    let counts: Vec<usize> = match &f.evs_per_node {
        Some(c) => c.clone(),
        None => feeder.node_data().iter().map(|d| d.ev_count).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(f.seed);
    let mut evs = Vec::new();
    for (idx, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let soc = if f.soc_need_max > f.soc_need_min {
                rng.gen_range(f.soc_need_min..f.soc_need_max)
            } else {
                f.soc_need_min
            };
            evs.push(EvSpec {
                node: idx + 1,
                p_max_kw: f.p_max_kw,
                efficiency: f.efficiency,
                energy_need_kwh: soc * f.battery_kwh,
                slot_hours: config.horizon.slot_hours,
            });
        }
    }
    evs
}

fn feeder_error(path: &Path, e: FeederError) -> HarnessError {
    match e {
        FeederError::Io(source) => HarnessError::io(path, source),
        other => HarnessError::Parse { path: path.to_path_buf(), message: other.to_string() },
    }
}

impl Scenario {
    /// Loads files, validates every field and builds the problem.
    pub fn assemble(config: ScenarioConfig) -> Result<Self, HarnessError> {
        let feeder_path = config.feeder_path();
        let feeder = FeederModel::load(&feeder_path).map_err(|e| feeder_error(&feeder_path, e))?;
        let n = feeder.node_count();
        let baseline_path = config.baseline_path();
        let baseline = load_baseline(&baseline_path)?;

        let mut problems = config.violations(Some(n));
        if baseline.len() != config.horizon.slots {
            problems.push(format!(
                "baseline {} has {} slots, horizon.slots = {}",
                baseline_path.display(),
                baseline.len(),
                config.horizon.slots
            ));
        }
        if !problems.is_empty() {
            return Err(HarnessError::Invalid(problems));
        }

        let evs = draw_fleet(&config, &feeder);
        let fleet = fleet::build_aggregation(&feeder, evs).map_err(|e| HarnessError::Invalid(vec![e.to_string()]))?;
        let plan = build_plan(&config, &feeder, &fleet)?;
        let loads = HorizonLoad::from_baseline(&feeder, &baseline, config.power_factor)
            .map_err(|e| HarnessError::Invalid(vec![e.to_string()]))?;
        let problem = ChargingProblem::new(&feeder, &fleet, &loads, config.voltage_floor)?;
        Ok(Self { config, feeder, fleet, loads, plan, problem })
    }

    /// FLOPS model for this plan; `v_m` is the largest group's EV count.
    pub fn flops(&self) -> FlopsReport {
        let n = self.feeder.node_count() as u64;
        let k = self.config.horizon.slots as u64;
        let v = self.fleet.len() as u64;
        let (d, v_m) = match self.config.algorithm {
            Algorithm::Spds => (0, v),
            Algorithm::Spmds => {
                let membership = self.fleet.group_membership(&self.plan).unwrap_or_default();
                let mut sizes = vec![0u64; self.plan.group_count()];
                for g in membership {
                    sizes[g] += 1;
                }
                (self.plan.reduction as u64, sizes.into_iter().max().unwrap_or(0))
            }
        };
        FlopsReport::new(n, d, k, v, v_m)
    }

    pub fn solve(&self) -> Result<RunReport, SolverError> {
        match self.config.algorithm {
            Algorithm::Spmds => solver::spmds_run(&self.problem, &self.plan, self.config.solver.clone()),
            Algorithm::Spds => solver::spds_run(&self.problem, self.config.solver.clone()),
        }
    }

    /// Total load (kW) under uncontrolled earliest charging.
    pub fn earliest_total_kw(&self) -> Vec<f64> {
        let slots = self.config.horizon.slots;
        let profiles = self.fleet.earliest_profiles(slots);
        let p: Vec<f64> = self.fleet.evs().iter().map(|e| e.p_max_kw).collect();
        let ev = fleet::aggregate_load(&profiles, &p);
        self.loads.baseline_power_kw().iter().zip(ev).map(|(b, e)| b + e).collect()
    }

    /// First slot of the spread window.
    pub fn spread_start(&self) -> usize {
        let h = &self.config.horizon;
        let Some(from) = h.spread_from.as_deref().and_then(parse_clock) else {
            return 0;
        };
        let start = parse_clock(&h.start).unwrap_or(0);
        let offset = (from + 24 * 60 - start) % (24 * 60);
        ((offset as f64 / (h.slot_hours * 60.0)).ceil() as usize).min(h.slots)
    }
}

fn build_plan(config: &ScenarioConfig, feeder: &FeederModel, fleet: &Fleet) -> Result<ReductionPlan, HarnessError> {
    let n = feeder.node_count();
    let g = &config.grouping;
    let plan = if config.algorithm == Algorithm::Spds {
        ReductionPlan::full(n)
    } else {
        match g.mode {
            GroupingMode::Full => ReductionPlan::full(n),
            GroupingMode::Manual => {
                let groups = g
                    .manual
                    .iter()
                    .map(|s| Ok(EvGroup::new(parse_ranges(&s.members)?, parse_ranges(&s.subset)?)))
                    .collect::<Result<Vec<_>, String>>()
                    .map_err(|e| HarnessError::Invalid(vec![e]))?;
                ReductionPlan::new(n, g.reduction, groups)
            }
            GroupingMode::Auto => {
                let r = feeder.r_matrix();
                reduction::propose_grouping(
                    &reduction::commonly_reduced(r),
                    &reduction::peak_preserved(r),
                    g.groups.unwrap_or(1),
                    g.reduction,
                    &fleet.ev_nodes(),
                )
                .map_err(|e| HarnessError::Invalid(vec![e.to_string()]))?
            }
        }
    };
    reduction::validate_plan(&plan, n, &fleet.ev_nodes())
        .map_err(|v| HarnessError::Invalid(v.iter().map(ToString::to_string).collect()))?;
    Ok(plan)
}

/// Max − min of `values[from..]`.
pub fn spread(values: &[f64], from: usize) -> f64 {
    let tail = &values[from.min(values.len())..];
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    if tail.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// A finished scenario run and the files it wrote.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub report: RunReport,
    pub flops: FlopsReport,
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

impl ScenarioOutcome {
    pub fn diverged(&self) -> bool {
        self.report.termination == Termination::Diverged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub algorithm: Algorithm,
    pub termination: Termination,
    pub iterations: usize,
    pub seed: u64,
    pub ev_count: usize,
    pub node_count: usize,
    pub slots: usize,
    pub groups: usize,
    pub reduction: usize,
    pub objective_kw2: f64,
    pub final_epsilon: f64,
    pub min_voltage_pu: f64,
    pub baseline_min_voltage_pu: f64,
    pub spread_kw: f64,
    pub earliest_spread_kw: f64,
    pub baseline_spread_kw: f64,
    pub max_energy_residual_kwh: f64,
}

impl Summary {
    fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("scenario", self.scenario.clone()),
            ("algorithm", self.algorithm.to_string()),
            ("termination", self.termination.to_string()),
            ("iterations", self.iterations.to_string()),
            ("seed", self.seed.to_string()),
            ("ev_count", self.ev_count.to_string()),
            ("node_count", self.node_count.to_string()),
            ("slots", self.slots.to_string()),
            ("groups", self.groups.to_string()),
            ("reduction", self.reduction.to_string()),
            ("objective_kw2", self.objective_kw2.to_string()),
            ("final_epsilon", self.final_epsilon.to_string()),
            ("min_voltage_pu", self.min_voltage_pu.to_string()),
            ("baseline_min_voltage_pu", self.baseline_min_voltage_pu.to_string()),
            ("spread_kw", self.spread_kw.to_string()),
            ("earliest_spread_kw", self.earliest_spread_kw.to_string()),
            ("baseline_spread_kw", self.baseline_spread_kw.to_string()),
            ("max_energy_residual_kwh", self.max_energy_residual_kwh.to_string()),
        ]
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (key, value) in self.rows() {
            writeln!(f, "{key:<26} {value}")?;
        }
        Ok(())
    }
}

/// Persisted run: the report plus what is needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRun {
    pub summary: Summary,
    pub flops: FlopsReport,
    pub slot_labels: Vec<String>,
    pub report: RunReport,
}

fn summarize(scenario: &Scenario, report: &RunReport) -> Summary {
    let from = scenario.spread_start();
    let residual = scenario
        .fleet
        .evs()
        .iter()
        .zip(report.profiles.rows())
        .map(|(ev, row)| ev.energy_residual(row).abs())
        .fold(0.0, f64::max);
    Summary {
        scenario: scenario.config.name.clone(),
        algorithm: report.algorithm,
        termination: report.termination,
        iterations: report.iterations,
        seed: scenario.config.fleet.seed,
        ev_count: scenario.fleet.len(),
        node_count: report.node_count,
        slots: report.slots,
        groups: scenario.plan.group_count(),
        reduction: scenario.plan.reduction,
        objective_kw2: report.objective,
        final_epsilon: report.trace.last().map_or(f64::NAN, |r| r.epsilon),
        min_voltage_pu: report.min_voltage_pu(),
        baseline_min_voltage_pu: report.baseline_voltages_pu.iter().copied().fold(f64::INFINITY, f64::min),
        spread_kw: spread(&report.total_load_kw(), from),
        earliest_spread_kw: spread(&scenario.earliest_total_kw(), from),
        baseline_spread_kw: spread(&report.baseline_kw, from),
        max_energy_residual_kwh: residual,
    }
}

/// Assembles and solves a scenario file, then writes artifacts into `out_dir`.
///
/// A diverged run still writes its artifacts; check [`ScenarioOutcome::diverged`].
pub fn run_scenario(path: impl AsRef<Path>, overrides: &Overrides, out_dir: impl AsRef<Path>) -> Result<ScenarioOutcome, HarnessError> {
    let mut config = ScenarioConfig::load(path)?;
    config.apply(overrides);
    let scenario = Scenario::assemble(config)?;
    let report = scenario.solve()?;
    write_outputs(&scenario, report, out_dir.as_ref())
}

/// Writes trace, load, voltage, profile, summary and JSON artifacts.
pub fn write_outputs(scenario: &Scenario, report: RunReport, out_dir: &Path) -> Result<ScenarioOutcome, HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let flops = scenario.flops();
    let summary = summarize(scenario, &report);
    let h = &scenario.config.horizon;
    let labels: Vec<String> = (0..report.slots).map(|t| slot_label(&h.start, h.slot_hours, t)).collect();
    let mut files = Vec::new();

    let mut emit = |name: &str, body: Vec<u8>| -> Result<(), HarnessError> {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        files.push(path);
        Ok(())
    };

    let mut trace = Vec::new();
    for (key, value) in header_block(scenario, &report, &flops) {
        writeln!(trace, "# {key},{value}").expect("in-memory write");
    }
    writeln!(trace, "iteration,epsilon,objective_kw2,min_voltage_pu").expect("in-memory write");
    for row in &report.trace {
        writeln!(trace, "{},{},{},{}", row.iteration, row.epsilon, row.objective, row.min_voltage_pu)
            .expect("in-memory write");
    }
    emit("trace.csv", trace)?;

    let earliest = scenario.earliest_total_kw();
    let total = report.total_load_kw();
    let mut load = String::from("slot,time,baseline_kw,ev_kw,total_kw,earliest_total_kw\n");
    for t in 0..report.slots {
        load.push_str(&format!(
            "{t},{},{},{},{},{}\n",
            labels[t], report.baseline_kw[t], report.ev_load_kw[t], total[t], earliest[t]
        ));
    }
    emit("aggregate_load.csv", load.into_bytes())?;

    let n = report.node_count;
    let mut voltage = String::from("slot,time,node,baseline_pu,total_pu\n");
    for t in 0..report.slots {
        for j in 0..n {
            voltage.push_str(&format!(
                "{t},{},{},{},{}\n",
                labels[t],
                j + 1,
                report.baseline_voltages_pu[t * n + j],
                report.voltages_pu[t * n + j]
            ));
        }
    }
    emit("voltage.csv", voltage.into_bytes())?;

    let mut profiles = String::from("ev,node");
    for label in &labels {
        profiles.push(',');
        profiles.push_str(label);
    }
    profiles.push('\n');
    for (i, (ev, row)) in scenario.fleet.evs().iter().zip(report.profiles.rows()).enumerate() {
        profiles.push_str(&format!("{},{}", i + 1, ev.node));
        for u in row {
            profiles.push_str(&format!(",{u}"));
        }
        profiles.push('\n');
    }
    emit("profiles.csv", profiles.into_bytes())?;

    let mut rows = String::from("key,value\n");
    for (key, value) in summary.rows().into_iter().chain(flops.fields()) {
        rows.push_str(&format!("{key},{value}\n"));
    }
    emit("summary.csv", rows.into_bytes())?;

    let stored = StoredRun { summary: summary.clone(), flops: flops.clone(), slot_labels: labels, report };
    let json = serde_json::to_vec_pretty(&stored).expect("report serializes");
    emit("report.json", json)?;

    Ok(ScenarioOutcome { report: stored.report, flops, summary, files })
}

fn header_block(scenario: &Scenario, report: &RunReport, flops: &FlopsReport) -> Vec<(&'static str, String)> {
    let mut rows = vec![
        ("scenario", scenario.config.name.clone()),
        ("algorithm", report.algorithm.to_string()),
        ("termination", report.termination.to_string()),
        ("seed", scenario.config.fleet.seed.to_string()),
    ];
    rows.extend(flops.fields());
    rows
}

pub fn load_stored_run(path: impl AsRef<Path>) -> Result<StoredRun, HarnessError> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path.push("report.json");
    }
    let bytes = fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::Parse { path, message: e.to_string() })
}

/// Differences `b − a` between two runs over the same horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunDiff {
    pub objective_delta: f64,
    /// `|Δobjective| / |objective_a|`.
    pub objective_relative: f64,
    pub load_delta_kw: Vec<f64>,
    pub max_abs_load_delta_kw: f64,
    pub min_voltage_delta_pu: f64,
    /// Per-iteration counter savings of `b` against `a`.
    pub flops: MeasuredSavings,
}

impl fmt::Display for RunDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "objective_delta_kw2        {}", self.objective_delta)?;
        writeln!(f, "objective_relative         {}", self.objective_relative)?;
        writeln!(f, "max_abs_load_delta_kw      {}", self.max_abs_load_delta_kw)?;
        writeln!(f, "min_voltage_delta_pu       {}", self.min_voltage_delta_pu)?;
        writeln!(f, "primal_flops_saved_per_ev  {}", self.flops.primal_saved)?;
        writeln!(f, "primal_flops_ratio         {:.4}", self.flops.primal_ratio)?;
        writeln!(f, "dual_flops_saved_critical  {}", self.flops.dual_saved)?;
        writeln!(f, "dual_flops_ratio           {:.4}", self.flops.dual_ratio)
    }
}

pub fn compare_runs(a: &RunReport, b: &RunReport) -> Result<RunDiff, HarnessError> {
    if a.slots != b.slots {
        return Err(HarnessError::HorizonMismatch(a.slots, b.slots));
    }
    let load_a = a.total_load_kw();
    let load_b = b.total_load_kw();
    let load_delta_kw: Vec<f64> = load_a.iter().zip(&load_b).map(|(x, y)| y - x).collect();
    let objective_delta = b.objective - a.objective;
    Ok(RunDiff {
        objective_delta,
        objective_relative: if a.objective == 0.0 { objective_delta.abs() } else { (objective_delta / a.objective).abs() },
        max_abs_load_delta_kw: load_delta_kw.iter().fold(0.0, |m, d| m.max(d.abs())),
        load_delta_kw,
        min_voltage_delta_pu: b.min_voltage_pu() - a.min_voltage_pu(),
        flops: MeasuredSavings::between(&a.counters, &b.counters),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_ranges("1-3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_ranges("6-7, 2,4-4").unwrap(), vec![2, 4, 6, 7]);
        assert!(parse_ranges("3-1").is_err());
        assert!(parse_ranges("").is_err());
        assert!(parse_ranges("a-2").is_err());
    }

    #[test]
    fn labels_wrap_midnight() {
        assert_eq!(slot_label("19:00", 0.25, 0), "19:00");
        assert_eq!(slot_label("19:00", 0.25, 1), "19:15");
        assert_eq!(slot_label("19:00", 0.25, 20), "00:00");
        assert_eq!(slot_label("19:00", 0.25, 51), "07:45");
    }

    #[test]
    fn spread_of_tail() {
        assert_eq!(spread(&[5.0, 1.0, 3.0, 2.0], 1), 2.0);
        assert_eq!(spread(&[5.0], 3), 0.0);
    }
}
