//! Closed-form FLOPS savings of the reduced updates, and the per-phase
//! operation counters the solvers record while running.
//!
//! Counts follow the dense block-matrix convention: a matrix-vector product
//! with an `a × b` block costs `a(2b − 1)` FLOPS, so a fused multiply-add
//! counts as two.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

/// Exact ratio rendered as a percentage with two decimals (half-up).
pub fn percent(ratio: Ratio<i128>) -> String {
    let scaled = ratio * Ratio::from_integer(10_000);
    let negative = scaled < Ratio::from_integer(0);
    let magnitude = if negative { -scaled } else { scaled };
    let hundredths = (magnitude + Ratio::new(1, 2)).floor().to_integer();
    let sign = if negative && hundredths != 0 { "-" } else { "" };
    format!("{sign}{}.{:02}%", hundredths / 100, hundredths % 100)
}

/// Primal savings per EV and gradient: `(2dK², dK / ((n + 2)K − 1))`.
pub fn flops_primal(n: u64, d: u64, k: u64) -> (u64, Ratio<i128>) {
    let saved = 2 * d * k * k;
    let denominator = ((n + 2) * k) as i128 - 1;
    let ratio = if d == 0 || denominator <= 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new((d * k) as i128, denominator)
    };
    (saved, ratio)
}

/// Dual savings on the critical group of `v_m` EVs:
/// `((2vn − 2v_m(n − d))K² − K(n − d), F_dt / 2vnK²)`.
///
/// The count can be negative for degenerate inputs (one group, `d = 0`);
/// it is returned as computed.
pub fn flops_dual(n: u64, d: u64, k: u64, v: u64, v_m: u64) -> (i128, Ratio<i128>) {
    let (n, d, k, v, v_m) = (n as i128, d as i128, k as i128, v as i128, v_m as i128);
    let saved = (2 * v * n - 2 * v_m * (n - d)) * k * k - k * (n - d);
    let full = 2 * v * n * k * k;
    let ratio = if full == 0 { Ratio::from_integer(0) } else { Ratio::new(saved, full) };
    (saved, ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub n: u64,
    pub d: u64,
    pub k: u64,
    pub v: u64,
    pub v_m: u64,
    pub primal_saved: u64,
    pub primal_ratio: Ratio<i128>,
    pub dual_saved: i128,
    pub dual_ratio: Ratio<i128>,
    /// Set when the dual count came out negative.
    pub dual_negative: bool,
}

impl FlopsReport {
    pub fn new(n: u64, d: u64, k: u64, v: u64, v_m: u64) -> Self {
        let (primal_saved, primal_ratio) = flops_primal(n, d, k);
        let (dual_saved, dual_ratio) = flops_dual(n, d, k, v, v_m);
        Self {
            n,
            d,
            k,
            v,
            v_m,
            primal_saved,
            primal_ratio,
            dual_saved,
            dual_ratio,
            dual_negative: dual_saved < 0,
        }
    }

    pub fn primal_percent(&self) -> String {
        percent(self.primal_ratio)
    }

    pub fn dual_percent(&self) -> String {
        percent(self.dual_ratio)
    }

    /// `(key, value)` rows for CSV header blocks.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("flops_n", self.n.to_string()),
            ("flops_d", self.d.to_string()),
            ("flops_k", self.k.to_string()),
            ("flops_v", self.v.to_string()),
            ("flops_v_m", self.v_m.to_string()),
            ("primal_flops_saved", self.primal_saved.to_string()),
            ("primal_reduction", self.primal_percent()),
            ("dual_flops_saved", self.dual_saved.to_string()),
            ("dual_reduction", self.dual_percent()),
            ("dual_negative", self.dual_negative.to_string()),
        ]
    }
}

/// FLOPS of one round, split by phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCounts {
    /// Primal gradient of a single EV.
    pub primal_per_ev: u64,
    /// Primal gradients of all EVs.
    pub primal_total: u64,
    /// Dual gradient of the most expensive group (groups run in parallel).
    pub dual_critical: u64,
    /// Dual gradients of all groups.
    pub dual_total: u64,
    /// Operator bookkeeping: `ω` and `λ_e`.
    pub reduction: u64,
}

impl PhaseCounts {
    /// `(4K² − K) + K(2mK − 1)` for an EV watching `m` voltage rows.
    pub fn primal_per_ev(m: u64, k: u64) -> u64 {
        (4 * k * k - k) + k * (2 * m * k).saturating_sub(1)
    }

    fn add(&mut self, other: PhaseCounts) {
        self.primal_per_ev += other.primal_per_ev;
        self.primal_total += other.primal_total;
        self.dual_critical += other.dual_critical;
        self.dual_total += other.dual_total;
        self.reduction += other.reduction;
    }
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub iterations: u64,
    pub totals: PhaseCounts,
}

impl OpCounters {
    pub fn record(&mut self, round: PhaseCounts) {
        self.iterations += 1;
        self.totals.add(round);
    }

    /// Average per-iteration counts (zero when nothing ran).
    pub fn per_iteration(&self) -> PhaseCounts {
        if self.iterations == 0 {
            return PhaseCounts::default();
        }
        let it = self.iterations;
        PhaseCounts {
            primal_per_ev: self.totals.primal_per_ev / it,
            primal_total: self.totals.primal_total / it,
            dual_critical: self.totals.dual_critical / it,
            dual_total: self.totals.dual_total / it,
            reduction: self.totals.reduction / it,
        }
    }
}

/// Per-phase counters of a finished run.
pub fn empirical_counters(report: &crate::solver::RunReport) -> &OpCounters {
    &report.counters
}

/// Measured savings of a reduced run against a full-dimension run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSavings {
    pub primal_saved: i128,
    pub primal_ratio: f64,
    pub dual_saved: i128,
    pub dual_ratio: f64,
}

impl MeasuredSavings {
    pub fn between(full: &OpCounters, reduced: &OpCounters) -> Self {
        let f = full.per_iteration();
        let r = reduced.per_iteration();
        let primal_saved = f.primal_per_ev as i128 - r.primal_per_ev as i128;
        let dual_saved = f.dual_critical as i128 - r.dual_critical as i128;
        let ratio = |saved: i128, base: u64| if base == 0 { 0.0 } else { saved as f64 / base as f64 };
        Self {
            primal_saved,
            primal_ratio: ratio(primal_saved, f.primal_per_ev),
            dual_saved,
            dual_ratio: ratio(dual_saved, f.dual_critical),
        }
    }

    /// Measured-to-model ratios for the primal and dual savings.
    pub fn against_model(&self, model: &FlopsReport) -> (f64, f64) {
        let r = |m: f64, f: f64| if f == 0.0 { if m == 0.0 { 1.0 } else { f64::INFINITY } } else { m / f };
        (
            r(self.primal_saved as f64, model.primal_saved as f64),
            r(self.dual_saved as f64, model.dual_saved as f64),
        )
    }
}
