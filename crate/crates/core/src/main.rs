use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spmds::accounting::FlopsReport;
use spmds::feeder::{self, FeederModel};
use spmds::harness::{self, GroupingMode, HarnessError, Overrides, Scenario, ScenarioConfig};
use spmds::reduction;
use spmds::solver::{Algorithm, DualDrop, DualOrder};

#[derive(Parser)]
#[command(name = "spmds", version, about = "Decentralized EV valley-filling with network dimension reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Write R, R_all and R_col for a feeder and optionally propose a grouping.
    Reduce {
        feeder: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Number of groups to propose.
        #[arg(long, requires = "reduction")]
        groups: Option<usize>,
        /// Dimension reduction d for the proposal.
        #[arg(long, requires = "groups")]
        reduction: Option<usize>,
    },
    /// Print the FLOPS savings model.
    Flops {
        /// Derive n, d, K, v and v_m from a scenario.
        #[arg(long, conflicts_with_all = ["n", "d", "k", "v", "v_m"])]
        scenario: Option<PathBuf>,
        #[arg(long, required_unless_present = "scenario")]
        n: Option<u64>,
        #[arg(long, required_unless_present = "scenario")]
        d: Option<u64>,
        #[arg(long, required_unless_present = "scenario")]
        k: Option<u64>,
        #[arg(long, required_unless_present = "scenario")]
        v: Option<u64>,
        #[arg(long, required_unless_present = "scenario")]
        v_m: Option<u64>,
    },
    /// Compare two runs (report.json files or their directories).
    Compare { a: PathBuf, b: PathBuf },
    /// Validate a scenario without solving it.
    Validate {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

#[derive(Args, Default)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau_u: Option<f64>,
    #[arg(long)]
    tau_lambda: Option<f64>,
    #[arg(long)]
    epsilon0: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    dual_cap: Option<f64>,
    #[arg(long, value_enum)]
    dual_order: Option<OrderArg>,
    #[arg(long, value_enum)]
    dual_drop: Option<DropArg>,
    #[arg(long)]
    voltage_floor: Option<f64>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long, value_enum)]
    grouping: Option<GroupingArg>,
    #[arg(long)]
    reduction: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Jacobi,
    GaussSeidel,
}

#[derive(Clone, Copy, ValueEnum)]
enum DropArg {
    All,
    Group,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Spmds,
    Spds,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupingArg {
    Manual,
    Auto,
    Full,
}

impl OverrideArgs {
    fn into_overrides(self) -> Overrides {
        Overrides {
            seed: self.seed,
            alpha: self.alpha,
            beta: self.beta,
            tau_u: self.tau_u,
            tau_lambda: self.tau_lambda,
            epsilon0: self.epsilon0,
            max_iter: self.max_iter,
            dual_cap: self.dual_cap,
            dual_order: self.dual_order.map(|o| match o {
                OrderArg::Jacobi => DualOrder::Jacobi,
                OrderArg::GaussSeidel => DualOrder::GaussSeidel,
            }),
            dual_drop: self.dual_drop.map(|d| match d {
                DropArg::All => DualDrop::All,
                DropArg::Group => DualDrop::Group,
            }),
            voltage_floor: self.voltage_floor,
            algorithm: self.algorithm.map(|a| match a {
                AlgorithmArg::Spmds => Algorithm::Spmds,
                AlgorithmArg::Spds => Algorithm::Spds,
            }),
            grouping: self.grouping.map(|g| match g {
                GroupingArg::Manual => GroupingMode::Manual,
                GroupingArg::Auto => GroupingMode::Auto,
                GroupingArg::Full => GroupingMode::Full,
            }),
            reduction: self.reduction,
            groups: self.groups,
        }
    }
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_IO: u8 = 3;

fn fail(err: HarnessError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn io_fail(path: &std::path::Path, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {}: {err}", path.display());
    ExitCode::from(EXIT_IO)
}

fn print_flops(report: &FlopsReport) {
    for (key, value) in report.fields() {
        println!("{key:<20} {value}");
    }
    if report.dual_negative {
        eprintln!("warning: dual FLOPS model is negative for these inputs");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, out, overrides } => {
            match harness::run_scenario(&scenario, &overrides.into_overrides(), &out) {
                Ok(outcome) => {
                    print!("{}", outcome.summary);
                    println!("artifacts written to {}", out.display());
                    if outcome.diverged() {
                        eprintln!("error: solver diverged after {} iterations", outcome.report.iterations);
                        return ExitCode::from(EXIT_DIVERGED);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Reduce { feeder: path, out, groups, reduction: d } => {
            let model = match FeederModel::load(&path) {
                Ok(m) => m,
                Err(feeder::FeederError::Io(e)) => return io_fail(&path, e),
                Err(e) => {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(EXIT_VALIDATION);
                }
            };
            if let Err(e) = fs::create_dir_all(&out) {
                return io_fail(&out, e);
            }
            let r = model.r_matrix();
            let r_all = reduction::commonly_reduced(r);
            let r_col = reduction::peak_preserved(r);
            let writes: [(&str, &nalgebra::DMatrix<f64>, bool); 3] =
                [("r_matrix.csv", r, false), ("r_all.csv", &r_all, true), ("r_col.csv", &r_col, true)];
            for (name, matrix, heatmap) in writes {
                let file_path = out.join(name);
                let result = fs::File::create(&file_path).map_err(|e| e.to_string()).and_then(|f| {
                    if heatmap {
                        reduction::write_heatmap_csv(f, matrix).map_err(|e| e.to_string())
                    } else {
                        feeder::write_matrix_csv(f, matrix).map_err(|e| e.to_string())
                    }
                });
                if let Err(e) = result {
                    return io_fail(&file_path, e);
                }
            }
            println!("wrote r_matrix.csv, r_all.csv, r_col.csv to {}", out.display());
            if let (Some(groups), Some(d)) = (groups, d) {
                let ev_nodes: Vec<usize> = model
                    .node_data()
                    .iter()
                    .enumerate()
                    .filter(|(_, nd)| nd.ev_count > 0)
                    .map(|(j, _)| j + 1)
                    .collect();
                match reduction::propose_grouping(&r_all, &r_col, groups, d, &ev_nodes) {
                    Ok(plan) => {
                        println!("group,members,subset");
                        for (s, g) in plan.groups.iter().enumerate() {
                            println!("{},{},{}", s + 1, span(&g.members), span(&g.subset));
                        }
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_VALIDATION);
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Command::Flops { scenario, n, d, k, v, v_m } => {
            let report = match scenario {
                Some(path) => {
                    let assembled = ScenarioConfig::load(&path).and_then(Scenario::assemble);
                    match assembled {
                        Ok(s) => s.flops(),
                        Err(e) => return fail(e),
                    }
                }
                None => {
                    let (n, d, k, v, v_m) = (n.unwrap(), d.unwrap(), k.unwrap(), v.unwrap(), v_m.unwrap());
                    if d > n || v_m > v || k == 0 {
                        eprintln!("error: need d <= n, v_m <= v and k >= 1");
                        return ExitCode::from(EXIT_VALIDATION);
                    }
                    FlopsReport::new(n, d, k, v, v_m)
                }
            };
            print_flops(&report);
            ExitCode::SUCCESS
        }
        Command::Compare { a, b } => {
            let runs = harness::load_stored_run(&a).and_then(|ra| Ok((ra, harness::load_stored_run(&b)?)));
            let (ra, rb) = match runs {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            match harness::compare_runs(&ra.report, &rb.report) {
                Ok(diff) => {
                    print!("{diff}");
                    println!("model_primal_saved         {}", rb.flops.primal_saved);
                    println!("model_dual_saved           {}", rb.flops.dual_saved);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Validate { scenario, overrides } => {
            let mut config = match ScenarioConfig::load(&scenario) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            config.apply(&overrides.into_overrides());
            match Scenario::assemble(config) {
                Ok(s) => {
                    println!(
                        "ok: {} nodes, {} EVs, {} groups, d = {}",
                        s.feeder.node_count(),
                        s.fleet.len(),
                        s.plan.group_count(),
                        s.plan.reduction
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}

/// Renders a sorted node list as ranges, e.g. `1-3 5`.
fn span(nodes: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut iter = nodes.iter().copied().peekable();
    while let Some(start) = iter.next() {
        let mut end = start;
        while iter.peek() == Some(&(end + 1)) {
            end = iter.next().unwrap();
        }
        parts.push(if start == end { start.to_string() } else { format!("{start}-{end}") });
    }
    parts.join(" ")
}
