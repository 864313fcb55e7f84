//! Command-line front end.
//!
//! Data goes to `--out` (or standard output); progress and timing go to
//! standard error. Exit status: 0 on success, 1 on output failures, 2 for
//! unreadable or invalid scenarios, 3 when a computation fails.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::fleet::{best_period, default_valuation, periodic_value, simulate, FleetScenario, SimOptions, SnrMode, TableBuilder};
use crate::obsmodel::ObsCase;
use crate::scenario::{MethodName, ScenarioFile};
use crate::solver::{solve_value, BeliefGrid};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable naming the continuation-table cache directory.
pub const CACHE_ENV: &str = "ADR_MAINT_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "adr-maint", version, about = "Repair thresholds, Whittle indices and fleet simulation for demand-response devices")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Rebuild continuation tables instead of reading the cache.
    #[arg(long, global = true)]
    pub no_cache: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Vi,
    Lp,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output CSV file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sets the quasi-random start offset to `seed + 1` and the fleet seed to `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the scenario's solver method.
    #[arg(long, value_enum)]
    pub method: Option<Method>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal repair threshold and value at belief 1.
    Threshold {
        #[command(flatten)]
        common: Common,
        /// Observation cases to solve, e.g. `ABCD`; defaults to the scenario's.
        #[arg(long)]
        cases: Option<String>,
        /// Fill the wall_seconds column (makes output machine dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Whittle index for every grid point.
    Whittle {
        #[command(flatten)]
        common: Common,
    },
    /// Fleet policy comparison.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Value of periodic repairs for each period up to `qmax`.
    Periodic {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        qmax: u32,
    },
}

enum Failure {
    Scenario(String),
    Compute(Error),
    Output(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Output(_) => 1,
            Failure::Scenario(_) => 2,
            Failure::Compute(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Scenario(m) => write!(f, "scenario: {m}"),
            Failure::Compute(e) => write!(f, "{e}"),
            Failure::Output(m) => write!(f, "output: {m}"),
        }
    }
}

fn compute<T>(r: crate::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Compute)
}

fn load(common: &Common) -> Result<ScenarioFile, Failure> {
    let path = &common.scenario;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Scenario(format!("{}: {e}", path.display())))?;
    let mut scn = ScenarioFile::parse(&text).map_err(|e| Failure::Scenario(format!("{}: {e}", path.display())))?;
    if let Some(m) = common.method {
        scn.solver.method = match m {
            Method::Vi => MethodName::Vi,
            Method::Lp => MethodName::Lp,
        };
    }
    if let Some(seed) = common.seed {
        scn.solver.qmc_start = seed.checked_add(1).ok_or_else(|| Failure::Scenario("seed too large".into()))?;
        scn.fleet.seed = seed;
    }
    Ok(scn)
}

fn cache_dir(no_cache: bool) -> Option<PathBuf> {
    if no_cache {
        return None;
    }
    Some(std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("adr-maint-cache")))
}

fn builder(scn: &ScenarioFile, no_cache: bool) -> TableBuilder {
    let mut b = TableBuilder::new(cache_dir(no_cache));
    b.qmc_start = scn.solver.qmc_start;
    b.epsilon_rel = scn.whittle.epsilon;
    b.solve = scn.solve_options();
    b
}

fn write_csv(out: Option<&Path>, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), Failure> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Failure::Output(format!("{}: {e}", p.display())))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let err = |e: csv::Error| Failure::Output(e.to_string());
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| Failure::Output(e.to_string()))
}

fn cmd_threshold(scn: &ScenarioFile, common: &Common, cases: Option<&str>, timing: bool, no_cache: bool) -> Result<(), Failure> {
    let cases: Vec<ObsCase> = match cases {
        Some(s) => s
            .chars()
            .map(|c| ObsCase::from_letter(c).ok_or_else(|| Failure::Scenario(format!("unknown case `{c}`"))))
            .collect::<Result<_, _>>()?,
        None => vec![scn.observation.case],
    };
    let model = compute(scn.adr_model())?;
    let grid = compute(BeliefGrid::new(scn.solver.n))?;
    let tables = builder(scn, no_cache);
    let mut rows = Vec::new();
    for case in cases {
        let mut s = scn.clone();
        s.observation.case = case;
        if !case.has_mismatch() {
            s.observation.d = 0;
        } else if s.observation.d == 0 {
            s.observation.d = 2;
        }
        let obs = s.obs_scenario().map_err(|e| Failure::Scenario(e.to_string()))?;
        let start = Instant::now();
        let cont = compute(tables.continuation(&model, &obs, grid, scn.solver.samples, &s.vb_settings()))?;
        let vt = compute(solve_value(&model, &cont, 0.0, &s.solve_options()))?;
        let secs = start.elapsed().as_secs_f64();
        eprintln!("case {case}: solved in {secs:.2} s after {} iterations", vt.iterations);
        rows.push(vec![
            grid.n().to_string(),
            scn.solver.samples.to_string(),
            case.to_string(),
            format!("{:.4}", compute(s.snr_db())?),
            vt.threshold_index.map(|k| format!("{:.4}", grid.point(k))).unwrap_or_default(),
            format!("{:.6}", vt.v[grid.n()]),
            if timing { format!("{secs:.3}") } else { String::new() },
            VERSION.to_string(),
        ]);
    }
    write_csv(common.out.as_deref(), &["n", "N", "case", "snr_db", "b_star", "V_at_1", "wall_seconds", "version"], rows)
}

fn cmd_whittle(scn: &ScenarioFile, common: &Common, no_cache: bool) -> Result<(), Failure> {
    let model = compute(scn.adr_model())?;
    let obs = compute(scn.obs_scenario())?;
    let grid = compute(BeliefGrid::new(scn.solver.n))?;
    let mut tables = builder(scn, no_cache);
    let start = Instant::now();
    let table = compute(tables.zero_cost_table(&model, &obs, grid, scn.solver.samples, &scn.vb_settings()))?;
    let table = compute(table.for_cost(model.cost))?;
    eprintln!("indices computed in {:.2} s (subsidy bound {})", start.elapsed().as_secs_f64(), table.mu_bar);
    let rows = table
        .index_values
        .iter()
        .enumerate()
        .map(|(k, v)| vec![k.to_string(), format!("{:.4}", grid.point(k)), format!("{v:.6}"), VERSION.to_string()])
        .collect();
    write_csv(common.out.as_deref(), &["k", "belief", "index", "version"], rows)
}

fn snr_label(mode: SnrMode) -> String {
    match mode {
        SnrMode::Fixed { db } => format!("{db}"),
        SnrMode::Uniform { lo, hi } => format!("[{lo},{hi}]"),
    }
}

fn cmd_simulate(scn: &ScenarioFile, common: &Common, no_cache: bool) -> Result<(), Failure> {
    let pairs = scn.comparisons().map_err(|e| Failure::Scenario(e.to_string()))?;
    let configs = scn.fleet_configs().map_err(|e| Failure::Scenario(e.to_string()))?;
    let mut tables = builder(scn, no_cache);
    let mut rows = Vec::new();
    for config in configs {
        let start = Instant::now();
        let fleet = compute(FleetScenario::build(config, &mut tables))?;
        eprintln!("fleet at snr {} built in {:.2} s", snr_label(config.snr_mode), start.elapsed().as_secs_f64());
        for &(policy, reference) in &pairs {
            let opts = SimOptions { valuation: default_valuation(reference), seed: Some(config.seed) };
            let r = compute(simulate(&fleet, policy, reference, &opts))?;
            eprintln!("  {policy} vs {reference}: {:.2}%", r.err_percent);
            rows.push(vec![
                snr_label(config.snr_mode),
                policy.to_string(),
                reference.to_string(),
                format!("{:.4}", r.err_percent),
                format!("{:.4}", r.err_stderr),
                r.runs.to_string(),
                format!("{:.6}", r.policy_mean),
                format!("{:.6}", r.reference_value),
                format!("{:?}", r.valuation).to_lowercase(),
                VERSION.to_string(),
            ]);
        }
    }
    write_csv(
        common.out.as_deref(),
        &["snr", "policy", "reference", "err_percent", "stderr", "runs", "policy_value", "reference_value", "valuation", "version"],
        rows,
    )
}

fn cmd_periodic(scn: &ScenarioFile, common: &Common, qmax: u32) -> Result<(), Failure> {
    if qmax == 0 {
        return Err(Failure::Scenario("qmax must be at least 1".into()));
    }
    let model = compute(scn.adr_model())?;
    let (best, value) = compute(best_period(&model, qmax))?;
    eprintln!("best period {best}, value {value:.6}");
    let rows = (1..=qmax)
        .map(|q| {
            let u = compute(periodic_value(&model, q))?;
            Ok(vec![q.to_string(), format!("{u:.6}"), (q == best).to_string(), VERSION.to_string()])
        })
        .collect::<Result<_, Failure>>()?;
    write_csv(common.out.as_deref(), &["q", "value", "optimal", "version"], rows)
}

/// Runs the command line and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not configure {n} threads: {e}");
        }
    }
    let result = match &cli.command {
        Command::Threshold { common, cases, timing } => {
            load(common).and_then(|s| cmd_threshold(&s, common, cases.as_deref(), *timing, cli.no_cache))
        }
        Command::Whittle { common } => load(common).and_then(|s| cmd_whittle(&s, common, cli.no_cache)),
        Command::Simulate { common } => load(common).and_then(|s| cmd_simulate(&s, common, cli.no_cache)),
        Command::Periodic { common, qmax } => load(common).and_then(|s| cmd_periodic(&s, common, *qmax)),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}

/// Parses the process arguments and runs; used by the binary.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(Cli::parse())
}
