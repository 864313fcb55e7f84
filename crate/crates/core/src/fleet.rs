//! Fleets of devices sharing a limited number of repair crews.
//!
//! Policies that see the true states (full information), the states of the
//! previous event (slow information) or only meter readings (partial
//! information) are compared by simulation over a finite horizon with
//! common random numbers.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distributions::Open01;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Action, AdrModel, Belief};
use crate::obsmodel::{ObsCase, ObsScenario, QmcStream};
use crate::solver::{build_continuation, cache_key, BeliefGrid, ContinuationTable, SolveOptions};
use crate::vbayes::VbSettings;
use crate::whittle::{full_info_index, slow_info_mdp, IndexOptions, WhittleTable};

/// Value of repairing every `q` events regardless of readings, starting
/// from a working device.
pub fn periodic_value(model: &AdrModel, q: u32) -> Result<f64> {
    if q == 0 {
        return Err(invalid("q", "period must be at least one event"));
    }
    let b = model.discount;
    let s = 1.0 - model.fail_prob;
    let bq = b.powi(q as i32);
    let cycle = model.lambda * (1.0 - bq * s.powi(q as i32)) / (1.0 - b * s) - model.cost;
    Ok(cycle / (1.0 - bq) - model.theta / (1.0 - b))
}

/// Best repair period in `1..=max_q` and its value.
pub fn best_period(model: &AdrModel, max_q: u32) -> Result<(u32, f64)> {
    let mut best = (1, periodic_value(model, 1)?);
    for q in 2..=max_q {
        let u = periodic_value(model, q)?;
        if u > best.1 {
            best = (q, u);
        }
    }
    Ok(best)
}

fn binomial_pmf(n: usize, q: f64) -> Vec<f64> {
    if q <= 0.0 {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        return v;
    }
    if q >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        return v;
    }
    let (lq, lr) = (q.ln(), (1.0 - q).ln());
    let lf = |k: usize| libm::lgamma(k as f64 + 1.0);
    (0..=n).map(|k| (lf(n) - lf(k) - lf(n - k) + k as f64 * lq + (n - k) as f64 * lr).exp()).collect()
}

/// Value iteration over a count state; `actions(s)` lists
/// `(action, reward, next-state distribution)`.
fn count_value_iteration<A: Copy>(states: usize, beta: f64, actions: impl Fn(usize) -> Vec<(A, f64, Vec<(usize, f64)>)>) -> (Vec<A>, Vec<f64>) {
    let table: Vec<_> = (0..states).map(&actions).collect();
    let mut v = vec![0.0; states];
    loop {
        let next: Vec<f64> = table
            .iter()
            .map(|acts| {
                acts.iter()
                    .map(|(_, r, nx)| r + beta * nx.iter().map(|&(j, w)| w * v[j]).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = 1.0 + next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        v = next;
        if delta * beta / (1.0 - beta) <= 1e-11 * scale {
            break;
        }
    }
    let tie = 1e-9 * (1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    let policy = table
        .iter()
        .map(|acts| {
            let q: Vec<f64> = acts.iter().map(|(_, r, nx)| r + beta * nx.iter().map(|&(j, w)| w * v[j]).sum::<f64>()).collect();
            let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let i = q.iter().position(|&x| x >= best - tie).expect("non-empty action set");
            acts[i].0
        })
        .collect();
    (policy, v)
}

/// Optimal repairs when every state is seen and costs are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct CountPolicy {
    /// Repairs per working count `w` (before repairs).
    pub repairs: Vec<usize>,
    pub values: Vec<f64>,
}

impl CountPolicy {
    /// Value of a fleet that starts with every device working.
    pub fn initial_value(&self) -> f64 {
        *self.values.last().expect("non-empty")
    }
}

pub fn full_info_optimal_policy(model: &AdrModel, adrs: usize, crews: usize) -> Result<CountPolicy> {
    model.validate()?;
    if crews > adrs {
        return Err(invalid("M", format!("{crews} crews for {adrs} devices")));
    }
    let survive: Vec<Vec<(usize, f64)>> =
        (0..=adrs).map(|n| binomial_pmf(n, 1.0 - model.fail_prob).into_iter().enumerate().collect()).collect();
    let (repairs, values) = count_value_iteration(adrs + 1, model.discount, |w| {
        (0..=crews.min(adrs - w))
            .map(|a| {
                let r = model.lambda * w as f64 + (model.lambda - model.cost) * a as f64 - model.theta * adrs as f64;
                (a, r, survive[w + a].clone())
            })
            .collect()
    });
    Ok(CountPolicy { repairs, values })
}

/// Optimal repairs when each state is revealed after its event.
///
/// After the first event every belief is 0 (seen broken) or `1-p` (seen
/// working or repaired), so the count at belief 0 is a sufficient state.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowPolicy {
    /// `(repairs at belief 0, repairs at belief 1-p)` per count at belief 0.
    pub repairs: Vec<(usize, usize)>,
    pub values: Vec<f64>,
    /// Value from a fresh fleet (belief 1 everywhere, nothing repaired).
    pub initial_value: f64,
}

pub fn slow_info_policy(model: &AdrModel, adrs: usize, crews: usize) -> Result<SlowPolicy> {
    model.validate()?;
    if crews > adrs {
        return Err(invalid("M", format!("{crews} crews for {adrs} devices")));
    }
    let p = model.fail_prob;
    let fails: Vec<Vec<f64>> = (0..=adrs).map(|n| binomial_pmf(n, p)).collect();
    let (repairs, values) = count_value_iteration(adrs + 1, model.discount, |n0| {
        let mut acts = Vec::new();
        for a0 in 0..=crews.min(n0) {
            for a1 in 0..=(crews - a0).min(adrs - n0) {
                let unrepaired_ok = adrs - n0 - a1;
                let r = model.lambda * (1.0 - p) * unrepaired_ok as f64 + (model.lambda - model.cost) * (a0 + a1) as f64
                    - model.theta * adrs as f64;
                let next = fails[unrepaired_ok].iter().enumerate().map(|(x, &w)| (n0 - a0 + x, w)).collect();
                acts.push(((a0, a1), r, next));
            }
        }
        acts
    });
    let initial_value = (model.lambda - model.theta) * adrs as f64 + model.discount * values[0];
    Ok(SlowPolicy { repairs, values, initial_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyId {
    FullOptimal,
    FullWhittle,
    SlowOptimal,
    SlowWhittle,
    PartialWhittle,
}

impl PolicyId {
    pub const ALL: [PolicyId; 5] =
        [PolicyId::FullOptimal, PolicyId::FullWhittle, PolicyId::SlowOptimal, PolicyId::SlowWhittle, PolicyId::PartialWhittle];

    pub fn name(self) -> &'static str {
        match self {
            PolicyId::FullOptimal => "full-optimal",
            PolicyId::FullWhittle => "full-whittle",
            PolicyId::SlowOptimal => "slow-optimal",
            PolicyId::SlowWhittle => "slow-whittle",
            PolicyId::PartialWhittle => "partial-whittle",
        }
    }

    fn needs_identical_costs(self) -> bool {
        matches!(self, PolicyId::FullOptimal | PolicyId::SlowOptimal)
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for PolicyId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolicyId::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| invalid("policy", format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostMode {
    /// Every device uses the base model's cost.
    Identical,
    /// Costs drawn uniformly from `(0, max_multiple * lambda]`.
    Uniform { max_multiple: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SnrMode {
    Fixed { db: f64 },
    /// Per-device SNR drawn uniformly from `[lo, hi]` dB.
    Uniform { lo: f64, hi: f64 },
}

/// Observation parameters shared by the devices of a fleet; the noise
/// level follows from each device's SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsTemplate {
    pub case: ObsCase,
    pub m: usize,
    pub d: usize,
    pub nu0: f64,
    /// Shed standard deviation as a multiple of the noise level.
    pub shed_sd_relative: f64,
    pub baseline: f64,
}

impl ObsTemplate {
    pub fn reference(case: ObsCase) -> Self {
        ObsTemplate { case, m: 10, d: 2, nu0: 1.0, shed_sd_relative: 0.1, baseline: 5.0 }
    }

    pub fn scenario(&self, snr_db: f64) -> Result<ObsScenario> {
        ObsScenario::from_snr(self.case, self.m, self.d, snr_db, self.nu0, self.shed_sd_relative, self.baseline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    pub adrs: usize,
    pub crews: usize,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub model: AdrModel,
    pub observation: ObsTemplate,
    pub cost_mode: CostMode,
    pub snr_mode: SnrMode,
    pub grid: usize,
    pub samples: usize,
    pub vb: VbSettings,
}

impl FleetConfig {
    /// 100 devices, 5 crews, 44 events, 100 runs, identical costs.
    pub fn reference(case: ObsCase, snr_db: f64) -> Self {
        FleetConfig {
            adrs: 100,
            crews: 5,
            horizon: 44,
            runs: 100,
            seed: 1,
            model: AdrModel::reference(),
            observation: ObsTemplate::reference(case),
            cost_mode: CostMode::Identical,
            snr_mode: SnrMode::Fixed { db: snr_db },
            grid: 100,
            samples: 5000,
            vb: VbSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.adrs == 0 {
            return Err(invalid("D", "need at least one device"));
        }
        if self.crews > self.adrs {
            return Err(invalid("M", format!("{} crews for {} devices", self.crews, self.adrs)));
        }
        if self.horizon == 0 {
            return Err(invalid("T", "need at least one event"));
        }
        if self.runs == 0 {
            return Err(invalid("runs", "need at least one run"));
        }
        if let CostMode::Uniform { max_multiple } = self.cost_mode {
            if !(max_multiple > 0.0 && max_multiple.is_finite()) {
                return Err(invalid("max_multiple", format!("{max_multiple} must be positive")));
            }
        }
        if let SnrMode::Uniform { lo, hi } = self.snr_mode {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(invalid("snr", format!("[{lo}, {hi}] is not an interval")));
            }
        }
        BeliefGrid::new(self.grid)?;
        if self.samples == 0 {
            return Err(invalid("samples", "need at least one sample"));
        }
        Ok(())
    }
}

/// Builds zero-cost index tables, memoized per observation setting and
/// optionally backed by an on-disk cache of continuation tables.
#[derive(Debug)]
pub struct TableBuilder {
    pub cache_dir: Option<PathBuf>,
    /// Index of the first quasi-random point.
    pub qmc_start: u64,
    /// Index accuracy as a multiple of lambda.
    pub epsilon_rel: f64,
    pub solve: SolveOptions,
    memo: HashMap<String, WhittleTable>,
}

impl Default for TableBuilder {
    fn default() -> Self {
        TableBuilder { cache_dir: None, qmc_start: 1, epsilon_rel: 1e-3, solve: SolveOptions::default(), memo: HashMap::new() }
    }
}

impl TableBuilder {
    pub fn new(cache_dir: Option<PathBuf>) -> Self {
        TableBuilder { cache_dir, ..Self::default() }
    }

    pub fn continuation(&self, model: &AdrModel, scn: &ObsScenario, grid: BeliefGrid, samples: usize, vb: &VbSettings) -> Result<ContinuationTable> {
        let key = cache_key(model, scn, grid, samples, self.qmc_start, vb);
        let path = self.cache_dir.as_ref().map(|d| d.join(format!("cont-{key}.csv")));
        if let Some(path) = &path {
            if let Ok(f) = std::fs::File::open(path) {
                match ContinuationTable::read_csv(std::io::BufReader::new(f)) {
                    Ok(t) => return Ok(t),
                    Err(e) => log::warn!("ignoring unreadable cache file {}: {e}", path.display()),
                }
            }
        }
        let mut qmc = QmcStream::starting_at(scn.point_dim(), self.qmc_start)?;
        let cont = build_continuation(model, scn, grid, samples, &mut qmc, vb)?;
        if let Some(path) = &path {
            let write = || -> Result<()> {
                std::fs::create_dir_all(path.parent().expect("cache file has a parent"))
                    .map_err(|e| Error::Cache(e.to_string()))?;
                let tmp = path.with_extension(format!("tmp{}", std::process::id()));
                cont.write_csv(std::fs::File::create(&tmp).map_err(|e| Error::Cache(e.to_string()))?)?;
                std::fs::rename(&tmp, path).map_err(|e| Error::Cache(e.to_string()))
            };
            if let Err(e) = write() {
                log::warn!("could not write cache file {}: {e}", path.display());
            }
        }
        Ok(cont)
    }

    /// Index table at repair cost 0; shift it with [`WhittleTable::for_cost`].
    pub fn zero_cost_table(&mut self, model: &AdrModel, scn: &ObsScenario, grid: BeliefGrid, samples: usize, vb: &VbSettings) -> Result<WhittleTable> {
        let free = model.with_cost(0.0)?;
        let key = format!(
            "{}|{:?}",
            cache_key(model, scn, grid, samples, self.qmc_start, vb),
            (free.lambda, free.theta, free.discount, self.epsilon_rel, self.solve)
        );
        if let Some(t) = self.memo.get(&key) {
            return Ok(t.clone());
        }
        let cont = self.continuation(model, scn, grid, samples, vb)?;
        let opts = IndexOptions { epsilon: self.epsilon_rel * free.lambda, solve: self.solve, ..IndexOptions::for_model(&free) };
        let table = WhittleTable::compute(&free, &cont, &opts)?;
        if table.clipped_cells > 0 {
            log::warn!("index table for case {} at {:.2} dB needed clipping", scn.case(), scn.snr_db());
        }
        self.memo.insert(key, table.clone());
        Ok(table)
    }
}

#[derive(Debug, Clone)]
pub struct Adr {
    pub model: AdrModel,
    pub scenario: ObsScenario,
    pub snr_db: f64,
    pub table: WhittleTable,
}

/// A concrete fleet: per-device costs, observation models and index tables.
#[derive(Debug, Clone)]
pub struct FleetScenario {
    pub config: FleetConfig,
    pub adrs: Vec<Adr>,
    grid: BeliefGrid,
}

fn chacha(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream used for scenario draws; runs use streams `0..runs`.
const SCENARIO_STREAM: u64 = u64::MAX;

impl FleetScenario {
    pub fn build(config: FleetConfig, builder: &mut TableBuilder) -> Result<Self> {
        config.validate()?;
        let grid = BeliefGrid::new(config.grid)?;
        let mut rng = chacha(config.seed, SCENARIO_STREAM);
        let mut draws = Vec::with_capacity(config.adrs);
        for _ in 0..config.adrs {
            let cost = match config.cost_mode {
                CostMode::Identical => config.model.cost,
                CostMode::Uniform { max_multiple } => max_multiple * config.model.lambda * (1.0 - rng.gen::<f64>()),
            };
            let snr = match config.snr_mode {
                SnrMode::Fixed { db } => db,
                SnrMode::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            };
            draws.push((cost, snr));
        }
        let mut adrs = Vec::with_capacity(config.adrs);
        for (i, (cost, snr)) in draws.into_iter().enumerate() {
            let model = config.model.with_cost(cost)?;
            let scenario = config.observation.scenario(snr)?;
            let table = builder.zero_cost_table(&model, &scenario, grid, config.samples, &config.vb)?.for_cost(cost)?;
            log::debug!("device {i}: cost {cost:.3}, snr {snr:.2} dB");
            adrs.push(Adr { model, scenario, snr_db: snr, table });
        }
        Ok(FleetScenario { config, adrs, grid })
    }

    pub fn identical_costs(&self) -> bool {
        self.adrs.windows(2).all(|w| w[0].model.cost == w[1].model.cost)
    }

    fn point_dim(&self) -> usize {
        self.adrs.iter().map(|a| a.scenario.point_dim()).max().unwrap_or(1)
    }
}

/// Pairwise summation.
fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&sq) / (n - 1.0) / n).sqrt())
}

/// Random inputs of one run, shared by every policy.
struct RunStreams {
    /// `[t][i]`: device fails before the next event when below `p`.
    fail: Vec<f64>,
    /// `[t][i][..dim]`: unit-cube point driving the meter readings.
    points: Vec<f64>,
    adrs: usize,
    dim: usize,
}

impl RunStreams {
    fn new(fs: &FleetScenario, run: usize) -> Self {
        let (t, d, dim) = (fs.config.horizon, fs.adrs.len(), fs.point_dim());
        let mut rng = chacha(fs.config.seed, run as u64);
        let fail = (0..t * d).map(|_| rng.gen::<f64>()).collect();
        let points = (0..t * d * dim).map(|_| rng.sample(Open01)).collect();
        RunStreams { fail, points, adrs: d, dim }
    }

    fn fail(&self, t: usize, i: usize) -> f64 {
        self.fail[t * self.adrs + i]
    }

    fn point(&self, t: usize, i: usize, dim: usize) -> &[f64] {
        let start = (t * self.adrs + i) * self.dim;
        &self.points[start..start + dim]
    }
}

/// Per-policy data computed once per simulation.
enum PolicyContext {
    FullOptimal(CountPolicy),
    FullWhittle(Vec<f64>),
    SlowOptimal(SlowPolicy),
    /// Per device: indices at belief 0, `1-p` and 1.
    SlowWhittle(Vec<[f64; 3]>),
    PartialWhittle,
}

impl PolicyContext {
    fn new(fs: &FleetScenario, policy: PolicyId) -> Result<Self> {
        if policy.needs_identical_costs() && !fs.identical_costs() {
            return Err(Error::RequiresIdenticalCosts(policy.name()));
        }
        let (d, m) = (fs.adrs.len(), fs.config.crews);
        Ok(match policy {
            PolicyId::FullOptimal => PolicyContext::FullOptimal(full_info_optimal_policy(&fs.adrs[0].model, d, m)?),
            PolicyId::SlowOptimal => PolicyContext::SlowOptimal(slow_info_policy(&fs.adrs[0].model, d, m)?),
            PolicyId::FullWhittle => {
                PolicyContext::FullWhittle(fs.adrs.iter().map(|a| full_info_index(&a.model).map(|x| x.0)).collect::<Result<_>>()?)
            }
            PolicyId::SlowWhittle => PolicyContext::SlowWhittle(
                fs.adrs
                    .iter()
                    .map(|a| {
                        let mdp = slow_info_mdp(&a.model);
                        let tol = 1e-9 * a.model.lambda;
                        Ok([mdp.subsidy_index(0, tol)?, mdp.subsidy_index(1, tol)?, mdp.subsidy_index(2, tol)?])
                    })
                    .collect::<Result<_>>()?,
            ),
            PolicyId::PartialWhittle => {
                if let Some(i) = fs.adrs.iter().position(|a| a.table.n() != fs.grid.n()) {
                    return Err(Error::MissingIndexTable(i));
                }
                PolicyContext::PartialWhittle
            }
        })
    }
}

/// Up to `crews` devices with the largest strictly positive index; ties go
/// to the lower id.
fn top_indices(indices: &[f64], crews: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..indices.len()).filter(|&i| indices[i] > 0.0).collect();
    ids.sort_by(|&a, &b| indices[b].total_cmp(&indices[a]).then(a.cmp(&b)));
    ids.truncate(crews);
    ids.sort_unstable();
    ids
}

fn first_matching(flags: impl Iterator<Item = bool>, count: usize) -> Vec<usize> {
    flags.enumerate().filter(|(_, f)| *f).map(|(i, _)| i).take(count).collect()
}

/// Everything that happened in one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub discounted: f64,
    /// Undiscounted fleet reward per event.
    pub rewards: Vec<f64>,
    /// Devices repaired per event, ascending.
    pub repairs: Vec<Vec<usize>>,
    /// True working state per event, before repairs.
    pub working: Vec<Vec<bool>>,
}

/// Slow-information knowledge about a device.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Seen {
    Broken,
    Working,
    Fresh,
}

fn run_once(fs: &FleetScenario, ctx: &PolicyContext, run: usize) -> Result<RunTrace> {
    let streams = RunStreams::new(fs, run);
    let d = fs.adrs.len();
    let m = fs.config.crews;
    let beta = fs.config.model.discount;
    let mut working = vec![true; d];
    let mut belief = vec![1.0f64; d];
    let mut seen = vec![Seen::Fresh; d];
    let mut trace = RunTrace { discounted: 0.0, rewards: Vec::new(), repairs: Vec::new(), working: Vec::new() };
    let mut disc = 1.0;
    let mut indices = vec![0.0; d];
    for t in 0..fs.config.horizon {
        let repairs = match ctx {
            PolicyContext::FullOptimal(pol) => {
                let w = working.iter().filter(|&&x| x).count();
                first_matching(working.iter().map(|w| !w), pol.repairs[w])
            }
            PolicyContext::FullWhittle(g0) => {
                for i in 0..d {
                    indices[i] = if working[i] { 0.0 } else { g0[i] };
                }
                top_indices(&indices, m)
            }
            PolicyContext::SlowOptimal(pol) => {
                if seen.contains(&Seen::Fresh) {
                    Vec::new()
                } else {
                    let n0 = seen.iter().filter(|&&s| s == Seen::Broken).count();
                    let (a0, a1) = pol.repairs[n0];
                    let mut r = first_matching(seen.iter().map(|&s| s == Seen::Broken), a0);
                    r.extend(first_matching(seen.iter().map(|&s| s == Seen::Working), a1));
                    r.sort_unstable();
                    r
                }
            }
            PolicyContext::SlowWhittle(idx) => {
                for i in 0..d {
                    indices[i] = idx[i][match seen[i] {
                        Seen::Broken => 0,
                        Seen::Working => 1,
                        Seen::Fresh => 2,
                    }];
                }
                top_indices(&indices, m)
            }
            PolicyContext::PartialWhittle => {
                for i in 0..d {
                    indices[i] = fs.adrs[i].table.index(fs.grid.round_up(belief[i]));
                }
                top_indices(&indices, m)
            }
        };
        debug_assert!(repairs.len() <= m);

        let mut repaired = vec![false; d];
        for &i in &repairs {
            repaired[i] = true;
        }
        let mut reward = 0.0;
        for (i, adr) in fs.adrs.iter().enumerate() {
            let md = &adr.model;
            reward -= md.theta;
            if repaired[i] {
                reward += md.lambda - md.cost;
            } else if working[i] {
                reward += md.lambda;
            }
        }
        trace.discounted += disc * reward;
        disc *= beta;
        trace.rewards.push(reward);
        trace.working.push(working.clone());

        for (i, adr) in fs.adrs.iter().enumerate() {
            let up = repaired[i] || working[i];
            match ctx {
                PolicyContext::PartialWhittle => {
                    belief[i] = if repaired[i] {
                        1.0 - adr.model.fail_prob
                    } else {
                        let draw = adr.scenario.decode_point(streams.point(t, i, adr.scenario.point_dim()))?;
                        let x = adr.scenario.reading_from(working[i], &draw.z, draw.shed, draw.delta);
                        let lik = adr.scenario.observe(&x, &fs.config.vb)?;
                        adr.model.belief_update(Action::DoNothing, Belief::new(belief[i])?, &lik)?.value()
                    };
                }
                PolicyContext::SlowOptimal(_) | PolicyContext::SlowWhittle(_) => {
                    seen[i] = if up { Seen::Working } else { Seen::Broken };
                }
                _ => {}
            }
            working[i] = up && streams.fail(t, i) >= adr.model.fail_prob;
        }
        trace.repairs.push(repairs);
    }
    Ok(trace)
}

/// One simulated run of `policy`, for inspection.
pub fn run_policy(fs: &FleetScenario, policy: PolicyId, run: usize) -> Result<RunTrace> {
    run_once(fs, &PolicyContext::new(fs, policy)?, run)
}

/// How the reference policy's value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Valuation {
    /// Infinite-horizon value from the count dynamic program (optimal
    /// references only).
    Exact,
    /// Simulated on the same random streams as the policy.
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub valuation: Valuation,
    /// Must equal the scenario seed when given.
    pub seed: Option<u64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { valuation: Valuation::Simulated, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub policy: PolicyId,
    pub reference: PolicyId,
    pub runs: usize,
    pub policy_mean: f64,
    pub policy_stderr: f64,
    pub reference_value: f64,
    pub valuation: Valuation,
    /// `100 (V_ref - V_pol) / V_ref`.
    pub err_percent: f64,
    pub err_stderr: f64,
    /// `beta^T`: share of the value scale beyond the horizon.
    pub truncation_ratio: f64,
}

fn simulate_runs(fs: &FleetScenario, ctx: &PolicyContext) -> Result<Vec<f64>> {
    (0..fs.config.runs).into_par_iter().map(|r| run_once(fs, ctx, r).map(|t| t.discounted)).collect()
}

/// Mean discounted fleet reward of `policy` and its error relative to
/// `reference`.
pub fn simulate(fs: &FleetScenario, policy: PolicyId, reference: PolicyId, opts: &SimOptions) -> Result<SimReport> {
    if let Some(seed) = opts.seed {
        if seed != fs.config.seed {
            return Err(Error::SeedConflict { built: fs.config.seed, requested: seed });
        }
    }
    let truncation_ratio = fs.config.model.discount.powi(fs.config.horizon as i32);
    if truncation_ratio >= 0.01 {
        log::warn!("horizon {} leaves {:.1}% of the value scale untruncated", fs.config.horizon, 100.0 * truncation_ratio);
    }
    let pol = simulate_runs(fs, &PolicyContext::new(fs, policy)?)?;
    let (policy_mean, policy_stderr) = mean_and_stderr(&pol);
    let ref_ctx = PolicyContext::new(fs, reference)?;
    let (reference_value, err_stderr) = match opts.valuation {
        Valuation::Exact => {
            let v = match &ref_ctx {
                PolicyContext::FullOptimal(p) => p.initial_value(),
                PolicyContext::SlowOptimal(p) => p.initial_value,
                _ => return Err(invalid("valuation", format!("no exact value for {reference}"))),
            };
            (v, 100.0 * policy_stderr / v.abs())
        }
        Valuation::Simulated => {
            let refs = simulate_runs(fs, &ref_ctx)?;
            let (v, _) = mean_and_stderr(&refs);
            let diffs: Vec<f64> = refs.iter().zip(&pol).map(|(a, b)| a - b).collect();
            (v, 100.0 * mean_and_stderr(&diffs).1 / v.abs())
        }
    };
    Ok(SimReport {
        policy,
        reference,
        runs: fs.config.runs,
        policy_mean,
        policy_stderr,
        reference_value,
        valuation: opts.valuation,
        err_percent: 100.0 * (reference_value - policy_mean) / reference_value,
        err_stderr,
        truncation_ratio,
    })
}

/// Default valuation of a reference: exact for the optimal policies.
pub fn default_valuation(reference: PolicyId) -> Valuation {
    if reference.needs_identical_costs() {
        Valuation::Exact
    } else {
        Valuation::Simulated
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_examples() {
        let model = AdrModel::reference();
        assert!((periodic_value(&model, 1).unwrap() + 20.0).abs() < 1e-12);
        let (q, u) = best_period(&model, 200).unwrap();
        assert_eq!(q, 18);
        assert!((u - 4.10).abs() < 0.005);
        assert!(periodic_value(&model, 0).is_err());
    }

    #[test]
    fn periodic_matches_simulated_cycle() {
        // Exact expectation by summing the cycle: repair at t = 0, q, 2q, ...
        let model = AdrModel::reference();
        for q in [1u32, 3, 18, 40] {
            let mut v = 0.0;
            let mut alive = 1.0;
            for t in 0..2000u32 {
                let phase = t % q;
                if phase == 0 {
                    alive = 1.0;
                    v += 0.9f64.powi(t as i32) * (1.0 - 3.0);
                } else {
                    v += 0.9f64.powi(t as i32) * alive;
                }
                alive *= 0.95;
            }
            assert!((periodic_value(&model, q).unwrap() - v).abs() < 1e-9, "q={q}");
        }
    }

    #[test]
    fn binomial_sums_to_one() {
        for (n, q) in [(0, 0.3), (5, 0.95), (100, 0.05), (100, 0.95)] {
            let pmf = binomial_pmf(n, q);
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mean: f64 = pmf.iter().enumerate().map(|(k, w)| k as f64 * w).sum();
            assert!((mean - n as f64 * q).abs() < 1e-9);
        }
    }

    #[test]
    fn full_info_extremes() {
        let model = AdrModel::reference();
        let never = full_info_optimal_policy(&model.with_cost(11.0).unwrap(), 10, 3).unwrap();
        assert!(never.repairs.iter().all(|&a| a == 0));
        let free = full_info_optimal_policy(&model.with_cost(0.0).unwrap(), 10, 3).unwrap();
        for (w, &a) in free.repairs.iter().enumerate() {
            assert_eq!(a, 3.min(10 - w));
        }
    }

    /// Exact value of a stationary policy on the joint chain of `d` devices
    /// (bit i set = device i working), by iterating its linear operator.
    fn joint_policy_value(model: &AdrModel, d: usize, action: &[u32]) -> Vec<f64> {
        let s = 1usize << d;
        let p = model.fail_prob;
        let mut v = vec![0.0; s];
        for _ in 0..3000 {
            v = (0..s)
                .map(|st| {
                    let rep = action[st] as usize;
                    let mut r = 0.0;
                    let mut up_mask = 0usize;
                    for i in 0..d {
                        let up = st >> i & 1 == 1;
                        if rep >> i & 1 == 1 {
                            r += model.lambda - model.cost;
                            up_mask |= 1 << i;
                        } else if up {
                            r += model.lambda;
                            up_mask |= 1 << i;
                        }
                    }
                    let mut ev = 0.0;
                    for nx in 0..s {
                        if nx & !up_mask != 0 {
                            continue;
                        }
                        let mut w = 1.0;
                        for i in 0..d {
                            if up_mask >> i & 1 == 1 {
                                w *= if nx >> i & 1 == 1 { 1.0 - p } else { p };
                            }
                        }
                        ev += w * v[nx];
                    }
                    r + model.discount * ev
                })
                .collect();
        }
        v
    }

    #[test]
    fn full_info_matches_policy_enumeration() {
        let model = AdrModel::reference();
        let (d, m) = (3usize, 1usize);
        let s = 1usize << d;
        // Options per state: repair nothing or one broken device.
        let options: Vec<Vec<u32>> =
            (0..s).map(|st| std::iter::once(0).chain((0..d).filter(|i| st >> i & 1 == 0).map(|i| 1u32 << i)).collect()).collect();
        let mut best = vec![f64::NEG_INFINITY; s];
        let mut choice = vec![0usize; s];
        loop {
            let action: Vec<u32> = (0..s).map(|st| options[st][choice[st]]).collect();
            let v = joint_policy_value(&model, d, &action);
            for st in 0..s {
                best[st] = best[st].max(v[st]);
            }
            let mut k = 0;
            while k < s {
                choice[k] += 1;
                if choice[k] < options[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
            if k == s {
                break;
            }
        }
        // The enumerated optimum is attained by one policy simultaneously in
        // every state; compare per working count.
        let pol = full_info_optimal_policy(&model, d, m).unwrap();
        for st in 0..s {
            let w = st.count_ones() as usize;
            assert!((pol.values[w] - best[st]).abs() < 1e-8, "state {st}: {} vs {}", pol.values[w], best[st]);
        }
    }

    #[test]
    fn slow_info_matches_joint_backward_induction() {
        // Two devices, one crew. Per-device knowledge 0 = seen broken,
        // 1 = seen working, 2 = fresh. Rewards are expected over the
        // current state given that knowledge.
        let model = AdrModel::reference();
        let p = model.fail_prob;
        let prob_up = [0.0, 1.0 - p, 1.0];
        let idx = |a: usize, b: usize| a * 3 + b;
        let mut v = vec![0.0; 9];
        for _ in 0..400 {
            let mut nv = vec![f64::NEG_INFINITY; 9];
            for a in 0..3 {
                for b in 0..3 {
                    for rep in 0..3usize {
                        // rep: 0 none, 1 first, 2 second.
                        let ks = [a, b];
                        let mut r = 0.0;
                        // Outcome distribution per device: (prob seen working, prob seen broken)
                        let mut outs = [[0.0; 2]; 2];
                        for j in 0..2 {
                            if rep == j + 1 {
                                r += model.lambda - model.cost;
                                outs[j] = [1.0, 0.0];
                            } else {
                                r += model.lambda * prob_up[ks[j]];
                                outs[j] = [prob_up[ks[j]], 1.0 - prob_up[ks[j]]];
                            }
                        }
                        let mut ev = 0.0;
                        for (sa, wa) in [(1, outs[0][0]), (0, outs[0][1])] {
                            for (sb, wb) in [(1, outs[1][0]), (0, outs[1][1])] {
                                ev += wa * wb * v[idx(sa, sb)];
                            }
                        }
                        nv[idx(a, b)] = nv[idx(a, b)].max(r + model.discount * ev);
                    }
                }
            }
            v = nv;
        }
        let pol = slow_info_policy(&model, 2, 1).unwrap();
        let rel = (pol.initial_value - v[idx(2, 2)]).abs() / v[idx(2, 2)];
        assert!(rel < 0.005, "{} vs {}", pol.initial_value, v[idx(2, 2)]);
        assert!((pol.values[0] - v[idx(1, 1)]).abs() < 1e-8);
        assert!((pol.values[1] - v[idx(0, 1)]).abs() < 1e-8);
        assert!((pol.values[2] - v[idx(0, 0)]).abs() < 1e-8);
    }

    #[test]
    fn top_indices_ties_and_positivity() {
        assert_eq!(top_indices(&[0.0, 2.0, 2.0, 1.0, 3.0], 3), vec![1, 2, 4]);
        assert_eq!(top_indices(&[0.0, 0.0], 2), Vec::<usize>::new());
        assert_eq!(top_indices(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert!((pairwise_sum(&xs) - xs.iter().sum::<f64>()).abs() < 1e-10);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyId::ALL {
            assert_eq!(p.name().parse::<PolicyId>().unwrap(), p);
        }
        assert!("bogus".parse::<PolicyId>().is_err());
    }
}
