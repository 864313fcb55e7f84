//! Whittle indices: the smallest subsidy for doing nothing that makes
//! doing nothing optimal at a given belief.

use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};
use crate::model::AdrModel;
use crate::solver::{solve_value_from, ContinuationTable, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexOptions {
    /// Absolute accuracy of each index, in reward units.
    pub epsilon: f64,
    /// First subsidy tried when bounding the index range.
    pub mu0: f64,
    /// The doubling search gives up at `mu0 * 2^max_doublings`.
    pub max_doublings: u32,
    pub solve: SolveOptions,
}

impl IndexOptions {
    /// `epsilon = 1e-3 * lambda`, doubling from `lambda`.
    pub fn for_model(model: &AdrModel) -> Self {
        IndexOptions { epsilon: 1e-3 * model.lambda, mu0: model.lambda, max_doublings: 40, solve: SolveOptions::default() }
    }
}

/// Threshold index as a signed integer, `-1` meaning never repair.
fn probe(model: &AdrModel, cont: &ContinuationTable, mu: f64, opts: &IndexOptions, warm: &mut Option<Vec<f64>>) -> Result<i64> {
    let vt = solve_value_from(model, cont, mu, &opts.solve, warm.as_deref())?;
    *warm = Some(vt.v);
    Ok(vt.threshold_index.map_or(-1, |k| k as i64))
}

/// Smallest `mu0 * 2^i` at which doing nothing is optimal on the whole grid.
pub fn find_mu_bar(model: &AdrModel, cont: &ContinuationTable, opts: &IndexOptions) -> Result<f64> {
    let mut warm = None;
    let mut mu = opts.mu0;
    for _ in 0..=opts.max_doublings {
        if probe(model, cont, mu, opts, &mut warm)? < 0 {
            return Ok(mu);
        }
        mu *= 2.0;
    }
    Err(Error::SubsidyBoundExceeded { cap: mu / 2.0 })
}

/// Index of grid point `k` by bisection on `[0, mu_bar]`.
///
/// Every probe is checked against the earlier ones; a larger subsidy that
/// yields a larger threshold is reported as an error.
pub fn whittle_index(model: &AdrModel, cont: &ContinuationTable, k: usize, mu_bar: f64, opts: &IndexOptions) -> Result<f64> {
    if k > cont.n() {
        return Err(invalid("k", format!("{k} beyond grid of {}", cont.n())));
    }
    let mut warm = None;
    let mut probes: Vec<(f64, i64)> = Vec::new();
    let mut checked = |mu: f64, warm: &mut Option<Vec<f64>>| -> Result<i64> {
        let t = probe(model, cont, mu, opts, warm)?;
        for &(m, s) in &probes {
            let (lo, hi) = if m < mu { ((m, s), (mu, t)) } else { ((mu, t), (m, s)) };
            if hi.1 > lo.1 {
                return Err(Error::NonMonotoneThreshold {
                    low_mu: lo.0,
                    low_index: usize::try_from(lo.1).ok(),
                    high_mu: hi.0,
                    high_index: usize::try_from(hi.1).ok(),
                });
            }
        }
        probes.push((mu, t));
        Ok(t)
    };
    let k = k as i64;
    if checked(0.0, &mut warm)? < k {
        return Ok(0.0);
    }
    if checked(mu_bar, &mut warm)? >= k {
        return Err(invalid("mu_bar", format!("threshold still reaches {k} at {mu_bar}")));
    }
    let (mut lo, mut hi) = (0.0, mu_bar);
    while hi - lo > opts.epsilon {
        let mid = 0.5 * (lo + hi);
        if checked(mid, &mut warm)? < k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Indices for every grid point of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct WhittleTable {
    pub index_values: Vec<f64>,
    pub mu_bar: f64,
    pub epsilon: f64,
    /// Repair cost the indices refer to.
    pub cost: f64,
    /// Largest number of grid cells a probe threshold had to be moved to
    /// keep thresholds monotone in the subsidy.
    pub clipped_cells: usize,
}

impl WhittleTable {
    /// All indices of one device, sharing subsidy probes between grid points.
    ///
    /// The subsidy interval is split recursively; an interval whose end
    /// thresholds agree holds no breakpoint. A probe threshold outside the
    /// range of its interval ends is clipped back into it and logged.
    pub fn compute(model: &AdrModel, cont: &ContinuationTable, opts: &IndexOptions) -> Result<Self> {
        let mu_bar = find_mu_bar(model, cont, opts)?;
        let n = cont.n();
        let mut index_values = vec![0.0; n + 1];
        let mut warm = None;
        let t0 = probe(model, cont, 0.0, opts, &mut warm)?;
        let mut clipped = 0usize;
        // Explicit stack of (lo, t(lo), hi, t(hi)) keeps probes in increasing-mu order.
        let mut stack = vec![(0.0, t0, mu_bar, -1i64)];
        while let Some((lo, tlo, hi, thi)) = stack.pop() {
            if tlo == thi {
                continue;
            }
            if hi - lo <= opts.epsilon {
                for k in (thi + 1)..=tlo {
                    index_values[k as usize] = hi;
                }
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let raw = probe(model, cont, mid, opts, &mut warm)?;
            let t = raw.clamp(thi, tlo);
            if t != raw {
                let cells = (t - raw).unsigned_abs() as usize;
                log::warn!("threshold {raw} at subsidy {mid} clipped to {t}");
                clipped = clipped.max(cells);
            }
            stack.push((mid, t, hi, thi));
            stack.push((lo, tlo, mid, t));
        }
        Ok(WhittleTable { index_values, mu_bar, epsilon: opts.epsilon, cost: model.cost, clipped_cells: clipped })
    }

    /// Indices of the same device with a higher repair cost.
    ///
    /// Raising the cost by `x` is equivalent to raising the subsidy by `x`,
    /// so every index drops by `x` (and stays non-negative).
    pub fn for_cost(&self, cost: f64) -> Result<Self> {
        if cost < self.cost {
            return Err(invalid("cost", format!("{cost} below table cost {}", self.cost)));
        }
        let shift = cost - self.cost;
        Ok(WhittleTable {
            index_values: self.index_values.iter().map(|v| (v - shift).max(0.0)).collect(),
            cost,
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.index_values.len() - 1
    }

    pub fn index(&self, k: usize) -> f64 {
        self.index_values[k]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| Error::Cache(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "belief", "index"]).map_err(err)?;
        let n = self.n();
        for (k, v) in self.index_values.iter().enumerate() {
            w.write_record([k.to_string(), (k as f64 / n as f64).to_string(), v.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Cache(e.to_string()))
    }

    /// Reads the index column back; metadata fields are taken from the caller.
    pub fn read_csv<R: Read>(input: R, mu_bar: f64, epsilon: f64, cost: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut index_values = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Cache(e.to_string()))?;
            let k: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Cache("bad k".into()))?;
            if k != i {
                return Err(Error::Cache(format!("row {i} has k = {k}")));
            }
            let v: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Cache("bad index".into()))?;
            index_values.push(v);
        }
        if index_values.len() < 2 {
            return Err(Error::Cache("table too short".into()));
        }
        Ok(WhittleTable { index_values, mu_bar, epsilon, cost, clipped_cells: 0 })
    }
}

/// Small finite MDP with a passive (0) and an active (1) action per state.
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    pub rewards: Vec<[f64; 2]>,
    pub transitions: Vec<[Vec<(usize, f64)>; 2]>,
    pub discount: f64,
}

impl FiniteMdp {
    /// Action values under the passive subsidy `mu`, by value iteration to
    /// machine precision.
    pub fn q_values(&self, mu: f64) -> Vec<[f64; 2]> {
        let s = self.rewards.len();
        let mut v = vec![0.0; s];
        let q_of = |v: &[f64]| -> Vec<[f64; 2]> {
            (0..s)
                .map(|i| {
                    let mut q = [0.0; 2];
                    for a in 0..2 {
                        let ev: f64 = self.transitions[i][a].iter().map(|&(j, p)| p * v[j]).sum();
                        q[a] = self.rewards[i][a] + if a == 0 { mu } else { 0.0 } + self.discount * ev;
                    }
                    q
                })
                .collect()
        };
        loop {
            let q = q_of(&v);
            let next: Vec<f64> = q.iter().map(|q| q[0].max(q[1])).collect();
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = 1.0 + next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            v = next;
            if delta <= 1e-14 * scale {
                return q_of(&v);
            }
        }
    }

    fn passive_optimal(&self, state: usize, mu: f64) -> bool {
        let q = self.q_values(mu)[state];
        q[0] >= q[1]
    }

    /// Smallest non-negative subsidy making the passive action optimal in
    /// `state`, to within `tol`.
    pub fn subsidy_index(&self, state: usize, tol: f64) -> Result<f64> {
        if self.passive_optimal(state, 0.0) {
            return Ok(0.0);
        }
        let mut hi = 1.0f64;
        while !self.passive_optimal(state, hi) {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::SubsidyBoundExceeded { cap: hi });
            }
        }
        let mut lo = 0.0;
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.passive_optimal(state, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

/// Single device whose state is observed before every decision.
/// State 0 is broken, state 1 working.
pub fn full_info_mdp(model: &AdrModel) -> FiniteMdp {
    let p = model.fail_prob;
    let fresh = vec![(0, p), (1, 1.0 - p)];
    let r_active = model.lambda - model.cost - model.theta;
    FiniteMdp {
        rewards: vec![[-model.theta, r_active], [model.lambda - model.theta, r_active]],
        transitions: vec![[vec![(0, 1.0)], fresh.clone()], [fresh.clone(), fresh]],
        discount: model.discount,
    }
}

/// Indices of the broken and the working state under full information.
pub fn full_info_index(model: &AdrModel) -> Result<(f64, f64)> {
    let mdp = full_info_mdp(model);
    let tol = 1e-9 * model.lambda;
    Ok((mdp.subsidy_index(0, tol)?, mdp.subsidy_index(1, tol)?))
}

/// Single device whose state is revealed after each event. States: 0 has
/// belief 0 (seen broken), 1 has belief `1-p` (seen working or repaired),
/// 2 has belief 1 (fresh deployment, only at the start).
pub fn slow_info_mdp(model: &AdrModel) -> FiniteMdp {
    let p = model.fail_prob;
    let lam = model.lambda;
    let r_active = lam - model.cost - model.theta;
    FiniteMdp {
        rewards: vec![[-model.theta, r_active], [lam * (1.0 - p) - model.theta, r_active], [lam - model.theta, r_active]],
        transitions: vec![
            [vec![(0, 1.0)], vec![(1, 1.0)]],
            [vec![(0, p), (1, 1.0 - p)], vec![(1, 1.0)]],
            [vec![(1, 1.0)], vec![(1, 1.0)]],
        ],
        discount: model.discount,
    }
}

/// Indices of the slow-information states with belief 0 and `1-p`.
pub fn slow_info_index(model: &AdrModel) -> Result<(f64, f64)> {
    let mdp = slow_info_mdp(model);
    let tol = 1e-9 * model.lambda;
    Ok((mdp.subsidy_index(0, tol)?, mdp.subsidy_index(1, tol)?))
}
