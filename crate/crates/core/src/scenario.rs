//! Scenario files: model, observation, solver, index and fleet settings in
//! TOML with unknown keys rejected.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fleet::{CostMode, FleetConfig, ObsTemplate, PolicyId, SnrMode};
use crate::model::AdrModel;
use crate::obsmodel::{sigma_from_snr, ObsCase, ObsScenario};
use crate::solver::{SolveMethod, SolveOptions};
use crate::vbayes::{QuadratureRule, VbSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub model: ModelSection,
    pub observation: ObservationSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub whittle: WhittleSection,
    #[serde(default)]
    pub fleet: FleetSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lambda: f64,
    pub c: f64,
    #[serde(default)]
    pub theta: f64,
    pub p: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    pub case: ObsCase,
    pub m: usize,
    #[serde(default)]
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub nu0: f64,
    #[serde(default = "default_eta0_relative")]
    pub eta0_relative: f64,
    #[serde(default = "default_baseline")]
    pub baseline: f64,
}

fn default_eta0_relative() -> f64 {
    0.1
}

fn default_baseline() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Vi,
    Lp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub n: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    pub method: MethodName,
    pub tol: f64,
    /// Index of the first quasi-random point.
    pub qmc_start: u64,
    pub quadrature: QuadratureRule,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection { n: 100, samples: 5000, method: MethodName::Vi, tol: 1e-9, qmc_start: 1, quadrature: QuadratureRule::Rectangle }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhittleSection {
    /// Index accuracy as a multiple of lambda.
    pub epsilon: f64,
}

impl Default for WhittleSection {
    fn default() -> Self {
        WhittleSection { epsilon: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSection {
    #[serde(rename = "D")]
    pub adrs: usize,
    #[serde(rename = "M")]
    pub crews: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub cost_mode: CostMode,
    /// SNR settings to simulate; each entry is `fixed` or `uniform`.
    /// Empty means the observation section's SNR.
    #[serde(default)]
    pub snr: Vec<SnrMode>,
    /// `policy:reference` pairs.
    pub compare: Vec<String>,
}

impl Default for FleetSection {
    fn default() -> Self {
        FleetSection {
            adrs: 100,
            crews: 5,
            horizon: 44,
            runs: 100,
            seed: 1,
            cost_mode: CostMode::Identical,
            snr: Vec::new(),
            compare: vec!["partial-whittle:full-optimal".into()],
        }
    }
}

impl ScenarioFile {
    /// Parses and validates; errors carry the line number of the problem.
    pub fn parse(text: &str) -> Result<Self> {
        let scn: ScenarioFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let msg = e.message().to_string();
            match line {
                Some(l) => invalid("scenario", format!("line {l}: {msg}")),
                None => invalid("scenario", msg),
            }
        })?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.adr_model()?;
        self.obs_scenario()?;
        if self.solver.n < 2 {
            return Err(invalid("solver.n", "need at least 2"));
        }
        if self.solver.samples == 0 {
            return Err(invalid("solver.N", "need at least one sample"));
        }
        if !(self.solver.tol > 0.0) {
            return Err(invalid("solver.tol", "must be positive"));
        }
        if self.solver.qmc_start == 0 {
            return Err(invalid("solver.qmc_start", "index 0 is the all-zero point"));
        }
        if !(self.whittle.epsilon > 0.0) {
            return Err(invalid("whittle.epsilon", "must be positive"));
        }
        self.comparisons()?;
        for cfg in self.fleet_configs()? {
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn adr_model(&self) -> Result<AdrModel> {
        let m = &self.model;
        AdrModel::with_theta(m.lambda, m.c, m.theta, m.p, m.beta)
    }

    fn sigma(&self) -> Result<f64> {
        let o = &self.observation;
        match (o.sigma, o.snr_db) {
            (Some(s), None) => Ok(s),
            (None, Some(db)) => Ok(sigma_from_snr(o.nu0, db)),
            _ => Err(invalid("observation", "give exactly one of `sigma` and `snr_db`")),
        }
    }

    pub fn obs_scenario(&self) -> Result<ObsScenario> {
        let o = &self.observation;
        let sigma = self.sigma()?;
        if !(o.eta0_relative > 0.0) {
            return Err(invalid("observation.eta0_relative", "must be positive"));
        }
        let sd = o.eta0_relative * sigma;
        let d = if o.case.has_mismatch() {
            o.d
        } else if o.d != 0 {
            return Err(invalid("observation.d", format!("case {} has synchronized clocks", o.case)));
        } else {
            0
        };
        ObsScenario::new(o.case, o.m, d, sigma, o.nu0, Some(1.0 / (sd * sd)), vec![o.baseline; o.m + 2 * d])
    }

    pub fn snr_db(&self) -> Result<f64> {
        Ok(20.0 * (self.observation.nu0 / self.sigma()?).log10())
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            method: match self.solver.method {
                MethodName::Vi => SolveMethod::ValueIteration,
                MethodName::Lp => SolveMethod::LinearProgram,
            },
            tol: self.solver.tol,
            ..SolveOptions::default()
        }
    }

    pub fn vb_settings(&self) -> VbSettings {
        VbSettings { rule: self.solver.quadrature, ..VbSettings::default() }
    }

    pub fn comparisons(&self) -> Result<Vec<(PolicyId, PolicyId)>> {
        self.fleet
            .compare
            .iter()
            .map(|s| {
                let (a, b) = s.split_once(':').ok_or_else(|| invalid("fleet.compare", format!("`{s}` is not policy:reference")))?;
                Ok((a.trim().parse()?, b.trim().parse()?))
            })
            .collect()
    }

    /// One fleet configuration per SNR setting.
    pub fn fleet_configs(&self) -> Result<Vec<FleetConfig>> {
        let f = &self.fleet;
        let o = &self.observation;
        if !(o.nu0 > 0.0) {
            return Err(invalid("observation.nu0", "fleet SNR settings need a positive expected shed"));
        }
        let snrs = if f.snr.is_empty() { vec![SnrMode::Fixed { db: self.snr_db()? }] } else { f.snr.clone() };
        let observation =
            ObsTemplate { case: o.case, m: o.m, d: if o.case.has_mismatch() { o.d } else { 0 }, nu0: o.nu0, shed_sd_relative: o.eta0_relative, baseline: o.baseline };
        let model = self.adr_model()?;
        Ok(snrs
            .into_iter()
            .map(|snr_mode| FleetConfig {
                adrs: f.adrs,
                crews: f.crews,
                horizon: f.horizon,
                runs: f.runs,
                seed: f.seed,
                model,
                observation,
                cost_mode: f.cost_mode,
                snr_mode,
                grid: self.solver.n,
                samples: self.solver.samples,
                vb: self.vb_settings(),
            })
            .collect())
    }

    /// The study's reference scenario for one observation case.
    pub fn reference(case: ObsCase, snr_db: f64) -> Self {
        ScenarioFile {
            model: ModelSection { lambda: 1.0, c: 3.0, theta: 0.0, p: 0.05, beta: 0.9 },
            observation: ObservationSection {
                case,
                m: 10,
                d: if case.has_mismatch() { 2 } else { 0 },
                sigma: None,
                snr_db: Some(snr_db),
                nu0: 1.0,
                eta0_relative: 0.1,
                baseline: 5.0,
            },
            solver: SolverSection::default(),
            whittle: WhittleSection::default(),
            fleet: FleetSection::default(),
        }
    }
}
