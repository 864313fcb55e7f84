//! Gaussian meter-reading model for the four observation settings and
//! quasi-Monte-Carlo generation of reading vectors.
//!
//! During an event a working device sheds `r` from the baseline consumption
//! on the `m` readings of its shed window; a broken device sheds nothing.
//! Readings carry i.i.d. `N(0, sigma^2)` noise. When the meter clock may be
//! off by up to `d` steps the reading vector has length `m + 2d` and the
//! window is shifted by an unknown `delta` in `-d..=d`.

mod normal;
mod sobol;
mod sobol_table;

use serde::{Deserialize, Serialize};

pub use normal::{inv_norm_cdf, log_phi, norm_cdf, HALF_LN_2PI};
pub use sobol::QmcStream;

use crate::error::{invalid, Error, Result};
use crate::model::{Belief, LikelihoodPair};
use crate::vbayes::{self, VbPosterior, VbSettings};

/// Observation setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObsCase {
    /// Synchronized clocks, deterministic shed.
    A,
    /// Possibly mismatched clocks, deterministic shed.
    B,
    /// Synchronized clocks, Gaussian shed.
    C,
    /// Possibly mismatched clocks, Gaussian shed.
    D,
}

impl ObsCase {
    pub const ALL: [ObsCase; 4] = [ObsCase::A, ObsCase::B, ObsCase::C, ObsCase::D];

    pub fn has_mismatch(self) -> bool {
        matches!(self, ObsCase::B | ObsCase::D)
    }

    pub fn random_shed(self) -> bool {
        matches!(self, ObsCase::C | ObsCase::D)
    }

    pub fn letter(self) -> char {
        match self {
            ObsCase::A => 'A',
            ObsCase::B => 'B',
            ObsCase::C => 'C',
            ObsCase::D => 'D',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'A' => Some(ObsCase::A),
            'B' => Some(ObsCase::B),
            'C' => Some(ObsCase::C),
            'D' => Some(ObsCase::D),
            _ => None,
        }
    }
}

impl std::fmt::Display for ObsCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Metered consumption during one event.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadingVector(pub Vec<f64>);

impl ReadingVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Observation model of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsScenario {
    case: ObsCase,
    m: usize,
    d: usize,
    sigma: f64,
    nu0: f64,
    /// Shed precision; `None` for the deterministic-shed settings.
    eta0: Option<f64>,
    baseline: Vec<f64>,
}

impl ObsScenario {
    pub fn new(
        case: ObsCase,
        m: usize,
        d: usize,
        sigma: f64,
        nu0: f64,
        eta0: Option<f64>,
        baseline: Vec<f64>,
    ) -> Result<Self> {
        if m == 0 {
            return Err(invalid("m", "need at least one reading per event"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", format!("{sigma} must be positive")));
        }
        if !nu0.is_finite() {
            return Err(invalid("nu0", "must be finite"));
        }
        if !case.has_mismatch() && d != 0 {
            return Err(invalid("d", format!("case {case} assumes synchronized clocks")));
        }
        let eta0 = if case.random_shed() {
            match eta0 {
                Some(e) if e > 0.0 && e.is_finite() => Some(e),
                _ => return Err(invalid("eta0", format!("case {case} needs a positive finite shed precision"))),
            }
        } else {
            None
        };
        if baseline.len() != m + 2 * d {
            return Err(Error::DimensionMismatch { expected: m + 2 * d, got: baseline.len() });
        }
        if baseline.iter().any(|y| !y.is_finite()) {
            return Err(invalid("baseline", "must be finite"));
        }
        Ok(ObsScenario { case, m, d, sigma, nu0, eta0, baseline })
    }

    /// Scenario parameterized by signal-to-noise ratio
    /// `SNR = 20 log10(nu0 / sigma)` and shed standard deviation
    /// `eta0^{-1/2} = eta0_relative * sigma`, with a flat baseline.
    pub fn from_snr(
        case: ObsCase,
        m: usize,
        d: usize,
        snr_db: f64,
        nu0: f64,
        eta0_relative: f64,
        baseline_level: f64,
    ) -> Result<Self> {
        if !(nu0 > 0.0) {
            return Err(invalid("nu0", "SNR parameterization needs a positive expected shed"));
        }
        if !(eta0_relative > 0.0) {
            return Err(invalid("eta0_relative", "must be positive"));
        }
        let sigma = sigma_from_snr(nu0, snr_db);
        let sd = eta0_relative * sigma;
        let d = if case.has_mismatch() { d } else { 0 };
        Self::new(case, m, d, sigma, nu0, Some(1.0 / (sd * sd)), vec![baseline_level; m + 2 * d])
    }

    /// The study's setting: `m = 10`, `d = 2` for mismatched cases,
    /// `nu0 = 1`, shed deviation `0.1 sigma`.
    pub fn reference(case: ObsCase, snr_db: f64) -> Self {
        Self::from_snr(case, 10, 2, snr_db, 1.0, 0.1, 5.0).expect("reference parameters are valid")
    }

    pub fn case(&self) -> ObsCase {
        self.case
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn nu0(&self) -> f64 {
        self.nu0
    }
    pub fn eta0(&self) -> Option<f64> {
        self.eta0
    }
    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn snr_db(&self) -> f64 {
        20.0 * (self.nu0 / self.sigma).log10()
    }

    /// Number of readings per event, `m + 2d`.
    pub fn reading_len(&self) -> usize {
        self.m + 2 * self.d
    }

    /// Number of mismatch values, `2d + 1`.
    pub fn n_offsets(&self) -> usize {
        2 * self.d + 1
    }

    /// Dimension of the unit-cube points consumed by [`Self::sample_reading`]:
    /// one coordinate per reading, one branch selector, one for the shed
    /// when it is random, one for the clock offset when it is unknown.
    pub fn point_dim(&self) -> usize {
        self.reading_len() + 1 + usize::from(self.case.random_shed()) + usize::from(self.case.has_mismatch())
    }

    /// Zero-based reading indices covered by the shed window for offset
    /// `delta` in `-d..=d`.
    pub fn window(&self, delta: i64) -> std::ops::Range<usize> {
        debug_assert!(delta.unsigned_abs() as usize <= self.d);
        let start = (self.d as i64 + delta) as usize;
        start..start + self.m
    }

    /// Residuals `x - y`.
    pub fn residuals(&self, x: &ReadingVector) -> Result<Vec<f64>> {
        self.check_len(x)?;
        Ok(x.0.iter().zip(&self.baseline).map(|(x, y)| x - y).collect())
    }

    /// `sum_{i in I_delta} (x_i - y_i)` for each offset, ordered `-d..=d`.
    pub fn window_sums(&self, residuals: &[f64]) -> Vec<f64> {
        (0..self.n_offsets()).map(|j| residuals[j..j + self.m].iter().sum()).collect()
    }

    fn check_len(&self, x: &ReadingVector) -> Result<()> {
        if x.len() != self.reading_len() {
            return Err(Error::DimensionMismatch { expected: self.reading_len(), got: x.len() });
        }
        Ok(())
    }

    /// Reading vector generated from a unit-cube point for a device that
    /// works with probability `b`.
    ///
    /// The branch coordinate selects the working branch when it falls below
    /// `b`, so a single point set serves every belief.
    pub fn sample_reading(&self, b: Belief, point: &[f64]) -> Result<ReadingVector> {
        let draw = self.decode_point(point)?;
        let working = draw.selector < b.value();
        Ok(self.reading_from(working, &draw.z, draw.shed, draw.delta))
    }

    /// Decodes a unit-cube point into normal noise, branch selector, shed
    /// and offset.
    pub fn decode_point(&self, point: &[f64]) -> Result<PointDraw> {
        if point.len() != self.point_dim() {
            return Err(Error::DimensionMismatch { expected: self.point_dim(), got: point.len() });
        }
        let len = self.reading_len();
        let z = point[..len].iter().map(|&u| inv_norm_cdf(u)).collect::<Result<Vec<_>>>()?;
        let selector = point[len];
        let mut next = len + 1;
        let shed = match self.eta0 {
            Some(eta0) => {
                let u = point[next];
                next += 1;
                self.nu0 + inv_norm_cdf(u)? / eta0.sqrt()
            }
            None => self.nu0,
        };
        let delta = if self.case.has_mismatch() {
            self.offset_from_uniform(point[next])
        } else {
            0
        };
        Ok(PointDraw { z, selector, shed, delta })
    }

    /// Maps a uniform draw onto `-d..=d` with equal mass per value.
    pub fn offset_from_uniform(&self, u: f64) -> i64 {
        let k = ((u * self.n_offsets() as f64) as usize).min(self.n_offsets() - 1);
        k as i64 - self.d as i64
    }

    /// `y + sigma z` for a broken device, `y - r 1_delta + sigma z` for a
    /// working one.
    pub fn reading_from(&self, working: bool, z: &[f64], shed: f64, delta: i64) -> ReadingVector {
        let mut x: Vec<f64> = self.baseline.iter().zip(z).map(|(y, z)| y + self.sigma * z).collect();
        if working {
            for i in self.window(delta) {
                x[i] -= shed;
            }
        }
        ReadingVector(x)
    }

    /// `log Q0(x)`: all readings at baseline.
    pub fn log_q0(&self, residuals: &[f64]) -> f64 {
        let ln_sigma = self.sigma.ln();
        residuals.iter().map(|e| log_phi(e / self.sigma) - ln_sigma).sum()
    }

    /// Likelihoods of `x` under both states. Settings with a latent shed or
    /// offset need the fitted posterior of that reading vector.
    pub fn likelihood(&self, x: &ReadingVector, posterior: Option<&VbPosterior>) -> Result<LikelihoodPair> {
        let e = self.residuals(x)?;
        let log_q0 = self.log_q0(&e);
        let log_q1 = match self.case {
            ObsCase::A => {
                let ln_sigma = self.sigma.ln();
                e.iter().map(|e| log_phi((e + self.nu0) / self.sigma) - ln_sigma).sum()
            }
            c => {
                let post = posterior.ok_or(Error::MissingPosterior(c.letter()))?;
                vbayes::q1_quadrature(self, x, post, vbayes::DEFAULT_QUADRATURE_HALF_WIDTH)?
            }
        };
        Ok(LikelihoodPair { log_q0, log_q1 })
    }

    /// Likelihoods with the posterior fitted on the spot when needed.
    pub fn observe(&self, x: &ReadingVector, settings: &VbSettings) -> Result<LikelihoodPair> {
        match self.case {
            ObsCase::A => self.likelihood(x, None),
            _ => {
                let post = vbayes::fit_posterior(self, x, settings)?;
                let e = self.residuals(x)?;
                let log_q0 = self.log_q0(&e);
                let log_q1 = vbayes::q1_quadrature(self, x, &post, settings.quadrature_half_width)?;
                Ok(LikelihoodPair { log_q0, log_q1 })
            }
        }
    }
}

/// Decoded unit-cube point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDraw {
    pub z: Vec<f64>,
    pub selector: f64,
    pub shed: f64,
    pub delta: i64,
}

/// `sigma = nu0 10^{-SNR/20}`.
pub fn sigma_from_snr(nu0: f64, snr_db: f64) -> f64 {
    nu0 * 10f64.powf(-snr_db / 20.0)
}
