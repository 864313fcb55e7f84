//! Single-device maintenance model: rewards, state transitions and the
//! Bayesian belief update shared by every other module.
//!
//! A device is either [`AdrState::Working`] or [`AdrState::Broken`]. Before
//! each demand-response event the operator either does nothing or sends a
//! crew, which resets the device to working for that event. The belief `b`
//! is the posterior probability that the device is working during the next
//! event.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Operator decision taken before an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    DoNothing,
    SendCrew,
}

/// True (hidden) device state during an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdrState {
    Broken,
    Working,
}

impl AdrState {
    pub fn index(self) -> usize {
        match self {
            AdrState::Broken => 0,
            AdrState::Working => 1,
        }
    }
}

/// Probability that the device is working.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Belief(f64);

impl Belief {
    pub const CERTAIN_BROKEN: Belief = Belief(0.0);
    pub const CERTAIN_WORKING: Belief = Belief(1.0);

    pub fn new(b: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&b) {
            Ok(Belief(b))
        } else {
            Err(invalid("belief", format!("{b} not in [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Log-densities of one reading vector under the broken and working
/// hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodPair {
    pub log_q0: f64,
    pub log_q1: f64,
}

impl LikelihoodPair {
    pub fn new(log_q0: f64, log_q1: f64) -> Self {
        LikelihoodPair { log_q0, log_q1 }
    }

    /// `log Q1 - log Q0`; `None` when both densities vanish or either is NaN.
    pub fn log_ratio(&self) -> Option<f64> {
        let (l0, l1) = (self.log_q0, self.log_q1);
        if l0.is_nan() || l1.is_nan() || (l0 == f64::NEG_INFINITY && l1 == f64::NEG_INFINITY) {
            return None;
        }
        Some(l1 - l0)
    }
}

/// Economic and failure parameters of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdrModel {
    /// Expected savings per event when the device works.
    pub lambda: f64,
    /// Cost of dispatching a crew.
    pub cost: f64,
    /// Customer compensation paid every event.
    pub theta: f64,
    /// Probability a working device fails before the next event.
    pub fail_prob: f64,
    /// Discount factor between events.
    pub discount: f64,
}

impl AdrModel {
    pub fn new(lambda: f64, cost: f64, fail_prob: f64, discount: f64) -> Result<Self> {
        Self::with_theta(lambda, cost, 0.0, fail_prob, discount)
    }

    pub fn with_theta(lambda: f64, cost: f64, theta: f64, fail_prob: f64, discount: f64) -> Result<Self> {
        let m = AdrModel { lambda, cost, theta, fail_prob, discount };
        m.validate()?;
        Ok(m)
    }

    /// Parameters used throughout the numerical study: `lambda = 1`,
    /// `c = 3`, `p = 0.05`, `beta = 0.9`.
    pub fn reference() -> Self {
        AdrModel { lambda: 1.0, cost: 3.0, theta: 0.0, fail_prob: 0.05, discount: 0.9 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fail_prob > 0.0 && self.fail_prob < 1.0) {
            return Err(invalid("p", format!("{} not in (0, 1)", self.fail_prob)));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(invalid("beta", format!("{} not in (0, 1)", self.discount)));
        }
        if !(self.cost >= 0.0 && self.cost.is_finite()) {
            return Err(invalid("c", format!("{} must be finite and >= 0", self.cost)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("{} must be finite and >= 0", self.lambda)));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(invalid("theta", format!("{} must be finite and >= 0", self.theta)));
        }
        Ok(())
    }

    /// Same device with a different repair cost.
    pub fn with_cost(&self, cost: f64) -> Result<Self> {
        Self::with_theta(self.lambda, cost, self.theta, self.fail_prob, self.discount)
    }

    /// Profit of one event for a known state.
    pub fn state_reward(&self, a: Action, s: AdrState) -> f64 {
        match (a, s) {
            (Action::DoNothing, AdrState::Broken) => -self.theta,
            (Action::DoNothing, AdrState::Working) => self.lambda - self.theta,
            (Action::SendCrew, _) => self.lambda - self.theta - self.cost,
        }
    }

    /// Expected profit of one event in belief `b`.
    pub fn reward(&self, a: Action, b: Belief) -> f64 {
        match a {
            Action::DoNothing => self.lambda * b.value() - self.theta,
            Action::SendCrew => self.lambda - self.cost - self.theta,
        }
    }

    /// Distribution of the next state, indexed `[broken, working]`.
    pub fn transition_row(&self, a: Action, s: AdrState) -> [f64; 2] {
        let p = self.fail_prob;
        match (a, s) {
            (Action::DoNothing, AdrState::Broken) => [1.0, 0.0],
            (Action::DoNothing, AdrState::Working) | (Action::SendCrew, _) => [p, 1.0 - p],
        }
    }

    /// Belief that the device works during the next event after acting `a`
    /// in belief `b` and observing readings with likelihoods `lik`.
    ///
    /// Only `log Q1 - log Q0` enters the update, evaluated as a logistic of
    /// the likelihood ratio plus the prior log-odds.
    pub fn belief_update(&self, a: Action, b: Belief, lik: &LikelihoodPair) -> Result<Belief> {
        let ratio = lik.log_ratio().ok_or(Error::ImpossibleObservation)?;
        let keep = 1.0 - self.fail_prob;
        if a == Action::SendCrew {
            return Ok(Belief(keep));
        }
        let b = b.value();
        if b == 0.0 {
            // W = Q0 must be positive for the observation to be possible.
            if lik.log_q0 == f64::NEG_INFINITY {
                return Err(Error::ImpossibleObservation);
            }
            return Ok(Belief(0.0));
        }
        if b == 1.0 {
            if lik.log_q1 == f64::NEG_INFINITY {
                return Err(Error::ImpossibleObservation);
            }
            return Ok(Belief(keep));
        }
        let log_odds = ratio + (b.ln() - (-b).ln_1p());
        Ok(Belief(keep * logistic(log_odds)))
    }
}

/// Numerically stable `1 / (1 + exp(-t))`.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}
