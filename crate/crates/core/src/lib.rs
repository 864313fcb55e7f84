//! Maintenance scheduling for automated demand-response devices.
//!
//! Each device is a two-state machine (working or broken) observed only
//! through noisy smart-meter readings taken during demand-response events.
//! The crate computes optimal repair thresholds on a discretized belief
//! space, Whittle indices for fleets with a limited number of crews, and
//! simulates fleet policies against full-information and slow-information
//! references.

pub mod cli;
pub mod error;
pub mod fleet;
pub mod model;
pub mod obsmodel;
pub mod scenario;
pub mod solver;
pub mod vbayes;
pub mod whittle;

pub use error::{Error, Result};
pub use model::{Action, AdrModel, AdrState, Belief, LikelihoodPair};
pub use obsmodel::{ObsCase, ObsScenario, QmcStream, ReadingVector};
pub use solver::{build_continuation, extract_threshold, solve_value, BeliefGrid, ContinuationTable, SolveMethod, SolveOptions, ValueTable};
pub use vbayes::{fit_posterior, VbPosterior, VbSettings};
