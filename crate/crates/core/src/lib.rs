//! Power control for an energy-harvesting small-cell base station with a
//! content cache.
//!
//! The battery level is discretized and a discounted MDP over it is solved by
//! value iteration using the Rayleigh-averaged energy-efficiency utility. At
//! run time the controller re-scores the discrete actions with the realized
//! channels and the converged value function, and a slot simulator measures
//! the resulting energy and throughput.

pub mod config;
pub mod energy;
pub mod experiments;
pub mod error;
pub mod model;
pub mod popularity;
pub mod sim;
pub mod snapshot;
pub mod solver;
pub mod streams;
pub mod utility;
pub mod validation;

pub use config::{load_config, SystemConfig};
pub use error::{Error, Result};
pub use model::Model;
pub use sim::{simulate, Controller, PolicyKind, RunMetrics, SimOptions, SlotOutcome};
pub use solver::{solve, Action, ActionSet, Policy, Solution, ValueFunction};
