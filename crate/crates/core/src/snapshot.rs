//! Solve cache keys and policy snapshot files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{SolverConfig, SystemConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::solver::Solution;

pub const SNAPSHOT_VERSION: u32 = 1;

/// Every input that changes a solve. Distances are the resolved ones, so
/// random placement and explicit distances hash alike.
#[derive(Serialize)]
struct SolverInputs<'a> {
    distances: &'a [f64],
    bandwidths: &'a [f64],
    backhaul_distance_m: f64,
    path_loss_exponent: f64,
    noise_w: f64,
    fading_rate: f64,
    gamma_min: f64,
    p_max: f64,
    capacity_j: f64,
    slot_s: f64,
    harvest_rate_per_s: f64,
    harvest_quantum_j: f64,
    poisson_tail_tol: f64,
    catalog_size: usize,
    zipf_exponent: f64,
    cache_size: usize,
    a: f64,
    b: f64,
    solver: &'a SolverConfig,
}

/// Hex SHA-256 of the solver-relevant inputs of `model`.
pub fn solver_key(model: &Model) -> String {
    let cfg = &model.config;
    let inputs = SolverInputs {
        distances: model.geometry.distances(),
        bandwidths: &model.bandwidths,
        backhaul_distance_m: cfg.network.backhaul_distance_m,
        path_loss_exponent: cfg.network.path_loss_exponent,
        noise_w: model.geometry.sigma2(),
        fading_rate: cfg.network.fading_rate,
        gamma_min: model.gamma_min,
        p_max: model.p_max,
        capacity_j: cfg.battery.capacity_j,
        slot_s: cfg.battery.slot_s,
        harvest_rate_per_s: cfg.battery.harvest_rate_per_s,
        harvest_quantum_j: cfg.battery.harvest_quantum_j,
        poisson_tail_tol: cfg.battery.poisson_tail_tol,
        catalog_size: cfg.cache.catalog_size,
        zipf_exponent: cfg.cache.zipf_exponent,
        cache_size: cfg.cache.cache_size,
        a: cfg.utility.a,
        b: cfg.utility.b,
        solver: &cfg.solver,
    };
    let bytes = serde_json::to_vec(&inputs).expect("solver inputs serialize");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub version: u32,
    pub key: String,
    pub config: SystemConfig,
    pub solution: Solution,
}

impl PolicySnapshot {
    pub fn new(model: &Model, solution: Solution) -> Self {
        Self {
            version: SNAPSHOT_VERSION,
            key: solver_key(model),
            config: model.config.clone(),
            solution,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let snap: PolicySnapshot = serde_json::from_str(&text)?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported version {} (expected {SNAPSHOT_VERSION})",
                snap.version
            )));
        }
        Ok(snap)
    }

    /// Fails unless the snapshot was solved for exactly this model.
    pub fn check_matches(&self, model: &Model) -> Result<()> {
        let key = solver_key(model);
        if key == self.key {
            Ok(())
        } else {
            Err(Error::Snapshot(format!(
                "snapshot key {} does not match configuration key {key}",
                self.key
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(cache_size: usize) -> Model {
        let mut cfg = SystemConfig::default();
        cfg.cache.cache_size = cache_size;
        Model::from_config(&cfg).unwrap()
    }

    #[test]
    fn key_tracks_solver_inputs_only() {
        let base = solver_key(&model(2));
        assert_eq!(base, solver_key(&model(2)));
        assert_ne!(base, solver_key(&model(6)));
        let mut cfg = SystemConfig::default();
        cfg.simulation.slots = 7;
        cfg.simulation.replications = 3;
        assert_eq!(base, solver_key(&Model::from_config(&cfg).unwrap()));
        assert_eq!(base.len(), 64);
    }
}
