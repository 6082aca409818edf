//! Run configuration.
//!
//! One TOML document, every key optional. Missing keys take the defaults
//! below (the reference small-cell scenario). Noise is given in dBm and the
//! backhaul SNR target in dB; [`SystemConfig::noise_w`] and
//! [`SystemConfig::gamma_min`] give the SI values everything else uses.
//!
//! ```toml
//! [network]
//! n_users = 10
//! cell_radius_m = 800.0
//! backhaul_distance_m = 3000.0
//! noise_dbm = -90.0
//!
//! [battery]
//! harvest_rate_per_s = 2.0
//!
//! [cache]
//! cache_size = 2
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::ActionMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub network: NetworkConfig,
    pub battery: BatteryConfig,
    pub cache: CacheConfig,
    pub utility: UtilityConfig,
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
    pub experiments: ExperimentsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub n_users: usize,
    /// Users are placed uniformly in the disc between these two radii.
    pub cell_radius_m: f64,
    pub min_user_distance_m: f64,
    /// Explicit per-user distances; overrides random placement.
    pub user_distances_m: Option<Vec<f64>>,
    pub backhaul_distance_m: f64,
    pub path_loss_exponent: f64,
    pub noise_dbm: f64,
    pub bandwidth_hz: f64,
    /// Rate of the exponential law of `|h|²`.
    pub fading_rate: f64,
    pub backhaul_min_snr_db: f64,
    pub max_power_w: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_users: 10,
            cell_radius_m: 800.0,
            min_user_distance_m: 1.0,
            user_distances_m: None,
            backhaul_distance_m: 3000.0,
            path_loss_exponent: 3.0,
            noise_dbm: -90.0,
            bandwidth_hz: 100e3,
            fading_rate: 1.0,
            backhaul_min_snr_db: 8.0,
            max_power_w: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    pub capacity_j: f64,
    /// Starting level; defaults to a full battery.
    pub initial_j: Option<f64>,
    pub slot_s: f64,
    pub harvest_rate_per_s: f64,
    pub harvest_quantum_j: f64,
    pub poisson_tail_tol: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            capacity_j: 2.0,
            initial_j: None,
            slot_s: 1e-3,
            harvest_rate_per_s: 2.0,
            harvest_quantum_j: 0.08,
            poisson_tail_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub catalog_size: usize,
    pub zipf_exponent: f64,
    pub cache_size: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            catalog_size: 10_000,
            zipf_exponent: 2.0,
            cache_size: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilityConfig {
    pub a: f64,
    pub b: f64,
}

impl Default for UtilityConfig {
    fn default() -> Self {
        Self { a: 0.18, b: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub discount: f64,
    pub threshold: f64,
    pub max_iterations: usize,
    pub grid_cells: usize,
    pub power_levels: usize,
    pub action_mode: ActionMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            discount: 0.7,
            threshold: 1e-6,
            max_iterations: 10_000,
            grid_cells: 2001,
            power_levels: 11,
            action_mode: ActionMode::EqualSplit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Root seed. Replication `r` runs with `seed + r`.
    pub seed: u64,
    pub slots: u64,
    pub replications: usize,
    /// Leading fraction of slots excluded from reported means.
    pub warmup_fraction: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            slots: 100_000,
            replications: 10,
            warmup_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentsConfig {
    pub fig2: Fig2Config,
    pub fig3: Fig3Config,
    pub fig4: Fig4Config,
    pub fig5: Fig5Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig2Config {
    pub cache_size: usize,
    pub harvest_rate_per_s: f64,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            cache_size: 80,
            harvest_rate_per_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub cache_size: usize,
    pub harvest_rate_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig3Config {
    pub n_users: Vec<usize>,
    pub curves: Vec<CurveSpec>,
}

impl Default for Fig3Config {
    fn default() -> Self {
        let curve = |cache_size, harvest_rate_per_s| CurveSpec {
            cache_size,
            harvest_rate_per_s,
        };
        Self {
            n_users: vec![2, 4, 6, 8, 10, 12, 14, 16, 18, 20],
            curves: vec![
                curve(0, 2.0),
                curve(2, 2.0),
                curve(2, 1.2),
                curve(6, 1.2),
                curve(12, 1.2),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig4Config {
    pub harvest_rate_per_s: f64,
    pub n_users: Vec<usize>,
    pub cache_sizes: Vec<usize>,
}

impl Default for Fig4Config {
    fn default() -> Self {
        Self {
            harvest_rate_per_s: 2.0,
            n_users: vec![5, 7, 9, 11, 13, 15],
            cache_sizes: vec![0, 2, 6, 12],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig5Config {
    pub n_users: usize,
    pub harvest_rate_per_s: f64,
    pub cache_sizes: Vec<usize>,
    pub harvest_quanta_j: Vec<f64>,
}

impl Default for Fig5Config {
    fn default() -> Self {
        Self {
            n_users: 15,
            harvest_rate_per_s: 2.0,
            cache_sizes: vec![1, 20, 40, 80, 120, 160],
            harvest_quanta_j: vec![0.1, 0.3, 0.5, 0.7, 0.9],
        }
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<SystemConfig> {
    let text = std::fs::read_to_string(path.as_ref())?;
    SystemConfig::from_toml_str(&text)
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SystemConfig =
            toml::from_str(text).map_err(|e| Error::config("<file>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    /// Noise power in watts.
    pub fn noise_w(&self) -> f64 {
        dbm_to_watts(self.network.noise_dbm)
    }

    /// Linear backhaul SNR target.
    pub fn gamma_min(&self) -> f64 {
        db_to_linear(self.network.backhaul_min_snr_db)
    }

    pub fn initial_energy(&self) -> f64 {
        self.battery.initial_j.unwrap_or(self.battery.capacity_j)
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.network;
        let bat = &self.battery;
        positive("network.cell_radius_m", n.cell_radius_m)?;
        positive("network.backhaul_distance_m", n.backhaul_distance_m)?;
        positive("network.path_loss_exponent", n.path_loss_exponent)?;
        positive("network.bandwidth_hz", n.bandwidth_hz)?;
        positive("network.fading_rate", n.fading_rate)?;
        positive("network.max_power_w", n.max_power_w)?;
        finite("network.noise_dbm", n.noise_dbm)?;
        finite("network.backhaul_min_snr_db", n.backhaul_min_snr_db)?;
        if n.n_users == 0 {
            return Err(Error::config("network.n_users", "need at least one user"));
        }
        if !(n.min_user_distance_m > 0.0 && n.min_user_distance_m < n.cell_radius_m) {
            return Err(Error::config(
                "network.min_user_distance_m",
                "must lie in (0, cell_radius_m)",
            ));
        }
        if let Some(d) = &n.user_distances_m {
            if d.len() != n.n_users {
                return Err(Error::config(
                    "network.user_distances_m",
                    format!("{} distances given for {} users", d.len(), n.n_users),
                ));
            }
            for &x in d {
                positive("network.user_distances_m", x)?;
            }
        }

        positive("battery.capacity_j", bat.capacity_j)?;
        positive("battery.slot_s", bat.slot_s)?;
        nonnegative("battery.harvest_rate_per_s", bat.harvest_rate_per_s)?;
        nonnegative("battery.harvest_quantum_j", bat.harvest_quantum_j)?;
        if !(bat.poisson_tail_tol > 0.0 && bat.poisson_tail_tol < 1.0) {
            return Err(Error::config("battery.poisson_tail_tol", "must lie in (0, 1)"));
        }
        if let Some(e0) = bat.initial_j {
            if !(0.0..=bat.capacity_j).contains(&e0) {
                return Err(Error::config("battery.initial_j", "must lie in [0, capacity_j]"));
            }
        }

        let c = &self.cache;
        if c.catalog_size == 0 {
            return Err(Error::config("cache.catalog_size", "must be at least 1"));
        }
        if !(c.zipf_exponent > 1.0 && c.zipf_exponent.is_finite()) {
            return Err(Error::config("cache.zipf_exponent", "must be > 1"));
        }
        if c.cache_size > c.catalog_size {
            return Err(Error::config("cache.cache_size", "cannot exceed catalog_size"));
        }

        let u = &self.utility;
        if !(u.a > u.b && u.b > 0.0) {
            return Err(Error::config(
                "utility",
                format!("need a > b > 0, got a = {}, b = {}", u.a, u.b),
            ));
        }

        let s = &self.solver;
        if !(0.0..1.0).contains(&s.discount) {
            return Err(Error::config("solver.discount", "must lie in [0, 1)"));
        }
        positive("solver.threshold", s.threshold)?;
        if s.max_iterations == 0 {
            return Err(Error::config("solver.max_iterations", "must be at least 1"));
        }
        if s.grid_cells < 2 {
            return Err(Error::config("solver.grid_cells", "must be at least 2"));
        }
        if s.power_levels < 2 {
            return Err(Error::config("solver.power_levels", "must be at least 2"));
        }
        if s.action_mode == ActionMode::Exhaustive && n.n_users > 3 {
            return Err(Error::config(
                "solver.action_mode",
                "exhaustive action sets are limited to 3 users",
            ));
        }

        let sim = &self.simulation;
        if sim.slots == 0 {
            return Err(Error::config("simulation.slots", "must be at least 1"));
        }
        if sim.replications == 0 {
            return Err(Error::config("simulation.replications", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&sim.warmup_fraction) {
            return Err(Error::config("simulation.warmup_fraction", "must lie in [0, 1)"));
        }

        let ex = &self.experiments;
        nonnegative("experiments.fig2.harvest_rate_per_s", ex.fig2.harvest_rate_per_s)?;
        nonnegative("experiments.fig4.harvest_rate_per_s", ex.fig4.harvest_rate_per_s)?;
        nonnegative("experiments.fig5.harvest_rate_per_s", ex.fig5.harvest_rate_per_s)?;
        for curve in &ex.fig3.curves {
            nonnegative("experiments.fig3.curves.harvest_rate_per_s", curve.harvest_rate_per_s)?;
        }
        for &q in &ex.fig5.harvest_quanta_j {
            nonnegative("experiments.fig5.harvest_quanta_j", q)?;
        }
        let user_counts = ex
            .fig3
            .n_users
            .iter()
            .chain(&ex.fig4.n_users)
            .chain(std::iter::once(&ex.fig5.n_users));
        for &nu in user_counts {
            if nu == 0 {
                return Err(Error::config("experiments", "user counts must be at least 1"));
            }
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite, got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be > 0, got {v}")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be >= 0, got {v}")))
    }
}
