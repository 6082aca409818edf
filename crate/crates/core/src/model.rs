//! A fully resolved system: every derived quantity the solver and the
//! simulator need, built once from a [`SystemConfig`].

use rand::Rng;

use crate::config::SystemConfig;
use crate::energy::{EnergyGrid, HarvestDistribution};
use crate::error::Result;
use crate::popularity::{backhaul_access_probability, ZipfCatalog};
use crate::streams::{stream_rng, Stream};
use crate::utility::{EfficiencyExponent, LinkGeometry};

#[derive(Debug, Clone)]
pub struct Model {
    pub config: SystemConfig,
    pub bandwidths: Vec<f64>,
    pub geometry: LinkGeometry,
    pub exponent: EfficiencyExponent,
    pub catalog: ZipfCatalog,
    pub harvest: HarvestDistribution,
    pub grid: EnergyGrid,
    pub p_max: f64,
    pub slot_t: f64,
    /// Linear backhaul SNR target.
    pub gamma_min: f64,
    /// Probability that a slot needs the backhaul.
    pub backhaul_access: f64,
    /// Backhaul power for the channel-averaged SNR target, `γ_min μ d_b^α σ²`.
    pub backhaul_budget: f64,
    pub initial_energy: f64,
}

impl Model {
    pub fn from_config(config: &SystemConfig) -> Result<Self> {
        config.validate()?;
        let net = &config.network;
        let bat = &config.battery;
        let distances = match &net.user_distances_m {
            Some(d) => d.clone(),
            None => place_users(
                config.simulation.seed,
                net.n_users,
                net.min_user_distance_m,
                net.cell_radius_m,
            ),
        };
        let geometry = LinkGeometry::new(
            distances,
            net.backhaul_distance_m,
            net.path_loss_exponent,
            config.noise_w(),
            net.fading_rate,
        )?;
        let catalog = ZipfCatalog::new(
            config.cache.zipf_exponent,
            config.cache.catalog_size,
            config.cache.cache_size,
        )?;
        let gamma_min = config.gamma_min();
        Ok(Self {
            bandwidths: vec![net.bandwidth_hz; net.n_users],
            exponent: EfficiencyExponent::new(config.utility.a, config.utility.b, bat.capacity_j)?,
            harvest: HarvestDistribution::new(
                bat.harvest_rate_per_s,
                bat.slot_s,
                bat.harvest_quantum_j,
                bat.poisson_tail_tol,
            )?,
            grid: EnergyGrid::new(bat.capacity_j, config.solver.grid_cells)?,
            p_max: net.max_power_w,
            slot_t: bat.slot_s,
            gamma_min,
            backhaul_access: backhaul_access_probability(catalog.miss_probability(), net.n_users),
            backhaul_budget: gamma_min * net.fading_rate * geometry.backhaul_noise_floor(),
            initial_energy: config.initial_energy(),
            catalog,
            geometry,
            config: config.clone(),
        })
    }

    pub fn n_users(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn e_max(&self) -> f64 {
        self.grid.e_max()
    }

    /// Largest total power the battery and the amplifier allow at `energy`.
    pub fn power_cap(&self, energy: f64) -> f64 {
        self.p_max.min(energy / self.slot_t)
    }
}

/// Distances of `n_users` points uniform in the annulus `[r_min, radius]`.
/// A given seed yields the same leading distances for any `n_users`.
pub fn place_users(seed: u64, n_users: usize, r_min: f64, radius: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, Stream::Placement);
    let (lo, hi) = (r_min * r_min, radius * radius);
    (0..n_users)
        .map(|_| {
            let u: f64 = rng.random();
            (lo + u * (hi - lo)).sqrt()
        })
        .collect()
}
