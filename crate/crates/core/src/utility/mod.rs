//! Rates, SNR and the battery-dependent energy-efficiency utility.
//!
//! The utility of a power allocation is the downlink sum rate divided by the
//! total downlink power raised to `g(E)`, where `g` falls linearly from `a`
//! (empty battery) to `b` (full battery). An all-zero allocation has utility
//! zero.

mod expint;

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::{Distribution, Exp};

pub use expint::{exp_gamma0, scaled_exp_gamma0};

use crate::error::{Error, Result};

/// Distances and propagation constants of the downlinks and the backhaul.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    distances: Vec<f64>,
    backhaul_distance: f64,
    alpha: f64,
    sigma2: f64,
    mu: f64,
    noise_floor: Vec<f64>,
}

impl LinkGeometry {
    pub fn new(
        distances: Vec<f64>,
        backhaul_distance: f64,
        alpha: f64,
        sigma2: f64,
        mu: f64,
    ) -> Result<Self> {
        let positive = |what: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain {
                    what,
                    value: v,
                    expected: "finite and > 0",
                })
            }
        };
        for &d in &distances {
            positive("user distance", d)?;
        }
        positive("backhaul distance", backhaul_distance)?;
        positive("path-loss exponent", alpha)?;
        positive("noise power", sigma2)?;
        positive("fading rate", mu)?;
        let noise_floor = distances.iter().map(|d| d.powf(alpha) * sigma2).collect();
        Ok(Self {
            distances,
            backhaul_distance,
            alpha,
            sigma2,
            mu,
            noise_floor,
        })
    }

    pub fn n_users(&self) -> usize {
        self.distances.len()
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn backhaul_distance(&self) -> f64 {
        self.backhaul_distance
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `d_i^α σ²` for user `i`.
    pub fn noise_floor(&self, user: usize) -> f64 {
        self.noise_floor[user]
    }

    /// `d_b^α σ²`.
    pub fn backhaul_noise_floor(&self) -> f64 {
        self.backhaul_distance.powf(self.alpha) * self.sigma2
    }
}

/// `g(E) = a + (b - a) E / E_max` with `a > b > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyExponent {
    a: f64,
    b: f64,
    e_max: f64,
}

impl EfficiencyExponent {
    pub fn new(a: f64, b: f64, e_max: f64) -> Result<Self> {
        if !(a > b && b > 0.0) {
            return Err(Error::config(
                "utility",
                format!("efficiency constants must satisfy a > b > 0 (a = {a}, b = {b})"),
            ));
        }
        if !(e_max > 0.0) {
            return Err(Error::Domain {
                what: "battery capacity",
                value: e_max,
                expected: "> 0",
            });
        }
        Ok(Self { a, b, e_max })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    pub fn at(&self, energy: f64) -> f64 {
        g_exponent(energy, self)
    }
}

pub fn g_exponent(energy: f64, params: &EfficiencyExponent) -> f64 {
    params.a + (params.b - params.a) * energy / params.e_max
}

pub fn snr(power: f64, h2: f64, distance: f64, alpha: f64, sigma2: f64) -> f64 {
    power * h2 / (distance.powf(alpha) * sigma2)
}

/// `Σ_i W_i log2(1 + γ_i)` for realized channel gains.
pub fn sum_throughput(bandwidths: &[f64], powers: &[f64], h2s: &[f64], geom: &LinkGeometry) -> f64 {
    assert_eq!(bandwidths.len(), powers.len());
    assert_eq!(powers.len(), h2s.len());
    powers
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| bandwidths[i] * (p * h2s[i] / geom.noise_floor(i)).ln_1p() / LN_2)
        .sum()
}

fn efficiency_denominator(powers: &[f64], energy: f64, g: &EfficiencyExponent) -> f64 {
    powers.iter().sum::<f64>().powf(g.at(energy))
}

pub fn instantaneous_utility(
    bandwidths: &[f64],
    powers: &[f64],
    h2s: &[f64],
    energy: f64,
    geom: &LinkGeometry,
    g: &EfficiencyExponent,
) -> f64 {
    if powers.iter().all(|&p| p == 0.0) {
        return 0.0;
    }
    sum_throughput(bandwidths, powers, h2s, geom) / efficiency_denominator(powers, energy, g)
}

/// Sum rate averaged over Rayleigh fading, in closed form:
/// `Σ_i W_i e^{x_i} Γ(0, x_i) / ln 2` with `x_i = μ d_i^α σ² / P_i`.
pub fn average_sum_rate(bandwidths: &[f64], powers: &[f64], geom: &LinkGeometry) -> f64 {
    assert_eq!(bandwidths.len(), powers.len());
    let mu = geom.mu();
    powers
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| {
            let x = mu * geom.noise_floor(i) / p;
            bandwidths[i] * expint::scaled_unchecked(x)
        })
        .sum::<f64>()
        / LN_2
}

/// Channel-averaged utility.
pub fn average_utility(
    bandwidths: &[f64],
    powers: &[f64],
    energy: f64,
    geom: &LinkGeometry,
    g: &EfficiencyExponent,
) -> f64 {
    if powers.iter().all(|&p| p == 0.0) {
        return 0.0;
    }
    average_sum_rate(bandwidths, powers, geom) / efficiency_denominator(powers, energy, g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of the channel-averaged utility, drawing every
/// `|h_i|²` from an exponential law with rate `μ`.
pub fn mc_average_utility<R: Rng + ?Sized>(
    bandwidths: &[f64],
    powers: &[f64],
    energy: f64,
    geom: &LinkGeometry,
    g: &EfficiencyExponent,
    rng: &mut R,
    n_samples: usize,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::Domain {
            what: "sample count",
            value: 0.0,
            expected: ">= 1",
        });
    }
    if powers.iter().all(|&p| p == 0.0) {
        return Ok(McEstimate {
            mean: 0.0,
            std_error: 0.0,
        });
    }
    let fading = Exp::new(geom.mu()).map_err(|_| Error::Domain {
        what: "fading rate",
        value: geom.mu(),
        expected: "> 0",
    })?;
    let mut h2s = vec![0.0; powers.len()];
    // Welford running moments of the numerator.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for n in 1..=n_samples {
        for h in h2s.iter_mut() {
            *h = fading.sample(rng);
        }
        let x = sum_throughput(bandwidths, powers, &h2s, geom);
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    let denom = efficiency_denominator(powers, energy, g);
    let var = if n_samples > 1 {
        m2 / (n_samples - 1) as f64
    } else {
        0.0
    };
    Ok(McEstimate {
        mean: mean / denom,
        std_error: (var / n_samples as f64).sqrt() / denom,
    })
}
