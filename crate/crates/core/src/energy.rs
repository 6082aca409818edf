//! Battery dynamics, Poisson harvesting and the discretized energy state space.

use rand::Rng;

use crate::error::{Error, Result};

/// Relative slack allowed when checking that a drain fits in the battery.
const DRAIN_SLACK: f64 = 1e-12;

/// Battery level after one slot: drain first, then harvest, clamp at capacity.
pub fn step_energy(
    energy: f64,
    total_power: f64,
    slot_t: f64,
    harvested: f64,
    e_max: f64,
) -> Result<f64> {
    if total_power < 0.0 || harvested < 0.0 {
        return Err(Error::Precondition(format!(
            "power ({total_power} W) and harvest ({harvested} J) must be nonnegative"
        )));
    }
    let drain = total_power * slot_t;
    if drain > energy * (1.0 + DRAIN_SLACK) {
        return Err(Error::Precondition(format!(
            "drain of {drain} J exceeds stored energy {energy} J"
        )));
    }
    let after = (energy - drain).max(0.0) + harvested;
    Ok(after.min(e_max))
}

/// Uniform grid over `[0, e_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrid {
    e_max: f64,
    n_cells: usize,
    delta_e: f64,
}

impl EnergyGrid {
    pub fn new(e_max: f64, n_cells: usize) -> Result<Self> {
        if !(e_max > 0.0) || !e_max.is_finite() {
            return Err(Error::Domain {
                what: "battery capacity",
                value: e_max,
                expected: "finite and > 0",
            });
        }
        if n_cells < 2 {
            return Err(Error::config("solver.grid_cells", "need at least 2 grid points"));
        }
        Ok(Self {
            e_max,
            n_cells,
            delta_e: e_max / (n_cells - 1) as f64,
        })
    }

    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    pub fn len(&self) -> usize {
        self.n_cells
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn delta_e(&self) -> f64 {
        self.delta_e
    }

    /// Energy at grid point `i`; the last point is exactly `e_max`.
    pub fn energy(&self, i: usize) -> f64 {
        if i + 1 >= self.n_cells {
            self.e_max
        } else {
            i as f64 * self.delta_e
        }
    }

    /// Splits `e` over its two bracketing grid points with linear weights.
    ///
    /// The weighted mean of the returned grid energies equals `e`. On-grid
    /// energies put all weight on the first pair.
    pub fn quantize(&self, e: f64) -> Result<[(usize, f64); 2]> {
        if !(0.0..=self.e_max).contains(&e) {
            return Err(Error::Domain {
                what: "energy",
                value: e,
                expected: "0 <= e <= e_max",
            });
        }
        let pos = e / self.delta_e;
        let lo = (pos.floor() as usize).min(self.n_cells - 2);
        let frac = pos - lo as f64;
        if frac >= 1.0 {
            return Ok([(lo + 1, 1.0), (lo + 1, 0.0)]);
        }
        if frac <= 0.0 {
            return Ok([(lo, 1.0), (lo + 1, 0.0)]);
        }
        Ok([(lo, 1.0 - frac), (lo + 1, frac)])
    }

    /// Piecewise-linear interpolation of grid values at energy `e`.
    pub fn interpolate(&self, values: &[f64], e: f64) -> Result<f64> {
        let [(i, wi), (j, wj)] = self.quantize(e)?;
        Ok(if wj == 0.0 {
            values[i]
        } else {
            wi * values[i] + wj * values[j]
        })
    }
}

/// Truncated Poisson law of the number of energy arrivals in a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct HarvestDistribution {
    lambda_rate: f64,
    slot_t: f64,
    q_energy: f64,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl HarvestDistribution {
    /// Builds the arrival-count law, truncated at the smallest `k_max` whose
    /// upper tail `P(N > k_max)` is below `tail_tol`. Entry `k_max` carries
    /// `P(N >= k_max)`.
    pub fn new(lambda_rate: f64, slot_t: f64, q_energy: f64, tail_tol: f64) -> Result<Self> {
        if !(lambda_rate >= 0.0) || !lambda_rate.is_finite() {
            return Err(Error::Domain {
                what: "harvest rate",
                value: lambda_rate,
                expected: ">= 0",
            });
        }
        if !(slot_t > 0.0) {
            return Err(Error::Domain {
                what: "slot duration",
                value: slot_t,
                expected: "> 0",
            });
        }
        if !(q_energy >= 0.0) {
            return Err(Error::Domain {
                what: "energy per arrival",
                value: q_energy,
                expected: ">= 0",
            });
        }
        if !(tail_tol > 0.0 && tail_tol < 1.0) {
            return Err(Error::Domain {
                what: "tail tolerance",
                value: tail_tol,
                expected: "0 < tol < 1",
            });
        }

        let mean = lambda_rate * slot_t;
        let pmf = if mean == 0.0 {
            vec![1.0]
        } else {
            truncated_poisson(mean, tail_tol)
        };
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;

        Ok(Self {
            lambda_rate,
            slot_t,
            q_energy,
            pmf,
            cdf,
        })
    }

    pub fn lambda_rate(&self) -> f64 {
        self.lambda_rate
    }

    pub fn slot_t(&self) -> f64 {
        self.slot_t
    }

    pub fn q_energy(&self) -> f64 {
        self.q_energy
    }

    pub fn k_max(&self) -> usize {
        self.pmf.len() - 1
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// Expected harvested energy per slot under the truncated law.
    pub fn mean_energy(&self) -> f64 {
        self.pmf
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * self.q_energy * p)
            .sum()
    }

    /// Draws an arrival count with one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.k_max())
    }
}

fn truncated_poisson(mean: f64, tail_tol: f64) -> Vec<f64> {
    // Terms well past the bulk are below any useful tolerance.
    let far = (mean + 40.0 * mean.sqrt() + 60.0).ceil() as usize;
    let ln_mean = mean.ln();
    let mut log_p = -mean;
    let mut terms = Vec::with_capacity(far + 1);
    terms.push(log_p.exp());
    for k in 1..=far {
        log_p += ln_mean - (k as f64).ln();
        terms.push(log_p.exp());
    }
    // tails[k] = P(N >= k), summed from the far end.
    let mut tails = vec![0.0; far + 2];
    for k in (0..=far).rev() {
        tails[k] = tails[k + 1] + terms[k];
    }
    let k_max = (0..=far).find(|&k| tails[k + 1] < tail_tol).unwrap_or(far);
    let mut pmf = terms[..k_max].to_vec();
    pmf.push(tails[k_max]);
    pmf
}

/// Sparse next-state distribution over grid indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionRow {
    entries: Vec<(usize, f64)>,
}

impl TransitionRow {
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    /// `sum_j p_j * values[j]`.
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, p)| p * values[j]).sum()
    }

    fn add(&mut self, index: usize, prob: f64) {
        if prob == 0.0 {
            return;
        }
        match self.entries.binary_search_by_key(&index, |&(j, _)| j) {
            Ok(pos) => self.entries[pos].1 += prob,
            Err(pos) => self.entries.insert(pos, (index, prob)),
        }
    }
}

/// Next-state row from grid point `grid_index` under a total power draw.
pub fn build_transition_row(
    grid_index: usize,
    total_power: f64,
    grid: &EnergyGrid,
    harvest: &HarvestDistribution,
) -> Result<TransitionRow> {
    if grid_index >= grid.len() {
        return Err(Error::Domain {
            what: "grid index",
            value: grid_index as f64,
            expected: "< grid size",
        });
    }
    let energy = grid.energy(grid_index);
    let drain = total_power * harvest.slot_t();
    if total_power < 0.0 || drain > energy * (1.0 + DRAIN_SLACK) {
        return Err(Error::Precondition(format!(
            "power {total_power} W is infeasible at {energy} J"
        )));
    }
    harvest_row((energy - drain).max(0.0), grid, harvest)
}

/// Distribution of the battery level once arrivals are credited to an
/// already-drained level `post_drain`.
pub fn harvest_row(
    post_drain: f64,
    grid: &EnergyGrid,
    harvest: &HarvestDistribution,
) -> Result<TransitionRow> {
    let mut row = TransitionRow::default();
    for (k, &p) in harvest.pmf().iter().enumerate() {
        let next = (post_drain + k as f64 * harvest.q_energy()).min(grid.e_max());
        for (j, w) in grid.quantize(next)? {
            row.add(j, p * w);
        }
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> EnergyGrid {
        EnergyGrid::new(2.0, 2001).unwrap()
    }

    #[test]
    fn step_energy_examples() {
        let e = step_energy(2.0, 0.8, 1e-3, 0.0, 2.0).unwrap();
        assert!((e - 1.9992).abs() < 1e-15);
        assert_eq!(step_energy(2.0, 0.0, 1e-3, 0.08, 2.0).unwrap(), 2.0);
        let e = step_energy(0.5, 0.4, 1e-3, 0.16, 2.0).unwrap();
        assert!((e - 0.6596).abs() < 1e-15);
    }

    #[test]
    fn step_energy_rejects_overdraw() {
        assert!(step_energy(1e-4, 0.8, 1e-3, 0.0, 2.0).is_err());
        assert!(step_energy(1.0, -0.1, 1e-3, 0.0, 2.0).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = grid();
        assert_eq!(g.energy(0), 0.0);
        assert_eq!(g.energy(2000), 2.0);
        assert!((g.delta_e() - 1e-3).abs() < 1e-18);
        assert!(EnergyGrid::new(2.0, 1).is_err());
    }

    #[test]
    fn quantize_on_grid_and_midpoint() {
        let g = grid();
        let [(i, w), _] = g.quantize(g.energy(37)).unwrap();
        assert_eq!((i, w), (37, 1.0));
        let mid = 0.5 * (g.energy(10) + g.energy(11));
        let [(i, wi), (j, wj)] = g.quantize(mid).unwrap();
        assert_eq!((i, j), (10, 11));
        assert!((wi - 0.5).abs() < 1e-9 && (wj - 0.5).abs() < 1e-9);
        let [(i, w), _] = g.quantize(2.0).unwrap();
        assert_eq!((i, w), (2000, 1.0));
        assert!(g.quantize(-1e-9).is_err());
        assert!(g.quantize(2.0 + 1e-9).is_err());
    }

    #[test]
    fn poisson_without_arrivals() {
        let h = HarvestDistribution::new(0.0, 1e-3, 0.08, 1e-12).unwrap();
        assert_eq!(h.pmf(), &[1.0]);
        assert_eq!(h.k_max(), 0);
    }

    #[test]
    fn poisson_pmf_values() {
        let h = HarvestDistribution::new(2.0, 1e-3, 0.08, 1e-12).unwrap();
        assert!((h.pmf()[0] - 0.998_001_998_667_333_1).abs() < 1e-9);
        assert!((h.pmf().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // P(N > 3) ~ 6.7e-13 < 1e-12 while P(N > 2) ~ 1.3e-9.
        assert_eq!(h.k_max(), 3);
        assert!((h.mean_energy() - 2.0 * 1e-3 * 0.08).abs() < 1e-12 * 0.08);

        let rare = HarvestDistribution::new(0.1, 1e-3, 0.08, 1e-12).unwrap();
        assert!((rare.pmf()[0] - (-1e-4f64).exp()).abs() < 1e-15);
        assert!(rare.pmf()[0] > 0.9999);
    }

    #[test]
    fn idle_row_without_harvest_is_absorbing() {
        let g = grid();
        let h = HarvestDistribution::new(0.0, 1e-3, 0.08, 1e-12).unwrap();
        let row = build_transition_row(123, 0.0, &g, &h).unwrap();
        assert_eq!(row.entries(), &[(123, 1.0)]);
    }

    #[test]
    fn top_cell_clamps() {
        let g = grid();
        let h = HarvestDistribution::new(2.0, 1e-3, 0.08, 1e-12).unwrap();
        let row = build_transition_row(2000, 0.0, &g, &h).unwrap();
        assert_eq!(row.entries().len(), 1);
        assert_eq!(row.entries()[0].0, 2000);
        assert!((row.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_power_rejected() {
        let g = grid();
        let h = HarvestDistribution::new(2.0, 1e-3, 0.08, 1e-12).unwrap();
        assert!(build_transition_row(0, 0.8, &g, &h).is_err());
        assert!(build_transition_row(1, 0.8, &g, &h).is_ok());
    }

    proptest! {
        #[test]
        fn quantize_reconstructs_energy(e in 0.0f64..=2.0) {
            let g = grid();
            let [(i, wi), (j, wj)] = g.quantize(e).unwrap();
            prop_assert!((wi + wj - 1.0).abs() < 1e-15);
            let back = wi * g.energy(i) + wj * g.energy(j);
            prop_assert!((back - e).abs() <= 1e-15);
        }

        #[test]
        fn rows_are_distributions_with_exact_mean(
            idx in 0usize..2001,
            frac in 0.0f64..=1.0,
            lambda in 0.0f64..400.0,
            q in 0.0f64..0.9,
        ) {
            let g = grid();
            let h = HarvestDistribution::new(lambda, 1e-3, q, 1e-12).unwrap();
            let power = frac * (g.energy(idx) / 1e-3).min(0.8);
            let row = build_transition_row(idx, power, &g, &h).unwrap();
            prop_assert!((row.total() - 1.0).abs() < 1e-12);
            prop_assert!(row.entries().iter().all(|&(j, p)| j < g.len() && p > 0.0));

            let energies: Vec<f64> = (0..g.len()).map(|i| g.energy(i)).collect();
            let direct: f64 = h.pmf().iter().enumerate()
                .map(|(k, p)| p * (g.energy(idx) - power * 1e-3 + k as f64 * q).min(2.0))
                .sum();
            prop_assert!((row.expect(&energies) - direct).abs() < 1e-12);
        }

        #[test]
        fn next_energy_monotone(
            idx in 1usize..2000,
            p1 in 0.0f64..0.8,
            p2 in 0.0f64..0.8,
        ) {
            let g = grid();
            let h = HarvestDistribution::new(2.0, 1e-3, 0.08, 1e-12).unwrap();
            let energies: Vec<f64> = (0..g.len()).map(|i| g.energy(i)).collect();
            let cap = (g.energy(idx) / 1e-3).min(0.8);
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            let (lo, hi) = (lo.min(cap), hi.min(cap));
            let m_lo = build_transition_row(idx, lo, &g, &h).unwrap().expect(&energies);
            let m_hi = build_transition_row(idx, hi, &g, &h).unwrap().expect(&energies);
            prop_assert!(m_hi <= m_lo + 1e-15);
            let up = build_transition_row(idx + 1, lo, &g, &h).unwrap().expect(&energies);
            prop_assert!(up >= m_lo - 1e-15);
        }
    }
}
