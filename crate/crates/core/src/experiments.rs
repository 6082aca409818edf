//! Sweeps behind the four result tables, the solve cache and output files.
//!
//! Every table is written as CSV next to `manifest.json` (metrics, seeds,
//! provenance and the resolved configuration) and `resolved_config.toml`.
//! Re-running with the resolved configuration reproduces the CSV bytes.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sim::{fmt_sig9, simulate, Controller, PolicyKind, RunMetrics, SimOptions};
use crate::snapshot::solver_key;
use crate::solver::{solve, Solution};

type SolveSlot = Arc<Mutex<Option<Arc<Solution>>>>;

/// Value-iteration results keyed by [`solver_key`]. Each key is solved once
/// even under concurrent lookups.
#[derive(Default)]
pub struct SolveCache {
    entries: Mutex<HashMap<String, SolveSlot>>,
}

impl SolveCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_solve(&self, model: &Model) -> Result<Arc<Solution>> {
        let key = solver_key(model);
        let slot = {
            let mut map = self.entries.lock().expect("solve cache poisoned");
            map.entry(key.clone()).or_default().clone()
        };
        let mut slot = slot.lock().expect("solve cache poisoned");
        if let Some(sol) = slot.as_ref() {
            return Ok(sol.clone());
        }
        let sol = Arc::new(solve(model)?);
        info!(
            "solved {} in {} sweeps",
            &key[..12],
            sol.value.iterations
        );
        *slot = Some(sol.clone());
        Ok(sol)
    }

    /// Number of distinct solves performed so far.
    pub fn len(&self) -> usize {
        self.entries.lock().expect("solve cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean with a two-sided 95% Student-t interval half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub ci95: f64,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    if n == 0 {
        return Summary {
            n,
            mean: f64::NAN,
            std_dev: f64::NAN,
            ci95: f64::NAN,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Summary {
            n,
            mean,
            std_dev: f64::NAN,
            ci95: f64::NAN,
        };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    Summary {
        n,
        mean,
        std_dev: sd,
        ci95: t_quantile(0.975, n - 1) * sd / (n as f64).sqrt(),
    }
}

/// Quantile of the Student-t law with `dof` degrees of freedom.
pub fn t_quantile(p: f64, dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

/// Replication seeds derived from the root seed.
pub fn replication_seeds(config: &SystemConfig) -> Vec<u64> {
    (0..config.simulation.replications as u64)
        .map(|r| config.simulation.seed.wrapping_add(r))
        .collect()
}

/// One parameter combination of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointSpec {
    pub n_users: usize,
    pub cache_size: usize,
    pub harvest_rate_per_s: f64,
    pub harvest_quantum_j: f64,
}

impl PointSpec {
    pub fn base(config: &SystemConfig) -> Self {
        Self {
            n_users: config.network.n_users,
            cache_size: config.cache.cache_size,
            harvest_rate_per_s: config.battery.harvest_rate_per_s,
            harvest_quantum_j: config.battery.harvest_quantum_j,
        }
    }

    /// The base configuration with this point's parameters substituted.
    pub fn apply(&self, config: &SystemConfig) -> Result<SystemConfig> {
        let mut cfg = config.clone();
        cfg.network.n_users = self.n_users;
        cfg.cache.cache_size = self.cache_size;
        cfg.battery.harvest_rate_per_s = self.harvest_rate_per_s;
        cfg.battery.harvest_quantum_j = self.harvest_quantum_j;
        if let Some(d) = &config.network.user_distances_m {
            if d.len() < self.n_users {
                return Err(Error::config(
                    "network.user_distances_m",
                    format!("{} distances given, sweep needs {}", d.len(), self.n_users),
                ));
            }
            cfg.network.user_distances_m = Some(d[..self.n_users].to_vec());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    #[serde(flatten)]
    pub spec: PointSpec,
    pub solver_key: String,
    pub solver_iterations: usize,
    pub distances_m: Vec<f64>,
    pub runs: Vec<RunMetrics>,
}

impl SweepPoint {
    pub fn runs_for(&self, policy: PolicyKind) -> Vec<&RunMetrics> {
        self.runs.iter().filter(|r| r.policy == policy).collect()
    }

    pub fn metric(&self, policy: PolicyKind, f: impl Fn(&RunMetrics) -> f64) -> Vec<f64> {
        self.runs_for(policy).into_iter().map(f).collect()
    }
}

/// Runs `policies` over `seeds` at every point. Points and seeds execute
/// concurrently; results come back in input order.
pub fn run_sweep(
    config: &SystemConfig,
    specs: &[PointSpec],
    policies: &[PolicyKind],
    seeds: &[u64],
    cache: &SolveCache,
) -> Result<Vec<SweepPoint>> {
    let models: Vec<Model> = specs
        .iter()
        .map(|s| Model::from_config(&s.apply(config)?))
        .collect::<Result<_>>()?;
    let solutions: Vec<Option<Arc<Solution>>> = models
        .par_iter()
        .map(|m| {
            if policies.contains(&PolicyKind::Dp) {
                cache.get_or_solve(m).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, PolicyKind, u64)> = (0..specs.len())
        .flat_map(|p| {
            policies
                .iter()
                .flat_map(move |&k| seeds.iter().map(move |&s| (p, k, s)))
        })
        .collect();
    let runs: Vec<RunMetrics> = jobs
        .par_iter()
        .map(|&(p, kind, seed)| {
            let model = &models[p];
            let controller = match kind {
                PolicyKind::Dp => Controller::Lookahead(solutions[p].as_ref().expect("solved")),
                PolicyKind::Baseline => Controller::Baseline,
            };
            simulate(controller, model, &SimOptions::from_model(model, seed), |_| {})
        })
        .collect::<Result<_>>()?;

    let mut runs = runs.into_iter();
    let per_point = policies.len() * seeds.len();
    Ok(specs
        .iter()
        .zip(&models)
        .zip(&solutions)
        .map(|((spec, model), sol)| SweepPoint {
            spec: *spec,
            solver_key: solver_key(model),
            solver_iterations: sol.as_ref().map_or(0, |s| s.value.iterations),
            distances_m: model.geometry.distances().to_vec(),
            runs: runs.by_ref().take(per_point).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub crate_version: String,
    pub created_unix_s: u64,
    pub seeds: Vec<u64>,
}

impl Provenance {
    fn now(seeds: Vec<u64>) -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub config: SystemConfig,
    pub points: Vec<SweepPoint>,
    pub provenance: Provenance,
}

/// A finished experiment: the structured result plus its CSV tables.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub result: ExperimentResult,
    /// `(file name, CSV text)` pairs.
    pub tables: Vec<(String, String)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    result: &'a ExperimentResult,
    outputs: Vec<&'a str>,
    resolved_config_toml: String,
}

impl ExperimentOutput {
    pub fn table(&self, name: &str) -> Option<&str> {
        self.tables
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_str())
    }

    /// Writes the tables, `manifest.json` and `resolved_config.toml`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (name, text) in &self.tables {
            std::fs::write(dir.join(name), text)?;
        }
        let toml = self.result.config.to_toml_string();
        std::fs::write(dir.join("resolved_config.toml"), &toml)?;
        let manifest = Manifest {
            result: &self.result,
            outputs: self.tables.iter().map(|(n, _)| n.as_str()).collect(),
            resolved_config_toml: toml,
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Per-slot row of the single-run energy trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub slot: u64,
    pub energy: f64,
    pub arrival: bool,
    pub idle: bool,
    pub miss: bool,
}

/// Idle statistics of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceStats {
    pub median_energy_j: f64,
    pub idle_fraction: f64,
    pub idle_fraction_below_median: f64,
    pub arrival_slots: u64,
}

pub fn trace_stats(rows: &[TraceRow]) -> TraceStats {
    let mut energies: Vec<f64> = rows.iter().map(|r| r.energy).collect();
    energies.sort_by(f64::total_cmp);
    let median = if energies.is_empty() {
        f64::NAN
    } else {
        energies[energies.len() / 2]
    };
    let idle = rows.iter().filter(|r| r.idle).count();
    let below: Vec<&TraceRow> = rows.iter().filter(|r| r.energy < median).collect();
    let idle_below = below.iter().filter(|r| r.idle).count();
    TraceStats {
        median_energy_j: median,
        idle_fraction: idle as f64 / rows.len().max(1) as f64,
        idle_fraction_below_median: if below.is_empty() {
            0.0
        } else {
            idle_below as f64 / below.len() as f64
        },
        arrival_slots: rows.iter().filter(|r| r.arrival).count() as u64,
    }
}

/// Single dp run at the configured cache size and harvest rate, keeping the
/// full per-slot trace.
pub fn run_fig2(config: &SystemConfig, cache: &SolveCache) -> Result<(ExperimentOutput, Vec<TraceRow>)> {
    let f = &config.experiments.fig2;
    let spec = PointSpec {
        cache_size: f.cache_size,
        harvest_rate_per_s: f.harvest_rate_per_s,
        ..PointSpec::base(config)
    };
    let model = Model::from_config(&spec.apply(config)?)?;
    let sol = cache.get_or_solve(&model)?;
    let seed = config.simulation.seed;
    let mut rows = Vec::with_capacity(config.simulation.slots as usize);
    let metrics = simulate(
        Controller::Lookahead(&sol),
        &model,
        &SimOptions::from_model(&model, seed),
        |s| {
            rows.push(TraceRow {
                slot: s.slot,
                energy: s.start_energy,
                arrival: s.harvested > 0.0,
                idle: s.idle,
                miss: s.miss,
            })
        },
    )?;
    let stats = trace_stats(&rows);
    let trace = csv(
        &["slot", "energy_j", "arrival", "idle", "miss"],
        rows.iter().map(|r| {
            vec![
                r.slot.to_string(),
                fmt_sig9(r.energy),
                (r.arrival as u8).to_string(),
                (r.idle as u8).to_string(),
                (r.miss as u8).to_string(),
            ]
        }),
    );
    let summary = csv(
        &[
            "mean_energy_j",
            "terminal_energy_j",
            "median_energy_j",
            "idle_fraction",
            "idle_fraction_below_median",
            "arrival_slots",
        ],
        [vec![
            fmt_sig9(metrics.mean_energy),
            fmt_sig9(metrics.terminal_energy),
            fmt_sig9(stats.median_energy_j),
            fmt_sig9(stats.idle_fraction),
            fmt_sig9(stats.idle_fraction_below_median),
            stats.arrival_slots.to_string(),
        ]],
    );
    let point = SweepPoint {
        spec,
        solver_key: solver_key(&model),
        solver_iterations: sol.value.iterations,
        distances_m: model.geometry.distances().to_vec(),
        runs: vec![metrics],
    };
    let output = ExperimentOutput {
        result: ExperimentResult {
            experiment: "fig2".into(),
            config: config.clone(),
            points: vec![point],
            provenance: Provenance::now(vec![seed]),
        },
        tables: vec![
            ("fig2_trace.csv".into(), trace),
            ("fig2_summary.csv".into(), summary),
        ],
    };
    Ok((output, rows))
}

/// Mean remaining energy against the number of users, one curve per
/// `(cache size, harvest rate)` pair.
pub fn run_fig3(config: &SystemConfig, cache: &SolveCache) -> Result<ExperimentOutput> {
    let f = &config.experiments.fig3;
    let base = PointSpec::base(config);
    let specs: Vec<PointSpec> = f
        .curves
        .iter()
        .flat_map(|c| {
            f.n_users.iter().map(move |&n| PointSpec {
                n_users: n,
                cache_size: c.cache_size,
                harvest_rate_per_s: c.harvest_rate_per_s,
                ..base
            })
        })
        .collect();
    let seeds = replication_seeds(config);
    let points = run_sweep(config, &specs, &[PolicyKind::Dp], &seeds, cache)?;
    let table = csv(
        &[
            "cache_size",
            "harvest_rate_per_s",
            "n_users",
            "mean_energy_j",
            "mean_energy_ci95_j",
            "terminal_energy_j",
            "terminal_energy_ci95_j",
            "backhaul_fraction",
            "replications",
        ],
        points.iter().map(|p| {
            let e = summarize(&p.metric(PolicyKind::Dp, |r| r.mean_energy));
            let t = summarize(&p.metric(PolicyKind::Dp, |r| r.terminal_energy));
            let b = summarize(&p.metric(PolicyKind::Dp, |r| r.backhaul_fraction));
            vec![
                p.spec.cache_size.to_string(),
                fmt_sig9(p.spec.harvest_rate_per_s),
                p.spec.n_users.to_string(),
                fmt_sig9(e.mean),
                fmt_sig9(e.ci95),
                fmt_sig9(t.mean),
                fmt_sig9(t.ci95),
                fmt_sig9(b.mean),
                e.n.to_string(),
            ]
        }),
    );
    Ok(ExperimentOutput {
        result: ExperimentResult {
            experiment: "fig3".into(),
            config: config.clone(),
            points,
            provenance: Provenance::now(seeds),
        },
        tables: vec![("fig3.csv".into(), table)],
    })
}

/// Paired gain of `a` over `b` in percent of `b`'s mean, with a 95% interval
/// from the per-seed differences.
pub fn paired_gain_pct(a: &[f64], b: &[f64]) -> (f64, f64) {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let d = summarize(&diffs);
    let base = summarize(b).mean;
    (100.0 * d.mean / base, 100.0 * d.ci95 / base)
}

/// Sum throughput of the dp and full-power controllers on paired seeds.
pub fn run_fig4(config: &SystemConfig, cache: &SolveCache) -> Result<ExperimentOutput> {
    let f = &config.experiments.fig4;
    let base = PointSpec {
        harvest_rate_per_s: f.harvest_rate_per_s,
        ..PointSpec::base(config)
    };
    let specs: Vec<PointSpec> = f
        .cache_sizes
        .iter()
        .flat_map(|&m| {
            f.n_users.iter().map(move |&n| PointSpec {
                n_users: n,
                cache_size: m,
                ..base
            })
        })
        .collect();
    let seeds = replication_seeds(config);
    let points = run_sweep(
        config,
        &specs,
        &[PolicyKind::Dp, PolicyKind::Baseline],
        &seeds,
        cache,
    )?;
    let table = csv(
        &[
            "cache_size",
            "n_users",
            "dp_throughput_bps",
            "dp_ci95_bps",
            "baseline_throughput_bps",
            "baseline_ci95_bps",
            "gain_pct",
            "gain_ci95_pct",
            "dp_mean_energy_j",
            "baseline_mean_energy_j",
            "replications",
        ],
        points.iter().map(|p| {
            let dp = p.metric(PolicyKind::Dp, |r| r.mean_throughput);
            let bl = p.metric(PolicyKind::Baseline, |r| r.mean_throughput);
            let (gain, gain_ci) = paired_gain_pct(&dp, &bl);
            let (dps, bls) = (summarize(&dp), summarize(&bl));
            vec![
                p.spec.cache_size.to_string(),
                p.spec.n_users.to_string(),
                fmt_sig9(dps.mean),
                fmt_sig9(dps.ci95),
                fmt_sig9(bls.mean),
                fmt_sig9(bls.ci95),
                fmt_sig9(gain),
                fmt_sig9(gain_ci),
                fmt_sig9(summarize(&p.metric(PolicyKind::Dp, |r| r.mean_energy)).mean),
                fmt_sig9(summarize(&p.metric(PolicyKind::Baseline, |r| r.mean_energy)).mean),
                dps.n.to_string(),
            ]
        }),
    );
    Ok(ExperimentOutput {
        result: ExperimentResult {
            experiment: "fig4".into(),
            config: config.clone(),
            points,
            provenance: Provenance::now(seeds),
        },
        tables: vec![("fig4.csv".into(), table)],
    })
}

/// Mean available energy over a (cache size, energy per arrival) mesh.
pub fn run_fig5(config: &SystemConfig, cache: &SolveCache) -> Result<ExperimentOutput> {
    let f = &config.experiments.fig5;
    let base = PointSpec {
        n_users: f.n_users,
        harvest_rate_per_s: f.harvest_rate_per_s,
        ..PointSpec::base(config)
    };
    let specs: Vec<PointSpec> = f
        .cache_sizes
        .iter()
        .flat_map(|&m| {
            f.harvest_quanta_j.iter().map(move |&q| PointSpec {
                cache_size: m,
                harvest_quantum_j: q,
                ..base
            })
        })
        .collect();
    let seeds = replication_seeds(config);
    let points = run_sweep(config, &specs, &[PolicyKind::Dp], &seeds, cache)?;
    let table = csv(
        &[
            "cache_size",
            "harvest_quantum_j",
            "mean_energy_j",
            "mean_energy_ci95_j",
            "terminal_energy_j",
            "replications",
        ],
        points.iter().map(|p| {
            let e = summarize(&p.metric(PolicyKind::Dp, |r| r.mean_energy));
            let t = summarize(&p.metric(PolicyKind::Dp, |r| r.terminal_energy));
            vec![
                p.spec.cache_size.to_string(),
                fmt_sig9(p.spec.harvest_quantum_j),
                fmt_sig9(e.mean),
                fmt_sig9(e.ci95),
                fmt_sig9(t.mean),
                e.n.to_string(),
            ]
        }),
    );
    Ok(ExperimentOutput {
        result: ExperimentResult {
            experiment: "fig5".into(),
            config: config.clone(),
            points,
            provenance: Provenance::now(seeds),
        },
        tables: vec![("fig5.csv".into(), table)],
    })
}
