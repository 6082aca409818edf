//! Self-checks run by the `validate` subcommand.
//!
//! Each check compares a production routine against an independent
//! computation: quadrature for the exponential integral, direct sums for
//! the Zipf tail, sampling for the backhaul and fading averages, and a full
//! policy enumeration for a small MDP.

use rand::Rng;

use crate::config::SystemConfig;
use crate::energy::{build_transition_row, EnergyGrid, HarvestDistribution};
use crate::error::Result;
use crate::model::Model;
use crate::popularity::{backhaul_access_probability, ZipfCatalog};
use crate::solver::{
    solve, value_iteration, Action, ActionMode, ActionRule, ActionSet, SolverSettings,
    ValueFunction,
};
use crate::streams::{stream_rng, Stream};
use crate::utility::{
    average_sum_rate, average_utility, exp_gamma0, mc_average_utility, scaled_exp_gamma0,
    EfficiencyExponent, LinkGeometry,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `E1(x)` by quadrature of `e^{-x} ∫_0^∞ e^{-u} / (x + u) du` in the
/// variable `s = ln u`.
pub fn e1_by_quadrature(x: f64) -> f64 {
    let f = |s: f64| {
        let u = s.exp();
        (-u).exp() * u / (x + u)
    };
    let lo = (x * 1e-16).ln();
    let hi = 60f64.ln();
    let body = adaptive_simpson(&f, lo, hi, 1e-15);
    // ∫_0^{u_lo} du/(x+u) ≈ u_lo / x, below 1e-16 relative.
    (-x).exp() * body
}

fn check_e1() -> CheckResult {
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let x = 10f64.powf(-8.0 + 10.0 * i as f64 / 49.0);
        let reference = e1_by_quadrature(x);
        let got = exp_gamma0(x).unwrap_or(f64::NAN);
        worst = worst.max(((got - reference) / reference).abs());
    }
    let fused_ok = [1e-12, 1e-9, 1e-6]
        .iter()
        .all(|&x| scaled_exp_gamma0(x).map_or(false, |v| v.is_finite() && v > 0.0));
    CheckResult::new(
        "exponential integral vs quadrature",
        worst <= 1e-9 && fused_ok,
        format!("max relative error {worst:.2e}, fused form finite: {fused_ok}"),
    )
}

fn check_zipf() -> CheckResult {
    let mut worst: f64 = 0.0;
    for &(s, r, m) in &[(2.0, 10_000, 2), (2.0, 10_000, 0), (1.3, 5000, 40), (2.5, 300, 299), (1.01, 1000, 17)] {
        let cat = match ZipfCatalog::new(s, r, m) {
            Ok(c) => c,
            Err(e) => return CheckResult::new("zipf tail vs direct sum", false, e.to_string()),
        };
        let mut total = 0.0;
        let mut tail = 0.0;
        for j in 1..=r {
            let w = 1.0 / (j as f64).powf(s);
            total += w;
            if j > m {
                tail += w;
            }
        }
        worst = worst.max((cat.miss_probability() - tail / total).abs());
    }
    CheckResult::new(
        "zipf tail vs direct sum",
        worst <= 1e-10,
        format!("max abs error {worst:.2e}"),
    )
}

fn check_backhaul_sampling(seed: u64) -> CheckResult {
    let cat = ZipfCatalog::new(2.0, 10_000, 2).expect("valid catalog");
    let n_users = 10;
    let slots = 200_000;
    let mut rng = stream_rng(seed, Stream::Validation);
    let hits = (0..slots)
        .filter(|_| cat.sample_requests(&mut rng, n_users).miss)
        .count();
    let p = backhaul_access_probability(cat.miss_probability(), n_users);
    let freq = hits as f64 / slots as f64;
    let se = (p * (1.0 - p) / slots as f64).sqrt();
    CheckResult::new(
        "backhaul access vs sampling",
        (freq - p).abs() <= 4.0 * se,
        format!("empirical {freq:.5}, closed form {p:.5}, {:.2} SE", (freq - p).abs() / se),
    )
}

fn check_average_utility(seed: u64) -> CheckResult {
    let mut rng = stream_rng(seed, Stream::Validation);
    let g = EfficiencyExponent::new(0.18, 0.03, 2.0).expect("valid exponent");
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let n = rng.random_range(1..=5);
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(100.0..800.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..0.8)).collect();
        let e = rng.random_range(0.0..2.0);
        let geom = LinkGeometry::new(d, 3000.0, 3.0, 1e-12, 1.0).expect("valid geometry");
        let w = vec![1e5; n];
        let cf = average_utility(&w, &p, e, &geom, &g);
        let mc = mc_average_utility(&w, &p, e, &geom, &g, &mut rng, 100_000).expect("samples");
        worst = worst.max((mc.mean - cf).abs() / mc.std_error);
    }
    CheckResult::new(
        "closed-form utility vs Monte Carlo",
        worst <= 4.0,
        format!("largest deviation {worst:.2} SE over 5 configurations"),
    )
}

/// The five-state, three-action instance shared by the enumeration check.
pub struct ToyMdp {
    pub grid: EnergyGrid,
    pub harvest: HarvestDistribution,
    pub actions: ActionSet,
    pub geometry: LinkGeometry,
    pub exponent: EfficiencyExponent,
    pub bandwidths: Vec<f64>,
    pub slot_t: f64,
    pub p_max: f64,
    pub settings: SolverSettings,
}

impl ToyMdp {
    pub fn new() -> Result<Self> {
        let e_max = 4e-3;
        let p_max = 2.0;
        let rule = ActionRule {
            n_users: 1,
            levels: 3,
            mode: ActionMode::EqualSplit,
            p_max,
            backhaul_budget: 0.0,
            backhaul_access: 0.0,
        };
        let actions = ActionSet::from_actions(
            rule,
            [1.0, 2.0]
                .iter()
                .map(|&p| Action {
                    powers: vec![p],
                    backhaul_budget: 0.0,
                    total_power: p,
                })
                .collect(),
        )?;
        Ok(Self {
            grid: EnergyGrid::new(e_max, 5)?,
            harvest: HarvestDistribution::new(400.0, 1e-3, 1.5e-3, 1e-12)?,
            actions,
            geometry: LinkGeometry::new(vec![100.0], 3000.0, 3.0, 1e-12, 1.0)?,
            exponent: EfficiencyExponent::new(0.18, 0.03, e_max)?,
            bandwidths: vec![1.0],
            slot_t: 1e-3,
            p_max,
            settings: SolverSettings {
                discount: 0.7,
                threshold: 1e-12,
                max_iterations: 10_000,
            },
        })
    }

    pub fn feasible(&self, state: usize) -> usize {
        let cap = self.p_max.min(self.grid.energy(state) / self.slot_t);
        self.actions.feasible_count(cap)
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        average_utility(
            &self.bandwidths,
            &self.actions.get(action).powers,
            self.grid.energy(state),
            &self.geometry,
            &self.exponent,
        )
    }

    /// Dense transition matrix of `(state, action)`.
    pub fn transition(&self, state: usize, action: usize) -> Result<Vec<f64>> {
        let row = build_transition_row(
            state,
            self.actions.get(action).total_power,
            &self.grid,
            &self.harvest,
        )?;
        let mut dense = vec![0.0; self.grid.len()];
        for &(j, p) in row.entries() {
            dense[j] += p;
        }
        Ok(dense)
    }

    pub fn value_iteration(&self) -> Result<(ValueFunction, crate::solver::Policy)> {
        value_iteration(
            &self.grid,
            &self.actions,
            |i| self.feasible(i),
            |i, a| build_transition_row(i, a.total_power, &self.grid, &self.harvest),
            |i, k| self.reward(i, k),
            &self.settings,
        )
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn check_small_mdp() -> CheckResult {
    let run = || -> Result<(f64, bool, usize)> {
        let toy = ToyMdp::new()?;
        let n = toy.grid.len();
        let delta = toy.settings.discount;
        let (v, policy) = toy.value_iteration()?;
        let counts: Vec<usize> = (0..n).map(|i| toy.feasible(i)).collect();
        let total: usize = counts.iter().product();
        let mut best: Option<(Vec<f64>, Vec<usize>)> = None;
        for code in 0..total {
            let mut rest = code;
            let choice: Vec<usize> = counts
                .iter()
                .map(|&c| {
                    let k = rest % c;
                    rest /= c;
                    k
                })
                .collect();
            let mut a = vec![vec![0.0; n]; n];
            let mut r = vec![0.0; n];
            for i in 0..n {
                let row = toy.transition(i, choice[i])?;
                for j in 0..n {
                    a[i][j] = if i == j { 1.0 } else { 0.0 } - delta * row[j];
                }
                r[i] = toy.reward(i, choice[i]);
            }
            let val = solve_linear(a, r);
            let better = match &best {
                None => true,
                Some((bv, _)) => val.iter().sum::<f64>() > bv.iter().sum::<f64>(),
            };
            if better {
                best = Some((val, choice));
            }
        }
        let (bv, bp) = best.expect("at least one policy");
        let err = v
            .values
            .iter()
            .zip(&bv)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok((err, policy.actions == bp, total))
    };
    match run() {
        Ok((err, same, total)) => CheckResult::new(
            "value iteration vs policy enumeration",
            err <= 1e-9 && same,
            format!("{total} policies, max value gap {err:.2e}, same policy: {same}"),
        ),
        Err(e) => CheckResult::new("value iteration vs policy enumeration", false, e.to_string()),
    }
}

/// Per-sweep contraction with a rounding allowance of a few ulps of `‖V‖`.
pub fn contraction_holds(v: &ValueFunction, delta: f64) -> bool {
    let scale = v.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let slack = 8.0 * f64::EPSILON * scale;
    v.residual_history.windows(2).all(|w| {
        w[1] <= delta * w[0] * (1.0 + 1e-9) + slack && w[1] <= w[0] + slack
    })
}

/// Number of grid steps where `V` decreases by more than rounding.
pub fn monotonicity_violations(values: &[f64]) -> usize {
    let scale = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    values
        .windows(2)
        .filter(|w| w[1] < w[0] - 8.0 * f64::EPSILON * scale)
        .count()
}

fn check_default_solve(config: &SystemConfig) -> Vec<CheckResult> {
    let solved = Model::from_config(config).and_then(|m| solve(&m).map(|s| (m, s)));
    let (model, sol) = match solved {
        Ok(x) => x,
        Err(e) => return vec![CheckResult::new("value iteration on configured model", false, e.to_string())],
    };
    let v = &sol.value;
    let contraction = contraction_holds(v, sol.discount);
    let bad = monotonicity_violations(&v.values);
    let rates_positive = sol
        .actions
        .actions()
        .iter()
        .skip(1)
        .all(|a| average_sum_rate(&model.bandwidths, &a.powers, &model.geometry) > 0.0);
    vec![
        CheckResult::new(
            "value iteration contraction",
            contraction && rates_positive,
            format!("{} sweeps, final residual {:.2e}", v.iterations, v.residual),
        ),
        CheckResult::new(
            "value function non-decreasing in energy",
            bad == 0,
            format!("{bad} of {} grid steps decrease", v.values.len() - 1),
        ),
    ]
}

/// Runs every check against `config` and returns one result per check.
pub fn run_all(config: &SystemConfig) -> Vec<CheckResult> {
    let seed = config.simulation.seed;
    let mut out = vec![
        check_e1(),
        check_zipf(),
        check_backhaul_sampling(seed),
        check_average_utility(seed),
        check_small_mdp(),
    ];
    out.extend(check_default_solve(config));
    out
}
