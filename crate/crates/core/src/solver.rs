//! Discrete actions, value iteration over the energy grid and online action
//! selection.
//!
//! Offline, every action is scored with the channel-averaged utility and
//! drains `total_power · T`, where `total_power` carries the expected
//! backhaul cost `ε · P̄_b`. Online, the realized channels and cache miss are
//! known: the score uses the instantaneous utility, and the feasibility test
//! charges the realized backhaul power only when the slot actually misses.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{build_transition_row, EnergyGrid, HarvestDistribution, TransitionRow};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::utility::{average_sum_rate, instantaneous_utility};

/// Relative slack on the power-cap comparison.
const CAP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ActionMode {
    /// `L` total downlink levels, shared equally by all users.
    #[default]
    EqualSplit,
    /// Every per-user combination of `L` levels (at most 3 users).
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub powers: Vec<f64>,
    /// Backhaul reservation `P̄_b`; the action charges `ε` times this.
    pub backhaul_budget: f64,
    /// `Σ P_i + ε P̄_b` for transmitting actions, 0 for the idle action.
    pub total_power: f64,
}

impl Action {
    pub fn zero(n_users: usize) -> Self {
        Self {
            powers: vec![0.0; n_users],
            backhaul_budget: 0.0,
            total_power: 0.0,
        }
    }

    pub fn downlink_power(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn is_idle(&self) -> bool {
        self.powers.iter().all(|&p| p == 0.0)
    }
}

/// How an action set is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRule {
    pub n_users: usize,
    pub levels: usize,
    pub mode: ActionMode,
    pub p_max: f64,
    pub backhaul_budget: f64,
    pub backhaul_access: f64,
}

impl ActionRule {
    pub fn from_model(model: &Model) -> Self {
        Self {
            n_users: model.n_users(),
            levels: model.config.solver.power_levels,
            mode: model.config.solver.action_mode,
            p_max: model.p_max,
            backhaul_budget: model.backhaul_budget,
            backhaul_access: model.backhaul_access,
        }
    }

    /// Downlink power left once the expected backhaul cost is reserved.
    pub fn downlink_ceiling(&self) -> f64 {
        self.p_max - self.backhaul_access * self.backhaul_budget
    }
}

/// Actions sorted by total power, idle action first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    pub rule: ActionRule,
    actions: Vec<Action>,
}

impl ActionSet {
    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> &Action {
        &self.actions[index]
    }

    /// Builds a set from explicit actions. The idle action is added if absent.
    pub fn from_actions(rule: ActionRule, mut actions: Vec<Action>) -> Result<Self> {
        for a in &actions {
            if a.powers.len() != rule.n_users {
                return Err(Error::Precondition("action size differs from user count".into()));
            }
            if a.powers.iter().any(|&p| !(p >= 0.0)) || !(a.total_power >= 0.0) {
                return Err(Error::Precondition("action powers must be nonnegative".into()));
            }
            if a.total_power > rule.p_max * (1.0 + CAP_SLACK) {
                return Err(Error::Precondition(format!(
                    "action total {} W exceeds P_max {} W",
                    a.total_power, rule.p_max
                )));
            }
        }
        if !actions.iter().any(Action::is_idle) {
            actions.push(Action::zero(rule.n_users));
        }
        actions.sort_by(|x, y| {
            x.total_power
                .total_cmp(&y.total_power)
                .then_with(|| (!x.is_idle()).cmp(&!y.is_idle()))
        });
        actions.dedup();
        Ok(Self { rule, actions })
    }

    /// Number of leading actions whose total power fits under `cap`.
    /// Always at least one (the idle action).
    pub fn feasible_count(&self, cap: f64) -> usize {
        let limit = cap * (1.0 + CAP_SLACK);
        self.actions
            .partition_point(|a| a.total_power <= limit)
            .max(1)
    }
}

pub fn build_action_set(rule: ActionRule) -> Result<ActionSet> {
    if rule.levels < 2 {
        return Err(Error::config("solver.power_levels", "need at least 2 levels"));
    }
    if rule.n_users == 0 {
        return Err(Error::config("network.n_users", "need at least one user"));
    }
    let ceiling = rule.downlink_ceiling();
    if !(ceiling > 0.0) {
        return Err(Error::config(
            "network.max_power_w",
            format!(
                "expected backhaul cost {} W leaves no downlink power under P_max = {} W",
                rule.backhaul_access * rule.backhaul_budget,
                rule.p_max
            ),
        ));
    }
    let reserve = rule.backhaul_access * rule.backhaul_budget;
    let step = ceiling / (rule.levels - 1) as f64;
    let make = |powers: Vec<f64>| {
        let downlink: f64 = powers.iter().sum();
        if downlink == 0.0 {
            Action::zero(rule.n_users)
        } else {
            Action {
                powers,
                backhaul_budget: rule.backhaul_budget,
                total_power: (downlink + reserve).min(rule.p_max),
            }
        }
    };

    let actions = match rule.mode {
        ActionMode::EqualSplit => (0..rule.levels)
            .map(|l| {
                let total = if l + 1 == rule.levels { ceiling } else { l as f64 * step };
                make(vec![total / rule.n_users as f64; rule.n_users])
            })
            .collect(),
        ActionMode::Exhaustive => {
            if rule.n_users > 3 {
                return Err(Error::config(
                    "solver.action_mode",
                    format!("exhaustive action sets are limited to 3 users, got {}", rule.n_users),
                ));
            }
            let per_user: Vec<f64> = (0..rule.levels).map(|l| l as f64 * step).collect();
            let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
            for _ in 0..rule.n_users {
                combos = combos
                    .into_iter()
                    .flat_map(|c| {
                        per_user.iter().map(move |&p| {
                            let mut next = c.clone();
                            next.push(p);
                            next
                        })
                    })
                    .collect();
            }
            combos
                .into_iter()
                .filter(|c| c.iter().sum::<f64>() <= ceiling * (1.0 + CAP_SLACK))
                .map(make)
                .collect()
        }
    };
    ActionSet::from_actions(rule, actions)
}

/// Indices of the actions allowed at `energy`: total power within
/// `min(P_max, E/T)`.
pub fn feasible_actions(energy: f64, actions: &ActionSet, slot_t: f64) -> Vec<usize> {
    let cap = actions.rule.p_max.min(energy / slot_t);
    (0..actions.feasible_count(cap)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub discount: f64,
    pub threshold: f64,
    pub max_iterations: usize,
}

impl SolverSettings {
    pub fn from_model(model: &Model) -> Self {
        let s = &model.config.solver;
        Self {
            discount: s.discount,
            threshold: s.threshold,
            max_iterations: s.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Sup-norm change of every sweep, in order.
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub actions: Vec<usize>,
}

struct Choice {
    reward: f64,
    row: TransitionRow,
}

/// Jacobi value iteration from `V_0 = 0`.
///
/// `feasible(i)` gives how many leading actions are allowed at grid point
/// `i`; `transition(i, action)` and `reward(i, action_index)` describe each
/// allowed action there.
pub fn value_iteration<F, T, U>(
    grid: &EnergyGrid,
    actions: &ActionSet,
    feasible: F,
    transition: T,
    reward: U,
    settings: &SolverSettings,
) -> Result<(ValueFunction, Policy)>
where
    F: Fn(usize) -> usize,
    T: Fn(usize, &Action) -> Result<TransitionRow>,
    U: Fn(usize, usize) -> f64,
{
    if !(0.0..1.0).contains(&settings.discount) {
        return Err(Error::config("solver.discount", "must lie in [0, 1)"));
    }
    if !(settings.threshold > 0.0) {
        return Err(Error::config("solver.threshold", "must be > 0"));
    }
    let delta = settings.discount;

    let mut choices: Vec<Vec<Choice>> = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let count = feasible(i).clamp(1, actions.len());
        let mut here = Vec::with_capacity(count);
        for (k, a) in actions.actions()[..count].iter().enumerate() {
            let reward = reward(i, k);
            if !reward.is_finite() {
                return Err(Error::Precondition(format!(
                    "non-finite reward at grid point {i}"
                )));
            }
            here.push(Choice {
                reward,
                row: transition(i, a)?,
            });
        }
        choices.push(here);
    }

    let backup = |state: &[Choice], v: &[f64]| -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, c) in state.iter().enumerate() {
            let q = c.reward + delta * c.row.expect(v);
            if q > best.1 {
                best = (k, q);
            }
        }
        best
    };

    let mut v = vec![0.0; grid.len()];
    let mut next = vec![0.0; grid.len()];
    let mut history = Vec::new();
    loop {
        next.par_iter_mut()
            .zip(choices.par_iter())
            .for_each(|(out, state)| *out = backup(state, &v).1);
        let residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        history.push(residual);
        if residual < settings.threshold {
            break;
        }
        if history.len() >= settings.max_iterations {
            return Err(Error::NoConvergence {
                iterations: history.len(),
                residual,
            });
        }
    }
    let policy = choices.par_iter().map(|state| backup(state, &v).0).collect();
    debug!(
        "value iteration converged in {} sweeps, residual {:e}",
        history.len(),
        history.last().copied().unwrap_or(0.0)
    );
    Ok((
        ValueFunction {
            values: v,
            iterations: history.len(),
            residual: *history.last().unwrap_or(&0.0),
            residual_history: history,
        },
        Policy { actions: policy },
    ))
}

/// A converged solve for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub actions: ActionSet,
    pub value: ValueFunction,
    pub policy: Policy,
    pub discount: f64,
}

/// Builds the action set and runs value iteration with the averaged utility.
pub fn solve(model: &Model) -> Result<Solution> {
    let actions = build_action_set(ActionRule::from_model(model))?;
    let settings = SolverSettings::from_model(model);
    // The averaged rate does not depend on the battery; compute it once.
    let rates: Vec<f64> = actions
        .actions()
        .iter()
        .map(|a| average_sum_rate(&model.bandwidths, &a.powers, &model.geometry))
        .collect();
    let downlink: Vec<f64> = actions.actions().iter().map(Action::downlink_power).collect();
    let (value, policy) = value_iteration(
        &model.grid,
        &actions,
        |i| actions.feasible_count(model.power_cap(model.grid.energy(i))),
        |i, a| build_transition_row(i, a.total_power, &model.grid, &model.harvest),
        |i, k| {
            if downlink[k] == 0.0 {
                0.0
            } else {
                rates[k] / downlink[k].powf(model.exponent.at(model.grid.energy(i)))
            }
        },
        &settings,
    )?;
    Ok(Solution {
        actions,
        value,
        policy,
        discount: settings.discount,
    })
}

/// `E[V(E')]` after draining to `post_drain` and crediting the harvest.
pub fn expected_next_value(
    post_drain: f64,
    values: &[f64],
    grid: &EnergyGrid,
    harvest: &HarvestDistribution,
) -> Result<f64> {
    let mut acc = 0.0;
    for (k, &p) in harvest.pmf().iter().enumerate() {
        let e = (post_drain + k as f64 * harvest.q_energy()).min(grid.e_max());
        acc += p * grid.interpolate(values, e)?;
    }
    Ok(acc)
}

/// Online choice for one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    /// Index into the solution's action set; 0 is idle.
    pub index: usize,
    /// Realized backhaul power spent this slot.
    pub backhaul_power: f64,
}

impl Decision {
    pub fn idle() -> Self {
        Self {
            index: 0,
            backhaul_power: 0.0,
        }
    }
}

/// Picks the action maximizing realized utility plus the discounted
/// expected value of the next battery level.
///
/// On a cache miss the realized backhaul power `γ_min d_b^α σ² / h2_b` is
/// charged against the power cap; if even that alone does not fit, the slot
/// idles.
pub fn one_step_lookahead(
    energy: f64,
    h2s: &[f64],
    h2_b: f64,
    miss: bool,
    solution: &Solution,
    model: &Model,
) -> Result<Decision> {
    let cap = model.power_cap(energy);
    let backhaul = if miss {
        match backhaul_power(h2_b, energy, model) {
            Some(p) => p,
            None => return Ok(Decision::idle()),
        }
    } else {
        0.0
    };
    let values = &solution.value.values;
    let limit = cap * (1.0 + CAP_SLACK);
    let delta = solution.discount;

    let mut best = Decision::idle();
    let mut best_score = if delta == 0.0 {
        0.0
    } else {
        delta * expected_next_value(energy, values, &model.grid, &model.harvest)?
    };
    for (k, a) in solution.actions.actions().iter().enumerate().skip(1) {
        let downlink = a.downlink_power();
        if downlink + backhaul > limit {
            continue;
        }
        let now = instantaneous_utility(
            &model.bandwidths,
            &a.powers,
            h2s,
            energy,
            &model.geometry,
            &model.exponent,
        );
        let future = if delta == 0.0 {
            0.0
        } else {
            let post = (energy - a.total_power * model.slot_t).max(0.0);
            delta * expected_next_value(post, values, &model.grid, &model.harvest)?
        };
        if now + future > best_score {
            best_score = now + future;
            best = Decision {
                index: k,
                backhaul_power: backhaul,
            };
        }
    }
    Ok(best)
}

/// Realized backhaul power meeting the SNR target, or `None` when it does
/// not fit under `min(P_max, E/T)`.
pub fn backhaul_power(h2_b: f64, energy: f64, model: &Model) -> Option<f64> {
    if !(h2_b > 0.0) {
        return None;
    }
    let p = model.gamma_min * model.geometry.backhaul_noise_floor() / h2_b;
    (p <= model.power_cap(energy) * (1.0 + CAP_SLACK)).then_some(p)
}
