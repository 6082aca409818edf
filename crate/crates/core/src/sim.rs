//! Closed-loop slot simulation.
//!
//! Each slot draws, in this order and always from their own streams: the
//! `N_u + 1` fading gains, one request per user, and the harvest count. The
//! draws do not depend on the policy, so two policies run with the same seed
//! see identical channels, requests and arrivals.

use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::energy::step_energy;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::solver::{backhaul_power, one_step_lookahead, Action, Solution};
use crate::streams::{stream_rng, Stream};
use crate::utility::sum_throughput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Dp,
    Baseline,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Dp => "dp",
            PolicyKind::Baseline => "baseline",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(PolicyKind::Dp),
            "baseline" => Ok(PolicyKind::Baseline),
            other => Err(Error::config("policy", format!("unknown policy {other:?}"))),
        }
    }
}

/// The controller driving a run.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Lookahead(&'a Solution),
    Baseline,
}

impl Controller<'_> {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Controller::Lookahead(_) => PolicyKind::Dp,
            Controller::Baseline => PolicyKind::Baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub users: Vec<f64>,
    pub backhaul: f64,
}

/// `n_users + 1` independent exponential gains with rate `mu`; the last is
/// the backhaul.
pub fn sample_channels<R: Rng + ?Sized>(rng: &mut R, n_users: usize, mu: f64) -> Result<ChannelDraw> {
    let law = fading_law(mu)?;
    let users = (0..n_users).map(|_| law.sample(rng)).collect();
    Ok(ChannelDraw {
        users,
        backhaul: law.sample(rng),
    })
}

fn fading_law(mu: f64) -> Result<Exp<f64>> {
    let err = Error::Domain {
        what: "fading rate",
        value: mu,
        expected: "finite and > 0",
    };
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(err);
    }
    Exp::new(mu).map_err(|_| err)
}

/// Channel-oblivious full-power rule: spend `min(P_max, E/T)`, less the
/// realized backhaul power on a miss, split equally. The returned action's
/// `backhaul_budget` is the realized backhaul power.
pub fn baseline_action(energy: f64, miss: bool, h2_b: f64, model: &Model) -> Action {
    let n = model.n_users();
    let cap = model.power_cap(energy);
    let backhaul = if miss {
        match backhaul_power(h2_b, energy, model) {
            Some(p) => p,
            None => return Action::zero(n),
        }
    } else {
        0.0
    };
    let downlink = cap - backhaul;
    if !(downlink > 0.0) {
        return Action::zero(n);
    }
    Action {
        powers: vec![downlink / n as f64; n],
        backhaul_budget: backhaul,
        total_power: downlink + backhaul,
    }
}

/// Everything that happened in one slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotOutcome {
    pub slot: u64,
    pub start_energy: f64,
    pub powers: Vec<f64>,
    pub h2_users: Vec<f64>,
    pub h2_backhaul: f64,
    pub miss: bool,
    pub backhaul_power: f64,
    pub harvested: f64,
    pub end_energy: f64,
    pub throughput: f64,
    pub idle: bool,
}

impl SlotOutcome {
    /// Realized total power drawn from the battery.
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum::<f64>() + self.backhaul_power
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub seed: u64,
    pub n_slots: u64,
    pub warmup_fraction: f64,
    /// Keep every k-th starting energy in [`RunMetrics::energy_trace`].
    pub trace_every: Option<u64>,
}

impl SimOptions {
    pub fn from_model(model: &Model, seed: u64) -> Self {
        Self {
            seed,
            n_slots: model.config.simulation.slots,
            warmup_fraction: model.config.simulation.warmup_fraction,
            trace_every: None,
        }
    }

    pub fn warmup_slots(&self) -> u64 {
        let w = (self.warmup_fraction * self.n_slots as f64).floor() as u64;
        w.min(self.n_slots - 1)
    }
}

/// Averages over the slots after warm-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub policy: PolicyKind,
    pub seed: u64,
    pub n_slots: u64,
    pub measured_slots: u64,
    /// Time average of the battery level at slot start.
    pub mean_energy: f64,
    /// Battery level after the last slot.
    pub terminal_energy: f64,
    pub mean_throughput: f64,
    pub idle_fraction: f64,
    pub backhaul_fraction: f64,
    pub miss_fraction: f64,
    pub arrivals: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub energy_trace: Vec<f64>,
}

/// Runs one closed-loop simulation, passing every slot to `observer`.
pub fn simulate<F>(
    controller: Controller<'_>,
    model: &Model,
    options: &SimOptions,
    mut observer: F,
) -> Result<RunMetrics>
where
    F: FnMut(&SlotOutcome),
{
    if options.n_slots == 0 {
        return Err(Error::config("simulation.slots", "must be at least 1"));
    }
    if !(0.0..1.0).contains(&options.warmup_fraction) {
        return Err(Error::config("simulation.warmup_fraction", "must lie in [0, 1)"));
    }
    if let Controller::Lookahead(sol) = controller {
        if sol.value.values.len() != model.grid.len() {
            return Err(Error::Precondition(
                "value function does not match the energy grid".into(),
            ));
        }
        if sol.actions.rule.n_users != model.n_users() {
            return Err(Error::Precondition("action set does not match the user count".into()));
        }
    }
    let n = model.n_users();
    let fading = fading_law(model.geometry.mu())?;
    let mut channel_rng = stream_rng(options.seed, Stream::Channels);
    let mut request_rng = stream_rng(options.seed, Stream::Requests);
    let mut arrival_rng = stream_rng(options.seed, Stream::Arrivals);
    let warmup = options.warmup_slots();
    let cache = model.catalog.cache_size();

    let mut out = SlotOutcome {
        powers: vec![0.0; n],
        h2_users: vec![0.0; n],
        ..SlotOutcome::default()
    };
    let mut energy = model.initial_energy;
    let (mut sum_e, mut sum_thr) = (0.0, 0.0);
    let (mut idle, mut backhaul, mut misses, mut arrivals) = (0u64, 0u64, 0u64, 0u64);
    let mut trace = Vec::new();

    for slot in 0..options.n_slots {
        for h in out.h2_users.iter_mut() {
            *h = fading.sample(&mut channel_rng);
        }
        let h2_b = fading.sample(&mut channel_rng);
        let mut miss = false;
        for _ in 0..n {
            miss |= model.catalog.sample_rank(&mut request_rng) > cache;
        }
        let k = model.harvest.sample(&mut arrival_rng);

        let backhaul_spent = match controller {
            Controller::Baseline => {
                let a = baseline_action(energy, miss, h2_b, model);
                out.powers.copy_from_slice(&a.powers);
                a.backhaul_budget
            }
            Controller::Lookahead(sol) => {
                let d = one_step_lookahead(energy, &out.h2_users, h2_b, miss, sol, model)?;
                out.powers.copy_from_slice(&sol.actions.get(d.index).powers);
                if d.index == 0 { 0.0 } else { d.backhaul_power }
            }
        };
        out.slot = slot;
        out.start_energy = energy;
        out.h2_backhaul = h2_b;
        out.miss = miss;
        out.idle = out.powers.iter().all(|&p| p == 0.0);
        out.backhaul_power = if out.idle { 0.0 } else { backhaul_spent };
        out.harvested = k as f64 * model.harvest.q_energy();
        out.throughput = if out.idle {
            0.0
        } else {
            sum_throughput(&model.bandwidths, &out.powers, &out.h2_users, &model.geometry)
        };
        out.end_energy = step_energy(
            energy,
            out.total_power(),
            model.slot_t,
            out.harvested,
            model.e_max(),
        )?;
        observer(&out);

        if let Some(every) = options.trace_every {
            if every > 0 && slot % every == 0 {
                trace.push(energy);
            }
        }
        if slot >= warmup {
            sum_e += energy;
            sum_thr += out.throughput;
            idle += out.idle as u64;
            backhaul += (out.backhaul_power > 0.0) as u64;
            misses += miss as u64;
            arrivals += k as u64;
        }
        energy = out.end_energy;
    }

    let measured = options.n_slots - warmup;
    let m = measured as f64;
    Ok(RunMetrics {
        policy: controller.kind(),
        seed: options.seed,
        n_slots: options.n_slots,
        measured_slots: measured,
        mean_energy: sum_e / m,
        terminal_energy: energy,
        mean_throughput: sum_thr / m,
        idle_fraction: idle as f64 / m,
        backhaul_fraction: backhaul as f64 / m,
        miss_fraction: misses as f64 / m,
        arrivals,
        energy_trace: trace,
    })
}

/// Formats a float with 9 significant digits.
pub fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Writes one CSV row per slot, fields in [`SlotOutcome`] order.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, n_users: usize) -> Result<Self> {
        let mut header = vec!["slot".to_string(), "start_energy_j".to_string()];
        header.extend((1..=n_users).map(|i| format!("power_{i}_w")));
        header.extend((1..=n_users).map(|i| format!("gain_{i}")));
        header.extend(
            [
                "gain_backhaul",
                "miss",
                "backhaul_power_w",
                "harvested_j",
                "end_energy_j",
                "throughput_bps",
                "idle",
            ]
            .map(String::from),
        );
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { out })
    }

    pub fn write(&mut self, s: &SlotOutcome) -> Result<()> {
        let w = &mut self.out;
        write!(w, "{},{}", s.slot, fmt_sig9(s.start_energy))?;
        for p in &s.powers {
            write!(w, ",{}", fmt_sig9(*p))?;
        }
        for h in &s.h2_users {
            write!(w, ",{}", fmt_sig9(*h))?;
        }
        writeln!(
            w,
            ",{},{},{},{},{},{},{}",
            fmt_sig9(s.h2_backhaul),
            s.miss as u8,
            fmt_sig9(s.backhaul_power),
            fmt_sig9(s.harvested),
            fmt_sig9(s.end_energy),
            fmt_sig9(s.throughput),
            s.idle as u8
        )?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
