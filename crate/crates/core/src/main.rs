use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use sbs_power::experiments::{self, ExperimentOutput, SolveCache};
use sbs_power::sim::{fmt_sig9, TraceWriter};
use sbs_power::snapshot::PolicySnapshot;
use sbs_power::{load_config, simulate, solve, validation, Controller, Model, SimOptions, SystemConfig};

#[derive(Parser)]
#[command(version, about = "Power control and simulation for an energy-harvesting small cell")]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (overrides simulation.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Slots per run (overrides simulation.slots).
    #[arg(long, global = true)]
    slots: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Dp,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// Run value iteration and write a policy snapshot.
    Solve {
        /// Snapshot path (default: OUT/policy.json).
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Simulate one run and write its per-slot trace.
    Simulate {
        #[arg(long, value_enum, default_value = "dp")]
        policy: PolicyArg,
        /// Reuse a snapshot instead of solving.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Energy trace of a single run.
    Fig2,
    /// Remaining energy against the number of users.
    Fig3,
    /// Throughput of the dp and full-power controllers.
    Fig4,
    /// Remaining energy over cache size and energy per arrival.
    Fig5,
    /// Run the built-in oracle checks.
    Validate,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn resolve_config(cli: &Cli) -> anyhow::Result<SystemConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => SystemConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(slots) = cli.slots {
        cfg.simulation.slots = slots;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let cfg = resolve_config(cli)?;
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Solve { snapshot } => {
            let model = Model::from_config(&cfg)?;
            let sol = solve(&model)?;
            info!(
                "converged in {} sweeps, residual {:e}",
                sol.value.iterations, sol.value.residual
            );
            let path = snapshot.clone().unwrap_or_else(|| cli.out.join("policy.json"));
            PolicySnapshot::new(&model, sol).save(&path)?;
            info!("wrote {}", path.display());
        }
        Command::Simulate { policy, snapshot } => simulate_once(cli, &cfg, *policy, snapshot.as_deref())?,
        Command::Fig2 => {
            let (output, _) = experiments::run_fig2(&cfg, &SolveCache::new())?;
            finish(&output, &cli.out)?;
        }
        Command::Fig3 => finish(&experiments::run_fig3(&cfg, &SolveCache::new())?, &cli.out)?,
        Command::Fig4 => finish(&experiments::run_fig4(&cfg, &SolveCache::new())?, &cli.out)?,
        Command::Fig5 => finish(&experiments::run_fig5(&cfg, &SolveCache::new())?, &cli.out)?,
        Command::Validate => {
            let results = validation::run_all(&cfg);
            let mut failed = 0;
            for r in &results {
                println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", results.len());
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn finish(output: &ExperimentOutput, dir: &Path) -> anyhow::Result<()> {
    output.write(dir)?;
    for (name, _) in &output.tables {
        info!("wrote {}", dir.join(name).display());
    }
    Ok(())
}

fn simulate_once(
    cli: &Cli,
    cfg: &SystemConfig,
    policy: PolicyArg,
    snapshot: Option<&Path>,
) -> anyhow::Result<()> {
    let model = Model::from_config(cfg)?;
    let solution = match (policy, snapshot) {
        (PolicyArg::Baseline, Some(_)) => bail!("--snapshot only applies to --policy dp"),
        (PolicyArg::Baseline, None) => None,
        (PolicyArg::Dp, Some(path)) => {
            let snap = PolicySnapshot::load(path)
                .with_context(|| format!("reading snapshot {}", path.display()))?;
            snap.check_matches(&model)?;
            Some(snap.solution)
        }
        (PolicyArg::Dp, None) => Some(solve(&model)?),
    };
    let controller = match &solution {
        Some(sol) => Controller::Lookahead(sol),
        None => Controller::Baseline,
    };
    let trace_path = cli.out.join("trace.csv");
    let file = File::create(&trace_path)
        .with_context(|| format!("creating {}", trace_path.display()))?;
    let mut writer = TraceWriter::new(BufWriter::new(file), model.n_users())?;
    let mut write_err = None;
    let opts = SimOptions::from_model(&model, cfg.simulation.seed);
    let metrics = simulate(controller, &model, &opts, |s| {
        if write_err.is_none() {
            write_err = writer.write(s).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    writer.finish()?;

    let header = "policy,seed,slots,measured_slots,mean_energy_j,terminal_energy_j,mean_throughput_bps,idle_fraction,backhaul_fraction,miss_fraction,arrivals";
    let row = [
        metrics.policy.as_str().to_string(),
        metrics.seed.to_string(),
        metrics.n_slots.to_string(),
        metrics.measured_slots.to_string(),
        fmt_sig9(metrics.mean_energy),
        fmt_sig9(metrics.terminal_energy),
        fmt_sig9(metrics.mean_throughput),
        fmt_sig9(metrics.idle_fraction),
        fmt_sig9(metrics.backhaul_fraction),
        fmt_sig9(metrics.miss_fraction),
        metrics.arrivals.to_string(),
    ]
    .join(",");
    std::fs::write(cli.out.join("metrics.csv"), format!("{header}\n{row}\n"))?;
    let manifest = serde_json::json!({
        "experiment": "simulate",
        "crate_version": env!("CARGO_PKG_VERSION"),
        "metrics": metrics,
        "outputs": ["trace.csv", "metrics.csv"],
        "resolved_config_toml": cfg.to_toml_string(),
    });
    std::fs::write(cli.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    std::fs::write(cli.out.join("resolved_config.toml"), cfg.to_toml_string())?;
    info!(
        "{} slots, mean energy {:.4} J, mean throughput {:.4e} bit/s",
        metrics.n_slots, metrics.mean_energy, metrics.mean_throughput
    );
    Ok(())
}
