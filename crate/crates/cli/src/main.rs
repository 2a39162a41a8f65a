use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use mvexit::action::{minimize_action, GammaMode};
use mvexit::experiments::{
    check_all, run_coupling_check, run_exit_campaign, run_exit_location, run_kramers_sweep, run_law_control,
    write_kramers_csv, write_path_csv, CampaignOptions, LevelPlan, Prepared, Summary,
};
use mvexit::flows::{gamma_flow, FlowOptions};
use mvexit::sde::write_exit_csv;
use mvexit::ExperimentConfig;

/// Relative tolerance for the slope and instanton verdicts.
const SLOPE_TOL: f64 = 0.2;
const INSTANTON_TOL: f64 = 0.03;

#[derive(Parser, Debug)]
#[command(name = "mvexit", version, about = "Exit-time experiments for self-stabilizing diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite an existing output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Comma-separated σ levels replacing the configured ones.
    #[arg(long, global = true, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    /// Replications per σ level.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true, env = "MVEXIT_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Run the assumption checkers on the model and domain.
    Check,
    /// Integrate the deterministic path from x_init.
    Flow,
    /// Exit cost H of the domain.
    ExitCost,
    /// Minimum-action path from the attractor to the exit-cost argmin.
    Instanton,
    /// Exit-time campaign without a verdict.
    Simulate,
    /// Kramers slope over the σ levels.
    Kramers,
    /// Exit frequencies on the configured boundary set.
    ExitLocation,
    /// Law control at the two smallest σ levels.
    LawControl,
    /// Coupling gap and coupled-copy occupancy.
    Coupling,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Flow => "flow",
            Command::ExitCost => "exit-cost",
            Command::Instanton => "instanton",
            Command::Simulate => "simulate",
            Command::Kramers => "kramers",
            Command::ExitLocation => "exit-location",
            Command::LawControl => "law-control",
            Command::Coupling => "coupling",
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(s) = &cli.sigma {
        cfg.simulation.sigmas = s.clone();
    }
    if let Some(r) = cli.reps {
        cfg.simulation.replications = r;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `<out>/<command>`, created empty. An existing non-empty directory is
/// only reused with `--force`.
fn prepare_out(base: &Path, command: Command, force: bool) -> Result<PathBuf> {
    let dir = base.join(command.name());
    if dir.exists() && fs::read_dir(&dir)?.next().is_some() {
        if !force {
            bail!("output directory {} exists; pass --force to overwrite", dir.display());
        }
        fs::remove_dir_all(&dir).with_context(|| format!("cannot clear {}", dir.display()))?;
    }
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn csv_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn write_exits(dir: &Path, prep: &Prepared, records: &[mvexit::ExitRecord]) -> Result<()> {
    write_exit_csv(csv_file(dir, "exits.csv")?, records, prep.model.dim)?;
    Ok(())
}

fn fmt_point(p: &[f64]) -> String {
    let parts: Vec<String> = p.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn run(cli: &Cli, command: Command) -> Result<Summary> {
    let cfg = load_config(cli)?;
    let dir = prepare_out(&cfg.output.dir, command, cli.force)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let prep = Prepared::new(cfg)?;
    let cfg = &prep.config;
    let mut s = Summary::new(command.name());
    s.set("h", format!("{:.6}", prep.h()));
    match command {
        Command::Check => {
            let report = check_all(&prep);
            fs::write(dir.join("assumptions.txt"), report.to_string())?;
            for e in &report.entries {
                s.set(format!("assumption.{}", e.id.to_string().to_lowercase().replace('-', "")), e.status);
            }
            for e in &report.entries {
                s.note(format!("{} {} {}", e.id, e.status, e.detail));
            }
            s.pass = Some(report.passed());
        }
        Command::Flow => {
            let a = prep.model.attractor.clone();
            let opts = FlowOptions {
                horizon: 1e4,
                stop_ball: Some((a, cfg.simulation.kappa / 3.0)),
                region: Some(&prep.domain),
                ..Default::default()
            };
            let traj = gamma_flow(&prep.model, &cfg.simulation.x_init, &opts)?;
            write_path_csv(csv_file(&dir, "flow.csv")?, &traj.times, &traj.points)?;
            s.set("final_time", format!("{:.6}", traj.final_time()));
            s.set("final_point", fmt_point(traj.last()));
            s.set("terminal_reason", format!("{:?}", traj.terminal_reason));
        }
        Command::ExitCost => {
            let ec = &prep.exit_cost;
            s.set("argmin", fmt_point(&ec.argmin));
            s.set("component", &ec.component);
            s.set("method", format!("{:?}", ec.method));
            s.set("tolerance", format!("{:.2e}", ec.tolerance));
        }
        Command::Instanton => {
            let v = &cfg.verification;
            let path = minimize_action(
                &prep.model.attractor,
                &prep.exit_cost.argmin,
                v.instanton_horizon,
                v.instanton_segments,
                &prep.model,
                GammaMode::FrozenAtA,
                v.instanton_iters,
                cfg.simulation.seed,
            )?;
            let times = path.path.times();
            write_path_csv(csv_file(&dir, "instanton.csv")?, &times, &path.path.points)?;
            let rel = (path.value - prep.h()) / prep.h();
            s.set("action", format!("{:.6}", path.value));
            s.set("relative_error", format!("{rel:.4}"));
            s.set("iterations", path.iterations);
            s.set("converged", path.converged);
            s.pass = Some(rel.abs() <= INSTANTON_TOL);
        }
        Command::Simulate => {
            let records = run_exit_campaign(
                &prep,
                &LevelPlan::from_config(cfg),
                CampaignOptions {
                    couple_after: cfg.couple_after(),
                    coupling_eta: Some(cfg.verification.coupling_eta),
                },
            )?;
            write_exits(&dir, &prep, &records)?;
            s.set("runs", records.len());
            s.set("censored", records.iter().filter(|r| r.censored).count());
        }
        Command::Kramers => {
            let (summary, records) = run_kramers_sweep(&prep)?;
            write_exits(&dir, &prep, &records)?;
            write_kramers_csv(csv_file(&dir, "kramers.csv")?, &summary)?;
            s.set("slope", format!("{:.6}", summary.slope));
            s.set("intercept", format!("{:.6}", summary.intercept));
            s.set("slope_relative_error", format!("{:.4}", summary.slope_relative_error));
            for l in &summary.levels {
                s.note(format!(
                    "sigma={} n={} censored={:.3} median_tau={:.4e} mean_log_tau={:.4}±{:.4} delta={:.4}{}",
                    l.sigma,
                    l.count,
                    l.censoring_rate,
                    l.median_tau,
                    l.mean_log_tau,
                    l.ci_half_width,
                    l.delta_band,
                    if l.used_in_fit { "" } else { " (excluded)" }
                ));
            }
            s.pass = Some(summary.within(SLOPE_TOL));
        }
        Command::ExitLocation => {
            let (report, records) = run_exit_location(&prep, &cfg.verification.exit_set)?;
            write_exits(&dir, &prep, &records)?;
            s.set("exit_set", report.exit_set.join("+"));
            s.set("set_cost", format!("{:.6}", report.set_cost));
            s.set("monotone", report.monotone);
            s.set("ceiling", report.ceiling);
            for l in &report.levels {
                s.note(format!("sigma={} exits={} in_set={} frequency={:.4}", l.sigma, l.exits, l.in_set, l.frequency));
            }
            s.pass = Some(report.pass);
        }
        Command::LawControl => {
            let report = run_law_control(&prep, f64::INFINITY)?;
            for l in &report.levels {
                if let Some(trace) = &l.first_trace {
                    trace.write_csv(csv_file(&dir, &format!("law_trace_sigma{}.csv", l.sigma))?)?;
                }
                s.note(format!(
                    "sigma={} kappa={} t_bar={:.4} horizon={:.1} controlled={}/{} no_exit={}/{}{}{}",
                    l.sigma,
                    l.kappa,
                    l.t_bar,
                    l.horizon,
                    l.controlled,
                    l.seeds,
                    l.controlled_no_exit,
                    l.seeds,
                    if l.out_of_regime { " out-of-regime" } else { "" },
                    l.skipped.as_deref().map(|r| format!(" skipped: {r}")).unwrap_or_default()
                ));
            }
            s.pass = Some(report.pass);
        }
        Command::Coupling => {
            let (report, records) = run_coupling_check(&prep, cfg.verification.coupling_eta)?;
            write_exits(&dir, &prep, &records)?;
            s.set("kappa", report.kappa);
            s.set("gap_monotone", report.gap_monotone);
            s.set("y_monotone", report.y_monotone);
            for l in &report.levels {
                s.note(format!(
                    "sigma={} runs={} exceed={:.4} y_outside={:.4} never_coupled={}",
                    l.sigma, l.runs, l.exceed_fraction, l.y_outside_fraction, l.never_coupled
                ));
            }
            s.pass = Some(report.pass);
        }
    }
    s.write(&dir)?;
    info!("outputs in {}", dir.display());
    Ok(s)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let Some(command) = cli.command else {
        eprintln!("{}", <Cli as clap::CommandFactory>::command().render_help());
        return ExitCode::from(1);
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli, command) {
        Ok(summary) => {
            print!("{}", summary.to_text());
            if summary.pass == Some(false) {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            if let Some(mvexit::Error::Precondition(report)) = e.downcast_ref::<mvexit::Error>() {
                eprintln!("precondition failed:\n{report}");
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sigma_list_parses() {
        let cli = Cli::try_parse_from(["mvexit", "kramers", "--sigma", "0.5,0.4", "--reps", "3"]).unwrap();
        assert_eq!(cli.sigma, Some(vec![0.5, 0.4]));
        assert_eq!(cli.command, Some(Command::Kramers));
    }
}
