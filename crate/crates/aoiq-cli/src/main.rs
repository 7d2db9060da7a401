//! Command-line front end: solve the periodic steady state, run the Monte
//! Carlo validator, and emit plot-ready CSV files.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
//! 4 Floquet instability, 5 validation above threshold, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aoiq::config::ScenarioConfig;
use aoiq::error::Error;
use aoiq::metrics::MetricsTable;
use aoiq::montecarlo::{self, McConfig, McEstimate};
use aoiq::pss::{self, PssSolution};
use aoiq::rates::Scenario;
use aoiq::state_space::StateSpace;

#[derive(Parser)]
#[command(
    name = "aoiq",
    version,
    about = "Periodic AoI/PAoI solver for multi-priority queues"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the periodic steady state and export metric trajectories.
    Solve {
        /// Scenario file (TOML).
        config: PathBuf,
        /// Output directory (default: $AOIQ_OUT or ./aoiq_out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override solver.steps_per_period.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the Monte Carlo estimator and export binned estimates.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override mc.n_paths.
        #[arg(long)]
        paths: Option<usize>,
        /// Override mc.root_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the per-path event logs (debugging; large).
        #[arg(long)]
        events: bool,
    },
    /// Solve, then compare against a progressive Monte Carlo sweep.
    Validate {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cap the progressive sweep at this many paths.
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Print the Floquet multipliers of the reduced monodromy matrix.
    Floquet {
        config: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Solve { config, out, steps } => cmd_solve(&config, out, steps),
        Command::Simulate {
            config,
            out,
            paths,
            seed,
            events,
        } => cmd_simulate(&config, out, paths, seed, events),
        Command::Validate {
            config,
            out,
            paths,
            seed,
            steps,
        } => cmd_validate(&config, out, paths, seed, steps),
        Command::Floquet { config, steps } => cmd_floquet(&config, steps),
    }
}

fn output_dir(flag: Option<PathBuf>) -> Result<PathBuf, Error> {
    let dir = flag
        .or_else(|| std::env::var_os("AOIQ_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("aoiq_out"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create output dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, content: &str) -> Result<(), Error> {
    std::fs::write(path, content)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct Setup {
    cfg: ScenarioConfig,
    scenario: Scenario,
    space: StateSpace,
}

fn setup(config_path: &Path, steps: Option<usize>) -> Result<Setup, Error> {
    let mut cfg = ScenarioConfig::load(config_path)?;
    if let Some(s) = steps {
        cfg.solver.steps_per_period = s;
    }
    let scenario = cfg.scenario()?;
    let space = StateSpace::enumerate(cfg.n_classes)?;
    Ok(Setup {
        cfg,
        scenario,
        space,
    })
}

fn render_trajectory_csv(table: &MetricsTable) -> String {
    let mut out =
        String::from("t,class,mean_aoi,peak_aoi,service_prob,unserved_age,gap_lhs,gap_rhs\n");
    for (k, t) in table.times.iter().enumerate() {
        for (i, cm) in table.classes.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                t,
                i + 1,
                cm.mean_aoi[k],
                opt(cm.peak_aoi[k]),
                cm.service_prob[k],
                opt(cm.unserved_age[k]),
                opt(cm.gap_lhs[k]),
                opt(cm.gap_rhs[k]),
            ));
        }
    }
    out
}

fn render_residuals_csv(residuals: &[f64]) -> String {
    let mut out = String::from("iteration,residual\n");
    for (k, r) in residuals.iter().enumerate() {
        out.push_str(&format!("{},{}\n", k + 1, r));
    }
    out
}

fn render_estimate_csv(est: &McEstimate) -> String {
    let mut out = String::from("t,class,mean_aoi,mean_aoi_se,peak_aoi,peak_aoi_se,peak_count\n");
    for (b, t) in est.bin_edges.iter().enumerate() {
        for i in 0..est.mean_aoi.len() {
            let m = est.mean_aoi[i][b];
            let p = est.peak_aoi[i][b];
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t,
                i + 1,
                opt(m.mean),
                opt(m.se),
                opt(p.mean),
                opt(p.se),
                p.count,
            ));
        }
    }
    out
}

fn manifest(
    command: &str,
    cfg: &ScenarioConfig,
    extra: serde_json::Value,
    outputs: &[&str],
) -> String {
    let doc = serde_json::json!({
        "tool": "aoiq",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "outcome": extra,
        "outputs": outputs,
    });
    serde_json::to_string_pretty(&doc).expect("manifest serializes") + "\n"
}

fn cmd_solve(config: &Path, out: Option<PathBuf>, steps: Option<usize>) -> Result<u8, Error> {
    let s = setup(config, steps)?;
    let dir = output_dir(out)?;
    let solver_cfg = s.cfg.solver_config()?;
    let solution = pss::solve(&s.space, &s.scenario, &solver_cfg)?;

    let table = MetricsTable::from_trajectory(&solution.trajectory, &s.space);
    write_file(
        &dir.join("pss_trajectory.csv"),
        &render_trajectory_csv(&table),
    )?;
    write_file(
        &dir.join("residuals.csv"),
        &render_residuals_csv(&solution.residual_history),
    )?;
    let final_residual = solution.residual_history.last().copied();
    write_file(
        &dir.join("manifest.json"),
        &manifest(
            "solve",
            &s.cfg,
            serde_json::json!({
                "converged": solution.converged,
                "iterations": solution.iterations,
                "final_residual": final_residual,
            }),
            &["pss_trajectory.csv", "residuals.csv"],
        ),
    )?;

    println!(
        "solve: {} after {} iterations (final residual {:.3e})",
        if solution.converged {
            "converged"
        } else {
            "did NOT converge"
        },
        solution.iterations,
        final_residual.unwrap_or(f64::NAN),
    );
    println!("outputs in {}", dir.display());
    Ok(if solution.converged { 0 } else { 3 })
}

fn cmd_simulate(
    config: &Path,
    out: Option<PathBuf>,
    paths: Option<usize>,
    seed: Option<u64>,
    events: bool,
) -> Result<u8, Error> {
    let s = setup(config, None)?;
    let dir = output_dir(out)?;
    let mut mc_cfg = s.cfg.mc_config()?;
    if let Some(p) = paths {
        mc_cfg.n_paths = p;
    }
    if let Some(sd) = seed {
        mc_cfg.root_seed = sd;
    }
    mc_cfg.validate()?;

    let path_stats = montecarlo::run_paths(&s.space, &s.scenario, &mc_cfg, events);
    let est = montecarlo::estimate(&path_stats, s.scenario.period())?;
    write_file(&dir.join("mc_estimate.csv"), &render_estimate_csv(&est))?;
    let mut outputs = vec!["mc_estimate.csv"];
    if events {
        write_file(
            &dir.join("path_events.csv"),
            &render_events_csv(&path_stats),
        )?;
        outputs.push("path_events.csv");
    }
    write_file(
        &dir.join("manifest.json"),
        &manifest(
            "simulate",
            &s.cfg,
            serde_json::json!({
                "n_paths": mc_cfg.n_paths,
                "root_seed": mc_cfg.root_seed,
                "events": events,
            }),
            &outputs,
        ),
    )?;
    println!(
        "simulate: {} paths, {} bins/period; outputs in {}",
        mc_cfg.n_paths,
        mc_cfg.bins_per_period,
        dir.display()
    );
    Ok(0)
}

fn render_events_csv(paths: &[aoiq::montecarlo::PathStats]) -> String {
    use aoiq::montecarlo::PathEvent;
    let mut out = String::from(
        "path,event,t,class,replaced,started_service,pre_age,served_gen_time,entering\n",
    );
    for (p, stats) in paths.iter().enumerate() {
        let Some(events) = stats.events.as_ref() else {
            continue;
        };
        for ev in events {
            match ev {
                PathEvent::Arrival {
                    t,
                    class,
                    replaced,
                    started_service,
                } => out.push_str(&format!(
                    "{p},arrival,{t},{class},{replaced},{started_service},,,\n"
                )),
                PathEvent::Completion {
                    t,
                    class,
                    pre_age,
                    served_gen_time,
                    entering,
                    ..
                } => out.push_str(&format!(
                    "{p},completion,{t},{class},,,{pre_age},{served_gen_time},{entering}\n"
                )),
            }
        }
    }
    out
}

fn cmd_validate(
    config: &Path,
    out: Option<PathBuf>,
    paths: Option<usize>,
    seed: Option<u64>,
    steps: Option<usize>,
) -> Result<u8, Error> {
    let s = setup(config, steps)?;
    let dir = output_dir(out)?;
    let solver_cfg = s.cfg.solver_config()?;
    let mut mc_cfg = s.cfg.mc_config()?;
    if let Some(sd) = seed {
        mc_cfg.root_seed = sd;
    }

    let mut counts = s.cfg.validate.path_counts.clone();
    if let Some(cap) = paths {
        counts.retain(|&c| c <= cap);
        if counts.last() != Some(&cap) {
            counts.push(cap);
        }
    }
    let max_paths = *counts
        .last()
        .ok_or_else(|| Error::Config("validate needs at least one path count".into()))?;

    let solution = pss::solve(&s.space, &s.scenario, &solver_cfg)?;
    if !solution.converged {
        println!("validate: solver did not converge; aborting comparison");
        return Ok(3);
    }

    // progressive sweep, averaged over trials (trial k shifts the root seed)
    let n_trials = mc_cfg.n_trials;
    let mut mae_by_count = vec![(0.0f64, 0.0f64, 0.0f64, 0.0f64); counts.len()];
    let mut first_estimate: Option<McEstimate> = None;
    for trial in 0..n_trials {
        let trial_cfg = McConfig {
            n_paths: max_paths,
            root_seed: mc_cfg.root_seed.wrapping_add(trial as u64),
            ..mc_cfg
        };
        let path_stats = montecarlo::run_paths(&s.space, &s.scenario, &trial_cfg, false);
        let reports = montecarlo::progressive_mae(
            &s.space,
            &solution,
            &path_stats,
            &counts,
            s.scenario.period(),
        )?;
        for (slot, r) in mae_by_count.iter_mut().zip(&reports) {
            slot.0 += r.mean_aoi_mae_aggregate / n_trials as f64;
            slot.1 += r.peak_aoi_mae_aggregate.unwrap_or(f64::NAN) / n_trials as f64;
            slot.2 += r.relative_mean_aoi_mae / n_trials as f64;
            slot.3 += r.undefined_peak_bins as f64 / n_trials as f64;
        }
        if trial == 0 {
            first_estimate = Some(montecarlo::estimate(&path_stats, s.scenario.period())?);
        }
    }

    let mut mae_csv = String::from(
        "n_paths,mean_aoi_mae,peak_aoi_mae,relative_mean_aoi_mae,undefined_peak_bins\n",
    );
    for (c, (m, p, rel, undef)) in counts.iter().zip(&mae_by_count) {
        mae_csv.push_str(&format!("{c},{m},{p},{rel},{undef}\n"));
    }
    write_file(&dir.join("mae_vs_paths.csv"), &mae_csv)?;

    let est = first_estimate.expect("at least one trial ran");
    write_file(
        &dir.join("overlay.csv"),
        &render_overlay_csv(&s.space, &s.scenario, &solution, &est)?,
    )?;

    let final_rel = mae_by_count.last().map(|s| s.2).unwrap_or(f64::NAN);
    let threshold = s.cfg.validate.mae_threshold;
    write_file(
        &dir.join("manifest.json"),
        &manifest(
            "validate",
            &s.cfg,
            serde_json::json!({
                "path_counts": counts,
                "n_trials": n_trials,
                "root_seed": mc_cfg.root_seed,
                "final_relative_mean_aoi_mae": final_rel,
                "threshold": threshold,
            }),
            &["mae_vs_paths.csv", "overlay.csv"],
        ),
    )?;

    for (c, (m, p, rel, _)) in counts.iter().zip(&mae_by_count) {
        println!(
            "validate: {c:>6} paths  mean-AoI MAE {m:.4}  peak-AoI MAE {p:.4}  relative {rel:.4}"
        );
    }
    println!("outputs in {}", dir.display());
    if final_rel <= threshold {
        Ok(0)
    } else {
        println!(
            "validate: final relative mean-AoI MAE {final_rel:.4} exceeds threshold {threshold}"
        );
        Ok(5)
    }
}

fn render_overlay_csv(
    space: &StateSpace,
    scenario: &Scenario,
    solution: &PssSolution,
    est: &McEstimate,
) -> Result<String, Error> {
    let table = MetricsTable::from_trajectory(&solution.trajectory, space);
    let period = est.period;
    let bins = est.bin_edges.len();
    let tol = period * 1e-9;
    let node = |phase: f64| {
        solution
            .trajectory
            .index_at_time(phase, tol)
            .ok_or_else(|| {
                Error::Config(
                    "overlay phases do not land on the solver grid; align bins_per_period with \
                 steps_per_period"
                        .into(),
                )
            })
    };
    let mut out = String::from(
        "t,class,ode_mean_aoi,mc_mean_aoi,mc_mean_aoi_se,ode_peak_aoi,mc_peak_aoi,mc_peak_aoi_se,outage\n",
    );
    for (b, t) in est.bin_edges.iter().enumerate() {
        let center = (b as f64 + 0.5) * period / bins as f64;
        let edge_idx = node(*t)?;
        let center_idx = node(center)?;
        // the bin is an outage bin when its representative phase has no
        // service capacity at all
        let outage = scenario.in_outage(center);
        for i in 0..est.mean_aoi.len() {
            let m = est.mean_aoi[i][b];
            let p = est.peak_aoi[i][b];
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                t,
                i + 1,
                table.classes[i].mean_aoi[edge_idx],
                opt(m.mean),
                opt(m.se),
                opt(table.classes[i].peak_aoi[center_idx]),
                opt(p.mean),
                opt(p.se),
                outage,
            ));
        }
    }
    Ok(out)
}

fn cmd_floquet(config: &Path, steps: Option<usize>) -> Result<u8, Error> {
    let s = setup(config, steps)?;
    let solver_cfg = s.cfg.solver_config()?;
    let report = pss::monodromy(&s.space, &s.scenario, &solver_cfg.integration)?;
    println!("multipliers ({}):", report.multipliers.len());
    for m in &report.multipliers {
        println!("  {:+.12e} {:+.12e}i  |.| = {:.12e}", m.re, m.im, m.norm());
    }
    println!("spectral radius: {:.12e}", report.spectral_radius);
    println!(
        "lower-block-triangle residual: {:.3e}",
        report.lower_block_residual
    );
    println!("stable: {}", report.stable);
    Ok(if report.stable { 0 } else { 4 })
}
