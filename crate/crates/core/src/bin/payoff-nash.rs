use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use payoff_nash::diagnostics::{bias_scaling_check, mixed_mapping_mc, score_estimator_check};
use payoff_nash::harness::{emit_plotdata, feasible_center, load_game, run_experiment, solve_equilibria, ExperimentConfig};
use payoff_nash::{random_instance, validate_schedule, Game, GameSpec, InstanceSpec, Result, ScheduleSpec};

#[derive(Parser)]
#[command(name = "payoff-nash", version, about = "Payoff-based Nash equilibrium learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seed ensemble and write CSV/JSON results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides n_seeds.
        #[arg(long)]
        seeds: Option<usize>,
        /// Overrides output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        override_schedule_check: bool,
    },
    /// Solve the configured instance's equilibrium and print it as JSON.
    SolveNe {
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte Carlo checks of the smoothed mapping at the feasible centre.
    Diagnose {
        /// Game JSON file.
        #[arg(long)]
        game: PathBuf,
        #[arg(long, value_enum)]
        check: Check,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check the step and exploration schedules' summability conditions.
    ValidateSchedule {
        #[arg(long)]
        gamma_a: f64,
        #[arg(long)]
        sigma_a: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma_c: f64,
        #[arg(long, default_value_t = 0.1)]
        sigma_c: f64,
    },
    /// Write a random case-study instance as game JSON.
    GenInstance {
        #[arg(long, default_value_t = 10)]
        players: usize,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    /// Score estimator against the closed-form smoothed mapping.
    Score,
    /// Smoothing bias over the ladder sigma, sigma/2, sigma/4.
    Bias,
    /// Pathwise estimate of the smoothed mapping.
    Mixed,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            out,
            override_schedule_check,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(k) = seeds {
                cfg.n_seeds = k;
            }
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            cfg.override_schedule_check |= override_schedule_check;
            let ensemble = run_experiment(&cfg)?;
            let plot = emit_plotdata(&ensemble, &cfg.output_dir)?;
            print_json(&json!({
                "output_dir": cfg.output_dir,
                "plotdata": plot,
                "summary": ensemble.summary,
            }))
        }
        Command::SolveNe { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let game = cfg.game()?;
            let sols = solve_equilibria(&game, cfg.vi_tol, cfg.vi_max_iter, cfg.instance_seed)?;
            print_json(&sols)
        }
        Command::Diagnose {
            game,
            check,
            sigma,
            samples,
            seed,
        } => {
            let game: GameSpec = load_game(&game)?;
            let mu = feasible_center(game.action_sets());
            match check {
                Check::Score => print_json(&score_estimator_check(&game, &mu, sigma, samples, seed)?),
                Check::Mixed => print_json(&mixed_mapping_mc(&game, &mu, sigma, samples, seed)?),
                Check::Bias => {
                    let ladder = [sigma, sigma / 2.0, sigma / 4.0];
                    print_json(&bias_scaling_check(&game, &mu, &ladder, samples, seed)?)
                }
            }
        }
        Command::ValidateSchedule {
            gamma_a,
            sigma_a,
            gamma_c,
            sigma_c,
        } => {
            let v = validate_schedule(&ScheduleSpec::new(gamma_c, gamma_a, sigma_c, sigma_a))?;
            let names: Vec<&str> = v.violated.iter().map(|c| c.name()).collect();
            print_json(&json!({ "valid": v.valid, "violated": v.violated, "conditions": names }))
        }
        Command::GenInstance {
            players,
            dim,
            seed,
            out,
        } => {
            let game = GameSpec::Quadratic(random_instance(
                seed,
                &InstanceSpec {
                    players,
                    dim,
                    ..InstanceSpec::default()
                },
            )?);
            let text = serde_json::to_string_pretty(&game)?;
            std::fs::write(&out, text).map_err(|e| payoff_nash::Error::io(&out, e))?;
            print_json(&json!({ "game": out, "players": players, "dim": dim, "seed": seed }))
        }
    }
}
