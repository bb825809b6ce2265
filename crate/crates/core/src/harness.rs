//! Experiment orchestration: configuration, seed ensembles and file output.
//!
//! Output files in `output_dir`:
//!
//! - `instance.json`: the game and its oracle equilibria, reused on reruns
//!   with the same game.
//! - `run_XXX.csv`: one per seed, columns `t,relative_error,beta` followed by
//!   `mu_<player>_<coord>` when means are recorded.
//! - `summary.json`: per-t quantiles, final errors, wall times.
//! - `error_median.csv`: written by [`emit_plotdata`], columns
//!   `t,median,q25,q75`.
//!
//! Every CSV is UTF-8, comma separated, `.` decimal point, with a first line
//! `# columns: ...`. Floats use Rust's shortest round-trip formatting.
//!
//! Quantiles are nearest-rank order statistics: for `n` sorted values the
//! `q`-quantile is element `ceil(q n) - 1` (clamped to `0..n`).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{random_instance, CostOracle, Game, GameSpec, InstanceSpec};
use crate::joint::JointVector;
use crate::learner::{InitialMeans, Learner, RunOptions, ScheduleSpec};
use crate::projection::{ActionSet, ProductSet};
use crate::vi_oracle::{solve_quadratic_game, VISolution};

/// Experiment parameters. Missing keys take the case-study defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSON game file; when absent the instance is generated from the
    /// fields below.
    pub game_path: Option<PathBuf>,
    pub n_players: usize,
    pub dim: usize,
    pub upper: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub budget_min: f64,
    pub budget_max: f64,
    pub instance_seed: u64,
    pub gamma_c: f64,
    pub gamma_a: f64,
    pub sigma_c: f64,
    pub sigma_a: f64,
    pub iterations: u64,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    /// Fixed initial means, flattened player-major. Uniform draw when absent.
    pub initial_means: Option<Vec<f64>>,
    pub record_means: bool,
    pub record_states: bool,
    pub override_schedule_check: bool,
    pub vi_tol: f64,
    pub vi_max_iter: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let inst = InstanceSpec::default();
        let sched = ScheduleSpec::case_study();
        Self {
            game_path: None,
            n_players: inst.players,
            dim: inst.dim,
            upper: inst.upper,
            c_min: inst.c_range.0,
            c_max: inst.c_range.1,
            budget_min: inst.budget_range.0,
            budget_max: inst.budget_range.1,
            instance_seed: 0,
            gamma_c: sched.gamma_c,
            gamma_a: sched.gamma_a,
            sigma_c: sched.sigma_c,
            sigma_a: sched.sigma_a,
            iterations: 100,
            n_seeds: 20,
            base_seed: 0,
            output_dir: PathBuf::from("out"),
            initial_means: None,
            record_means: false,
            record_states: false,
            override_schedule_check: false,
            vi_tol: 1e-10,
            vi_max_iter: 1_000_000,
        }
    }
}

impl ExperimentConfig {
    /// Reads a flat `key = value` document (`#` starts a comment) or, when
    /// the first non-blank character is `{`, a JSON object.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        // Relative game paths are resolved against the config's directory.
        if let (Some(game), Some(dir)) = (cfg.game_path.as_mut(), path.parent()) {
            if game.is_relative() {
                *game = dir.join(&*game);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            return Ok(serde_json::from_str(text)?);
        }
        let mut map = serde_json::Map::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            if map.contains_key(key) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            map.insert(key.to_string(), parse_value(value.trim()));
        }
        serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn schedule(&self) -> ScheduleSpec {
        ScheduleSpec::new(self.gamma_c, self.gamma_a, self.sigma_c, self.sigma_a)
    }

    pub fn instance_spec(&self) -> InstanceSpec {
        InstanceSpec {
            players: self.n_players,
            dim: self.dim,
            upper: self.upper,
            c_range: (self.c_min, self.c_max),
            budget_range: (self.budget_min, self.budget_max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if !(self.vi_tol.is_finite() && self.vi_tol > 0.0) {
            return Err(Error::Config(format!("vi_tol must be positive, got {}", self.vi_tol)));
        }
        let check = crate::learner::validate_schedule(&self.schedule())?;
        if !check.valid && !self.override_schedule_check {
            return Err(Error::InvalidSchedule(
                check.violated.iter().map(|c| c.name().to_string()).collect(),
            ));
        }
        Ok(())
    }

    /// The configured game: loaded from `game_path` or generated.
    pub fn game(&self) -> Result<GameSpec> {
        match &self.game_path {
            Some(path) => load_game(path),
            None => Ok(GameSpec::Quadratic(random_instance(self.instance_seed, &self.instance_spec())?)),
        }
    }
}

fn parse_value(raw: &str) -> serde_json::Value {
    let unquoted = raw
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'));
    if let Some(s) = unquoted {
        return serde_json::Value::String(s.to_string());
    }
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

pub fn load_game(path: &Path) -> Result<GameSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// A game together with its oracle equilibria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub game: GameSpec,
    pub equilibria: Vec<VISolution>,
}

/// Solves the VI for `game`. Only quadratic games carry the global Lipschitz
/// constant the solver's step needs.
pub fn solve_equilibria(game: &GameSpec, tol: f64, max_iter: usize, seed: u64) -> Result<Vec<VISolution>> {
    match game {
        GameSpec::Quadratic(g) => solve_quadratic_game(g, tol, max_iter, seed),
        GameSpec::Smooth(_) => Err(Error::Config(
            "equilibrium oracle supports quadratic games only".into(),
        )),
    }
}

/// Reuses `instance.json` in `dir` when it holds the same game; otherwise
/// solves and writes it.
pub fn cached_instance(dir: &Path, game: GameSpec, cfg: &ExperimentConfig) -> Result<InstanceRecord> {
    let path = dir.join("instance.json");
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(rec) = serde_json::from_str::<InstanceRecord>(&text) {
            if rec.game == game && !rec.equilibria.is_empty() && rec.equilibria.iter().all(|s| s.converged) {
                return Ok(rec);
            }
        }
    }
    let equilibria = solve_equilibria(&game, cfg.vi_tol, cfg.vi_max_iter, cfg.instance_seed)?;
    let rec = InstanceRecord { game, equilibria };
    write_file(&path, &serde_json::to_string_pretty(&rec)?)?;
    Ok(rec)
}

/// `||mu - a*|| / ||a*||` against the closest equilibrium. An equilibrium at
/// the origin falls back to the absolute distance.
pub fn relative_error(mu: &JointVector, equilibria: &[JointVector]) -> f64 {
    let nearest = equilibria
        .iter()
        .min_by(|a, b| mu.distance(a).total_cmp(&mu.distance(b)));
    match nearest {
        Some(a) => {
            let n = a.norm();
            let d = mu.distance(a);
            if n > 0.0 {
                d / n
            } else {
                d
            }
        }
        None => f64::NAN,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub t: u64,
    pub relative_error: f64,
    /// Effective step of the update leaving iteration `t`.
    pub beta: f64,
    pub mu: Option<JointVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub rows: Vec<RunRow>,
    pub final_error: f64,
    pub wall_time_s: f64,
    /// Largest distance from any `mu(t)` to the action set.
    pub max_infeasibility: f64,
    pub states: Option<Vec<JointVector>>,
}

impl RunRecord {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.relative_error).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# columns: t,relative_error,beta");
        if let Some(mu) = self.rows.first().and_then(|r| r.mu.as_ref()) {
            for i in 0..mu.players() {
                for k in 0..mu.dim() {
                    let _ = write!(out, ",mu_{i}_{k}");
                }
            }
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{},{}", row.t, row.relative_error, row.beta);
            if let Some(mu) = &row.mu {
                for v in mu.as_slice() {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub t: u64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_seeds: usize,
    pub iterations: u64,
    pub seeds: Vec<u64>,
    pub schedule: ScheduleSpec,
    pub equilibria: usize,
    pub oracle_residual: f64,
    pub quantiles: Vec<QuantileRow>,
    pub final_errors: Vec<f64>,
    pub wall_times_s: Vec<f64>,
    pub total_wall_time_s: f64,
    pub max_infeasibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub instance: InstanceRecord,
    pub runs: Vec<RunRecord>,
    pub summary: EnsembleSummary,
}

impl Ensemble {
    /// Quantile row at iteration `t`, if recorded.
    pub fn at(&self, t: u64) -> Option<&QuantileRow> {
        self.summary.quantiles.get(t as usize)
    }
}

/// Nearest-rank `q`-quantile of unsorted `values`.
pub fn nearest_rank(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rank = (q * n as f64).ceil() as usize;
    v[rank.clamp(1, n) - 1]
}

/// Row-wise nearest-rank median and quartiles across runs.
pub fn ensemble_quantiles(runs: &[RunRecord]) -> Vec<QuantileRow> {
    let len = runs.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    (0..len)
        .map(|j| {
            let col: Vec<f64> = runs.iter().map(|r| r.rows[j].relative_error).collect();
            QuantileRow {
                t: runs[0].rows[j].t,
                median: nearest_rank(&col, 0.5),
                q25: nearest_rank(&col, 0.25),
                q75: nearest_rank(&col, 0.75),
            }
        })
        .collect()
}

/// One learner run scored against `equilibria`.
pub fn run_single(
    game: &GameSpec,
    equilibria: &[JointVector],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<RunRecord> {
    let start = Instant::now();
    let sets = game.action_sets();
    let schedule = cfg.schedule();
    let learner = if cfg.override_schedule_check {
        Learner::new_unchecked(schedule, sets)?
    } else {
        Learner::new(schedule, sets)?
    };
    let init = match &cfg.initial_means {
        Some(v) => InitialMeans::Fixed(JointVector::new(game.players(), game.dim(), v.clone())?),
        None => InitialMeans::Uniform,
    };
    let oracle = CostOracle::new(game);
    let traj = learner.run(
        &oracle,
        &init,
        cfg.iterations,
        seed,
        RunOptions {
            record_states: cfg.record_states,
        },
    )?;
    let mut max_infeasibility: f64 = 0.0;
    let mut rows = Vec::with_capacity(traj.means.len());
    for (t, mu) in traj.means.into_iter().enumerate() {
        max_infeasibility = max_infeasibility.max(sets.distance(&mu)?);
        rows.push(RunRow {
            t: t as u64,
            relative_error: relative_error(&mu, equilibria),
            beta: schedule.beta(t as u64 + 2),
            mu: cfg.record_means.then_some(mu),
        });
    }
    Ok(RunRecord {
        seed,
        final_error: rows.last().map_or(f64::NAN, |r| r.relative_error),
        rows,
        wall_time_s: start.elapsed().as_secs_f64(),
        max_infeasibility,
        states: traj.states,
    })
}

/// Solves the instance once, runs `n_seeds` learners in parallel (seed
/// `base_seed + k`), writes one CSV per run and `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Ensemble> {
    let start = Instant::now();
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let instance = cached_instance(dir, cfg.game()?, cfg)?;
    let targets: Vec<JointVector> = instance.equilibria.iter().map(|s| s.a_star.clone()).collect();
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|k| cfg.base_seed.wrapping_add(k)).collect();
    let runs = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| {
            let rec = run_single(&instance.game, &targets, cfg, seed)?;
            write_file(&dir.join(format!("run_{k:03}.csv")), &rec.to_csv())?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = EnsembleSummary {
        n_seeds: cfg.n_seeds,
        iterations: cfg.iterations,
        seeds,
        schedule: cfg.schedule(),
        equilibria: instance.equilibria.len(),
        oracle_residual: instance.equilibria.iter().map(|s| s.residual).fold(0.0, f64::max),
        quantiles: ensemble_quantiles(&runs),
        final_errors: runs.iter().map(|r| r.final_error).collect(),
        wall_times_s: runs.iter().map(|r| r.wall_time_s).collect(),
        total_wall_time_s: start.elapsed().as_secs_f64(),
        max_infeasibility: runs.iter().map(|r| r.max_infeasibility).fold(0.0, f64::max),
    };
    write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(Ensemble {
        instance,
        runs,
        summary,
    })
}

/// Writes `error_median.csv` into `dir` and returns its path.
pub fn emit_plotdata(ensemble: &Ensemble, dir: &Path) -> Result<PathBuf> {
    if ensemble.runs.is_empty() {
        return Err(Error::InvalidArgument("cannot plot an empty ensemble".into()));
    }
    let mut out = String::from("# columns: t,median,q25,q75\n");
    for row in ensemble_quantiles(&ensemble.runs) {
        let _ = writeln!(out, "{},{},{},{}", row.t, row.median, row.q25, row.q75);
    }
    let path = dir.join("error_median.csv");
    write_file(&path, &out)?;
    Ok(path)
}

/// Componentwise centre of each factor: `budget / d` per coordinate for
/// budget sets, the midpoint for boxes.
pub fn feasible_center(sets: &ProductSet) -> JointVector {
    let slices: Vec<Vec<f64>> = sets
        .factors()
        .iter()
        .map(|s| match s {
            ActionSet::BoxBudget(b) => vec![b.budget() / b.dim() as f64; b.dim()],
            ActionSet::Box(b) => vec![0.5 * (b.lower() + b.upper()); b.dim()],
        })
        .collect();
    JointVector::from_players(&slices).expect("product sets have at least one factor")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
