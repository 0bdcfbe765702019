//! Command-line front end for `smcurve`.
//!
//! `run` parses argv (optionally merged with a TOML config file), validates
//! every parameter, dispatches to the library inside a rayon pool of the
//! requested size and writes outputs atomically.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use smcurve::bounds::{
    hoeffding_bound, pac_consistent_error_bound, refined_spectrum_bound, uniform_bound, vc_rate_curve, ErrorSpectrum,
    PacParams,
};
use smcurve::gibbs_sim::{
    empirical_learning_curve, phase_map, write_curve_csv, GibbsConfig, Sampler, Schedule, WeightSpace,
    DEFAULT_PHASE_THRESHOLD,
};
use smcurve::linear_reg::{read_matrix, regularization_path, Knob, LeastSquaresProblem};
use smcurve::multilayer::{empirical_multilayer_curve, Architecture, MIN_TEST_SAMPLES};
use smcurve::output::{json_envelope, Provenance};
use smcurve::solvers::{learning_curve, CurveMethod};
use smcurve::vsdl::{trajectory_experiment, PostStop, TrajectorySpec};
use smcurve::{EntropyModel, EntropyTable};

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "SMCURVE_THREADS";

const GRID_HELP: &str = "\
Grids: `lo:hi:step` expands to lo, lo+step, lo+2*step, ... keeping every value
below hi + step/2, so hi itself is included when it lies on the lattice. Values
are rounded to 12 decimals. A comma list (`0.5,1,2`) or a single number is also
accepted. Every grid must be strictly increasing.

Config files: `--config FILE` reads TOML. Keys in the `[<subcommand>]` section
use flag names (`burn-in` or `burn_in`) and act as defaults; flags given on the
command line override them. A top-level `threads` key is honoured when neither
--threads nor SMCURVE_THREADS is set.

Exit status: 0 on success, 2 on usage or validation errors, 1 on runtime errors.";

#[derive(Parser, Debug)]
#[command(name = "smcurve", version, about = "Learning curves, phase maps and bounds for teacher-student models", after_help = GRID_HELP)]
struct Cli {
    /// TOML config file supplying defaults for the chosen subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads [default: SMCURVE_THREADS, else available parallelism]. Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<i64>,
    #[command(subcommand)]
    command: RunConfig,
}

/// Parameters of one invocation, one block per subcommand.
#[derive(Subcommand, Debug, Clone)]
pub enum RunConfig {
    /// Annealed learning curve from an entropy model.
    Curve(CurveArgs),
    /// Phase map of Gibbs learning over an (alpha, tau) grid.
    Phase(PhaseArgs),
    /// Simulated perceptron learning curve.
    Simulate(SimulateArgs),
    /// PAC and refined-spectrum bounds.
    Bounds(BoundsArgs),
    /// Ridge or truncated-SVD regularization path.
    Regpath(RegpathArgs),
    /// Clean -> noisy -> early-stopped trajectory experiment.
    Trajectory(TrajectoryArgs),
    /// Simulated learning curve of a two-layer machine.
    Multilayer(MultilayerArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true, allow_negative_numbers = true, after_help = GRID_HELP)]
pub struct CurveArgs {
    /// continuous-exact, continuous-bound, ising-exact, ising-small-eps or tabulated.
    #[arg(long, default_value = "ising-exact")]
    pub model: String,
    /// Two-column `eps,s` CSV used by `--model tabulated`.
    #[arg(long, value_name = "PATH")]
    pub table: Option<PathBuf>,
    /// crossing (rightmost crossing point) or annealed (maximizer of s - e).
    #[arg(long, default_value = "crossing")]
    pub method: String,
    /// Load grid.
    #[arg(long, default_value = "0.5:6:0.05", allow_hyphen_values = true)]
    pub alpha: String,
    /// CSV output path [default: stdout].
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true, allow_negative_numbers = true, after_help = GRID_HELP)]
pub struct PhaseArgs {
    /// Input dimension.
    #[arg(long, default_value_t = 12)]
    pub n: i64,
    /// ising or sphere.
    #[arg(long, default_value = "ising")]
    pub space: String,
    /// Load grid.
    #[arg(long, default_value = "0.5:6:0.25", allow_hyphen_values = true)]
    pub alpha: String,
    /// Temperature grid; tau = 0 uses the exact sampler when possible.
    #[arg(long, default_value = "0:2:0.1", allow_hyphen_values = true)]
    pub tau: String,
    #[arg(long, default_value_t = 50)]
    pub trials: i64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metropolis sweeps per chain.
    #[arg(long, default_value_t = 200)]
    pub sweeps: i64,
    /// Sweeps discarded before time averages.
    #[arg(long, default_value_t = 100)]
    pub burn_in: i64,
    /// Cool geometrically from this temperature during burn-in.
    #[arg(long)]
    pub anneal_start: Option<f64>,
    /// Mean error below which a cell is labelled good.
    #[arg(long, default_value_t = DEFAULT_PHASE_THRESHOLD)]
    pub threshold: f64,
    /// CSV output path [default: stdout].
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Also write the map as JSON.
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true, allow_negative_numbers = true, after_help = GRID_HELP)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 12)]
    pub n: i64,
    /// ising or sphere.
    #[arg(long, default_value = "ising")]
    pub space: String,
    /// exact, metropolis or auto (exact when enumerable).
    #[arg(long, default_value = "auto")]
    pub sampler: String,
    #[arg(long, default_value = "0.5,1,2,4,6", allow_hyphen_values = true)]
    pub alpha: String,
    /// Metropolis temperature; the exact sampler always works at zero temperature.
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    #[arg(long, default_value_t = 500)]
    pub sweeps: i64,
    #[arg(long, default_value_t = 400)]
    pub burn_in: i64,
    #[arg(long)]
    pub anneal_start: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub trials: i64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output path [default: stdout].
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true, allow_negative_numbers = true, after_help = GRID_HELP)]
pub struct BoundsArgs {
    /// Use the Ising perceptron error spectrum at this dimension [default: 10].
    #[arg(long)]
    pub n: Option<i64>,
    /// Read the error spectrum from an `eps,count` CSV instead.
    #[arg(long, value_name = "PATH")]
    pub spectrum: Option<PathBuf>,
    /// Training-set size.
    #[arg(long, default_value_t = 50)]
    pub m: i64,
    /// Confidence parameter.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Also report Hoeffding and union bounds for this deviation.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Also report the VC rate shape for this dimension.
    #[arg(long)]
    pub vc_dim: Option<i64>,
    /// Sample sizes for the VC rate shape.
    #[arg(long, default_value = "10,100,1000,10000", allow_hyphen_values = true)]
    pub m_grid: String,
    /// Use the agnostic square-root rate.
    #[arg(long)]
    pub agnostic: bool,
    /// Also write the spectrum used as CSV.
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub spectrum_out: Option<PathBuf>,
    /// JSON output path [default: stdout].
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true, allow_negative_numbers = true, after_help = GRID_HELP)]
pub struct RegpathArgs {
    /// Design matrix CSV (no header, one row per line).
    #[arg(long, value_name = "PATH")]
    pub a: Option<PathBuf>,
    /// Target vector CSV, one value per line.
    #[arg(long, value_name = "PATH")]
    pub b: Option<PathBuf>,
    /// Held-out design matrix.
    #[arg(long, value_name = "PATH")]
    pub a_test: Option<PathBuf>,
    /// Held-out targets.
    #[arg(long, value_name = "PATH")]
    pub b_test: Option<PathBuf>,
    /// lambda (ridge) or rank (truncated SVD).
    #[arg(long, default_value = "lambda")]
    pub knob: String,
    /// Knob grid [default: 0.01:10:0.01 for lambda, 0..=columns for rank].
    #[arg(long, allow_hyphen_values = true)]
    pub values: Option<String>,
    /// CSV output path [default: stdout].
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true, allow_negative_numbers = true, after_help = GRID_HELP)]
pub struct TrajectoryArgs {
    #[arg(long, default_value_t = 12)]
    pub n: i64,
    #[arg(long, default_value_t = 60)]
    pub m: i64,
    /// ising or sphere.
    #[arg(long, default_value = "ising")]
    pub space: String,
    /// Fraction of labels replaced by coin flips.
    #[arg(long, default_value_t = 0.4)]
    pub noise: f64,
    /// Stopping time for points A and B.
    #[arg(long, default_value_t = 2000)]
    pub t_pre: i64,
    /// Fixed stopping time for point C; without it C's time is chosen on held-out data.
    #[arg(long)]
    pub t_post: Option<i64>,
    /// Candidate stopping times for the held-out selection.
    #[arg(long, default_value = "1,2,5,10,20,50,100,200,500,1000", allow_hyphen_values = true)]
    pub candidates: String,
    /// Temperature constant c in tau = c / t*.
    #[arg(long, default_value_t = 1.0)]
    pub temp_scale: f64,
    #[arg(long, default_value_t = 200)]
    pub trials: i64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON output path [default: stdout].
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
#[command(args_override_self = true, allow_negative_numbers = true, after_help = GRID_HELP)]
pub struct MultilayerArgs {
    /// committee:K, parity:K or wedge:GAMMA.
    #[arg(long, default_value = "committee:3")]
    pub arch: String,
    #[arg(long, default_value_t = 15)]
    pub n: i64,
    /// ising or sphere.
    #[arg(long, default_value = "ising")]
    pub space: String,
    #[arg(long, default_value = "0.5:3:0.5", allow_hyphen_values = true)]
    pub alpha: String,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    #[arg(long, default_value_t = 300)]
    pub sweeps: i64,
    #[arg(long, default_value_t = 200)]
    pub burn_in: i64,
    #[arg(long)]
    pub anneal_start: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub trials: i64,
    /// Fresh inputs used to estimate each student's error.
    #[arg(long, default_value_t = MIN_TEST_SAMPLES as i64)]
    pub test_samples: i64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output path [default: stdout].
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::Curve(_) => "curve",
            RunConfig::Phase(_) => "phase",
            RunConfig::Simulate(_) => "simulate",
            RunConfig::Bounds(_) => "bounds",
            RunConfig::Regpath(_) => "regpath",
            RunConfig::Trajectory(_) => "trajectory",
            RunConfig::Multilayer(_) => "multilayer",
        }
    }

    fn params(&self) -> serde_json::Result<serde_json::Value> {
        match self {
            RunConfig::Curve(a) => serde_json::to_value(a),
            RunConfig::Phase(a) => serde_json::to_value(a),
            RunConfig::Simulate(a) => serde_json::to_value(a),
            RunConfig::Bounds(a) => serde_json::to_value(a),
            RunConfig::Regpath(a) => serde_json::to_value(a),
            RunConfig::Trajectory(a) => serde_json::to_value(a),
            RunConfig::Multilayer(a) => serde_json::to_value(a),
        }
    }

    /// Resolved parameters for output headers. Output paths and the thread
    /// budget are left out so that artifacts do not depend on them.
    fn provenance(&self) -> Provenance {
        let mut p = Provenance::new(self.name());
        if let Ok(serde_json::Value::Object(map)) = self.params() {
            for (k, v) in map {
                match v {
                    serde_json::Value::Null => {}
                    serde_json::Value::String(s) => p.set(&k, s),
                    other => p.set(&k, other),
                }
            }
        }
        p
    }
}

/// All problems with `config`; empty when it is valid.
pub fn validate_config(config: &RunConfig) -> Vec<String> {
    match resolve(config) {
        Ok(_) => Vec::new(),
        Err(v) => v,
    }
}

/// Expands a grid specification; see `--help` for the syntax.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let spec = spec.trim();
    let number = |s: &str| -> Result<f64, String> {
        let x: f64 = s.trim().parse().map_err(|_| format!("'{}' is not a number", s.trim()))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(format!("'{}' is not finite", s.trim()))
        }
    };
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("'{spec}' should be lo:hi:step"));
        }
        let (lo, hi, step) = (number(parts[0])?, number(parts[1])?, number(parts[2])?);
        if !(step > 0.0) {
            return Err("grid step must be positive".to_string());
        }
        if hi < lo {
            return Err("grid must increase".to_string());
        }
        let count = ((hi - lo) / step + 0.5).floor() + 1.0;
        if count > 1e7 {
            return Err(format!("grid '{spec}' has more than 10^7 points"));
        }
        let limit = hi + step / 2.0;
        (0..count as usize + 1)
            .map(|k| round12(lo + k as f64 * step))
            .filter(|x| *x < limit)
            .collect()
    } else {
        spec.split(',').map(number).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() {
        return Err("grid is empty".to_string());
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err("grid must increase".to_string());
    }
    Ok(values)
}

fn round12(x: f64) -> f64 {
    let r = (x * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug)]
enum Plan {
    Curve {
        model: String,
        table: Option<PathBuf>,
        method: CurveMethod,
        alphas: Vec<f64>,
    },
    Phase {
        n: usize,
        space: WeightSpace,
        alphas: Vec<f64>,
        taus: Vec<f64>,
        config: GibbsConfig,
        trials: usize,
        threshold: f64,
    },
    Simulate {
        n: usize,
        space: WeightSpace,
        sampler: Sampler,
        alphas: Vec<f64>,
        config: GibbsConfig,
        trials: usize,
    },
    Bounds {
        source: SpectrumSource,
        params: PacParams,
        gap: Option<f64>,
        vc: Option<(u64, Vec<f64>, bool)>,
    },
    Regpath {
        a: PathBuf,
        b: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
        knob: Knob,
        values: Option<Vec<f64>>,
    },
    Trajectory(TrajectorySpec),
    Multilayer {
        arch: Architecture,
        n: usize,
        space: WeightSpace,
        alphas: Vec<f64>,
        config: GibbsConfig,
        trials: usize,
        test_samples: usize,
    },
}

#[derive(Debug)]
enum SpectrumSource {
    Ising(u32),
    File(PathBuf),
}

#[derive(Default)]
struct Check(Vec<String>);

impl Check {
    fn fail(&mut self, field: &str, msg: impl Display) {
        self.0.push(format!("{field}: {msg}"));
    }

    fn count(&mut self, field: &str, v: i64, min: i64) -> usize {
        if v < min {
            self.fail(field, format!("must be at least {min}, got {v}"));
        }
        v.max(0) as usize
    }

    fn grid(&mut self, field: &str, spec: &str) -> Vec<f64> {
        match parse_grid(spec) {
            Ok(g) => {
                if g.iter().any(|x| *x < 0.0) {
                    self.fail(field, "grid values must be non-negative");
                }
                g
            }
            Err(e) => {
                self.fail(field, e);
                Vec::new()
            }
        }
    }

    fn parse<T: FromStr>(&mut self, field: &str, s: &str) -> Option<T>
    where
        T::Err: Display,
    {
        match s.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.fail(field, e);
                None
            }
        }
    }

    fn lib<T>(&mut self, field: &str, r: smcurve::Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.fail(field, e);
                None
            }
        }
    }

    fn finish(self, plan: Option<Plan>) -> Result<Plan, Vec<String>> {
        match plan {
            Some(p) if self.0.is_empty() => Ok(p),
            _ if self.0.is_empty() => Err(vec!["invalid configuration".to_string()]),
            _ => Err(self.0),
        }
    }
}

fn gibbs_config(
    c: &mut Check,
    tau: f64,
    sweeps: i64,
    burn_in: i64,
    seed: u64,
    anneal_start: Option<f64>,
) -> Option<GibbsConfig> {
    let sweeps_u = c.count("sweeps", sweeps, 1);
    let burn_u = c.count("burn-in", burn_in, 0);
    if sweeps < 1 || burn_in < 0 {
        return None;
    }
    let cfg = c.lib("sweeps", GibbsConfig::new(tau, sweeps_u, burn_u, seed))?;
    match anneal_start {
        Some(start) => c.lib("anneal-start", cfg.with_schedule(Schedule::AnnealedBurnIn { start })),
        None => Some(cfg),
    }
}

fn resolve(config: &RunConfig) -> Result<Plan, Vec<String>> {
    let mut c = Check::default();
    let plan = match config {
        RunConfig::Curve(a) => {
            let known = ["continuous-exact", "continuous-bound", "ising-exact", "ising-small-eps", "tabulated"];
            if !known.contains(&a.model.as_str()) {
                c.fail("model", format!("unknown model '{}' (expected one of {})", a.model, known.join(", ")));
            }
            match (a.model == "tabulated", &a.table) {
                (true, None) => c.fail("table", "required by --model tabulated"),
                (false, Some(_)) => c.fail("table", "only used with --model tabulated"),
                _ => {}
            }
            let method = c.parse::<CurveMethod>("method", &a.method);
            let alphas = c.grid("alpha", &a.alpha);
            method.map(|method| Plan::Curve {
                model: a.model.clone(),
                table: a.table.clone(),
                method,
                alphas,
            })
        }
        RunConfig::Phase(a) => {
            let n = c.count("n", a.n, 1);
            let space = c.parse::<WeightSpace>("space", &a.space);
            let alphas = c.grid("alpha", &a.alpha);
            let taus = c.grid("tau", &a.tau);
            let trials = c.count("trials", a.trials, 1);
            if !(a.threshold > 0.0 && a.threshold < 1.0) {
                c.fail("threshold", format!("must lie in (0, 1), got {}", a.threshold));
            }
            let config = gibbs_config(&mut c, 0.0, a.sweeps, a.burn_in, a.seed, a.anneal_start);
            match (space, config) {
                (Some(space), Some(config)) => Some(Plan::Phase {
                    n,
                    space,
                    alphas,
                    taus,
                    config,
                    trials,
                    threshold: a.threshold,
                }),
                _ => None,
            }
        }
        RunConfig::Simulate(a) => {
            let n = c.count("n", a.n, 1);
            let space = c.parse::<WeightSpace>("space", &a.space);
            let sampler = match a.sampler.as_str() {
                "auto" => space.map(|s| Sampler::preferred(n, s)),
                other => c.parse::<Sampler>("sampler", other),
            };
            if let (Some(Sampler::Exact), Some(s)) = (sampler, space) {
                if Sampler::preferred(n, s) != Sampler::Exact {
                    c.fail("sampler", "exact sampling needs Ising weights with a small enough n");
                }
            }
            let alphas = c.grid("alpha", &a.alpha);
            let trials = c.count("trials", a.trials, 1);
            let config = gibbs_config(&mut c, a.tau, a.sweeps, a.burn_in, a.seed, a.anneal_start);
            match (space, sampler, config) {
                (Some(space), Some(sampler), Some(config)) => Some(Plan::Simulate {
                    n,
                    space,
                    sampler,
                    alphas,
                    config,
                    trials,
                }),
                _ => None,
            }
        }
        RunConfig::Bounds(a) => {
            let source = match (&a.n, &a.spectrum) {
                (Some(_), Some(_)) => {
                    c.fail("spectrum", "give either --n or --spectrum, not both");
                    None
                }
                (_, Some(p)) => Some(SpectrumSource::File(p.clone())),
                (n, None) => {
                    let n = n.unwrap_or(10);
                    if !(1..=64).contains(&n) {
                        c.fail("n", format!("must lie in 1..=64, got {n}"));
                        None
                    } else {
                        Some(SpectrumSource::Ising(n as u32))
                    }
                }
            };
            let m = c.count("m", a.m, 0);
            let params = c.lib("delta", PacParams::new(a.delta, m as u64));
            if let Some(g) = a.gap {
                if !(g > 0.0 && g.is_finite()) {
                    c.fail("gap", format!("must be positive, got {g}"));
                }
            }
            let vc = a.vc_dim.map(|d| {
                let d = c.count("vc-dim", d, 1) as u64;
                let grid = c.grid("m-grid", &a.m_grid);
                if grid.iter().any(|m| *m < 1.0) {
                    c.fail("m-grid", "sample sizes must be at least 1");
                }
                (d, grid, !a.agnostic)
            });
            match (source, params) {
                (Some(source), Some(params)) => Some(Plan::Bounds {
                    source,
                    params,
                    gap: a.gap,
                    vc,
                }),
                _ => None,
            }
        }
        RunConfig::Regpath(a) => {
            if a.a.is_none() {
                c.fail("a", "a design matrix CSV is required");
            }
            if a.b.is_none() {
                c.fail("b", "a target vector CSV is required");
            }
            let test = match (&a.a_test, &a.b_test) {
                (Some(x), Some(y)) => Some((x.clone(), y.clone())),
                (None, None) => None,
                _ => {
                    c.fail("a-test", "--a-test and --b-test go together");
                    None
                }
            };
            let knob = match a.knob.as_str() {
                "lambda" => Some(Knob::Lambda),
                "rank" => Some(Knob::RankK),
                other => {
                    c.fail("knob", format!("unknown knob '{other}' (expected lambda or rank)"));
                    None
                }
            };
            let values = a.values.as_deref().map(|v| c.grid("values", v));
            if let (Some(Knob::RankK), Some(v)) = (knob, &values) {
                if v.iter().any(|k| k.fract() != 0.0) {
                    c.fail("values", "rank values must be integers");
                }
            }
            match (&a.a, &a.b, knob) {
                (Some(x), Some(y), Some(knob)) => Some(Plan::Regpath {
                    a: x.clone(),
                    b: y.clone(),
                    test,
                    knob,
                    values,
                }),
                _ => None,
            }
        }
        RunConfig::Trajectory(a) => {
            let n = c.count("n", a.n, 1);
            let m = c.count("m", a.m, 1);
            let space = c.parse::<WeightSpace>("space", &a.space);
            let t_pre = c.count("t-pre", a.t_pre, 1);
            let trials = c.count("trials", a.trials, 1);
            let post = match a.t_post {
                Some(t) => PostStop::Fixed(c.count("t-post", t, 1)),
                None => {
                    let grid = c.grid("candidates", &a.candidates);
                    if grid.iter().any(|t| t.fract() != 0.0 || *t < 1.0) {
                        c.fail("candidates", "stopping times must be positive integers");
                    }
                    PostStop::Validated(grid.iter().map(|t| *t as usize).collect())
                }
            };
            space.and_then(|space| {
                let spec = TrajectorySpec {
                    n,
                    m,
                    space,
                    noise_fraction: a.noise,
                    t_star_pre: t_pre,
                    t_star_post: post,
                    temp_scale: a.temp_scale,
                    trials,
                    seed: a.seed,
                };
                if c.0.is_empty() {
                    c.lib("trajectory", spec.validate())?;
                }
                Some(Plan::Trajectory(spec))
            })
        }
        RunConfig::Multilayer(a) => {
            let n = c.count("n", a.n, 1);
            let arch = c.parse::<Architecture>("arch", &a.arch);
            if let Some(arch) = &arch {
                if n > 0 {
                    c.lib("arch", arch.validate(n));
                }
            }
            let space = c.parse::<WeightSpace>("space", &a.space);
            let alphas = c.grid("alpha", &a.alpha);
            let trials = c.count("trials", a.trials, 1);
            let test_samples = c.count("test-samples", a.test_samples, MIN_TEST_SAMPLES as i64);
            let config = gibbs_config(&mut c, a.tau, a.sweeps, a.burn_in, a.seed, a.anneal_start);
            match (arch, space, config) {
                (Some(arch), Some(space), Some(config)) => Some(Plan::Multilayer {
                    arch,
                    n,
                    space,
                    alphas,
                    config,
                    trials,
                    test_samples,
                }),
                _ => None,
            }
        }
    };
    c.finish(plan)
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<smcurve::Error> for Failure {
    fn from(e: smcurve::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let (argv, file_threads) = match merge_config(argv) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli, file_threads) {
        Ok(summary) => {
            eprintln!("{summary}");
            0
        }
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: invalid configuration\n{msg}"),
                Failure::Runtime(msg) => eprintln!("error: {msg}"),
            }
            f.code()
        }
    }
}

fn thread_budget(flag: Option<i64>, file: Option<i64>) -> Result<usize, String> {
    let raw = match flag {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(s) if !s.trim().is_empty() => Some(
                s.trim()
                    .parse::<i64>()
                    .map_err(|_| format!("threads: {THREADS_ENV}='{s}' is not an integer"))?,
            ),
            _ => file,
        },
    };
    match raw {
        None => Ok(0),
        Some(t) if t >= 1 => Ok(t as usize),
        Some(t) => Err(format!("threads: must be at least 1, got {t}")),
    }
}

fn execute(cli: &Cli, file_threads: Option<i64>) -> Result<String, Failure> {
    let threads = thread_budget(cli.threads, file_threads).map_err(Failure::Usage)?;
    let plan = resolve(&cli.command).map_err(|v| Failure::Usage(v.join("\n")))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Runtime(format!("cannot start thread pool: {e}")))?;
    let prov = cli.command.provenance();
    pool.install(|| dispatch(&cli.command, plan, &prov))
}

fn dispatch(config: &RunConfig, plan: Plan, prov: &Provenance) -> Result<String, Failure> {
    match (config, plan) {
        (
            RunConfig::Curve(args),
            Plan::Curve {
                model,
                table,
                method,
                alphas,
            },
        ) => {
            let model = match table {
                Some(path) => EntropyModel::Tabulated(EntropyTable::from_path(&path)?),
                None => model.parse::<EntropyModel>()?,
            };
            let curve = learning_curve(&model, method, &alphas)?;
            let mut buf = Vec::new();
            curve.write_csv(&mut buf, prov)?;
            emit(args.out.as_deref(), &buf)?;
            let jumps = match curve.jumps.first() {
                Some(j) => format!("{} jump(s), first near alpha {:.4}", curve.jumps.len(), j.alpha_c()),
                None => "no jumps".to_string(),
            };
            Ok(format!(
                "curve: {} points, {jumps}, {} gap(s) -> {}",
                curve.points.len(),
                curve.gaps.len(),
                dest(args.out.as_deref())
            ))
        }
        (
            RunConfig::Phase(args),
            Plan::Phase {
                n,
                space,
                alphas,
                taus,
                config,
                trials,
                threshold,
            },
        ) => {
            let map = phase_map(n, space, &alphas, &taus, &config, trials, threshold)?;
            let mut buf = Vec::new();
            map.write_csv(&mut buf, prov)?;
            emit(args.out.as_deref(), &buf)?;
            if let Some(path) = &args.json {
                emit(Some(path), json_envelope(prov, "phase_map", &map)?.as_bytes())?;
            }
            let good = map.cells.iter().filter(|c| c.phase == smcurve::gibbs_sim::Phase::Good).count();
            Ok(format!(
                "phase: {} cells ({good} good) over {} x {} grid -> {}",
                map.cells.len(),
                alphas.len(),
                taus.len(),
                dest(args.out.as_deref())
            ))
        }
        (
            RunConfig::Simulate(args),
            Plan::Simulate {
                n,
                space,
                sampler,
                alphas,
                config,
                trials,
            },
        ) => {
            let points = empirical_learning_curve(n, space, sampler, &alphas, &config, trials)?;
            let mut prov = prov.clone();
            prov.set("resolved_sampler", sampler.name());
            let mut buf = Vec::new();
            write_curve_csv(&mut buf, &points, None, &prov)?;
            emit(args.out.as_deref(), &buf)?;
            Ok(format!(
                "simulate: {} points with the {} sampler, {trials} trials each -> {}",
                points.len(),
                sampler.name(),
                dest(args.out.as_deref())
            ))
        }
        (RunConfig::Bounds(args), Plan::Bounds { source, params, gap, vc }) => {
            let spectrum = match source {
                SpectrumSource::Ising(n) => ErrorSpectrum::ising_perceptron(n)?,
                SpectrumSource::File(path) => {
                    let f = File::open(&path)
                        .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
                    ErrorSpectrum::from_csv(BufReader::new(f))?
                }
            };
            let total = spectrum.total();
            let pac = pac_consistent_error_bound(total, params)?;
            let refined = refined_spectrum_bound(&spectrum, params)?;
            let mut payload = BTreeMap::new();
            payload.insert("class_size", serde_json::json!(total.to_string()));
            payload.insert("levels", serde_json::json!(spectrum.levels().len()));
            payload.insert("delta", serde_json::json!(params.delta()));
            payload.insert("m", serde_json::json!(params.m()));
            payload.insert("pac_consistent", serde_json::to_value(&pac).map_err(smcurve::Error::from)?);
            payload.insert("refined_spectrum", serde_json::to_value(&refined).map_err(smcurve::Error::from)?);
            if let Some(g) = gap {
                payload.insert("hoeffding", serde_json::json!(hoeffding_bound(params.m(), g)?));
                if let Ok(size) = u64::try_from(total) {
                    payload.insert("uniform", serde_json::json!(uniform_bound(size, params.m(), g)?));
                }
            }
            if let Some((d, grid, realizable)) = vc {
                let curve = vc_rate_curve(d, &grid, realizable)?;
                payload.insert("vc_rate", serde_json::to_value(&curve).map_err(smcurve::Error::from)?);
            }
            if let Some(path) = &args.spectrum_out {
                let mut buf = Vec::new();
                spectrum.write_csv(&mut buf, prov)?;
                emit(Some(path), &buf)?;
            }
            emit(args.out.as_deref(), json_envelope(prov, "bounds", &payload)?.as_bytes())?;
            Ok(format!(
                "bounds: pac {:.6}, refined {:.6} -> {}",
                pac.bound,
                refined.bound,
                dest(args.out.as_deref())
            ))
        }
        (
            RunConfig::Regpath(args),
            Plan::Regpath {
                a,
                b,
                test,
                knob,
                values,
            },
        ) => {
            let mut problem = LeastSquaresProblem::from_csv_paths(&a, &b)?;
            if let Some((at, bt)) = test {
                let a_test = load_matrix(&at)?;
                let b_test = load_matrix(&bt)?;
                if b_test.ncols() != 1 {
                    return Err(Failure::Runtime(format!("{} must have one column", bt.display())));
                }
                problem = problem.with_test_split(a_test, b_test.column(0).into_owned())?;
            }
            let values = values.unwrap_or_else(|| match knob {
                Knob::Lambda => parse_grid("0.01:10:0.01").unwrap_or_default(),
                Knob::RankK => (0..=problem.cols()).map(|k| k as f64).collect(),
            });
            let path = regularization_path(&problem, knob, &values)?;
            let mut buf = Vec::new();
            path.write_csv(&mut buf, prov)?;
            emit(args.out.as_deref(), &buf)?;
            Ok(format!(
                "regpath: {} knob values on a {}x{} problem -> {}",
                values.len(),
                problem.rows(),
                problem.cols(),
                dest(args.out.as_deref())
            ))
        }
        (RunConfig::Trajectory(args), Plan::Trajectory(spec)) => {
            let report = trajectory_experiment(&spec)?;
            emit(args.out.as_deref(), json_envelope(prov, "trajectory", &report)?.as_bytes())?;
            Ok(format!(
                "trajectory: gen A {:.4}, B {:.4}, C {:.4} (t* {}) -> {}",
                report.a.gen_err,
                report.b.gen_err,
                report.c.gen_err,
                report.c.t_star,
                dest(args.out.as_deref())
            ))
        }
        (
            RunConfig::Multilayer(args),
            Plan::Multilayer {
                arch,
                n,
                space,
                alphas,
                config,
                trials,
                test_samples,
            },
        ) => {
            let points = empirical_multilayer_curve(&arch, n, space, &alphas, &config, trials, test_samples)?;
            let mut buf = Vec::new();
            write_curve_csv(&mut buf, &points, Some(&arch.to_string()), prov)?;
            emit(args.out.as_deref(), &buf)?;
            Ok(format!(
                "multilayer: {} points for {arch} -> {}",
                points.len(),
                dest(args.out.as_deref())
            ))
        }
        _ => Err(Failure::Runtime("internal error: plan does not match subcommand".to_string())),
    }
}

fn load_matrix(path: &Path) -> Result<DMatrix<f64>, Failure> {
    let f = File::open(path).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(read_matrix(BufReader::new(f))?)
}

fn dest(out: Option<&Path>) -> String {
    out.map_or_else(|| "stdout".to_string(), |p| p.display().to_string())
}

/// Writes `bytes` to `out` through a temporary file in the same directory
/// followed by a rename, or to stdout when `out` is `None`.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    let Some(path) = out else {
        let mut stdout = io::stdout().lock();
        return stdout
            .write_all(bytes)
            .and_then(|_| stdout.flush())
            .map_err(|e| Failure::Runtime(format!("cannot write to stdout: {e}")));
    };
    let fail = |e: io::Error| Failure::Runtime(format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

const SUBCOMMANDS: [&str; 7] = ["curve", "phase", "simulate", "bounds", "regpath", "trajectory", "multilayer"];

/// Splices config-file settings into `argv` right after the subcommand name,
/// so that flags typed by the user (which come later) override them. Returns
/// the new argv and the file's top-level `threads` value.
fn merge_config(argv: Vec<String>) -> Result<(Vec<String>, Option<i64>), String> {
    let mut path = None;
    let mut sub = None;
    let mut i = 1;
    while i < argv.len() {
        let a = &argv[i];
        if a == "--" {
            break;
        }
        if a == "--config" {
            path = argv.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--threads" {
            i += 2;
            continue;
        } else if sub.is_none() && SUBCOMMANDS.contains(&a.as_str()) {
            sub = Some(i);
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok((argv, None));
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let table: toml::Table = text.parse().map_err(|e| format!("config {path}: {e}"))?;
    let threads = match table.get("threads") {
        None => None,
        Some(toml::Value::Integer(t)) => Some(*t),
        Some(_) => return Err(format!("config {path}: threads must be an integer")),
    };
    for (k, v) in &table {
        if k != "threads" && !(v.is_table() && SUBCOMMANDS.contains(&k.as_str())) {
            return Err(format!("config {path}: unexpected top-level key '{k}'"));
        }
    }
    let Some(sub) = sub else {
        return Ok((argv, threads));
    };
    let mut flags = Vec::new();
    if let Some(section) = table.get(&argv[sub]).and_then(|v| v.as_table()) {
        for (k, v) in section {
            let flag = format!("--{}", k.replace('_', "-"));
            match v {
                toml::Value::Boolean(true) => flags.push(flag),
                toml::Value::Boolean(false) => {}
                toml::Value::String(s) => flags.extend([flag, s.clone()]),
                toml::Value::Integer(x) => flags.extend([flag, x.to_string()]),
                toml::Value::Float(x) => flags.extend([flag, x.to_string()]),
                toml::Value::Array(items) => {
                    let parts = items
                        .iter()
                        .map(|x| match x {
                            toml::Value::Integer(x) => Ok(x.to_string()),
                            toml::Value::Float(x) => Ok(x.to_string()),
                            toml::Value::String(s) => Ok(s.clone()),
                            _ => Err(format!("config {path}: unsupported array item in '{k}'")),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    flags.extend([flag, parts.join(",")]);
                }
                _ => return Err(format!("config {path}: unsupported value for '{k}'")),
            }
        }
    }
    let mut merged = argv[..=sub].to_vec();
    merged.extend(flags);
    merged.extend_from_slice(&argv[sub + 1..]);
    Ok((merged, threads))
}
