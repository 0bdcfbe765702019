//! Practitioner knobs mapped onto the `(alpha, tau)` control plane.
//!
//! Randomizing `m_rand` of `m` labels lowers the effective load to
//! `(m - m_rand) / N`; stopping after `t*` iterations sets the temperature to
//! `c / t*`. The trajectory experiment moves a Gibbs learner from clean data
//! (A) to noisy data (B) and then changes the stopping time (C).

use serde::{Deserialize, Serialize};

use rand::Rng;
use rayon::prelude::*;

use crate::entropy_energy::LoadParameter;
use crate::error::{invalid, Error, Result};
use crate::gibbs_sim::{metropolis_snapshots, GibbsConfig, Schedule, TeacherStudentInstance, WeightSpace};
use crate::numeric::{mean_stderr, round_half_even};
use crate::seeds;

/// Fraction of noisy patterns held out to choose an early-stopping time.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VsdlControls {
    pub m: usize,
    pub m_rand: usize,
    pub n_capacity: f64,
    pub t_star: usize,
    pub temp_scale: f64,
}

impl VsdlControls {
    pub fn new(m: usize, m_rand: usize, n_capacity: f64, t_star: usize, temp_scale: f64) -> Result<Self> {
        if m_rand > m {
            return Err(invalid(format!("m_rand ({m_rand}) exceeds m ({m})")));
        }
        if !(n_capacity > 0.0) || n_capacity.is_infinite() {
            return Err(Error::Domain {
                what: "n_capacity",
                value: n_capacity,
                domain: "(0, inf)",
            });
        }
        if t_star == 0 {
            return Err(invalid("t_star must be at least 1"));
        }
        if !(temp_scale > 0.0) || temp_scale.is_infinite() {
            return Err(Error::Domain {
                what: "temp_scale",
                value: temp_scale,
                domain: "(0, inf)",
            });
        }
        Ok(VsdlControls {
            m,
            m_rand,
            n_capacity,
            t_star,
            temp_scale,
        })
    }
}

/// `(m - m_rand) / N`.
pub fn effective_load(c: &VsdlControls) -> Result<LoadParameter> {
    LoadParameter::new((c.m - c.m_rand) as f64 / c.n_capacity)
}

/// `c / t*`.
pub fn effective_temperature(c: &VsdlControls) -> f64 {
    c.temp_scale / c.t_star as f64
}

/// Replaces `round(fraction * m)` labels, chosen without replacement, by
/// independent fair coins. Returns the new instance and the number of
/// labels randomized (some coins will reproduce the original label).
pub fn randomize_labels(instance: &TeacherStudentInstance, fraction: f64, seed: u64) -> Result<(TeacherStudentInstance, usize)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Domain {
            what: "noise fraction",
            value: fraction,
            domain: "[0, 1]",
        });
    }
    let m = instance.m();
    let k = round_half_even(fraction * m as f64) as usize;
    let mut rng = seeds::rng(seed, &[]);
    let mut labels = instance.labels().to_vec();
    for i in rand::seq::index::sample(&mut rng, m, k).into_vec() {
        labels[i] = if rng.random::<bool>() { 1 } else { -1 };
    }
    Ok((instance.relabeled(labels)?, k))
}

/// How the stopping time of point C is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PostStop {
    Fixed(usize),
    /// The candidate with the lowest mean error on a held-out 20% of the
    /// noisy patterns, the students being trained on the remaining 80%.
    Validated(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub n: usize,
    pub m: usize,
    pub space: WeightSpace,
    pub noise_fraction: f64,
    pub t_star_pre: usize,
    pub t_star_post: PostStop,
    pub temp_scale: f64,
    pub trials: usize,
    pub seed: u64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.trials == 0 || self.t_star_pre == 0 {
            return Err(invalid("n, m, trials and t_star_pre must be positive"));
        }
        if !(self.noise_fraction > 0.0 && self.noise_fraction < 1.0) {
            return Err(Error::Domain {
                what: "noise fraction",
                value: self.noise_fraction,
                domain: "(0, 1)",
            });
        }
        if !(self.temp_scale > 0.0) || self.temp_scale.is_infinite() {
            return Err(invalid("temp_scale must be positive"));
        }
        let candidates = match &self.t_star_post {
            PostStop::Fixed(t) => std::slice::from_ref(t),
            PostStop::Validated(c) if c.is_empty() => return Err(invalid("no early-stopping candidates")),
            PostStop::Validated(c) => c.as_slice(),
        };
        if candidates.iter().any(|&t| t == 0 || t == self.t_star_pre) {
            return Err(invalid("t_star_post must be positive and differ from t_star_pre"));
        }
        if matches!(self.t_star_post, PostStop::Validated(_)) && round_half_even(VALIDATION_FRACTION * self.m as f64) < 1.0 {
            return Err(invalid("m too small for a validation split"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub alpha: f64,
    pub tau: f64,
    pub t_star: usize,
    pub train_err: f64,
    pub train_stderr: f64,
    pub gen_err: f64,
    /// Standard error of `gen_err` across trials.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    #[serde(rename = "A")]
    pub a: TrajectoryPoint,
    #[serde(rename = "B")]
    pub b: TrajectoryPoint,
    #[serde(rename = "C")]
    pub c: TrajectoryPoint,
    pub m_rand: usize,
    /// `(candidate t*, mean validation error)` when C's stopping time was
    /// selected on held-out data.
    pub validation: Vec<(usize, f64)>,
    pub spec: TrajectorySpec,
}

impl TrajectoryReport {
    /// Structural checks: B has a lower load than A, C shares B's load and
    /// differs in temperature.
    pub fn structural_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.m_rand > 0 && !(self.b.alpha < self.a.alpha) {
            v.push(format!("B.alpha {} is not below A.alpha {}", self.b.alpha, self.a.alpha));
        }
        if self.c.alpha != self.b.alpha {
            v.push(format!("C.alpha {} differs from B.alpha {}", self.c.alpha, self.b.alpha));
        }
        if self.c.tau == self.b.tau {
            v.push("C.tau equals B.tau".to_string());
        }
        v
    }
}

fn chain_config(t: usize, temp_scale: f64, seed: u64) -> Result<GibbsConfig> {
    GibbsConfig::new(temp_scale / t as f64, t, 0, seed)?.with_schedule(Schedule::Reciprocal { scale: temp_scale })
}

fn error_fraction(instance: &TeacherStudentInstance, w: &[f64]) -> f64 {
    if instance.m() == 0 {
        0.0
    } else {
        instance.training_errors(w) as f64 / instance.m() as f64
    }
}

struct TrialOutcome {
    a: (f64, f64),
    b: (f64, f64),
    noisy_c: Option<(f64, f64)>,
    validation: Vec<f64>,
    m_rand: usize,
}

fn run_trial(spec: &TrajectorySpec, t: u64) -> Result<TrialOutcome> {
    let seed = |k: u64| seeds::derive(spec.seed, &[t, k]);
    let clean = crate::gibbs_sim::generate_instance(spec.n, spec.m, spec.space, seed(0))?;
    let (noisy, m_rand) = randomize_labels(&clean, spec.noise_fraction, seed(1))?;
    let score = |inst: &TeacherStudentInstance, w: &[f64]| -> Result<(f64, f64)> {
        Ok((error_fraction(inst, w), inst.student_error(w)?.value()))
    };

    let (run_a, _) = metropolis_snapshots(&clean, &chain_config(spec.t_star_pre, spec.temp_scale, seed(2))?, &[])?;
    let a = score(&clean, &run_a.student)?;

    // B and C share one chain: under the reciprocal schedule a shorter run
    // is exactly a prefix of a longer one.
    let post = match &spec.t_star_post {
        PostStop::Fixed(t) => Some(*t),
        PostStop::Validated(_) => None,
    };
    let longest = spec.t_star_pre.max(post.unwrap_or(0));
    let at: Vec<usize> = std::iter::once(spec.t_star_pre).chain(post).collect();
    let (_, snaps) = metropolis_snapshots(&noisy, &chain_config(longest, spec.temp_scale, seed(3))?, &at)?;
    let b = score(&noisy, &snaps[0])?;
    let noisy_c = post.map(|_| score(&noisy, &snaps[1])).transpose()?;

    let validation = match &spec.t_star_post {
        PostStop::Fixed(_) => Vec::new(),
        PostStop::Validated(candidates) => {
            let k = round_half_even(VALIDATION_FRACTION * spec.m as f64) as usize;
            let mut rng = seeds::rng(seed(4), &[]);
            let held = rand::seq::index::sample(&mut rng, spec.m, k).into_vec();
            let (train, val) = noisy.split(&held)?;
            let longest = *candidates.iter().max().expect("validated non-empty");
            let cfg = chain_config(longest, spec.temp_scale, seed(5))?;
            let (_, snaps) = metropolis_snapshots(&train, &cfg, candidates)?;
            snaps.iter().map(|w| error_fraction(&val, w)).collect()
        }
    };
    Ok(TrialOutcome {
        a,
        b,
        noisy_c,
        validation,
        m_rand,
    })
}

fn point(alpha: f64, temp_scale: f64, t_star: usize, samples: &[(f64, f64)]) -> TrajectoryPoint {
    let train: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let gen: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (train_err, train_stderr) = mean_stderr(&train);
    let (gen_err, stderr) = mean_stderr(&gen);
    TrajectoryPoint {
        alpha,
        tau: temp_scale / t_star as f64,
        t_star,
        train_err,
        train_stderr,
        gen_err,
        stderr,
    }
}

/// Runs the A -> B -> C experiment. Generalization errors are measured
/// against the clean teacher; training errors against the labels each
/// student was trained on. Chains use the reciprocal schedule `c / t`.
pub fn trajectory_experiment(spec: &TrajectorySpec) -> Result<TrajectoryReport> {
    spec.validate()?;
    let outcomes = (0..spec.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(spec, t))
        .collect::<Result<Vec<_>>>()?;

    let m_rand = outcomes[0].m_rand;
    let alpha_clean = spec.m as f64 / spec.n as f64;
    let alpha_noisy = effective_load(&VsdlControls::new(spec.m, m_rand, spec.n as f64, 1, 1.0)?)?.value();

    let (t_post, validation) = match &spec.t_star_post {
        PostStop::Fixed(t) => (*t, Vec::new()),
        PostStop::Validated(candidates) => {
            let means: Vec<(usize, f64)> = candidates
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let v: Vec<f64> = outcomes.iter().map(|o| o.validation[i]).collect();
                    (c, mean_stderr(&v).0)
                })
                .collect();
            let best = means
                .iter()
                .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)))
                .expect("validated non-empty")
                .0;
            (best, means)
        }
    };

    // With a validated stopping time C is re-run on the full noisy data.
    let c_samples: Vec<(f64, f64)> = if let PostStop::Fixed(_) = spec.t_star_post {
        outcomes.iter().map(|o| o.noisy_c.expect("fixed post point")).collect()
    } else {
        let fixed = TrajectorySpec {
            t_star_post: PostStop::Fixed(t_post),
            ..spec.clone()
        };
        (0..spec.trials as u64)
            .into_par_iter()
            .map(|t| run_trial(&fixed, t).map(|o| o.noisy_c.expect("fixed post point")))
            .collect::<Result<Vec<_>>>()?
    };

    let a: Vec<(f64, f64)> = outcomes.iter().map(|o| o.a).collect();
    let b: Vec<(f64, f64)> = outcomes.iter().map(|o| o.b).collect();
    let report = TrajectoryReport {
        a: point(alpha_clean, spec.temp_scale, spec.t_star_pre, &a),
        b: point(alpha_noisy, spec.temp_scale, spec.t_star_pre, &b),
        c: point(alpha_noisy, spec.temp_scale, t_post, &c_samples),
        m_rand,
        validation,
        spec: spec.clone(),
    };
    if let Some(v) = report.structural_violations().first() {
        return Err(Error::Integrity(v.clone()));
    }
    Ok(report)
}
