//! Teacher-student simulation of Gibbs learning.
//!
//! Zero-temperature Gibbs learning draws a student uniformly from the version
//! space, the set of students that classify every training pattern like the
//! teacher. For Ising students with `n <= 24` the version space is enumerated
//! exactly. Finite temperatures (and larger or spherical students) use
//! Metropolis dynamics with the number of training errors as energy.
//!
//! Patterns are standard Gaussian, so a student's generalization error is
//! exactly `arccos(R)/pi` and no test set is needed.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy_energy::LoadParameter;
use crate::error::{invalid, Error, Result};
use crate::geometry::{cosine_overlap, dot, overlap_to_error, sign, GenError, InputDistribution};
use crate::numeric::{mean_stderr, round_half_even};
use crate::output::Provenance;
use crate::seeds;

/// Largest Ising dimension enumerated exhaustively.
pub const MAX_ENUMERATION_N: usize = 24;

/// Default `mean_eps` threshold separating the good and poor phases.
pub const DEFAULT_PHASE_THRESHOLD: f64 = 0.25;

/// Default proposal scale for spherical students, roughly the rotation angle.
pub const DEFAULT_SPHERE_STEP: f64 = 0.2;

/// Lowest temperature reached by an annealed burn-in when the target is 0.
const ANNEAL_FLOOR: f64 = 1e-3;

// Stream tags for seed derivation.
const STREAM_INSTANCE: u64 = 0;
const STREAM_CHAIN: u64 = 1;
const STREAM_DRAW: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSpace {
    IsingHypercube,
    Sphere,
}

impl WeightSpace {
    pub fn name(self) -> &'static str {
        match self {
            WeightSpace::IsingHypercube => "ising",
            WeightSpace::Sphere => "sphere",
        }
    }

    /// Uniform draw from the weight space (`|J|^2 = n` on the sphere).
    pub fn sample<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            WeightSpace::IsingHypercube => (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
            WeightSpace::Sphere => loop {
                let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dot(&v, &v).sqrt();
                if norm > 0.0 {
                    let s = (n as f64).sqrt() / norm;
                    break v.into_iter().map(|x| x * s).collect();
                }
            },
        }
    }

    pub fn contains(self, w: &[f64]) -> bool {
        match self {
            WeightSpace::IsingHypercube => w.iter().all(|&x| x == 1.0 || x == -1.0),
            WeightSpace::Sphere => (dot(w, w) - w.len() as f64).abs() <= 1e-9 * (w.len() as f64).max(1.0),
        }
    }
}

impl fmt::Display for WeightSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ising" => Ok(WeightSpace::IsingHypercube),
            "sphere" => Ok(WeightSpace::Sphere),
            other => Err(invalid(format!("unknown weight space '{other}' (expected ising or sphere)"))),
        }
    }
}

/// A teacher, `m` Gaussian patterns (row-major) and their labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherStudentInstance {
    n: usize,
    weight_space: WeightSpace,
    teacher: Vec<f64>,
    patterns: Vec<f64>,
    labels: Vec<i8>,
    realizable: bool,
}

impl TeacherStudentInstance {
    pub fn new(
        n: usize,
        weight_space: WeightSpace,
        teacher: Vec<f64>,
        patterns: Vec<f64>,
        labels: Vec<i8>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(invalid("input dimension n must be at least 1"));
        }
        if teacher.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: teacher.len() });
        }
        if !weight_space.contains(&teacher) {
            return Err(invalid(format!("teacher is not in the {weight_space} weight space")));
        }
        if patterns.len() != labels.len() * n {
            return Err(Error::DimensionMismatch { expected: labels.len() * n, got: patterns.len() });
        }
        if labels.iter().any(|&l| l != 1 && l != -1) {
            return Err(invalid("labels must be +1 or -1"));
        }
        let mut inst = TeacherStudentInstance {
            n,
            weight_space,
            teacher,
            patterns,
            labels,
            realizable: true,
        };
        inst.realizable = inst.training_errors(&inst.teacher) == 0;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn weight_space(&self) -> WeightSpace {
        self.weight_space
    }

    pub fn teacher(&self) -> &[f64] {
        &self.teacher
    }

    pub fn pattern(&self, mu: usize) -> &[f64] {
        &self.patterns[mu * self.n..(mu + 1) * self.n]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    /// Whether the teacher itself fits every label.
    pub fn realizable(&self) -> bool {
        self.realizable
    }

    pub fn training_errors(&self, w: &[f64]) -> usize {
        (0..self.m())
            .filter(|&mu| sign(dot(w, self.pattern(mu))) != self.labels[mu])
            .count()
    }

    /// Exact generalization error `arccos(R)/pi` against the teacher.
    pub fn student_error(&self, w: &[f64]) -> Result<GenError> {
        Ok(overlap_to_error(cosine_overlap(&self.teacher, w)?))
    }

    /// Same patterns and teacher with replacement labels.
    pub fn relabeled(&self, labels: Vec<i8>) -> Result<Self> {
        Self::new(self.n, self.weight_space, self.teacher.clone(), self.patterns.clone(), labels)
    }

    /// Splits off the patterns with the given indices, preserving order.
    pub fn split(&self, held_out: &[usize]) -> Result<(Self, Self)> {
        let mut mask = vec![false; self.m()];
        for &i in held_out {
            *mask.get_mut(i).ok_or_else(|| invalid(format!("pattern index {i} out of range")))? = true;
        }
        let part = |keep: bool| {
            let idx: Vec<usize> = (0..self.m()).filter(|&i| mask[i] == keep).collect();
            let patterns = idx.iter().flat_map(|&i| self.pattern(i).iter().copied()).collect();
            let labels = idx.iter().map(|&i| self.labels[i]).collect();
            Self::new(self.n, self.weight_space, self.teacher.clone(), patterns, labels)
        };
        Ok((part(false)?, part(true)?))
    }
}

/// Teacher uniform on the weight space, i.i.d. standard normal patterns,
/// labels `sign(teacher . pattern)` with ties to +1.
pub fn generate_instance(n: usize, m: usize, space: WeightSpace, seed: u64) -> Result<TeacherStudentInstance> {
    generate_with(n, m, space, &mut seeds::rng(seed, &[STREAM_INSTANCE]))
}

fn generate_with(n: usize, m: usize, space: WeightSpace, rng: &mut ChaCha8Rng) -> Result<TeacherStudentInstance> {
    if n == 0 {
        return Err(invalid("input dimension n must be at least 1"));
    }
    let teacher = space.sample(n, rng);
    let mut patterns = vec![0.0; m * n];
    InputDistribution::Gaussian.fill(rng, &mut patterns);
    let labels = patterns.chunks(n).map(|x| sign(dot(&teacher, x))).collect();
    TeacherStudentInstance::new(n, space, teacher, patterns, labels)
}

/// Ising student encoded as a bit mask: bit `i` set means `J_i = -1`.
pub fn mask_to_weights(mask: u32, n: usize) -> Vec<f64> {
    (0..n).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect()
}

fn weights_to_mask(w: &[f64]) -> u32 {
    w.iter().enumerate().fold(0, |acc, (i, &x)| if x < 0.0 { acc | 1 << i } else { acc })
}

/// Error of an Ising student at Hamming distance `d` from the teacher.
pub fn ising_level_error(d: usize, n: usize) -> GenError {
    let r = (1.0 - 2.0 * d as f64 / n as f64).clamp(-1.0, 1.0);
    GenError::new(r.acos() / std::f64::consts::PI).unwrap_or(GenError::HALF)
}

/// All Ising students consistent with every training label.
#[derive(Debug, Clone, PartialEq)]
pub struct VersionSpace {
    pub n: usize,
    /// Members as bit masks, in Gray-code visiting order.
    pub members: Vec<u32>,
    /// `level_counts[d]`: members at Hamming distance `d` from the teacher.
    pub level_counts: Vec<u64>,
}

impl VersionSpace {
    pub fn is_full(&self) -> bool {
        self.members.len() as u64 == 1u64 << self.n
    }

    /// Mean exact error over all members.
    pub fn mean_error(&self) -> f64 {
        let total: u64 = self.level_counts.iter().sum();
        let s: f64 = self
            .level_counts
            .iter()
            .enumerate()
            .map(|(d, &c)| c as f64 * ising_level_error(d, self.n).value())
            .sum();
        s / total as f64
    }
}

fn check_enumerable(instance: &TeacherStudentInstance) -> Result<()> {
    if instance.weight_space != WeightSpace::IsingHypercube {
        return Err(invalid("exact enumeration needs Ising weights"));
    }
    if instance.n > MAX_ENUMERATION_N {
        return Err(invalid(format!(
            "exact enumeration is limited to n <= {MAX_ENUMERATION_N}, got {}",
            instance.n
        )));
    }
    Ok(())
}

/// Enumerates all `2^n` Ising students in Gray-code order, updating the
/// pattern fields incrementally. Candidates are re-checked with direct dot
/// products so that rounding drift cannot admit a student with errors.
pub fn enumerate_version_space(instance: &TeacherStudentInstance) -> Result<VersionSpace> {
    check_enumerable(instance)?;
    let (n, m) = (instance.n, instance.m());
    let teacher_mask = weights_to_mask(&instance.teacher);
    let mut fields: Vec<f64> = (0..m).map(|mu| instance.pattern(mu).iter().sum()).collect();
    let mut members = Vec::new();
    let mut level_counts = vec![0u64; n + 1];
    let mut mask = 0u32;
    let mut visit = |mask: u32, fields: &[f64]| {
        let consistent = fields.iter().zip(&instance.labels).all(|(&h, &l)| sign(h) == l);
        if consistent && (m == 0 || instance.training_errors(&mask_to_weights(mask, n)) == 0) {
            members.push(mask);
            level_counts[(mask ^ teacher_mask).count_ones() as usize] += 1;
        }
    };
    visit(mask, &fields);
    for k in 1u32..(1u32 << n) {
        let i = k.trailing_zeros() as usize;
        mask ^= 1 << i;
        let delta = if mask >> i & 1 == 1 { -2.0 } else { 2.0 };
        for (mu, h) in fields.iter_mut().enumerate() {
            *h += delta * instance.patterns[mu * n + i];
        }
        visit(mask, &fields);
    }
    Ok(VersionSpace { n, members, level_counts })
}

/// Summary of one `alpha` point of an empirical learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCurvePoint {
    pub alpha: LoadParameter,
    pub m: usize,
    pub mean_eps: GenError,
    pub stderr: f64,
    pub mean_train_err: f64,
    pub trials: usize,
    /// Fewer than two trials: `stderr` is reported as 0.
    pub low_trials: bool,
}

impl EmpiricalCurvePoint {
    fn from_samples(alpha: f64, m: usize, eps: &[f64], train: &[f64]) -> Result<Self> {
        let (mean, se) = mean_stderr(eps);
        let (train_mean, _) = mean_stderr(train);
        Ok(EmpiricalCurvePoint {
            alpha: LoadParameter::new(alpha)?,
            m,
            mean_eps: GenError::new(mean)?,
            stderr: se,
            mean_train_err: train_mean,
            trials: eps.len(),
            low_trials: eps.len() < 2,
        })
    }
}

/// Zero-temperature Gibbs learning on one instance: `trials` uniform draws
/// from the version space, each scored by its exact error. A version space
/// equal to the whole hypercube is averaged exactly instead.
pub fn exact_gibbs_gen_error(instance: &TeacherStudentInstance, trials: usize, seed: u64) -> Result<EmpiricalCurvePoint> {
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let vs = enumerate_version_space(instance)?;
    let alpha = instance.m() as f64 / instance.n as f64;
    if vs.members.is_empty() {
        return Err(Error::Integrity(format!(
            "empty version space (n = {}, m = {}); labels are not consistent with any student",
            instance.n,
            instance.m()
        )));
    }
    if vs.is_full() {
        return Ok(EmpiricalCurvePoint {
            alpha: LoadParameter::new(alpha)?,
            m: instance.m(),
            mean_eps: GenError::new(vs.mean_error())?,
            stderr: 0.0,
            mean_train_err: 0.0,
            trials,
            low_trials: trials < 2,
        });
    }
    let mut rng = seeds::rng(seed, &[STREAM_DRAW]);
    let eps: Vec<f64> = (0..trials)
        .map(|_| {
            let mask = *vs.members.choose(&mut rng).expect("non-empty");
            ising_level_error((mask ^ weights_to_mask(&instance.teacher)).count_ones() as usize, instance.n).value()
        })
        .collect();
    EmpiricalCurvePoint::from_samples(alpha, instance.m(), &eps, &vec![0.0; trials])
}

/// How the Metropolis temperature evolves over the sweeps of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    /// `tau` at every sweep.
    Constant,
    /// Geometric cooling from `start` to `tau` over the burn-in sweeps, then
    /// `tau`. Without it, low-temperature chains freeze far from equilibrium.
    AnnealedBurnIn { start: f64 },
    /// `scale / t` at sweep `t = 1, 2, ...`, so a chain stopped after `t*`
    /// sweeps ends at temperature `scale / t*`.
    Reciprocal { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub tau: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub sphere_step: f64,
}

impl GibbsConfig {
    pub fn new(tau: f64, sweeps: usize, burn_in: usize, seed: u64) -> Result<Self> {
        let c = GibbsConfig {
            tau,
            sweeps,
            burn_in,
            seed,
            schedule: Schedule::Constant,
            sphere_step: DEFAULT_SPHERE_STEP,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Result<Self> {
        self.schedule = schedule;
        self.validate()?;
        Ok(self)
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        self.tau = tau;
        self.validate()?;
        Ok(self)
    }

    pub fn with_sweeps(mut self, sweeps: usize, burn_in: usize) -> Result<Self> {
        self.sweeps = sweeps;
        self.burn_in = burn_in;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || self.tau.is_infinite() {
            return Err(Error::Domain {
                what: "tau",
                value: self.tau,
                domain: "[0, inf)",
            });
        }
        if self.sweeps == 0 {
            return Err(invalid("sweeps must be at least 1"));
        }
        if self.burn_in >= self.sweeps {
            return Err(invalid(format!(
                "burn_in ({}) must be smaller than sweeps ({})",
                self.burn_in, self.sweeps
            )));
        }
        if !(self.sphere_step > 0.0) {
            return Err(invalid("sphere_step must be positive"));
        }
        match self.schedule {
            Schedule::AnnealedBurnIn { start } if !(start > 0.0) || start.is_infinite() => {
                Err(invalid("annealing start temperature must be positive"))
            }
            Schedule::Reciprocal { scale } if !(scale > 0.0) || scale.is_infinite() => {
                Err(invalid("reciprocal temperature scale must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Temperature used during sweep `s` (0-based).
    pub fn temperature_at(&self, s: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.tau,
            Schedule::AnnealedBurnIn { start } => {
                if s >= self.burn_in {
                    return self.tau;
                }
                let end = self.tau.max(ANNEAL_FLOOR);
                if start <= end {
                    return self.tau;
                }
                start * (end / start).powf(s as f64 / self.burn_in as f64)
            }
            Schedule::Reciprocal { scale } => scale / (s + 1) as f64,
        }
    }
}

/// Metropolis acceptance for an integer energy change.
#[inline]
fn accept<R: Rng + ?Sized>(delta: i64, tau: f64, rng: &mut R) -> bool {
    if delta <= 0 {
        return true;
    }
    tau > 0.0 && rng.random::<f64>() < (-(delta as f64) / tau).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetropolisRun {
    pub student: Vec<f64>,
    /// Training errors after each sweep.
    pub energy_trace: Vec<usize>,
    /// Exact generalization error after each sweep.
    pub gen_error_trace: Vec<f64>,
    /// Mean of `gen_error_trace` over the sweeps after burn-in.
    pub time_avg_gen_error: f64,
}

impl MetropolisRun {
    pub fn final_energy(&self) -> usize {
        *self.energy_trace.last().expect("at least one sweep")
    }

    pub fn final_gen_error(&self) -> f64 {
        *self.gen_error_trace.last().expect("at least one sweep")
    }
}

/// Metropolis chain on the perceptron weight space with energy equal to the
/// number of training errors. A sweep is `n` proposals: single spin flips for
/// Ising weights, small re-normalized Gaussian perturbations on the sphere.
/// The initial student is uniform on the weight space.
pub fn metropolis_gibbs(instance: &TeacherStudentInstance, config: &GibbsConfig) -> Result<MetropolisRun> {
    metropolis_with(instance, config, &mut seeds::rng(config.seed, &[STREAM_CHAIN]))
}

/// [`metropolis_gibbs`] that also returns copies of the student taken after
/// each sweep count in `at` (each in `1..=sweeps`), in the order given.
pub fn metropolis_snapshots(
    instance: &TeacherStudentInstance,
    config: &GibbsConfig,
    at: &[usize],
) -> Result<(MetropolisRun, Vec<Vec<f64>>)> {
    snapshots_with(instance, config, at, &mut seeds::rng(config.seed, &[STREAM_CHAIN]))
}

fn metropolis_with(instance: &TeacherStudentInstance, config: &GibbsConfig, rng: &mut ChaCha8Rng) -> Result<MetropolisRun> {
    snapshots_with(instance, config, &[], rng).map(|(run, _)| run)
}

fn snapshots_with(
    instance: &TeacherStudentInstance,
    config: &GibbsConfig,
    at: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(MetropolisRun, Vec<Vec<f64>>)> {
    config.validate()?;
    if let Some(&s) = at.iter().find(|&&s| s == 0 || s > config.sweeps) {
        return Err(invalid(format!("snapshot at sweep {s} outside 1..={}", config.sweeps)));
    }
    let mut snaps = vec![Vec::new(); at.len()];
    let (n, m) = (instance.n, instance.m());
    let labels = &instance.labels;
    let mut w = instance.weight_space.sample(n, rng);
    let mut fields: Vec<f64> = (0..m).map(|mu| dot(&w, instance.pattern(mu))).collect();
    let mut energy = fields.iter().zip(labels).filter(|(&h, &l)| sign(h) != l).count() as i64;
    let mut trial_fields = vec![0.0; m];
    let mut trial_w = vec![0.0; n];

    let mut energy_trace = Vec::with_capacity(config.sweeps);
    let mut gen_error_trace = Vec::with_capacity(config.sweeps);
    for s in 0..config.sweeps {
        let tau = config.temperature_at(s);
        for _ in 0..n {
            match instance.weight_space {
                WeightSpace::IsingHypercube => {
                    let i = rng.random_range(0..n);
                    let step = -2.0 * w[i];
                    let mut delta = 0i64;
                    for mu in 0..m {
                        let h = fields[mu];
                        let h_new = h + step * instance.patterns[mu * n + i];
                        trial_fields[mu] = h_new;
                        let l = labels[mu];
                        delta += (sign(h_new) != l) as i64 - (sign(h) != l) as i64;
                    }
                    if accept(delta, tau, rng) {
                        w[i] = -w[i];
                        std::mem::swap(&mut fields, &mut trial_fields);
                        energy += delta;
                    }
                }
                WeightSpace::Sphere => {
                    for (t, &x) in trial_w.iter_mut().zip(&w) {
                        *t = x + config.sphere_step * rng.sample::<f64, _>(StandardNormal);
                    }
                    let norm = dot(&trial_w, &trial_w).sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let scale = (n as f64).sqrt() / norm;
                    trial_w.iter_mut().for_each(|x| *x *= scale);
                    let mut delta = 0i64;
                    for mu in 0..m {
                        let h_new = dot(&trial_w, instance.pattern(mu));
                        trial_fields[mu] = h_new;
                        let l = labels[mu];
                        delta += (sign(h_new) != l) as i64 - (sign(fields[mu]) != l) as i64;
                    }
                    if accept(delta, tau, rng) {
                        std::mem::swap(&mut w, &mut trial_w);
                        std::mem::swap(&mut fields, &mut trial_fields);
                        energy += delta;
                    }
                }
            }
        }
        energy_trace.push(energy as usize);
        gen_error_trace.push(instance.student_error(&w)?.value());
        for (snap, _) in snaps.iter_mut().zip(at).filter(|(_, &t)| t == s + 1) {
            snap.clone_from(&w);
        }
    }
    let tail = &gen_error_trace[config.burn_in..];
    let time_avg_gen_error = tail.iter().sum::<f64>() / tail.len() as f64;
    let run = MetropolisRun {
        student: w,
        energy_trace,
        gen_error_trace,
        time_avg_gen_error,
    };
    Ok((run, snaps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampler {
    /// Uniform draw from the enumerated version space (zero temperature).
    Exact,
    Metropolis,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Exact => "exact",
            Sampler::Metropolis => "metropolis",
        }
    }

    /// Exact when the instance class is enumerable, Metropolis otherwise.
    pub fn preferred(n: usize, space: WeightSpace) -> Self {
        if space == WeightSpace::IsingHypercube && n <= MAX_ENUMERATION_N {
            Sampler::Exact
        } else {
            Sampler::Metropolis
        }
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Sampler::Exact),
            "metropolis" => Ok(Sampler::Metropolis),
            other => Err(invalid(format!("unknown sampler '{other}' (expected exact or metropolis)"))),
        }
    }
}

/// `m = round(alpha n)` with ties to even.
pub fn examples_for(alpha: f64, n: usize) -> usize {
    round_half_even(alpha * n as f64) as usize
}

pub(crate) fn validate_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid(format!("{name} grid is empty")));
    }
    if let Some(x) = grid.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(invalid(format!("{name} grid values must be finite and non-negative, got {x}")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(format!("{name} grid must increase")));
    }
    Ok(())
}

/// One trial: a fresh instance and one learned student. Returns
/// `(generalization error, training error fraction)`.
fn run_trial(
    n: usize,
    m: usize,
    space: WeightSpace,
    sampler: Sampler,
    config: &GibbsConfig,
    instance_path: &[u64],
    chain_path: &[u64],
) -> Result<(f64, f64)> {
    let instance = generate_with(n, m, space, &mut seeds::rng(config.seed, instance_path))?;
    let mut rng = seeds::rng(config.seed, chain_path);
    match sampler {
        Sampler::Exact => {
            let vs = enumerate_version_space(&instance)?;
            let mask = *vs
                .members
                .choose(&mut rng)
                .ok_or_else(|| Error::Integrity("empty version space for a realizable instance".into()))?;
            let d = (mask ^ weights_to_mask(&instance.teacher)).count_ones() as usize;
            Ok((ising_level_error(d, n).value(), 0.0))
        }
        Sampler::Metropolis => {
            let run = metropolis_with(&instance, config, &mut rng)?;
            let train = if m == 0 { 0.0 } else { run.final_energy() as f64 / m as f64 };
            Ok((run.final_gen_error(), train))
        }
    }
}

/// Learning curve averaged over `trials` fresh instances per `alpha`.
pub fn empirical_learning_curve(
    n: usize,
    space: WeightSpace,
    sampler: Sampler,
    alphas: &[f64],
    config: &GibbsConfig,
    trials: usize,
) -> Result<Vec<EmpiricalCurvePoint>> {
    validate_grid("alpha", alphas)?;
    config.validate()?;
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    if n == 0 {
        return Err(invalid("input dimension n must be at least 1"));
    }
    if sampler == Sampler::Exact && Sampler::preferred(n, space) != Sampler::Exact {
        return Err(invalid(format!(
            "exact sampler needs Ising weights with n <= {MAX_ENUMERATION_N}"
        )));
    }
    let jobs: Vec<(usize, usize)> = (0..alphas.len()).flat_map(|a| (0..trials).map(move |t| (a, t))).collect();
    let results = jobs
        .par_iter()
        .map(|&(a, t)| {
            let m = examples_for(alphas[a], n);
            run_trial(
                n,
                m,
                space,
                sampler,
                config,
                &[STREAM_INSTANCE, a as u64, t as u64],
                &[STREAM_CHAIN, a as u64, t as u64],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    results
        .chunks(trials)
        .zip(alphas)
        .map(|(chunk, &alpha)| {
            let eps: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let train: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            EmpiricalCurvePoint::from_samples(alpha, examples_for(alpha, n), &eps, &train)
        })
        .collect()
}

/// CSV for empirical curves: `[architecture,]alpha,m,mean_eps,stderr,mean_train_err,trials`.
pub fn write_curve_csv<W: Write>(
    mut w: W,
    points: &[EmpiricalCurvePoint],
    architecture: Option<&str>,
    provenance: &Provenance,
) -> Result<()> {
    provenance.write_csv_header(&mut w)?;
    if points.iter().any(|p| p.low_trials) {
        writeln!(w, "# warning: fewer than two trials per point, stderr reported as 0")?;
    }
    let prefix = if architecture.is_some() { "architecture," } else { "" };
    writeln!(w, "{prefix}alpha,m,mean_eps,stderr,mean_train_err,trials")?;
    for p in points {
        if let Some(a) = architecture {
            write!(w, "{a},")?;
        }
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.alpha.value(),
            p.m,
            p.mean_eps.value(),
            p.stderr,
            p.mean_train_err,
            p.trials
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Good,
    Poor,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Good => "good",
            Phase::Poor => "poor",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub alpha: f64,
    pub tau: f64,
    pub m: usize,
    pub sampler: Sampler,
    pub mean_eps: f64,
    pub stderr: f64,
    pub mean_train_err: f64,
    pub phase: Phase,
}

/// Error-based phase labels over an `(alpha, tau)` grid. The tau axis is the
/// Metropolis temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMap {
    pub n: usize,
    pub weight_space: WeightSpace,
    pub trials: usize,
    pub seed: u64,
    pub threshold: f64,
    pub config: GibbsConfig,
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    /// Row-major: all taus for the first alpha, then the next alpha.
    pub cells: Vec<PhaseCell>,
}

/// Runs `trials` chains per cell. Instances depend only on `(alpha, trial)`,
/// so every cell of one alpha row sees the same training sets. The `tau = 0`
/// column uses the exact sampler when the class is enumerable.
pub fn phase_map(
    n: usize,
    space: WeightSpace,
    alpha_grid: &[f64],
    tau_grid: &[f64],
    config: &GibbsConfig,
    trials: usize,
    threshold: f64,
) -> Result<PhaseMap> {
    validate_grid("alpha", alpha_grid)?;
    validate_grid("tau", tau_grid)?;
    config.validate()?;
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    if n == 0 {
        return Err(invalid("input dimension n must be at least 1"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid(format!("phase threshold must lie in (0, 1), got {threshold}")));
    }
    let cells_idx: Vec<(usize, usize)> = (0..alpha_grid.len())
        .flat_map(|a| (0..tau_grid.len()).map(move |t| (a, t)))
        .collect();
    let cells = cells_idx
        .par_iter()
        .map(|&(a, t)| {
            let (alpha, tau) = (alpha_grid[a], tau_grid[t]);
            let m = examples_for(alpha, n);
            let sampler = if tau == 0.0 { Sampler::preferred(n, space) } else { Sampler::Metropolis };
            let cfg = GibbsConfig { tau, ..*config };
            let results = (0..trials)
                .map(|k| {
                    run_trial(
                        n,
                        m,
                        space,
                        sampler,
                        &cfg,
                        &[STREAM_INSTANCE, a as u64, k as u64],
                        &[STREAM_CHAIN, a as u64, t as u64, k as u64],
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let eps: Vec<f64> = results.iter().map(|r| r.0).collect();
            let train: Vec<f64> = results.iter().map(|r| r.1).collect();
            let (mean_eps, stderr) = mean_stderr(&eps);
            let (mean_train_err, _) = mean_stderr(&train);
            Ok(PhaseCell {
                alpha,
                tau,
                m,
                sampler,
                mean_eps,
                stderr,
                mean_train_err,
                phase: if mean_eps < threshold { Phase::Good } else { Phase::Poor },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseMap {
        n,
        weight_space: space,
        trials,
        seed: config.seed,
        threshold,
        config: *config,
        alphas: alpha_grid.to_vec(),
        taus: tau_grid.to_vec(),
        cells,
    })
}

impl PhaseMap {
    pub fn cell(&self, alpha_index: usize, tau_index: usize) -> &PhaseCell {
        &self.cells[alpha_index * self.taus.len() + tau_index]
    }

    /// CSV with columns `alpha,tau,mean_eps,mean_train_err,phase_label,stderr`.
    pub fn write_csv<W: Write>(&self, mut w: W, provenance: &Provenance) -> Result<()> {
        provenance.write_csv_header(&mut w)?;
        writeln!(w, "# tau axis: Metropolis temperature; phase threshold: mean_eps < {}", self.threshold)?;
        writeln!(w, "alpha,tau,mean_eps,mean_train_err,phase_label,stderr")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.alpha, c.tau, c.mean_eps, c.mean_train_err, c.phase, c.stderr
            )?;
        }
        Ok(())
    }
}
