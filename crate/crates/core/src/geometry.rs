//! Perceptron overlap/error geometry and the version-space survival law.
//!
//! For a teacher `T` and student `J` with normalized overlap
//! `R = J.T / (|J||T|)`, inputs drawn from any spherically symmetric
//! distribution disagree with probability `eps = arccos(R) / pi`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values within this distance outside a closed interval are clamped onto it.
pub const CLAMP_SLOP: f64 = 1e-12;

fn clamp_into(what: &'static str, domain: &'static str, x: f64, lo: f64, hi: f64) -> Result<f64> {
    if x.is_nan() || x < lo - CLAMP_SLOP || x > hi + CLAMP_SLOP {
        return Err(Error::Domain { what, value: x, domain });
    }
    Ok(x.clamp(lo, hi))
}

/// Teacher-student alignment `R` in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Overlap(f64);

impl Overlap {
    pub fn new(r: f64) -> Result<Self> {
        clamp_into("overlap", "[-1, 1]", r, -1.0, 1.0).map(Overlap)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Probability of teacher-student disagreement, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct GenError(f64);

impl GenError {
    pub const ZERO: GenError = GenError(0.0);
    pub const HALF: GenError = GenError(0.5);
    pub const ONE: GenError = GenError(1.0);

    pub fn new(eps: f64) -> Result<Self> {
        clamp_into("generalization error", "[0, 1]", eps, 0.0, 1.0).map(GenError)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<GenError> for f64 {
    fn from(e: GenError) -> f64 {
        e.0
    }
}

/// `eps = arccos(r) / pi`.
pub fn overlap_to_error(r: Overlap) -> GenError {
    GenError(r.0.acos() / PI)
}

/// `r = cos(pi * eps)`.
pub fn error_to_overlap(eps: GenError) -> Overlap {
    // cos can land a hair outside [-1, 1] only through rounding.
    Overlap((PI * eps.0).cos().clamp(-1.0, 1.0))
}

/// Log-volume of students at error `eps` surviving `m` independent examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalVolume {
    pub log_omega0: f64,
    pub m: u64,
    pub log_omega_m: f64,
}

impl SurvivalVolume {
    pub fn new(log_omega0: f64, eps: GenError, m: u64) -> Self {
        SurvivalVolume {
            log_omega0,
            m,
            log_omega_m: survival_log_volume(log_omega0, eps, m),
        }
    }
}

/// `log_omega0 + m ln(1 - eps)`; each example keeps a student with
/// probability `1 - eps`. Returns `-inf` when `eps = 1` and `m > 0`.
pub fn survival_log_volume(log_omega0: f64, eps: GenError, m: u64) -> f64 {
    if m == 0 {
        return log_omega0;
    }
    if eps.0 >= 1.0 {
        return f64::NEG_INFINITY;
    }
    log_omega0 + m as f64 * (-eps.0).ln_1p()
}

/// Sign with the global tie rule `sign(0) = +1`.
#[inline]
pub fn sign(x: f64) -> i8 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalized overlap `a.b / (|a||b|)`.
pub fn cosine_overlap(a: &[f64], b: &[f64]) -> Result<Overlap> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom == 0.0 {
        return Err(Error::Domain {
            what: "weight norm",
            value: 0.0,
            domain: "(0, inf)",
        });
    }
    Overlap::new(dot(a, b) / denom)
}

/// Input distribution for test and training patterns.
///
/// `Gaussian` is spherically symmetric, so `eps = arccos(R)/pi` is exact at
/// every `N`. `Rademacher` (uniform on the `{-1,+1}^N` corners) is not; its
/// disagreement frequency deviates from the angle law at finite `N`, most
/// visibly for small `N` and for weight vectors aligned with coordinate axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InputDistribution {
    #[default]
    Gaussian,
    Rademacher,
}

impl InputDistribution {
    pub fn fill<R: Rng + ?Sized>(self, rng: &mut R, out: &mut [f64]) {
        match self {
            InputDistribution::Gaussian => {
                for x in out.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
            }
            InputDistribution::Rademacher => {
                for x in out.iter_mut() {
                    *x = if rng.random::<bool>() { 1.0 } else { -1.0 };
                }
            }
        }
    }
}

/// Counts teacher/student disagreements over `samples` fresh inputs.
pub fn empirical_disagreement<R: Rng + ?Sized>(
    teacher: &[f64],
    student: &[f64],
    samples: usize,
    dist: InputDistribution,
    rng: &mut R,
) -> Result<u64> {
    if teacher.len() != student.len() {
        return Err(Error::DimensionMismatch { expected: teacher.len(), got: student.len() });
    }
    let mut x = vec![0.0; teacher.len()];
    let mut disagree = 0;
    for _ in 0..samples {
        dist.fill(rng, &mut x);
        if sign(dot(teacher, &x)) != sign(dot(student, &x)) {
            disagree += 1;
        }
    }
    Ok(disagree)
}
