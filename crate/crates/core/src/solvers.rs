//! Learning curves from the entropy/energy competition.
//!
//! Two routes to a thermodynamic-limit generalization error are provided:
//! the rightmost crossing `eps*` of `s(eps)` and `-alpha ln(1 - eps)` (an
//! upper bound on the error of any consistent learner), and the maximiser of
//! the annealed density `phi = s + alpha ln(1 - eps)` (the typical error of a
//! Gibbs student). For the Ising perceptron both jump to zero at a critical
//! load.

use std::f64::consts::{E, PI};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy_energy::{annealed_log_volume_density, EntropyModel, LoadParameter};
use crate::error::{invalid, Error, Result};
use crate::geometry::GenError;
use crate::numeric::{bisect_predicate, golden_section_max};
use crate::output::Provenance;

/// Number of points in the `eps` scans. Crossings and interior maxima of the
/// in-scope entropy models are separated by far more than one step.
pub const EPS_GRID: usize = 2048;

/// Consecutive curve points differing by more than this are annotated as jumps.
pub const JUMP_THRESHOLD: f64 = 0.05;

/// Default `alpha` bracket scanned by [`critical_load`].
pub const DEFAULT_ALPHA_BRACKET: (f64, f64) = (0.1, 50.0);

/// Root/argmax tolerance used when sweeping whole curves.
pub const CURVE_TOL: f64 = 1e-12;

/// Threshold `pi^2 / e` above which the small-eps Ising condition has no root.
pub const ISING_CONDITION_MAX: f64 = PI * PI / E;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingResult {
    pub eps_star: GenError,
    /// The only point with `s >= e` is the lower end of the domain.
    pub at_boundary: bool,
    /// `s >= e` at `bracket.0`, `s < e` at `bracket.1`.
    pub bracket: (f64, f64),
}

fn grid_point(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    if i == n - 1 {
        hi
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

fn phi(model: &EntropyModel, eps: f64, alpha: LoadParameter) -> Result<f64> {
    annealed_log_volume_density(model, GenError::new(eps)?, alpha)
}

/// Largest `eps` with `s(eps) >= -alpha ln(1 - eps)`.
///
/// Scans [`EPS_GRID`] points downward from the top of the model's domain and
/// bisects the first sign change to `tol`. When `s` dominates at the top of
/// the domain the result is that end (1 for the analytic models).
pub fn rightmost_crossing(model: &EntropyModel, alpha: LoadParameter, tol: f64) -> Result<CrossingResult> {
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    if alpha.value() <= 0.0 {
        return Err(Error::Domain {
            what: "alpha",
            value: alpha.value(),
            domain: "(0, inf)",
        });
    }
    let (lo, hi) = model.domain();
    if phi(model, hi, alpha)? >= 0.0 {
        return Ok(CrossingResult {
            eps_star: GenError::new(hi)?,
            at_boundary: false,
            bracket: (hi, hi),
        });
    }

    let n = EPS_GRID;
    let mut found = None;
    for i in (0..n - 1).rev() {
        let x = grid_point(lo, hi, i, n);
        if phi(model, x, alpha)? >= 0.0 {
            found = Some(i);
            break;
        }
    }
    let i = found.ok_or(Error::NoCrossing { alpha: alpha.value() })?;
    let (a, b) = (grid_point(lo, hi, i, n), grid_point(lo, hi, i + 1, n));

    if i == 0 && phi(model, lo, alpha)? <= 0.0 {
        // Entropy and energy only touch at the lower boundary.
        return Ok(CrossingResult {
            eps_star: GenError::new(lo)?,
            at_boundary: true,
            bracket: (a, b),
        });
    }

    let mut failure = None;
    let (l, r) = bisect_predicate(a, b, tol, |x| match phi(model, x, alpha) {
        Ok(v) => v >= 0.0,
        Err(e) => {
            failure.get_or_insert(e);
            false
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(CrossingResult {
        eps_star: GenError::new(l)?,
        at_boundary: false,
        bracket: (l, r),
    })
}

/// Global maximiser of `phi(eps; alpha)` over the model's domain.
///
/// The best interior grid point is refined by golden-section search and then
/// has to strictly beat both ends of the domain, so ties go to the boundary.
pub fn annealed_maximizer(model: &EntropyModel, alpha: LoadParameter, tol: f64) -> Result<GenError> {
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    let (lo, hi) = model.domain();
    let n = EPS_GRID;
    let values = (0..n)
        .map(|i| phi(model, grid_point(lo, hi, i, n), alpha))
        .collect::<Result<Vec<f64>>>()?;

    let mut best = (lo, values[0]);
    if values[n - 1] > best.1 {
        best = (hi, values[n - 1]);
    }

    let interior = (1..n - 1)
        .filter(|&i| !values[i].is_nan())
        .max_by(|&i, &j| values[i].total_cmp(&values[j]));
    if let Some(i) = interior {
        let (a, b) = (grid_point(lo, hi, i - 1, n), grid_point(lo, hi, i + 1, n));
        let f = |x: f64| phi(model, x, alpha).unwrap_or(f64::NEG_INFINITY);
        let x = golden_section_max(a, b, tol, f);
        let (x, v) = if f(x) >= values[i] { (x, f(x)) } else { (grid_point(lo, hi, i, n), values[i]) };
        if v > best.1 {
            best = (x, v);
        }
    }
    GenError::new(best.0)
}

/// Larger root of `-pi^2 eps ln(eps) - alpha = 0`, the small-eps stationarity
/// condition of the Ising perceptron. Absent when `alpha > pi^2 / e`.
pub fn ising_first_order_condition(alpha: LoadParameter) -> Option<GenError> {
    let a = alpha.value();
    if a > ISING_CONDITION_MAX {
        return None;
    }
    let f = |x: f64| -PI * PI * x * x.ln() - a;
    let peak = 1.0 / E;
    if f(peak) <= 0.0 {
        return GenError::new(peak).ok();
    }
    let (l, r) = bisect_predicate(peak, 1.0, 1e-15, |x| f(x) < 0.0);
    GenError::new(0.5 * (l + r)).ok()
}

/// Large-`alpha` asymptote `eps ~ 1/alpha` of the continuous perceptron,
/// clamped to 1.
pub fn continuous_first_order_eps(alpha: LoadParameter) -> Result<GenError> {
    if alpha.value() == 0.0 {
        return Err(Error::Domain {
            what: "alpha",
            value: 0.0,
            domain: "(0, inf)",
        });
    }
    GenError::new((1.0 / alpha.value()).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionCriterion {
    /// The rightmost crossing collapses onto the lower boundary.
    CrossingVanishes,
    /// The annealed maximiser moves to the lower boundary.
    InteriorMaxLosesToBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalLoad {
    pub alpha_c: LoadParameter,
    pub certified_interval: (f64, f64),
}

fn criterion_holds(model: &EntropyModel, criterion: TransitionCriterion, alpha: f64) -> Result<bool> {
    let alpha = LoadParameter::new(alpha)?;
    match criterion {
        TransitionCriterion::CrossingVanishes => match rightmost_crossing(model, alpha, CURVE_TOL) {
            Ok(r) => Ok(r.at_boundary),
            Err(Error::NoCrossing { .. }) => Ok(true),
            Err(e) => Err(e),
        },
        TransitionCriterion::InteriorMaxLosesToBoundary => {
            Ok(annealed_maximizer(model, alpha, CURVE_TOL)?.value() <= model.domain().0)
        }
    }
}

/// Critical load over [`DEFAULT_ALPHA_BRACKET`].
pub fn critical_load(model: &EntropyModel, criterion: TransitionCriterion, tol: f64) -> Result<CriticalLoad> {
    critical_load_in(model, criterion, DEFAULT_ALPHA_BRACKET, tol)
}

/// Bisects on `alpha` until the interval on which the criterion flips is
/// narrower than `tol`.
pub fn critical_load_in(
    model: &EntropyModel,
    criterion: TransitionCriterion,
    bracket: (f64, f64),
    tol: f64,
) -> Result<CriticalLoad> {
    let (mut lo, mut hi) = bracket;
    if !(tol > 0.0) || !(lo > 0.0) || !(hi > lo) {
        return Err(invalid(format!("bad critical-load bracket {bracket:?} / tolerance {tol}")));
    }
    let at_lo = criterion_holds(model, criterion, lo)?;
    if at_lo == criterion_holds(model, criterion, hi)? {
        return Err(Error::NoTransition { lo, hi });
    }
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if criterion_holds(model, criterion, mid)? == at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalLoad {
        alpha_c: LoadParameter::new(0.5 * (lo + hi))?,
        certified_interval: (lo, hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveMethod {
    RightmostCrossing,
    AnnealedMax,
}

impl CurveMethod {
    pub fn name(self) -> &'static str {
        match self {
            CurveMethod::RightmostCrossing => "crossing",
            CurveMethod::AnnealedMax => "annealed",
        }
    }
}

impl fmt::Display for CurveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CurveMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crossing" => Ok(CurveMethod::RightmostCrossing),
            "annealed" => Ok(CurveMethod::AnnealedMax),
            other => Err(invalid(format!("unknown curve method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub eps: GenError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub alpha_before: f64,
    pub alpha_after: f64,
    pub eps_before: f64,
    pub eps_after: f64,
}

impl Jump {
    /// Midpoint of the grid cell containing the discontinuity.
    pub fn alpha_c(&self) -> f64 {
        0.5 * (self.alpha_before + self.alpha_after)
    }
}

/// A grid point whose solver failed; the sweep carries on past it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveGap {
    pub alpha: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub model: String,
    pub method: CurveMethod,
    pub points: Vec<CurvePoint>,
    pub jumps: Vec<Jump>,
    pub gaps: Vec<CurveGap>,
}

pub fn learning_curve(model: &EntropyModel, method: CurveMethod, alphas: &[f64]) -> Result<LearningCurve> {
    if alphas.is_empty() {
        return Err(invalid("alpha grid is empty"));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(invalid(format!("alpha grid values must be positive, got {a}")));
    }
    if alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("alpha grid must increase"));
    }

    let solved: Vec<Result<GenError>> = alphas
        .par_iter()
        .map(|&a| {
            let alpha = LoadParameter::new(a)?;
            match method {
                CurveMethod::RightmostCrossing => rightmost_crossing(model, alpha, CURVE_TOL).map(|r| r.eps_star),
                CurveMethod::AnnealedMax => annealed_maximizer(model, alpha, CURVE_TOL),
            }
        })
        .collect();

    let mut points = Vec::with_capacity(alphas.len());
    let mut gaps = Vec::new();
    for (&alpha, r) in alphas.iter().zip(solved) {
        match r {
            Ok(eps) => points.push(CurvePoint { alpha, eps }),
            Err(e) => gaps.push(CurveGap { alpha, reason: e.to_string() }),
        }
    }
    let jumps = points
        .windows(2)
        .filter(|w| (w[0].eps.value() - w[1].eps.value()).abs() > JUMP_THRESHOLD)
        .map(|w| Jump {
            alpha_before: w[0].alpha,
            alpha_after: w[1].alpha,
            eps_before: w[0].eps.value(),
            eps_after: w[1].eps.value(),
        })
        .collect();
    Ok(LearningCurve {
        model: model.name().to_string(),
        method,
        points,
        jumps,
        gaps,
    })
}

impl LearningCurve {
    /// CSV with columns `alpha,eps,method,jump_flag`; `jump_flag` is 1 on the
    /// first point after a discontinuity. Jumps and gaps are also listed in
    /// the `#` header.
    pub fn write_csv<W: Write>(&self, mut w: W, provenance: &Provenance) -> Result<()> {
        provenance.write_csv_header(&mut w)?;
        if !provenance.params.contains_key("model") {
            writeln!(w, "# model: {}", self.model)?;
        }
        for j in &self.jumps {
            writeln!(
                w,
                "# jump: alpha_c={} eps_before={} eps_after={}",
                j.alpha_c(),
                j.eps_before,
                j.eps_after
            )?;
        }
        for g in &self.gaps {
            writeln!(w, "# gap: alpha={} reason={}", g.alpha, g.reason)?;
        }
        writeln!(w, "alpha,eps,method,jump_flag")?;
        for p in &self.points {
            let flag = self.jumps.iter().any(|j| j.alpha_after == p.alpha) as u8;
            writeln!(w, "{},{},{},{}", p.alpha, p.eps.value(), self.method, flag)?;
        }
        Ok(())
    }
}
