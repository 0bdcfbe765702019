//! Entropy densities `s(eps)`, the data energy `e(eps) = -alpha ln(1 - eps)`
//! and the annealed log-volume density `phi = s - e`.
//!
//! All logarithms are natural. Endpoint values come from the continuous
//! extension of each formula so closed intervals can be scanned.

use std::f64::consts::PI;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{GenError, Overlap};

/// Examples per weight, `alpha = m / N`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LoadParameter(f64);

impl LoadParameter {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Domain {
                what: "alpha",
                value: alpha,
                domain: "[0, inf)",
            });
        }
        Ok(LoadParameter(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Natural-log binary entropy of a split `(p, q)` with `p + q = 1`.
///
/// Taking both halves explicitly avoids cancellation in `1 - p` near 1.
fn split_entropy(p: f64, q: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.ln() };
    term(p) + term(q)
}

/// `H(x) = -x ln x - (1-x) ln(1-x)` with `H(0) = H(1) = 0`.
pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    split_entropy(x, 1.0 - x)
}

/// Continuous (spherical) perceptron: `1/2 [1 + ln 2pi + ln sin^2(pi eps)]`.
/// `-inf` at `eps = 0` and `eps = 1`.
pub fn entropy_continuous(eps: GenError) -> f64 {
    let e = eps.value();
    if e <= 0.0 || e >= 1.0 {
        return f64::NEG_INFINITY;
    }
    0.5 * (1.0 + (2.0 * PI).ln()) + (PI * e).sin().abs().ln()
}

/// Ising perceptron: `H(sin^2(pi eps / 2))`.
pub fn entropy_ising(eps: GenError) -> f64 {
    let half_angle = 0.5 * PI * eps.value();
    split_entropy(half_angle.sin().powi(2), half_angle.cos().powi(2))
}

/// Small-`eps` asymptote of the Ising entropy, `-(pi^2/2) eps^2 ln eps`.
pub fn entropy_ising_small_eps(eps: GenError) -> f64 {
    let e = eps.value();
    if e <= 0.0 {
        return 0.0;
    }
    -0.5 * PI * PI * e * e * e.ln()
}

/// Ising entropy written in the overlap, `H((1 - R) / 2)`.
pub fn entropy_ising_from_overlap(r: Overlap) -> f64 {
    let r = r.value();
    split_entropy(0.5 * (1.0 - r), 0.5 * (1.0 + r))
}

/// `e(eps) = -alpha ln(1 - eps)`, `+inf` at `eps = 1` (0 when `alpha = 0`).
pub fn energy_density(eps: GenError, alpha: LoadParameter) -> f64 {
    if alpha.0 == 0.0 {
        return 0.0;
    }
    if eps.value() >= 1.0 {
        return f64::INFINITY;
    }
    -alpha.0 * (-eps.value()).ln_1p()
}

/// Strictly increasing `(eps, s)` pairs interpolated piecewise-linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyTable {
    eps: Vec<f64>,
    s: Vec<f64>,
}

impl EntropyTable {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("entropy table needs at least two rows"));
        }
        for &(e, s) in &points {
            if !(0.0..=1.0).contains(&e) || !s.is_finite() {
                return Err(invalid(format!("entropy table row ({e}, {s}) out of range")));
            }
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("entropy table eps column must be strictly increasing"));
        }
        let (eps, s) = points.into_iter().unzip();
        Ok(EntropyTable { eps, s })
    }

    /// Reads a two-column `eps,s` CSV; a header row and `#` comments are allowed.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut points = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Parse(format!("entropy table row {} has {} columns", i + 1, rec.len())));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(e), Ok(s)) => points.push((e, s)),
                _ if i == 0 => continue,
                _ => return Err(Error::Parse(format!("entropy table row {}: not numeric", i + 1))),
            }
        }
        EntropyTable::new(points)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        EntropyTable::from_csv(std::fs::File::open(path)?)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.eps[0], self.eps[self.eps.len() - 1])
    }

    pub fn interpolate(&self, eps: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if eps < lo || eps > hi {
            return Err(Error::Domain {
                what: "eps (tabulated entropy)",
                value: eps,
                domain: "table range",
            });
        }
        let k = self.eps.partition_point(|&x| x <= eps);
        if k == self.eps.len() {
            return Ok(self.s[k - 1]);
        }
        let (x0, x1) = (self.eps[k - 1], self.eps[k]);
        let t = (eps - x0) / (x1 - x0);
        Ok(self.s[k - 1] + t * (self.s[k] - self.s[k - 1]))
    }
}

/// A named entropy-density function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EntropyModel {
    /// Annealed spherical-perceptron entropy.
    ContinuousExact,
    /// The constant bound `s = 1` used for the spherical perceptron.
    ContinuousBoundOne,
    /// `H(sin^2(pi eps / 2))`.
    IsingExact,
    /// `-(pi^2/2) eps^2 ln eps`.
    IsingSmallEps,
    Tabulated(EntropyTable),
}

impl EntropyModel {
    pub fn entropy(&self, eps: GenError) -> Result<f64> {
        Ok(match self {
            EntropyModel::ContinuousExact => entropy_continuous(eps),
            EntropyModel::ContinuousBoundOne => 1.0,
            EntropyModel::IsingExact => entropy_ising(eps),
            EntropyModel::IsingSmallEps => entropy_ising_small_eps(eps),
            EntropyModel::Tabulated(t) => t.interpolate(eps.value())?,
        })
    }

    /// Closed interval of `eps` on which the model is defined.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            EntropyModel::Tabulated(t) => t.domain(),
            _ => (0.0, 1.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EntropyModel::ContinuousExact => "continuous-exact",
            EntropyModel::ContinuousBoundOne => "continuous-bound",
            EntropyModel::IsingExact => "ising-exact",
            EntropyModel::IsingSmallEps => "ising-small-eps",
            EntropyModel::Tabulated(_) => "tabulated",
        }
    }
}

impl fmt::Display for EntropyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntropyModel {
    type Err = Error;

    /// Parses the analytic model names; tabulated models are built from a file.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous-exact" => Ok(EntropyModel::ContinuousExact),
            "continuous-bound" => Ok(EntropyModel::ContinuousBoundOne),
            "ising-exact" => Ok(EntropyModel::IsingExact),
            "ising-small-eps" => Ok(EntropyModel::IsingSmallEps),
            other => Err(invalid(format!("unknown entropy model '{other}'"))),
        }
    }
}

/// `phi(eps; alpha) = s(eps) + alpha ln(1 - eps)`.
pub fn annealed_log_volume_density(model: &EntropyModel, eps: GenError, alpha: LoadParameter) -> Result<f64> {
    let s = model.entropy(eps)?;
    let e = energy_density(eps, alpha);
    Ok(if s == f64::NEG_INFINITY || e == f64::INFINITY {
        f64::NEG_INFINITY
    } else {
        s - e
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn ge(x: f64) -> GenError {
        GenError::new(x).unwrap()
    }

    fn alpha(a: f64) -> LoadParameter {
        LoadParameter::new(a).unwrap()
    }

    #[test]
    fn continuous_entropy_values() {
        // sin(pi/2) = 1 leaves 1/2 (1 + ln 2pi) = 0.5 * 2.8378770664 = 1.4189385332
        assert!((entropy_continuous(ge(0.5)) - 1.418_938_533_2).abs() < 1e-9);
        assert!((entropy_continuous(ge(0.25)) - entropy_continuous(ge(0.75))).abs() < 1e-12);
        assert_eq!(entropy_continuous(ge(0.0)), f64::NEG_INFINITY);
        assert_eq!(entropy_continuous(ge(1.0)), f64::NEG_INFINITY);
        // s(eps) - ln(eps) tends to 1/2(1 + ln 2pi) + ln pi as eps -> 0.
        let c = 0.5 * (1.0 + (2.0 * PI).ln()) + PI.ln();
        for e in [1e-3, 1e-5, 1e-7] {
            assert!((entropy_continuous(ge(e)) - e.ln() - c).abs() < 10.0 * e);
        }
    }

    #[test]
    fn ising_entropy_values() {
        assert_eq!(entropy_ising(ge(0.0)), 0.0);
        assert!((entropy_ising(ge(0.5)) - 2f64.ln()).abs() < 1e-15);
        assert!(entropy_ising(ge(1.0)).abs() < 1e-15);
    }

    #[test]
    fn ising_small_eps_values() {
        let v = entropy_ising_small_eps(ge(1.0 / E));
        assert!((v - 0.5 * PI * PI / (E * E)).abs() < 1e-12);
        assert!((v - 0.667_854).abs() < 1e-5);
        assert_eq!(entropy_ising_small_eps(ge(1.0)), 0.0);
        assert_eq!(entropy_ising_small_eps(ge(0.0)), 0.0);
        let exact = entropy_ising(ge(0.01));
        let approx = entropy_ising_small_eps(ge(0.01));
        assert!(((approx - exact) / exact).abs() < 0.05, "{approx} vs {exact}");
    }

    #[test]
    fn energy_values() {
        assert_eq!(energy_density(ge(0.0), alpha(3.0)), 0.0);
        assert!((energy_density(ge(0.5), alpha(2.0)) - 2.0 * 2f64.ln()).abs() < 1e-12);
        let e = energy_density(ge(0.01), alpha(10.0));
        assert!((e - 0.100_503_358_5).abs() < 1e-9);
        assert!(((e - 0.1) / 0.1).abs() < 0.01);
        assert_eq!(energy_density(ge(1.0), alpha(1.0)), f64::INFINITY);
    }

    #[test]
    fn energy_monotone_and_linear() {
        let grid: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        for w in grid.windows(2) {
            assert!(energy_density(ge(w[1]), alpha(0.7)) > energy_density(ge(w[0]), alpha(0.7)));
        }
        for &e in &grid {
            let one = energy_density(ge(e), alpha(1.0));
            assert!((energy_density(ge(e), alpha(3.5)) - 3.5 * one).abs() <= 1e-12 * (1.0 + one));
        }
    }

    #[test]
    fn phi_examples() {
        for a in [0.0, 0.3, 5.0, 40.0] {
            assert_eq!(annealed_log_volume_density(&EntropyModel::IsingExact, ge(0.0), alpha(a)).unwrap(), 0.0);
        }
        let crossing = 1.0 - (-1.0f64).exp();
        let v = annealed_log_volume_density(&EntropyModel::ContinuousBoundOne, ge(crossing), alpha(1.0)).unwrap();
        assert!(v.abs() < 1e-12);
        let v = annealed_log_volume_density(&EntropyModel::IsingExact, ge(0.5), alpha(0.0)).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ising_entropy_matches_overlap_bracket() {
        // The bracket of the discrete annealed volume, written out in R.
        let bracket = |r: f64| {
            let a = (1.0 - r) / 2.0;
            let b = (1.0 + r) / 2.0;
            let t = |x: f64| if x == 0.0 { 0.0 } else { -x * x.ln() };
            t(a) + t(b)
        };
        for i in 0..=10_000 {
            let e = i as f64 / 10_000.0;
            let r = (PI * e).cos();
            assert!((entropy_ising(ge(e)) - bracket(r)).abs() < 1e-10, "eps = {e}");
            assert!((entropy_ising_from_overlap(Overlap::new(r).unwrap()) - bracket(r)).abs() < 1e-12);
        }
    }

    #[test]
    fn ising_entropy_nonnegative_with_peak_at_half() {
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0..=10_000 {
            let e = i as f64 / 10_000.0;
            let s = entropy_ising(ge(e));
            assert!(s >= 0.0);
            if s > best.1 {
                best = (e, s);
            }
        }
        assert_eq!(best.0, 0.5);
        assert!((best.1 - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn continuous_phi_diverges_at_zero() {
        for a in [0.0, 1.0, 100.0] {
            let near = annealed_log_volume_density(&EntropyModel::ContinuousExact, ge(1e-12), alpha(a)).unwrap();
            assert!(near < -20.0);
            assert_eq!(
                annealed_log_volume_density(&EntropyModel::ContinuousExact, ge(0.0), alpha(a)).unwrap(),
                f64::NEG_INFINITY
            );
        }
    }

    #[test]
    fn tabulated_interpolates_and_refuses_extrapolation() {
        let t = EntropyTable::new(vec![(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]).unwrap();
        let m = EntropyModel::Tabulated(t);
        assert!((m.entropy(ge(0.25)).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(m.entropy(ge(1.0)).unwrap(), 0.0);
        let partial = EntropyModel::Tabulated(EntropyTable::new(vec![(0.1, 0.2), (0.9, 0.4)]).unwrap());
        assert!(matches!(partial.entropy(ge(0.05)), Err(Error::Domain { .. })));
        assert_eq!(partial.domain(), (0.1, 0.9));
        assert!(EntropyTable::new(vec![(0.2, 0.0), (0.2, 1.0)]).is_err());
        assert!(EntropyTable::new(vec![(0.2, 0.0)]).is_err());
    }

    #[test]
    fn tabulated_csv_with_and_without_header() {
        let with = "# entropy\neps,s\n0,0\n0.5,0.7\n1,0\n";
        let without = "0, 0\n0.5, 0.7\n1, 0\n";
        let a = EntropyTable::from_csv(with.as_bytes()).unwrap();
        let b = EntropyTable::from_csv(without.as_bytes()).unwrap();
        assert_eq!(a, b);
        assert!(EntropyTable::from_csv("eps,s\n0,0\nx,1\n".as_bytes()).is_err());
    }

    #[test]
    fn model_names_round_trip() {
        for m in [
            EntropyModel::ContinuousExact,
            EntropyModel::ContinuousBoundOne,
            EntropyModel::IsingExact,
            EntropyModel::IsingSmallEps,
        ] {
            assert_eq!(m.name().parse::<EntropyModel>().unwrap(), m);
        }
        assert!("nope".parse::<EntropyModel>().is_err());
    }

    #[test]
    fn load_parameter_rejects_negative() {
        assert!(LoadParameter::new(-0.1).is_err());
        assert!(LoadParameter::new(f64::NAN).is_err());
        assert!(LoadParameter::new(f64::INFINITY).is_err());
        assert_eq!(LoadParameter::new(0.0).unwrap().value(), 0.0);
    }
}
