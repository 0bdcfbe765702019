//! PAC-style error bounds, from the single-hypothesis Hoeffding bound to the
//! refined bound that tracks the full error spectrum of a finite class.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::GenError;
use crate::numeric::log_sum_exp;
use crate::output::Provenance;

/// `2 exp(-2 m gap^2)`: probability that training and generalization error
/// of one fixed hypothesis differ by more than `gap`.
pub fn hoeffding_bound(m: u64, gap: f64) -> Result<f64> {
    if m == 0 {
        return Err(invalid("sample size m must be at least 1"));
    }
    if !(gap > 0.0) {
        return Err(Error::Domain {
            what: "gap",
            value: gap,
            domain: "(0, inf)",
        });
    }
    Ok(2.0 * (-2.0 * m as f64 * gap * gap).exp())
}

/// Union of [`hoeffding_bound`] over a class of `class_size` hypotheses.
/// Frequently larger than 1.
pub fn uniform_bound(class_size: u64, m: u64, gap: f64) -> Result<f64> {
    if class_size == 0 {
        return Err(invalid("class size must be at least 1"));
    }
    Ok(class_size as f64 * hoeffding_bound(m, gap)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacParams {
    delta: f64,
    m: u64,
}

impl PacParams {
    pub fn new(delta: f64, m: u64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain {
                what: "delta",
                value: delta,
                domain: "(0, 1)",
            });
        }
        if m == 0 {
            return Err(invalid("sample size m must be at least 1"));
        }
        Ok(PacParams { delta, m })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn m(&self) -> u64 {
        self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    PacConsistent,
    RefinedSpectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Reported bound, at most 1.
    pub bound: f64,
    /// Unclamped value of the formula.
    pub raw: f64,
    #[serde(rename = "vacuous_flag")]
    pub vacuous: bool,
    pub method: BoundMethod,
}

/// `ln(|F| / delta) / m`: error of any hypothesis consistent with `m`
/// examples, with probability at least `1 - delta`.
pub fn pac_consistent_error_bound(class_size: u128, params: PacParams) -> Result<BoundReport> {
    if class_size == 0 {
        return Err(invalid("class size must be at least 1"));
    }
    let raw = ((class_size as f64).ln() - params.delta.ln()) / params.m as f64;
    Ok(BoundReport {
        bound: raw.min(1.0),
        raw,
        vacuous: raw >= 1.0,
        method: BoundMethod::PacConsistent,
    })
}

/// Distinct generalization-error levels of a finite class and how many
/// hypotheses sit at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpectrum {
    levels: Vec<(GenError, u64)>,
    total: u128,
}

impl ErrorSpectrum {
    pub fn new(levels: Vec<(GenError, u64)>) -> Result<Self> {
        if levels.is_empty() {
            return Err(invalid("error spectrum is empty"));
        }
        if levels.iter().any(|&(_, q)| q == 0) {
            return Err(invalid("spectrum counts must be positive"));
        }
        if levels.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("spectrum levels must be strictly increasing"));
        }
        let total = levels.iter().map(|&(_, q)| q as u128).sum();
        Ok(ErrorSpectrum { levels, total })
    }

    /// Spectrum of the `2^n` Ising students around a fixed teacher: `C(n, d)`
    /// students at Hamming distance `d` have overlap `1 - 2d/n`.
    pub fn ising_perceptron(n: u32) -> Result<Self> {
        if n == 0 || n > 64 {
            return Err(invalid(format!("Ising spectrum needs 1 <= n <= 64, got {n}")));
        }
        let mut levels = Vec::with_capacity(n as usize + 1);
        let mut binom: u128 = 1;
        for d in 0..=n {
            let r = 1.0 - 2.0 * d as f64 / n as f64;
            levels.push((GenError::new(r.clamp(-1.0, 1.0).acos() / PI)?, binom as u64));
            binom = binom * (n - d) as u128 / (d + 1) as u128;
        }
        Self::new(levels)
    }

    pub fn levels(&self) -> &[(GenError, u64)] {
        &self.levels
    }

    pub fn total(&self) -> u128 {
        self.total
    }

    /// Reads `eps,count` rows; a header row and `#` comments are allowed.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut levels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::Parse(format!("spectrum row {} has {} fields, expected 2", i + 1, rec.len())));
            }
            let eps = rec[0].parse::<f64>();
            let q = rec[1].parse::<u64>();
            match (eps, q) {
                (Ok(e), Ok(q)) => levels.push((GenError::new(e)?, q)),
                _ if i == 0 => continue,
                _ => return Err(Error::Parse(format!("bad spectrum row {}: {:?}", i + 1, rec))),
            }
        }
        Self::new(levels)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, provenance: &Provenance) -> Result<()> {
        provenance.write_csv_header(&mut w)?;
        writeln!(w, "eps,count")?;
        for &(e, q) in &self.levels {
            writeln!(w, "{},{}", e.value(), q)?;
        }
        Ok(())
    }
}

/// Smallest level `eps_i` whose tail `sum_{eps_j > eps_i} q_j (1 - eps_j)^m`
/// is at most `delta`.
///
/// With probability at least `1 - delta` no hypothesis with error above the
/// returned level survives `m` examples. Tail sums are accumulated in log
/// space. The report is flagged vacuous when only the worst level qualifies.
pub fn refined_spectrum_bound(spectrum: &ErrorSpectrum, params: PacParams) -> Result<BoundReport> {
    let levels = &spectrum.levels;
    if levels.is_empty() {
        return Err(invalid("error spectrum is empty"));
    }
    let m = params.m as f64;
    let log_terms: Vec<f64> = levels
        .iter()
        .map(|&(e, q)| {
            if e.value() >= 1.0 {
                f64::NEG_INFINITY
            } else {
                (q as f64).ln() + m * (-e.value()).ln_1p()
            }
        })
        .collect();
    let log_delta = params.delta.ln();
    let r = levels.len();
    let chosen = (0..r)
        .find(|&i| log_sum_exp(&log_terms[i + 1..]) <= log_delta)
        .unwrap_or(r - 1);
    let bound = levels[chosen].0.value();
    Ok(BoundReport {
        bound,
        raw: bound,
        vacuous: r > 1 && chosen == r - 1,
        method: BoundMethod::RefinedSpectrum,
    })
}

/// Order-of-magnitude rate `d ln(m) / m` (realizable) or its square root,
/// with all constants set to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcRateCurve {
    pub label: String,
    pub d_vc: u64,
    pub realizable: bool,
    pub points: Vec<(f64, f64)>,
}

pub const VC_RATE_LABEL: &str = "rate shape, constants unspecified";

pub fn vc_rate_curve(d_vc: u64, m_grid: &[f64], realizable: bool) -> Result<VcRateCurve> {
    if d_vc == 0 {
        return Err(invalid("VC dimension must be at least 1"));
    }
    if let Some(m) = m_grid.iter().find(|m| !(**m >= 1.0) || !m.is_finite()) {
        return Err(invalid(format!("sample sizes must be at least 1, got {m}")));
    }
    let points = m_grid
        .iter()
        .map(|&m| {
            let x = d_vc as f64 * m.ln() / m;
            (m, if realizable { x } else { x.sqrt() })
        })
        .collect();
    Ok(VcRateCurve {
        label: VC_RATE_LABEL.to_string(),
        d_vc,
        realizable,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hoeffding_examples() {
        assert!((hoeffding_bound(100, 0.1).unwrap() - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((hoeffding_bound(100, 0.1).unwrap() - 0.270_670_566).abs() < 1e-9);
        assert_eq!(hoeffding_bound(1, f64::INFINITY).unwrap(), 0.0);
        assert!(hoeffding_bound(0, 0.1).is_err());
        assert!(hoeffding_bound(5, 0.0).is_err());
        let (a, b) = (hoeffding_bound(37, 0.13).unwrap(), hoeffding_bound(74, 0.13).unwrap());
        assert!((b / 2.0 - (a / 2.0).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_bound(1, 100, 0.1).unwrap(), hoeffding_bound(100, 0.1).unwrap());
        let u = uniform_bound(1024, 100, 0.1).unwrap();
        assert!((u - 277.166_660).abs() < 1e-5);
        assert!((uniform_bound(3, 10, 0.2).unwrap() - 3.0 * hoeffding_bound(10, 0.2).unwrap()).abs() < 1e-15);
        assert!(uniform_bound(0, 10, 0.2).is_err());
    }

    #[test]
    fn pac_examples() {
        let r = pac_consistent_error_bound(1024, PacParams::new(0.05, 200).unwrap()).unwrap();
        assert!((r.bound - (1024f64.ln() + 20f64.ln()) / 200.0).abs() < 1e-15);
        assert!((r.bound - 0.0496).abs() < 1e-4);
        assert!(!r.vacuous);
        let r = pac_consistent_error_bound(1, PacParams::new(1.0 - 1e-12, 10).unwrap()).unwrap();
        assert!(r.bound < 1e-12);
        let r = pac_consistent_error_bound(1 << 40, PacParams::new(0.05, 5).unwrap()).unwrap();
        assert!(r.vacuous && r.bound == 1.0 && r.raw > 1.0);
        assert!(PacParams::new(0.0, 5).is_err());
        assert!(PacParams::new(1.0, 5).is_err());
        assert!(PacParams::new(0.1, 0).is_err());
    }

    #[test]
    fn report_json_field_names() {
        let r = pac_consistent_error_bound(8, PacParams::new(0.1, 10).unwrap()).unwrap();
        let v = serde_json::to_value(r).unwrap();
        assert!(v.get("bound").is_some() && v.get("vacuous_flag").is_some());
        assert_eq!(v["method"], "pac-consistent");
    }

    #[test]
    fn single_level_spectrum_bound_is_zero() {
        let s = ErrorSpectrum::new(vec![(GenError::ZERO, 1)]).unwrap();
        for (delta, m) in [(0.5, 1), (0.01, 1000)] {
            let r = refined_spectrum_bound(&s, PacParams::new(delta, m).unwrap()).unwrap();
            assert_eq!(r.bound, 0.0);
            assert!(!r.vacuous);
        }
    }

    #[test]
    fn spectrum_validation() {
        assert!(ErrorSpectrum::new(vec![]).is_err());
        assert!(ErrorSpectrum::new(vec![(GenError::HALF, 1), (GenError::ZERO, 1)]).is_err());
        assert!(ErrorSpectrum::new(vec![(GenError::ZERO, 0)]).is_err());
    }

    /// Independent spectrum: enumerate all 2^n students against the all-ones
    /// teacher and bucket their exact errors.
    fn enumerated_spectrum(n: usize) -> Vec<(f64, u64)> {
        let mut buckets: Vec<(f64, u64)> = Vec::new();
        for mask in 0u32..(1 << n) {
            let overlap: f64 = (0..n).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).sum::<f64>() / n as f64;
            let eps = overlap.clamp(-1.0, 1.0).acos() / PI;
            match buckets.iter_mut().find(|(e, _)| (e - eps).abs() < 1e-12) {
                Some(b) => b.1 += 1,
                None => buckets.push((eps, 1)),
            }
        }
        buckets.sort_by(|a, b| a.0.total_cmp(&b.0));
        buckets
    }

    /// Direct-sum oracle for the refined bound.
    fn direct_refined(spec: &[(f64, u64)], delta: f64, m: u64) -> f64 {
        for i in 0..spec.len() {
            let tail: f64 = spec[i + 1..].iter().map(|&(e, q)| q as f64 * (1.0 - e).powi(m as i32)).sum();
            if tail <= delta {
                return spec[i].0;
            }
        }
        spec.last().unwrap().0
    }

    #[test]
    fn ising_spectrum_matches_enumeration() {
        let s = ErrorSpectrum::ising_perceptron(10).unwrap();
        let oracle = enumerated_spectrum(10);
        assert_eq!(s.levels().len(), oracle.len());
        for (&(e, q), &(oe, oq)) in s.levels().iter().zip(&oracle) {
            assert!((e.value() - oe).abs() < 1e-12);
            assert_eq!(q, oq);
        }
        assert_eq!(s.total(), 1024);
        let params = PacParams::new(0.05, 50).unwrap();
        let r = refined_spectrum_bound(&s, params).unwrap();
        assert_eq!(r.bound, direct_refined(&oracle, 0.05, 50));
        assert!(!r.vacuous);
        let pac = pac_consistent_error_bound(s.total(), params).unwrap();
        assert!(r.bound <= pac.bound, "{} > {}", r.bound, pac.bound);
    }

    #[test]
    fn refined_never_exceeds_pac_on_ising_classes() {
        for n in 1..=30 {
            let s = ErrorSpectrum::ising_perceptron(n).unwrap();
            for m in [1, 5, 20, 50, 200, 1000] {
                for delta in [0.01, 0.05, 0.3] {
                    let p = PacParams::new(delta, m).unwrap();
                    let r = refined_spectrum_bound(&s, p).unwrap();
                    let pac = pac_consistent_error_bound(s.total(), p).unwrap();
                    assert!(r.bound <= pac.bound + 1e-15, "n={n} m={m} delta={delta}");
                }
            }
        }
    }

    #[test]
    fn huge_counts_stay_finite() {
        let s = ErrorSpectrum::ising_perceptron(64).unwrap();
        assert_eq!(s.total(), 1u128 << 64);
        let r = refined_spectrum_bound(&s, PacParams::new(0.05, 2000).unwrap()).unwrap();
        assert!(r.bound.is_finite() && r.bound < 0.5);
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let s = ErrorSpectrum::ising_perceptron(6).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf, &Provenance::new("bounds")).unwrap();
        let back = ErrorSpectrum::from_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        assert!(ErrorSpectrum::from_csv("eps,count\n0.1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn vc_rate_examples() {
        let c = vc_rate_curve(1, &[std::f64::consts::E], true).unwrap();
        assert!((c.points[0].1 - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(c.label, VC_RATE_LABEL);
        let grid: Vec<f64> = (3..2000).map(f64::from).collect();
        let real = vc_rate_curve(4, &grid, true).unwrap();
        let unreal = vc_rate_curve(4, &grid, false).unwrap();
        for (a, b) in real.points.iter().zip(&unreal.points) {
            if a.1 < 1.0 && b.1 < 1.0 {
                assert!(a.1 < b.1);
            }
        }
        assert!(real.points.windows(2).all(|w| w[1].1 < w[0].1));
        assert!(vc_rate_curve(0, &grid, true).is_err());
    }

    proptest! {
        #[test]
        fn refined_monotone_in_m_and_delta(n in 1u32..40, m in 1u64..500, dm in 1u64..100, delta in 0.001f64..0.9) {
            let s = ErrorSpectrum::ising_perceptron(n).unwrap();
            let b = refined_spectrum_bound(&s, PacParams::new(delta, m).unwrap()).unwrap().bound;
            let more_data = refined_spectrum_bound(&s, PacParams::new(delta, m + dm).unwrap()).unwrap().bound;
            let stricter = refined_spectrum_bound(&s, PacParams::new(delta / 2.0, m).unwrap()).unwrap().bound;
            prop_assert!(more_data <= b);
            prop_assert!(stricter >= b);
        }

        #[test]
        fn pac_monotone(size in 1u64..1_000_000, m in 1u64..1000) {
            let p = PacParams::new(0.05, m).unwrap();
            let q = PacParams::new(0.05, m + 1).unwrap();
            let a = pac_consistent_error_bound(size as u128, p).unwrap().raw;
            prop_assert!(pac_consistent_error_bound(size as u128, q).unwrap().raw < a);
            prop_assert!(pac_consistent_error_bound(size as u128 + 1, p).unwrap().raw > a);
        }
    }
}
