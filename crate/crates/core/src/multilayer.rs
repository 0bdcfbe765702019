//! Two-layer machines with a fixed output rule: the committee machine
//! (majority vote), the tree parity machine (product of hidden signs on
//! disjoint input blocks) and the reversed-wedge perceptron (non-monotone
//! activation). All share the global tie rule `sign(0) = +1`.
//!
//! Weights are stored flat, hidden unit by hidden unit. The committee's
//! units each see the whole input; the parity machine's unit `k` sees the
//! contiguous block `k*N/K .. (k+1)*N/K`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{dot, sign, InputDistribution};
use crate::gibbs_sim::{examples_for, EmpiricalCurvePoint, GibbsConfig, WeightSpace};
use crate::numeric::mean_stderr;
use crate::seeds;

/// Smallest accepted Monte Carlo test set.
pub const MIN_TEST_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Architecture {
    Committee { k: usize },
    Parity { k: usize },
    ReversedWedge { gamma: f64 },
}

impl Architecture {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(invalid("input dimension n must be at least 1"));
        }
        match *self {
            Architecture::Committee { k } if k == 0 => Err(invalid("committee needs at least one hidden unit")),
            Architecture::Parity { k } if k == 0 || n % k != 0 => {
                Err(invalid(format!("parity machine needs K >= 1 dividing N, got K = {k}, N = {n}")))
            }
            Architecture::ReversedWedge { gamma } if !(gamma >= 0.0) || gamma.is_infinite() => Err(Error::Domain {
                what: "gamma",
                value: gamma,
                domain: "[0, inf)",
            }),
            _ => Ok(()),
        }
    }

    pub fn units(&self) -> usize {
        match *self {
            Architecture::Committee { k } | Architecture::Parity { k } => k,
            Architecture::ReversedWedge { .. } => 1,
        }
    }

    /// Number of weights feeding one hidden unit.
    pub fn unit_dim(&self, n: usize) -> usize {
        match *self {
            Architecture::Committee { .. } | Architecture::ReversedWedge { .. } => n,
            Architecture::Parity { k } => n / k,
        }
    }

    pub fn weight_count(&self, n: usize) -> usize {
        self.units() * self.unit_dim(n)
    }

    /// Input index read by flat weight `i`.
    #[inline]
    fn input_index(&self, n: usize, i: usize) -> usize {
        match self {
            Architecture::Committee { .. } => i % n,
            _ => i,
        }
    }

    /// Hidden pre-activations `J_k . S_k` for one input.
    fn hidden_fields(&self, n: usize, w: &[f64], s: &[f64], out: &mut [f64]) {
        let d = self.unit_dim(n);
        for (u, h) in out.iter_mut().enumerate() {
            let wk = &w[u * d..(u + 1) * d];
            *h = match self {
                Architecture::Parity { .. } => dot(wk, &s[u * d..(u + 1) * d]),
                _ => dot(wk, s),
            };
        }
    }

    /// Output from hidden pre-activations.
    fn combine(&self, n: usize, fields: &[f64]) -> i8 {
        match *self {
            Architecture::Committee { .. } => {
                let votes: i64 = fields.iter().map(|&h| sign(h) as i64).sum();
                if votes < 0 {
                    -1
                } else {
                    1
                }
            }
            Architecture::Parity { .. } => fields.iter().map(|&h| sign(h)).product(),
            Architecture::ReversedWedge { gamma } => wedge_output(fields[0] / (n as f64).sqrt(), gamma),
        }
    }

    /// Output of the machine with flat weights `w` on input `s`.
    pub fn forward(&self, n: usize, w: &[f64], s: &[f64]) -> Result<i8> {
        if s.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: s.len() });
        }
        if w.len() != self.weight_count(n) {
            return Err(Error::DimensionMismatch { expected: self.weight_count(n), got: w.len() });
        }
        let mut fields = vec![0.0; self.units()];
        self.hidden_fields(n, w, s, &mut fields);
        Ok(self.combine(n, &fields))
    }

    /// Random weights: `+-1` entries, or each hidden vector uniform on the
    /// sphere of squared radius equal to its length.
    pub fn sample_weights<R: Rng + ?Sized>(&self, n: usize, space: WeightSpace, rng: &mut R) -> Vec<f64> {
        let d = self.unit_dim(n);
        (0..self.units()).flat_map(|_| space.sample(d, rng)).collect()
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Committee { k } => write!(f, "committee-k{k}"),
            Architecture::Parity { k } => write!(f, "parity-k{k}"),
            Architecture::ReversedWedge { gamma } => write!(f, "wedge-g{gamma}"),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    /// `committee:K`, `parity:K` or `wedge:GAMMA`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("architecture '{s}' should look like committee:3, parity:2 or wedge:1.0")))?;
        let bad = || invalid(format!("bad architecture parameter in '{s}'"));
        match kind {
            "committee" => Ok(Architecture::Committee { k: arg.parse().map_err(|_| bad())? }),
            "parity" => Ok(Architecture::Parity { k: arg.parse().map_err(|_| bad())? }),
            "wedge" => Ok(Architecture::ReversedWedge { gamma: arg.parse().map_err(|_| bad())? }),
            _ => Err(invalid(format!("unknown architecture '{kind}'"))),
        }
    }
}

/// `+1` iff `lambda` lies in `[-gamma, 0)` or `[gamma, inf)`.
pub fn wedge_output(lambda: f64, gamma: f64) -> i8 {
    if (lambda >= -gamma && lambda < 0.0) || lambda >= gamma {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeMachine {
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityMachine {
    /// `K` vectors of length `N/K`, one per input block.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReversedWedgePerceptron {
    pub weights: Vec<f64>,
    pub gamma: f64,
}

fn uniform_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let d = rows.first().map(Vec::len).ok_or_else(|| invalid("machine needs at least one hidden unit"))?;
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: r.len() });
    }
    Ok(d)
}

/// `sign(sum_k sign(J_k . S))` with ties to +1.
pub fn committee_forward(machine: &CommitteeMachine, s: &[f64]) -> Result<i8> {
    let n = uniform_rows(&machine.weights)?;
    let arch = Architecture::Committee { k: machine.weights.len() };
    arch.forward(n, &machine.weights.concat(), s)
}

/// `prod_k sign(J_k . S_k)` over the contiguous input blocks.
pub fn parity_forward(machine: &ParityMachine, s: &[f64]) -> Result<i8> {
    let d = uniform_rows(&machine.weights)?;
    let k = machine.weights.len();
    if s.len() != d * k {
        return Err(Error::DimensionMismatch { expected: d * k, got: s.len() });
    }
    Architecture::Parity { k }.forward(d * k, &machine.weights.concat(), s)
}

/// Reversed-wedge rule on `lambda = J . S / sqrt(N)`.
pub fn reversed_wedge_forward(machine: &ReversedWedgePerceptron, s: &[f64]) -> Result<i8> {
    let arch = Architecture::ReversedWedge { gamma: machine.gamma };
    arch.validate(machine.weights.len())?;
    arch.forward(machine.weights.len(), &machine.weights, s)
}

/// Metropolis chain on the machine's weights with energy = training errors.
/// Hidden fields are cached so a proposal costs `O(m K)` plus the update of
/// one hidden unit.
pub fn train_metropolis(
    arch: &Architecture,
    n: usize,
    space: WeightSpace,
    patterns: &[f64],
    labels: &[i8],
    config: &GibbsConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<usize>)> {
    arch.validate(n)?;
    config.validate()?;
    let m = labels.len();
    if patterns.len() != m * n {
        return Err(Error::DimensionMismatch { expected: m * n, got: patterns.len() });
    }
    let (units, d, nw) = (arch.units(), arch.unit_dim(n), arch.weight_count(n));
    let mut w = arch.sample_weights(n, space, rng);
    let mut fields = vec![0.0; m * units];
    for mu in 0..m {
        arch.hidden_fields(n, &w, &patterns[mu * n..(mu + 1) * n], &mut fields[mu * units..(mu + 1) * units]);
    }
    let wrong = |fields: &[f64], mu: usize| arch.combine(n, &fields[mu * units..(mu + 1) * units]) != labels[mu];
    let mut energy = (0..m).filter(|&mu| wrong(&fields, mu)).count() as i64;
    let mut trial = fields.clone();
    let mut unit_w = vec![0.0; d];
    let mut trace = Vec::with_capacity(config.sweeps);

    for s in 0..config.sweeps {
        let tau = config.temperature_at(s);
        for _ in 0..nw {
            let u;
            match space {
                WeightSpace::IsingHypercube => {
                    let i = rng.random_range(0..nw);
                    u = i / d;
                    let step = -2.0 * w[i];
                    let x = arch.input_index(n, i);
                    for mu in 0..m {
                        trial[mu * units + u] = fields[mu * units + u] + step * patterns[mu * n + x];
                    }
                    unit_w.copy_from_slice(&w[u * d..(u + 1) * d]);
                    unit_w[i - u * d] = -unit_w[i - u * d];
                }
                WeightSpace::Sphere => {
                    u = rng.random_range(0..units);
                    for (t, &x) in unit_w.iter_mut().zip(&w[u * d..(u + 1) * d]) {
                        *t = x + config.sphere_step * rng.sample::<f64, _>(StandardNormal);
                    }
                    let norm = dot(&unit_w, &unit_w).sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let scale = (d as f64).sqrt() / norm;
                    unit_w.iter_mut().for_each(|x| *x *= scale);
                    let offset = match arch {
                        Architecture::Parity { .. } => u * d,
                        _ => 0,
                    };
                    for mu in 0..m {
                        trial[mu * units + u] = dot(&unit_w, &patterns[mu * n + offset..mu * n + offset + d]);
                    }
                }
            }
            let mut delta = 0i64;
            for mu in 0..m {
                delta += wrong(&trial, mu) as i64 - wrong(&fields, mu) as i64;
            }
            let accepted = delta <= 0 || (tau > 0.0 && rng.random::<f64>() < (-(delta as f64) / tau).exp());
            if accepted {
                w[u * d..(u + 1) * d].copy_from_slice(&unit_w);
                for mu in 0..m {
                    fields[mu * units + u] = trial[mu * units + u];
                }
                energy += delta;
            } else {
                for mu in 0..m {
                    trial[mu * units + u] = fields[mu * units + u];
                }
            }
        }
        trace.push(energy as usize);
    }
    Ok((w, trace))
}

/// Fraction of `samples` fresh Gaussian inputs on which two machines disagree.
pub fn monte_carlo_disagreement<R: Rng + ?Sized>(
    arch: &Architecture,
    n: usize,
    teacher: &[f64],
    student: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut x = vec![0.0; n];
    let mut wrong = 0usize;
    for _ in 0..samples {
        InputDistribution::Gaussian.fill(rng, &mut x);
        wrong += (arch.forward(n, teacher, &x)? != arch.forward(n, student, &x)?) as usize;
    }
    Ok(wrong as f64 / samples as f64)
}

/// Empirical learning curve of a two-layer machine. Each trial draws a
/// teacher in the architecture, trains a student by Metropolis dynamics and
/// estimates its error on `test_samples` fresh inputs. The reported stderr
/// is across trials and so includes the Monte Carlo test-set noise.
pub fn empirical_multilayer_curve(
    arch: &Architecture,
    n: usize,
    space: WeightSpace,
    alphas: &[f64],
    config: &GibbsConfig,
    trials: usize,
    test_samples: usize,
) -> Result<Vec<EmpiricalCurvePoint>> {
    arch.validate(n)?;
    config.validate()?;
    crate::gibbs_sim::validate_grid("alpha", alphas)?;
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    if test_samples < MIN_TEST_SAMPLES {
        return Err(invalid(format!("test_samples must be at least {MIN_TEST_SAMPLES}, got {test_samples}")));
    }
    let jobs: Vec<(usize, usize)> = (0..alphas.len()).flat_map(|a| (0..trials).map(move |t| (a, t))).collect();
    let results = jobs
        .par_iter()
        .map(|&(a, t)| -> Result<(f64, f64)> {
            let m = examples_for(alphas[a], n);
            let mut rng = seeds::rng(config.seed, &[a as u64, t as u64]);
            let teacher = arch.sample_weights(n, space, &mut rng);
            let mut patterns = vec![0.0; m * n];
            InputDistribution::Gaussian.fill(&mut rng, &mut patterns);
            let labels = patterns
                .chunks(n)
                .map(|x| arch.forward(n, &teacher, x))
                .collect::<Result<Vec<i8>>>()?;
            let (student, trace) = train_metropolis(arch, n, space, &patterns, &labels, config, &mut rng)?;
            let gen = monte_carlo_disagreement(arch, n, &teacher, &student, test_samples, &mut rng)?;
            let train = if m == 0 { 0.0 } else { *trace.last().expect("sweeps >= 1") as f64 / m as f64 };
            Ok((gen, train))
        })
        .collect::<Result<Vec<_>>>()?;
    results
        .chunks(trials)
        .zip(alphas)
        .map(|(chunk, &alpha)| {
            let eps: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let train: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            let (mean, se) = mean_stderr(&eps);
            let (train_mean, _) = mean_stderr(&train);
            Ok(EmpiricalCurvePoint {
                alpha: crate::LoadParameter::new(alpha)?,
                m: examples_for(alpha, n),
                mean_eps: crate::GenError::new(mean)?,
                stderr: se,
                mean_train_err: train_mean,
                trials,
                low_trials: trials < 2,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut v = vec![0.0; n];
        InputDistribution::Gaussian.fill(rng, &mut v);
        v
    }

    #[test]
    fn committee_examples() {
        let j = vec![1.0, -2.0, 0.5];
        let s = [0.3, 0.1, -1.0];
        let single = CommitteeMachine { weights: vec![j.clone()] };
        assert_eq!(committee_forward(&single, &s).unwrap(), sign(dot(&j, &s)));
        let same = CommitteeMachine { weights: vec![j.clone(), j.clone(), j.clone()] };
        assert_eq!(committee_forward(&same, &s).unwrap(), sign(dot(&j, &s)));
        // Hidden votes (+1, +1, -1) on s = e_1.
        let m = CommitteeMachine { weights: vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![-1.0, 0.0]] };
        assert_eq!(committee_forward(&m, &[1.0, 0.0]).unwrap(), 1);
        assert!(committee_forward(&m, &[1.0]).is_err());
    }

    #[test]
    fn parity_examples() {
        let m = ParityMachine { weights: vec![vec![1.0], vec![1.0]] };
        assert_eq!(parity_forward(&m, &[1.0, -1.0]).unwrap(), -1);
        assert_eq!(parity_forward(&m, &[-1.0, -1.0]).unwrap(), 1);
        assert!(parity_forward(&m, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn wedge_examples() {
        assert_eq!(wedge_output(-0.5, 1.0), 1);
        assert_eq!(wedge_output(0.5, 1.0), -1);
        assert_eq!(wedge_output(0.0, 1.0), -1);
        assert_eq!(wedge_output(-1.0, 1.0), 1);
        assert_eq!(wedge_output(1.0, 1.0), 1);
        assert_eq!(wedge_output(-1.5, 1.0), -1);
        assert_eq!(wedge_output(0.0, 0.0), 1);
        let m = ReversedWedgePerceptron { weights: vec![2.0, 0.0, 0.0, 0.0], gamma: 1.0 };
        // lambda = 2 * (-0.25) / sqrt(4) = -0.25.
        assert_eq!(reversed_wedge_forward(&m, &[-0.25, 9.0, 9.0, 9.0]).unwrap(), 1);
        assert!(reversed_wedge_forward(&ReversedWedgePerceptron { weights: vec![1.0], gamma: -1.0 }, &[1.0]).is_err());
    }

    #[test]
    fn wedge_changes_only_at_breakpoints() {
        let gamma = 0.7;
        let steps = 200_000;
        let mut changes = Vec::new();
        let mut prev = wedge_output(-3.0, gamma);
        for i in 1..=steps {
            let l = -3.0 + 6.0 * i as f64 / steps as f64;
            let o = wedge_output(l, gamma);
            if o != prev {
                changes.push(l);
            }
            prev = o;
        }
        assert_eq!(changes.len(), 3);
        for (c, b) in changes.iter().zip([-gamma, 0.0, gamma]) {
            assert!((c - b).abs() <= 6.0 / steps as f64 + 1e-12, "{c} vs {b}");
        }
    }

    #[test]
    fn reductions_to_perceptron() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 15;
        let j = gaussian(n, &mut rng);
        let com = CommitteeMachine { weights: vec![j.clone()] };
        let par = ParityMachine { weights: vec![j.clone()] };
        let wedge = ReversedWedgePerceptron { weights: j.clone(), gamma: 0.0 };
        for _ in 0..20_000 {
            let s = gaussian(n, &mut rng);
            let p = sign(dot(&j, &s));
            assert_eq!(committee_forward(&com, &s).unwrap(), p);
            assert_eq!(parity_forward(&par, &s).unwrap(), p);
            assert_eq!(reversed_wedge_forward(&wedge, &s).unwrap(), p);
        }
    }

    #[test]
    fn architecture_parsing_and_validation() {
        assert_eq!("committee:3".parse::<Architecture>().unwrap(), Architecture::Committee { k: 3 });
        assert_eq!("wedge:0.5".parse::<Architecture>().unwrap(), Architecture::ReversedWedge { gamma: 0.5 });
        assert!("tree:2".parse::<Architecture>().is_err());
        assert!("parity".parse::<Architecture>().is_err());
        assert!(Architecture::Parity { k: 4 }.validate(10).is_err());
        assert!(Architecture::Parity { k: 5 }.validate(10).is_ok());
        assert_eq!(Architecture::Committee { k: 3 }.weight_count(7), 21);
    }

    #[test]
    fn cached_chain_energy_matches_direct_count() {
        for (arch, space) in [
            (Architecture::Committee { k: 3 }, WeightSpace::IsingHypercube),
            (Architecture::Parity { k: 3 }, WeightSpace::Sphere),
            (Architecture::ReversedWedge { gamma: 0.8 }, WeightSpace::IsingHypercube),
            (Architecture::Committee { k: 3 }, WeightSpace::Sphere),
        ] {
            let n = 9;
            let mut rng = seeds::rng(5, &[]);
            let teacher = arch.sample_weights(n, space, &mut rng);
            let patterns = gaussian(40 * n, &mut rng);
            let labels: Vec<i8> = patterns.chunks(n).map(|x| arch.forward(n, &teacher, x).unwrap()).collect();
            let cfg = GibbsConfig::new(0.3, 30, 0, 1).unwrap();
            let (w, trace) = train_metropolis(&arch, n, space, &patterns, &labels, &cfg, &mut rng).unwrap();
            let direct = patterns
                .chunks(n)
                .zip(&labels)
                .filter(|(x, &l)| arch.forward(n, &w, x).unwrap() != l)
                .count();
            assert_eq!(*trace.last().unwrap(), direct, "{arch}");
        }
    }

    #[test]
    fn curve_requires_test_samples() {
        let cfg = GibbsConfig::new(0.0, 5, 0, 1).unwrap();
        let arch = Architecture::Parity { k: 1 };
        assert!(empirical_multilayer_curve(&arch, 4, WeightSpace::IsingHypercube, &[1.0], &cfg, 2, 100).is_err());
        let c = empirical_multilayer_curve(&arch, 4, WeightSpace::IsingHypercube, &[0.0, 4.0], &cfg, 4, 10_000).unwrap();
        assert!((c[0].mean_eps.value() - 0.5).abs() < 0.4);
        assert_eq!(c[1].m, 16);
    }

    proptest! {
        #[test]
        fn committee_permutation_invariant(seed in 0u64..1000, shift in 0usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights: Vec<Vec<f64>> = (0..5).map(|_| gaussian(6, &mut rng)).collect();
            let mut rotated = weights.clone();
            rotated.rotate_left(shift);
            rotated.swap(0, 4);
            let s = gaussian(6, &mut rng);
            prop_assert_eq!(
                committee_forward(&CommitteeMachine { weights }, &s).unwrap(),
                committee_forward(&CommitteeMachine { weights: rotated }, &s).unwrap()
            );
        }

        #[test]
        fn parity_flips(seed in 0u64..1000, a in 0usize..4, b in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights: Vec<Vec<f64>> = (0..4).map(|_| gaussian(3, &mut rng)).collect();
            let s = gaussian(12, &mut rng);
            let base = parity_forward(&ParityMachine { weights: weights.clone() }, &s).unwrap();
            let mut one = weights.clone();
            one[a].iter_mut().for_each(|x| *x = -*x);
            let flipped = parity_forward(&ParityMachine { weights: one.clone() }, &s).unwrap();
            prop_assert_eq!(flipped, -base);
            if a != b {
                one[b].iter_mut().for_each(|x| *x = -*x);
                prop_assert_eq!(parity_forward(&ParityMachine { weights: one }, &s).unwrap(), base);
            }
        }
    }
}
