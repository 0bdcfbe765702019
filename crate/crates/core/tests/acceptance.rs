//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Criteria 4-10 are rerun under a different
//! thread budget and their serialized outputs compared byte for byte.

use std::f64::consts::{E, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use smcurve::bounds::{pac_consistent_error_bound, refined_spectrum_bound, ErrorSpectrum, PacParams};
use smcurve::geometry::{dot, sign};
use smcurve::gibbs_sim::{
    empirical_learning_curve, enumerate_version_space, generate_instance, ising_level_error, mask_to_weights,
    GibbsConfig, Sampler, Schedule, WeightSpace,
};
use smcurve::linear_reg::{numerical_rank, regularization_path, ridge_solve, spectral_norm, tsvd_solve, Knob, LeastSquaresProblem};
use smcurve::multilayer::{
    committee_forward, parity_forward, reversed_wedge_forward, CommitteeMachine, ParityMachine, ReversedWedgePerceptron,
};
use smcurve::solvers::{
    critical_load, ising_first_order_condition, learning_curve, rightmost_crossing, CurveMethod, LearningCurve,
    TransitionCriterion, ISING_CONDITION_MAX, JUMP_THRESHOLD,
};
use smcurve::vsdl::{trajectory_experiment, PostStop, TrajectorySpec};
use smcurve::{EntropyModel, LoadParameter};

struct Outcome {
    pass: bool,
    detail: String,
    /// Serialized result, compared across thread budgets.
    artifact: String,
}

fn outcome(pass: bool, detail: String, artifact: String) -> Outcome {
    Outcome { pass, detail, artifact }
}

fn alpha(a: f64) -> LoadParameter {
    LoadParameter::new(a).unwrap()
}

fn c1_continuous_bound() -> Outcome {
    let mut worst = 0.0f64;
    for a in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 100.0] {
        let got = rightmost_crossing(&EntropyModel::ContinuousBoundOne, alpha(a), 1e-13).unwrap().eps_star.value();
        let closed = 1.0 - (-1.0 / a).exp();
        worst = worst.max((got - closed).abs());
    }
    let e100 = rightmost_crossing(&EntropyModel::ContinuousBoundOne, alpha(100.0), 1e-13).unwrap().eps_star.value();
    let scaled = 100.0 * e100;
    let pass = worst < 1e-8 && (0.95..=1.0).contains(&scaled);
    outcome(pass, format!("max |eps* - (1 - e^(-1/alpha))| = {worst:.2e}; 100 eps*(100) = {scaled:.6}"), String::new())
}

/// Grid-scan oracle for the Ising transition: the first alpha on a
/// 10^4-point grid over [0.1, 10] at which no eps in (0, 1) on a 10^4-point
/// grid has `H(sin^2(pi eps / 2)) + alpha ln(1 - eps) >= 0` (crossing) or
/// `> 0 = phi(0)` (annealed maximum).
fn ising_alpha_c_oracle(strict: bool) -> f64 {
    let k = 10_000;
    let eps: Vec<f64> = (1..k).map(|i| i as f64 / k as f64).collect();
    let h: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let x = (0.5 * PI * e).sin().powi(2);
            -x * x.ln() - (1.0 - x) * (1.0 - x).ln()
        })
        .collect();
    let l: Vec<f64> = eps.iter().map(|&e| (1.0 - e).ln()).collect();
    let grid: Vec<f64> = (0..k).map(|i| 0.1 + 9.9 * i as f64 / (k - 1) as f64).collect();
    let survives = |a: f64| {
        h.iter().zip(&l).any(|(&h, &l)| {
            let phi = h + a * l;
            if strict {
                phi > 0.0
            } else {
                phi >= 0.0
            }
        })
    };
    let i = grid.iter().position(|&a| !survives(a)).expect("transition inside [0.1, 10]");
    0.5 * (grid[i - 1] + grid[i])
}

fn check_ising_curve(c: &LearningCurve) -> Result<f64, String> {
    if !c.gaps.is_empty() {
        return Err(format!("{} gaps", c.gaps.len()));
    }
    if let Some(w) = c.points.windows(2).find(|w| w[1].eps.value() > w[0].eps.value() + 1e-9) {
        return Err(format!("increase at alpha {}", w[1].alpha));
    }
    if c.jumps.len() != 1 {
        return Err(format!("{} jumps", c.jumps.len()));
    }
    let j = c.jumps[0];
    if c.points.iter().filter(|p| p.alpha >= j.alpha_after).any(|p| p.eps.value() != 0.0) {
        return Err("non-zero eps after the jump".into());
    }
    if j.eps_before - j.eps_after <= JUMP_THRESHOLD {
        return Err("jump too small".into());
    }
    Ok(j.alpha_c())
}

fn c2_ising_transition() -> Outcome {
    let alphas: Vec<f64> = (0..=990).map(|i| 0.1 + 0.01 * i as f64).collect();
    let mut pass = true;
    let mut notes = Vec::new();
    for (method, crit, strict) in [
        (CurveMethod::RightmostCrossing, TransitionCriterion::CrossingVanishes, false),
        (CurveMethod::AnnealedMax, TransitionCriterion::InteriorMaxLosesToBoundary, true),
    ] {
        let curve = learning_curve(&EntropyModel::IsingExact, method, &alphas).unwrap();
        let shape = check_ising_curve(&curve);
        let bisected = critical_load(&EntropyModel::IsingExact, crit, 1e-7).unwrap().alpha_c.value();
        let oracle = ising_alpha_c_oracle(strict);
        let ok = shape.is_ok() && (bisected - oracle).abs() < 1e-3;
        pass &= ok;
        notes.push(format!(
            "{method}: shape {}, alpha_c {bisected:.6} vs oracle {oracle:.6}",
            match shape {
                Ok(_) => "ok".to_string(),
                Err(e) => e,
            }
        ));
    }
    outcome(pass, notes.join("; "), String::new())
}

fn c3_condition_boundary() -> Outcome {
    // Independent check of the threshold itself: dense maximisation.
    let dense_max = (1..1_000_000)
        .map(|i| {
            let e = i as f64 / 1e6;
            -PI * PI * e * e.ln()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = PI * PI / E;
    let mut grid: Vec<f64> = (0..999).map(|i| 0.001 + 7.26 * i as f64 / 998.0).collect();
    grid.push(threshold);
    let mut wrong = 0;
    let mut residual = 0.0f64;
    for &a in &grid {
        let root = ising_first_order_condition(alpha(a));
        if root.is_some() != (a <= threshold) {
            wrong += 1;
        }
        if let Some(r) = root {
            let r = r.value();
            residual = residual.max((-PI * PI * r * r.ln() - a).abs());
            if r < 1.0 / E - 1e-12 {
                wrong += 1;
            }
        }
    }
    let pass = wrong == 0 && (dense_max - threshold).abs() < 1e-9 && ISING_CONDITION_MAX == threshold && residual < 1e-8;
    outcome(
        pass,
        format!("{wrong} misclassified of {}; pi^2/e = {threshold:.6}, dense max {dense_max:.9}; max residual {residual:.1e}", grid.len()),
        String::new(),
    )
}

fn c4_survival() -> Outcome {
    let (n, m, instances) = (10usize, 8usize, 2000u64);
    let mut survived = vec![0u64; n + 1];
    let mut mismatch = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for s in 0..instances {
        let inst = generate_instance(n, m, WeightSpace::IsingHypercube, 40_000 + s).unwrap();
        let vs = enumerate_version_space(&inst).unwrap();
        // One student per level per instance keeps the draws independent.
        for d in 0..=n {
            let mut w = inst.teacher().to_vec();
            for i in rand::seq::index::sample(&mut rng, n, d).into_vec() {
                w[i] = -w[i];
            }
            let alive = inst.training_errors(&w) == 0;
            let mask = w.iter().enumerate().fold(0u32, |acc, (i, &x)| if x < 0.0 { acc | 1 << i } else { acc });
            if alive != vs.members.contains(&mask) || mask_to_weights(mask, n) != w {
                mismatch += 1;
            }
            survived[d] += alive as u64;
        }
    }
    let mut pass = mismatch == 0;
    let mut worst = 0.0f64;
    let mut tested = 0;
    for d in 0..=n {
        let p = (1.0 - ising_level_error(d, n).value()).powi(m as i32);
        let expect = p * instances as f64;
        if expect < 5.0 {
            continue;
        }
        tested += 1;
        let sd = (instances as f64 * p * (1.0 - p)).sqrt();
        let dev = (survived[d] as f64 - expect).abs();
        if dev > 4.0 * sd {
            pass = false;
        }
        if sd > 0.0 {
            worst = worst.max(dev / sd);
        }
    }
    outcome(
        pass,
        format!("{tested} levels tested, worst deviation {worst:.2} sd, {mismatch} enumeration mismatches"),
        format!("{survived:?}"),
    )
}

fn c5_pac() -> Outcome {
    let (n, m, delta, draws) = (10usize, 50u64, 0.05, 1000u64);
    let params = PacParams::new(delta, m).unwrap();
    let spectrum = ErrorSpectrum::ising_perceptron(n as u32).unwrap();
    let refined = refined_spectrum_bound(&spectrum, params).unwrap();
    let pac = pac_consistent_error_bound(spectrum.total(), params).unwrap();
    let mut violations = 0u64;
    let mut dominated = true;
    for s in 0..draws {
        let inst = generate_instance(n, m as usize, WeightSpace::IsingHypercube, 50_000 + s).unwrap();
        let vs = enumerate_version_space(&inst).unwrap();
        let worst = vs
            .level_counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(d, _)| ising_level_error(d, n).value())
            .fold(0.0, f64::max);
        violations += (worst > refined.bound) as u64;
        dominated &= refined.bound <= pac.bound;
    }
    let rate = violations as f64 / draws as f64;
    let limit = delta + 3.0 * (delta * (1.0 - delta) / draws as f64).sqrt();
    outcome(
        rate <= limit && dominated,
        format!("refined bound {:.4} vs PAC {:.4}; violation rate {rate:.4} (limit {limit:.4})", refined.bound, pac.bound),
        format!("{violations} {}", refined.bound),
    )
}

fn c6_exact_vs_metropolis() -> Outcome {
    let (n, a, tau, trials) = (10usize, 2.0, 0.05, 200usize);
    let exact_cfg = GibbsConfig::new(0.0, 1, 0, 606).unwrap();
    let exact = empirical_learning_curve(n, WeightSpace::IsingHypercube, Sampler::Exact, &[a], &exact_cfg, trials).unwrap();
    let mc_cfg = GibbsConfig::new(tau, 1100, 1000, 607)
        .unwrap()
        .with_schedule(Schedule::AnnealedBurnIn { start: 3.0 })
        .unwrap();
    let mc = empirical_learning_curve(n, WeightSpace::IsingHypercube, Sampler::Metropolis, &[a], &mc_cfg, trials).unwrap();
    let (e, m) = (exact[0], mc[0]);
    let se = e.stderr.hypot(m.stderr);
    let diff = (e.mean_eps.value() - m.mean_eps.value()).abs();
    outcome(
        diff <= 3.0 * se,
        format!("exact {:.4} +- {:.4}, Metropolis {:.4} +- {:.4}; |diff| = {:.2} se", e.mean_eps.value(), e.stderr, m.mean_eps.value(), m.stderr, diff / se),
        serde_json::to_string(&(exact, mc)).unwrap(),
    )
}

fn c7_exact_curve() -> Outcome {
    let alphas = [0.5, 1.0, 2.0, 4.0, 6.0];
    let cfg = GibbsConfig::new(0.0, 1, 0, 707).unwrap();
    let curve = empirical_learning_curve(12, WeightSpace::IsingHypercube, Sampler::Exact, &alphas, &cfg, 400).unwrap();
    let mut pass = true;
    for w in curve.windows(2) {
        let rise = w[1].mean_eps.value() - w[0].mean_eps.value();
        if rise > 2.0 * w[0].stderr.hypot(w[1].stderr) {
            pass = false;
        }
    }
    let means: Vec<String> = curve.iter().map(|p| format!("{:.4}", p.mean_eps.value())).collect();
    outcome(pass, format!("mean eps {}", means.join(", ")), serde_json::to_string(&curve).unwrap())
}

fn c8_reductions() -> Outcome {
    let n = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let j: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let committee = CommitteeMachine { weights: vec![j.clone()] };
    let parity = ParityMachine { weights: vec![j.clone()] };
    let wedge = ReversedWedgePerceptron { weights: j.clone(), gamma: 0.0 };
    let mut mismatches = [0usize; 3];
    let mut bits = String::with_capacity(100_000);
    for _ in 0..100_000 {
        let s: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let p = sign(dot(&j, &s));
        mismatches[0] += (parity_forward(&parity, &s).unwrap() != p) as usize;
        mismatches[1] += (committee_forward(&committee, &s).unwrap() != p) as usize;
        mismatches[2] += (reversed_wedge_forward(&wedge, &s).unwrap() != p) as usize;
        bits.push(if p > 0 { '1' } else { '0' });
    }
    outcome(
        mismatches == [0, 0, 0],
        format!("mismatches parity/committee/wedge = {mismatches:?} on 100000 inputs"),
        bits,
    )
}

fn c9_linear() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let lambdas: Vec<f64> = (0..100).map(|i| 1e-2 * 10f64.powf(5.0 * i as f64 / 99.0)).collect();
    let (mut norm_viol, mut resid_viol) = (0, 0);
    let mut worst_gap = 0.0f64;
    let mut artifact = String::new();
    for _ in 0..100 {
        let a = DMatrix::from_fn(20, 10, |_, _| rng.sample(StandardNormal));
        let b = DVector::from_fn(20, |_, _| rng.sample(StandardNormal));
        let p = LeastSquaresProblem::new(a, b).unwrap();
        let path = regularization_path(&p, Knob::Lambda, &lambdas).unwrap();
        norm_viol += path.solution_norms.windows(2).filter(|w| w[1] > w[0]).count();
        resid_viol += path.train_residuals.windows(2).filter(|w| w[1] < w[0]).count();
        let lambda = 1e-8 * spectral_norm(&p).unwrap();
        let ridge = ridge_solve(&p, lambda).unwrap();
        let tsvd = tsvd_solve(&p, numerical_rank(&p).unwrap()).unwrap().x;
        worst_gap = worst_gap.max((ridge - tsvd).amax());
        artifact.push_str(&format!("{:?}\n", path.solution_norms));
    }
    outcome(
        norm_viol == 0 && resid_viol == 0 && worst_gap < 1e-6,
        format!("norm violations {norm_viol}, residual violations {resid_viol}; max |ridge - tsvd| {worst_gap:.1e}"),
        artifact,
    )
}

fn c10_trajectory() -> Outcome {
    let spec = TrajectorySpec {
        n: 12,
        m: 60,
        space: WeightSpace::IsingHypercube,
        noise_fraction: 0.4,
        t_star_pre: 2000,
        t_star_post: PostStop::Validated(vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000]),
        temp_scale: 1.0,
        trials: 200,
        seed: 1010,
    };
    let r = trajectory_experiment(&spec).unwrap();
    let (a, b, c) = (r.a, r.b, r.c);
    let overfits = b.train_err < 0.05;
    let b_worse = b.gen_err - a.gen_err >= 3.0 * a.stderr.hypot(b.stderr);
    let c_better = b.gen_err - c.gen_err >= 3.0 * b.stderr.hypot(c.stderr);
    outcome(
        overfits && b_worse && c_better,
        format!(
            "A gen {:.4}; B train {:.4} (< 0.05: {overfits}), gen {:.4} (B > A by 3 se: {b_worse}); C t*={} gen {:.4} (C < B by 3 se: {c_better})",
            a.gen_err, b.train_err, b.gen_err, c.t_star, c.gen_err
        ),
        serde_json::to_string(&r).unwrap(),
    )
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn run_guarded(c: &Criterion) -> (Outcome, Duration) {
    let start = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"), String::new())
    });
    (out, start.elapsed())
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "continuous-bound learning curve", limit: Duration::from_secs(1), run: c1_continuous_bound },
        Criterion { id: 2, name: "Ising first-order transition", limit: Duration::from_secs(10), run: c2_ising_transition },
        Criterion { id: 3, name: "small-eps condition solvability", limit: Duration::from_secs(1), run: c3_condition_boundary },
        Criterion { id: 4, name: "survival law", limit: Duration::from_secs(120), run: c4_survival },
        Criterion { id: 5, name: "PAC validity and dominance", limit: Duration::from_secs(120), run: c5_pac },
        Criterion { id: 6, name: "exact vs Metropolis", limit: Duration::from_secs(120), run: c6_exact_vs_metropolis },
        Criterion { id: 7, name: "empirical Ising curve", limit: Duration::from_secs(300), run: c7_exact_curve },
        Criterion { id: 8, name: "architectural reductions", limit: Duration::from_secs(10), run: c8_reductions },
        Criterion { id: 9, name: "linear monotone knob", limit: Duration::from_secs(30), run: c9_linear },
        Criterion { id: 10, name: "noise / early-stopping trajectory", limit: Duration::from_secs(600), run: c10_trajectory },
    ];

    let threads = std::thread::available_parallelism().map_or(2, |n| n.get()).max(2);
    let pool = |t: usize| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
    let main_pool = pool(threads);

    let mut failed = Vec::new();
    let mut artifacts = Vec::new();
    for c in &criteria {
        let (out, elapsed) = main_pool.install(|| run_guarded(c));
        let in_time = elapsed <= c.limit;
        let pass = out.pass && in_time;
        println!(
            "criterion {:>2} {}: {} ({}; {:.2}s{})",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            if in_time { String::new() } else { format!(", over the {}s limit", c.limit.as_secs()) }
        );
        if !pass {
            failed.push(c.id);
        }
        artifacts.push(out.artifact);
    }

    let single = pool(1);
    let mut differing = Vec::new();
    for (c, first) in criteria.iter().zip(&artifacts).filter(|(c, _)| (4..=10).contains(&c.id)) {
        let (again, _) = single.install(|| run_guarded(c));
        if again.artifact.is_empty() || &again.artifact != first {
            differing.push(c.id);
        }
    }
    let pass = differing.is_empty();
    println!(
        "criterion 11 determinism across thread budgets ({threads} vs 1): {} ({})",
        if pass { "PASS" } else { "FAIL" },
        if pass { "criteria 4-10 outputs byte-identical".to_string() } else { format!("outputs differ for {differing:?}") }
    );
    if !pass {
        failed.push(11);
    }

    if failed.is_empty() {
        println!("acceptance: all 11 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
