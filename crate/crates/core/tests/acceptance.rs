//! Acceptance suite: runs the twelve criteria at their stated tolerances and
//! prints one PASS/FAIL line for each. Exits nonzero if any criterion fails.
//!
//! Run with `cargo test -p pnorm-erm --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use pnorm_erm::bounds::{realizable_sample_size, realizable_tail, threshold};
use pnorm_erm::constants::{
    estimate_constants, prop2_constants, ConstantOptions, CurvatureModel, MomentStream,
};
use pnorm_erm::experiments::{
    derivative_check_campaign, excess_risk_campaign, lower_tail_campaign, max_scaled_dot,
    orthogonal_complement, realizable_campaign, ConstantsSource, ExperimentConfig, ExperimentKind,
    ExperimentResult,
};
use pnorm_erm::rng::{derive_seed, seeded};
use pnorm_erm::selftest::run_selftest;
use pnorm_erm::solver::{fit, SolverOptions};
use pnorm_erm::{CovariateFamily, DistributionSpec, McOptions, NoiseFamily};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn constants_opts(samples: usize, seed: u64) -> ConstantsSource {
    ConstantsSource::Estimate {
        options: ConstantOptions {
            samples,
            seed,
            restarts: 16,
        },
    }
}

fn grid() -> Vec<usize> {
    (8..=13).map(|k| 1usize << k).collect()
}

fn gaussian5(noise: NoiseFamily) -> DistributionSpec {
    DistributionSpec::gaussian_identity(5, vec![1.0, -0.5, 0.25, 2.0, -1.0], noise)
}

/// Gaussian covariates with an intercept and noise `±(0.1 + |t_3|)`.
fn shifted_t_spec() -> DistributionSpec {
    DistributionSpec::gaussian_identity(
        4,
        vec![0.5, 1.0, -1.0, 0.5, 2.0],
        NoiseFamily::ShiftedStudentT {
            dof: 3.0,
            shift: 0.1,
            scale: 1.0,
        },
    )
    .with_intercept()
}

fn laplace_spec() -> DistributionSpec {
    gaussian5(NoiseFamily::Laplace { scale: 1.0 })
}

fn slope_line(res: &ExperimentResult) -> (f64, f64) {
    let s = res.slope.expect("slope over a grid");
    (s.value, s.std_err)
}

fn c1_scalar_suites() -> Outcome {
    let start = Instant::now();
    let rep = run_selftest(100_000, 1).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let detail = rep
        .suites
        .iter()
        .map(|s| format!("{}: {} violations / {}", s.name, s.violations, s.draws))
        .collect::<Vec<_>>()
        .join(", ");
    check(rep.passed && secs < 10.0, format!("{detail}; {secs:.2} s"))
}

fn c2_normal_equations() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(2);
    let mut worst = 0.0f64;
    for k in 0..50u64 {
        let d = rng.random_range(1..=10usize);
        let n = rng.random_range((d + 5)..=500usize);
        let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let spec = DistributionSpec::gaussian_identity(d, w, NoiseFamily::Gaussian { sd: 1.0 });
        let ds = spec
            .sample(n, derive_seed(2, &[k]))
            .map_err(|e| e.to_string())?;
        let sol = fit(&ds, 2.0, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let gram = ds.design.tr_mul(&ds.design);
        let rhs = ds.design.tr_mul(&ds.response);
        let normal = gram
            .cholesky()
            .ok_or("Gram matrix not positive definite")?
            .solve(&rhs);
        worst = worst.max((&sol.weights - normal).norm());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-8 && secs < 30.0,
        format!("max ℓ2 error {worst:.2e} over 50 datasets; {secs:.2} s"),
    )
}

fn c3_gaussian_rate() -> Outcome {
    let mut cfg = ExperimentConfig::new(
        gaussian5(NoiseFamily::Gaussian { sd: 1.0 }),
        2.0,
        grid(),
        500,
        0.1,
        3,
    );
    cfg.constants = constants_opts(200_000, 31);
    let res = excess_risk_campaign(&cfg).map_err(|e| e.to_string())?;
    let (slope, se) = slope_line(&res);
    let ratio = res.ratio_at_largest_n.unwrap_or(f64::NAN);
    let mean = res.per_n.last().map_or(f64::NAN, |s| s.mean_excess);
    check(
        (slope + 1.0).abs() <= 0.15 && (0.8..=1.25).contains(&ratio) && res.failures.is_empty(),
        format!(
            "slope {slope:.4} ± {se:.4}, mean excess {mean:.4e} at n = 8192, mean·2n/V₂ = {ratio:.4}, {} failed trials",
            res.failures.len()
        ),
    )
}

fn c4_rate_other_p() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (p, spec, seed) in [(1.5, shifted_t_spec(), 41u64), (3.0, laplace_spec(), 42)] {
        let mut cfg = ExperimentConfig::new(spec, p, grid(), 500, 0.1, seed);
        cfg.constants = constants_opts(200_000, seed + 100);
        let res = excess_risk_campaign(&cfg).map_err(|e| e.to_string())?;
        let (slope, se) = slope_line(&res);
        ok &= (slope + 1.0).abs() <= 0.2 && res.failures.is_empty();
        lines.push(format!(
            "p = {p}: slope {slope:.4} ± {se:.4}, ratio {:.3}, {} failed trials",
            res.ratio_at_largest_n.unwrap_or(f64::NAN),
            res.failures.len()
        ));
    }
    check(ok, lines.join("; "))
}

fn c5_coverage() -> Outcome {
    let delta = 0.1;
    let allowed = delta + 2.0 * (delta * (1.0 - delta) / 1000.0f64).sqrt();
    let mut lines = Vec::new();
    let mut ok = true;
    let cases = [
        (
            "p = 2 bound",
            2.0,
            gaussian5(NoiseFamily::Gaussian { sd: 1.0 }),
            51u64,
        ),
        ("p > 2 bound", 3.0, laplace_spec(), 52),
        ("p < 2 bound", 1.5, shifted_t_spec(), 53),
    ];
    for (name, p, spec, seed) in cases {
        let c = estimate_constants(
            &spec,
            p,
            &ConstantOptions {
                samples: 400_000,
                seed: seed + 100,
                restarts: 16,
            },
        )
        .map_err(|e| e.to_string())?;
        let n = threshold(c.sigma_p_sq, spec.dim(), delta).map_err(|e| e.to_string())? as usize;
        let mut cfg = ExperimentConfig::new(spec, p, vec![n], 1000, delta, seed);
        cfg.constants = ConstantsSource::Provided { estimates: c };
        let res = excess_risk_campaign(&cfg).map_err(|e| e.to_string())?;
        let s = &res.per_n[0];
        let frac = s.violation_fraction.unwrap_or(f64::NAN);
        ok &= s.threshold_met == Some(true) && frac <= allowed && res.failures.is_empty();
        lines.push(format!(
            "{name}: n = {n}, violations {frac:.4} ≤ {allowed:.4}, bound/mean {:.3e}",
            s.bound_to_mean_ratio.unwrap_or(f64::NAN)
        ));
    }
    check(ok, lines.join("; "))
}

fn c6_realizable() -> Outcome {
    let spec = DistributionSpec {
        covariates: CovariateFamily::Discrete {
            atoms: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            probs: vec![0.5, 0.5],
        },
        intercept: false,
        target_weights: vec![1.5, -0.5],
        noise: NoiseFamily::None,
    };
    let trials = 10_000;
    let mut cfg = ExperimentConfig::new(spec.clone(), 1.5, (2..=12).collect(), trials, 0.1, 6);
    cfg.kind = ExperimentKind::Realizable;
    cfg.mc.samples = 1000;
    let res = realizable_campaign(&cfg).map_err(|e| e.to_string())?;
    let mut ok = res.passed;
    let mut worst_gap = f64::NEG_INFINITY;
    for s in &res.per_n {
        let tail = realizable_tail(s.n as u64, 2, 0.5).map_err(|e| e.to_string())?;
        let allowed = tail + 2.0 * (tail * (1.0 - tail) / trials as f64).sqrt();
        let frac = s.violation_fraction.unwrap_or(f64::NAN);
        ok &= frac <= allowed;
        worst_gap = worst_gap.max(frac - allowed);
    }
    let (n_star, _) = realizable_sample_size(2, cfg.delta, 0.5).map_err(|e| e.to_string())?;
    let mut at = cfg.clone();
    at.n_grid = vec![n_star as usize];
    at.seed = 61;
    let res_star = realizable_campaign(&at).map_err(|e| e.to_string())?;
    let recovered = res_star
        .records
        .iter()
        .filter(|r| r.recovered == Some(true))
        .count() as f64
        / trials as f64;
    ok &= recovered >= 1.0 - cfg.delta;
    check(
        ok,
        format!(
            "max(failure rate − allowed) over n = 2..12: {worst_gap:.4}; recovery {recovered:.4} at n = {n_star}"
        ),
    )
}

fn c7_lower_tail() -> Outcome {
    let spec = gaussian5(NoiseFamily::Gaussian { sd: 1.0 });
    let c = estimate_constants(
        &spec,
        2.0,
        &ConstantOptions {
            samples: 400_000,
            seed: 71,
            restarts: 16,
        },
    )
    .map_err(|e| e.to_string())?;
    let sigma_ok = (c.sigma_p_sq / 3.0 - 1.0).abs() <= 0.05;
    let n = threshold(c.sigma_p_sq, 5, 0.05).map_err(|e| e.to_string())? as usize;
    // At the threshold for δ the factor with confidence δ/2 equals ½.
    let rep =
        lower_tail_campaign(&spec, c.sigma_p(), 0.025, n, 500, 7).map_err(|e| e.to_string())?;
    let factor = rep.trials[0].bound;
    check(
        sigma_ok && rep.violation_fraction <= rep.allowed_fraction,
        format!(
            "σ² = {:.4}, n = {n}, factor {factor:.4}, violations {:.4} ≤ {:.4}",
            c.sigma_p_sq, rep.violation_fraction, rep.allowed_fraction
        ),
    )
}

/// Brute-force `σ_p²` over a Fibonacci grid on the unit sphere in whitened
/// coordinates, `d = 3`.
fn sigma_brute_force(stream: &MomentStream, p: f64, chol: &DMatrix<f64>, points: usize) -> f64 {
    let z = chol
        .solve_lower_triangular(&stream.x.transpose())
        .expect("nonsingular");
    // ⟨v, Z⟩² = |r*|^{p-2} ⟨v, L⁻¹X⟩².
    let weights: Vec<f64> = stream.r.iter().map(|r| r.abs().powf(p - 2.0)).collect();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut best = 0.0f64;
    for k in 0..points {
        let y = 1.0 - 2.0 * (k as f64 + 0.5) / points as f64;
        let rad = (1.0 - y * y).sqrt();
        let v = DVector::from_vec(vec![
            rad * (golden * k as f64).cos(),
            y,
            rad * (golden * k as f64).sin(),
        ]);
        let a = z.tr_mul(&v);
        let (mut m2, mut m4) = (0.0, 0.0);
        for (ai, wi) in a.iter().zip(&weights) {
            let t = wi * ai * ai;
            m2 += t;
            m4 += t * t;
        }
        let n = weights.len() as f64;
        best = best.max((m4 / n) / (m2 / n).powi(2));
    }
    best
}

fn c8_constants() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;

    let gauss = gaussian5(NoiseFamily::Gaussian { sd: 1.0 });
    let stream = MomentStream::new(&gauss, 200_000, 81).map_err(|e| e.to_string())?;
    let model = CurvatureModel::new(&stream, 2.0).map_err(|e| e.to_string())?;
    let c_lp = model.c_lp(16, 82).value;
    ok &= (c_lp - 1.0).abs() <= 0.02;
    lines.push(format!("c_lp(p = 2) = {c_lp:.6}"));

    let correlated = DistributionSpec {
        covariates: CovariateFamily::Gaussian {
            covariance: vec![
                vec![2.0, 0.6, 0.0],
                vec![0.6, 1.0, -0.3],
                vec![0.0, -0.3, 0.5],
            ],
        },
        intercept: false,
        target_weights: vec![1.0, -1.0, 0.5],
        noise: NoiseFamily::Laplace { scale: 1.0 },
    };
    let mut worst_c = 0.0f64;
    for (p, seed) in [(3.0, 83u64), (4.0, 84)] {
        let stream = MomentStream::new(&correlated, 100_000, seed).map_err(|e| e.to_string())?;
        let model = CurvatureModel::new(&stream, p).map_err(|e| e.to_string())?;
        let exact = model.c_l2().map_err(|e| e.to_string())?;
        let search = model.c_l2_by_restarts(32, seed + 1).value;
        worst_c = worst_c.max((exact - search).abs() / exact);
    }
    ok &= worst_c <= 1e-6;
    lines.push(format!("c_l2 eigen vs restarts rel. diff {worst_c:.2e}"));

    let mut worst_s = 0.0f64;
    for (p, seed) in [(1.5, 85u64), (2.0, 86), (3.0, 87)] {
        let spec = if p < 2.0 {
            DistributionSpec {
                noise: NoiseFamily::ShiftedStudentT {
                    dof: 5.0,
                    shift: 0.2,
                    scale: 1.0,
                },
                ..correlated.clone()
            }
        } else {
            correlated.clone()
        };
        let stream = MomentStream::new(&spec, 20_000, seed).map_err(|e| e.to_string())?;
        let model = CurvatureModel::new(&stream, p).map_err(|e| e.to_string())?;
        let est = model.sigma_p_sq(32, seed + 1).value;
        let brute = sigma_brute_force(&stream, p, &model.chol, 40_000);
        worst_s = worst_s.max((est.sqrt() - brute.sqrt()).abs() / brute.sqrt());
    }
    ok &= worst_s <= 0.02;
    lines.push(format!("σ_p vs sphere grid rel. diff {worst_s:.2e}"));
    check(ok, lines.join("; "))
}

fn c9_truncation() -> Outcome {
    let (eps, t_star) = prop2_constants(2.0, 4, 1.0, 1.0, 1.5).map_err(|e| e.to_string())?;
    let e_err = (eps / 2f64.powi(-10) - 1.0).abs();
    let t_err = (t_star / 2.0 - 1.0).abs();
    check(
        e_err <= 1e-12 && t_err <= 1e-12,
        format!("ε = {eps:e} (rel. err {e_err:.1e}), T* = {t_star} (rel. err {t_err:.1e})"),
    )
}

fn c10_orthogonal() -> Outcome {
    let mut rng = seeded(10);
    let mut worst = 0.0f64;
    let mut smallest = f64::INFINITY;
    for _ in 0..1000 {
        let d = rng.random_range(2..=20usize);
        let m = rng.random_range(1..d);
        let points: Vec<DVector<f64>> = (0..m)
            .map(|_| DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let basis: Vec<DVector<f64>> = (0..d)
            .map(|i| DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 }))
            .collect();
        let v = orthogonal_complement(&points, &basis).map_err(|e| e.to_string())?;
        worst = worst.max(max_scaled_dot(&points, &v));
        smallest = smallest.min(v.norm());
    }
    check(
        worst <= 1e-10 && smallest > 0.0,
        format!("max scaled dot {worst:.2e}, min norm {smallest:.3}"),
    )
}

fn c11_derivatives() -> Outcome {
    let mc = McOptions {
        samples: 100_000,
        seed: 0,
    };
    let mut lines = Vec::new();
    let mut ok = true;
    let cases = [
        (1.5, shifted_t_spec()),
        (2.0, gaussian5(NoiseFamily::Gaussian { sd: 1.0 })),
        (3.0, laplace_spec()),
    ];
    for (p, spec) in cases {
        let rep = derivative_check_campaign(&spec, p, 10, &mc, 11).map_err(|e| e.to_string())?;
        ok &= rep.passed;
        lines.push(format!(
            "p = {p}: grad {:.1e}, Hessian {:.1e}",
            rep.max_grad_rel_err, rep.max_hess_rel_err
        ));
    }
    check(ok, lines.join("; "))
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool")
        .install(f)
}

fn c12_determinism() -> Outcome {
    let mut cfg = ExperimentConfig::new(laplace_spec(), 3.0, vec![200, 400], 40, 0.1, 12);
    cfg.constants = constants_opts(50_000, 121);
    cfg.mc.samples = 20_000;
    let mut lower = cfg.clone();
    lower.kind = ExperimentKind::LowerTail;
    lower.n_grid = vec![500];
    let run = |c: &ExperimentConfig| pnorm_erm::run_experiment(c).map(|r| r.trials_csv());
    let mut identical = true;
    for c in [&cfg, &lower] {
        let one = with_workers(1, || run(c)).map_err(|e| e.to_string())?;
        let four = with_workers(4, || run(c)).map_err(|e| e.to_string())?;
        let again = with_workers(3, || run(c)).map_err(|e| e.to_string())?;
        identical &= one == four && four == again && !one.is_empty();
    }
    check(
        identical,
        "excess-risk and lower-tail CSVs identical for 1, 3 and 4 workers".into(),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1 scalar inequality suites", c1_scalar_suites),
        ("2 p = 2 fit equals normal equations", c2_normal_equations),
        ("3 Gaussian rate reproduction", c3_gaussian_rate),
        ("4 rate slope for p = 1.5 and p = 3", c4_rate_other_p),
        ("5 bound coverage", c5_coverage),
        ("6 realizable recovery", c6_realizable),
        ("7 lower tail of the second moment", c7_lower_tail),
        ("8 constant estimators", c8_constants),
        ("9 truncation constants", c9_truncation),
        ("10 orthogonal construction", c10_orthogonal),
        ("11 derivative checks", c11_derivatives),
        ("12 determinism across worker counts", c12_determinism),
    ];
    // Numeric arguments select criteria; cargo's own flags are ignored.
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let total = if only.is_empty() {
        criteria.len()
    } else {
        only.len()
    };
    let mut failed = 0;
    for (k, (name, f)) in criteria.into_iter().enumerate() {
        if !only.is_empty() && !only.contains(&(k + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {} of {total} criteria passed", total - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
