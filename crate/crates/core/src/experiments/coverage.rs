//! Coverage checks for the probabilistic inequalities behind the bounds: the
//! lower tail of the empirical second moment, the empirical curvature, the
//! `γ_p` lower bound and the Markov bound on the gradient at `w*_p`.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{binomial_slack, curvature_factor, reference_curvature, reference_rate};
use crate::bounds::{lower_tail_factor, markov_grad_bound, threshold};
use crate::constants::{check_hypotheses, ConstantEstimates, MomentStream};
use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::linalg::{self, min_eigenvalue};
use crate::loss::LossKernel;
use crate::risk::McEstimate;
use crate::rng::{derive_seed, seeded};
use crate::solver::{empirical_grad, empirical_hessian};

/// Magnitudes of the `γ_p` probes, in units of `ε`.
pub const GAMMA_SCALES: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTrial {
    pub trial: usize,
    pub statistic: f64,
    pub bound: f64,
    pub violated: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub check: String,
    pub n: usize,
    pub delta: f64,
    /// Probability with which the inequality may fail.
    pub nominal_rate: f64,
    pub violation_fraction: f64,
    /// `nominal + 2 sqrt(nominal (1 - nominal) / trials)`.
    pub allowed_fraction: f64,
    /// `(trial, probe)` pairs violating the bound, for the `γ_p` check.
    pub pair_violation_fraction: Option<f64>,
    pub statistic_mean: f64,
    pub statistic_sq_mean: McEstimate,
    /// Expected value of `statistic_sq_mean` when known.
    pub reference_sq_mean: Option<f64>,
    pub threshold_n: Option<u64>,
    pub threshold_met: Option<bool>,
    /// False only when the threshold holds and violations exceed the slack.
    pub passed: bool,
    pub trials: Vec<CoverageTrial>,
}

/// `(statistic, bound, violated)` for one trial; an `Err` aborts the campaign.
type TrialFn<'a> = dyn Fn(usize, u64) -> Result<(f64, f64, bool)> + Sync + 'a;

#[allow(clippy::too_many_arguments)]
fn run(
    check: &str,
    n: usize,
    delta: f64,
    nominal: f64,
    trials: usize,
    seed: u64,
    threshold_n: Option<u64>,
    f: &TrialFn<'_>,
) -> Result<CoverageReport> {
    if trials == 0 {
        return Err(Error::Domain("trials must be at least 1".into()));
    }
    let rows: Vec<CoverageTrial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = derive_seed(seed, &[n as u64, t as u64]);
            f(t, s).map(|(statistic, bound, violated)| CoverageTrial {
                trial: t,
                statistic,
                bound,
                violated,
                seed: s,
            })
        })
        .collect::<Result<_>>()?;
    let violations = rows.iter().filter(|r| r.violated).count();
    let violation_fraction = violations as f64 / trials as f64;
    let allowed_fraction = nominal + binomial_slack(nominal, trials);
    let stats: Vec<f64> = rows.iter().map(|r| r.statistic).collect();
    let sq: Vec<f64> = stats.iter().map(|v| v * v).collect();
    let threshold_met = threshold_n.map(|t| n as u64 >= t);
    Ok(CoverageReport {
        check: check.into(),
        n,
        delta,
        nominal_rate: nominal,
        violation_fraction,
        allowed_fraction,
        pair_violation_fraction: None,
        statistic_mean: stats.iter().sum::<f64>() / trials as f64,
        statistic_sq_mean: McEstimate::from_values(&sq),
        reference_sq_mean: None,
        threshold_n,
        threshold_met,
        passed: threshold_met == Some(false) || violation_fraction <= allowed_fraction,
        trials: rows,
    })
}

fn require_fourth_moments(spec: &DistributionSpec) -> Result<()> {
    if !spec.moment_exists(4.0).coordinates.iter().all(|&b| b) {
        return Err(Error::MomentViolation(
            "covariates need finite fourth moments".into(),
        ));
    }
    Ok(())
}

/// Per trial, the smallest eigenvalue of the empirical second moment in
/// coordinates whitened by `E[X Xᵀ]`, against `1 - 7σ sqrt((d + 2 ln(2/δ))/n)`.
/// The bound may fail with probability `δ`.
pub fn lower_tail_campaign(
    spec: &DistributionSpec,
    sigma: f64,
    delta: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<CoverageReport> {
    require_fourth_moments(spec)?;
    let d = spec.dim();
    let sigma2 = match spec.second_moment_matrix() {
        Some(s) => s,
        None => MomentStream::new(spec, 1_000_000, derive_seed(seed, &[0x5ec]))?.second_moment(),
    };
    let l = linalg::checked_cholesky(&sigma2, crate::constants::MAX_CONDITION, "E[X Xᵀ]")?;
    let bound = lower_tail_factor(sigma, d, delta, n as f64)?;
    run(
        "lower_tail",
        n,
        delta,
        delta,
        trials,
        seed,
        None,
        &|_, s| {
            let ds = spec.sample(n, derive_seed(s, &[1]))?;
            let emp = ds.design.tr_mul(&ds.design) / n as f64;
            let stat = min_eigenvalue(&linalg::whiten(&emp, &l));
            Ok((stat, bound, stat < bound))
        },
    )
}

/// Per trial, the smallest eigenvalue of `H_p^{-1/2} H_{p,n}(w*_p) H_p^{-1/2}`
/// against `½`, which may fail with probability `δ/2` once `n` reaches the
/// threshold.
pub fn curvature_campaign(
    spec: &DistributionSpec,
    p: f64,
    constants: &ConstantEstimates,
    n: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<CoverageReport> {
    check_hypotheses(spec, p)?;
    let h = reference_curvature(spec, p, constants);
    let l = curvature_factor(&h)?;
    let w_star = spec.target();
    let threshold_n = threshold(constants.sigma_p_sq, spec.dim(), delta).ok();
    run(
        "curvature",
        n,
        delta,
        delta / 2.0,
        trials,
        seed,
        threshold_n,
        &|_, s| {
            let ds = spec.sample(n, derive_seed(s, &[1]))?;
            let hn = empirical_hessian(&ds, p, &w_star)?;
            let stat = min_eigenvalue(&linalg::whiten(&hn, &l));
            Ok((stat, 0.5, stat < 0.5))
        },
    )
}

/// `⅛ min{a², ε^{2-p} a^p}` with `a = ‖Δ‖_{H_p}`.
pub fn gamma_lower_rhs(a: f64, epsilon: f64, p: f64) -> f64 {
    0.125 * (a * a).min(epsilon.powf(2.0 - p) * a.powf(p))
}

/// For `p ∈ (1, 2)`: per trial, `probes` random directions are scaled to
/// `‖Δ‖_{H_p} ∈ {0.01, 0.1, 1, 10} ε`, and `(1/n) Σ γ_p(|r*_i|, |⟨Δ, X_i⟩|)`
/// is compared with `⅛ min{‖Δ‖², ε^{2-p} ‖Δ‖^p}`. The statistic is the
/// smallest ratio of the two sides; a trial fails if any probe does. Finitely
/// many probes stand in for the statement over all `w`.
#[allow(clippy::too_many_arguments)]
pub fn gamma_lower_campaign(
    spec: &DistributionSpec,
    p: f64,
    constants: &ConstantEstimates,
    n: usize,
    delta: f64,
    trials: usize,
    probes: usize,
    seed: u64,
) -> Result<CoverageReport> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::Domain(format!(
            "the γ_p lower bound needs p in (1, 2), got {p}"
        )));
    }
    check_hypotheses(spec, p)?;
    if probes == 0 {
        return Err(Error::Domain("probes must be at least 1".into()));
    }
    let epsilon = match constants.epsilon {
        Some(e) => e,
        None => {
            let (e, _) = crate::constants::prop2_constants(
                constants.sigma_p(),
                constants.d,
                constants.c_p_l2,
                constants.c_star_p.unwrap_or(f64::NAN),
                p,
            )?;
            e
        }
    };
    let kernel = LossKernel::new(p)?;
    let h = reference_curvature(spec, p, constants);
    let l = curvature_factor(&h)?;
    let lt = l.transpose();
    let d = spec.dim();
    let w_star = spec.target();
    let threshold_n = threshold(constants.sigma_p_sq, d, delta).ok();
    let pair_counts = std::sync::Mutex::new(vec![0usize; trials]);
    let mut report = run(
        "gamma_lower",
        n,
        delta,
        delta / 2.0,
        trials,
        seed,
        threshold_n,
        &|t, s| {
            let ds = spec.sample(n, derive_seed(s, &[1]))?;
            let r = ds.residuals(&w_star);
            let mut rng = seeded(derive_seed(s, &[3]));
            let mut worst = f64::INFINITY;
            let mut failed_pairs = 0usize;
            for _ in 0..probes {
                let v = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                let v = v.normalize();
                // ‖L⁻ᵀ v‖_H = ‖v‖ = 1.
                let dir = lt
                    .solve_upper_triangular(&v)
                    .ok_or_else(|| Error::NonPositiveDefinite("singular factor".into()))?;
                let proj = &ds.design * &dir;
                for &scale in &GAMMA_SCALES {
                    let a = scale * epsilon;
                    let mut lhs = 0.0;
                    for (&ri, &pi) in r.iter().zip(proj.iter()) {
                        lhs += kernel.gamma(ri.abs(), (a * pi).abs())?;
                    }
                    lhs /= n as f64;
                    let rhs = gamma_lower_rhs(a, epsilon, p);
                    let ratio = lhs / rhs;
                    if ratio < 1.0 - 1e-12 {
                        failed_pairs += 1;
                    }
                    worst = worst.min(ratio);
                }
            }
            pair_counts.lock().expect("unpoisoned")[t] = failed_pairs;
            Ok((worst, 1.0, failed_pairs > 0))
        },
    )?;
    let pairs = pair_counts.into_inner().expect("unpoisoned");
    report.pair_violation_fraction =
        Some(pairs.iter().sum::<usize>() as f64 / (trials * probes * GAMMA_SCALES.len()) as f64);
    Ok(report)
}

/// Per trial, `‖∇R_{p,n}(w*_p)‖_{H_p⁻¹}` against `sqrt(2V_p/(nδ))`, which may
/// fail with probability `δ/2`. The mean of the squared statistic should be
/// `V_p / n`.
pub fn markov_grad_campaign(
    spec: &DistributionSpec,
    p: f64,
    constants: &ConstantEstimates,
    n: usize,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<CoverageReport> {
    check_hypotheses(spec, p)?;
    let v = reference_rate(spec, p, constants);
    let h = reference_curvature(spec, p, constants);
    let l = curvature_factor(&h)?;
    let bound = markov_grad_bound(v, n as u64, delta)?;
    let w_star = spec.target();
    let mut report = run(
        "markov_grad",
        n,
        delta,
        delta / 2.0,
        trials,
        seed,
        None,
        &|_, s| {
            let ds = spec.sample(n, derive_seed(s, &[1]))?;
            let g = empirical_grad(&ds, p, &w_star)?;
            let stat = linalg::inv_quad_form(&l, &g).sqrt();
            Ok((stat, bound, stat > bound))
        },
    )?;
    report.reference_sq_mean = Some(v / n as f64);
    Ok(report)
}
