use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{
    binomial_slack, curvature_factor, empirical_quantile, ols_slope, reference_rate, unix_now,
    ExperimentConfig, ExperimentResult, NSummary, TrialFailure, TrialRecord,
};
use crate::bounds::{self, BoundInputs, BoundReport, BoundTerms, Theorem};
use crate::constants::ConstantEstimates;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::LossKernel;
use crate::risk::{bregman_terms, excess_risk_p2_closed_form, McEstimate};
use crate::rng::derive_seed;
use crate::smallball::small_ball;
use crate::solver::{empirical_grad, empirical_risk, fit, ErmSolution};

const ERM_SLACK: f64 = 1e-10;
const RECOVERY_TOL: f64 = 1e-6;

/// How a trial's excess risk is evaluated.
enum Evaluator {
    /// `½ ‖ŵ - w*‖²_Σ`, exact at `p = 2`.
    ClosedForm,
    /// Bregman terms on one fresh stream shared by every trial.
    Stream { kernel: LossKernel, eval: Dataset },
}

impl Evaluator {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        if cfg.p == 2.0 && cfg.spec.second_moment_matrix().is_some() {
            return Ok(Self::ClosedForm);
        }
        let report = cfg.spec.moment_exists(cfg.p);
        if !report.all() {
            return Err(Error::MomentViolation(format!(
                "the risk needs finite moments of order {} ({report:?})",
                cfg.p
            )));
        }
        let seed = if cfg.mc.seed != 0 {
            cfg.mc.seed
        } else {
            derive_seed(cfg.seed, &[0xe7a1])
        };
        Ok(Self::Stream {
            kernel: LossKernel::new(cfg.p)?,
            eval: cfg.spec.sample(cfg.mc.samples, seed)?,
        })
    }

    fn excess(
        &self,
        cfg: &ExperimentConfig,
        w: &DVector<f64>,
        w_star: &DVector<f64>,
    ) -> Result<McEstimate> {
        match self {
            Self::ClosedForm => {
                let v = excess_risk_p2_closed_form(&cfg.spec, w).expect("checked at construction");
                Ok(McEstimate {
                    mean: v,
                    std_err: 0.0,
                    samples: 0,
                })
            }
            Self::Stream { kernel, eval } => {
                McEstimate::from_values(&bregman_terms(kernel, eval, w, w_star)).check_nonnegative()
            }
        }
    }
}

struct TrialOutcome {
    record: TrialRecord,
    failure: Option<String>,
    erm_violation: bool,
}

/// Fit, keeping the best iterate when the iteration limit is reached.
fn fit_lenient(ds: &Dataset, p: f64, cfg: &ExperimentConfig) -> Result<ErmSolution> {
    match fit(ds, p, &cfg.solver) {
        Err(Error::MaxIterations { best }) => {
            warn!(
                "n = {}: solver stopped at the iteration limit, using the best iterate",
                ds.n()
            );
            Ok(*best)
        }
        other => other,
    }
}

fn run_trial(
    cfg: &ExperimentConfig,
    eval: &Evaluator,
    chol: Option<&DMatrix<f64>>,
    w_star: &DVector<f64>,
    n: usize,
    trial: usize,
) -> TrialOutcome {
    let seed = derive_seed(cfg.seed, &[n as u64, trial as u64]);
    let mut record = TrialRecord {
        n,
        trial,
        excess_risk: f64::NAN,
        excess_std_err: f64::NAN,
        grad_norm: f64::NAN,
        recovered: None,
        seed,
    };
    let realizable = cfg.spec.is_realizable();
    let result = (|| -> Result<bool> {
        let ds = cfg.spec.sample(n, derive_seed(seed, &[1]))?;
        let g = empirical_grad(&ds, cfg.p, w_star)?;
        record.grad_norm = match chol {
            Some(l) => crate::linalg::inv_quad_form(l, &g).sqrt(),
            None => g.norm(),
        };
        let sol = fit_lenient(&ds, cfg.p, cfg)?;
        let erm_violation = empirical_risk(&ds, cfg.p, &sol.weights)?
            > empirical_risk(&ds, cfg.p, w_star)? + ERM_SLACK;
        if realizable {
            let err = (&sol.weights - w_star).norm();
            record.recovered = Some(err <= RECOVERY_TOL * w_star.norm().max(1.0));
        }
        let est = eval.excess(cfg, &sol.weights, w_star)?;
        record.excess_risk = est.mean;
        record.excess_std_err = est.std_err;
        Ok(erm_violation)
    })();
    match result {
        Ok(erm_violation) => TrialOutcome {
            record,
            failure: None,
            erm_violation,
        },
        Err(e) => {
            if realizable && record.recovered.is_none() {
                record.recovered = Some(false);
            }
            TrialOutcome {
                record,
                failure: Some(e.to_string()),
                erm_violation: false,
            }
        }
    }
}

fn run_grid(
    cfg: &ExperimentConfig,
    eval: &Evaluator,
    chol: Option<&DMatrix<f64>>,
    res: &mut ExperimentResult,
) -> Vec<Vec<TrialRecord>> {
    let w_star = cfg.spec.target();
    let mut by_n = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        log::info!("n = {n}: running {} trials", cfg.trials);
        let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, eval, chol, &w_star, n, t))
            .collect();
        let mut records = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            if let Some(message) = o.failure {
                warn!("n = {n}, trial {}: {message}", o.record.trial);
                res.failures.push(TrialFailure {
                    n,
                    trial: o.record.trial,
                    message,
                });
            }
            res.erm_optimality_violations += usize::from(o.erm_violation);
            records.push(o.record);
        }
        res.records.extend(records.iter().cloned());
        by_n.push(records);
    }
    by_n
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let e = McEstimate::from_values(values);
    (e.mean, e.std_err)
}

fn bound_inputs(spec_v: f64, c: &ConstantEstimates) -> BoundInputs {
    BoundInputs {
        v: spec_v,
        sigma_p_sq: c.sigma_p_sq,
        c_p_lp: c.c_p_lp,
        c_p_l2: c.c_p_l2,
        c_star_p: c.c_star_p.unwrap_or(f64::NAN),
        rho: c.rho.unwrap_or(0.0),
    }
}

/// Fit `trials` independent datasets at every `n` and compare the excess
/// risk with the high-probability bound for `p`, the `1/n` rate and the
/// asymptotic constant `V_p / (2n)`.
pub fn excess_risk_campaign(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let constants = cfg.resolve_constants()?;
    let v = reference_rate(&cfg.spec, cfg.p, &constants);
    let h = super::reference_curvature(&cfg.spec, cfg.p, &constants);
    let chol = curvature_factor(&h)?;
    let eval = Evaluator::new(cfg)?;
    let theorem = Theorem::for_exponent(cfg.p)?;
    let inputs = bound_inputs(v, &constants);
    let d = cfg.spec.dim();

    let mut res = ExperimentResult::empty(cfg);
    let by_n = run_grid(cfg, &eval, Some(&chol), &mut res);

    for (records, &n) in by_n.iter().zip(&cfg.n_grid) {
        let ok: Vec<f64> = records
            .iter()
            .map(|r| r.excess_risk)
            .filter(|v| v.is_finite())
            .collect();
        let (mean, se) = mean_and_se(&ok);
        let report = BoundReport::evaluate(theorem, cfg.p, d, n as u64, cfg.delta, &inputs);
        let mut summary = NSummary {
            n,
            ok_trials: ok.len(),
            failed_trials: records.len() - ok.len(),
            mean_excess: mean,
            mean_std_err: se,
            quantile: empirical_quantile(&ok, 1.0 - cfg.delta),
            bound: None,
            threshold_n: None,
            threshold_met: None,
            violation_fraction: None,
            allowed_fraction: None,
            bound_to_mean_ratio: None,
            passed: true,
        };
        match report {
            Ok(r) => {
                let terms = BoundTerms {
                    leading: r.leading_term,
                    higher_order: r.higher_order_term,
                    total: r.bound_value,
                };
                let violations = ok.iter().filter(|&&e| e > terms.total).count();
                let frac = if ok.is_empty() {
                    f64::NAN
                } else {
                    violations as f64 / ok.len() as f64
                };
                let allowed = cfg.delta + binomial_slack(cfg.delta, ok.len().max(1));
                summary.bound = Some(terms);
                summary.threshold_n = Some(r.threshold_n);
                summary.threshold_met = Some(r.threshold_met);
                summary.violation_fraction = Some(frac);
                summary.allowed_fraction = Some(allowed);
                summary.bound_to_mean_ratio = Some(terms.total / mean);
                // Below the threshold the bound makes no claim.
                summary.passed = !r.threshold_met || frac <= allowed;
            }
            Err(e) => warn!("n = {n}: bound not evaluated: {e}"),
        }
        res.passed &= summary.passed;
        res.per_n.push(summary);
    }
    if let Some(last) = res.per_n.last() {
        if last.threshold_met == Some(false) {
            warn!(
                "largest n = {} is below the threshold {:?}; coverage is informative only",
                last.n, last.threshold_n
            );
        }
        res.ratio_at_largest_n = Some(last.mean_excess * 2.0 * last.n as f64 / v);
    }
    let x: Vec<f64> = res.per_n.iter().map(|s| (s.n as f64).ln()).collect();
    let y: Vec<f64> = res.per_n.iter().map(|s| s.mean_excess.ln()).collect();
    res.slope = ols_slope(&x, &y);
    res.passed &= res.erm_optimality_violations == 0;
    res.constants = Some(constants);
    res.created_unix = unix_now();
    Ok(res)
}

/// Realizable data: at every `n`, the fraction of trials where the fit misses
/// `w*` must not exceed `C(n, d-1) ρ^{n-d+1}` beyond binomial slack.
pub fn realizable_campaign(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    if !cfg.spec.is_realizable() {
        return Err(Error::InvalidSpec(
            "the realizable campaign needs noise = none".into(),
        ));
    }
    let rho = small_ball(&cfg.spec, &[], 0.0, 2.0, 0, 0)?.rho_sup;
    let d = cfg.spec.dim();
    let eval = Evaluator::new(cfg)?;
    let mut res = ExperimentResult::empty(cfg);
    let by_n = run_grid(cfg, &eval, None, &mut res);
    let (needed, _) = bounds::realizable_sample_size(d, cfg.delta, rho)?;

    for (records, &n) in by_n.iter().zip(&cfg.n_grid) {
        let ok: Vec<f64> = records
            .iter()
            .map(|r| r.excess_risk)
            .filter(|v| v.is_finite())
            .collect();
        let (mean, se) = mean_and_se(&ok);
        let failures = records.iter().filter(|r| r.recovered != Some(true)).count();
        let frac = failures as f64 / records.len() as f64;
        let tail = if n >= d {
            bounds::realizable_tail(n as u64, d, rho)?
        } else {
            1.0
        };
        let allowed = tail + binomial_slack(tail, records.len());
        let summary = NSummary {
            n,
            ok_trials: ok.len(),
            failed_trials: records.len() - ok.len(),
            mean_excess: mean,
            mean_std_err: se,
            quantile: empirical_quantile(&ok, 1.0 - cfg.delta),
            bound: Some(BoundTerms {
                leading: tail,
                higher_order: 0.0,
                total: tail,
            }),
            threshold_n: Some(needed),
            threshold_met: Some(n as u64 >= needed),
            violation_fraction: Some(frac),
            allowed_fraction: Some(allowed),
            bound_to_mean_ratio: None,
            passed: frac <= allowed,
        };
        res.passed &= summary.passed;
        res.per_n.push(summary);
    }
    res.passed &= res.erm_optimality_violations == 0;
    res.created_unix = unix_now();
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::ConstantOptions;
    use crate::distributions::{CovariateFamily, DistributionSpec, NoiseFamily};
    use crate::experiments::{ConstantsSource, ExperimentKind};

    fn two_atoms() -> DistributionSpec {
        DistributionSpec {
            covariates: CovariateFamily::Discrete {
                atoms: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                probs: vec![0.5, 0.5],
            },
            intercept: false,
            target_weights: vec![1.0, -2.0],
            noise: NoiseFamily::None,
        }
    }

    fn quick_constants() -> ConstantsSource {
        ConstantsSource::Estimate {
            options: ConstantOptions {
                samples: 50_000,
                seed: 3,
                restarts: 8,
            },
        }
    }

    #[test]
    fn realizable_failure_rate_matches_exact_probability() {
        // Failure iff every row hits the same atom: probability 2^{1-n}.
        let mut cfg = ExperimentConfig::new(two_atoms(), 1.5, vec![2, 4, 6], 2000, 0.1, 11);
        cfg.kind = ExperimentKind::Realizable;
        cfg.mc.samples = 1000;
        let res = realizable_campaign(&cfg).unwrap();
        assert!(res.passed);
        for s in &res.per_n {
            let exact = 2f64.powi(1 - s.n as i32);
            let frac = s.violation_fraction.unwrap();
            assert!((frac - exact).abs() < 4.0 * (exact * (1.0 - exact) / 2000.0).sqrt() + 1e-12);
        }
    }

    #[test]
    fn p2_excess_matches_half_delta_norm_and_is_deterministic() {
        let spec = DistributionSpec::gaussian_identity(
            3,
            vec![1.0, 0.5, -1.0],
            NoiseFamily::Gaussian { sd: 1.0 },
        );
        let mut cfg = ExperimentConfig::new(spec, 2.0, vec![64, 256], 40, 0.1, 5);
        cfg.constants = quick_constants();
        let a = excess_risk_campaign(&cfg).unwrap();
        let b = excess_risk_campaign(&cfg).unwrap();
        assert_eq!(a.trials_csv(), b.trials_csv());
        assert_eq!(a.erm_optimality_violations, 0);
        assert!(a.failures.is_empty());
        // Mean excess ≈ σ² d / (2n) up to the finite-sample factor.
        let s = &a.per_n[1];
        let expected = 3.0 / (2.0 * 256.0);
        assert!(
            (s.mean_excess / expected - 1.0).abs() < 0.5,
            "{}",
            s.mean_excess
        );
    }

    #[test]
    fn heavy_tail_campaign_uses_monte_carlo_excess() {
        let spec = DistributionSpec::gaussian_identity(
            2,
            vec![1.0, 1.0],
            NoiseFamily::Laplace { scale: 1.0 },
        );
        let mut cfg = ExperimentConfig::new(spec, 3.0, vec![200], 8, 0.1, 9);
        cfg.constants = quick_constants();
        cfg.mc.samples = 20_000;
        let res = excess_risk_campaign(&cfg).unwrap();
        assert!(res.failures.is_empty(), "{:?}", res.failures);
        for r in &res.records {
            assert!(r.excess_risk >= -3.0 * r.excess_std_err);
            assert!(r.grad_norm.is_finite());
        }
    }
}
