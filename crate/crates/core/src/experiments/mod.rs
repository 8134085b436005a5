//! Seeded Monte Carlo campaigns. Every trial draws its data from a seed
//! derived from `(master seed, n, trial)`, trials may run on any number of
//! workers, and results are gathered in `(n, trial)` order, so a campaign is
//! a pure function of its configuration.

mod construction;
mod coverage;
mod derivatives;
mod erm;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundTerms;
use crate::constants::{estimate_constants, ConstantEstimates, ConstantOptions};
use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};
use crate::output;
use crate::risk::McOptions;
use crate::solver::SolverOptions;

pub use construction::{max_scaled_dot, orthogonal_complement};
pub use coverage::{
    curvature_campaign, gamma_lower_campaign, lower_tail_campaign, markov_grad_campaign,
    CoverageReport, CoverageTrial,
};
pub use derivatives::{derivative_check_campaign, DerivativeReport, ProbeCheck};
pub use erm::{excess_risk_campaign, realizable_campaign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    ExcessRisk,
    Realizable,
    LowerTail,
    Curvature,
    GammaLower,
    MarkovGrad,
    DerivativeCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstantsSource {
    Estimate {
        #[serde(default)]
        options: ConstantOptions,
    },
    Provided {
        estimates: ConstantEstimates,
    },
}

impl Default for ConstantsSource {
    fn default() -> Self {
        Self::Estimate {
            options: ConstantOptions {
                samples: 200_000,
                ..Default::default()
            },
        }
    }
}

fn default_trials() -> usize {
    100
}

fn default_delta() -> f64 {
    0.1
}

fn default_probes() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: ExperimentKind,
    pub spec: DistributionSpec,
    pub p: f64,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub constants: ConstantsSource,
    /// Fresh draws per trial for Monte Carlo risk evaluation.
    #[serde(default)]
    pub mc: McOptions,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Random directions per trial (γ lower bound) or probe weights
    /// (derivative checks).
    #[serde(default = "default_probes")]
    pub probes: usize,
}

impl ExperimentConfig {
    pub fn new(
        spec: DistributionSpec,
        p: f64,
        n_grid: Vec<usize>,
        trials: usize,
        delta: f64,
        seed: u64,
    ) -> Self {
        Self {
            kind: ExperimentKind::ExcessRisk,
            spec,
            p,
            n_grid,
            trials,
            delta,
            seed,
            constants: ConstantsSource::default(),
            mc: McOptions::default(),
            solver: SolverOptions::default(),
            probes: default_probes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::loss::LossKernel::new(self.p)?;
        self.spec.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidSpec("trials must be at least 1".into()));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return Err(Error::InvalidSpec(
                "n grid must be nonempty with n ≥ 1".into(),
            ));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec(
                "n grid must be strictly increasing".into(),
            ));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "δ must lie in (0, 1], got {}",
                self.delta
            )));
        }
        if self.mc.samples == 0 {
            return Err(Error::InvalidSpec("mc.samples must be at least 1".into()));
        }
        if let ConstantsSource::Provided { estimates } = &self.constants {
            if estimates.d != self.spec.dim() || estimates.p != self.p {
                return Err(Error::InvalidSpec(
                    "provided constants do not match the spec dimension or exponent".into(),
                ));
            }
        }
        Ok(())
    }

    /// Resolve the constants, estimating them if needed.
    pub fn resolve_constants(&self) -> Result<ConstantEstimates> {
        match &self.constants {
            ConstantsSource::Provided { estimates } => Ok(estimates.clone()),
            ConstantsSource::Estimate { options } => {
                let mut options = *options;
                if options.seed == 0 {
                    options.seed = crate::rng::derive_seed(self.seed, &[0xc0]);
                }
                estimate_constants(&self.spec, self.p, &options)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    /// NaN when the trial failed.
    pub excess_risk: f64,
    pub excess_std_err: f64,
    /// `‖∇R_{p,n}(w*_p)‖_{H_p⁻¹}`.
    pub grad_norm: f64,
    pub recovered: Option<bool>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub n: usize,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub ok_trials: usize,
    pub failed_trials: usize,
    pub mean_excess: f64,
    pub mean_std_err: f64,
    /// Empirical `(1 - δ)`-quantile of the excess risk.
    pub quantile: f64,
    pub bound: Option<BoundTerms>,
    pub threshold_n: Option<u64>,
    pub threshold_met: Option<bool>,
    /// Fraction of trials above the bound (noisy case) or failing to recover
    /// the target (realizable case).
    pub violation_fraction: Option<f64>,
    pub allowed_fraction: Option<f64>,
    /// Bound over mean excess risk; large values mean the check is loose.
    pub bound_to_mean_ratio: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub value: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub constants: Option<ConstantEstimates>,
    pub records: Vec<TrialRecord>,
    pub per_n: Vec<NSummary>,
    pub slope: Option<Slope>,
    /// `mean excess · 2n / V_p` at the largest `n`.
    pub ratio_at_largest_n: Option<f64>,
    pub coverage: Vec<CoverageReport>,
    pub derivative: Option<DerivativeReport>,
    pub failures: Vec<TrialFailure>,
    /// Trials where `R_{p,n}(ŵ) > R_{p,n}(w*) + 1e-10`.
    pub erm_optimality_violations: usize,
    /// No hard assertion failed.
    pub passed: bool,
    pub created_unix: Option<u64>,
}

impl ExperimentResult {
    pub(crate) fn empty(cfg: &ExperimentConfig) -> Self {
        Self {
            kind: cfg.kind,
            config: cfg.clone(),
            constants: None,
            records: Vec::new(),
            per_n: Vec::new(),
            slope: None,
            ratio_at_largest_n: None,
            coverage: Vec::new(),
            derivative: None,
            failures: Vec::new(),
            erm_optimality_violations: 0,
            passed: true,
            created_unix: None,
        }
    }

    /// Per-trial CSV. Excess-risk and realizable campaigns write
    /// `n,trial,excess_risk,grad_norm,recovered,seed`; coverage campaigns
    /// write `n,trial,statistic,bound,violated,seed`; derivative checks write
    /// one row per probe.
    pub fn trials_csv(&self) -> String {
        let mut s = String::new();
        match self.kind {
            ExperimentKind::ExcessRisk | ExperimentKind::Realizable => {
                s.push_str("n,trial,excess_risk,grad_norm,recovered,seed\n");
                for r in &self.records {
                    let rec = r.recovered.map_or(String::new(), |b| b.to_string());
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{}",
                        r.n, r.trial, r.excess_risk, r.grad_norm, rec, r.seed
                    );
                }
            }
            ExperimentKind::DerivativeCheck => {
                s.push_str("probe,grad_rel_err,hess_rel_err\n");
                if let Some(d) = &self.derivative {
                    for (i, p) in d.probes.iter().enumerate() {
                        let _ = writeln!(s, "{i},{},{}", p.grad_rel_err, p.hess_rel_err);
                    }
                }
            }
            _ => {
                s.push_str("n,trial,statistic,bound,violated,seed\n");
                for c in &self.coverage {
                    for t in &c.trials {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{}",
                            c.n, t.trial, t.statistic, t.bound, t.violated, t.seed
                        );
                    }
                }
            }
        }
        s
    }

    /// `ln(mean excess)` against `ln n`, with the bound when available.
    pub fn svg(&self) -> Option<String> {
        if self.per_n.is_empty() {
            return None;
        }
        let mean = output::Series {
            label: "ln mean excess risk".into(),
            color: "#1f77b4".into(),
            dashed: false,
            points: self
                .per_n
                .iter()
                .map(|s| ((s.n as f64).ln(), s.mean_excess.ln()))
                .collect(),
        };
        let mut series = vec![mean];
        if self.per_n.iter().any(|s| s.bound.is_some()) {
            series.push(output::Series {
                label: "ln bound".into(),
                color: "#d62728".into(),
                dashed: true,
                points: self
                    .per_n
                    .iter()
                    .filter_map(|s| s.bound.map(|b| ((s.n as f64).ln(), b.total.ln())))
                    .collect(),
            });
        }
        Some(output::svg_plot(
            &format!("excess risk, p = {}", self.config.p),
            "ln n",
            "ln excess risk",
            &series,
        ))
    }

    /// Write `trials.csv`, `summary.json` and, when there is a rate curve,
    /// `rate.svg` under `dir`. Each file is replaced atomically.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        output::write_text(&dir.join("trials.csv"), &self.trials_csv())?;
        output::write_json(&dir.join("summary.json"), self)?;
        if let Some(svg) = self.svg() {
            output::write_text(&dir.join("rate.svg"), &svg)?;
        }
        Ok(())
    }
}

/// Run the campaign selected by `cfg.kind`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::ExcessRisk => excess_risk_campaign(cfg),
        ExperimentKind::Realizable => realizable_campaign(cfg),
        ExperimentKind::DerivativeCheck => {
            let mut res = ExperimentResult::empty(cfg);
            let report =
                derivative_check_campaign(&cfg.spec, cfg.p, cfg.probes, &cfg.mc, cfg.seed)?;
            res.passed = report.passed;
            res.derivative = Some(report);
            Ok(res)
        }
        kind => {
            let constants = cfg.resolve_constants()?;
            let mut res = ExperimentResult::empty(cfg);
            for &n in &cfg.n_grid {
                let report = match kind {
                    ExperimentKind::LowerTail => lower_tail_campaign(
                        &cfg.spec,
                        constants.sigma_p(),
                        cfg.delta,
                        n,
                        cfg.trials,
                        cfg.seed,
                    )?,
                    ExperimentKind::Curvature => curvature_campaign(
                        &cfg.spec, cfg.p, &constants, n, cfg.delta, cfg.trials, cfg.seed,
                    )?,
                    ExperimentKind::GammaLower => gamma_lower_campaign(
                        &cfg.spec, cfg.p, &constants, n, cfg.delta, cfg.trials, cfg.probes,
                        cfg.seed,
                    )?,
                    ExperimentKind::MarkovGrad => markov_grad_campaign(
                        &cfg.spec, cfg.p, &constants, n, cfg.delta, cfg.trials, cfg.seed,
                    )?,
                    _ => unreachable!("handled above"),
                };
                res.passed &= report.passed;
                res.coverage.push(report);
            }
            res.constants = Some(constants);
            Ok(res)
        }
    }
}

/// Two-sided binomial slack `2 sqrt(q(1-q)/trials)` around a nominal rate `q`.
pub fn binomial_slack(q: f64, trials: usize) -> f64 {
    2.0 * (q * (1.0 - q) / trials as f64).sqrt()
}

/// Empirical quantile: the smallest value with at least a `level` fraction
/// of the sample at or below it.
pub fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((level * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Least-squares slope of `y` on `x` with its standard error.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<Slope> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(&a, &b)| (a, b))
        .collect();
    let k = pts.len();
    if k < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let std_err = if k > 2 {
        let ssr: f64 = pts.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
        (ssr / (k - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(Slope { value: b, std_err })
}

/// `H_p`: exact `E[X Xᵀ]` at `p = 2` when available, otherwise the estimate.
pub(crate) fn reference_curvature(
    spec: &DistributionSpec,
    p: f64,
    c: &ConstantEstimates,
) -> DMatrix<f64> {
    if p == 2.0 {
        if let Some(s) = spec.second_moment_matrix() {
            return s;
        }
    }
    c.h_matrix()
}

/// `V_p`: exactly `Var(ε) d` at `p = 2` (since `tr(H⁻¹Σ) = d`), otherwise the
/// estimate.
pub(crate) fn reference_rate(spec: &DistributionSpec, p: f64, c: &ConstantEstimates) -> f64 {
    if p == 2.0 {
        if let Some(var) = spec.noise_variance() {
            return var * spec.dim() as f64;
        }
    }
    c.v_p
}

/// Cholesky factor of `H_p` for dual norms.
pub(crate) fn curvature_factor(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    crate::linalg::checked_cholesky(h, crate::constants::MAX_CONDITION, "H_p")
}

pub(crate) fn unix_now() -> Option<u64> {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs())
}
