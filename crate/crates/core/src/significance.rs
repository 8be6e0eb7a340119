//! Uncertainty for flow estimates.
//!
//! Asymptotic standard errors come from the inverse Fisher information of
//! the linear-Gaussian fit: `var(a_ij) = s^2 (X_c^T X_c)^{-1}_jj`, where
//! `s^2` is the maximum-likelihood residual variance. The factor
//! `C_ij / C_ii` is treated as fixed, so `se(T) = |C_ij / C_ii| se(a_ij)`.
//!
//! Surrogate tests rebuild the source series (circular shift or
//! permutation), recompute the statistic, and report the rank-based
//! `(1 + #{|stat_surr| >= |stat|}) / (N + 1)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::covariance::CovarianceSet;
use crate::error::{InfoFlowError, Result};
use crate::estimator::{
    estimate_flow, fit_linear_model, normalize_flow, FlowEstimate, FlowMatrix, LinearModelFit, SelfInfluenceEstimate,
};
use crate::panel::TimeSeriesPanel;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const MIN_SURROGATES: usize = 19;
/// Lag-1 residual autocorrelation above which a serial-correlation warning is attached.
pub const RESIDUAL_AUTOCORR_WARN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub stderr: f64,
    pub z_score: f64,
    pub p_asymptotic: f64,
    pub p_surrogate: Option<f64>,
    pub n_surrogates: usize,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SignificanceReport {
    /// Surrogate p value when available, otherwise the asymptotic one.
    pub fn p_value(&self) -> f64 {
        self.p_surrogate.unwrap_or(self.p_asymptotic)
    }

    pub fn is_significant(&self) -> bool {
        self.p_value() <= self.alpha
    }
}

/// Two-sided standard-normal tail probability, floored at the smallest
/// normal f64 so that extreme z scores never report an exact zero.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
}

fn fit_warnings(fit: &LinearModelFit) -> Vec<String> {
    let mut w = Vec::new();
    if fit.residual_lag1_autocorrelation.abs() > RESIDUAL_AUTOCORR_WARN {
        w.push(format!(
            "lag-1 residual autocorrelation {:.3} exceeds {RESIDUAL_AUTOCORR_WARN}; asymptotic p values may be optimistic",
            fit.residual_lag1_autocorrelation
        ));
    }
    if fit.residual_variance == 0.0 {
        w.push("zero residual variance (perfect fit); inference is degenerate".into());
    }
    w
}

/// Standard error of the fitted drift coefficient of `source` in the
/// equation of `fit.target`.
pub fn coefficient_stderr(fit: &LinearModelFit, cov: &CovarianceSet, source: usize) -> Result<f64> {
    cov.ensure_nonsingular()?;
    if fit.n_eff != cov.n_eff || fit.k != cov.k {
        return Err(InfoFlowError::InvalidArgument("fit and covariance use different windows".into()));
    }
    let inv_jj = cov.inverse_diagonal(source);
    Ok((fit.residual_variance * inv_jj / (cov.n_eff - 1) as f64).max(0.0).sqrt())
}

fn report(value: f64, stderr: f64, warnings: Vec<String>) -> SignificanceReport {
    let (z, p) = if stderr > 0.0 {
        let z = value / stderr;
        (z, two_sided_p(z))
    } else if value == 0.0 {
        (0.0, 1.0)
    } else {
        (value.signum() * f64::INFINITY, 0.0)
    };
    SignificanceReport {
        stderr,
        z_score: z,
        p_asymptotic: p,
        p_surrogate: None,
        n_surrogates: 0,
        alpha: DEFAULT_ALPHA,
        warnings,
    }
}

pub fn asymptotic_significance(
    fit: &LinearModelFit,
    cov: &CovarianceSet,
    flow: &FlowEstimate,
) -> Result<SignificanceReport> {
    if fit.target != flow.target {
        return Err(InfoFlowError::InvalidArgument("fit and flow have different targets".into()));
    }
    if cov.n_eff <= cov.d() + 2 {
        return Err(InfoFlowError::InsufficientData(format!(
            "asymptotic test needs n_eff > d + 2, got n_eff = {}",
            cov.n_eff
        )));
    }
    let (i, j) = (flow.target, flow.source);
    let ratio = cov.c[(i, j)] / cov.c[(i, i)];
    let se = ratio.abs() * coefficient_stderr(fit, cov, j)?;
    Ok(report(flow.value, se, fit_warnings(fit)))
}

/// Same delta-method machinery applied to `dH*_i/dt`, which is the fitted
/// diagonal drift coefficient.
pub fn self_influence_significance(
    fit: &LinearModelFit,
    cov: &CovarianceSet,
    est: &SelfInfluenceEstimate,
) -> Result<SignificanceReport> {
    if fit.target != est.target {
        return Err(InfoFlowError::InvalidArgument("fit and estimate have different targets".into()));
    }
    let se = coefficient_stderr(fit, cov, est.target)?;
    Ok(report(est.value, se, fit_warnings(fit)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMethod {
    /// Rotate the source by a random offset of at least `n / 10` positions.
    #[default]
    CircularShift,
    Permutation,
}

impl std::str::FromStr for SurrogateMethod {
    type Err = InfoFlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular_shift" | "shift" => Ok(Self::CircularShift),
            "permutation" | "permute" => Ok(Self::Permutation),
            other => Err(InfoFlowError::InvalidArgument(format!("unknown surrogate method '{other}'"))),
        }
    }
}

/// Statistic compared between the data and its surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateStatistic {
    /// `|T|` divided by its asymptotic standard error.
    #[default]
    Studentized,
    /// The raw flow `|T|`.
    Flow,
}

impl std::str::FromStr for SurrogateStatistic {
    type Err = InfoFlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "studentized" => Ok(Self::Studentized),
            "flow" | "raw" => Ok(Self::Flow),
            other => Err(InfoFlowError::InvalidArgument(format!("unknown surrogate statistic '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig {
    pub n_surrogates: usize,
    pub seed: u64,
    pub method: SurrogateMethod,
    pub statistic: SurrogateStatistic,
}

impl SurrogateConfig {
    pub fn new(n_surrogates: usize, seed: u64) -> Self {
        Self { n_surrogates, seed, method: SurrogateMethod::default(), statistic: SurrogateStatistic::default() }
    }
}

/// Independent generator for surrogate `index`: one ChaCha stream per surrogate,
/// so results do not depend on execution order.
fn surrogate_rng(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Builds surrogate `index` of `x`.
pub fn make_surrogate(x: &[f64], method: SurrogateMethod, seed: u64, index: usize) -> Vec<f64> {
    let n = x.len();
    let mut rng = surrogate_rng(seed, index);
    match method {
        SurrogateMethod::CircularShift => {
            let min_shift = (n / 10).max(1);
            let shift = if n > 2 * min_shift { rng.random_range(min_shift..=n - min_shift) } else { n / 2 };
            let mut out = Vec::with_capacity(n);
            out.extend_from_slice(&x[shift..]);
            out.extend_from_slice(&x[..shift]);
            out
        }
        SurrogateMethod::Permutation => {
            let mut out = x.to_vec();
            out.shuffle(&mut rng);
            out
        }
    }
}

fn statistic(panel: &TimeSeriesPanel, source: usize, target: usize, k: usize, kind: SurrogateStatistic) -> Result<f64> {
    let flow = estimate_flow(panel, source, target, k)?;
    match kind {
        SurrogateStatistic::Flow => Ok(flow.value.abs()),
        SurrogateStatistic::Studentized => {
            let cov = CovarianceSet::compute(panel, k, &[target])?;
            let fit = fit_linear_model(panel, target, k)?;
            let rep = asymptotic_significance(&fit, &cov, &flow)?;
            Ok(rep.z_score.abs())
        }
    }
}

/// Rank p value of the observed statistic among the surrogate statistics.
pub fn rank_p_value(observed: f64, surrogates: &[f64]) -> f64 {
    let exceed = surrogates.iter().filter(|&&s| s >= observed).count();
    (1 + exceed) as f64 / (surrogates.len() + 1) as f64
}

pub fn surrogate_significance(
    panel: &TimeSeriesPanel,
    source: usize,
    target: usize,
    k: usize,
    config: &SurrogateConfig,
) -> Result<SignificanceReport> {
    if config.n_surrogates < MIN_SURROGATES {
        return Err(InfoFlowError::SurrogateResolution(config.n_surrogates));
    }
    let flow = estimate_flow(panel, source, target, k)?;
    let cov = CovarianceSet::compute(panel, k, &[target])?;
    let fit = fit_linear_model(panel, target, k)?;
    let mut rep = asymptotic_significance(&fit, &cov, &flow)?;

    let observed = match config.statistic {
        SurrogateStatistic::Flow => flow.value.abs(),
        SurrogateStatistic::Studentized => rep.z_score.abs(),
    };
    let x = panel.series(source);
    let stats: Vec<f64> = (0..config.n_surrogates)
        .into_par_iter()
        .map(|idx| {
            let surr = make_surrogate(x, config.method, config.seed, idx);
            let p = panel.with_series(source, surr)?;
            // a degenerate surrogate carries no evidence against the observed value
            match statistic(&p, source, target, k, config.statistic) {
                Ok(v) => Ok(v),
                Err(e) if e.kind() == crate::error::ErrorKind::Numerical => Ok(0.0),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    rep.p_surrogate = Some(rank_p_value(observed, &stats));
    rep.n_surrogates = config.n_surrogates;
    Ok(rep)
}

/// What to attach to a flow matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct InferenceOptions {
    pub surrogates: Option<SurrogateConfig>,
    pub normalize: bool,
}

/// Fills standard errors, p values and (optionally) normalized flows in place.
pub fn annotate_matrix(panel: &TimeSeriesPanel, matrix: &mut FlowMatrix, options: &InferenceOptions) -> Result<()> {
    let d = matrix.d();
    let k = matrix.k;
    for i in 0..d {
        let fit = matrix.fits[i].clone();
        let s = self_influence_significance(&fit, &matrix.covariance, &matrix.self_influence[i])?;
        matrix.self_influence[i].stderr = Some(s.stderr);
        matrix.self_influence[i].p_value_asymptotic = Some(s.p_asymptotic);
    }
    let pairs: Vec<(usize, usize)> =
        (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let updates: Vec<(usize, usize, SignificanceReport, Option<f64>)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let flow = matrix.flow(j, i).expect("off-diagonal flow present");
            let rep = match &options.surrogates {
                Some(cfg) => surrogate_significance(panel, j, i, k, cfg)?,
                None => asymptotic_significance(&matrix.fits[i], &matrix.covariance, flow)?,
            };
            let norm = if options.normalize {
                match normalize_flow(flow, &matrix.self_influence[i], &matrix.fits[i]) {
                    Ok(v) => Some(v),
                    Err(InfoFlowError::DegenerateNormalizer) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            Ok((i, j, rep, norm))
        })
        .collect::<Result<_>>()?;
    for (i, j, rep, norm) in updates {
        let flow = matrix.flows[i][j].as_mut().expect("off-diagonal flow present");
        flow.stderr = Some(rep.stderr);
        flow.p_value_asymptotic = Some(rep.p_asymptotic);
        flow.p_value_surrogate = rep.p_surrogate;
        flow.normalized = norm;
    }
    Ok(())
}

/// Everything known about one ordered pair.
#[derive(Debug, Clone)]
pub struct PairAnalysis {
    pub flow: FlowEstimate,
    pub self_influence: SelfInfluenceEstimate,
    pub fit: LinearModelFit,
    pub report: SignificanceReport,
}

/// Estimates `source -> target` with asymptotic (and optionally surrogate)
/// inference, plus normalization when requested.
pub fn analyze_pair(
    panel: &TimeSeriesPanel,
    source: usize,
    target: usize,
    k: usize,
    options: &InferenceOptions,
) -> Result<PairAnalysis> {
    let mut flow = estimate_flow(panel, source, target, k)?;
    let cov = CovarianceSet::compute(panel, k, &[target])?;
    let fit = fit_linear_model(panel, target, k)?;
    let mut self_influence = crate::estimator::estimate_self_influence(panel, target, k)?;
    let self_rep = self_influence_significance(&fit, &cov, &self_influence)?;
    self_influence.stderr = Some(self_rep.stderr);
    self_influence.p_value_asymptotic = Some(self_rep.p_asymptotic);

    let report = match &options.surrogates {
        Some(cfg) => surrogate_significance(panel, source, target, k, cfg)?,
        None => asymptotic_significance(&fit, &cov, &flow)?,
    };
    flow.stderr = Some(report.stderr);
    flow.p_value_asymptotic = Some(report.p_asymptotic);
    flow.p_value_surrogate = report.p_surrogate;
    if options.normalize {
        flow.normalized = match normalize_flow(&flow, &self_influence, &fit) {
            Ok(v) => Some(v),
            Err(InfoFlowError::DegenerateNormalizer) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(PairAnalysis { flow, self_influence, fit, report })
}
