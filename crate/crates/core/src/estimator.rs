//! Maximum-likelihood information-flow estimates from time series.
//!
//! Under a linear model with additive noise, the rate of information
//! flowing from `X_j` to `X_i` is estimated as
//!
//! ```text
//! T_{j->i} = [ (1/det C) * sum_m Delta_{jm} C_{m,di} ] * C_ij / C_ii
//! ```
//!
//! where `C` is the sample covariance matrix, `Delta` its cofactors, and
//! `C_{m,di}` the covariance between `X_m` and the Euler forward
//! difference of the target `X_i`. The bracketed factor is the fitted
//! drift coefficient `a_ij`; with `j = i` it is the self-influence
//! `dH*_i/dt`. Values are in nats per unit time.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSet, SINGULAR_RTOL};
use crate::error::{InfoFlowError, Result};
use crate::panel::{forward_difference, TimeSeriesPanel};

/// Estimated flow `T_{source -> target}` with optional inference attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEstimate {
    pub value: f64,
    pub source: usize,
    pub target: usize,
    pub stderr: Option<f64>,
    pub p_value_asymptotic: Option<f64>,
    pub p_value_surrogate: Option<f64>,
    pub normalized: Option<f64>,
    pub k: usize,
    pub n_eff: usize,
}

impl FlowEstimate {
    /// Surrogate p value when available, otherwise the asymptotic one.
    pub fn p_value(&self) -> Option<f64> {
        self.p_value_surrogate.or(self.p_value_asymptotic)
    }
}

/// Estimated self-influence `dH*_i/dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfInfluenceEstimate {
    pub value: f64,
    pub target: usize,
    pub stderr: Option<f64>,
    pub p_value_asymptotic: Option<f64>,
    pub k: usize,
    pub n_eff: usize,
}

/// Least-squares fit of the differenced target on an intercept and all series.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelFit {
    pub target: usize,
    pub intercept: f64,
    /// Fitted drift row `a_i1 .. a_id`.
    pub coefficients: Vec<f64>,
    /// Mean squared residual of the derivative-scale regression.
    pub residual_variance: f64,
    /// `g_ii = k dt * residual_variance`.
    pub noise_intensity: f64,
    /// Sample variance `C_ii` of the target over the fit window.
    pub target_variance: f64,
    pub residual_lag1_autocorrelation: f64,
    pub k: usize,
    pub n_eff: usize,
}

fn check_pair(panel: &TimeSeriesPanel, source: usize, target: usize) -> Result<()> {
    panel.check_index(source)?;
    panel.check_index(target)?;
    if source == target {
        return Err(InfoFlowError::InvalidPair("source equals target; use the self-influence estimator".into()));
    }
    Ok(())
}

/// Flow `source -> target` from a covariance set that includes `target`.
pub fn flow_from_covariance(cov: &CovarianceSet, source: usize, target: usize) -> Result<f64> {
    cov.ensure_nonsingular()?;
    let c_ii = cov.c[(target, target)];
    if c_ii <= 0.0 {
        return Err(InfoFlowError::DegenerateComponent(target));
    }
    let c_ij = cov.c[(target, source)];
    if c_ij == 0.0 {
        return Ok(0.0);
    }
    Ok(cov.drift_coefficient(target, source)? * c_ij / c_ii)
}

/// Self-influence of `target` from a covariance set that includes it.
pub fn self_influence_from_covariance(cov: &CovarianceSet, target: usize) -> Result<f64> {
    cov.ensure_nonsingular()?;
    cov.drift_coefficient(target, target)
}

pub fn estimate_flow(panel: &TimeSeriesPanel, source: usize, target: usize, k: usize) -> Result<FlowEstimate> {
    check_pair(panel, source, target)?;
    let cov = CovarianceSet::compute(panel, k, &[target])?;
    let value = flow_from_covariance(&cov, source, target)?;
    Ok(FlowEstimate {
        value,
        source,
        target,
        stderr: None,
        p_value_asymptotic: None,
        p_value_surrogate: None,
        normalized: None,
        k,
        n_eff: cov.n_eff,
    })
}

pub fn estimate_self_influence(panel: &TimeSeriesPanel, target: usize, k: usize) -> Result<SelfInfluenceEstimate> {
    panel.check_index(target)?;
    let cov = CovarianceSet::compute(panel, k, &[target])?;
    let value = self_influence_from_covariance(&cov, target)?;
    Ok(SelfInfluenceEstimate { value, target, stderr: None, p_value_asymptotic: None, k, n_eff: cov.n_eff })
}

/// Ordinary least squares via the centered normal equations.
///
/// This route does not use cofactors, so it doubles as a cross-check of
/// the Cramer's-rule estimator.
pub fn fit_linear_model(panel: &TimeSeriesPanel, target: usize, k: usize) -> Result<LinearModelFit> {
    panel.check_index(target)?;
    let y = forward_difference(panel, target, k)?.values;
    let (n, d) = (panel.n(), panel.d());
    let n_eff = n - k;
    if n_eff < d + 2 {
        return Err(InfoFlowError::InsufficientData(format!(
            "n - k = {n_eff} samples, need at least d + 2 = {}",
            d + 2
        )));
    }
    let xs: Vec<&[f64]> = (0..d).map(|j| &panel.series(j)[..n_eff]).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let x_mean: Vec<f64> = xs.iter().map(|x| mean(x)).collect();
    let y_mean = mean(&y);

    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for a in 0..d {
        for b in a..d {
            let s: f64 = xs[a].iter().zip(xs[b]).map(|(p, q)| (p - x_mean[a]) * (q - x_mean[b])).sum();
            gram[(a, b)] = s;
            gram[(b, a)] = s;
        }
        rhs[a] = xs[a].iter().zip(&y).map(|(p, q)| (p - x_mean[a]) * (q - y_mean)).sum();
    }

    let diag_prod: f64 = gram.diagonal().iter().product();
    let det = gram.determinant();
    if gram.diagonal().iter().any(|&v| v <= 0.0) || det.abs() < SINGULAR_RTOL * diag_prod {
        let scale = ((n_eff - 1) as f64).powi(d as i32);
        return Err(InfoFlowError::SingularCovariance {
            det: det / scale,
            threshold: SINGULAR_RTOL * diag_prod / scale,
        });
    }
    let coef = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(InfoFlowError::SingularCovariance { det, threshold: SINGULAR_RTOL * diag_prod })?,
    };
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>();

    let residuals: Vec<f64> =
        (0..n_eff).map(|m| y[m] - intercept - (0..d).map(|j| coef[j] * xs[j][m]).sum::<f64>()).collect();
    let residual_variance = residuals.iter().map(|r| r * r).sum::<f64>() / n_eff as f64;
    let residual_lag1_autocorrelation = lag1_autocorrelation(&residuals);

    Ok(LinearModelFit {
        target,
        intercept,
        coefficients: coef.iter().copied().collect(),
        residual_variance,
        noise_intensity: k as f64 * panel.dt() * residual_variance,
        target_variance: gram[(target, target)] / (n_eff - 1) as f64,
        residual_lag1_autocorrelation,
        k,
        n_eff,
    })
}

fn lag1_autocorrelation(r: &[f64]) -> f64 {
    let m = r.iter().sum::<f64>() / r.len() as f64;
    let den: f64 = r.iter().map(|v| (v - m) * (v - m)).sum();
    if den == 0.0 {
        return 0.0;
    }
    let num: f64 = r.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    num / den
}

/// All pairwise flows, self-influences and fits of a panel.
#[derive(Debug, Clone)]
pub struct FlowMatrix {
    pub labels: Vec<String>,
    /// `flows[target][source]`; the diagonal is `None`.
    pub flows: Vec<Vec<Option<FlowEstimate>>>,
    pub self_influence: Vec<SelfInfluenceEstimate>,
    pub fits: Vec<LinearModelFit>,
    pub covariance: CovarianceSet,
    pub k: usize,
    pub dt: f64,
    pub n_eff: usize,
}

impl FlowMatrix {
    pub fn d(&self) -> usize {
        self.labels.len()
    }

    pub fn flow(&self, source: usize, target: usize) -> Option<&FlowEstimate> {
        self.flows.get(target)?.get(source)?.as_ref()
    }

    /// Iterates over the off-diagonal estimates, row by row (target-major).
    pub fn iter_flows(&self) -> impl Iterator<Item = &FlowEstimate> {
        self.flows.iter().flatten().flatten()
    }
}

pub fn estimate_flow_matrix(panel: &TimeSeriesPanel, k: usize) -> Result<FlowMatrix> {
    let d = panel.d();
    let targets: Vec<usize> = (0..d).collect();
    let cov = CovarianceSet::compute(panel, k, &targets)?;
    cov.ensure_nonsingular()?;

    let per_target: Vec<(Vec<Option<FlowEstimate>>, SelfInfluenceEstimate, LinearModelFit)> = targets
        .par_iter()
        .map(|&i| {
            let row = (0..d)
                .map(|j| {
                    if j == i {
                        return Ok(None);
                    }
                    Ok(Some(FlowEstimate {
                        value: flow_from_covariance(&cov, j, i)?,
                        source: j,
                        target: i,
                        stderr: None,
                        p_value_asymptotic: None,
                        p_value_surrogate: None,
                        normalized: None,
                        k,
                        n_eff: cov.n_eff,
                    }))
                })
                .collect::<Result<Vec<_>>>()?;
            let self_inf = SelfInfluenceEstimate {
                value: self_influence_from_covariance(&cov, i)?,
                target: i,
                stderr: None,
                p_value_asymptotic: None,
                k,
                n_eff: cov.n_eff,
            };
            Ok((row, self_inf, fit_linear_model(panel, i, k)?))
        })
        .collect::<Result<_>>()?;

    let mut flows = Vec::with_capacity(d);
    let mut self_influence = Vec::with_capacity(d);
    let mut fits = Vec::with_capacity(d);
    for (row, s, f) in per_target {
        flows.push(row);
        self_influence.push(s);
        fits.push(f);
    }
    Ok(FlowMatrix {
        labels: panel.labels().to_vec(),
        flows,
        self_influence,
        fits,
        n_eff: cov.n_eff,
        covariance: cov,
        k,
        dt: panel.dt(),
    })
}

/// Relative importance of a flow within the target's entropy budget:
/// `T / (|T| + |dH*_i/dt| + |g_ii / (2 C_ii)|)`.
pub fn normalize_flow(
    flow: &FlowEstimate,
    self_influence: &SelfInfluenceEstimate,
    fit: &LinearModelFit,
) -> Result<f64> {
    if flow.target != self_influence.target || flow.target != fit.target {
        return Err(InfoFlowError::InvalidArgument("flow, self-influence and fit must share the same target".into()));
    }
    if flow.k != self_influence.k || flow.k != fit.k {
        return Err(InfoFlowError::InvalidArgument("flow, self-influence and fit must share the same stride".into()));
    }
    let noise = if fit.target_variance > 0.0 { fit.noise_intensity / (2.0 * fit.target_variance) } else { 0.0 };
    let z = flow.value.abs() + self_influence.value.abs() + noise.abs();
    if z == 0.0 {
        return Err(InfoFlowError::DegenerateNormalizer);
    }
    Ok(flow.value / z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::LinearSDE;
    use crate::simulate::{euler_maruyama, SimulationSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_panel(d: usize, n: usize, seed: u64) -> TimeSeriesPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> =
            (0..d).map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        // mix so that cross covariances are not ~0
        for m in 0..n {
            for j in 1..d {
                rows[j][m] += 0.4 * rows[j - 1][m];
            }
        }
        TimeSeriesPanel::from_rows(rows, 0.05).unwrap()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn zero_sample_covariance_gives_exact_zero() {
        // x1 and x2 exactly orthogonal (and zero mean) over the first n-1 samples
        let x1 = vec![1.0, -1.0, 1.0, -1.0, 0.0];
        let x2 = vec![1.0, 1.0, -1.0, -1.0, 3.0];
        let p = TimeSeriesPanel::from_rows(vec![x1, x2], 1.0).unwrap();
        let cov = CovarianceSet::compute(&p, 1, &[0]).unwrap();
        assert_eq!(cov.c[(0, 1)], 0.0);
        assert_eq!(estimate_flow(&p, 1, 0, 1).unwrap().value, 0.0);
    }

    #[test]
    fn same_pair_rejected() {
        let p = random_panel(2, 50, 1);
        assert!(matches!(estimate_flow(&p, 1, 1, 1), Err(InfoFlowError::InvalidPair(_))));
    }

    #[test]
    fn singular_covariance_rejected() {
        let x: Vec<f64> = (0..40).map(|m| (m as f64 * 0.3).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let p = TimeSeriesPanel::from_rows(vec![x, y], 1.0).unwrap();
        assert!(matches!(estimate_flow(&p, 1, 0, 1), Err(InfoFlowError::SingularCovariance { .. })));
        assert!(matches!(fit_linear_model(&p, 0, 1), Err(InfoFlowError::SingularCovariance { .. })));
    }

    #[test]
    fn exact_linear_data_is_interpolated() {
        // dx1/dt = 2 x1 - x2 with k = 1, dt = 0.01
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 30;
        let x2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut x1 = vec![0.3];
        for m in 0..n - 1 {
            let next = x1[m] + 0.01 * (2.0 * x1[m] - x2[m]);
            x1.push(next);
        }
        let p = TimeSeriesPanel::from_rows(vec![x1, x2], 0.01).unwrap();
        let fit = fit_linear_model(&p, 0, 1).unwrap();
        assert!(rel_close(fit.coefficients[0], 2.0, 1e-8));
        assert!(rel_close(fit.coefficients[1], -1.0, 1e-8));
        let scale = p.series(0).iter().map(|v| v * v).sum::<f64>();
        assert!(fit.residual_variance <= 1e-20 * scale);
    }

    #[test]
    fn ramp_target_has_zero_self_influence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x1: Vec<f64> = (0..50).map(|m| 1.0 + 0.25 * m as f64).collect();
        let x2: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = TimeSeriesPanel::from_rows(vec![x1, x2], 0.5).unwrap();
        let s = estimate_self_influence(&p, 0, 1).unwrap();
        assert!(s.value.abs() < 1e-12, "{}", s.value);
    }

    #[test]
    fn one_dimensional_self_influence_is_ratio() {
        let p = random_panel(1, 200, 6);
        let cov = CovarianceSet::compute(&p, 1, &[0]).unwrap();
        let want = cov.deriv_cross(0).unwrap()[0] / cov.c[(0, 0)];
        let got = estimate_self_influence(&p, 0, 1).unwrap().value;
        assert!(rel_close(got, want, 1e-14));
    }

    #[test]
    fn white_noise_self_influence_near_minus_one() {
        // E[slope of (x[m+1]-x[m]) on x[m]] = -1 for i.i.d. x
        let noise = random_panel(1, 50_000, 12);
        let p = TimeSeriesPanel::from_rows(noise.rows().to_vec(), 1.0).unwrap();
        let s = estimate_self_influence(&p, 0, 1).unwrap().value;
        assert!((s + 1.0).abs() < 0.02, "{s}");
    }

    #[test]
    fn cramer_coefficients_match_regression() {
        for seed in 0..20 {
            let d = 2 + (seed as usize % 5);
            let p = random_panel(d, 400, seed);
            let cov = CovarianceSet::compute(&p, 1, &(0..d).collect::<Vec<_>>()).unwrap();
            for i in 0..d {
                let fit = fit_linear_model(&p, i, 1).unwrap();
                for j in 0..d {
                    assert!(rel_close(cov.drift_coefficient(i, j).unwrap(), fit.coefficients[j], 1e-9));
                }
            }
        }
    }

    #[test]
    fn flow_matrix_shape() {
        let p = random_panel(2, 100, 3);
        let m = estimate_flow_matrix(&p, 1).unwrap();
        assert_eq!(m.iter_flows().count(), 2);
        assert_eq!(m.self_influence.len(), 2);
        assert!(m.flow(0, 0).is_none() && m.flow(1, 1).is_none());
        let single = estimate_flow(&p, 1, 0, 1).unwrap();
        assert_eq!(m.flow(1, 0).unwrap().value, single.value);
    }

    #[test]
    fn normalization_edge_cases() {
        let mk = |value| FlowEstimate {
            value,
            source: 1,
            target: 0,
            stderr: None,
            p_value_asymptotic: None,
            p_value_surrogate: None,
            normalized: None,
            k: 1,
            n_eff: 10,
        };
        let s =
            |value| SelfInfluenceEstimate { value, target: 0, stderr: None, p_value_asymptotic: None, k: 1, n_eff: 10 };
        let fit = |g| LinearModelFit {
            target: 0,
            intercept: 0.0,
            coefficients: vec![0.0, 0.0],
            residual_variance: g,
            noise_intensity: g,
            target_variance: 1.0,
            residual_lag1_autocorrelation: 0.0,
            k: 1,
            n_eff: 10,
        };
        assert_eq!(normalize_flow(&mk(0.0), &s(-1.0), &fit(1.0)).unwrap(), 0.0);
        assert_eq!(normalize_flow(&mk(0.3), &s(0.0), &fit(0.0)).unwrap(), 1.0);
        assert_eq!(normalize_flow(&mk(-0.3), &s(0.0), &fit(0.0)).unwrap(), -1.0);
        assert!(matches!(normalize_flow(&mk(0.0), &s(0.0), &fit(0.0)), Err(InfoFlowError::DegenerateNormalizer)));
        // Z = 0.5 + 1 + 1/(2*1)
        assert_eq!(normalize_flow(&mk(0.5), &s(-1.0), &fit(1.0)).unwrap(), 0.25);
    }

    #[test]
    fn ou_noise_intensity_near_diffusion() {
        let sys =
            LinearSDE::new(vec![0.0], DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let spec = SimulationSpec::new(sys, 200_000, 0.01).with_seed(5);
        let p = euler_maruyama(&spec).unwrap();
        let fit = fit_linear_model(&p, 0, 1).unwrap();
        assert!((fit.noise_intensity - 1.0).abs() < 0.02, "{}", fit.noise_intensity);
        assert!(fit.residual_lag1_autocorrelation.abs() < 0.02);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn flow_equals_regression_coefficient_times_ratio(seed in 0u64..10_000, d in 2usize..6) {
            let p = random_panel(d, 300, seed);
            let cov = CovarianceSet::compute(&p, 1, &(0..d).collect::<Vec<_>>()).unwrap();
            for i in 0..d {
                let fit = fit_linear_model(&p, i, 1).unwrap();
                for j in (0..d).filter(|&j| j != i) {
                    let t = estimate_flow(&p, j, i, 1).unwrap().value;
                    let want = fit.coefficients[j] * cov.c[(i, j)] / cov.c[(i, i)];
                    prop_assert!(rel_close(t, want, 1e-9), "{} vs {}", t, want);
                }
            }
        }

        #[test]
        fn scale_equivariance(seed in 0u64..10_000, c in prop_oneof![-5.0f64..-0.2, 0.2f64..5.0]) {
            let p = random_panel(3, 300, seed);
            let base = estimate_flow(&p, 1, 0, 1).unwrap().value;
            for scaled in [1usize, 0] {
                let row: Vec<f64> = p.series(scaled).iter().map(|v| c * v).collect();
                let q = p.with_series(scaled, row).unwrap();
                let t = estimate_flow(&q, 1, 0, 1).unwrap().value;
                prop_assert!(rel_close(t, base, 1e-9));
            }
        }

        #[test]
        fn offset_invariance(seed in 0u64..10_000, shift in -50.0f64..50.0, which in 0usize..3) {
            let p = random_panel(3, 300, seed);
            let row: Vec<f64> = p.series(which).iter().map(|v| v + shift).collect();
            let q = p.with_series(which, row).unwrap();
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let a = estimate_flow(&p, j, i, 1).unwrap().value;
                let b = estimate_flow(&q, j, i, 1).unwrap().value;
                prop_assert!(rel_close(a, b, 1e-9) || (a - b).abs() < 1e-12);
            }
            let a = estimate_self_influence(&p, which, 1).unwrap().value;
            let b = estimate_self_influence(&q, which, 1).unwrap().value;
            prop_assert!(rel_close(a, b, 1e-9));
        }
    }
}
