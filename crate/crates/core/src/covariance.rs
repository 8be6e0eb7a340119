//! Sample covariances, cofactors, and derivative cross-covariances.
//!
//! Every statistic is computed over the same window: the first `n - k`
//! samples of each series, which is exactly the span covered by the
//! `k`-step forward difference. With this alignment the cofactor formula
//! coincides with the least-squares fit of the differenced target on all
//! series.

use nalgebra::DMatrix;

use crate::error::{InfoFlowError, Result};
use crate::panel::{forward_difference, TimeSeriesPanel};

/// Relative determinant threshold below which `C` is treated as singular:
/// `|det C| < SINGULAR_RTOL * prod(C_ii)`.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Covariance matrix, its determinant and cofactors, and the
/// derivative cross-covariances of the requested targets.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    pub c: DMatrix<f64>,
    pub det: f64,
    pub cofactors: DMatrix<f64>,
    /// `(target i, [C_{j,di} for j in 0..d])`
    deriv_cross: Vec<(usize, Vec<f64>)>,
    /// Drift coefficients per entry of `deriv_cross`.
    drift: Vec<Vec<f64>>,
    pub k: usize,
    pub n_eff: usize,
}

impl CovarianceSet {
    /// Computes `C`, `det C`, cofactors, and the cross-covariances for each target.
    pub fn compute(panel: &TimeSeriesPanel, k: usize, targets: &[usize]) -> Result<Self> {
        if k == 0 {
            return Err(InfoFlowError::InvalidStride { k, n: panel.n() });
        }
        let c = sample_covariance(panel, k)?;
        let (cofactors, det) = cofactor_matrix(&c);
        let deriv_cross = targets
            .iter()
            .map(|&i| derivative_cross_covariance(panel, i, k).map(|v| (i, v)))
            .collect::<Result<Vec<_>>>()?;
        let drift = deriv_cross.iter().map(|(_, r)| cramer_refined(&c, &cofactors, det, r)).collect();
        Ok(Self { c, det, cofactors, deriv_cross, drift, k, n_eff: panel.n() - k })
    }

    pub fn d(&self) -> usize {
        self.c.nrows()
    }

    /// `[C_{j,di}]_j` for target `i`, if it was requested.
    pub fn deriv_cross(&self, i: usize) -> Option<&[f64]> {
        self.deriv_cross.iter().find(|(t, _)| *t == i).map(|(_, v)| v.as_slice())
    }

    /// Threshold on `|det C|` used by [`Self::is_singular`].
    pub fn singular_threshold(&self) -> f64 {
        SINGULAR_RTOL * self.c.diagonal().iter().product::<f64>()
    }

    pub fn is_singular(&self) -> bool {
        self.c.diagonal().iter().any(|&v| v <= 0.0) || self.det.abs() < self.singular_threshold()
    }

    pub fn ensure_nonsingular(&self) -> Result<()> {
        if self.is_singular() {
            Err(InfoFlowError::SingularCovariance { det: self.det, threshold: self.singular_threshold() })
        } else {
            Ok(())
        }
    }

    /// `(1/det C) sum_m Delta_{jm} C_{m,di}`: the fitted drift coefficient of
    /// source `j` in the equation of target `i` (Cramer's rule).
    pub fn drift_coefficient(&self, target: usize, source: usize) -> Result<f64> {
        let pos = self
            .deriv_cross
            .iter()
            .position(|(t, _)| *t == target)
            .ok_or_else(|| InfoFlowError::InvalidArgument(format!("target {target} not in covariance set")))?;
        self.drift[pos].get(source).copied().ok_or(InfoFlowError::IndexOutOfRange { index: source, d: self.d() })
    }

    /// Diagonal entry `j` of `C^{-1}`, i.e. `Delta_jj / det C`.
    pub fn inverse_diagonal(&self, j: usize) -> f64 {
        self.cofactors[(j, j)] / self.det
    }
}

fn check_window(panel: &TimeSeriesPanel, k: usize) -> Result<usize> {
    let (n, d) = (panel.n(), panel.d());
    if k >= n {
        return Err(InfoFlowError::InvalidStride { k, n });
    }
    let n_eff = n - k;
    if n_eff < d + 2 {
        return Err(InfoFlowError::InsufficientData(format!(
            "n - k = {n_eff} samples, need at least d + 2 = {}",
            d + 2
        )));
    }
    Ok(n_eff)
}

// Compensated sums of exact products; an ill-conditioned C amplifies
// plain accumulation error into the flow.
#[derive(Default)]
struct Accumulator {
    sum: f64,
    err: f64,
}

impl Accumulator {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        self.err += if self.sum.abs() >= v.abs() { (self.sum - t) + v } else { (v - t) + self.sum };
        self.sum = t;
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        self.add(p);
        self.err += a.mul_add(b, -p);
    }

    fn value(&self) -> f64 {
        self.sum + self.err
    }
}

fn mean(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut acc = Accumulator::default();
    x.iter().for_each(|&v| acc.add(v));
    let m = acc.value() / n;
    let mut resid = Accumulator::default();
    x.iter().for_each(|&v| resid.add(v - m));
    m + resid.value() / n
}

fn centered_cross(x: &[f64], mx: f64, y: &[f64], my: f64) -> f64 {
    let mut acc = Accumulator::default();
    for (a, b) in x.iter().zip(y) {
        acc.add_product(a - mx, b - my);
    }
    acc.value()
}

fn cramer(cofactors: &DMatrix<f64>, det: f64, r: &[f64]) -> Vec<f64> {
    (0..r.len())
        .map(|j| {
            let mut acc = Accumulator::default();
            cofactors.row(j).iter().zip(r).for_each(|(a, b)| acc.add_product(*a, *b));
            acc.value() / det
        })
        .collect()
}

// Cofactor evaluation followed by one refinement step on the compensated
// residual `r - C x`.
fn cramer_refined(c: &DMatrix<f64>, cofactors: &DMatrix<f64>, det: f64, r: &[f64]) -> Vec<f64> {
    let x = cramer(cofactors, det, r);
    let resid: Vec<f64> = (0..r.len())
        .map(|a| {
            let mut acc = Accumulator::default();
            acc.add(r[a]);
            c.row(a).iter().zip(&x).for_each(|(cab, xb)| acc.add_product(-cab, *xb));
            acc.value()
        })
        .collect();
    x.iter().zip(cramer(cofactors, det, &resid)).map(|(a, b)| a + b).collect()
}

/// Sample covariance matrix (`1/(n_eff - 1)`) over the first `n - k` samples.
///
/// `k = 0` uses the whole panel.
pub fn sample_covariance(panel: &TimeSeriesPanel, k: usize) -> Result<DMatrix<f64>> {
    let n_eff = check_window(panel, k)?;
    let d = panel.d();
    let rows: Vec<&[f64]> = (0..d).map(|j| &panel.series(j)[..n_eff]).collect();
    let means: Vec<f64> = rows.iter().map(|r| mean(r)).collect();
    let norm = 1.0 / (n_eff - 1) as f64;
    let mut c = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let v = centered_cross(rows[a], means[a], rows[b], means[b]) * norm;
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    Ok(c)
}

/// `[cov(X_j, dX_i/dt)]_j` where `dX_i/dt` is the `k`-step forward difference of the target.
pub fn derivative_cross_covariance(panel: &TimeSeriesPanel, target: usize, k: usize) -> Result<Vec<f64>> {
    let n_eff = check_window(panel, k)?;
    let deriv = forward_difference(panel, target, k)?.values;
    let md = mean(&deriv);
    let norm = 1.0 / (n_eff - 1) as f64;
    Ok((0..panel.d())
        .map(|j| {
            let x = &panel.series(j)[..n_eff];
            centered_cross(x, mean(x), &deriv, md) * norm
        })
        .collect())
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "determinant of a non-square matrix");
    let n = m.nrows();
    let mut a = m.clone();
    let mut det = 1.0;
    for col in 0..n {
        let (pivot, pmax) =
            (col..n)
                .map(|r| (r, a[(r, col)].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap_rows(pivot, col);
            det = -det;
        }
        let p = a[(col, col)];
        det *= p;
        for r in col + 1..n {
            let f = a[(r, col)] / p;
            if f != 0.0 {
                for c in col + 1..n {
                    a[(r, c)] -= f * a[(col, c)];
                }
            }
        }
    }
    det
}

/// Cofactor matrix `Delta_ij = (-1)^(i+j) minor(C; i, j)` and `det C`.
///
/// Singular input is allowed; callers check the determinant.
pub fn cofactor_matrix(c: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    assert!(c.is_square(), "cofactors of a non-square matrix");
    let d = c.nrows();
    match d {
        0 => (DMatrix::zeros(0, 0), 1.0),
        1 => (DMatrix::from_element(1, 1, 1.0), c[(0, 0)]),
        2 => {
            let cof = DMatrix::from_row_slice(2, 2, &[c[(1, 1)], -c[(1, 0)], -c[(0, 1)], c[(0, 0)]]);
            (cof, c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)])
        }
        3 => {
            let m = |r: usize, s: usize| c[(r, s)];
            let mut cof = DMatrix::zeros(3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
                    let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
                    // cyclic index order folds the (-1)^(i+j) sign in
                    cof[(i, j)] = m(r0, c0) * m(r1, c1) - m(r0, c1) * m(r1, c0);
                }
            }
            let det = (0..3).map(|j| c[(0, j)] * cof[(0, j)]).sum();
            (cof, det)
        }
        _ => {
            let mut cof = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    let minor = c.clone().remove_row(i).remove_column(j);
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    cof[(i, j)] = sign * determinant(&minor);
                }
            }
            let det = determinant(c);
            (cof, det)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_panel(d: usize, n: usize, seed: u64) -> TimeSeriesPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> =
            (0..d).map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        TimeSeriesPanel::from_rows(rows, 0.1).unwrap()
    }

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &g * g.transpose() + DMatrix::identity(d, d) * 0.5
    }

    /// Sample-major two-pass covariance, written independently of the row-major implementation.
    fn oracle_covariance(panel: &TimeSeriesPanel, n_eff: usize) -> Vec<Vec<f64>> {
        let d = panel.d();
        let mut means = vec![0.0; d];
        for m in 0..n_eff {
            for j in 0..d {
                means[j] += panel.series(j)[m];
            }
        }
        means.iter_mut().for_each(|v| *v /= n_eff as f64);
        let mut c = vec![vec![0.0; d]; d];
        for m in 0..n_eff {
            for a in 0..d {
                for b in 0..d {
                    c[a][b] += (panel.series(a)[m] - means[a]) * (panel.series(b)[m] - means[b]);
                }
            }
        }
        for row in &mut c {
            row.iter_mut().for_each(|v| *v /= (n_eff - 1) as f64);
        }
        c
    }

    /// Gaussian elimination solve, independent of the cofactor route.
    fn gauss_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                let mut row: Vec<f64> = (0..n).map(|c| a[(r, c)]).collect();
                row.push(b[r]);
                row
            })
            .collect();
        for col in 0..n {
            let p = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
            m.swap(col, p);
            for r in 0..n {
                if r != col {
                    let f = m[r][col] / m[col][col];
                    for c in col..=n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
        (0..n).map(|r| m[r][n] / m[r][r]).collect()
    }

    #[test]
    fn identical_series_are_degenerate() {
        let x: Vec<f64> = (0..20).map(|m| (m as f64 * 0.7).sin()).collect();
        let p = TimeSeriesPanel::from_rows(vec![x.clone(), x], 1.0).unwrap();
        let set = CovarianceSet::compute(&p, 1, &[0]).unwrap();
        assert_eq!(set.c[(0, 0)], set.c[(1, 1)]);
        assert_eq!(set.c[(0, 0)], set.c[(0, 1)]);
        assert_eq!(set.det, 0.0);
        assert!(set.is_singular());
        assert!(matches!(set.ensure_nonsingular(), Err(InfoFlowError::SingularCovariance { .. })));
    }

    #[test]
    fn anticorrelated_ramps() {
        let p = TimeSeriesPanel::from_rows(vec![vec![1.0, 2.0, 3.0, 4.0], vec![4.0, 3.0, 2.0, 1.0]], 1.0).unwrap();
        let c = sample_covariance(&p, 0).unwrap();
        assert!((c[(0, 0)] - 5.0 / 3.0).abs() < 1e-15);
        assert!((c[(0, 1)] + 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn covariance_matches_two_pass_oracle() {
        for seed in 0..10 {
            let p = random_panel(3, 500, seed);
            for k in [0, 1, 3] {
                let c = sample_covariance(&p, k).unwrap();
                let o = oracle_covariance(&p, p.n() - k);
                for a in 0..3 {
                    for b in 0..3 {
                        let tol = 1e-12 * o[a][b].abs().max(1e-3);
                        assert!((c[(a, b)] - o[a][b]).abs() < tol, "seed {seed} k {k}");
                    }
                }
            }
        }
    }

    #[test]
    fn insufficient_window() {
        let p = random_panel(3, 5, 1);
        assert!(matches!(sample_covariance(&p, 1), Err(InfoFlowError::InsufficientData(_))));
        assert!(sample_covariance(&p, 0).is_ok());
    }

    #[test]
    fn deriv_cross_of_constant_target_is_zero() {
        let p =
            TimeSeriesPanel::from_rows(vec![vec![2.0; 30], (0..30).map(|m| (m as f64).cos()).collect()], 0.1).unwrap();
        assert!(derivative_cross_covariance(&p, 0, 1).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deriv_cross_of_ramp_target_is_zero() {
        let p = TimeSeriesPanel::from_rows(
            vec![(0..30).map(|m| 0.5 * m as f64).collect(), (0..30).map(|m| (m as f64).cos()).collect()],
            0.1,
        )
        .unwrap();
        for k in 1..4 {
            for v in derivative_cross_covariance(&p, 0, k).unwrap() {
                assert!(v.abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn deriv_cross_matches_naive_loop() {
        let p = random_panel(2, 400, 9);
        let (k, n_eff) = (2, 398);
        let got = derivative_cross_covariance(&p, 0, k).unwrap();
        let x1 = p.series(0);
        let deriv: Vec<f64> = (0..n_eff).map(|m| (x1[m + k] - x1[m]) / (k as f64 * p.dt())).collect();
        let dbar = deriv.iter().sum::<f64>() / n_eff as f64;
        for j in 0..2 {
            let xj = p.series(j);
            let xbar = xj[..n_eff].iter().sum::<f64>() / n_eff as f64;
            let mut s = 0.0;
            for m in 0..n_eff {
                s += (xj[m] - xbar) * (deriv[m] - dbar);
            }
            let want = s / (n_eff - 1) as f64;
            assert!((got[j] - want).abs() < 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn cofactors_closed_form_2x2() {
        let (a, b, c) = (2.0, 0.3, 1.5);
        let (cof, det) = cofactor_matrix(&DMatrix::from_row_slice(2, 2, &[a, b, b, c]));
        assert_eq!(cof, DMatrix::from_row_slice(2, 2, &[c, -b, -b, a]));
        assert_eq!(det, a * c - b * b);
    }

    #[test]
    fn cofactors_of_identity() {
        for d in 1..7 {
            let (cof, det) = cofactor_matrix(&DMatrix::identity(d, d));
            assert_eq!(cof, DMatrix::identity(d, d));
            assert_eq!(det, 1.0);
        }
    }

    #[test]
    fn cofactors_of_1x1() {
        let (cof, det) = cofactor_matrix(&DMatrix::from_element(1, 1, 3.5));
        assert_eq!((cof[(0, 0)], det), (1.0, 3.5));
    }

    #[test]
    fn adjugate_identity_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            for d in 2..=8 {
                let c = random_spd(d, &mut rng);
                let (cof, det) = cofactor_matrix(&c);
                let prod = &c * cof.transpose();
                let scale = det.abs();
                for r in 0..d {
                    for s in 0..d {
                        let want = if r == s { det } else { 0.0 };
                        assert!((prod[(r, s)] - want).abs() <= 1e-9 * scale, "d={d}");
                    }
                }
            }
        }
    }

    #[test]
    fn closed_forms_agree_with_minors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_spd(3, &mut rng);
        let (cof, det) = cofactor_matrix(&c);
        assert!((det - determinant(&c)).abs() < 1e-12 * det.abs());
        for i in 0..3 {
            for j in 0..3 {
                let minor = determinant(&c.clone().remove_row(i).remove_column(j));
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                assert!((cof[(i, j)] - sign * minor).abs() < 1e-12 * det.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cofactor_solve_equals_gaussian_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 2..=8 {
            let c = random_spd(d, &mut rng);
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (cof, det) = cofactor_matrix(&c);
            let x_cof = cof.transpose() * DMatrix::from_column_slice(d, 1, &v) / det;
            let x_ge = gauss_solve(&c, &v);
            for r in 0..d {
                assert!((x_cof[r] - x_ge[r]).abs() <= 1e-9 * x_ge[r].abs().max(1.0));
            }
        }
    }

    #[test]
    fn covariance_invariant_under_offsets() {
        let p = random_panel(3, 300, 5);
        let shifted: Vec<Vec<f64>> =
            p.rows().iter().enumerate().map(|(j, r)| r.iter().map(|v| v + 10.0 * (j as f64 + 1.0)).collect()).collect();
        let q = TimeSeriesPanel::from_rows(shifted, 0.1).unwrap();
        let (a, b) = (sample_covariance(&p, 1).unwrap(), sample_covariance(&q, 1).unwrap());
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn cramer_coefficient_matches_inverse() {
        let p = random_panel(4, 300, 8);
        let set = CovarianceSet::compute(&p, 1, &[2]).unwrap();
        let inv = set.c.clone().try_inverse().unwrap();
        let cross = set.deriv_cross(2).unwrap();
        for j in 0..4 {
            let want: f64 = (0..4).map(|m| inv[(j, m)] * cross[m]).sum();
            let got = set.drift_coefficient(2, j).unwrap();
            assert!((got - want).abs() < 1e-9 * want.abs().max(1e-6));
        }
    }
}
