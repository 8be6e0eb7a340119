//! Closed-form ground truth for linear stochastic systems
//! `dX = (f + A X) dt + B dW`.
//!
//! For a Hurwitz-stable drift the stationary covariance solves the
//! Lyapunov equation `A S + S A^T + B B^T = 0`, and the information flow
//! from `X_j` to `X_i` is `a_ij * s_ij / s_ii`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{InfoFlowError, Result};

/// Eigenvalues with real part above this are treated as not strictly stable.
pub const HURWITZ_TOL: f64 = -1e-10;

/// Linear SDE with constant drift and diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSDE {
    f: Vec<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

/// On-disk system description: `{"f": [...], "A": [[...]], "B": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(default)]
    pub f: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(InfoFlowError::DimensionMismatch(format!("{what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl LinearSDE {
    pub fn new(f: Vec<f64>, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || !a.is_square() {
            return Err(InfoFlowError::DimensionMismatch("A must be a non-empty square matrix".into()));
        }
        if f.len() != d {
            return Err(InfoFlowError::DimensionMismatch(format!("f has length {}, expected {d}", f.len())));
        }
        if b.nrows() != d || b.ncols() == 0 {
            return Err(InfoFlowError::DimensionMismatch(format!(
                "B is {}x{}, expected {d} rows",
                b.nrows(),
                b.ncols()
            )));
        }
        if f.iter().chain(a.iter()).chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(InfoFlowError::InvalidArgument("system coefficients must be finite".into()));
        }
        Ok(Self { f, a, b })
    }

    /// `f = 0`, `B = I`.
    pub fn with_unit_noise(a: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        Self::new(vec![0.0; d], a, DMatrix::identity(d, d))
    }

    pub fn from_file(file: &SystemFile) -> Result<Self> {
        let a = matrix_from_rows(&file.a, "A")?;
        let b = matrix_from_rows(&file.b, "B")?;
        let f = if file.f.is_empty() { vec![0.0; a.nrows()] } else { file.f.clone() };
        Self::new(f, a, b)
    }

    pub fn to_file(&self) -> SystemFile {
        SystemFile { f: self.f.clone(), a: matrix_to_rows(&self.a), b: matrix_to_rows(&self.b) }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn d(&self) -> usize {
        self.a.nrows()
    }

    /// Number of independent Wiener processes.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `G = B B^T`; its diagonal holds the noise intensities `g_ii`.
    pub fn diffusion(&self) -> DMatrix<f64> {
        &self.b * self.b.transpose()
    }

    /// Largest real part among the eigenvalues of `A`.
    pub fn max_real_eigenvalue(&self) -> f64 {
        self.a.clone().complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_hurwitz(&self) -> bool {
        self.max_real_eigenvalue() < HURWITZ_TOL
    }

    pub fn ensure_hurwitz(&self) -> Result<()> {
        let max_real = self.max_real_eigenvalue();
        if max_real < HURWITZ_TOL {
            Ok(())
        } else {
            Err(InfoFlowError::NotHurwitz { max_real })
        }
    }

    /// Directed edges `(source, target)` with `a_target,source != 0`.
    pub fn cross_edges(&self) -> Vec<(usize, usize)> {
        let d = self.d();
        let mut edges = Vec::new();
        for j in 0..d {
            for i in 0..d {
                if i != j && self.a[(i, j)] != 0.0 {
                    edges.push((j, i));
                }
            }
        }
        edges
    }
}

/// Population covariance of the stationary distribution.
#[derive(Debug, Clone)]
pub struct StationaryCovariance {
    pub sigma: DMatrix<f64>,
    /// `max |A S + S A^T + B B^T|`.
    pub residual: f64,
    pub conditioning_warning: Option<String>,
}

/// Solves `A S + S A^T + B B^T = 0` by Kronecker vectorization.
pub fn stationary_covariance(sys: &LinearSDE) -> Result<StationaryCovariance> {
    sys.ensure_hurwitz()?;
    let d = sys.d();
    let a = sys.a();
    let g = sys.diffusion();
    if g.iter().all(|&v| v == 0.0) {
        return Ok(StationaryCovariance { sigma: DMatrix::zeros(d, d), residual: 0.0, conditioning_warning: None });
    }

    // column-major vec: vec(A S) = (I kron A) vec S, vec(S A^T) = (A kron I) vec S
    let eye = DMatrix::<f64>::identity(d, d);
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let lu = op.lu();
    let u_diag: Vec<f64> = {
        let u = lu.u();
        (0..d * d).map(|r| u[(r, r)].abs()).collect()
    };
    let (umin, umax) = u_diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let conditioning_warning =
        (umin < 1e-12 * umax).then(|| format!("Lyapunov operator is ill-conditioned (pivot ratio {:e})", umin / umax));

    let solve = |rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let v = nalgebra::DVector::from_column_slice(rhs.as_slice());
        let x = lu.solve(&v).ok_or(InfoFlowError::NotHurwitz { max_real: 0.0 })?;
        let s = DMatrix::from_column_slice(d, d, x.as_slice());
        Ok((&s + s.transpose()) * 0.5)
    };
    let residual_of = |s: &DMatrix<f64>| a * s + s * a.transpose() + &g;

    let mut sigma = solve(&(-&g))?;
    // one step of iterative refinement
    let r = residual_of(&sigma);
    sigma -= solve(&r)?;
    let residual = residual_of(&sigma).amax();
    Ok(StationaryCovariance { sigma, residual, conditioning_warning })
}

/// `T_{source -> target} = a_ij s_ij / s_ii` with `i = target`, `j = source`.
pub fn analytic_flow(sys: &LinearSDE, sigma: &DMatrix<f64>, source: usize, target: usize) -> Result<f64> {
    let d = sys.d();
    for idx in [source, target] {
        if idx >= d {
            return Err(InfoFlowError::IndexOutOfRange { index: idx, d });
        }
    }
    if source == target {
        return Err(InfoFlowError::InvalidPair("source equals target".into()));
    }
    let s_ii = sigma[(target, target)];
    if s_ii <= 0.0 {
        return Err(InfoFlowError::DegenerateComponent(target));
    }
    Ok(sys.a()[(target, source)] * sigma[(target, source)] / s_ii)
}

/// Applies `Y = P X` where `P` is the identity on components `i` and `j`
/// and `m` on the remaining components (taken in ascending order).
pub fn transform_other_components(sys: &LinearSDE, i: usize, j: usize, m: &DMatrix<f64>) -> Result<LinearSDE> {
    let d = sys.d();
    if d < 3 {
        return Err(InfoFlowError::InvalidTransform("need at least 3 components".into()));
    }
    if i >= d || j >= d || i == j {
        return Err(InfoFlowError::InvalidTransform(format!("invalid kept pair ({i}, {j})")));
    }
    if m.nrows() != d - 2 || m.ncols() != d - 2 {
        return Err(InfoFlowError::InvalidTransform(format!(
            "transform must be {0}x{0}, got {1}x{2}",
            d - 2,
            m.nrows(),
            m.ncols()
        )));
    }
    let others: Vec<usize> = (0..d).filter(|&c| c != i && c != j).collect();
    let mut p = DMatrix::<f64>::identity(d, d);
    for (r, &or) in others.iter().enumerate() {
        for (c, &oc) in others.iter().enumerate() {
            p[(or, oc)] = m[(r, c)];
        }
    }
    let p_inv = p
        .clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| InfoFlowError::InvalidTransform("transform matrix is singular".into()))?;
    let f = &p * nalgebra::DVector::from_column_slice(sys.f());
    LinearSDE::new(f.iter().copied().collect(), &p * sys.a() * p_inv, &p * sys.b())
}
