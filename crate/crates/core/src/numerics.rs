//! Shared numerical kernels: pseudo-inverse, projections, normal quantile,
//! multivariate normal sampling and reproducible seeding.

use nalgebra::linalg::SVD;
use nalgebra::{DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SlopeError};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical tolerances threaded through every module.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Relative tolerance for equality of reals.
    pub eq_tol: f64,
    /// Relative SVD rank cutoff (times the largest singular value).
    pub rank_tol: f64,
    /// Cluster/zero detection on numerical solutions.
    pub pattern_tol: f64,
    /// Subdifferential membership slack.
    pub membership_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eq_tol: 1e-9,
            rank_tol: 1e-10,
            pattern_tol: 1e-4,
            membership_tol: 1e-8,
        }
    }
}

/// Counter-based RNG stream: identical `(master_seed, stream_id)` yields
/// identical draws regardless of execution order, so replications can be
/// mapped in parallel deterministically.
#[derive(Debug, Clone)]
pub struct SeededRng {
    pub master_seed: u64,
    pub stream_id: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        SeededRng {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal_vector(&mut self, len: usize) -> Vector {
        Vector::from_fn(len, |_, _| self.standard_normal())
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        // row-major fill so the draw order is independent of storage layout
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.standard_normal();
            }
        }
        m
    }

    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.rng)
    }
}

fn check_finite(a: &Matrix) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SlopeError::InvalidMatrix)
    }
}

/// SVD with an unbounded convergence loop. The stock bounded iteration can
/// stall on exactly rank-deficient inputs and return a factorization that
/// does not reproduce the matrix; a looser zero threshold avoids the stall.
pub fn robust_svd(a: &Matrix, compute_u: bool, compute_v: bool) -> SVD<f64, Dyn, Dyn> {
    SVD::try_new(a.clone(), compute_u, compute_v, 1e-14, 0).expect("unbounded svd converges")
}

/// Moore-Penrose pseudo-inverse via full SVD. Singular values below
/// `rank_tol` times the largest one are treated as zero, so rank-deficient
/// inputs are handled.
pub fn pinv(a: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    check_finite(a)?;
    let svd = robust_svd(a, true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.max();
    let cutoff = tol.rank_tol * smax.max(1e-300);
    let sigma_inv = DVector::from_iterator(
        svd.singular_values.len(),
        svd.singular_values
            .iter()
            .map(|&s| if s > cutoff { 1.0 / s } else { 0.0 }),
    );
    // A+ = V S^-1 U'
    let mut vt_scaled = vt.clone();
    for (i, mut row) in vt_scaled.row_iter_mut().enumerate() {
        row.scale_mut(sigma_inv[i]);
    }
    Ok(vt_scaled.transpose() * u.transpose())
}

/// Orthogonal projection onto the column space of `a`: `P = A A+`.
pub fn projector(a: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    let ap = pinv(a, tol)?;
    let p = a * ap;
    // symmetrize to kill roundoff skew
    Ok((&p + p.transpose()) * 0.5)
}

/// Whether `v` lies in the column space of `a`, tested through the residual
/// of the orthogonal projection.
pub fn in_col_space(v: &Vector, a: &Matrix, tol: &Tolerances) -> Result<bool> {
    if v.len() != a.nrows() {
        return Err(SlopeError::DimensionError(format!(
            "vector of length {} vs matrix with {} rows",
            v.len(),
            a.nrows()
        )));
    }
    let ap = pinv(a, tol)?;
    let residual = v - a * (ap * v);
    let vmax = v.amax();
    Ok(residual.amax() <= tol.eq_tol * (1.0 + vmax))
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile, rational approximation (Acklam) polished by one
/// Newton step on the exact CDF; absolute accuracy well below 1e-9.
pub fn std_normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(SlopeError::DomainError(format!(
            "quantile argument {u} outside (0,1)"
        )));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if u < P_LOW {
        let q = (-2.0 * u.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if u <= 1.0 - P_LOW {
        let q = u - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - u).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    let pdf = std_normal_pdf(x);
    if pdf > 0.0 {
        Ok(x - (std_normal_cdf(x) - u) / pdf)
    } else {
        Ok(x)
    }
}

/// Symmetric square root of a PSD matrix via eigendecomposition; negative
/// eigenvalues from roundoff are clamped to zero. The recovery covariances
/// are singular by construction, so a Cholesky factor would not exist.
pub fn psd_sqrt(cov: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    check_finite(cov)?;
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(SlopeError::InvalidCovariance);
    }
    let scale = cov.amax().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-8 * scale {
                return Err(SlopeError::InvalidCovariance);
            }
        }
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let lam_max = eig.eigenvalues.max().max(0.0);
    let cutoff = tol.rank_tol * lam_max;
    let sqrt_vals = DVector::from_iterator(
        n,
        eig.eigenvalues
            .iter()
            .map(|&l| if l > cutoff { l.sqrt() } else { 0.0 }),
    );
    let mut q_scaled = eig.eigenvectors.clone();
    for (j, mut col) in q_scaled.column_iter_mut().enumerate() {
        col.scale_mut(sqrt_vals[j]);
    }
    Ok(q_scaled * eig.eigenvectors.transpose())
}

/// Draw `mean + L z` with `L` a symmetric square root of `cov` and `z`
/// i.i.d. standard normal.
pub fn mvn_sample(mean: &Vector, cov: &Matrix, rng: &mut SeededRng, tol: &Tolerances) -> Result<Vector> {
    if mean.len() != cov.nrows() {
        return Err(SlopeError::DimensionError(format!(
            "mean of length {} vs {}x{} covariance",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let l = psd_sqrt(cov, tol)?;
    let z = rng.normal_vector(mean.len());
    Ok(mean + l * z)
}
