//! SLOPE and LASSO estimation by accelerated proximal gradient with KKT
//! certification, plus solution-path evaluation over a grid of scales.

use crate::error::{Result, SlopeError};
use crate::numerics::{Matrix, SeededRng, Tolerances, Vector};
use crate::pattern::{patt_with_tol, SlopePattern};
use crate::sorted_l1::{
    cluster_sums, clustered_lambda, prox_sorted_l1, sorted_l1_norm, TuningSequence,
};

/// A SLOPE problem instance; the effective penalty is `J` at `alpha * Lambda`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub x: Matrix,
    pub y: Vector,
    pub lambda: TuningSequence,
    pub alpha: f64,
}

impl Problem {
    pub fn new(x: Matrix, y: Vector, lambda: TuningSequence, alpha: f64) -> Result<Self> {
        if x.nrows() != y.len() || x.ncols() != lambda.len() {
            return Err(SlopeError::DimensionError(format!(
                "design {}x{}, response of length {}, lambda of length {}",
                x.nrows(),
                x.ncols(),
                y.len(),
                lambda.len()
            )));
        }
        if alpha <= 0.0 {
            return Err(SlopeError::DomainError("alpha must be positive".into()));
        }
        Ok(Problem { x, y, lambda, alpha })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub power_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 50_000,
            rel_tol: 1e-10,
            power_iters: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub beta_hat: Vec<f64>,
    pub iterations: usize,
    /// Distance of `X'(Y - X beta)` to the subdifferential, measured as the
    /// larger of the worst cumulative dual-ball violation and the affine-span
    /// residual at the fitted pattern.
    pub kkt_residual: f64,
    pub objective: f64,
    pub converged: bool,
}

fn objective(x: &Matrix, y: &Vector, beta: &[f64], lam_scaled: &TuningSequence) -> f64 {
    let b = Vector::from_column_slice(beta);
    let r = y - x * b;
    0.5 * r.norm_squared() + sorted_l1_norm(beta, lam_scaled).expect("dims checked")
}

/// Worst absolute violation of the subgradient conditions at `beta`:
/// cumulative dual-ball slack of the gradient and, for a nonzero fitted
/// pattern, the affine constraint on the signed cluster sums.
pub fn kkt_violation(
    x: &Matrix,
    y: &Vector,
    beta: &[f64],
    lam_scaled: &TuningSequence,
    pattern_tol: f64,
) -> f64 {
    let b = Vector::from_column_slice(beta);
    let g = x.transpose() * (y - x * b);
    let mut abs_g: Vec<f64> = g.iter().map(|v| v.abs()).collect();
    abs_g.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum_g = 0.0;
    let mut cum_l = 0.0;
    let mut dual_excess = 0.0f64;
    for (v, l) in abs_g.iter().zip(lam_scaled.lambdas()) {
        cum_g += v;
        cum_l += l;
        dual_excess = dual_excess.max(cum_g - cum_l);
    }
    let m = patt_with_tol(beta, pattern_tol).expect("finite iterate");
    if m.is_zero() {
        return dual_excess;
    }
    let sums = cluster_sums(g.as_slice(), &m);
    let lt = clustered_lambda(&m, lam_scaled);
    let affine = sums
        .iter()
        .zip(&lt)
        .map(|(s, l)| (s - l).abs())
        .fold(0.0f64, f64::max);
    dual_excess.max(affine)
}

/// Largest eigenvalue of `X'X` by power iteration (deterministic start).
fn lipschitz_constant(x: &Matrix, iters: usize) -> f64 {
    let p = x.ncols();
    let mut rng = SeededRng::new(0x5105e, 0);
    let mut v = rng.normal_vector(p);
    if v.norm() == 0.0 {
        v = Vector::from_element(p, 1.0);
    }
    v /= v.norm();
    let mut lam = 0.0;
    for _ in 0..iters {
        let w = x.transpose() * (x * &v);
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        lam = v.dot(&w);
        v = w / n;
    }
    lam.max(0.0)
}

/// FISTA with function-value adaptive restart; the KKT residual is the
/// convergence authority, so a converged result certifies optimality.
pub fn solve(prob: &Problem, opts: &SolveOptions, tol: &Tolerances) -> Result<SolverResult> {
    solve_warm(prob, opts, tol, None)
}

pub fn solve_warm(
    prob: &Problem,
    opts: &SolveOptions,
    tol: &Tolerances,
    warm_start: Option<&[f64]>,
) -> Result<SolverResult> {
    let p = prob.x.ncols();
    let lam_scaled = prob.lambda.scaled(prob.alpha)?;
    let xty = prob.x.transpose() * &prob.y;
    let kkt_tol = tol.membership_tol * (1.0 + xty.amax());

    let lip = lipschitz_constant(&prob.x, opts.power_iters);
    if lip <= f64::MIN_POSITIVE {
        // X'X = 0: zero minimizes both terms
        let beta = vec![0.0; p];
        let obj = objective(&prob.x, &prob.y, &beta, &lam_scaled);
        return Ok(SolverResult {
            beta_hat: beta,
            iterations: 0,
            kkt_residual: 0.0,
            objective: obj,
            converged: true,
        });
    }
    let step = 1.0 / lip;
    let step_lam = lam_scaled.scaled(step)?;

    let mut beta: Vec<f64> = warm_start.map(|w| w.to_vec()).unwrap_or_else(|| vec![0.0; p]);
    let mut z = beta.clone();
    let mut t = 1.0f64;
    let mut obj_prev = objective(&prob.x, &prob.y, &beta, &lam_scaled);
    let mut last_kkt = f64::INFINITY;

    for iter in 1..=opts.max_iter {
        let zv = Vector::from_column_slice(&z);
        let grad = prob.x.transpose() * (&prob.y - &prob.x * zv);
        let u: Vec<f64> = z
            .iter()
            .zip(grad.iter())
            .map(|(zi, gi)| zi + step * gi)
            .collect();
        let beta_new = prox_sorted_l1(&u, &step_lam)?;

        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_new;
        let obj_new = objective(&prob.x, &prob.y, &beta_new, &lam_scaled);

        let (t_next, z_next) = if obj_new > obj_prev {
            // restart: drop momentum when the objective went up
            (1.0, beta_new.clone())
        } else {
            let zn: Vec<f64> = beta_new
                .iter()
                .zip(&beta)
                .map(|(bn, bo)| bn + momentum * (bn - bo))
                .collect();
            (t_new, zn)
        };

        let rel_change = beta_new
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
            / (1.0 + beta_new.iter().fold(0.0f64, |m, v| m.max(v.abs())));

        beta = beta_new;
        z = z_next;
        t = t_next;
        obj_prev = obj_prev.min(obj_new);

        if iter % 10 == 0 || rel_change <= opts.rel_tol {
            last_kkt = kkt_violation(&prob.x, &prob.y, &beta, &lam_scaled, tol.pattern_tol);
            if last_kkt <= kkt_tol {
                return Ok(SolverResult {
                    beta_hat: beta,
                    iterations: iter,
                    kkt_residual: last_kkt,
                    objective: obj_new.min(obj_prev),
                    converged: true,
                });
            }
        }
    }
    let last_kkt = if last_kkt.is_finite() {
        last_kkt
    } else {
        kkt_violation(&prob.x, &prob.y, &beta, &lam_scaled, tol.pattern_tol)
    };
    Ok(SolverResult {
        objective: objective(&prob.x, &prob.y, &beta, &lam_scaled),
        beta_hat: beta,
        iterations: opts.max_iter,
        kkt_residual: last_kkt,
        converged: false,
    })
}

/// LASSO as SLOPE with a constant sequence; the prox degenerates to
/// coordinatewise soft-thresholding.
pub fn solve_lasso(
    x: &Matrix,
    y: &Vector,
    lambda_scaled: f64,
    opts: &SolveOptions,
    tol: &Tolerances,
) -> Result<SolverResult> {
    let lam = TuningSequence::constant(lambda_scaled, x.ncols())?;
    let prob = Problem::new(x.clone(), y.clone(), lam, 1.0)?;
    solve(&prob, opts, tol)
}

#[derive(Debug, Clone)]
pub struct PathPoint {
    pub alpha: f64,
    pub result: SolverResult,
    pub pattern: SlopePattern,
}

/// Solve along an increasing grid of scales, warm-starting each point from
/// the previous solution.
pub fn solution_path(
    x: &Matrix,
    y: &Vector,
    lambda: &TuningSequence,
    alphas: &[f64],
    opts: &SolveOptions,
    tol: &Tolerances,
) -> Result<Vec<PathPoint>> {
    if alphas.is_empty() || alphas[0] <= 0.0 || alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SlopeError::DomainError(
            "alpha grid must be positive and increasing".into(),
        ));
    }
    let mut points = Vec::with_capacity(alphas.len());
    let mut warm: Option<Vec<f64>> = None;
    for &alpha in alphas {
        let prob = Problem::new(x.clone(), y.clone(), lambda.clone(), alpha)?;
        let result = solve_warm(&prob, opts, tol, warm.as_deref())?;
        let pattern = patt_with_tol(&result.beta_hat, tol.pattern_tol)?;
        warm = Some(result.beta_hat.clone());
        points.push(PathPoint {
            alpha,
            result,
            pattern,
        });
    }
    Ok(points)
}

/// Fitted pattern at one scale.
pub fn pattern_at(
    x: &Matrix,
    y: &Vector,
    lambda: &TuningSequence,
    alpha: f64,
    opts: &SolveOptions,
    tol: &Tolerances,
) -> Result<SlopePattern> {
    let prob = Problem::new(x.clone(), y.clone(), lambda.clone(), alpha)?;
    let result = solve(&prob, opts, tol)?;
    patt_with_tol(&result.beta_hat, tol.pattern_tol)
}

/// Bisect a pattern change between two scales (the fitted pattern differs at
/// `lo` and `hi`); returns the breakpoint location to `alpha_tol`.
pub fn bisect_breakpoint(
    x: &Matrix,
    y: &Vector,
    lambda: &TuningSequence,
    mut lo: f64,
    mut hi: f64,
    alpha_tol: f64,
    opts: &SolveOptions,
    tol: &Tolerances,
) -> Result<f64> {
    let pattern_lo = pattern_at(x, y, lambda, lo, opts, tol)?;
    while hi - lo > alpha_tol {
        let mid = 0.5 * (lo + hi);
        if pattern_at(x, y, lambda, mid, opts, tol)? == pattern_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sorted_l1::dual_sorted_l1_norm;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn opts() -> SolveOptions {
        SolveOptions::default()
    }

    /// Design with Gram [[1, .6], [.6, 1]].
    fn gram06_design() -> Matrix {
        Matrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 0.8])
    }

    #[test]
    fn zero_response_gives_zero() {
        let x = gram06_design();
        let y = Vector::zeros(2);
        let lam = TuningSequence::strictly_decreasing(vec![4.0, 2.0]).unwrap();
        let prob = Problem::new(x, y, lam, 1.0).unwrap();
        let res = solve(&prob, &opts(), &tol()).unwrap();
        assert!(res.converged);
        assert!(res.beta_hat.iter().all(|b| b.abs() < 1e-10));
    }

    #[test]
    fn orthogonal_design_matches_prox() {
        let mut rng = SeededRng::new(7, 0);
        let n = 12;
        let p = 8;
        let g = rng.normal_matrix(n, p);
        let qr = g.qr();
        let x = qr.q();
        let y = rng.normal_vector(n);
        let lam = crate::lambda_seq::gaussian_order_stat_lambda(p).unwrap();
        let alpha = 0.7;
        let prob = Problem::new(x.clone(), y.clone(), lam.clone(), alpha).unwrap();
        let res = solve(&prob, &opts(), &tol()).unwrap();
        assert!(res.converged);
        let xty = x.transpose() * &y;
        let direct =
            prox_sorted_l1(xty.as_slice(), &lam.scaled(alpha).unwrap()).unwrap();
        for (a, b) in res.beta_hat.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn noiseless_two_cluster_pattern_recovered() {
        let x = gram06_design();
        let beta = Vector::from_vec(vec![5.0, 3.0]);
        let y = &x * beta;
        let lam = TuningSequence::strictly_decreasing(vec![4.0, 2.0]).unwrap();
        let prob = Problem::new(x, y, lam, 0.2).unwrap();
        let res = solve(&prob, &opts(), &tol()).unwrap();
        assert!(res.converged);
        let m = patt_with_tol(&res.beta_hat, tol().pattern_tol).unwrap();
        assert_eq!(m.values(), &[2, 1]);
    }

    #[test]
    fn lasso_scalar_soft_threshold() {
        let x = Matrix::from_element(1, 1, 1.0);
        let y = Vector::from_element(1, 5.0);
        let res = solve_lasso(&x, &y, 2.0, &opts(), &tol()).unwrap();
        assert!(res.converged);
        assert!((res.beta_hat[0] - 3.0).abs() < 1e-8);
        let y0 = Vector::zeros(1);
        let res0 = solve_lasso(&x, &y0, 2.0, &opts(), &tol()).unwrap();
        assert_eq!(res0.beta_hat[0], 0.0);
    }

    #[test]
    fn lasso_matches_constant_slope() {
        let mut rng = SeededRng::new(11, 0);
        let x = rng.normal_matrix(10, 4);
        let y = rng.normal_vector(10);
        let lasso = solve_lasso(&x, &y, 1.5, &opts(), &tol()).unwrap();
        let lam = TuningSequence::constant(1.5, 4).unwrap();
        let prob = Problem::new(x, y, lam, 1.0).unwrap();
        let slope = solve(&prob, &opts(), &tol()).unwrap();
        for (a, b) in lasso.beta_hat.iter().zip(&slope.beta_hat) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn path_patterns_and_zero_threshold() {
        let x = gram06_design();
        let beta = Vector::from_vec(vec![5.0, 0.0]);
        let y = &x * beta;
        let lam = TuningSequence::strictly_decreasing(vec![4.0, 2.0]).unwrap();
        let alphas = vec![0.5, 1.2, 2.0];
        let path = solution_path(&x, &y, &lam, &alphas, &opts(), &tol()).unwrap();
        assert_eq!(path[0].pattern.values(), &[2, 1]);
        assert_eq!(path[1].pattern.values(), &[1, 1]);
        assert!(path[2].pattern.is_zero());
        // zero exactly when alpha clears the dual-norm threshold of X'Y
        let xty = x.transpose() * &y;
        let threshold = dual_sorted_l1_norm(xty.as_slice(), &lam).unwrap();
        assert!(alphas[2] > threshold && alphas[1] < threshold);
    }

    #[test]
    fn objective_dominated_by_reference_points() {
        let mut rng = SeededRng::new(3, 1);
        let x = rng.normal_matrix(15, 5);
        let y = rng.normal_vector(15);
        let lam = crate::lambda_seq::gaussian_order_stat_lambda(5).unwrap();
        let prob = Problem::new(x.clone(), y.clone(), lam.clone(), 1.0).unwrap();
        let res = solve(&prob, &opts(), &tol()).unwrap();
        let scaled = lam.scaled(1.0).unwrap();
        let at_zero = objective(&x, &y, &[0.0; 5], &scaled);
        assert!(res.objective <= at_zero + 1e-9);
        let ls = crate::numerics::pinv(&x, &tol()).unwrap() * &y;
        let at_ls = objective(&x, &y, ls.as_slice(), &scaled);
        assert!(res.objective <= at_ls + 1e-9);
    }
}
