//! Exact pattern-recovery certificates, irrepresentability diagnostics,
//! noiseless recovery, minimal-scale search and the geometric intersection
//! check.

use crate::error::{Result, SlopeError};
use crate::numerics::{in_col_space, pinv, robust_svd, Matrix, Tolerances, Vector};
use crate::pattern::{patt, reduce, synthesize, ClusterReduction, SlopePattern};
use crate::sorted_l1::{
    dual_sorted_l1_norm, in_relative_interior, subdiff_membership, TuningSequence,
};

/// Limiting Gaussian of the scaled gradient certificate when the averaged
/// Gram converges to `C`: mean `C U (U'CU)^+ Lambda~` and covariance
/// `sigma^2 [C - C U (U'CU)^+ U'C]`.
#[derive(Debug, Clone)]
pub struct AsymptoticSpec {
    pub c: Matrix,
    pub pattern: SlopePattern,
    pub lambda: TuningSequence,
    pub z_mean: Vector,
    pub z_cov: Matrix,
}

impl AsymptoticSpec {
    pub fn new(
        c: Matrix,
        pattern: SlopePattern,
        lambda: TuningSequence,
        sigma: f64,
        tol: &Tolerances,
    ) -> Result<Self> {
        let p = pattern.len();
        if c.nrows() != p || c.ncols() != p {
            return Err(SlopeError::DimensionError(format!(
                "limit Gram is {}x{} but the pattern has length {p}",
                c.nrows(),
                c.ncols()
            )));
        }
        if lambda.len() != p {
            return Err(SlopeError::DimensionError(format!(
                "tuning sequence has length {} but the pattern has length {p}",
                lambda.len()
            )));
        }
        if pattern.is_zero() {
            return Err(SlopeError::EmptyPattern);
        }
        if sigma < 0.0 {
            return Err(SlopeError::DomainError("sigma must be nonnegative".into()));
        }
        let u = crate::pattern::pattern_matrix(&pattern)?;
        let lam_tilde = Vector::from_vec(crate::sorted_l1::clustered_lambda(&pattern, &lambda));
        let g = u.transpose() * &c * &u;
        let g_pinv = pinv(&g, tol)?;
        let cu = &c * &u;
        let z_mean = &cu * (&g_pinv * &lam_tilde);
        let mut z_cov = (&c - &cu * &g_pinv * cu.transpose()) * (sigma * sigma);
        // symmetrize against roundoff so the square root is well defined
        z_cov = (&z_cov + z_cov.transpose()) * 0.5;
        Ok(AsymptoticSpec {
            c,
            pattern,
            lambda,
            z_mean,
            z_cov,
        })
    }
}

/// Family of signal vectors with a growing minimal gap: for gap `delta`,
/// coordinate `i` of the cluster-value vector is
/// `s_base_i + (k + 1 - i) * delta`, so all consecutive differences (with a
/// trailing zero) are at least `delta`.
#[derive(Debug, Clone)]
pub struct SignalSequenceSpec {
    pub pattern: SlopePattern,
    pub s_base: Vec<f64>,
}

impl SignalSequenceSpec {
    pub fn new(pattern: SlopePattern, s_base: Vec<f64>) -> Result<Self> {
        if pattern.is_zero() {
            return Err(SlopeError::EmptyPattern);
        }
        if s_base.len() != pattern.num_clusters() {
            return Err(SlopeError::DimensionError(format!(
                "base values have length {} but the pattern has {} clusters",
                s_base.len(),
                pattern.num_clusters()
            )));
        }
        synthesize(&pattern, &s_base)?;
        Ok(SignalSequenceSpec { pattern, s_base })
    }

    /// Cluster values at gap `delta`; strictly decreasing with margin
    /// at least `delta` beyond the base margins.
    pub fn cluster_values(&self, delta: f64) -> Vec<f64> {
        let k = self.s_base.len();
        self.s_base
            .iter()
            .enumerate()
            .map(|(i, &s)| s + (k - i) as f64 * delta)
            .collect()
    }

    /// The full coefficient vector at gap `delta`.
    pub fn signal(&self, delta: f64) -> Vec<f64> {
        synthesize(&self.pattern, &self.cluster_values(delta)).expect("valid by construction")
    }
}

/// Outcome of the exact recovery test at one `(Y, alpha)`.
#[derive(Debug, Clone)]
pub struct RecoveryCertificate {
    pub pattern: SlopePattern,
    /// Cluster values solving the positivity condition, when it holds.
    pub s: Option<Vec<f64>>,
    pub positivity_ok: bool,
    /// Margin of the strict decrease/positivity chain; negative when violated.
    pub positivity_margin: f64,
    /// The gradient certificate vector.
    pub pi: Vec<f64>,
    pub subdiff_ok: bool,
    /// Slack of the binding subdifferential condition; negative means inside.
    pub subdiff_margin: f64,
    /// `J*` of `pi` with respect to the scaled sequence.
    pub dual_value: f64,
    pub open_ir_ok: bool,
    pub kernel_trivial: bool,
}

impl RecoveryCertificate {
    pub fn recovered(&self) -> bool {
        self.positivity_ok && self.subdiff_ok
    }

    /// The certified minimizer `U_M s` when both conditions hold.
    pub fn beta_hat(&self) -> Option<Vec<f64>> {
        if !self.recovered() {
            return None;
        }
        let s = self.s.as_ref()?;
        synthesize(&self.pattern, s).ok()
    }

    /// Distance of the closest condition to its boundary; used to classify
    /// near-boundary verdicts.
    pub fn boundary_distance(&self) -> f64 {
        self.positivity_margin.abs().min(self.subdiff_margin.abs())
    }

    /// Flat key-value record for CSV emission.
    pub fn record(&self) -> Vec<(&'static str, String)> {
        vec![
            ("pattern", self.pattern.to_string()),
            ("positivity", (self.positivity_ok as u8).to_string()),
            ("subdiff", (self.subdiff_ok as u8).to_string()),
            ("recovered", (self.recovered() as u8).to_string()),
            ("dual_value", format!("{:.17e}", self.dual_value)),
            (
                "positivity_margin",
                format!("{:.17e}", self.positivity_margin),
            ),
            ("subdiff_margin", format!("{:.17e}", self.subdiff_margin)),
            ("open_ir", (self.open_ir_ok as u8).to_string()),
            ("kernel_trivial", (self.kernel_trivial as u8).to_string()),
        ]
    }
}

/// `pi = X'(X~')+ (alpha Lambda~) + X'(I - P~) Y` off a cached reduction.
pub fn pi_vector_cached(
    x: &Matrix,
    y: &Vector,
    red: &ClusterReduction,
    alpha: f64,
) -> Vector {
    let mean_part = red.xt_pinv() * (&red.lambda_tilde * alpha);
    let residual = red.apply_residual_projection(y);
    x.transpose() * (mean_part + residual)
}

pub fn pi_vector(
    x: &Matrix,
    y: &Vector,
    m: &SlopePattern,
    lambda: &TuningSequence,
    alpha: f64,
    tol: &Tolerances,
) -> Result<Vector> {
    let red = reduce(x, lambda, m, tol)?;
    Ok(pi_vector_cached(x, y, &red, alpha))
}

fn isotonic_nonincreasing(v: &[f64]) -> Vec<f64> {
    let mut sums: Vec<f64> = Vec::with_capacity(v.len());
    let mut counts: Vec<usize> = Vec::with_capacity(v.len());
    for &x in v {
        let mut sum = x;
        let mut count = 1usize;
        while let (Some(&ps), Some(&pc)) = (sums.last(), counts.last()) {
            if ps / pc as f64 <= sum / count as f64 {
                sum += ps;
                count += pc;
                sums.pop();
                counts.pop();
            } else {
                break;
            }
        }
        sums.push(sum);
        counts.push(count);
    }
    let mut out = Vec::with_capacity(v.len());
    for (sum, count) in sums.iter().zip(&counts) {
        for _ in 0..*count {
            out.push(sum / *count as f64);
        }
    }
    out
}

/// Margin of membership in the strictly-decreasing positive cone:
/// `min(s_1 - s_2, ..., s_{k-1} - s_k, s_k)`.
fn decreasing_cone_margin(s: &[f64]) -> f64 {
    let mut margin = *s.last().expect("nonempty");
    for w in s.windows(2) {
        margin = margin.min(w[0] - w[1]);
    }
    margin
}

/// Projection onto `{s : s_i - s_{i+1} >= delta, s_k >= delta}` by shifting,
/// isotonic regression and clamping.
fn project_decreasing_cone(v: &[f64], delta: f64) -> Vec<f64> {
    let k = v.len();
    let shifted: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(i, &x)| x - (k - i) as f64 * delta)
        .collect();
    let iso = isotonic_nonincreasing(&shifted);
    iso.iter()
        .enumerate()
        .map(|(i, &u)| u.max(0.0) + (k - i) as f64 * delta)
        .collect()
}

struct PositivityOutcome {
    ok: bool,
    s: Option<Vec<f64>>,
    margin: f64,
    kernel_trivial: bool,
}

/// Solve the positivity condition `X~'Y - alpha Lambda~ = X~'X~ s` for a
/// strictly decreasing positive `s`. With a nontrivial kernel the affine
/// solution set is searched by alternating projections (Dykstra) between
/// the solution space and the margin-shifted cone.
fn positivity(
    y: &Vector,
    red: &ClusterReduction,
    alpha: f64,
    tol: &Tolerances,
) -> PositivityOutcome {
    let k = red.pattern.num_clusters();
    let gram = red.x_tilde.transpose() * &red.x_tilde;
    let rhs = red.x_tilde.transpose() * y - &red.lambda_tilde * alpha;

    let svd = robust_svd(&gram, true, true);
    let smax = svd.singular_values.max();
    let cutoff = tol.rank_tol * smax.max(1e-300);
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let kernel_trivial = rank == k;

    let gram_pinv = pinv(&gram, tol).expect("finite gram");
    let s0 = &gram_pinv * &rhs;

    if kernel_trivial {
        let margin = decreasing_cone_margin(s0.as_slice());
        let ok = margin > tol.eq_tol;
        return PositivityOutcome {
            ok,
            s: ok.then(|| s0.as_slice().to_vec()),
            margin,
            kernel_trivial,
        };
    }

    // consistency of the linear system
    let consistency = (&gram * &s0 - &rhs).amax();
    if consistency > tol.eq_tol * (1.0 + rhs.amax()) {
        return PositivityOutcome {
            ok: false,
            s: None,
            margin: -consistency,
            kernel_trivial,
        };
    }

    // orthonormal kernel basis of the gram matrix
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let kernel_dim = k - rank;
    let mut basis = Matrix::zeros(k, kernel_dim);
    let mut col = 0usize;
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv <= cutoff {
            basis.set_column(col, &v_t.row(i).transpose());
            col += 1;
        }
    }
    for i in rank..svd.singular_values.len().min(k) {
        // remaining directions beyond the listed singular values (wide SVD)
        let _ = i;
    }

    let delta = tol.eq_tol;
    let project_affine = |v: &[f64]| -> Vec<f64> {
        let d = Vector::from_column_slice(v) - &s0;
        let proj = &s0 + &basis * (basis.transpose() * d);
        proj.as_slice().to_vec()
    };

    // Dykstra's alternating projections
    let mut xcur: Vec<f64> = s0.as_slice().to_vec();
    let mut p_corr = vec![0.0; k];
    let mut q_corr = vec![0.0; k];
    let mut feasible = None;
    for _ in 0..5000 {
        let input_a: Vec<f64> = xcur.iter().zip(&p_corr).map(|(a, b)| a + b).collect();
        let ya = project_affine(&input_a);
        for i in 0..k {
            p_corr[i] = input_a[i] - ya[i];
        }
        let input_c: Vec<f64> = ya.iter().zip(&q_corr).map(|(a, b)| a + b).collect();
        let xc = project_decreasing_cone(&input_c, delta);
        for i in 0..k {
            q_corr[i] = input_c[i] - xc[i];
        }
        let gap = xc
            .iter()
            .zip(&ya)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        xcur = xc;
        if gap <= tol.eq_tol * (1.0 + xcur.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            feasible = Some(xcur.clone());
            break;
        }
    }

    match feasible {
        Some(s) => {
            let margin = decreasing_cone_margin(&s);
            let ok = margin > 0.5 * delta;
            PositivityOutcome {
                ok,
                s: ok.then_some(s),
                margin,
                kernel_trivial,
            }
        }
        None => PositivityOutcome {
            ok: false,
            s: None,
            margin: decreasing_cone_margin(&xcur),
            kernel_trivial,
        },
    }
}

/// Positivity condition alone; returns the flag and the witness `s`.
pub fn positivity_condition(
    x: &Matrix,
    y: &Vector,
    m: &SlopePattern,
    lambda: &TuningSequence,
    alpha: f64,
    tol: &Tolerances,
) -> Result<(bool, Option<Vec<f64>>)> {
    let red = reduce(x, lambda, m, tol)?;
    let out = positivity(y, &red, alpha, tol);
    Ok((out.ok, out.s))
}

/// Full exact-recovery test: positivity plus subdifferential membership of
/// the gradient certificate, off a cached reduction.
pub fn check_recovery_cached(
    x: &Matrix,
    y: &Vector,
    red: &ClusterReduction,
    lambda: &TuningSequence,
    alpha: f64,
    tol: &Tolerances,
) -> Result<RecoveryCertificate> {
    let pos = positivity(y, red, alpha, tol);
    let pi = pi_vector_cached(x, y, red, alpha);
    let lam_scaled = lambda.scaled(alpha)?;
    let query = subdiff_membership(pi.as_slice(), &red.pattern, &lam_scaled, tol)?;
    let ir = irrepresentability(x, &red.pattern, lambda, tol)?;
    let open_ir = open_irrepresentability_from(&ir, &red.pattern, lambda, tol)?;
    Ok(RecoveryCertificate {
        pattern: red.pattern.clone(),
        s: pos.s,
        positivity_ok: pos.ok,
        positivity_margin: pos.margin,
        pi: pi.as_slice().to_vec(),
        subdiff_ok: query.member,
        subdiff_margin: query.margin(),
        dual_value: query.dual_value,
        open_ir_ok: open_ir,
        kernel_trivial: pos.kernel_trivial,
    })
}

/// As [`check_recovery_cached`] but taking the target as a vector or
/// pattern; the target pattern must be nonzero (a zero target is tested by
/// the dual-norm threshold of `X'Y` instead).
pub fn check_recovery(
    x: &Matrix,
    y: &Vector,
    m: &SlopePattern,
    lambda: &TuningSequence,
    alpha: f64,
    tol: &Tolerances,
) -> Result<RecoveryCertificate> {
    let red = reduce(x, lambda, m, tol)?;
    check_recovery_cached(x, y, &red, lambda, alpha, tol)
}

pub fn check_recovery_for_vector(
    x: &Matrix,
    y: &Vector,
    beta: &[f64],
    lambda: &TuningSequence,
    alpha: f64,
    tol: &Tolerances,
) -> Result<RecoveryCertificate> {
    check_recovery(x, y, &patt(beta)?, lambda, alpha, tol)
}

/// Whether the zero pattern is a solution: `J*_{alpha Lambda}(X'Y) <= 1`.
pub fn zero_pattern_recovered(
    x: &Matrix,
    y: &Vector,
    lambda: &TuningSequence,
    alpha: f64,
    tol: &Tolerances,
) -> Result<bool> {
    let xty = x.transpose() * y;
    let dual = dual_sorted_l1_norm(xty.as_slice(), &lambda.scaled(alpha)?)?;
    Ok(dual <= 1.0 + tol.membership_tol)
}

#[derive(Debug, Clone)]
pub struct IrrepresentabilityReport {
    pub holds: bool,
    /// `J*_Lambda` of the noiseless certificate vector.
    pub dual_value: f64,
    /// Whether `Lambda~` lies in `col(X~')`.
    pub col_ok: bool,
    /// The vector `X'(X~')+ Lambda~`.
    pub pi_bar: Vec<f64>,
}

/// The noiseless recovery criterion: dual-norm bound on `X'(X~')+ Lambda~`
/// together with the column-space inclusion of the clustered parameter.
pub fn irrepresentability(
    x: &Matrix,
    m: &SlopePattern,
    lambda: &TuningSequence,
    tol: &Tolerances,
) -> Result<IrrepresentabilityReport> {
    let red = reduce(x, lambda, m, tol)?;
    let pi_bar = x.transpose() * (red.xt_pinv() * &red.lambda_tilde);
    let dual_value = dual_sorted_l1_norm(pi_bar.as_slice(), lambda)?;
    let back = red.x_tilde.transpose() * (red.xt_pinv() * &red.lambda_tilde);
    let col_ok = (back - &red.lambda_tilde).amax() <= tol.eq_tol * (1.0 + red.lambda_tilde.amax());
    Ok(IrrepresentabilityReport {
        holds: dual_value <= 1.0 + tol.membership_tol && col_ok,
        dual_value,
        col_ok,
        pi_bar: pi_bar.as_slice().to_vec(),
    })
}

fn open_irrepresentability_from(
    ir: &IrrepresentabilityReport,
    m: &SlopePattern,
    lambda: &TuningSequence,
    tol: &Tolerances,
) -> Result<bool> {
    if !ir.holds {
        return Ok(false);
    }
    in_relative_interior(&ir.pi_bar, m, lambda, tol)
}

/// Open variant: the certificate vector sits in the relative interior, so
/// the count of tight cumulative sums equals the number of clusters.
pub fn open_irrepresentability(
    x: &Matrix,
    m: &SlopePattern,
    lambda: &TuningSequence,
    tol: &Tolerances,
) -> Result<bool> {
    let ir = irrepresentability(x, m, lambda, tol)?;
    open_irrepresentability_from(&ir, m, lambda, tol)
}

/// Noiseless recovery flag plus an estimate of the scale ceiling `alpha_0`
/// (the supremum of scales at which the positivity condition holds on
/// `Y = X beta`), found by doubling and bisection.
pub fn noiseless_recovery(
    x: &Matrix,
    beta: &[f64],
    lambda: &TuningSequence,
    tol: &Tolerances,
) -> Result<(bool, Option<f64>)> {
    let m = patt(beta)?;
    if m.is_zero() {
        return Err(SlopeError::EmptyPattern);
    }
    let ir = irrepresentability(x, &m, lambda, tol)?;
    if !ir.holds {
        return Ok((false, None));
    }
    let red = reduce(x, lambda, &m, tol)?;
    let y = x * Vector::from_column_slice(beta);
    let holds = |alpha: f64| positivity(&y, &red, alpha, tol).ok;

    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut doublings = 0;
    while holds(hi) {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Ok((true, Some(f64::INFINITY)));
        }
    }
    while hi - lo > 1e-4 * hi.max(1e-12) {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((true, Some(0.5 * (lo + hi))))
}

/// Certificate for LASSO sign recovery at a scalar penalty.
#[derive(Debug, Clone)]
pub struct LassoCertificate {
    pub positivity_ok: bool,
    pub subdiff_ok: bool,
    pub kappa: Option<Vec<f64>>,
    /// The l1-subdifferential candidate vector.
    pub v: Vec<f64>,
}

impl LassoCertificate {
    pub fn recovered(&self) -> bool {
        self.positivity_ok && self.subdiff_ok
    }
}

/// Signed selection matrix for a sign vector: columns of `diag(S)`
/// restricted to the support.
fn sign_matrix(s: &[i8], p: usize) -> Result<(Matrix, Vec<usize>)> {
    let support: Vec<usize> = s
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, _)| i)
        .collect();
    if support.is_empty() {
        return Err(SlopeError::EmptyPattern);
    }
    let mut u = Matrix::zeros(p, support.len());
    for (j, &i) in support.iter().enumerate() {
        u[(i, j)] = s[i] as f64;
    }
    Ok((u, support))
}

/// Exact sign-recovery test for the LASSO at penalty `lambda_scaled`.
pub fn lasso_sign_conditions(
    x: &Matrix,
    y: &Vector,
    s: &[i8],
    lambda_scaled: f64,
    tol: &Tolerances,
) -> Result<LassoCertificate> {
    if s.len() != x.ncols() {
        return Err(SlopeError::DimensionError(
            "sign vector length differs from the number of columns".into(),
        ));
    }
    if lambda_scaled <= 0.0 {
        return Err(SlopeError::DomainError("penalty must be positive".into()));
    }
    let (u, support) = sign_matrix(s, x.ncols())?;
    let k = support.len();
    let x_s = x * &u;
    let x_s_pinv = pinv(&x_s, tol)?;

    // positivity: X~'Y - lambda 1 = X~'X~ kappa with kappa > 0
    let gram = x_s.transpose() * &x_s;
    let rhs = x_s.transpose() * y - Vector::from_element(k, lambda_scaled);
    let gram_pinv = pinv(&gram, tol)?;
    let kappa0 = &gram_pinv * &rhs;
    let svd_rank = {
        let svd = robust_svd(&gram, false, false);
        let smax = svd.singular_values.max();
        let cutoff = tol.rank_tol * smax.max(1e-300);
        svd.singular_values.iter().filter(|&&v| v > cutoff).count()
    };
    let (positivity_ok, kappa) = if svd_rank == k {
        let margin = kappa0.min();
        let ok = margin > tol.eq_tol;
        (ok, ok.then(|| kappa0.as_slice().to_vec()))
    } else {
        let consistency = (&gram * &kappa0 - &rhs).amax();
        if consistency > tol.eq_tol * (1.0 + rhs.amax()) {
            (false, None)
        } else {
            // search the affine solution set for a positive point
            // (coordinatewise clamp plays the role of the cone projection)
            let svd = robust_svd(&gram, false, true);
            let v_t = svd.v_t.as_ref().expect("svd with v_t");
            let smax = svd.singular_values.max();
            let cutoff = tol.rank_tol * smax.max(1e-300);
            let kernel_cols: Vec<usize> = svd
                .singular_values
                .iter()
                .enumerate()
                .filter(|(_, &v)| v <= cutoff)
                .map(|(i, _)| i)
                .collect();
            let mut basis = Matrix::zeros(k, kernel_cols.len());
            for (j, &i) in kernel_cols.iter().enumerate() {
                basis.set_column(j, &v_t.row(i).transpose());
            }
            let delta = tol.eq_tol;
            let mut cur = kappa0.clone();
            let mut found = false;
            for _ in 0..5000 {
                let clamped = cur.map(|v: f64| v.max(delta));
                let d = &clamped - &kappa0;
                cur = &kappa0 + &basis * (basis.transpose() * d);
                if cur.min() >= 0.5 * delta {
                    found = true;
                    break;
                }
            }
            (found, found.then(|| cur.as_slice().to_vec()))
        }
    };

    // subdifferential: X'(X~')+ 1 + (1/lambda) X'(I - P~) Y in d||.||_1 (S)
    let ones = Vector::from_element(k, 1.0);
    let residual = y - &x_s * (&x_s_pinv * y);
    let v = x.transpose() * (x_s_pinv.transpose() * ones + residual / lambda_scaled);
    let mut subdiff_ok = true;
    for (i, &si) in s.iter().enumerate() {
        if si != 0 {
            if (v[i] - si as f64).abs() > tol.membership_tol {
                subdiff_ok = false;
            }
        } else if v[i].abs() > 1.0 + tol.membership_tol {
            subdiff_ok = false;
        }
    }
    Ok(LassoCertificate {
        positivity_ok,
        subdiff_ok,
        kappa,
        v: v.as_slice().to_vec(),
    })
}

/// Which estimator's certificate drives the minimal-scale search.
#[derive(Debug, Clone)]
pub enum RecoveryTarget {
    Slope(SlopePattern),
    Lasso(Vec<i8>),
}

/// Infimum of the penalty scales at which the recovery certificate holds,
/// located by a log-grid scan and bisection; `None` when no grid point
/// recovers.
pub fn min_alpha_for_recovery(
    x: &Matrix,
    y: &Vector,
    target: &RecoveryTarget,
    lambda: &TuningSequence,
    tol: &Tolerances,
    grid_lo: f64,
    grid_hi: f64,
    grid_len: usize,
) -> Result<Option<f64>> {
    // the cluster reduction does not depend on the scale; compute it once
    // for the whole scan
    let red = match target {
        RecoveryTarget::Slope(m) => Some(reduce(x, lambda, m, tol)?),
        RecoveryTarget::Lasso(_) => None,
    };
    let holds = |alpha: f64| -> Result<bool> {
        match target {
            RecoveryTarget::Slope(_) => {
                let red = red.as_ref().expect("reduction cached for slope target");
                let pos = positivity(y, red, alpha, tol);
                if !pos.ok {
                    return Ok(false);
                }
                let pi = pi_vector_cached(x, y, red, alpha);
                let lam_scaled = lambda.scaled(alpha)?;
                let query = subdiff_membership(pi.as_slice(), &red.pattern, &lam_scaled, tol)?;
                Ok(query.member)
            }
            RecoveryTarget::Lasso(s) => {
                Ok(lasso_sign_conditions(x, y, s, alpha, tol)?.recovered())
            }
        }
    };
    let log_lo = grid_lo.ln();
    let log_hi = grid_hi.ln();
    let grid: Vec<f64> = (0..grid_len)
        .map(|i| (log_lo + (log_hi - log_lo) * i as f64 / (grid_len - 1) as f64).exp())
        .collect();
    let mut first_hit = None;
    for (i, &alpha) in grid.iter().enumerate() {
        if holds(alpha)? {
            first_hit = Some(i);
            break;
        }
    }
    let Some(i) = first_hit else {
        return Ok(None);
    };
    if i == 0 {
        return Ok(Some(grid[0]));
    }
    let mut lo = grid[i - 1];
    let mut hi = grid[i];
    while hi - lo > 1e-4 * hi {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

#[derive(Debug, Clone)]
pub struct PiBarGeometry {
    pub pi_bar: Vec<f64>,
    /// Whether the vector hits the affine hull of the subdifferential.
    pub in_affine: bool,
    /// Whether it lies in `col(X'X~)`.
    pub in_colspace: bool,
}

/// The unique candidate intersection of `col(X'X~)` with the affine hull of
/// the subdifferential at `M`, and where it actually lands.
pub fn geometric_pi_bar(
    x: &Matrix,
    m: &SlopePattern,
    lambda: &TuningSequence,
    tol: &Tolerances,
) -> Result<PiBarGeometry> {
    let red = reduce(x, lambda, m, tol)?;
    let pi_bar = x.transpose() * (red.xt_pinv() * &red.lambda_tilde);
    let cluster = red.u.transpose() * &pi_bar;
    let in_affine =
        (cluster - &red.lambda_tilde).amax() <= tol.eq_tol * (1.0 + red.lambda_tilde.amax());
    let xtx_tilde = x.transpose() * &red.x_tilde;
    let in_colspace = in_col_space(&pi_bar, &xtx_tilde, tol)?;
    Ok(PiBarGeometry {
        pi_bar: pi_bar.as_slice().to_vec(),
        in_affine,
        in_colspace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn gram06_design() -> Matrix {
        Matrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 0.8])
    }

    fn lam42() -> TuningSequence {
        TuningSequence::strictly_decreasing(vec![4.0, 2.0]).unwrap()
    }

    #[test]
    fn pi_vector_noiseless_values() {
        let x = gram06_design();
        let m10 = SlopePattern::new(vec![1, 0]).unwrap();
        let m21 = SlopePattern::new(vec![2, 1]).unwrap();
        let beta = Vector::from_vec(vec![5.0, 0.0]);
        let y = &x * beta;
        let pi = pi_vector(&x, &y, &m10, &lam42(), 1.0, &tol()).unwrap();
        assert_abs_diff_eq!(pi[0], 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(pi[1], 2.4, epsilon = 1e-10);

        let beta_bar = Vector::from_vec(vec![5.0, 3.0]);
        let y_bar = &x * beta_bar;
        let pi = pi_vector(&x, &y_bar, &m21, &lam42(), 1.0, &tol()).unwrap();
        assert_abs_diff_eq!(pi[0], 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(pi[1], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn positivity_two_cluster_instance() {
        let x = gram06_design();
        let m = SlopePattern::new(vec![2, 1]).unwrap();
        let beta = Vector::from_vec(vec![5.0, 3.0]);
        let y = &x * beta;
        let (ok, s) = positivity_condition(&x, &y, &m, &lam42(), 0.2, &tol()).unwrap();
        assert!(ok);
        let s = s.unwrap();
        assert_abs_diff_eq!(s[0], 4.125, epsilon = 1e-9);
        assert_abs_diff_eq!(s[1], 3.125, epsilon = 1e-9);

        let (ok, s) = positivity_condition(&x, &y, &m, &lam42(), 0.5, &tol()).unwrap();
        assert!(!ok);
        assert!(s.is_none());

        let y0 = Vector::zeros(2);
        let (ok, _) = positivity_condition(&x, &y0, &m, &lam42(), 1.0, &tol()).unwrap();
        assert!(!ok);
    }

    #[test]
    fn recovery_certificate_two_cluster() {
        let x = gram06_design();
        let beta = [5.0, 3.0];
        let y = &x * Vector::from_column_slice(&beta);
        let cert = check_recovery_for_vector(&x, &y, &beta, &lam42(), 0.2, &tol()).unwrap();
        assert!(cert.recovered());
        assert!(cert.kernel_trivial);
        // the certified minimizer reproduces pi as the gradient
        let bh = Vector::from_column_slice(&cert.beta_hat().unwrap());
        let grad = x.transpose() * (&y - &x * bh);
        for (g, p) in grad.iter().zip(&cert.pi) {
            assert_abs_diff_eq!(g, p, epsilon = 1e-9);
        }
    }

    #[test]
    fn sparse_pattern_never_recovered() {
        let x = gram06_design();
        let beta = [5.0, 0.0];
        let y = &x * Vector::from_column_slice(&beta);
        for alpha in [0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let cert =
                check_recovery_for_vector(&x, &y, &beta, &lam42(), alpha, &tol()).unwrap();
            assert!(!cert.subdiff_ok, "alpha = {alpha}");
        }
    }

    #[test]
    fn irrepresentability_values() {
        let x = gram06_design();
        let m10 = SlopePattern::new(vec![1, 0]).unwrap();
        let ir = irrepresentability(&x, &m10, &lam42(), &tol()).unwrap();
        assert!(!ir.holds);
        assert_abs_diff_eq!(ir.dual_value, 6.4 / 6.0, epsilon = 1e-12);
        assert!(ir.col_ok);

        let m21 = SlopePattern::new(vec![2, 1]).unwrap();
        let ir = irrepresentability(&x, &m21, &lam42(), &tol()).unwrap();
        assert!(ir.holds);
        assert_abs_diff_eq!(ir.dual_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn open_irrepresentability_cases() {
        let x = gram06_design();
        let m21 = SlopePattern::new(vec![2, 1]).unwrap();
        assert!(open_irrepresentability(&x, &m21, &lam42(), &tol()).unwrap());
        let m10 = SlopePattern::new(vec![1, 0]).unwrap();
        assert!(!open_irrepresentability(&x, &m10, &lam42(), &tol()).unwrap());
    }

    #[test]
    fn noiseless_recovery_and_alpha_ceiling() {
        let x = gram06_design();
        let (flag, alpha0) = noiseless_recovery(&x, &[5.0, 3.0], &lam42(), &tol()).unwrap();
        assert!(flag);
        assert_abs_diff_eq!(alpha0.unwrap(), 0.4, epsilon = 1e-3);
        let (flag, alpha0) = noiseless_recovery(&x, &[5.0, 0.0], &lam42(), &tol()).unwrap();
        assert!(!flag);
        assert!(alpha0.is_none());
    }

    #[test]
    fn lasso_conditions_orthogonal() {
        let x = Matrix::identity(3, 3);
        let y = Vector::from_vec(vec![5.0, -4.0, 0.0]);
        let s = [1i8, -1, 0];
        let cert = lasso_sign_conditions(&x, &y, &s, 0.5, &tol()).unwrap();
        assert!(cert.positivity_ok);
        assert!(cert.subdiff_ok);
        let y0 = Vector::zeros(3);
        let cert = lasso_sign_conditions(&x, &y0, &s, 0.5, &tol()).unwrap();
        assert!(!cert.positivity_ok);
    }

    #[test]
    fn lasso_irrepresentability_reduction_noiseless() {
        // noiseless, full-rank support: subdifferential condition is exactly
        // the classical l-infinity bound on the off-support block
        let x = Matrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.3, 0.0, 1.0, 0.3, 0.0, 0.0, 0.9055385138137417],
        );
        let s = [1i8, 1, 0];
        let beta = Vector::from_vec(vec![10.0, 10.0, 0.0]);
        let y = &x * beta;
        let cert = lasso_sign_conditions(&x, &y, &s, 0.5, &tol()).unwrap();
        // || X_out' X_in (X_in'X_in)^{-1} S ||_inf = 0.3 + 0.3 = 0.6 <= 1
        assert!(cert.subdiff_ok);
        assert!((cert.v[2] - 0.6).abs() < 1e-9);
    }

    #[test]
    fn min_alpha_search() {
        let x = gram06_design();
        let beta = Vector::from_vec(vec![5.0, 3.0]);
        let y = &x * beta;
        let m = SlopePattern::new(vec![2, 1]).unwrap();
        let found = min_alpha_for_recovery(
            &x,
            &y,
            &RecoveryTarget::Slope(m),
            &lam42(),
            &tol(),
            1e-4,
            10.0,
            61,
        )
        .unwrap();
        // recovery set is an interval reaching down to 0+
        assert!(found.unwrap() <= 1e-4 + 1e-9);

        let m10 = SlopePattern::new(vec![1, 0]).unwrap();
        let beta = Vector::from_vec(vec![5.0, 0.0]);
        let y = &x * beta;
        let found = min_alpha_for_recovery(
            &x,
            &y,
            &RecoveryTarget::Slope(m10),
            &lam42(),
            &tol(),
            1e-4,
            10.0,
            61,
        )
        .unwrap();
        assert!(found.is_none());
    }

    #[test]
    fn asymptotic_spec_identity_limit() {
        // identity limit Gram, all-ones pattern: mean is the lambda average
        // replicated, covariance the centering projection
        let p = 5;
        let lambda =
            TuningSequence::strictly_decreasing((0..p).map(|i| (p - i) as f64 + 0.5).collect())
                .unwrap();
        let mean_lambda = lambda.lambdas().iter().sum::<f64>() / p as f64;
        let m = SlopePattern::new(vec![1; p]).unwrap();
        let spec = AsymptoticSpec::new(Matrix::identity(p, p), m, lambda, 1.0, &tol()).unwrap();
        for i in 0..p {
            assert_abs_diff_eq!(spec.z_mean[i], mean_lambda, epsilon = 1e-12);
            for j in 0..p {
                let want = if i == j { 1.0 - 1.0 / p as f64 } else { -1.0 / p as f64 };
                assert_abs_diff_eq!(spec.z_cov[(i, j)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn signal_sequence_gap_schedule() {
        let m = SlopePattern::new(vec![2, -1, 1]).unwrap();
        let spec = SignalSequenceSpec::new(m, vec![2.0, 1.0]).unwrap();
        for delta in [0.0, 0.5, 3.0] {
            let s = spec.cluster_values(delta);
            assert!(s[0] - s[1] >= delta && s[1] >= delta);
            let b = spec.signal(delta);
            assert_eq!(patt(&b).unwrap().values(), &[2, -1, 1]);
        }
        assert!(SignalSequenceSpec::new(
            SlopePattern::new(vec![1, 1]).unwrap(),
            vec![1.0, 2.0]
        )
        .is_err());
    }

    #[test]
    fn pi_bar_geometry_cases() {
        let x = gram06_design();
        let m10 = SlopePattern::new(vec![1, 0]).unwrap();
        let geom = geometric_pi_bar(&x, &m10, &lam42(), &tol()).unwrap();
        assert!(geom.in_affine);
        assert!(geom.in_colspace);
        assert_abs_diff_eq!(geom.pi_bar[0], 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(geom.pi_bar[1], 2.4, epsilon = 1e-10);
        // on the affine hull and in the column space, yet outside the
        // subdifferential itself
        let q = subdiff_membership(&geom.pi_bar, &m10, &lam42(), &tol()).unwrap();
        assert!(!q.member);
    }
}
