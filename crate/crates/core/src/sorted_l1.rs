//! The sorted-l1 norm, its dual, its proximal operator and the
//! subdifferential machinery driving every recovery test.

use crate::error::{Result, SlopeError};
use crate::pattern::{patt, SlopePattern};
use crate::numerics::Tolerances;

/// Validated tuning sequence. Pattern and subdifferential operations demand
/// a strictly decreasing positive sequence; the norm and prox also accept a
/// nonincreasing nonnegative one (with a positive head).
#[derive(Debug, Clone, PartialEq)]
pub struct TuningSequence {
    lambdas: Vec<f64>,
    strict: bool,
}

impl TuningSequence {
    pub fn strictly_decreasing(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.last().copied().unwrap_or(0.0) <= 0.0 {
            return Err(SlopeError::InvalidTuning(
                "sequence must be positive".into(),
            ));
        }
        if lambdas.windows(2).any(|w| w[0] <= w[1]) {
            return Err(SlopeError::InvalidTuning(
                "sequence must be strictly decreasing".into(),
            ));
        }
        Ok(TuningSequence {
            lambdas,
            strict: true,
        })
    }

    pub fn nonincreasing(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas[0] <= 0.0 || lambdas.iter().any(|&l| l < 0.0) {
            return Err(SlopeError::InvalidTuning(
                "sequence must be nonnegative with a positive head".into(),
            ));
        }
        if lambdas.windows(2).any(|w| w[0] < w[1]) {
            return Err(SlopeError::InvalidTuning(
                "sequence must be nonincreasing".into(),
            ));
        }
        let strict = lambdas.windows(2).all(|w| w[0] > w[1])
            && lambdas.last().copied().unwrap_or(0.0) > 0.0;
        Ok(TuningSequence { lambdas, strict })
    }

    /// Constant sequence, the LASSO penalty.
    pub fn constant(lambda: f64, p: usize) -> Result<Self> {
        TuningSequence::nonincreasing(vec![lambda; p])
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    /// The sequence scaled by `alpha > 0`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(SlopeError::DomainError(format!(
                "scale {alpha} must be positive"
            )));
        }
        Ok(TuningSequence {
            lambdas: self.lambdas.iter().map(|l| alpha * l).collect(),
            strict: self.strict,
        })
    }

    fn require_strict(&self) -> Result<()> {
        if self.strict {
            Ok(())
        } else {
            Err(SlopeError::InvalidTuning(
                "operation requires a strictly decreasing positive sequence".into(),
            ))
        }
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.len() == n {
            Ok(())
        } else {
            Err(SlopeError::DimensionError(format!(
                "vector of length {n} vs tuning sequence of length {}",
                self.len()
            )))
        }
    }
}

fn sorted_abs_desc(b: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = b.iter().map(|x| x.abs()).collect();
    a.sort_unstable_by(|x, y| y.partial_cmp(x).unwrap());
    a
}

/// `J_Lambda(b) = sum_i lambda_i |b|_(i)`.
pub fn sorted_l1_norm(b: &[f64], lam: &TuningSequence) -> Result<f64> {
    lam.check_len(b.len())?;
    let a = sorted_abs_desc(b);
    Ok(a.iter().zip(lam.lambdas()).map(|(x, l)| x * l).sum())
}

/// Dual sorted-l1 norm: the maximal ratio of cumulative sorted absolute
/// sums to cumulative lambda sums.
pub fn dual_sorted_l1_norm(b: &[f64], lam: &TuningSequence) -> Result<f64> {
    lam.check_len(b.len())?;
    let a = sorted_abs_desc(b);
    let mut cum_b = 0.0;
    let mut cum_l = 0.0;
    let mut best: f64 = 0.0;
    for (x, l) in a.iter().zip(lam.lambdas()) {
        cum_b += x;
        cum_l += l;
        best = best.max(cum_b / cum_l);
    }
    Ok(best)
}

/// Proximal operator of the sorted-l1 norm: sort `|y|` descending, subtract
/// the lambdas, pool adjacent violators for the best nonincreasing fit,
/// clamp at zero and restore signs and order. O(p log p) and exact.
pub fn prox_sorted_l1(y: &[f64], lam: &TuningSequence) -> Result<Vec<f64>> {
    lam.check_len(y.len())?;
    let p = y.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_unstable_by(|&i, &j| y[j].abs().partial_cmp(&y[i].abs()).unwrap());

    // blocks of (sum, count) with nonincreasing averages
    let mut sums: Vec<f64> = Vec::with_capacity(p);
    let mut counts: Vec<usize> = Vec::with_capacity(p);
    for (r, &i) in order.iter().enumerate() {
        let mut sum = y[i].abs() - lam.lambdas()[r];
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

    let mut z = vec![0.0; p];
    let mut r = 0usize;
    for (sum, count) in sums.iter().zip(&counts) {
        let value = (sum / *count as f64).max(0.0);
        for _ in 0..*count {
            let i = order[r];
            z[i] = value * y[i].signum();
            r += 1;
        }
    }
    Ok(z)
}

/// Outcome of a subdifferential membership query.
#[derive(Debug, Clone)]
pub struct SubdiffQuery {
    pub member: bool,
    /// `J*_Lambda(v)`.
    pub dual_value: f64,
    /// `max_l |[U_M' v]_l - Lambda~_l|`, zero for the zero pattern.
    pub affine_residual: f64,
    /// 1-based indices j where the cumulative sums of `|v|` and lambda agree.
    pub tight_indices: Vec<usize>,
}

impl SubdiffQuery {
    /// Slack of the binding condition; negative means strictly inside.
    pub fn margin(&self) -> f64 {
        (self.dual_value - 1.0).max(self.affine_residual)
    }
}

/// Signed within-cluster sums `U_M' v` computed straight off the pattern.
pub fn cluster_sums(v: &[f64], m: &SlopePattern) -> Vec<f64> {
    let k = m.num_clusters();
    let mut sums = vec![0.0; k];
    for (i, &mi) in m.values().iter().enumerate() {
        if mi != 0 {
            sums[k - mi.unsigned_abs() as usize] += mi.signum() as f64 * v[i];
        }
    }
    sums
}

/// Blockwise lambda sums `Lambda~_M` for a pattern.
pub fn clustered_lambda(m: &SlopePattern, lam: &TuningSequence) -> Vec<f64> {
    let k = m.num_clusters();
    // p_l = #{i : |M_i| >= k+1-l}; block l spans lambdas p_{l-1}+1 .. p_l
    let mut counts = vec![0usize; k];
    for &mi in m.values() {
        if mi != 0 {
            counts[k - mi.unsigned_abs() as usize] += 1;
        }
    }
    let mut sums = vec![0.0; k];
    let mut offset = 0usize;
    for l in 0..k {
        sums[l] = lam.lambdas()[offset..offset + counts[l]].iter().sum();
        offset += counts[l];
    }
    sums
}

fn tight_cumulative_indices(v: &[f64], lam: &TuningSequence, eq_tol: f64) -> Vec<usize> {
    let a = sorted_abs_desc(v);
    let mut cum_v = 0.0;
    let mut cum_l = 0.0;
    let mut tight = Vec::new();
    for (j, (x, l)) in a.iter().zip(lam.lambdas()).enumerate() {
        cum_v += x;
        cum_l += l;
        if (cum_v - cum_l).abs() <= eq_tol * (1.0 + cum_l) {
            tight.push(j + 1);
        }
    }
    tight
}

/// Membership of `v` in the subdifferential of `J_Lambda` at pattern `M`:
/// `J*_Lambda(v) <= 1` and `U_M' v = Lambda~_M`. For the zero pattern the
/// subdifferential is the dual unit ball, so only the dual bound applies.
pub fn subdiff_membership(
    v: &[f64],
    m: &SlopePattern,
    lam: &TuningSequence,
    tol: &Tolerances,
) -> Result<SubdiffQuery> {
    lam.require_strict()?;
    lam.check_len(v.len())?;
    if v.len() != m.len() {
        return Err(SlopeError::DimensionError(format!(
            "vector of length {} vs pattern of length {}",
            v.len(),
            m.len()
        )));
    }
    let dual_value = dual_sorted_l1_norm(v, lam)?;
    let tight_indices = tight_cumulative_indices(v, lam, tol.eq_tol);
    let affine_residual = if m.is_zero() {
        0.0
    } else {
        let sums = cluster_sums(v, m);
        let lt = clustered_lambda(m, lam);
        sums.iter()
            .zip(&lt)
            .map(|(s, l)| (s - l).abs())
            .fold(0.0f64, f64::max)
    };
    let member =
        dual_value <= 1.0 + tol.membership_tol && affine_residual <= tol.membership_tol;
    Ok(SubdiffQuery {
        member,
        dual_value,
        affine_residual,
        tight_indices,
    })
}

/// As [`subdiff_membership`] but taking the vector whose pattern defines
/// the subdifferential.
pub fn subdiff_membership_at(
    v: &[f64],
    b: &[f64],
    lam: &TuningSequence,
    tol: &Tolerances,
) -> Result<SubdiffQuery> {
    subdiff_membership(v, &patt(b)?, lam, tol)
}

/// Independent membership route through the elementary characterization:
/// sign agreement on the support, order preservation of absolute values,
/// and cumulative-sum equalities at the cluster boundary indices.
pub fn subdiff_membership_elementary(
    v: &[f64],
    b: &[f64],
    lam: &TuningSequence,
    tol: &Tolerances,
) -> Result<bool> {
    lam.require_strict()?;
    lam.check_len(v.len())?;
    if v.len() != b.len() {
        return Err(SlopeError::DimensionError(
            "candidate and base vector lengths differ".into(),
        ));
    }
    let m = patt(b)?;
    if dual_sorted_l1_norm(v, lam)? > 1.0 + tol.membership_tol {
        return Ok(false);
    }
    if m.is_zero() {
        return Ok(true);
    }
    // sign agreement on the support
    for (&bi, &vi) in b.iter().zip(v) {
        if bi != 0.0 && bi.signum() * vi < -tol.membership_tol {
            return Ok(false);
        }
    }
    // |b_i| > |b_j|  =>  |v_i| >= |v_j|
    for i in 0..b.len() {
        for j in 0..b.len() {
            if b[i].abs() > b[j].abs() && v[i].abs() < v[j].abs() - tol.membership_tol {
                return Ok(false);
            }
        }
    }
    // equalities at the cluster boundaries n_1 < ... < n_k
    let k = m.num_clusters();
    let mut boundaries: Vec<usize> = (1..=k)
        .map(|l| {
            m.values()
                .iter()
                .filter(|&&mi| mi.unsigned_abs() as usize >= k + 1 - l)
                .count()
        })
        .collect();
    boundaries.dedup();
    let tight = tight_cumulative_indices(v, lam, tol.membership_tol);
    Ok(boundaries.iter().all(|n| tight.contains(n)))
}

/// Relative-interior membership: subdifferential membership with exactly
/// `||M||_inf` tight cumulative sums.
pub fn in_relative_interior(
    v: &[f64],
    m: &SlopePattern,
    lam: &TuningSequence,
    tol: &Tolerances,
) -> Result<bool> {
    let query = subdiff_membership(v, m, lam, tol)?;
    Ok(query.member && query.tight_indices.len() == m.num_clusters())
}

/// Distance of `v` to the affine hull of the subdifferential at `M`,
/// measured as `max_l |[U_M' v]_l - Lambda~_l|`.
pub fn affine_span_residual(v: &[f64], m: &SlopePattern, lam: &TuningSequence) -> Result<f64> {
    if m.is_zero() {
        return Err(SlopeError::EmptyPattern);
    }
    let sums = cluster_sums(v, m);
    let lt = clustered_lambda(m, lam);
    Ok(sums
        .iter()
        .zip(&lt)
        .map(|(s, l)| (s - l).abs())
        .fold(0.0f64, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::SlopePattern;
    use approx::assert_abs_diff_eq;

    fn lam42() -> TuningSequence {
        TuningSequence::strictly_decreasing(vec![4.0, 2.0]).unwrap()
    }

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn norm_values() {
        assert_eq!(sorted_l1_norm(&[0.0, 0.0], &lam42()).unwrap(), 0.0);
        assert_eq!(sorted_l1_norm(&[5.0, 3.0], &lam42()).unwrap(), 26.0);
        assert_eq!(sorted_l1_norm(&[3.0, -5.0], &lam42()).unwrap(), 26.0);
    }

    #[test]
    fn dual_norm_values() {
        assert_abs_diff_eq!(
            dual_sorted_l1_norm(&[4.0, 2.4], &lam42()).unwrap(),
            6.4 / 6.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            dual_sorted_l1_norm(&[4.0, 2.0], &lam42()).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert_eq!(dual_sorted_l1_norm(&[0.0, 0.0], &lam42()).unwrap(), 0.0);
    }

    #[test]
    fn prox_zero_and_scalar() {
        assert_eq!(
            prox_sorted_l1(&[0.0, 0.0], &lam42()).unwrap(),
            vec![0.0, 0.0]
        );
        let one = TuningSequence::strictly_decreasing(vec![2.0]).unwrap();
        assert_eq!(prox_sorted_l1(&[5.0], &one).unwrap(), vec![3.0]);
        assert_eq!(prox_sorted_l1(&[-5.0], &one).unwrap(), vec![-3.0]);
    }

    #[test]
    fn prox_ties_clusters() {
        let z = prox_sorted_l1(&[5.0, 5.0], &lam42()).unwrap();
        assert_abs_diff_eq!(z[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn prox_matches_grid_oracle_2d() {
        // brute-force 2-d grid minimization at resolution 1e-3
        let y = [3.0, -1.5];
        let lam = lam42();
        let z = prox_sorted_l1(&y, &lam).unwrap();
        let objective = |a: f64, b: f64| {
            0.5 * ((y[0] - a).powi(2) + (y[1] - b).powi(2))
                + sorted_l1_norm(&[a, b], &lam).unwrap()
        };
        let mut best = (0.0, 0.0, f64::INFINITY);
        let mut a = -4.0;
        while a <= 4.0 {
            let mut b = -4.0;
            while b <= 4.0 {
                let val = objective(a, b);
                if val < best.2 {
                    best = (a, b, val);
                }
                b += 1e-3;
            }
            a += 1e-3;
        }
        assert!((z[0] - best.0).abs() < 2e-3);
        assert!((z[1] - best.1).abs() < 2e-3);
    }

    #[test]
    fn membership_examples() {
        let m10 = SlopePattern::new(vec![1, 0]).unwrap();
        let m21 = SlopePattern::new(vec![2, 1]).unwrap();
        let q = subdiff_membership(&[4.0, 2.4], &m10, &lam42(), &tol()).unwrap();
        assert!(!q.member);
        assert!(q.dual_value > 1.0);
        let q = subdiff_membership(&[4.0, 2.0], &m21, &lam42(), &tol()).unwrap();
        assert!(q.member);
        assert_abs_diff_eq!(q.dual_value, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn lambda_belongs_at_sorted_nonnegative() {
        let lam =
            TuningSequence::strictly_decreasing(vec![5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        let b = [9.0, 9.0, 4.0, 4.0, 1.0];
        let q = subdiff_membership_at(lam.lambdas(), &b, &lam, &tol()).unwrap();
        assert!(q.member);
        assert!(subdiff_membership_elementary(lam.lambdas(), &b, &lam, &tol()).unwrap());
    }

    #[test]
    fn truncated_lambda_fails_last_equality() {
        let lam = TuningSequence::strictly_decreasing(vec![3.0, 2.0, 1.0]).unwrap();
        let b = [6.0, 5.0, 4.0];
        let v = [3.0, 2.0, 0.0];
        assert!(!subdiff_membership_elementary(&v, &b, &lam, &tol()).unwrap());
        let q = subdiff_membership_at(&v, &b, &lam, &tol()).unwrap();
        assert!(!q.member);
    }

    #[test]
    fn relative_interior_examples() {
        let m21 = SlopePattern::new(vec![2, 1]).unwrap();
        assert!(in_relative_interior(&[4.0, 2.0], &m21, &lam42(), &tol()).unwrap());
        assert!(!in_relative_interior(&[4.0, 1.9], &m21, &lam42(), &tol()).unwrap());
    }

    #[test]
    fn boundary_with_extra_tight_sums_is_not_interior() {
        // p = 3, k = 2: v tight at j = 1, 2, 3 while M has two clusters
        let lam = TuningSequence::strictly_decreasing(vec![3.0, 2.0, 1.0]).unwrap();
        let m = SlopePattern::new(vec![2, 1, 1]).unwrap();
        let v = [3.0, 2.0, 1.0];
        let q = subdiff_membership(&v, &m, &lam, &tol()).unwrap();
        assert!(q.member);
        assert_eq!(q.tight_indices, vec![1, 2, 3]);
        assert!(!in_relative_interior(&v, &m, &lam, &tol()).unwrap());
    }

    #[test]
    fn affine_residual_examples() {
        let m10 = SlopePattern::new(vec![1, 0]).unwrap();
        assert_eq!(
            affine_span_residual(&[4.0, 99.0], &m10, &lam42()).unwrap(),
            0.0
        );
        assert_eq!(
            affine_span_residual(&[5.0, 0.0], &m10, &lam42()).unwrap(),
            1.0
        );
    }

    #[test]
    fn nonincreasing_sequence_rejected_where_strictness_required() {
        let lam = TuningSequence::constant(2.0, 2).unwrap();
        let m = SlopePattern::new(vec![1, 0]).unwrap();
        assert!(matches!(
            subdiff_membership(&[1.0, 0.0], &m, &lam, &tol()),
            Err(SlopeError::InvalidTuning(_))
        ));
    }

    #[test]
    fn prox_rejects_increasing_lambda() {
        assert!(TuningSequence::nonincreasing(vec![1.0, 2.0]).is_err());
    }
}
