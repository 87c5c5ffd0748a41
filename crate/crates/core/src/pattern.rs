//! SLOPE pattern algebra: signed-rank extraction, pattern matrices and the
//! clustered reduction of a design matrix and tuning sequence.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SlopeError};
use crate::numerics::{pinv, Matrix, Tolerances, Vector};
use crate::sorted_l1::TuningSequence;

/// Integer-valued signed-rank vector `M = patt(b)`: sign, cluster membership
/// and cluster hierarchy of a coefficient vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SlopePattern {
    values: Vec<i64>,
    k: usize,
}

impl SlopePattern {
    /// Build from raw signed ranks, validating that the nonzero absolute
    /// values are exactly `{1, ..., k}`.
    pub fn new(values: Vec<i64>) -> Result<Self> {
        let k = values.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as usize;
        let mut seen = vec![false; k];
        for &v in &values {
            if v != 0 {
                seen[v.unsigned_abs() as usize - 1] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(SlopeError::InvalidVector);
        }
        Ok(SlopePattern { values, k })
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    /// Number of nonzero clusters, `k = ||M||_inf`.
    pub fn num_clusters(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.k == 0
    }

    /// Number of nonzero entries.
    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    /// The pattern of `|M|` sorted nonincreasingly, used to build the
    /// clustered tuning parameter.
    pub fn abs_sorted(&self) -> SlopePattern {
        let mut abs: Vec<i64> = self.values.iter().map(|v| v.abs()).collect();
        abs.sort_unstable_by(|a, b| b.cmp(a));
        SlopePattern {
            values: abs,
            k: self.k,
        }
    }
}

impl fmt::Display for SlopePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for SlopePattern {
    type Err = SlopeError;

    fn from_str(s: &str) -> Result<Self> {
        let values: std::result::Result<Vec<i64>, _> =
            s.split(',').map(|t| t.trim().parse::<i64>()).collect();
        SlopePattern::new(values.map_err(|_| SlopeError::InvalidVector)?)
    }
}

/// Signed-rank extraction with exact comparisons. Use [`patt_with_tol`] on
/// floating-point solver output.
pub fn patt(b: &[f64]) -> Result<SlopePattern> {
    if b.iter().any(|x| !x.is_finite()) {
        return Err(SlopeError::InvalidVector);
    }
    let mut distinct: Vec<f64> = b.iter().map(|x| x.abs()).filter(|&x| x != 0.0).collect();
    distinct.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let values = b
        .iter()
        .map(|&x| {
            if x == 0.0 {
                0
            } else {
                let rank = distinct.partition_point(|&d| d < x.abs()) as i64 + 1;
                rank * x.signum() as i64
            }
        })
        .collect();
    Ok(SlopePattern {
        values,
        k: distinct.len(),
    })
}

/// Signed-rank extraction with tolerance: entries with `|b_i| <= pattern_tol`
/// are zeroed; the remaining sorted absolute values are grouped greedily,
/// starting a new cluster whenever the gap to the previous sorted value
/// exceeds `pattern_tol`.
pub fn patt_with_tol(b: &[f64], pattern_tol: f64) -> Result<SlopePattern> {
    if b.iter().any(|x| !x.is_finite()) {
        return Err(SlopeError::InvalidVector);
    }
    if pattern_tol <= 0.0 {
        return Err(SlopeError::DomainError(
            "pattern_tol must be positive".into(),
        ));
    }
    let mut nonzero: Vec<(usize, f64)> = b
        .iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > pattern_tol)
        .map(|(i, x)| (i, x.abs()))
        .collect();
    nonzero.sort_unstable_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let mut values = vec![0i64; b.len()];
    let mut cluster = 0i64;
    let mut prev = f64::NEG_INFINITY;
    for &(i, a) in &nonzero {
        if a - prev > pattern_tol {
            cluster += 1;
        }
        prev = a;
        values[i] = cluster * b[i].signum() as i64;
    }
    Ok(SlopePattern {
        values,
        k: cluster as usize,
    })
}

/// The p x k pattern matrix: row `i` carries `sign(M_i)` in column
/// `k + 1 - |M_i|` and zeros elsewhere.
pub fn pattern_matrix(m: &SlopePattern) -> Result<Matrix> {
    if m.is_zero() {
        return Err(SlopeError::EmptyPattern);
    }
    let (p, k) = (m.len(), m.num_clusters());
    let mut u = Matrix::zeros(p, k);
    for (i, &v) in m.values().iter().enumerate() {
        if v != 0 {
            let j = k - v.unsigned_abs() as usize;
            u[(i, j)] = v.signum() as f64;
        }
    }
    Ok(u)
}

/// Clustered reduction of a design: `X~ = X U_M`, blockwise lambda sums,
/// and cached pseudo-inverses for the recovery diagnostics.
#[derive(Debug, Clone)]
pub struct ClusterReduction {
    pub pattern: SlopePattern,
    /// Pattern matrix `U_M`.
    pub u: Matrix,
    /// Pattern matrix of `|M|` sorted nonincreasingly.
    pub u_abs_sorted: Matrix,
    /// Clustered design `X~ = X U_M` (n x k).
    pub x_tilde: Matrix,
    /// Clustered parameter: blockwise sums of the base lambdas (length k).
    pub lambda_tilde: Vector,
    /// Pseudo-inverse of the clustered design, `X~+` (k x n).
    pub x_tilde_pinv: Matrix,
}

impl ClusterReduction {
    /// `(X~')+ = (X~+)'` (n x k).
    pub fn xt_pinv(&self) -> Matrix {
        self.x_tilde_pinv.transpose()
    }

    /// Orthogonal projector onto `col(X~)` (n x n).
    pub fn projector(&self) -> Matrix {
        let p = &self.x_tilde * &self.x_tilde_pinv;
        (&p + p.transpose()) * 0.5
    }

    /// Apply `I - P~` to a vector without forming the projector.
    pub fn apply_residual_projection(&self, y: &Vector) -> Vector {
        y - &self.x_tilde * (&self.x_tilde_pinv * y)
    }
}

/// Assemble the clustered design, clustered parameter and pseudo-inverse
/// caches for a nonzero pattern.
pub fn reduce(
    x: &Matrix,
    lambda: &TuningSequence,
    m: &SlopePattern,
    tol: &Tolerances,
) -> Result<ClusterReduction> {
    if m.is_zero() {
        return Err(SlopeError::EmptyPattern);
    }
    if x.ncols() != m.len() || lambda.len() != m.len() {
        return Err(SlopeError::DimensionError(format!(
            "design with {} columns, pattern of length {}, lambda of length {}",
            x.ncols(),
            m.len(),
            lambda.len()
        )));
    }
    let u = pattern_matrix(m)?;
    let u_abs_sorted = pattern_matrix(&m.abs_sorted())?;
    let x_tilde = x * &u;
    let lambda_vec = Vector::from_column_slice(lambda.lambdas());
    let lambda_tilde = u_abs_sorted.transpose() * lambda_vec;
    let x_tilde_pinv = pinv(&x_tilde, tol)?;
    Ok(ClusterReduction {
        pattern: m.clone(),
        u,
        u_abs_sorted,
        x_tilde,
        lambda_tilde,
        x_tilde_pinv,
    })
}

/// Build `U_M s` from strictly decreasing positive cluster values;
/// `patt` of the result is `M` again.
pub fn synthesize(m: &SlopePattern, s: &[f64]) -> Result<Vec<f64>> {
    if m.is_zero() {
        return Err(SlopeError::EmptyPattern);
    }
    if s.len() != m.num_clusters() {
        return Err(SlopeError::DimensionError(format!(
            "{} cluster values for a pattern with {} clusters",
            s.len(),
            m.num_clusters()
        )));
    }
    if s.windows(2).any(|w| w[0] <= w[1]) || *s.last().unwrap() <= 0.0 {
        return Err(SlopeError::InvalidClusterValues);
    }
    let k = m.num_clusters();
    Ok(m.values()
        .iter()
        .map(|&v| {
            if v == 0 {
                0.0
            } else {
                v.signum() as f64 * s[k - v.unsigned_abs() as usize]
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patt_two_cluster_vector() {
        let m = patt(&[4.7, -4.7, 0.0, 1.8, 4.7, -1.8]).unwrap();
        assert_eq!(m.values(), &[2, -2, 0, 1, 2, -1]);
        assert_eq!(m.num_clusters(), 2);
    }

    #[test]
    fn patt_three_cluster_vector() {
        let m = patt(&[1.2, -2.3, 3.5, 1.2, 2.3, -3.5]).unwrap();
        assert_eq!(m.values(), &[1, -2, 3, 1, 2, -3]);
    }

    #[test]
    fn patt_zero() {
        let m = patt(&[0.0, 0.0]).unwrap();
        assert!(m.is_zero());
        assert_eq!(m.values(), &[0, 0]);
    }

    #[test]
    fn patt_rejects_nan() {
        assert!(patt(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn patt_with_tol_collapses_near_ties() {
        let m = patt_with_tol(&[1.000_000_01, 1.0, 0.000_000_1], 1e-4).unwrap();
        assert_eq!(m.values(), &[1, 1, 0]);
        let m = patt_with_tol(&[2.0, 1.0], 1e-4).unwrap();
        assert_eq!(m.values(), &[2, 1]);
    }

    #[test]
    fn patt_with_tol_greedy_gap_split() {
        let m = patt_with_tol(&[1.0, 1.000_05, 1.2], 1e-4).unwrap();
        assert_eq!(m.values(), &[1, 1, 2]);
    }

    #[test]
    fn pattern_matrix_example() {
        let m = SlopePattern::new(vec![-2, 1, 0, -1, 2]).unwrap();
        let u = pattern_matrix(&m).unwrap();
        let expected =
            Matrix::from_row_slice(5, 2, &[-1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0]);
        assert_eq!(u, expected);
        let u_abs = pattern_matrix(&m.abs_sorted()).unwrap();
        let expected_abs =
            Matrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(u_abs, expected_abs);
    }

    #[test]
    fn pattern_matrix_all_ones() {
        let m = SlopePattern::new(vec![1; 4]).unwrap();
        let u = pattern_matrix(&m).unwrap();
        assert_eq!(u, Matrix::from_element(4, 1, 1.0));
    }

    #[test]
    fn pattern_matrix_six_rows() {
        let m = SlopePattern::new(vec![2, -2, 0, 1, 2, -1]).unwrap();
        let u = pattern_matrix(&m).unwrap();
        let expected = Matrix::from_row_slice(
            6,
            2,
            &[1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, -1.0],
        );
        assert_eq!(u, expected);
    }

    #[test]
    fn pattern_matrix_rejects_zero_pattern() {
        let m = SlopePattern::new(vec![0, 0]).unwrap();
        assert!(matches!(
            pattern_matrix(&m),
            Err(SlopeError::EmptyPattern)
        ));
    }

    #[test]
    fn reduce_signed_cluster_sums() {
        // five columns easy to track: X = diag-ish 5x5
        let x = Matrix::identity(5, 5);
        let lam = TuningSequence::strictly_decreasing(vec![5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        let m = SlopePattern::new(vec![1, 2, -2, 0, 1]).unwrap();
        let red = reduce(&x, &lam, &m, &Tolerances::default()).unwrap();
        // X~ = (X2 - X3 | X1 + X5)
        let expected = Matrix::from_row_slice(
            5,
            2,
            &[0.0, 1.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        );
        assert_eq!(red.x_tilde, expected);
        assert_eq!(red.lambda_tilde.as_slice(), &[9.0, 5.0]);
    }

    #[test]
    fn reduce_identity_pattern_keeps_design() {
        let x = Matrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 0.8]);
        let lam = TuningSequence::strictly_decreasing(vec![4.0, 2.0]).unwrap();
        let m = SlopePattern::new(vec![2, 1]).unwrap();
        let red = reduce(&x, &lam, &m, &Tolerances::default()).unwrap();
        assert_eq!(red.x_tilde, x);
        assert_eq!(red.lambda_tilde.as_slice(), &[4.0, 2.0]);
    }

    #[test]
    fn reduce_all_ones_sums_rows() {
        let x = Matrix::identity(3, 3);
        let lam = TuningSequence::strictly_decreasing(vec![3.0, 2.0, 1.0]).unwrap();
        let m = SlopePattern::new(vec![1, 1, 1]).unwrap();
        let red = reduce(&x, &lam, &m, &Tolerances::default()).unwrap();
        assert_eq!(red.x_tilde, Matrix::from_element(3, 1, 1.0));
        assert_eq!(red.lambda_tilde.as_slice(), &[6.0]);
    }

    #[test]
    fn synthesize_round_trip() {
        let m = SlopePattern::new(vec![2, -2, 0, 1, 2, -1]).unwrap();
        let b = synthesize(&m, &[4.7, 1.8]).unwrap();
        assert_eq!(b, vec![4.7, -4.7, 0.0, 1.8, 4.7, -1.8]);
        assert_eq!(patt(&b).unwrap(), m);
    }

    #[test]
    fn synthesize_rejects_unordered_values() {
        let m = SlopePattern::new(vec![2, 1]).unwrap();
        assert!(matches!(
            synthesize(&m, &[1.0, 3.0]),
            Err(SlopeError::InvalidClusterValues)
        ));
        assert!(matches!(
            synthesize(&m, &[3.0, 0.0]),
            Err(SlopeError::InvalidClusterValues)
        ));
    }

    #[test]
    fn pattern_serialization_round_trip() {
        let m = SlopePattern::new(vec![2, -2, 0, 1]).unwrap();
        assert_eq!(m.to_string(), "2,-2,0,1");
        let back: SlopePattern = "2,-2,0,1".parse().unwrap();
        assert_eq!(back, m);
    }
}
