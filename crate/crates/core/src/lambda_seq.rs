//! Tuning-sequence generators: the Gaussian order-statistic recipe, OSCAR
//! arithmetic sequences and constant (LASSO) sequences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlopeError};
use crate::numerics::std_normal_quantile;
use crate::sorted_l1::TuningSequence;

/// Named recipe for generating a tuning sequence of a given length.
/// Addressable in CLI configs as `gauss-os`, `oscar:a,b` or `const:l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaRecipe {
    GaussianOrderStats,
    Oscar { a_base: f64, a_step: f64 },
    Constant { lambda: f64 },
}

impl LambdaRecipe {
    pub fn generate(&self, p: usize) -> Result<TuningSequence> {
        match *self {
            LambdaRecipe::GaussianOrderStats => gaussian_order_stat_lambda(p),
            LambdaRecipe::Oscar { a_base, a_step } => oscar_lambda(p, a_base, a_step),
            LambdaRecipe::Constant { lambda } => TuningSequence::constant(lambda, p),
        }
    }
}

impl fmt::Display for LambdaRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaRecipe::GaussianOrderStats => write!(f, "gauss-os"),
            LambdaRecipe::Oscar { a_base, a_step } => write!(f, "oscar:{a_base},{a_step}"),
            LambdaRecipe::Constant { lambda } => write!(f, "const:{lambda}"),
        }
    }
}

impl FromStr for LambdaRecipe {
    type Err = SlopeError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SlopeError::DomainError(format!("unknown lambda recipe '{s}'"));
        if s == "gauss-os" {
            return Ok(LambdaRecipe::GaussianOrderStats);
        }
        if let Some(rest) = s.strip_prefix("oscar:") {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            return Ok(LambdaRecipe::Oscar {
                a_base: a.trim().parse().map_err(|_| bad())?,
                a_step: b.trim().parse().map_err(|_| bad())?,
            });
        }
        if let Some(rest) = s.strip_prefix("const:") {
            return Ok(LambdaRecipe::Constant {
                lambda: rest.trim().parse().map_err(|_| bad())?,
            });
        }
        Err(bad())
    }
}

/// Blom-type approximation of the expected i-th largest of p standard
/// normal draws.
pub fn expected_order_stat(i: usize, p: usize) -> Result<f64> {
    if i < 1 || i > p {
        return Err(SlopeError::DomainError(format!(
            "order statistic index {i} outside 1..={p}"
        )));
    }
    let u = (i as f64 - 0.375) / (p as f64 + 1.0 - 0.750);
    Ok(-std_normal_quantile(u)?)
}

/// The order-statistic sequence `lambda_i = E(i,p) + E(p-1,p) - 2 E(p,p)`,
/// strictly decreasing and positive for every `p >= 2`.
pub fn gaussian_order_stat_lambda(p: usize) -> Result<TuningSequence> {
    if p < 2 {
        return Err(SlopeError::DomainError(
            "order-statistic sequence needs p >= 2".into(),
        ));
    }
    let shift = expected_order_stat(p - 1, p)? - 2.0 * expected_order_stat(p, p)?;
    let lambdas: Result<Vec<f64>> = (1..=p)
        .map(|i| Ok(expected_order_stat(i, p)? + shift))
        .collect();
    TuningSequence::strictly_decreasing(lambdas?)
}

/// Arithmetic (OSCAR) sequence `lambda_i = a_base - (i-1) a_step`. With a
/// zero step this is the constant LASSO sequence.
pub fn oscar_lambda(p: usize, a_base: f64, a_step: f64) -> Result<TuningSequence> {
    if a_base <= 0.0 || a_step < 0.0 {
        return Err(SlopeError::InvalidTuning(
            "oscar sequence needs a_base > 0 and a_step >= 0".into(),
        ));
    }
    let lambdas: Vec<f64> = (0..p).map(|i| a_base - i as f64 * a_step).collect();
    if a_step == 0.0 {
        TuningSequence::nonincreasing(lambdas)
    } else {
        TuningSequence::strictly_decreasing(lambdas)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn order_stat_median_and_symmetry() {
        assert_abs_diff_eq!(expected_order_stat(1, 1).unwrap(), 0.0, epsilon = 1e-12);
        for p in [3usize, 7, 10] {
            for i in 1..=p {
                assert_abs_diff_eq!(
                    expected_order_stat(i, p).unwrap(),
                    -expected_order_stat(p + 1 - i, p).unwrap(),
                    epsilon = 1e-12
                );
            }
        }
        assert_abs_diff_eq!(
            expected_order_stat(1, 3).unwrap(),
            0.8694237732888861,
            epsilon = 1e-6
        );
    }

    #[test]
    fn order_stat_out_of_range() {
        assert!(expected_order_stat(0, 3).is_err());
        assert!(expected_order_stat(4, 3).is_err());
    }

    #[test]
    fn gaussian_sequence_p2() {
        let lam = gaussian_order_stat_lambda(2).unwrap();
        // E(1,2) = -Phi^{-1}(0.625/2.25), E(2,2) = -E(1,2)
        let e12 = expected_order_stat(1, 2).unwrap();
        assert_abs_diff_eq!(lam.lambdas()[0], 4.0 * e12, epsilon = 1e-12);
        assert_abs_diff_eq!(lam.lambdas()[1], 2.0 * e12, epsilon = 1e-12);
        assert_abs_diff_eq!(lam.lambdas()[0], 2.3580, epsilon = 2e-4);
        assert_abs_diff_eq!(lam.lambdas()[1], 1.1790, epsilon = 2e-4);
    }

    #[test]
    fn gaussian_sequence_strictly_decreasing_positive() {
        for p in [2usize, 5, 100, 1000, 10_000] {
            let lam = gaussian_order_stat_lambda(p).unwrap();
            assert!(lam.is_strict(), "p = {p}");
            assert!(lam.lambdas().last().unwrap() > &0.0);
        }
    }

    #[test]
    fn order_stat_matches_monte_carlo() {
        use crate::numerics::SeededRng;
        let p = 5;
        let reps = 1_000_000;
        let mut rng = SeededRng::new(123, 0);
        let mut sums = vec![0.0; p];
        for _ in 0..reps {
            let mut z: Vec<f64> = (0..p).map(|_| rng.standard_normal()).collect();
            z.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
            for (s, v) in sums.iter_mut().zip(&z) {
                *s += v;
            }
        }
        for (i, s) in sums.iter().enumerate() {
            // Blom's formula is an approximation; its own bias at p = 5 is
            // about 0.017 on the extremes
            let mc = s / reps as f64;
            assert!(
                (mc - expected_order_stat(i + 1, p).unwrap()).abs() < 0.025,
                "i = {i}"
            );
        }
    }

    #[test]
    fn oscar_examples() {
        let lam = oscar_lambda(3, 3.0, 1.0).unwrap();
        assert_eq!(lam.lambdas(), &[3.0, 2.0, 1.0]);
        let lam = oscar_lambda(2, 4.0, 2.0).unwrap();
        assert_eq!(lam.lambdas(), &[4.0, 2.0]);
        let lam = oscar_lambda(3, 2.0, 0.0).unwrap();
        assert_eq!(lam.lambdas(), &[2.0, 2.0, 2.0]);
        assert!(oscar_lambda(4, 3.0, 1.5).is_err());
    }

    #[test]
    fn recipe_round_trip() {
        for s in ["gauss-os", "oscar:3,0.5", "const:2"] {
            let recipe: LambdaRecipe = s.parse().unwrap();
            let back: LambdaRecipe = recipe.to_string().parse().unwrap();
            assert_eq!(recipe, back);
        }
        assert!("bogus".parse::<LambdaRecipe>().is_err());
    }
}
