use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::UncertaintyError;

/// Tolerance on the unit column-sum invariant.
const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Participation factors given as data.
    FixedAlpha,
    /// One optimized participation factor per generator.
    AlphaVector,
    /// One optimized factor per generator and source.
    AlphaMatrix,
}

impl PolicyKind {
    pub fn letter(self) -> char {
        match self {
            PolicyKind::FixedAlpha => 'a',
            PolicyKind::AlphaVector => 'b',
            PolicyKind::AlphaMatrix => 'c',
        }
    }

    pub fn from_letter(c: &str) -> Option<PolicyKind> {
        match c {
            "a" => Some(PolicyKind::FixedAlpha),
            "b" => Some(PolicyKind::AlphaVector),
            "c" => Some(PolicyKind::AlphaMatrix),
            _ => None,
        }
    }

    /// Whether α is an optimization variable.
    pub fn is_optimized(self) -> bool {
        self != PolicyKind::FixedAlpha
    }
}

/// Affine response `pg(w) = pg₀ + α w` with `α` of shape `ng × N`. Vector
/// policies store the same column `N` times.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePolicy {
    pub kind: PolicyKind,
    pub alpha: DMatrix<f64>,
}

impl ResponsePolicy {
    /// Vector policy with participation `factors` for `sources` sources.
    pub fn from_vector(kind: PolicyKind, factors: &[f64], sources: usize) -> Result<Self, UncertaintyError> {
        if kind == PolicyKind::AlphaMatrix {
            return Err(UncertaintyError::PolicyInvariantViolated("matrix policy built from a vector".into()));
        }
        let p = ResponsePolicy {
            kind,
            alpha: DMatrix::from_fn(factors.len(), sources, |g, _| factors[g]),
        };
        p.check()?;
        Ok(p)
    }

    pub fn from_matrix(alpha: DMatrix<f64>) -> Result<Self, UncertaintyError> {
        let p = ResponsePolicy {
            kind: PolicyKind::AlphaMatrix,
            alpha,
        };
        p.check()?;
        Ok(p)
    }

    /// Every unit takes share `1/ng` of every source.
    pub fn equal_shares(kind: PolicyKind, ng: usize, sources: usize) -> Self {
        ResponsePolicy {
            kind,
            alpha: DMatrix::from_element(ng, sources, 1.0 / ng as f64),
        }
    }

    pub fn generators(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn sources(&self) -> usize {
        self.alpha.ncols()
    }

    /// Participation vector of a vector policy (first column).
    pub fn factors(&self) -> Vec<f64> {
        if self.alpha.ncols() == 0 {
            return vec![];
        }
        self.alpha.column(0).iter().copied().collect()
    }

    pub fn check(&self) -> Result<(), UncertaintyError> {
        if self.alpha.iter().any(|x| !x.is_finite()) {
            return Err(UncertaintyError::PolicyInvariantViolated("non-finite factor".into()));
        }
        for (j, col) in self.alpha.column_iter().enumerate() {
            let s: f64 = col.sum();
            if (s - 1.0).abs() > SUM_TOL {
                return Err(UncertaintyError::PolicyInvariantViolated(format!("column {j} sums to {s}")));
            }
        }
        if self.kind != PolicyKind::AlphaMatrix && self.alpha.ncols() > 1 {
            let first = self.alpha.column(0);
            if self.alpha.column_iter().any(|c| c != first) {
                return Err(UncertaintyError::PolicyInvariantViolated("vector policy with differing columns".into()));
            }
        }
        Ok(())
    }
}

/// Dispatch of every unit after deviation `w`. The slack unit's extra loss
/// response is left to the power flow.
pub fn apply_response(policy: &ResponsePolicy, base_pg: &[f64], w: &[f64]) -> Result<Vec<f64>, UncertaintyError> {
    if base_pg.len() != policy.generators() || w.len() != policy.sources() {
        return Err(UncertaintyError::DimensionMismatch(format!(
            "policy is {}x{}, got {} dispatches and {} deviations",
            policy.generators(),
            policy.sources(),
            base_pg.len(),
            w.len()
        )));
    }
    policy.check()?;
    let out = match policy.kind {
        PolicyKind::FixedAlpha | PolicyKind::AlphaVector => {
            let total: f64 = w.iter().sum();
            let f = policy.factors();
            base_pg.iter().zip(&f).map(|(p, a)| p + a * total).collect()
        }
        PolicyKind::AlphaMatrix => base_pg
            .iter()
            .enumerate()
            .map(|(g, p)| p + (0..w.len()).map(|j| policy.alpha[(g, j)] * w[j]).sum::<f64>())
            .collect(),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_deviation_keeps_base() {
        let base = [0.4, 0.2, 0.1];
        for kind in [PolicyKind::FixedAlpha, PolicyKind::AlphaVector, PolicyKind::AlphaMatrix] {
            let p = ResponsePolicy::equal_shares(kind, 3, 2);
            assert_eq!(apply_response(&p, &base, &[0.0, 0.0]).unwrap(), base.to_vec());
        }
    }

    #[test]
    fn even_split_of_total() {
        let p = ResponsePolicy::from_vector(PolicyKind::FixedAlpha, &[0.5, 0.5], 3).unwrap();
        let pg = apply_response(&p, &[1.0, 2.0], &[0.02, 0.05, 0.03]).unwrap();
        assert!((pg[0] - 1.05).abs() < 1e-15 && (pg[1] - 2.05).abs() < 1e-15);
    }

    #[test]
    fn column_sums_are_enforced() {
        assert!(ResponsePolicy::from_vector(PolicyKind::AlphaVector, &[0.5, 0.6], 1).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.5, 0.1]);
        assert!(matches!(
            ResponsePolicy::from_matrix(m),
            Err(UncertaintyError::PolicyInvariantViolated(_))
        ));
        let p = ResponsePolicy::equal_shares(PolicyKind::AlphaVector, 2, 1);
        assert!(apply_response(&p, &[0.0], &[0.0]).is_err());
    }

    fn simplex(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn matrix_with_equal_columns_matches_vector(raw in proptest::collection::vec(0.01f64..1.0, 4), w in proptest::collection::vec(-0.1f64..0.1, 3)) {
            let f = simplex(&raw);
            let v = ResponsePolicy::from_vector(PolicyKind::AlphaVector, &f, 3).unwrap();
            let m = ResponsePolicy::from_matrix(v.alpha.clone()).unwrap();
            let base = [0.3, 0.4, 0.5, 0.6];
            let a = apply_response(&v, &base, &w).unwrap();
            let b = apply_response(&m, &base, &w).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }

        #[test]
        fn response_balances_and_is_linear(raw in proptest::collection::vec(0.01f64..1.0, 12), w1 in proptest::collection::vec(-0.1f64..0.1, 3), w2 in proptest::collection::vec(-0.1f64..0.1, 3)) {
            let mut alpha = DMatrix::from_column_slice(4, 3, &raw);
            for mut c in alpha.column_iter_mut() {
                let s = c.sum();
                c /= s;
            }
            let p = ResponsePolicy::from_matrix(alpha).unwrap();
            let base = [0.0; 4];
            let r1 = apply_response(&p, &base, &w1).unwrap();
            let r2 = apply_response(&p, &base, &w2).unwrap();
            let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
            let r12 = apply_response(&p, &base, &sum).unwrap();
            let total: f64 = r1.iter().sum();
            prop_assert!((total - w1.iter().sum::<f64>()).abs() < 1e-12);
            for g in 0..4 {
                prop_assert!((r12[g] - r1[g] - r2[g]).abs() < 1e-12);
            }
        }
    }
}
