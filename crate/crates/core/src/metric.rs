//! Euclidean geometry of the parameter space.
//!
//! The space carries the inner product `<By, y>` for a symmetric positive
//! definite Riesz map `B`. Only diagonal maps are supported, which keeps `B^-1`
//! exact. Primal elements are [`Point`]s, dual elements (gradients, gradient
//! estimates) are [`DualVector`]s; `B` maps the former onto the latter.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

macro_rules! coord_vector {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }

        impl From<&[f64]> for $name {
            fn from(v: &[f64]) -> Self {
                Self(v.to_vec())
            }
        }
    };
}

coord_vector!(Point);
coord_vector!(DualVector);

/// Diagonal SPD Riesz map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RieszMap {
    diag: Vec<f64>,
}

impl RieszMap {
    pub fn identity(n: usize) -> Self {
        RieszMap { diag: vec![1.0; n] }
    }

    pub fn diagonal(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::invalid("Riesz map needs at least one dimension"));
        }
        if let Some(bad) = diag.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::invalid(format!("Riesz map diagonal entry {bad} is not positive")));
        }
        Ok(RieszMap { diag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn is_identity(&self) -> bool {
        self.diag.iter().all(|&d| d == 1.0)
    }

    /// `B y`.
    pub fn apply(&self, y: &[f64]) -> Result<DualVector> {
        check_dim(self.dim(), y.len())?;
        Ok(DualVector(y.iter().zip(&self.diag).map(|(v, d)| v * d).collect()))
    }

    /// `B^-1 v`.
    pub fn apply_inv(&self, v: &[f64]) -> Result<Point> {
        check_dim(self.dim(), v.len())?;
        Ok(Point(v.iter().zip(&self.diag).map(|(v, d)| v / d).collect()))
    }

    /// `<B a, b>`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_dim(self.dim(), a.len())?;
        check_dim(self.dim(), b.len())?;
        Ok(self.inner_unchecked(a, b))
    }

    pub(crate) fn inner_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.diag).map(|((x, y), d)| d * x * y).sum()
    }

    pub(crate) fn norm_sq_unchecked(&self, y: &[f64]) -> f64 {
        y.iter().zip(&self.diag).map(|(v, d)| d * v * v).sum()
    }

    pub(crate) fn dual_norm_sq_unchecked(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.diag).map(|(v, d)| v * v / d).sum()
    }
}

/// `||y|| = <By, y>^{1/2}`.
pub fn norm(metric: &RieszMap, y: &[f64]) -> Result<f64> {
    check_dim(metric.dim(), y.len())?;
    Ok(metric.norm_sq_unchecked(y).sqrt())
}

/// `||v||_* = <v, B^-1 v>^{1/2}`.
pub fn dual_norm(metric: &RieszMap, v: &[f64]) -> Result<f64> {
    check_dim(metric.dim(), v.len())?;
    Ok(metric.dual_norm_sq_unchecked(v).sqrt())
}

/// `2<y-u, B(x-y)> - (||x-u||^2 - ||x-y||^2 - ||y-u||^2)`, which vanishes up to round-off.
pub fn pythagoras_residual(metric: &RieszMap, x: &[f64], y: &[f64], u: &[f64]) -> Result<f64> {
    let n = metric.dim();
    check_dim(n, x.len())?;
    check_dim(n, y.len())?;
    check_dim(n, u.len())?;
    let y_u = sub(y, u);
    let x_y = sub(x, y);
    let x_u = sub(x, u);
    let lhs = 2.0 * metric.inner_unchecked(&y_u, &x_y);
    let rhs = metric.norm_sq_unchecked(&x_u) - metric.norm_sq_unchecked(&x_y) - metric.norm_sq_unchecked(&y_u);
    Ok(lhs - rhs)
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn euclid_norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn norm_examples() {
        let id = RieszMap::identity(3);
        assert_eq!(norm(&id, &[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(norm(&id, &[3.0, 4.0, 0.0]).unwrap(), 5.0);
        let b = RieszMap::diagonal(vec![4.0, 1.0]).unwrap();
        assert!((norm(&b, &[1.0, 2.0]).unwrap() - 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dual_norm_examples() {
        assert_eq!(dual_norm(&RieszMap::identity(2), &[3.0, 4.0]).unwrap(), 5.0);
        let b = RieszMap::diagonal(vec![4.0, 1.0]).unwrap();
        assert_eq!(dual_norm(&b, &[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(dual_norm(&b, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let id = RieszMap::identity(3);
        assert!(matches!(norm(&id, &[1.0]), Err(Error::DimensionMismatch { expected: 3, got: 1 })));
        assert!(dual_norm(&id, &[1.0, 2.0]).is_err());
        assert!(pythagoras_residual(&id, &[0.0; 3], &[0.0; 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn rejects_non_positive_diagonal() {
        assert!(RieszMap::diagonal(vec![1.0, 0.0]).is_err());
        assert!(RieszMap::diagonal(vec![-2.0]).is_err());
        assert!(RieszMap::diagonal(vec![]).is_err());
    }

    #[test]
    fn pythagoras_trivial() {
        let b = RieszMap::diagonal(vec![2.0, 3.0]).unwrap();
        assert_eq!(pythagoras_residual(&b, &[0.0; 2], &[0.0; 2], &[0.0; 2]).unwrap(), 0.0);
        let r = pythagoras_residual(&b, &[1.0, -2.0], &[0.3, 0.7], &[-1.1, 4.0]).unwrap();
        assert!(r.abs() < 1e-12);
    }

    fn triple_and_map() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..8).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0..10.0f64, n),
                prop::collection::vec(-10.0..10.0f64, n),
                prop::collection::vec(-10.0..10.0f64, n),
                prop::collection::vec(0.01..100.0f64, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn pythagoras_holds_for_any_diagonal_map((x, y, u, d) in triple_and_map()) {
            let b = RieszMap::diagonal(d).unwrap();
            let scale = 1.0 + b.norm_sq_unchecked(&x) + b.norm_sq_unchecked(&y) + b.norm_sq_unchecked(&u);
            let r = pythagoras_residual(&b, &x, &y, &u).unwrap();
            prop_assert!(r.abs() <= 1e-10 * scale);
        }

        #[test]
        fn riesz_map_is_an_isometry((y, _x, _u, d) in triple_and_map()) {
            let b = RieszMap::diagonal(d).unwrap();
            let by = b.apply(&y).unwrap();
            let lhs = dual_norm(&b, &by).unwrap();
            let rhs = norm(&b, &y).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }
}
