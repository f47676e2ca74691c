//! Proximal operators and prox-gradient mappings.
//!
//! `prox_{t r}(w) = argmin_u { r(u) + ||u - w||² / (2t) }` in the metric of a
//! diagonal [`RieszMap`]. `P_t(y, v) = prox_{t r}(y - t B^-1 v)` is the step of
//! the outer algorithm and `(y - P_t(y, v)) / t` its gradient mapping.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metric::{DualVector, Point, RieszMap};

/// A user-supplied closed convex proper function with a computable prox.
pub trait CustomProx: Send + Sync {
    /// `prox_{t r}(w)` in the metric `metric`.
    fn prox(&self, t: f64, w: &[f64], metric: &RieszMap) -> Vec<f64>;

    /// `r(u)`, possibly `+inf`.
    fn value(&self, u: &[f64]) -> f64;
}

/// The non-smooth part `r` of a composite objective.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    Zero,
    /// Indicator of `[lo, hi]`.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `(c/2) ||u||²`.
    ScaledSq {
        weight: f64,
    },
    #[serde(skip)]
    Custom(Arc<dyn CustomProx>),
}

impl fmt::Debug for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularizer::Zero => write!(f, "Zero"),
            Regularizer::Box { lo, hi } => f.debug_struct("Box").field("lo", lo).field("hi", hi).finish(),
            Regularizer::ScaledSq { weight } => f.debug_struct("ScaledSq").field("weight", weight).finish(),
            Regularizer::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Regularizer {
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::invalid("box needs lo <= hi componentwise"));
        }
        Ok(Regularizer::Box { lo, hi })
    }

    /// The box `[lo, hi]^n`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(vec![lo; n], vec![hi; n])
    }

    pub fn scaled_sq(weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::invalid(format!("scaled_sq weight must be >= 0, got {weight}")));
        }
        Ok(Regularizer::ScaledSq { weight })
    }

    /// `r(u)` in the given metric; `+inf` outside the domain.
    pub fn value(&self, u: &[f64], metric: &RieszMap) -> f64 {
        match self {
            Regularizer::Zero => 0.0,
            Regularizer::Box { lo, hi } => {
                if u.iter().zip(lo).zip(hi).all(|((x, l), h)| l <= x && x <= h) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::ScaledSq { weight } => 0.5 * weight * metric.norm_sq_unchecked(u),
            Regularizer::Custom(c) => c.value(u),
        }
    }

    /// Whether `u` lies in the domain of `r`.
    pub fn contains(&self, u: &[f64], metric: &RieszMap) -> bool {
        self.value(u, metric).is_finite()
    }

    fn check(&self, n: usize) -> Result<()> {
        if let Regularizer::Box { lo, .. } = self {
            check_dim(lo.len(), n)?;
        }
        Ok(())
    }
}

fn check_step(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("prox step must be positive, got {t}")))
    }
}

/// `prox_{t r}(w)` in the metric of `metric`.
pub fn prox(r: &Regularizer, t: f64, w: &Point, metric: &RieszMap) -> Result<Point> {
    check_step(t)?;
    check_dim(metric.dim(), w.len())?;
    r.check(w.len())?;
    Ok(Point(prox_unchecked(r, t, w, metric)))
}

fn prox_unchecked(r: &Regularizer, t: f64, w: &[f64], metric: &RieszMap) -> Vec<f64> {
    match r {
        Regularizer::Zero => w.to_vec(),
        // The objective is separable for diagonal B, so the clamp is exact in any such metric.
        Regularizer::Box { lo, hi } => w.iter().zip(lo).zip(hi).map(|((x, l), h)| x.clamp(*l, *h)).collect(),
        // r(u) = (c/2)||u||² in the same metric gives (1 + tc) B u = B w.
        Regularizer::ScaledSq { weight } => w.iter().map(|x| x / (1.0 + t * weight)).collect(),
        Regularizer::Custom(c) => c.prox(t, w, metric),
    }
}

/// `P_t(y, v) = prox_{t r}(y - t B^-1 v)`.
pub fn prox_map_p(y: &Point, v: &DualVector, t: f64, r: &Regularizer, metric: &RieszMap) -> Result<Point> {
    check_step(t)?;
    check_dim(metric.dim(), y.len())?;
    check_dim(metric.dim(), v.len())?;
    r.check(y.len())?;
    let w: Vec<f64> = y.iter().zip(v.iter()).zip(metric.diag()).map(|((y, v), d)| y - t * v / d).collect();
    Ok(Point(prox_unchecked(r, t, &w, metric)))
}

/// One evaluation of the prox-gradient mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxGradSnapshot {
    pub y: Point,
    pub v: DualVector,
    pub t: f64,
    pub y_plus: Point,
    /// `(y - y_plus) / t`, a primal vector.
    pub map: Point,
    /// `||map||` in the `B`-metric.
    pub map_norm: f64,
}

pub fn grad_mapping(y: &Point, v: &DualVector, t: f64, r: &Regularizer, metric: &RieszMap) -> Result<ProxGradSnapshot> {
    let y_plus = prox_map_p(y, v, t, r, metric)?;
    let map = Point(y.iter().zip(y_plus.iter()).map(|(a, b)| (a - b) / t).collect());
    let map_norm = metric.norm_sq_unchecked(&map).sqrt();
    Ok(ProxGradSnapshot { y: y.clone(), v: v.clone(), t, y_plus, map, map_norm })
}

/// `φ_y(α) = ||y - T_α(y)|| / α` for each step in `alphas`, where `T_α` uses
/// the gradient `grad_fn(y)`.
pub fn phi_monotonicity_check<F>(y: &Point, grad_fn: F, r: &Regularizer, metric: &RieszMap, alphas: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&Point) -> DualVector,
{
    let g = grad_fn(y);
    alphas.iter().map(|&a| grad_mapping(y, &g, a, r, metric).map(|s| s.map_norm)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prox_examples() {
        let id3 = RieszMap::identity(3);
        let w = Point(vec![10.0, -9.0, 0.0]);
        assert_eq!(prox(&Regularizer::Zero, 0.3, &w, &id3).unwrap(), w);
        let cube = Regularizer::cube(3, -7.0, 7.0).unwrap();
        assert_eq!(prox(&cube, 1.0, &w, &id3).unwrap().0, vec![7.0, -7.0, 0.0]);
        let sq = Regularizer::scaled_sq(1.0).unwrap();
        assert_eq!(prox(&sq, 1.0, &Point(vec![2.0, 4.0]), &RieszMap::identity(2)).unwrap().0, vec![1.0, 2.0]);
        assert!(prox(&sq, 0.0, &Point(vec![2.0, 4.0]), &RieszMap::identity(2)).is_err());
        assert!(prox(&cube, 1.0, &Point(vec![2.0, 4.0]), &RieszMap::identity(2)).is_err());
    }

    #[test]
    fn box_prox_is_metric_independent() {
        let cube = Regularizer::cube(3, -1.0, 1.0).unwrap();
        let w = Point(vec![3.0, 0.5, -2.0]);
        let b = RieszMap::diagonal(vec![0.1, 5.0, 2.0]).unwrap();
        let a = prox(&cube, 0.4, &w, &b).unwrap();
        let c = prox(&cube, 7.0, &w, &RieszMap::identity(3)).unwrap();
        assert_eq!(a, c);
        // Brute force over a grid confirms the clamp minimizes the B-weighted distance.
        for i in 0..3 {
            let best =
                (0..=2000).map(|j| -1.0 + j as f64 / 1000.0).min_by(|p, q| ((p - w[i]).powi(2)).total_cmp(&(q - w[i]).powi(2))).unwrap();
            assert!((best - a[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn prox_map_examples() {
        let id = RieszMap::identity(2);
        let y = Point(vec![0.3, -0.2]);
        assert_eq!(prox_map_p(&y, &DualVector::zeros(2), 0.5, &Regularizer::Zero, &id).unwrap(), y);
        let v = DualVector(vec![1.0, 2.0]);
        let p = prox_map_p(&y, &v, 0.5, &Regularizer::Zero, &id).unwrap();
        assert!((p[0] + 0.2).abs() < 1e-15 && (p[1] + 1.2).abs() < 1e-15);
        let cube = Regularizer::cube(2, -7.0, 7.0).unwrap();
        let p = prox_map_p(&Point::zeros(2), &DualVector(vec![1.0, 0.0]), 7.0, &cube, &id).unwrap();
        assert_eq!(p.0, vec![-7.0, 0.0]);
    }

    #[test]
    fn grad_mapping_examples() {
        let id = RieszMap::identity(1);
        let bx = Regularizer::boxed(vec![-0.25], vec![0.25]).unwrap();
        let s = grad_mapping(&Point(vec![0.0]), &DualVector(vec![2.0]), 0.5, &bx, &id).unwrap();
        assert_eq!(s.y_plus.0, vec![-0.25]);
        assert_eq!(s.map_norm, 0.5);

        let id3 = RieszMap::identity(3);
        let v = DualVector(vec![0.4, -1.5, 2.0]);
        let s = grad_mapping(&Point(vec![1.0, 2.0, 3.0]), &v, 0.37, &Regularizer::Zero, &id3).unwrap();
        for (m, v) in s.map.iter().zip(v.iter()) {
            assert!((m - v).abs() < 1e-12);
        }

        // Fixed point: at a corner of the box with the gradient pointing outward.
        let cube = Regularizer::cube(2, 0.0, 1.0).unwrap();
        let s = grad_mapping(&Point(vec![1.0, 0.0]), &DualVector(vec![-3.0, 2.0]), 0.2, &cube, &RieszMap::identity(2)).unwrap();
        assert_eq!(s.map_norm, 0.0);
    }

    #[test]
    fn phi_examples() {
        let id = RieszMap::identity(2);
        let g = |_: &Point| DualVector(vec![3.0, 4.0]);
        let phis = phi_monotonicity_check(&Point(vec![0.1, 0.1]), g, &Regularizer::Zero, &id, &[1.0, 0.5, 0.1]).unwrap();
        assert!(phis.iter().all(|p| (p - 5.0).abs() < 1e-12));
        let cube = Regularizer::cube(2, 0.0, 1.0).unwrap();
        let stationary = |_: &Point| DualVector(vec![1.0, 1.0]);
        let phis = phi_monotonicity_check(&Point(vec![0.0, 0.0]), stationary, &cube, &id, &[1.0, 0.5]).unwrap();
        assert_eq!(phis, vec![0.0, 0.0]);
    }

    fn regularizers(n: usize) -> impl Strategy<Value = Regularizer> {
        prop_oneof![
            Just(Regularizer::Zero),
            (prop::collection::vec(-5.0..0.0f64, n), prop::collection::vec(0.0..5.0f64, n))
                .prop_map(|(lo, hi)| Regularizer::boxed(lo, hi).unwrap()),
            (0.0..10.0f64).prop_map(|c| Regularizer::scaled_sq(c).unwrap()),
        ]
    }

    fn instance() -> impl Strategy<Value = (Regularizer, Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
        (1usize..6).prop_flat_map(|n| {
            (
                regularizers(n),
                prop::collection::vec(0.1..10.0f64, n),
                prop::collection::vec(-20.0..20.0f64, n),
                prop::collection::vec(-20.0..20.0f64, n),
                0.01..5.0f64,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn prox_is_non_expansive((r, d, w1, w2, t) in instance()) {
            let b = RieszMap::diagonal(d).unwrap();
            let p1 = prox(&r, t, &Point(w1.clone()), &b).unwrap();
            let p2 = prox(&r, t, &Point(w2.clone()), &b).unwrap();
            let lhs = crate::metric::norm(&b, &crate::metric::sub(&p1, &p2)).unwrap();
            let rhs = crate::metric::norm(&b, &crate::metric::sub(&w1, &w2)).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn prox_variational_characterization(
            (r, d, w, _w2, t) in instance(),
            seeds in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 100),
        ) {
            let b = RieszMap::diagonal(d).unwrap();
            let u = prox(&r, t, &Point(w.clone()), &b).unwrap();
            let ru = r.value(&u, &b);
            for s in seeds {
                // Feasible test points: random points mapped into the domain by the prox itself.
                let z: Vec<f64> = w.iter().zip(&s).map(|(x, e)| x + 10.0 * e).collect();
                let z = prox(&r, t, &Point(z), &b).unwrap();
                let lhs = b.inner_unchecked(&crate::metric::sub(&w, &u), &crate::metric::sub(&z, &u));
                let rhs = t * r.value(&z, &b) - t * ru;
                prop_assert!(lhs <= rhs + 1e-9 * (1.0 + lhs.abs() + rhs.abs()));
            }
        }

        #[test]
        fn gradient_mapping_sandwich(
            (r, d, y, gv, t) in instance(),
            noise in prop::collection::vec(-3.0..3.0f64, 6),
        ) {
            let b = RieszMap::diagonal(d).unwrap();
            let y = prox(&r, 1.0, &Point(y), &b).unwrap();
            let grad = DualVector(gv.clone());
            let est = DualVector(gv.iter().zip(&noise).map(|(g, e)| g + e).collect());
            let exact = grad_mapping(&y, &grad, t, &r, &b).unwrap();
            let stoch = grad_mapping(&y, &est, t, &r, &b).unwrap();
            let dw = b.dual_norm_sq_unchecked(&crate::metric::sub(&est, &grad));
            let lhs = exact.map_norm.powi(2);
            let rhs = 2.0 * stoch.map_norm.powi(2) + 2.0 * dw;
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
        }
    }
}
