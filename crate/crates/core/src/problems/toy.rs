//! Convex toy problem `h(y) = ||y - y*||` on a box, noise free.

use crate::error::{check_dim, Result};
use crate::metric::{euclid_norm, sub, Point};
use crate::smoothing::{NoiseSample, ZerothOrderOracle};

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceOracle {
    pub center: Vec<f64>,
}

impl DistanceOracle {
    pub fn new(center: Vec<f64>) -> Self {
        DistanceOracle { center }
    }
}

impl ZerothOrderOracle for DistanceOracle {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, y: &Point, _sample: NoiseSample) -> Result<f64> {
        check_dim(self.center.len(), y.len())?;
        Ok(euclid_norm(&sub(y, &self.center)))
    }

    fn lip0_hint(&self) -> Option<f64> {
        Some(1.0)
    }
}
