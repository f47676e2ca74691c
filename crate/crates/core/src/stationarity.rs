//! Goldstein-stationarity utilities.
//!
//! A smoothing radius `η <= η̄` makes `∇h_η(y)` an `ε`-approximate element of
//! the Goldstein `δ`-subdifferential of `h`. Computing `η̄` needs the lower
//! branch `W_{-1}` of the Lambert W function. The auxiliary points
//! `ŷ_k = P_{α_1}(y_k, V̂_{k+1})` and the residual surrogate
//! `18||G||² + 21||ΔW||*² + 2ε1²/3` track stationarity along a run.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{DualVector, Point, RieszMap};
use crate::prox::{prox_map_p, Regularizer};

/// Lower branch `W_{-1}(x)` for `-1/e <= x < 0`: the solution `w <= -1` of
/// `w e^w = x`.
pub fn lambert_w_neg1(x: f64) -> Result<f64> {
    let branch = -1.0 / E;
    if !(x < 0.0) || !x.is_finite() || x < branch - 1e-16 {
        return Err(Error::Domain(x));
    }
    if x <= branch + 1e-16 {
        return Ok(-1.0);
    }
    let mut w = if x < -0.25 {
        // Series about the branch point in p = -sqrt(2(1 + e x)).
        let p = -(2.0 * (1.0 + E * x)).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        let next = (w - step).min(-1.0);
        let done = (next - w).abs() <= 4.0 * f64::EPSILON * w.abs();
        w = next;
        if done {
            break;
        }
    }
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldsteinParams {
    /// Target residual `ε1`.
    pub eps1: f64,
    /// Goldstein radius `ε2`.
    pub eps2: f64,
    pub n: usize,
    pub lip0: f64,
}

impl GoldsteinParams {
    fn validate(&self) -> Result<()> {
        if !(self.eps1 > 0.0 && self.eps2 > 0.0 && self.lip0 > 0.0 && self.n >= 1) {
            return Err(Error::invalid("Goldstein parameters must be positive"));
        }
        Ok(())
    }

    /// `ν = min{ε1/(4 lip0), (2π)^{n/2} - 1/2}`.
    pub fn nu(&self) -> f64 {
        let n = self.n as f64;
        (self.eps1 / (4.0 * self.lip0)).min((2.0 * PI).powf(n / 2.0) - 0.5)
    }

    /// `Γ = [-n W_{-1}(-ν^{2/n} / (2πe))]^{1/2}`.
    pub fn gamma(&self) -> Result<f64> {
        self.validate()?;
        let n = self.n as f64;
        let arg = -self.nu().powf(2.0 / n) / (2.0 * PI * E);
        Ok((-n * lambert_w_neg1(arg)?).sqrt())
    }
}

/// `η̄ = min{1, δ/Γ}`.
pub fn eta_bar(params: &GoldsteinParams, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    Ok((delta / params.gamma()?).min(1.0))
}

/// `ŷ_k = P_{α_1}(y_k, V̂_{k+1})`, always at the first step size.
pub fn auxiliary_point(y_k: &Point, v_hat: &DualVector, alpha1: f64, r: &Regularizer, metric: &RieszMap) -> Result<Point> {
    prox_map_p(y_k, v_hat, alpha1, r, metric)
}

/// `18 ||G||² + 21 ||ΔW||*² + (2/3) ε1²`.
pub fn goldstein_residual_bound(map_norm_sq: f64, delta_w_norm_sq: f64, eps1: f64) -> f64 {
    18.0 * map_norm_sq + 21.0 * delta_w_norm_sq + 2.0 / 3.0 * eps1 * eps1
}
