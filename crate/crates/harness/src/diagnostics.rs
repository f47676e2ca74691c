//! Convergence diagnostics computed from a finished run.

use zobilevel::algorithm::{RunRecord, Schedules};
use zobilevel::metric::{dual_norm, Point, RieszMap};
use zobilevel::prox::{grad_mapping, Regularizer};
use zobilevel::rng::StreamKey;
use zobilevel::smoothing::{grad_estimate, SmoothingParams, ZerothOrderOracle};
use zobilevel::stationarity::goldstein_residual_bound;

use crate::error::Result;

/// Least-squares slope of `log(min_{s<=k} v_s)` against `log k`, `k = 1..`.
/// Non-positive running minima are skipped.
pub fn running_min_slope(values: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| {
            best = best.min(v);
            (best > 0.0).then(|| (((i + 1) as f64).ln(), best.ln()))
        })
        .collect();
    least_squares_slope(&pts)
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Settings for [`goldstein_surrogate`].
#[derive(Clone, Copy, Debug)]
pub struct SurrogateOptions {
    pub eps1: f64,
    /// Samples in the reference estimate of `∇h_η(y_k)`.
    pub reference_samples: usize,
    /// Fresh batches averaged for the conditional mean of `||ΔW_{k+1}||*²`.
    pub resamples: usize,
    pub seed: u64,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        SurrogateOptions { eps1: 0.05, reference_samples: 20_000, resamples: 200, seed: 0x5eed }
    }
}

/// Conditional mean, given `y_k`, of the residual surrogate
/// `18 ||G_{η,α_k}(y_k)||² + 21 ||ΔW_{k+1}||*² + 2ε1²/3`.
///
/// `G` is evaluated with a high-accuracy estimate of `∇h_η(y_k)` and
/// `ΔW_{k+1} = V̂_{k+1} - ∇h_η(y_k)` is averaged over fresh batches of size
/// `m_{k+1}`. Averaging over the batch removes the single-draw noise that
/// otherwise dominates the comparison between two iterations.
pub fn goldstein_surrogate<O: ZerothOrderOracle + ?Sized>(
    oracle: &O,
    record: &RunRecord,
    k: usize,
    schedules: &Schedules,
    regularizer: &Regularizer,
    metric: &RieszMap,
    opts: SurrogateOptions,
) -> Result<f64> {
    let y: &Point = &record.iterates[k];
    let params = SmoothingParams::new(schedules.eta(k.max(1)), metric.clone())?;
    let root = StreamKey::new(opts.seed).child(k as u64);
    let reference = grad_estimate(oracle, y, &params, opts.reference_samples, root.child(0).0)?.value;
    let alpha = schedules.alpha(k.max(1));
    let map = grad_mapping(y, &reference, alpha, regularizer, metric)?;
    let m = schedules.batch(k + 1);
    let mut noise = 0.0;
    for r in 0..opts.resamples {
        let v = grad_estimate(oracle, y, &params, m, root.child(1).child(r as u64).0)?.value;
        let dw: Vec<f64> = v.iter().zip(reference.iter()).map(|(a, b)| a - b).collect();
        noise += dual_norm(metric, &dw)?.powi(2);
    }
    noise /= opts.resamples as f64;
    Ok(goldstein_residual_bound(map.map_norm.powi(2), noise, opts.eps1))
}
