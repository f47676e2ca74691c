//! Gaussian smoothing and zeroth-order gradient estimation.
//!
//! For a Lipschitz function `h` the smoothed surrogate is
//! `h_η(y) = E[h(y + ηU)]` with `U ~ N(0, B^-1)`, so that `||U||` has the
//! standard Gaussian law in the `B`-metric and `BU ~ N(0, B)`. Its gradient is
//! `E[(h(y + ηU) - h(y)) / η · BU]`, which the batch estimators below
//! approximate with `m` paired evaluations that share both the direction `U^i`
//! and the noise realisation `ξ^i`.
//!
//! Each summand is addressed by a [`SampleKey`] so the estimate does not depend
//! on evaluation order; batches are evaluated with rayon and reduced in index
//! order.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metric::{DualVector, Point, RieszMap};
use crate::rng::StreamKey;

const DIRECTION_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// One realisation of the problem noise `ξ = (ξ1, ξ2)`.
///
/// Oracles derive whatever randomness they need (which training pair, which
/// measurement noise) from [`NoiseSample::stream`], so equal tokens always
/// denote the same realisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseSample(pub StreamKey);

impl NoiseSample {
    pub fn from_seed(seed: u64) -> Self {
        NoiseSample(StreamKey::new(seed))
    }

    /// Independent stream for one component of the realisation.
    pub fn stream(self, tag: u64) -> ChaCha8Rng {
        self.0.child(tag).rng()
    }

    /// Uniform index in `0..len`, drawn from a dedicated component stream.
    pub fn index_below(self, tag: u64, len: usize) -> usize {
        self.stream(tag).random_range(0..len)
    }
}

/// Address of one summand of a batch estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampleKey {
    pub seed: u64,
    pub index: u64,
}

impl SampleKey {
    fn base(self) -> StreamKey {
        StreamKey::new(self.seed).child(self.index)
    }

    pub fn noise(self) -> NoiseSample {
        NoiseSample(self.base().child(NOISE_STREAM))
    }

    pub fn direction_rng(self) -> ChaCha8Rng {
        self.base().child(DIRECTION_STREAM).rng()
    }

    /// Keys `(seed, 0..m)`.
    pub fn batch(seed: u64, m: usize) -> Vec<SampleKey> {
        (0..m as u64).map(|index| SampleKey { seed, index }).collect()
    }
}

/// A stochastic zeroth-order oracle `H(y, ξ)`.
pub trait ZerothOrderOracle: Sync {
    fn dim(&self) -> usize;

    /// Exact value `H(y, ξ)`.
    fn eval(&self, y: &Point, sample: NoiseSample) -> Result<f64>;

    /// Value `H^β(y, ξ)` computed from a `β`-accurate lower-level solution.
    /// `β = 0` must coincide with [`ZerothOrderOracle::eval`]; oracles without a
    /// lower level ignore `β`.
    fn eval_inexact(&self, y: &Point, sample: NoiseSample, beta: f64) -> Result<f64> {
        let _ = beta;
        self.eval(y, sample)
    }

    /// User estimate of the Lipschitz constant of `H(., ξ)` in `L²`.
    fn lip0_hint(&self) -> Option<f64> {
        None
    }

    /// Cumulative work done by the oracle, for accounting.
    fn work(&self) -> WorkCounters {
        WorkCounters::default()
    }
}

impl<T: ZerothOrderOracle + ?Sized> ZerothOrderOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, y: &Point, sample: NoiseSample) -> Result<f64> {
        (**self).eval(y, sample)
    }
    fn eval_inexact(&self, y: &Point, sample: NoiseSample, beta: f64) -> Result<f64> {
        (**self).eval_inexact(y, sample, beta)
    }
    fn lip0_hint(&self) -> Option<f64> {
        (**self).lip0_hint()
    }
    fn work(&self) -> WorkCounters {
        (**self).work()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkCounters {
    pub evaluations: u64,
    pub lower_solves: u64,
    pub lower_iterations: u64,
}

/// Thread-safe counters an oracle can embed to report its work.
#[derive(Debug, Default)]
pub struct WorkMeter {
    evaluations: AtomicU64,
    lower_solves: AtomicU64,
    lower_iterations: AtomicU64,
}

impl WorkMeter {
    pub fn record_eval(&self) {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_solve(&self, iters: usize) {
        self.lower_solves.fetch_add(1, Ordering::Relaxed);
        self.lower_iterations.fetch_add(iters as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> WorkCounters {
        WorkCounters {
            evaluations: self.evaluations.load(Ordering::Relaxed),
            lower_solves: self.lower_solves.load(Ordering::Relaxed),
            lower_iterations: self.lower_iterations.load(Ordering::Relaxed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub eta: f64,
    pub metric: RieszMap,
}

impl SmoothingParams {
    pub fn new(eta: f64, metric: RieszMap) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::invalid(format!("smoothing radius must be positive, got {eta}")));
        }
        Ok(SmoothingParams { eta, metric })
    }

    /// Identity metric in dimension `n`.
    pub fn euclidean(eta: f64, n: usize) -> Result<Self> {
        Self::new(eta, RieszMap::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradEstimate {
    pub value: DualVector,
    pub batch: usize,
    pub seed: u64,
}

/// Draws `U ~ N(0, B^-1)` and returns `(U, BU)`.
pub fn gaussian_direction<R: Rng>(metric: &RieszMap, rng: &mut R) -> (Point, DualVector) {
    let n = metric.dim();
    let mut u = Vec::with_capacity(n);
    let mut bu = Vec::with_capacity(n);
    for &d in metric.diag() {
        let z: f64 = rng.sample(StandardNormal);
        let s = d.sqrt();
        u.push(z / s);
        bu.push(z * s);
    }
    (Point(u), DualVector(bu))
}

fn perturbed(y: &[f64], eta: f64, u: &[f64]) -> Point {
    Point(y.iter().zip(u).map(|(a, b)| a + eta * b).collect())
}

/// Monte-Carlo estimate of `h_η(y)` together with its standard error.
pub fn smoothed_value_with_stderr<O: ZerothOrderOracle + ?Sized>(
    oracle: &O,
    y: &Point,
    params: &SmoothingParams,
    m: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(Error::EmptyBatch);
    }
    check_dim(params.dim(), y.len())?;
    check_dim(oracle.dim(), y.len())?;
    let values = SampleKey::batch(seed, m)
        .into_par_iter()
        .map(|key| {
            let (u, _) = gaussian_direction(&params.metric, &mut key.direction_rng());
            let v = oracle.eval(&perturbed(y, params.eta, &u), key.noise())?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteValue)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_stderr(&values))
}

/// Monte-Carlo estimate of `h_η(y) = E[H(y + ηU, ξ)]` from `m` samples.
pub fn smoothed_value<O: ZerothOrderOracle + ?Sized>(oracle: &O, y: &Point, params: &SmoothingParams, m: usize, seed: u64) -> Result<f64> {
    smoothed_value_with_stderr(oracle, y, params, m, seed).map(|(mean, _)| mean)
}

pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One summand `(H(y + ηU, ξ) - H(y, ξ)) / η · BU`; `beta = None` uses the exact oracle.
pub fn estimator_term<O: ZerothOrderOracle + ?Sized>(
    oracle: &O,
    y: &Point,
    params: &SmoothingParams,
    key: SampleKey,
    beta: Option<f64>,
) -> Result<DualVector> {
    let (u, bu) = gaussian_direction(&params.metric, &mut key.direction_rng());
    let xi = key.noise();
    let shifted = perturbed(y, params.eta, &u);
    let (hi, lo) = match beta {
        None => (oracle.eval(&shifted, xi)?, oracle.eval(y, xi)?),
        Some(b) => (oracle.eval_inexact(&shifted, xi, b)?, oracle.eval_inexact(y, xi, b)?),
    };
    if !(hi.is_finite() && lo.is_finite()) {
        return Err(Error::NonFiniteValue);
    }
    let scale = (hi - lo) / params.eta;
    Ok(DualVector(bu.iter().map(|b| scale * b).collect()))
}

/// Batch estimator over an explicit list of sample keys.
pub fn grad_estimate_with_keys<O: ZerothOrderOracle + ?Sized>(
    oracle: &O,
    y: &Point,
    params: &SmoothingParams,
    keys: &[SampleKey],
    beta: Option<f64>,
) -> Result<DualVector> {
    if keys.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_dim(params.dim(), y.len())?;
    check_dim(oracle.dim(), y.len())?;
    if let Some(b) = beta {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::invalid(format!("lower-level accuracy must be >= 0, got {b}")));
        }
    }
    let terms = keys.par_iter().map(|&key| estimator_term(oracle, y, params, key, beta)).collect::<Result<Vec<_>>>()?;
    let mut acc = vec![0.0; y.len()];
    for term in &terms {
        for (a, t) in acc.iter_mut().zip(term.iter()) {
            *a += t;
        }
    }
    let m = keys.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    Ok(DualVector(acc))
}

/// Exact-lower-level estimator `V̂_{η,m}(y)`.
pub fn grad_estimate<O: ZerothOrderOracle + ?Sized>(
    oracle: &O,
    y: &Point,
    params: &SmoothingParams,
    m: usize,
    seed: u64,
) -> Result<GradEstimate> {
    let value = grad_estimate_with_keys(oracle, y, params, &SampleKey::batch(seed, m), None)?;
    Ok(GradEstimate { value, batch: m, seed })
}

/// Inexact-lower-level estimator `V̂^β_{η,m}(y)`. With `beta = 0` the result is
/// bitwise identical to [`grad_estimate`].
pub fn grad_estimate_inexact<O: ZerothOrderOracle + ?Sized>(
    oracle: &O,
    y: &Point,
    params: &SmoothingParams,
    m: usize,
    beta: f64,
    seed: u64,
) -> Result<GradEstimate> {
    let beta = if beta == 0.0 { None } else { Some(beta) };
    let value = grad_estimate_with_keys(oracle, y, params, &SampleKey::batch(seed, m), beta)?;
    Ok(GradEstimate { value, batch: m, seed })
}

/// Bound on `M_p = E||U||^p`: `n^{p/2}` for `p <= 2`, `(p + n)^{p/2}` above.
pub fn gaussian_moment_bound(p: f64, n: usize) -> f64 {
    assert!(p >= 0.0, "moment order must be non-negative");
    let n = n as f64;
    if p <= 2.0 {
        n.powf(p / 2.0)
    } else {
        (p + n).powf(p / 2.0)
    }
}

/// Lipschitz constant of `∇h_η`: `√n · lip0 / η`.
pub fn lip1_of_smoothed(lip0: f64, eta: f64, n: usize) -> f64 {
    (n as f64).sqrt() * lip0 / eta
}

/// Second-moment bound `(4 + n)² lip0² / m` of the exact estimator.
pub fn variance_bound(lip0_l2: f64, n: usize, m: usize) -> f64 {
    assert!(m >= 1, "batch size must be at least 1");
    let s = (4.0 + n as f64) * lip0_l2;
    s * s / m as f64
}

/// Heuristic Lipschitz estimate: the largest difference quotient
/// `|H(a, ξ) - H(b, ξ)| / ||a - b||` over `pairs` random pairs drawn uniformly
/// in the box `[lo, hi]`.
pub fn probe_lip0<O: ZerothOrderOracle + ?Sized>(
    oracle: &O,
    metric: &RieszMap,
    lo: &[f64],
    hi: &[f64],
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let n = oracle.dim();
    check_dim(n, lo.len())?;
    check_dim(n, hi.len())?;
    check_dim(n, metric.dim())?;
    let root = StreamKey::new(seed);
    let quotients = (0..pairs as u64)
        .into_par_iter()
        .map(|i| {
            let key = root.child(i);
            let mut rng = key.child(0).rng();
            let mut draw =
                || -> Point { Point(lo.iter().zip(hi).map(|(&l, &h)| if h > l { rng.random_range(l..h) } else { l }).collect()) };
            let a = draw();
            let b = draw();
            let xi = NoiseSample(key.child(1));
            let dist = metric.norm_sq_unchecked(&crate::metric::sub(&a, &b)).sqrt();
            if dist == 0.0 {
                return Ok(0.0);
            }
            Ok((oracle.eval(&a, xi)? - oracle.eval(&b, xi)?).abs() / dist)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(quotients.into_iter().fold(0.0, f64::max))
}
