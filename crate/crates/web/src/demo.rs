//! Plain-Rust side of the demo, usable and testable off the browser.

use zobilevel::metric::Point;
use zobilevel::problems::denoise::{generate_pair, DenoiseInstance, HyperParams};
use zobilevel::problems::oed::{generate_triangle, sample_without_replacement, OedInstance, OedParams};
use zobilevel::problems::Pair;
use zobilevel::smoothing::{grad_estimate, smoothed_value_with_stderr, NoiseSample, SmoothingParams, ZerothOrderOracle};
use zobilevel::Result;

/// Solver accuracy of the interactive reconstructions.
pub const DEMO_BETA: f64 = 1e-6;

pub struct DenoiseExplorer {
    instance: DenoiseInstance,
    pair: Pair,
}

impl DenoiseExplorer {
    pub fn new(n_x: usize, seed: u64) -> Result<Self> {
        Ok(DenoiseExplorer { instance: DenoiseInstance::new(n_x)?, pair: generate_pair(n_x, seed)? })
    }

    pub fn truth(&self) -> &[f64] {
        &self.pair.x_true
    }

    pub fn noisy(&self) -> &[f64] {
        &self.pair.d
    }

    /// Reconstruction at `(log10 λ, log10 τ, log10 ν)` and its relative error.
    pub fn reconstruct(&self, y: [f64; 3]) -> Result<(Vec<f64>, f64)> {
        let hp = HyperParams::from_y(&y)?;
        let x = self.instance.reconstruct(&hp, &self.pair.d, DEMO_BETA)?.x;
        Ok((x.clone(), relative_error(&x, &self.pair.x_true)))
    }
}

fn relative_error(x: &[f64], truth: &[f64]) -> f64 {
    let diff: f64 = x.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let norm: f64 = truth.iter().map(|v| v * v).sum();
    (diff / norm).sqrt()
}

struct Abs;

impl ZerothOrderOracle for Abs {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, y: &Point, _: NoiseSample) -> Result<f64> {
        Ok(y[0].abs())
    }
}

/// Monte Carlo `h_η(y) = E|y + ηu|` and the estimator of its derivative
/// at `points` evenly spaced values in `[lo, hi]`.
pub struct SmoothingCurve {
    pub y: Vec<f64>,
    pub value: Vec<f64>,
    pub slope: Vec<f64>,
}

pub fn smoothing_curve(eta: f64, lo: f64, hi: f64, points: usize, samples: usize, seed: u64) -> Result<SmoothingCurve> {
    let params = SmoothingParams::euclidean(eta, 1)?;
    let mut curve = SmoothingCurve { y: Vec::new(), value: Vec::new(), slope: Vec::new() };
    for i in 0..points {
        let t = if points > 1 { i as f64 / (points - 1) as f64 } else { 0.5 };
        let y = Point(vec![lo + t * (hi - lo)]);
        // Common random numbers across the grid keep the curves smooth.
        let (value, _) = smoothed_value_with_stderr(&Abs, &y, &params, samples, seed)?;
        let slope = grad_estimate(&Abs, &y, &params, samples, seed)?.value[0];
        curve.y.push(y[0]);
        curve.value.push(value);
        curve.slope.push(slope);
    }
    Ok(curve)
}

pub struct TomographyExplorer {
    instance: OedInstance,
    image: Vec<f64>,
}

pub struct Scan {
    pub angles: Vec<usize>,
    pub sinogram: Vec<f64>,
    pub image: Vec<f64>,
    pub error: f64,
}

impl TomographyExplorer {
    pub fn new(side: usize, n_angles: usize, k_pick: usize, seed: u64) -> Result<Self> {
        Ok(TomographyExplorer { instance: OedInstance::new(side, n_angles, k_pick)?, image: generate_triangle(side, seed)? })
    }

    pub fn side(&self) -> usize {
        self.instance.side
    }

    pub fn detectors(&self) -> usize {
        self.instance.blocks[0].n_det()
    }

    pub fn truth(&self) -> &[f64] {
        &self.image
    }

    /// Noise-free sinogram over all angles, one row per angle.
    pub fn full_sinogram(&self) -> Vec<f64> {
        let all: Vec<usize> = (0..self.instance.n_angles).collect();
        self.instance.measure(&all, &self.image, None)
    }

    /// Draws `k` angles from the softmax of `logits`, measures with noise and reconstructs.
    pub fn scan(&self, reg: [f64; 3], logits: &[f64], seed: u64) -> Result<Scan> {
        let params = OedParams::new(reg, logits);
        let xi = NoiseSample::from_seed(seed);
        let angles = sample_without_replacement(&params.policy(), self.instance.k_pick, xi)?;
        let sinogram = self.instance.measure(&angles, &self.image, Some(NoiseSample::from_seed(seed ^ 0x9e37_79b9)));
        let image = self.instance.reconstruct(&angles, &params, &sinogram, DEMO_BETA)?.x;
        let error = relative_error(&image, &self.image);
        Ok(Scan { angles, sinogram, image, error })
    }
}
