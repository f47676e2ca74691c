//! One-dimensional denoising with learned Tikhonov and smoothed-TV weights.
//!
//! Lower level: `g(x) = ½||x - d||² + (λ/2)<L²x, x> + τ TV_ν(x)` with
//! `L² = w A^-1`, `A` the Dirichlet Laplacian `tridiag(-1, 2, -1)/h²`,
//! `h = 1/n_x`, and `(λ, τ, ν) = 10^y` for `y ∈ [-7, 7]³`.
//! Upper level: `E||x*(y, D) - X||²` plus a condition-number penalty.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tv::{tv_nu, tv_nu_grad_acc};
use super::Pair;
use crate::error::{check_dim, Error, Result};
use crate::lower::{convexity_bounds, solve, LowerLevelSolve, LowerProblem, OperatorConstants};
use crate::metric::{euclid_norm, Point};
use crate::rng::StreamKey;
use crate::smoothing::{NoiseSample, WorkCounters, WorkMeter, ZerothOrderOracle};

pub const NOISE_STD: f64 = 0.031_622_776_601_683_79; // sqrt(0.001)
pub const L2_WEIGHT: f64 = 1e-4;
pub const PENALTY_WEIGHT: f64 = 1e-6;
pub const VALIDATION_BETA: f64 = 1e-7;
/// Accuracy used when an exact lower-level solution is requested.
pub const EXACT_BETA: f64 = 1e-10;

/// Which strong-convexity modulus enters the condition-number penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionPenalty {
    /// `μ = e_min(KᵀK) + λ e_min(L²)`, the modulus of the whole lower-level objective.
    #[default]
    WithDataTerm,
    /// `μ = λ e_min(L²)`, the Tikhonov term alone.
    TikhonovOnly,
}

/// `(λ, τ, ν) = 10^y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub y: [f64; 3],
}

impl HyperParams {
    pub fn from_y(y: &[f64]) -> Result<Self> {
        check_dim(3, y.len())?;
        Ok(HyperParams { y: [y[0], y[1], y[2]] })
    }

    pub fn from_values(lam: f64, tau: f64, nu: f64) -> Self {
        HyperParams { y: [lam.log10(), tau.log10(), nu.log10()] }
    }

    pub fn lam(&self) -> f64 {
        10f64.powf(self.y[0])
    }
    pub fn tau(&self) -> f64 {
        10f64.powf(self.y[1])
    }
    pub fn nu(&self) -> f64 {
        10f64.powf(self.y[2])
    }
}

/// Factorized `tridiag(-1, 2, -1) / h²`.
#[derive(Clone, Debug)]
struct DirichletLaplacian {
    inv_h2: f64,
    /// Modified super-diagonal of the Thomas recursion.
    cp: Vec<f64>,
    /// Reciprocal pivots.
    inv_piv: Vec<f64>,
}

impl DirichletLaplacian {
    fn new(n: usize) -> Self {
        let mut cp = vec![0.0; n];
        let mut inv_piv = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let piv = 2.0 + prev;
            inv_piv[i] = 1.0 / piv;
            cp[i] = -inv_piv[i];
            prev = cp[i];
        }
        DirichletLaplacian { inv_h2: (n * n) as f64, cp, inv_piv }
    }

    /// Solves `A z = x` in place.
    fn solve_in_place(&self, z: &mut [f64]) {
        let n = z.len();
        let scale = 1.0 / self.inv_h2;
        z[0] *= self.inv_piv[0] * scale;
        for i in 1..n {
            z[i] = (z[i] * scale + z[i - 1]) * self.inv_piv[i];
        }
        for i in (0..n - 1).rev() {
            z[i] -= self.cp[i] * z[i + 1];
        }
    }

    fn dense(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 2.0 * self.inv_h2,
            1 => -self.inv_h2,
            _ => 0.0,
        })
    }
}

#[derive(Clone, Debug)]
pub struct DenoiseInstance {
    pub n_x: usize,
    pub sigma: f64,
    pub l2_weight: f64,
    pub penalty_weight: f64,
    pub penalty: ConditionPenalty,
    pub box_lo: f64,
    pub box_hi: f64,
    pub consts: OperatorConstants,
    laplacian: DirichletLaplacian,
}

impl DenoiseInstance {
    pub fn new(n_x: usize) -> Result<Self> {
        if n_x < 4 {
            return Err(Error::invalid(format!("signal length must be at least 4, got {n_x}")));
        }
        let laplacian = DirichletLaplacian::new(n_x);
        let a_eigs = SymmetricEigen::new(laplacian.dense(n_x)).eigenvalues;
        let a_min = a_eigs.min();
        let a_max = a_eigs.max();
        let dtd = difference_gram(n_x);
        let dtd_norm = SymmetricEigen::new(dtd).eigenvalues.max();
        let consts =
            OperatorConstants { k_op_norm_sq: 1.0, k_min_eig: 1.0, l2_max_eig: L2_WEIGHT / a_min, l2_min_eig: L2_WEIGHT / a_max, dtd_norm };
        Ok(DenoiseInstance {
            n_x,
            sigma: NOISE_STD,
            l2_weight: L2_WEIGHT,
            penalty_weight: PENALTY_WEIGHT,
            penalty: ConditionPenalty::default(),
            box_lo: -7.0,
            box_hi: 7.0,
            consts,
            laplacian,
        })
    }

    /// `L² x = w A^-1 x`.
    pub fn apply_l2(&self, x: &[f64]) -> Vec<f64> {
        let mut z = x.to_vec();
        self.laplacian.solve_in_place(&mut z);
        z.iter_mut().for_each(|v| *v *= self.l2_weight);
        z
    }

    /// `(μ, L)` of the lower-level objective: `μ = 1 + λ e_min(L²)`,
    /// `L = 1 + τ∂/ν + λ||L²||`.
    pub fn bounds(&self, hp: &HyperParams) -> (f64, f64) {
        crate::lower::convexity_bounds_with_data(hp.lam(), hp.tau(), hp.nu(), &self.consts)
    }

    /// `w · (L / μ)²` with the modulus selected by [`DenoiseInstance::penalty`].
    pub fn penalty(&self, hp: &HyperParams) -> f64 {
        let c = &self.consts;
        let (mu_t, l) = convexity_bounds(hp.lam(), hp.tau(), hp.nu(), c.k_op_norm_sq, c.l2_max_eig, c.l2_min_eig, c.dtd_norm);
        let mu = match self.penalty {
            ConditionPenalty::WithDataTerm => mu_t + c.k_min_eig,
            ConditionPenalty::TikhonovOnly => mu_t,
        };
        self.penalty_weight * (l / mu).powi(2)
    }

    pub fn lower_objective(&self, x: &[f64], hp: &HyperParams, d: &[f64]) -> f64 {
        let misfit: f64 = x.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum();
        let l2x = self.apply_l2(x);
        let tik: f64 = x.iter().zip(&l2x).map(|(a, b)| a * b).sum();
        0.5 * misfit + 0.5 * hp.lam() * tik + hp.tau() * tv_nu(x, hp.nu())
    }

    /// `(x - d) + λ L²x + τ ∇TV_ν(x)`.
    pub fn lower_grad(&self, x: &[f64], hp: &HyperParams, d: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_x, x.len())?;
        check_dim(self.n_x, d.len())?;
        let mut out = vec![0.0; self.n_x];
        self.grad_into(x, hp.lam(), hp.tau(), hp.nu(), d, &mut out);
        Ok(out)
    }

    fn grad_into(&self, x: &[f64], lam: f64, tau: f64, nu: f64, d: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        self.laplacian.solve_in_place(out);
        let s = lam * self.l2_weight;
        for ((o, xi), di) in out.iter_mut().zip(x).zip(d) {
            *o = s * *o + xi - di;
        }
        tv_nu_grad_acc(x, nu, tau, out);
    }

    /// Lower-level solve at accuracy `beta` (`0` means [`EXACT_BETA`]), warm
    /// started at `d`.
    pub fn reconstruct(&self, hp: &HyperParams, d: &[f64], beta: f64) -> Result<LowerLevelSolve> {
        check_dim(self.n_x, d.len())?;
        let beta = if beta == 0.0 { EXACT_BETA } else { beta };
        let (mu, l) = self.bounds(hp);
        let problem = DenoiseLower { inst: self, lam: hp.lam(), tau: hp.tau(), nu: hp.nu(), d, mu, l };
        solve(&problem, beta, Some(d))
    }

    /// The lower-level problem for `(hp, d)`, for use with the generic solver.
    pub fn lower_problem<'a>(&'a self, hp: &HyperParams, d: &'a [f64]) -> DenoiseLower<'a> {
        let (mu, l) = self.bounds(hp);
        DenoiseLower { inst: self, lam: hp.lam(), tau: hp.tau(), nu: hp.nu(), d, mu, l }
    }

    /// Mean of `||x^β(y, d) - x||²` over `samples`, plus the penalty.
    pub fn upper_objective(&self, hp: &HyperParams, samples: &[Pair], beta: f64) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let losses = samples
            .par_iter()
            .map(|p| {
                let s = self.reconstruct(hp, &p.d, beta)?;
                Ok(sq_dist(&s.x, &p.x_true))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(losses.iter().sum::<f64>() / samples.len() as f64 + self.penalty(hp))
    }

    /// `e_i = ||x*(y, d_i) - x_i|| / ||x_i||` with solves at `β = 1e-7`.
    pub fn validation_errors(&self, hp: &HyperParams, val: &[Pair]) -> Result<Vec<f64>> {
        if let Some(i) = val.iter().position(|p| euclid_norm(&p.x_true) == 0.0) {
            return Err(Error::ZeroTruthNorm(i));
        }
        val.par_iter()
            .map(|p| {
                let s = self.reconstruct(hp, &p.d, VALIDATION_BETA)?;
                Ok(sq_dist(&s.x, &p.x_true).sqrt() / euclid_norm(&p.x_true))
            })
            .collect()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `DᵀD` for the forward-difference operator `D: R^n -> R^{n-1}`.
fn difference_gram(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            if i == 0 || i == n - 1 {
                1.0
            } else {
                2.0
            }
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    })
}

/// `g(., y, d)` with the hyperparameters bound.
pub struct DenoiseLower<'a> {
    inst: &'a DenoiseInstance,
    lam: f64,
    tau: f64,
    nu: f64,
    d: &'a [f64],
    mu: f64,
    l: f64,
}

impl LowerProblem for DenoiseLower<'_> {
    fn dim(&self) -> usize {
        self.inst.n_x
    }
    fn grad(&self, x: &[f64], out: &mut [f64]) {
        self.inst.grad_into(x, self.lam, self.tau, self.nu, self.d, out);
    }
    fn mu(&self) -> f64 {
        self.mu
    }
    fn l_smooth(&self) -> f64 {
        self.l
    }
    fn objective(&self, x: &[f64]) -> Option<f64> {
        let hp = HyperParams::from_values(self.lam, self.tau, self.nu);
        Some(self.inst.lower_objective(x, &hp, self.d))
    }
}

/// `t_i = i/n_x` for `i = 1..n_x`, `x = 1_[C,R](t)` with `C ~ U[1/8, 1/4]`,
/// `R ~ U[3/8, 7/8]`, and `d = x + σZ`.
pub fn generate_pair(n_x: usize, seed: u64) -> Result<Pair> {
    if n_x < 4 {
        return Err(Error::invalid(format!("signal length must be at least 4, got {n_x}")));
    }
    let mut rng = StreamKey::new(seed).rng();
    let c: f64 = rng.random_range(0.125..0.25);
    let r: f64 = rng.random_range(0.375..0.875);
    let x_true: Vec<f64> = (1..=n_x)
        .map(|i| {
            let t = i as f64 / n_x as f64;
            if c <= t && t <= r {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let d = x_true
        .iter()
        .map(|x| {
            let z: f64 = rng.sample(StandardNormal);
            x + NOISE_STD * z
        })
        .collect();
    Ok(Pair { x_true, d })
}

/// `count` independent pairs; pair `i` uses the stream `(seed, i)`.
pub fn generate_dataset(n_x: usize, count: usize, seed: u64) -> Result<Vec<Pair>> {
    let root = StreamKey::new(seed);
    (0..count as u64).map(|i| generate_pair(n_x, root.child(i).0)).collect()
}

/// `H(y, ξ) = ||x^β(y, d_ξ) - x_ξ||² + penalty(y)` with `ξ` choosing one
/// training pair uniformly.
pub struct DenoiseOracle {
    pub instance: DenoiseInstance,
    pub train: Vec<Pair>,
    meter: WorkMeter,
}

impl DenoiseOracle {
    pub fn new(instance: DenoiseInstance, train: Vec<Pair>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        for p in &train {
            check_dim(instance.n_x, p.x_true.len())?;
            check_dim(instance.n_x, p.d.len())?;
        }
        Ok(DenoiseOracle { instance, train, meter: WorkMeter::default() })
    }

    fn loss(&self, y: &Point, sample: NoiseSample, beta: f64) -> Result<f64> {
        let hp = HyperParams::from_y(y)?;
        let pair = &self.train[sample.index_below(0, self.train.len())];
        let sol = self.instance.reconstruct(&hp, &pair.d, beta)?;
        self.meter.record_eval();
        self.meter.record_solve(sol.iters);
        Ok(sq_dist(&sol.x, &pair.x_true) + self.instance.penalty(&hp))
    }
}

impl ZerothOrderOracle for DenoiseOracle {
    fn dim(&self) -> usize {
        3
    }
    fn eval(&self, y: &Point, sample: NoiseSample) -> Result<f64> {
        self.loss(y, sample, EXACT_BETA)
    }
    fn eval_inexact(&self, y: &Point, sample: NoiseSample, beta: f64) -> Result<f64> {
        self.loss(y, sample, if beta == 0.0 { EXACT_BETA } else { beta })
    }
    fn work(&self) -> WorkCounters {
        self.meter.snapshot()
    }
}
