//! Choosing tomography projection angles with a learned softmax policy.
//!
//! Images are `side × side` (row-major). A parallel-beam projection at angle
//! `θ` has `side` detector bins; bin `s` integrates the bilinearly
//! interpolated image along the ray through
//! `c + (s - c) e_s + (t - c) e_t`, `e_s = (cos θ, sin θ)`,
//! `e_t = (-sin θ, cos θ)`, `c = (side - 1)/2`, sampled at unit spacing in
//! `t`. Points are `(column, row)` pairs, so angle 0 sums image columns.
//!
//! The upper-level variable is `y = (y1, y2, y3, θ_1..θ_n)`: the first three
//! entries give `(λ, τ, ν) = 10^y`, the rest are policy logits. A sample `ξ`
//! is an image, a set `J` of `k` angles drawn from the policy without
//! replacement, and measurement noise `Z`. The lower level is
//! `min_{x >= 0} ½||K_J x - d||² + (λ/2)||x||² + τ TV_ν(x)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::denoise::sq_dist;
use super::tv::{tv2_nu, tv2_nu_grad_acc};
use crate::error::{check_dim, Error, Result};
use crate::lower::{solve_with, Constraint, LowerLevelSolve, LowerProblem, SolverOptions};
use crate::metric::{euclid_norm, Point};
use crate::rng::StreamKey;
use crate::smoothing::{NoiseSample, WorkCounters, WorkMeter, ZerothOrderOracle};

pub const NOISE_STD: f64 = 0.01;
pub const VALIDATION_BETA: f64 = 1e-7;
pub const EXACT_BETA: f64 = 1e-10;

const IMAGE_STREAM: u64 = 0;
const SUBSET_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Sparse `n_det × side²` projection block, one row per detector bin.
#[derive(Clone, Debug, PartialEq)]
pub struct RadonBlock {
    pub side: usize,
    pub angle: f64,
    // CSR storage: row `i` occupies `row_ptr[i]..row_ptr[i + 1]`.
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl RadonBlock {
    pub fn n_det(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (idx, w) = self.row(i);
        idx.iter().zip(w).map(|(&j, &v)| v * x[j]).sum()
    }

    fn row_scatter(&self, i: usize, ri: f64, out: &mut [f64]) {
        let (idx, w) = self.row(i);
        for (&j, &v) in idx.iter().zip(w) {
            out[j] += v * ri;
        }
    }

    /// `K_θ x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_det()).map(|i| self.row_dot(i, x)).collect()
    }

    /// `out += K_θᵀ r`.
    pub fn apply_t_acc(&self, r: &[f64], out: &mut [f64]) {
        for (i, &ri) in r.iter().enumerate() {
            self.row_scatter(i, ri, out);
        }
    }

    /// `out += K_θᵀ (K_θ x - d)` without allocating.
    pub fn normal_residual_acc(&self, x: &[f64], d: &[f64], out: &mut [f64]) {
        for (i, &di) in d.iter().enumerate().take(self.n_det()) {
            let ri = self.row_dot(i, x) - di;
            self.row_scatter(i, ri, out);
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.side * self.side;
        let mut m = DMatrix::zeros(self.n_det(), n);
        for i in 0..self.n_det() {
            let (idx, w) = self.row(i);
            for (&j, &v) in idx.iter().zip(w) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `||K_θᵀ K_θ|| = ||K_θ K_θᵀ||`, from the small `n_det × n_det` Gram matrix.
    pub fn gram_norm(&self) -> f64 {
        let k = self.to_dense();
        SymmetricEigen::new(&k * k.transpose()).eigenvalues.max()
    }
}

/// Rotate-and-sum projection block with bilinear interpolation.
pub fn radon_block(side: usize, angle: f64) -> Result<RadonBlock> {
    if side == 0 {
        return Err(Error::invalid("image side must be positive"));
    }
    if !(0.0..std::f64::consts::PI).contains(&angle) {
        return Err(Error::invalid(format!("angle {angle} outside [0, π)")));
    }
    let c = (side as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    // Rays through the corners are longer than the side; extend the sampling range to the diagonal.
    let reach = (c * std::f64::consts::SQRT_2).ceil() as i64 + 1;
    let mut dense = vec![0.0; side * side];
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for s in 0..side {
        dense.iter_mut().for_each(|v| *v = 0.0);
        let sc = s as f64 - c;
        for ti in -reach..=reach {
            let tc = ti as f64;
            let px = c + sc * cos - tc * sin;
            let py = c + sc * sin + tc * cos;
            let (x0, y0) = (px.floor(), py.floor());
            let (fx, fy) = (px - x0, py - y0);
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                    let col = x0 as i64 + dx;
                    let row = y0 as i64 + dy;
                    let w = wx * wy;
                    if w > 0.0 && (0..side as i64).contains(&col) && (0..side as i64).contains(&row) {
                        dense[row as usize * side + col as usize] += w;
                    }
                }
            }
        }
        for (j, v) in dense.iter().enumerate().filter(|(_, v)| **v > 1e-14) {
            cols.push(j);
            vals.push(*v);
        }
        row_ptr.push(cols.len());
    }
    Ok(RadonBlock { side, angle, row_ptr, cols, vals })
}

/// One filled triangle of fixed orientation with random scale `U(0.3, 0.8)·side`,
/// random position inside the frame and gray level `U(0.5, 1)`.
pub fn generate_triangle(side: usize, seed: u64) -> Result<Vec<f64>> {
    if side < 8 {
        return Err(Error::invalid(format!("image side must be at least 8, got {side}")));
    }
    let mut rng = StreamKey::new(seed).rng();
    let extent = side as f64 - 1.0;
    let scale = rng.random_range(0.3..0.8) * side as f64;
    let scale = scale.min(extent);
    let ox = rng.random_range(0.0..=extent - scale);
    let oy = rng.random_range(0.0..=extent - scale);
    let gray = rng.random_range(0.5..1.0);
    // Apex at the top, base along the bottom of the bounding square.
    let verts = [(0.35, 0.0), (0.0, 1.0), (1.0, 1.0)].map(|(u, v)| (ox + scale * u, oy + scale * v));
    let mut img = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            if inside(&verts, c as f64, r as f64) {
                img[r * side + c] = gray;
            }
        }
    }
    Ok(img)
}

fn inside(v: &[(f64, f64); 3], x: f64, y: f64) -> bool {
    let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
    let e = [edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0])];
    e.iter().all(|&s| s >= 0.0) || e.iter().all(|&s| s <= 0.0)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Gumbel-top-k: `k` distinct indices ordered by `ln p_i + G_i`. The Gumbel
/// noise comes from `token`, one draw per index in index order, so equal
/// tokens give equal noise for any `p`.
pub fn sample_without_replacement(p: &[f64], k: usize, token: NoiseSample) -> Result<Vec<usize>> {
    let available = p.iter().filter(|&&q| q > 0.0).count();
    if k > available {
        return Err(Error::TooFewCandidates { k, available });
    }
    let mut rng = token.stream(0);
    let mut keys: Vec<(f64, usize)> = p
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let g = -(-u.ln()).ln();
            (if q > 0.0 { q.ln() + g } else { f64::NEG_INFINITY }, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(keys.into_iter().take(k).map(|(_, i)| i).collect())
}

/// Upper-level parameters: regularization exponents and policy logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OedParams {
    pub y: Vec<f64>,
}

impl OedParams {
    pub fn new(reg: [f64; 3], logits: &[f64]) -> Self {
        let mut y = reg.to_vec();
        y.extend_from_slice(logits);
        OedParams { y }
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
    pub fn logits(&self) -> &[f64] {
        &self.y[3..]
    }
    pub fn policy(&self) -> Vec<f64> {
        softmax(self.logits())
    }
}

#[derive(Clone, Debug)]
pub struct OedInstance {
    pub side: usize,
    pub n_angles: usize,
    pub k_pick: usize,
    pub noise_std: f64,
    pub blocks: Vec<RadonBlock>,
    /// `||K_θᵀK_θ||` per angle.
    pub block_norms: Vec<f64>,
    /// `||GᵀG||` for the 2D forward-difference operator.
    pub grad_gram_norm: f64,
    /// Lower-level solver settings; accelerated by default.
    pub solver: SolverOptions,
}

impl OedInstance {
    pub fn new(side: usize, n_angles: usize, k_pick: usize) -> Result<Self> {
        if side < 8 {
            return Err(Error::invalid(format!("image side must be at least 8, got {side}")));
        }
        if k_pick == 0 || k_pick > n_angles {
            return Err(Error::invalid(format!("need 1 <= k <= n, got k={k_pick}, n={n_angles}")));
        }
        let blocks = (0..n_angles)
            .into_par_iter()
            .map(|i| radon_block(side, i as f64 * std::f64::consts::PI / n_angles as f64))
            .collect::<Result<Vec<_>>>()?;
        let block_norms = blocks.par_iter().map(RadonBlock::gram_norm).collect();
        // GᵀG = I ⊗ D1ᵀD1 + D1ᵀD1 ⊗ I, so its norm is twice that of the 1D Neumann gram.
        let d1 = DMatrix::from_fn(side, side, |i, j| {
            if i == j {
                if i == 0 || i == side - 1 {
                    1.0
                } else {
                    2.0
                }
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        });
        let grad_gram_norm = 2.0 * SymmetricEigen::new(d1).eigenvalues.max();
        Ok(OedInstance {
            side,
            n_angles,
            k_pick,
            noise_std: NOISE_STD,
            blocks,
            block_norms,
            grad_gram_norm,
            solver: SolverOptions { accelerated: true, ..Default::default() },
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.side * self.side
    }

    /// Dimension of the upper-level variable, `n + 3`.
    pub fn dim(&self) -> usize {
        self.n_angles + 3
    }

    /// Stacked `K_J`, rows in the order of `j`.
    pub fn assemble(&self, j: &[usize]) -> Vec<&RadonBlock> {
        j.iter().map(|&i| &self.blocks[i]).collect()
    }

    /// `d = K_J x + Z`, `Z` i.i.d. `N(0, σ²)` per entry, drawn from `noise` in row order.
    pub fn measure(&self, j: &[usize], x: &[f64], noise: Option<NoiseSample>) -> Vec<f64> {
        let mut d: Vec<f64> = j.iter().flat_map(|&i| self.blocks[i].apply(x)).collect();
        if let Some(token) = noise {
            let mut rng = token.stream(0);
            for v in d.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += self.noise_std * z;
            }
        }
        d
    }

    /// `(μ, L) = (λ, Σ_{θ∈J} ||K_θᵀK_θ|| + τ∂₂/ν + λ)`.
    pub fn bounds(&self, j: &[usize], lam: f64, tau: f64, nu: f64) -> (f64, f64) {
        let k: f64 = j.iter().map(|&i| self.block_norms[i]).sum();
        (lam, k + tau * self.grad_gram_norm / nu + lam)
    }

    pub fn lower_problem<'a>(&'a self, j: &[usize], params: &OedParams, d: &'a [f64]) -> OedLower<'a> {
        let (lam, tau, nu) = (params.lam(), params.tau(), params.nu());
        let (mu, l) = self.bounds(j, lam, tau, nu);
        OedLower { inst: self, blocks: self.assemble(j), d, lam, tau, nu, mu, l }
    }

    /// Nonnegative reconstruction from `d` at accuracy `beta` (`0` means [`EXACT_BETA`]).
    pub fn reconstruct(&self, j: &[usize], params: &OedParams, d: &[f64], beta: f64) -> Result<LowerLevelSolve> {
        let beta = if beta == 0.0 { EXACT_BETA } else { beta };
        let problem = self.lower_problem(j, params, d);
        solve_with(&problem, beta, None, self.solver)
    }

    /// The angle set `J` of one sample.
    pub fn draw_subset(&self, params: &OedParams, xi: NoiseSample) -> Result<Vec<usize>> {
        sample_without_replacement(&params.policy(), self.k_pick, NoiseSample(xi.0.child(SUBSET_STREAM)))
    }

    /// `||x^β - x_true||²` for one realisation of `(J, Z)` and a given image.
    pub fn sample_loss(&self, params: &OedParams, x_true: &[f64], xi: NoiseSample, beta: f64) -> Result<(f64, usize)> {
        let s = self.simulate(params, x_true, xi, beta)?;
        Ok((sq_dist(&s.solve.x, x_true), s.solve.iters))
    }

    /// The angle set, data and reconstruction behind [`OedInstance::sample_loss`].
    pub fn simulate(&self, params: &OedParams, x_true: &[f64], xi: NoiseSample, beta: f64) -> Result<Measurement> {
        check_dim(self.n_pixels(), x_true.len())?;
        check_dim(self.dim(), params.y.len())?;
        let j = self.draw_subset(params, xi)?;
        let d = self.measure(&j, x_true, Some(NoiseSample(xi.0.child(NOISE_STREAM))));
        let solve = self.reconstruct(&j, params, &d, beta)?;
        Ok(Measurement { j, d, solve })
    }

    /// `e_i = ||x* - x_i|| / ||x_i||` for validation images, each with its own
    /// draw of `(J, Z)` from `seed`.
    pub fn validation_errors(&self, params: &OedParams, images: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
        if let Some(i) = images.iter().position(|x| euclid_norm(x) == 0.0) {
            return Err(Error::ZeroTruthNorm(i));
        }
        let root = StreamKey::new(seed);
        images
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let (loss, _) = self.sample_loss(params, x, NoiseSample(root.child(i as u64)), VALIDATION_BETA)?;
                Ok(loss.sqrt() / euclid_norm(x))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Measurement {
    /// Selected angle indices, in draw order.
    pub j: Vec<usize>,
    /// Sinogram rows stacked in the order of `j`.
    pub d: Vec<f64>,
    pub solve: LowerLevelSolve,
}

/// `count` triangles; image `i` uses the stream `(seed, i)`.
pub fn generate_images(side: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let root = StreamKey::new(seed);
    (0..count as u64).map(|i| generate_triangle(side, root.child(i).0)).collect()
}

/// The lower-level problem for a fixed angle set.
pub struct OedLower<'a> {
    inst: &'a OedInstance,
    blocks: Vec<&'a RadonBlock>,
    d: &'a [f64],
    lam: f64,
    tau: f64,
    nu: f64,
    mu: f64,
    l: f64,
}

impl OedLower<'_> {
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut misfit = 0.0;
        let mut off = 0;
        for b in &self.blocks {
            let kx = b.apply(x);
            misfit += kx.iter().zip(&self.d[off..off + kx.len()]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            off += kx.len();
        }
        0.5 * misfit + 0.5 * self.lam * x.iter().map(|v| v * v).sum::<f64>() + self.tau * tv2_nu(x, self.inst.side, self.nu)
    }
}

impl LowerProblem for OedLower<'_> {
    fn dim(&self) -> usize {
        self.inst.n_pixels()
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.lam * xi;
        }
        let mut off = 0;
        for b in &self.blocks {
            b.normal_residual_acc(x, &self.d[off..off + b.n_det()], out);
            off += b.n_det();
        }
        tv2_nu_grad_acc(x, self.inst.side, self.nu, self.tau, out);
    }

    fn constraint(&self) -> Constraint {
        Constraint::Nonnegative
    }
    fn mu(&self) -> f64 {
        self.mu
    }
    fn l_smooth(&self) -> f64 {
        self.l
    }
    fn objective(&self, x: &[f64]) -> Option<f64> {
        Some(self.value(x))
    }
}

/// `H(y, ξ) = ||x^β(y, ξ) - X_ξ||²` with `ξ` picking a training image and
/// carrying the angle-set and noise streams.
pub struct OedOracle {
    pub instance: OedInstance,
    pub train: Vec<Vec<f64>>,
    /// Restricts the optimization to the regularization part; the policy
    /// logits are then fixed to these values.
    pub fixed_logits: Option<Vec<f64>>,
    meter: WorkMeter,
}

impl OedOracle {
    pub fn new(instance: OedInstance, train: Vec<Vec<f64>>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        for x in &train {
            check_dim(instance.n_pixels(), x.len())?;
        }
        Ok(OedOracle { instance, train, fixed_logits: None, meter: WorkMeter::default() })
    }

    /// Oracle over the regularization exponents only, with the policy fixed.
    pub fn with_fixed_policy(mut self, logits: Vec<f64>) -> Result<Self> {
        check_dim(self.instance.n_angles, logits.len())?;
        self.fixed_logits = Some(logits);
        Ok(self)
    }

    pub fn params(&self, y: &[f64]) -> Result<OedParams> {
        match &self.fixed_logits {
            Some(l) => {
                check_dim(3, y.len())?;
                Ok(OedParams::new([y[0], y[1], y[2]], l))
            }
            None => {
                check_dim(self.instance.dim(), y.len())?;
                Ok(OedParams { y: y.to_vec() })
            }
        }
    }

    fn loss(&self, y: &Point, xi: NoiseSample, beta: f64) -> Result<f64> {
        let params = self.params(y)?;
        let img = &self.train[NoiseSample(xi.0.child(IMAGE_STREAM)).index_below(0, self.train.len())];
        let (loss, iters) = self.instance.sample_loss(&params, img, xi, beta)?;
        self.meter.record_eval();
        self.meter.record_solve(iters);
        Ok(loss)
    }
}

impl ZerothOrderOracle for OedOracle {
    fn dim(&self) -> usize {
        if self.fixed_logits.is_some() {
            3
        } else {
            self.instance.dim()
        }
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
