//! Certified gradient descent for strongly convex lower-level problems.
//!
//! With constant step `1/L` the solver stops as soon as a computable residual
//! certifies `||x - x*|| <= β`:
//!
//! * unconstrained: `||∇g(x)|| <= μβ`, since strong monotonicity gives
//!   `||x - x*|| <= ||∇g(x)|| / μ`;
//! * nonnegative orthant: with `x⁺ = max(0, x - ∇g(x)/L)` and
//!   `G = L (x - x⁺)`, the inequality
//!   `<G, x - x*> >= ||G||²/(2L) + μ/2 ||x - x*||²` yields
//!   `||x - x*|| <= 2||G|| / μ`. The solver returns `x⁺`, which is no farther
//!   from `x*` than `x`.
//!
//! The optional accelerated variant applies the same test at the extrapolated
//! point, using Nesterov momentum with gradient-based adaptive restart.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metric::euclid_norm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    None,
    Nonnegative,
}

/// Smooth part of a lower-level problem with the upper-level variable and the
/// noise realisation already bound.
pub trait LowerProblem: Sync {
    fn dim(&self) -> usize;

    /// Writes `∇g(x)` into `out`.
    fn grad(&self, x: &[f64], out: &mut [f64]);

    fn constraint(&self) -> Constraint {
        Constraint::None
    }

    /// Strong-convexity modulus `μ > 0`.
    fn mu(&self) -> f64;

    /// Lipschitz constant of `∇g`, at least `μ`.
    fn l_smooth(&self) -> f64;

    /// `g(x)`, used only for diagnostics.
    fn objective(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerLevelSolve {
    pub x: Vec<f64>,
    /// Certified bound on `||x - x*||`.
    pub beta_certified: f64,
    pub iters: usize,
    /// Objective values per iteration when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub trace_objective: bool,
    pub accelerated: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iters: 1_000_000, trace_objective: false, accelerated: false }
    }
}

/// Solves to certified accuracy `beta_target` with default options.
pub fn solve<P: LowerProblem + ?Sized>(problem: &P, beta_target: f64, x0: Option<&[f64]>) -> Result<LowerLevelSolve> {
    solve_with(problem, beta_target, x0, SolverOptions::default())
}

pub fn solve_with<P: LowerProblem + ?Sized>(
    problem: &P,
    beta_target: f64,
    x0: Option<&[f64]>,
    opts: SolverOptions,
) -> Result<LowerLevelSolve> {
    if !(beta_target > 0.0 && beta_target.is_finite()) {
        return Err(Error::invalid(format!("lower-level accuracy must be positive, got {beta_target}")));
    }
    let (mu, l) = (problem.mu(), problem.l_smooth());
    if !(mu > 0.0 && l >= mu && l.is_finite()) {
        return Err(Error::invalid(format!("need 0 < mu <= L, got mu={mu}, L={l}")));
    }
    let n = problem.dim();
    let mut x = match x0 {
        Some(x0) => {
            check_dim(n, x0.len())?;
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let constraint = problem.constraint();
    if constraint == Constraint::Nonnegative {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let mut g = vec![0.0; n];
    let mut next = vec![0.0; n];
    // Extrapolated point; equal to `x` without acceleration.
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut trace = Vec::new();
    let step = 1.0 / l;
    let mut bound = f64::INFINITY;
    for iters in 0..=opts.max_iters {
        problem.grad(&z, &mut g);
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient { iters });
        }
        if opts.trace_objective {
            if let Some(v) = problem.objective(&z) {
                trace.push(v);
            }
        }
        let mut res = 0.0;
        for ((ni, zi), gi) in next.iter_mut().zip(&z).zip(&g) {
            *ni = zi - step * gi;
            if constraint == Constraint::Nonnegative {
                *ni = ni.max(0.0);
            }
            res += (zi - *ni) * (zi - *ni);
        }
        match constraint {
            Constraint::None => {
                bound = euclid_norm(&g) / mu;
                if bound <= beta_target {
                    return Ok(LowerLevelSolve { x: z, beta_certified: bound, iters, objective_trace: trace });
                }
            }
            Constraint::Nonnegative => {
                bound = 2.0 * l * res.sqrt() / mu;
                if bound <= beta_target {
                    return Ok(LowerLevelSolve { x: next, beta_certified: bound, iters, objective_trace: trace });
                }
            }
        }
        let mut momentum = 0.0;
        if opts.accelerated {
            // Restart whenever the step and the momentum direction disagree.
            let dot: f64 = z.iter().zip(&next).zip(&x).map(|((zi, ni), xi)| (zi - ni) * (ni - xi)).sum();
            if dot > 0.0 {
                t = 1.0;
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                momentum = (t - 1.0) / t_next;
                t = t_next;
            }
        }
        for ((zi, xi), ni) in z.iter_mut().zip(x.iter_mut()).zip(&next) {
            *zi = ni + momentum * (ni - *xi);
            *xi = *ni;
        }
    }
    Err(Error::IterationCapExceeded { iters: opts.max_iters, bound })
}

/// Spectral constants of `g = ½||Kx - d||² + (λ/2)<L²x, x> + τ TV_ν(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorConstants {
    /// `||KᵀK||`.
    pub k_op_norm_sq: f64,
    /// Smallest eigenvalue of `KᵀK` (zero when `K` has a kernel).
    pub k_min_eig: f64,
    pub l2_max_eig: f64,
    pub l2_min_eig: f64,
    /// `||DᵀD||` for the difference operator inside TV.
    pub dtd_norm: f64,
}

/// `μ = λ e_min(L²)` and `L = ||KᵀK|| + τ∂/ν + λ||L²||`.
pub fn convexity_bounds(lam: f64, tau: f64, nu: f64, k_op_norm_sq: f64, l2_max_eig: f64, l2_min_eig: f64, dtd_norm: f64) -> (f64, f64) {
    let mu = lam * l2_min_eig;
    let l = k_op_norm_sq + tau * dtd_norm / nu + lam * l2_max_eig;
    (mu, l)
}

/// As [`convexity_bounds`], but the modulus also counts the curvature of the
/// data term: `μ = e_min(KᵀK) + λ e_min(L²)`. This is the modulus used by the
/// solver; for `K = I` it is at least 1.
pub fn convexity_bounds_with_data(lam: f64, tau: f64, nu: f64, c: &OperatorConstants) -> (f64, f64) {
    let (mu, l) = convexity_bounds(lam, tau, nu, c.k_op_norm_sq, c.l2_max_eig, c.l2_min_eig, c.dtd_norm);
    (mu + c.k_min_eig, l)
}
