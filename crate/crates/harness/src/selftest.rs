//! Fast property checks of every module, runnable from the command line.

use rand::Rng;
use zobilevel::algorithm::kappa_pmf;
use zobilevel::metric::{pythagoras_residual, DualVector, Point, RieszMap};
use zobilevel::problems::denoise::{generate_pair, DenoiseInstance, HyperParams};
use zobilevel::problems::oed::{radon_block, sample_without_replacement, softmax};
use zobilevel::problems::tv::{tv2_nu, tv2_nu_grad};
use zobilevel::prox::{phi_monotonicity_check, Regularizer};
use zobilevel::rng::StreamKey;
use zobilevel::smoothing::{grad_estimate, NoiseSample, SmoothingParams, ZerothOrderOracle};
use zobilevel::stationarity::{lambert_w_neg1, GoldsteinParams};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> zobilevel::Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
    }
}

struct HalfSquare(usize);

impl ZerothOrderOracle for HalfSquare {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, y: &Point, _: NoiseSample) -> zobilevel::Result<f64> {
        Ok(0.5 * y.iter().map(|v| v * v).sum::<f64>())
    }
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs all checks with the given seed.
pub fn run_all(seed: u64) -> Vec<Check> {
    let root = StreamKey::new(seed);
    let mut rng = root.child(0).rng();
    let mut out = Vec::new();

    out.push(check("metric: Pythagoras identity with a diagonal map", || {
        let b = RieszMap::diagonal(vec![0.5, 2.0, 3.0])?;
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let v: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            worst = worst.max(pythagoras_residual(&b, &v[0], &v[1], &v[2])?.abs());
        }
        Ok((worst < 1e-10, format!("max residual {worst:.2e}")))
    }));

    out.push(check("smoothing: estimator mean on 1/2||y||^2", || {
        let y = Point(vec![1.0, -0.5, 2.0]);
        let p = SmoothingParams::euclidean(0.1, 3)?;
        let v = grad_estimate(&HalfSquare(3), &y, &p, 100_000, seed)?.value;
        let err = max_abs_diff(&v, &y);
        Ok((err < 0.05, format!("max deviation {err:.3e}")))
    }));

    out.push(check("prox: map norm is non-increasing in the step", || {
        let cube = Regularizer::cube(4, -1.0, 1.0)?;
        let id = RieszMap::identity(4);
        let mut violations = 0;
        for _ in 0..300 {
            let y = Point((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
            let g = DualVector((0..4).map(|_| rng.random_range(-5.0..5.0)).collect());
            let (a1, a2) = (rng.random_range(0.01..2.0), rng.random_range(0.01..2.0));
            let (hi, lo) = if a1 > a2 { (a1, a2) } else { (a2, a1) };
            let phi = phi_monotonicity_check(&y, |_| g.clone(), &cube, &id, &[hi, lo])?;
            if phi[0] > phi[1] + 1e-10 {
                violations += 1;
            }
        }
        Ok((violations == 0, format!("{violations} violations in 300 draws")))
    }));

    out.push(check("lower: certified reconstruction distance", || {
        let inst = DenoiseInstance::new(64)?;
        let hp = HyperParams::from_y(&[-2.0, -2.0, -2.0])?;
        let p = generate_pair(64, seed)?;
        let reference = inst.reconstruct(&hp, &p.d, 1e-10)?.x;
        let sol = inst.reconstruct(&hp, &p.d, 1e-4)?;
        let dist = reference.iter().zip(&sol.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        Ok((dist <= 1e-4, format!("distance {dist:.2e} after {} iterations", sol.iters)))
    }));

    out.push(check("zobo: output-index law hand example", || {
        let p = kappa_pmf(&[1.0, 0.5], 1.0)?;
        let ok = (p[0] - 4.0 / 7.0).abs() < 1e-15 && (p[1] - 3.0 / 7.0).abs() < 1e-15;
        Ok((ok, format!("pmf {p:?}")))
    }));

    out.push(check("stationarity: Lambert W round trip and Gamma > sqrt(n)", || {
        let mut worst: f64 = 0.0;
        for i in 0..200 {
            let w = -1.0 - 49.0 * i as f64 / 199.0;
            let x = w * w.exp();
            worst = worst.max((lambert_w_neg1(x)? * lambert_w_neg1(x)?.exp() - x).abs() / x.abs());
        }
        let mut gamma_ok = true;
        for _ in 0..100 {
            let p = GoldsteinParams {
                eps1: rng.random_range(1e-4..1.0),
                eps2: 1.0,
                n: rng.random_range(1..40),
                lip0: rng.random_range(0.1..10.0),
            };
            gamma_ok &= p.gamma()? > (p.n as f64).sqrt();
        }
        Ok((worst < 1e-12 && gamma_ok, format!("max relative residual {worst:.2e}")))
    }));

    out.push(check("denoise: lower gradient matches finite differences", || {
        let inst = DenoiseInstance::new(24)?;
        let hp = HyperParams::from_y(&[-1.0, -1.5, -1.0])?;
        let x: Vec<f64> = (0..24).map(|_| rng.random_range(-0.5..1.5)).collect();
        let d: Vec<f64> = (0..24).map(|_| rng.random_range(-0.5..1.5)).collect();
        let fd = central_diff(|z| inst.lower_objective(z, &hp, &d), &x, 1e-6);
        let err = max_abs_diff(&inst.lower_grad(&x, &hp, &d)?, &fd);
        Ok((err < 1e-5, format!("max deviation {err:.2e}")))
    }));

    out.push(check("oed: Radon adjoint and 2D TV gradient", || {
        let b = radon_block(12, 0.7)?;
        let x: Vec<f64> = (0..144).map(|_| rng.random_range(0.0..1.0)).collect();
        let r: Vec<f64> = (0..b.n_det()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = b.apply(&x).iter().zip(&r).map(|(a, c)| a * c).sum();
        let mut kt = vec![0.0; 144];
        b.apply_t_acc(&r, &mut kt);
        let rhs: f64 = kt.iter().zip(&x).map(|(a, c)| a * c).sum();
        let fd = central_diff(|z| tv2_nu(z, 12, 0.05), &x, 1e-6);
        let err = max_abs_diff(&tv2_nu_grad(&x, 12, 0.05), &fd);
        Ok((
            (lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0) && err < 1e-5,
            format!("adjoint gap {:.2e}, tv gradient {err:.2e}", (lhs - rhs).abs()),
        ))
    }));

    out.push(check("oed: softmax and subset sampling", || {
        let p = softmax(&[0.0, 3f64.ln()]);
        let shifted = softmax(&[100.0, 100.0 + 3f64.ln()]);
        let j = sample_without_replacement(&softmax(&[0.0; 8]), 3, NoiseSample::from_seed(seed))?;
        let mut uniq = j.clone();
        uniq.sort_unstable();
        uniq.dedup();
        let ok = (p[1] - 0.75).abs() < 1e-12 && max_abs_diff(&p, &shifted) < 1e-12 && uniq.len() == 3;
        Ok((ok, format!("p = {p:?}, J = {j:?}")))
    }));

    out
}
