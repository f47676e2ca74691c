use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zobilevel::problems::denoise::{
    generate_dataset, generate_pair, ConditionPenalty, DenoiseInstance, DenoiseOracle, HyperParams, NOISE_STD,
};
use zobilevel::problems::tv::{tv_nu, tv_nu_grad};
use zobilevel::problems::Pair;
use zobilevel::smoothing::{NoiseSample, ZerothOrderOracle};
use zobilevel::Point;

fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
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

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn tv_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nu = 10f64.powf(rng.random_range(-2.0..0.5));
        let fd = central_diff(|z| tv_nu(z, nu), &x, 1e-6);
        assert!(max_abs_diff(&tv_nu_grad(&x, nu), &fd) < 1e-6);
    }
}

#[test]
fn lower_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inst = DenoiseInstance::new(32).unwrap();
    for _ in 0..100 {
        let hp = HyperParams::from_y(&[rng.random_range(-3.0..1.0), rng.random_range(-3.0..0.0), rng.random_range(-2.0..0.0)]).unwrap();
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(-0.5..1.5)).collect();
        let d: Vec<f64> = (0..32).map(|_| rng.random_range(-0.5..1.5)).collect();
        let fd = central_diff(|z| inst.lower_objective(z, &hp, &d), &x, 1e-6);
        let g = inst.lower_grad(&x, &hp, &d).unwrap();
        assert!(max_abs_diff(&g, &fd) < 1e-6);
    }
}

#[test]
fn pure_least_squares_limit() {
    let inst = DenoiseInstance::new(16).unwrap();
    let hp = HyperParams::from_y(&[-7.0, -7.0, 0.0]).unwrap();
    let x: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
    let d: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
    let g = inst.lower_grad(&x, &hp, &d).unwrap();
    let expected: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - b).collect();
    assert!(max_abs_diff(&g, &expected) < 1e-5);
    let sol = inst.reconstruct(&hp, &d, 1e-9).unwrap();
    assert!(max_abs_diff(&sol.x, &d) < 1e-5);
}

#[test]
fn l2_operator_is_symmetric_with_bracketed_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inst = DenoiseInstance::new(48).unwrap();
    for _ in 0..50 {
        let u: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..48).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = dot(&inst.apply_l2(&u), &v);
        let b = dot(&u, &inst.apply_l2(&v));
        assert!((a - b).abs() < 1e-10);
        let q = dot(&inst.apply_l2(&u), &u) / dot(&u, &u);
        assert!(q >= inst.consts.l2_min_eig * (1.0 - 1e-9) && q <= inst.consts.l2_max_eig * (1.0 + 1e-9));
    }
}

#[test]
fn penalty_matches_plug_in_value() {
    let n = 64;
    let mut inst = DenoiseInstance::new(n).unwrap();
    // Independent constants: dense inverse of the Laplacian and the difference Gram matrix.
    let h2 = (n * n) as f64;
    let a = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0 * h2,
        1 => -h2,
        _ => 0.0,
    });
    let l2 = a.try_inverse().unwrap() * 1e-4;
    let l2_eig = SymmetricEigen::new(l2).eigenvalues;
    let d = DMatrix::from_fn(n - 1, n, |i, j| {
        if j == i + 1 {
            1.0
        } else if j == i {
            -1.0
        } else {
            0.0
        }
    });
    let dtd: f64 = SymmetricEigen::new(d.transpose() * d).eigenvalues.max();
    let hp = HyperParams::from_values(1e-3, 1e-3, 1e-2);
    let l: f64 = 1.0 + 0.1 * dtd + 1e-3 * l2_eig.max();

    inst.penalty = ConditionPenalty::TikhonovOnly;
    let expected = 1e-6 * (l / (1e-3 * l2_eig.min())).powi(2);
    assert!((inst.penalty(&hp) - expected).abs() <= 1e-8 * expected);

    inst.penalty = ConditionPenalty::WithDataTerm;
    let expected = 1e-6 * (l / (1.0 + 1e-3 * l2_eig.min())).powi(2);
    assert!((inst.penalty(&hp) - expected).abs() <= 1e-8 * expected);
}

#[test]
fn lower_objective_is_midpoint_convex() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inst = DenoiseInstance::new(24).unwrap();
    for _ in 0..100 {
        let hp = HyperParams::from_y(&[rng.random_range(-7.0..7.0), rng.random_range(-7.0..2.0), rng.random_range(-7.0..2.0)]).unwrap();
        let d: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..2.0)).collect();
        let x: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..2.0)).collect();
        let z: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..2.0)).collect();
        let mid: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 0.5 * (a + b)).collect();
        let g = |v: &[f64]| inst.lower_objective(v, &hp, &d);
        let rhs = 0.5 * (g(&x) + g(&z));
        assert!(g(&mid) <= rhs + 1e-9 * rhs.abs().max(1.0));
    }
}

#[test]
fn noise_has_the_stated_variance() {
    let pairs = generate_dataset(64, 10_000, 9).unwrap();
    let mean: f64 =
        pairs.iter().map(|p| p.x_true.iter().zip(&p.d).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 64.0).sum::<f64>() / pairs.len() as f64;
    assert!((mean - 0.001).abs() < 0.05 * 0.001, "mean {mean}");
}

#[test]
fn signal_support_bounds() {
    for seed in 0..200 {
        let p = generate_pair(256, seed).unwrap();
        let ones: Vec<usize> = (0..256).filter(|&i| p.x_true[i] == 1.0).collect();
        let (c, r) = ((ones[0] + 1) as f64 / 256.0, (ones[ones.len() - 1] + 1) as f64 / 256.0);
        assert!((0.125..=0.25 + 1.0 / 256.0).contains(&c), "c={c}");
        assert!((0.375 - 1.0 / 256.0..=0.875).contains(&r), "r={r}");
    }
}

#[test]
fn validation_error_edge_cases() {
    let inst = DenoiseInstance::new(64).unwrap();
    let tiny = HyperParams::from_y(&[-7.0, -7.0, 0.0]).unwrap();
    let clean: Vec<Pair> = generate_dataset(64, 5, 1).unwrap().into_iter().map(|p| Pair { d: p.x_true.clone(), ..p }).collect();
    for e in inst.validation_errors(&tiny, &clean).unwrap() {
        assert!(e < 1e-5);
    }
    let noisy = generate_dataset(64, 5, 2).unwrap();
    for (e, p) in inst.validation_errors(&tiny, &noisy).unwrap().iter().zip(&noisy) {
        let direct = p.d.iter().zip(&p.x_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / dot(&p.x_true, &p.x_true).sqrt();
        assert!((e - direct).abs() < 1e-4 * direct);
        let nominal = NOISE_STD * 8.0 / dot(&p.x_true, &p.x_true).sqrt();
        assert!(*e < 2.0 * nominal && *e > 0.5 * nominal);
    }
}

#[test]
fn upper_objective_is_an_average() {
    let inst = DenoiseInstance::new(32).unwrap();
    let hp = HyperParams::from_y(&[-2.0, -2.0, -2.0]).unwrap();
    let pairs = generate_dataset(32, 4, 3).unwrap();
    let doubled: Vec<Pair> = pairs.iter().chain(&pairs).cloned().collect();
    let a = inst.upper_objective(&hp, &pairs, 1e-9).unwrap();
    let b = inst.upper_objective(&hp, &doubled, 1e-9).unwrap();
    assert!((a - b).abs() < 1e-12 * a);
}

#[test]
fn oracle_picks_training_pairs_and_counts_work() {
    let inst = DenoiseInstance::new(32).unwrap();
    let train = generate_dataset(32, 3, 5).unwrap();
    let oracle = DenoiseOracle::new(inst.clone(), train.clone()).unwrap();
    let y = Point(vec![-2.0, -2.0, -2.0]);
    let hp = HyperParams::from_y(&y).unwrap();
    let v = oracle.eval(&y, NoiseSample::from_seed(4)).unwrap();
    let candidates: Vec<f64> = train
        .iter()
        .map(|p| {
            let x = inst.reconstruct(&hp, &p.d, 0.0).unwrap().x;
            x.iter().zip(&p.x_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + inst.penalty(&hp)
        })
        .collect();
    assert!(candidates.iter().any(|c| (c - v).abs() < 1e-12));
    assert_eq!(oracle.work().evaluations, 1);
    assert_eq!(oracle.work().lower_solves, 1);
    assert!(DenoiseOracle::new(inst, Vec::new()).is_err());
}
