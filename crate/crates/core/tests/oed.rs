use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use zobilevel::lower::LowerProblem;
use zobilevel::problems::oed::{
    generate_images, generate_triangle, radon_block, sample_without_replacement, softmax, OedInstance, OedOracle, OedParams,
};
use zobilevel::problems::tv::{tv2_nu, tv2_nu_grad};
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

#[test]
fn projections_preserve_mass() {
    let side = 16;
    // Support inside the inscribed disc so no ray leaves the frame early.
    let mut img = vec![0.0; side * side];
    for r in 4..12 {
        for c in 5..11 {
            img[r * side + c] = 0.5 + 0.03 * (r + c) as f64;
        }
    }
    let mass: f64 = img.iter().sum();
    for i in 0..32 {
        let angle = i as f64 * std::f64::consts::PI / 32.0;
        let total: f64 = radon_block(side, angle).unwrap().apply(&img).iter().sum();
        assert!((total - mass).abs() <= 0.01 * mass, "angle {angle}: {total} vs {mass}");
    }
}

#[test]
fn transposed_image_swaps_axis_projections() {
    let side = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut img = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..=r {
            let v = rng.random_range(0.0..1.0);
            img[r * side + c] = v;
            img[c * side + r] = v;
        }
    }
    let p0 = radon_block(side, 0.0).unwrap().apply(&img);
    let p90 = radon_block(side, std::f64::consts::FRAC_PI_2).unwrap().apply(&img);
    // Brute force: column sums and row sums of a symmetric matrix agree.
    let col_sums: Vec<f64> = (0..side).map(|c| (0..side).map(|r| img[r * side + c]).sum()).collect();
    let mut rev = p90.clone();
    rev.reverse();
    assert!(max_abs_diff(&p0, &col_sums) < 1e-12);
    assert!(max_abs_diff(&p0, &p90) < 1e-12 || max_abs_diff(&p0, &rev) < 1e-12);
}

#[test]
fn transpose_is_the_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..8 {
        let b = radon_block(12, i as f64 * 0.39).unwrap();
        let x: Vec<f64> = (0..144).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..b.n_det()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = b.apply(&x).iter().zip(&r).map(|(a, c)| a * c).sum();
        let mut kt = vec![0.0; 144];
        b.apply_t_acc(&r, &mut kt);
        let rhs: f64 = kt.iter().zip(&x).map(|(a, c)| a * c).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

#[test]
fn block_norms_match_dense_power_iteration() {
    let inst = OedInstance::new(8, 4, 2).unwrap();
    for (b, &norm) in inst.blocks.iter().zip(&inst.block_norms) {
        let k = b.to_dense();
        let ktk = k.transpose() * &k;
        let mut v = DVector::from_element(64, 1.0);
        for _ in 0..2000 {
            v = &ktk * &v;
            v /= v.norm();
        }
        let rayleigh = v.dot(&(&ktk * &v));
        assert!((rayleigh - norm).abs() < 1e-8 * norm);
    }
}

#[test]
fn triangles_have_the_stated_gray_levels() {
    for seed in 0..200 {
        let img = generate_triangle(16, seed).unwrap();
        assert!(img.iter().all(|&v| v == 0.0 || (0.5..=1.0).contains(&v)));
        assert!(img.iter().filter(|&&v| v > 0.0).count() * 100 >= img.len());
        assert_eq!(img, generate_triangle(16, seed).unwrap());
    }
}

#[test]
fn softmax_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let l: Vec<f64> = (0..7).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
        assert!(max_abs_diff(&softmax(&l), &softmax(&shifted)) < 1e-12);
        assert!((softmax(&l).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn uniform_subsets_are_equally_likely() {
    // Enumerate all 3-subsets of 6 indices as bitmasks.
    let subsets: Vec<u32> = (0u32..64).filter(|m| m.count_ones() == 3).collect();
    assert_eq!(subsets.len(), 20);
    let p = vec![1.0 / 6.0; 6];
    let mut counts = vec![0u64; 20];
    let draws = 100_000u64;
    for s in 0..draws {
        let j = sample_without_replacement(&p, 3, NoiseSample::from_seed(s)).unwrap();
        let mask = j.iter().fold(0u32, |m, &i| m | (1 << i));
        counts[subsets.iter().position(|&x| x == mask).unwrap()] += 1;
    }
    let e = draws as f64 / 20.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let pval = 1.0 - ChiSquared::new(19.0).unwrap().cdf(stat);
    assert!(pval > 0.001, "p = {pval}");
}

#[test]
fn same_token_same_subset() {
    let p = softmax(&[0.1, -0.3, 0.8, 0.0, 1.2]);
    let t = NoiseSample::from_seed(42);
    assert_eq!(sample_without_replacement(&p, 2, t).unwrap(), sample_without_replacement(&p, 2, t).unwrap());
    assert!(sample_without_replacement(&[0.5, 0.5, 0.0], 3, t).is_err());
}

#[test]
fn common_random_numbers_fix_the_angle_set() {
    let inst = OedInstance::new(8, 6, 3).unwrap();
    let logits = [0.3, -0.2, 0.0, 0.5, -1.0, 0.1];
    let a = OedParams::new([-1.0, -2.0, -2.0], &logits);
    let b = OedParams::new([-0.4, -2.7, -1.1], &logits);
    for s in 0..50 {
        let xi = NoiseSample::from_seed(s);
        assert_eq!(inst.draw_subset(&a, xi).unwrap(), inst.draw_subset(&b, xi).unwrap());
    }
}

#[test]
fn gumbel_ranking_flips_only_when_keys_cross() {
    // Two angles, one pick: J = argmax(θ_i + G_i), so J changes exactly when
    // the logit gap crosses the Gumbel gap.
    let token = NoiseSample::from_seed(9);
    let base = sample_without_replacement(&softmax(&[0.0, 0.0]), 1, token).unwrap()[0];
    let mut flips = 0;
    let mut prev = base;
    for i in -400..=400 {
        let gap = i as f64 * 0.05;
        let j = sample_without_replacement(&softmax(&[gap, 0.0]), 1, token).unwrap()[0];
        if j != prev {
            flips += 1;
        }
        prev = j;
    }
    assert_eq!(flips, 1);
}

#[test]
fn stacked_operator_follows_the_angle_order() {
    let inst = OedInstance::new(8, 5, 3).unwrap();
    let x = generate_triangle(8, 1).unwrap();
    let j = [4, 0, 2];
    let d = inst.measure(&j, &x, None);
    assert_eq!(d.len(), 3 * 8);
    let expected: Vec<f64> = j.iter().flat_map(|&i| inst.blocks[i].apply(&x)).collect();
    assert_eq!(d, expected);
    assert_eq!(inst.assemble(&j).len(), 3);
}

#[test]
fn tv2_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let side = rng.random_range(2..9);
        let x: Vec<f64> = (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect();
        let nu = 10f64.powf(rng.random_range(-2.0..0.5));
        let fd = central_diff(|z| tv2_nu(z, side, nu), &x, 1e-6);
        assert!(max_abs_diff(&tv2_nu_grad(&x, side, nu), &fd) < 1e-5);
    }
}

#[test]
fn lower_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inst = OedInstance::new(8, 6, 3).unwrap();
    for _ in 0..100 {
        let params = OedParams::new([rng.random_range(-3.0..1.0), rng.random_range(-3.0..0.0), rng.random_range(-2.0..0.0)], &[0.0; 6]);
        let j = inst.draw_subset(&params, NoiseSample::from_seed(rng.random())).unwrap();
        let d: Vec<f64> = (0..24).map(|_| rng.random_range(0.0..3.0)).collect();
        let problem = inst.lower_problem(&j, &params, &d);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut g = vec![0.0; 64];
        problem.grad(&x, &mut g);
        let fd = central_diff(|z| problem.value(z), &x, 1e-6);
        assert!(max_abs_diff(&g, &fd) < 1e-5);
    }
}

#[test]
fn noise_free_full_pool_recovers_the_image() {
    let mut inst = OedInstance::new(8, 8, 8).unwrap();
    inst.noise_std = 0.0;
    let params = OedParams::new([-4.0, -7.0, 0.0], &[0.0; 8]);
    for seed in 0..3 {
        let x = generate_triangle(8, seed).unwrap();
        let (loss, _) = inst.sample_loss(&params, &x, NoiseSample::from_seed(seed), 1e-6).unwrap();
        // Reference: dense regularized least squares with every angle.
        let k = DMatrix::from_rows(
            &inst.blocks.iter().flat_map(|b| b.to_dense().row_iter().map(|r| r.into_owned()).collect::<Vec<_>>()).collect::<Vec<_>>(),
        );
        let xt = DVector::from_column_slice(&x);
        let d = &k * &xt;
        let normal = k.transpose() * &k + DMatrix::identity(64, 64) * 1e-4;
        let x_ref = normal.cholesky().unwrap().solve(&(k.transpose() * d));
        let ref_loss = (x_ref - &xt).norm_squared();
        let mass = xt.norm_squared();
        assert!(loss >= 0.0);
        assert!(loss <= 1e-3 * mass, "loss {loss}, mass {mass}");
        // The sign constraint and TV prior only help on a piecewise constant image.
        assert!(loss <= ref_loss);
    }
}

#[test]
fn oracle_reports_work_and_respects_fixed_policy() {
    let inst = OedInstance::new(8, 4, 2).unwrap();
    let train = generate_images(8, 3, 1).unwrap();
    let full = OedOracle::new(inst.clone(), train.clone()).unwrap();
    assert_eq!(full.dim(), 7);
    let fixed = OedOracle::new(inst, train).unwrap().with_fixed_policy(vec![0.0; 4]).unwrap();
    assert_eq!(fixed.dim(), 3);
    let xi = NoiseSample::from_seed(5);
    let a = full.eval(&Point(vec![-1.0, -2.0, -2.0, 0.0, 0.0, 0.0, 0.0]), xi).unwrap();
    let b = fixed.eval(&Point(vec![-1.0, -2.0, -2.0]), xi).unwrap();
    assert_eq!(a, b);
    assert_eq!(full.work().lower_solves, 1);
    assert!(full.eval(&Point(vec![0.0; 3]), xi).is_err());
}
