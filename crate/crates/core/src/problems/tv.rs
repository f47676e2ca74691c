//! Smoothed total variation `TV_ν`.

/// `Σ_i sqrt((x_{i+1} - x_i)² + ν²)`.
pub fn tv_nu(x: &[f64], nu: f64) -> f64 {
    x.windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            (d * d + nu * nu).sqrt()
        })
        .sum()
}

/// Adds `scale · ∇TV_ν(x)` to `out`.
pub fn tv_nu_grad_acc(x: &[f64], nu: f64, scale: f64, out: &mut [f64]) {
    for i in 0..x.len().saturating_sub(1) {
        let d = x[i + 1] - x[i];
        let q = scale * d / (d * d + nu * nu).sqrt();
        out[i] -= q;
        out[i + 1] += q;
    }
}

pub fn tv_nu_grad(x: &[f64], nu: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    tv_nu_grad_acc(x, nu, 1.0, &mut g);
    g
}

/// Isotropic 2D version on a row-major `side × side` image:
/// `Σ_{i,j} sqrt(dx² + dy² + ν²)` with forward differences that vanish on the
/// last row and column.
pub fn tv2_nu(img: &[f64], side: usize, nu: f64) -> f64 {
    let mut total = 0.0;
    for r in 0..side {
        for c in 0..side {
            let (dx, dy) = forward_diffs(img, side, r, c);
            total += (dx * dx + dy * dy + nu * nu).sqrt();
        }
    }
    total
}

fn forward_diffs(img: &[f64], side: usize, r: usize, c: usize) -> (f64, f64) {
    let p = img[r * side + c];
    let dx = if c + 1 < side { img[r * side + c + 1] - p } else { 0.0 };
    let dy = if r + 1 < side { img[(r + 1) * side + c] - p } else { 0.0 };
    (dx, dy)
}

/// Adds `scale · ∇TV2_ν(img)` to `out`.
pub fn tv2_nu_grad_acc(img: &[f64], side: usize, nu: f64, scale: f64, out: &mut [f64]) {
    // Fluxes p = scale · ∇x / |∇x|_ν per pixel; the gradient is -div p.
    let mut px = vec![0.0; img.len()];
    let mut py = vec![0.0; img.len()];
    let nu2 = nu * nu;
    for r in 0..side {
        let row = r * side;
        // The last row differences against itself, giving dy = 0.
        let below = if r + 1 < side { row + side } else { row };
        for c in 0..side - 1 {
            let i = row + c;
            let p = img[i];
            let dx = img[i + 1] - p;
            let dy = img[below + c] - p;
            let s = scale / (dx * dx + dy * dy + nu2).sqrt();
            px[i] = s * dx;
            py[i] = s * dy;
        }
        let i = row + side - 1;
        let dy = img[below + side - 1] - img[i];
        py[i] = scale * dy / (dy * dy + nu2).sqrt();
    }
    for i in 0..img.len() {
        let mut g = -px[i] - py[i];
        if i % side > 0 {
            g += px[i - 1];
        }
        if i >= side {
            g += py[i - side];
        }
        out[i] += g;
    }
}

pub fn tv2_nu_grad(img: &[f64], side: usize, nu: f64) -> Vec<f64> {
    let mut g = vec![0.0; img.len()];
    tv2_nu_grad_acc(img, side, nu, 1.0, &mut g);
    g
}
