//! WebAssembly bindings for the static page in `www/`.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(e: zobilevel::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Denoiser {
    inner: demo::DenoiseExplorer,
    error: f64,
}

#[wasm_bindgen]
impl Denoiser {
    #[wasm_bindgen(constructor)]
    pub fn new(n_x: usize, seed: u32) -> Result<Denoiser, JsError> {
        Ok(Denoiser { inner: demo::DenoiseExplorer::new(n_x, seed.into()).map_err(js)?, error: f64::NAN })
    }

    pub fn truth(&self) -> Vec<f64> {
        self.inner.truth().to_vec()
    }

    pub fn noisy(&self) -> Vec<f64> {
        self.inner.noisy().to_vec()
    }

    /// Exponents are base-10 logs of λ, τ and ν.
    pub fn reconstruct(&mut self, log_lam: f64, log_tau: f64, log_nu: f64) -> Result<Vec<f64>, JsError> {
        let (x, err) = self.inner.reconstruct([log_lam, log_tau, log_nu]).map_err(js)?;
        self.error = err;
        Ok(x)
    }

    /// Relative error of the last reconstruction.
    #[wasm_bindgen(getter)]
    pub fn error(&self) -> f64 {
        self.error
    }
}

/// `[y..., h_η(y)..., slope estimate...]`, each block `points` long.
#[wasm_bindgen]
pub fn smoothing_curve(eta: f64, lo: f64, hi: f64, points: usize, samples: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    let c = demo::smoothing_curve(eta, lo, hi, points, samples, seed.into()).map_err(js)?;
    Ok([c.y, c.value, c.slope].concat())
}

#[wasm_bindgen]
pub struct Tomography {
    inner: demo::TomographyExplorer,
    last: Option<demo::Scan>,
}

#[wasm_bindgen]
impl Tomography {
    #[wasm_bindgen(constructor)]
    pub fn new(side: usize, n_angles: usize, k_pick: usize, seed: u32) -> Result<Tomography, JsError> {
        Ok(Tomography { inner: demo::TomographyExplorer::new(side, n_angles, k_pick, seed.into()).map_err(js)?, last: None })
    }

    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        self.inner.side()
    }

    #[wasm_bindgen(getter)]
    pub fn detectors(&self) -> usize {
        self.inner.detectors()
    }

    pub fn truth(&self) -> Vec<f64> {
        self.inner.truth().to_vec()
    }

    pub fn sinogram(&self) -> Vec<f64> {
        self.inner.full_sinogram()
    }

    /// Runs one scan and returns the reconstructed image.
    pub fn scan(&mut self, log_lam: f64, log_tau: f64, log_nu: f64, logits: Vec<f64>, seed: u32) -> Result<Vec<f64>, JsError> {
        let s = self.inner.scan([log_lam, log_tau, log_nu], &logits, seed.into()).map_err(js)?;
        let image = s.image.clone();
        self.last = Some(s);
        Ok(image)
    }

    /// Angle indices chosen by the last scan.
    pub fn angles(&self) -> Vec<u32> {
        self.last.as_ref().map(|s| s.angles.iter().map(|&a| a as u32).collect()).unwrap_or_default()
    }

    #[wasm_bindgen(getter)]
    pub fn error(&self) -> f64 {
        self.last.as_ref().map_or(f64::NAN, |s| s.error)
    }
}
