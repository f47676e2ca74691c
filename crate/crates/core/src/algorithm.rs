//! The outer derivative-free proximal-gradient loop.
//!
//! For `k = 1..N` the loop draws a batch estimate `V̂_k` of `∇h_η(y_{k-1})`
//! with `m_k = ceil(m0 √k)` samples and steps
//! `y_k = P_{α_k}(y_{k-1}, V̂_k)` with `α_k = α0/√k`. After the run an output
//! index `κ` is drawn from a step-size weighted law and `y_κ` is reported.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metric::{DualVector, Point, RieszMap};
use crate::prox::{grad_mapping, Regularizer};
use crate::rng::StreamKey;
use crate::smoothing::{self, mean_and_stderr, NoiseSample, SmoothingParams, WorkCounters, ZerothOrderOracle};

const BATCH_STREAM: u64 = 0;
const KAPPA_STREAM: u64 = 1;
const OBJECTIVE_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "eta", rename_all = "snake_case")]
pub enum EtaMode {
    Fixed(f64),
    /// `η_k = η0/√k`. The fixed-radius analysis does not cover this schedule.
    InvSqrt(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub alpha0: f64,
    pub m0: usize,
    pub beta0: f64,
    pub eta_mode: EtaMode,
    pub n_iters: usize,
}

impl Schedules {
    pub fn validate(&self) -> Result<()> {
        let eta0 = match self.eta_mode {
            EtaMode::Fixed(e) | EtaMode::InvSqrt(e) => e,
        };
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::invalid("alpha0 must be positive"));
        }
        if self.m0 == 0 {
            return Err(Error::invalid("m0 must be at least 1"));
        }
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::invalid("beta0 must be positive"));
        }
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(Error::invalid("eta must be positive"));
        }
        if self.n_iters == 0 {
            return Err(Error::invalid("N must be at least 1"));
        }
        Ok(())
    }

    /// `α_k = α0/√k`, `k >= 1`.
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha0 / (k as f64).sqrt()
    }

    /// `m_k = ceil(m0 √k)`.
    pub fn batch(&self, k: usize) -> usize {
        // Guard against 2.0000000000000004 style round-off pushing a square up by one.
        let raw = self.m0 as f64 * (k as f64).sqrt();
        let r = raw.round();
        if (raw - r).abs() < 1e-9 {
            r as usize
        } else {
            raw.ceil() as usize
        }
    }

    /// `β_k = β0/√k`.
    pub fn beta(&self, k: usize) -> f64 {
        self.beta0 / (k as f64).sqrt()
    }

    pub fn eta(&self, k: usize) -> f64 {
        match self.eta_mode {
            EtaMode::Fixed(e) => e,
            EtaMode::InvSqrt(e) => e / (k as f64).sqrt(),
        }
    }

    pub fn alphas(&self) -> Vec<f64> {
        (1..=self.n_iters).map(|k| self.alpha(k)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerMode {
    Exact,
    Inexact,
}

/// Law of the output index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KappaLaw {
    /// `p_k ∝ α_k - α_k² lip1/2`.
    NonConvex,
    /// `p_k ∝ α_k (δ-1)/δ - α_k² lip1/2`.
    Inexact { delta: f64 },
    /// `p_k ∝ α_k - α_k² lip1` under the convex step policy.
    Convex,
}

/// Monte-Carlo estimates of the objective recorded along the run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTrace {
    pub every: usize,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub struct OuterConfig {
    pub mode: LowerMode,
    /// `lip1(h_η)` used by the output-index law.
    pub lip1: f64,
    pub seed: u64,
    pub regularizer: Regularizer,
    pub metric: RieszMap,
    pub kappa_law: KappaLaw,
    pub objective_trace: Option<ObjectiveTrace>,
}

impl OuterConfig {
    pub fn new(n: usize, lip1: f64, seed: u64, regularizer: Regularizer) -> Self {
        OuterConfig {
            mode: LowerMode::Exact,
            lip1,
            seed,
            regularizer,
            metric: RieszMap::identity(n),
            kappa_law: KappaLaw::NonConvex,
            objective_trace: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub alpha: f64,
    pub m: usize,
    /// Lower-level accuracy, `None` in exact mode.
    pub beta: Option<f64>,
    pub eta: f64,
    /// `||G̃_{η,α_k}(y_{k-1})||`.
    pub map_norm: f64,
    /// `||Δ_k||` with `Δ_k = Σ_{s<=k} α_s G̃_s`.
    pub delta_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// `y_0 .. y_N`.
    pub iterates: Vec<Point>,
    pub steps: Vec<IterationRecord>,
    /// 1-based output index, `None` when the configured law has no mass.
    pub kappa: Option<usize>,
    pub kappa_note: Option<String>,
    /// `y_κ`, or `y_N` when no index could be drawn.
    pub y_out: Point,
    /// `(k, estimate, stderr)` triples.
    #[serde(default)]
    pub objective_trace: Vec<(usize, f64, f64)>,
    /// Zeroth-order evaluations requested by the loop: `Σ 2 m_k`.
    pub oracle_calls: u64,
    /// Work reported by the oracle itself.
    pub work: WorkCounters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_iters: usize,
    pub kappa: Option<usize>,
    pub kappa_note: Option<String>,
    pub y_out: Point,
    pub y_final: Point,
    pub oracle_calls: u64,
    pub lower_solves: u64,
    pub lower_iterations: u64,
    pub final_map_norm: f64,
    pub max_delta_norm: f64,
}

impl RunRecord {
    pub fn n_iters(&self) -> usize {
        self.steps.len()
    }

    pub fn map_norms(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.map_norm).collect()
    }

    pub fn delta_norms(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.delta_norm).collect()
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            n_iters: self.n_iters(),
            kappa: self.kappa,
            kappa_note: self.kappa_note.clone(),
            y_out: self.y_out.clone(),
            y_final: self.iterates.last().cloned().unwrap_or_else(|| self.y_out.clone()),
            oracle_calls: self.oracle_calls,
            lower_solves: self.work.lower_solves,
            lower_iterations: self.work.lower_iterations,
            final_map_norm: self.steps.last().map_or(0.0, |s| s.map_norm),
            max_delta_norm: self.steps.iter().map(|s| s.delta_norm).fold(0.0, f64::max),
        }
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary is serializable")
    }

    /// One row per iteration: `k,alpha,m,beta,eta,map_norm,delta_norm,y0,..`
    /// where the `y` columns hold `y_k`. `beta` is empty in exact mode.
    pub fn to_csv(&self) -> String {
        let n = self.iterates.first().map_or(0, |y| y.len());
        let mut out = String::from("k,alpha,m,beta,eta,map_norm,delta_norm");
        for i in 0..n {
            write!(out, ",y{i}").unwrap();
        }
        out.push('\n');
        for (s, y) in self.steps.iter().zip(self.iterates.iter().skip(1)) {
            let beta = s.beta.map(|b| format!("{b:e}")).unwrap_or_default();
            write!(out, "{},{:e},{},{},{:e},{:e},{:e}", s.k, s.alpha, s.m, beta, s.eta, s.map_norm, s.delta_norm).unwrap();
            for v in y.iter() {
                write!(out, ",{v:e}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// What the observer of [`run_observed`] sees at iteration `k`.
pub struct StepInfo<'a> {
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
    pub y_prev: &'a Point,
    pub v_hat: &'a DualVector,
    pub y_next: &'a Point,
}

/// Runs the loop from `y0`.
pub fn run<O: ZerothOrderOracle + ?Sized>(config: &OuterConfig, schedules: &Schedules, oracle: &O, y0: &Point) -> Result<RunRecord> {
    run_observed(config, schedules, oracle, y0, |_| Ok(()))
}

/// [`run`] with a callback after every step.
pub fn run_observed<O, F>(config: &OuterConfig, schedules: &Schedules, oracle: &O, y0: &Point, mut observer: F) -> Result<RunRecord>
where
    O: ZerothOrderOracle + ?Sized,
    F: FnMut(&StepInfo<'_>) -> Result<()>,
{
    schedules.validate()?;
    if !(config.lip1 > 0.0 && config.lip1.is_finite()) {
        return Err(Error::invalid("lip1 must be positive"));
    }
    let n = config.metric.dim();
    check_dim(n, y0.len())?;
    check_dim(n, oracle.dim())?;
    if !config.regularizer.contains(y0, &config.metric) {
        return Err(Error::invalid("starting point lies outside the domain of the regularizer"));
    }
    let root = StreamKey::new(config.seed);
    let work_before = oracle.work();
    let mut record = RunRecord {
        iterates: vec![y0.clone()],
        steps: Vec::with_capacity(schedules.n_iters),
        kappa: None,
        kappa_note: None,
        y_out: y0.clone(),
        objective_trace: Vec::new(),
        oracle_calls: 0,
        work: WorkCounters::default(),
    };
    let trace_objective = |record: &mut RunRecord, k: usize, y: &Point| -> Result<()> {
        if let Some(t) = config.objective_trace {
            if t.every > 0 && t.samples > 0 && k % t.every == 0 {
                let (v, se) = objective_estimate(oracle, y, t.samples, root.child(OBJECTIVE_STREAM).child(k as u64).0)?;
                record.objective_trace.push((k, v + config.regularizer.value(y, &config.metric), se));
            }
        }
        Ok(())
    };
    trace_objective(&mut record, 0, y0)?;
    let mut y = y0.clone();
    for k in 1..=schedules.n_iters {
        let alpha = schedules.alpha(k);
        let m = schedules.batch(k);
        let eta = schedules.eta(k);
        let params = SmoothingParams::new(eta, config.metric.clone())?;
        let batch_seed = root.child(BATCH_STREAM).child(k as u64).0;
        let (v_hat, beta) = match config.mode {
            LowerMode::Exact => (smoothing::grad_estimate(oracle, &y, &params, m, batch_seed)?.value, None),
            LowerMode::Inexact => {
                let b = schedules.beta(k);
                (smoothing::grad_estimate_inexact(oracle, &y, &params, m, b, batch_seed)?.value, Some(b))
            }
        };
        record.oracle_calls += 2 * m as u64;
        let snap = grad_mapping(&y, &v_hat, alpha, &config.regularizer, &config.metric)?;
        if !snap.y_plus.is_finite() {
            record.work = diff(oracle.work(), &work_before);
            return Err(Error::NonFiniteIterate { k, partial: Box::new(record) });
        }
        let delta: Vec<f64> = y0.iter().zip(snap.y_plus.iter()).map(|(a, b)| a - b).collect();
        let delta_norm = config.metric.norm_sq_unchecked(&delta).sqrt();
        observer(&StepInfo { k, alpha, eta, y_prev: &y, v_hat: &v_hat, y_next: &snap.y_plus })?;
        record.steps.push(IterationRecord { k, alpha, m, beta, eta, map_norm: snap.map_norm, delta_norm });
        y = snap.y_plus;
        record.iterates.push(y.clone());
        trace_objective(&mut record, k, &y)?;
    }
    record.work = diff(oracle.work(), &work_before);
    let alphas = schedules.alphas();
    let kappa_seed = root.child(KAPPA_STREAM).0;
    let drawn = match config.kappa_law {
        KappaLaw::NonConvex => sample_kappa(&alphas, config.lip1, kappa_seed),
        KappaLaw::Inexact { delta } => sample_kappa_inexact(&alphas, config.lip1, delta, kappa_seed),
        KappaLaw::Convex => sample_kappa_convex(&alphas, config.lip1, kappa_seed),
    };
    match drawn {
        Ok(kappa) => {
            record.y_out = record.iterates[kappa].clone();
            record.kappa = Some(kappa);
        }
        Err(e) => {
            record.y_out = y;
            record.kappa_note = Some(format!("no output index drawn ({e}); reporting the last iterate"));
        }
    }
    Ok(record)
}

fn diff(after: WorkCounters, before: &WorkCounters) -> WorkCounters {
    WorkCounters {
        evaluations: after.evaluations - before.evaluations,
        lower_solves: after.lower_solves - before.lower_solves,
        lower_iterations: after.lower_iterations - before.lower_iterations,
    }
}

/// Mean and standard error of `H(y, ξ)` over `samples` noise draws.
pub fn objective_estimate<O: ZerothOrderOracle + ?Sized>(oracle: &O, y: &Point, samples: usize, seed: u64) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    if samples == 0 {
        return Err(Error::EmptyBatch);
    }
    let root = StreamKey::new(seed);
    let values = (0..samples as u64).into_par_iter().map(|i| oracle.eval(y, NoiseSample(root.child(i)))).collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_stderr(&values))
}

fn normalized(weights: Vec<f64>) -> Result<Vec<f64>> {
    if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0)) {
        return Err(Error::DegeneratePmf(format!("weight {w} at k={} is negative", i + 1)));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegeneratePmf("all weights vanish".into()));
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Removes round-off when a weight sits exactly on its zero boundary.
fn snap(w: f64, scale: f64) -> f64 {
    if w.abs() <= 1e-14 * scale {
        0.0
    } else {
        w
    }
}

fn check_law_inputs(alphas: &[f64], lip1: f64) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::DegeneratePmf("no iterations".into()));
    }
    if !(lip1 > 0.0 && lip1.is_finite()) {
        return Err(Error::invalid("lip1 must be positive"));
    }
    if alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::invalid("step sizes must be positive"));
    }
    Ok(())
}

/// Normalized `p_k ∝ α_k - α_k² lip1/2`.
pub fn kappa_pmf(alphas: &[f64], lip1: f64) -> Result<Vec<f64>> {
    check_law_inputs(alphas, lip1)?;
    normalized(alphas.iter().map(|&a| snap(a * (1.0 - 0.5 * a * lip1), a)).collect())
}

/// Normalized `p_k ∝ α_k (δ-1)/δ - α_k² lip1/2`.
pub fn kappa_pmf_inexact(alphas: &[f64], lip1: f64, delta: f64) -> Result<Vec<f64>> {
    check_law_inputs(alphas, lip1)?;
    if !(delta > 1.0) {
        return Err(Error::invalid(format!("delta must exceed 1, got {delta}")));
    }
    let c = (delta - 1.0) / delta;
    normalized(alphas.iter().map(|&a| snap(a * (c - 0.5 * a * lip1), a)).collect())
}

/// Normalized `p_k ∝ α_k - α_k² lip1` after checking the convex step policy:
/// non-increasing steps, `α_1 <= 1/lip1` and `α_k + α_{k-1} <= 1/lip1`.
pub fn kappa_pmf_convex(alphas: &[f64], lip1: f64) -> Result<Vec<f64>> {
    check_law_inputs(alphas, lip1)?;
    let cap = 1.0 / lip1;
    let tol = 1e-12 * cap;
    if alphas[0] > cap + tol {
        return Err(Error::StepPolicyViolation(format!("alpha_1 = {} exceeds 1/lip1 = {cap}", alphas[0])));
    }
    for (k, w) in alphas.windows(2).enumerate() {
        if w[1] > w[0] {
            return Err(Error::StepPolicyViolation(format!("step increases at k={}", k + 2)));
        }
        if w[0] + w[1] > cap + tol {
            return Err(Error::StepPolicyViolation(format!("alpha_{} + alpha_{} exceeds 1/lip1", k + 2, k + 1)));
        }
    }
    normalized(alphas.iter().map(|&a| snap(a * (1.0 - a * lip1), a)).collect())
}

fn draw(pmf: &[f64], seed: u64) -> Result<usize> {
    let dist = WeightedIndex::new(pmf).map_err(|e| Error::DegeneratePmf(e.to_string()))?;
    Ok(dist.sample(&mut StreamKey::new(seed).rng()) + 1)
}

/// Draws `κ ∈ {1..N}` from [`kappa_pmf`].
pub fn sample_kappa(alphas: &[f64], lip1: f64, seed: u64) -> Result<usize> {
    draw(&kappa_pmf(alphas, lip1)?, seed)
}

pub fn sample_kappa_inexact(alphas: &[f64], lip1: f64, delta: f64, seed: u64) -> Result<usize> {
    draw(&kappa_pmf_inexact(alphas, lip1, delta)?, seed)
}

pub fn sample_kappa_convex(alphas: &[f64], lip1: f64, seed: u64) -> Result<usize> {
    draw(&kappa_pmf_convex(alphas, lip1)?, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let s = Schedules { alpha0: 1.0, m0: 1, beta0: 0.01, eta_mode: EtaMode::InvSqrt(1.0), n_iters: 10 };
        assert_eq!(s.alpha(4), 0.5);
        assert_eq!(s.batch(1), 1);
        assert_eq!(s.batch(2), 2);
        assert_eq!(s.batch(4), 2);
        assert_eq!(s.batch(5), 3);
        assert_eq!(s.beta(100), 0.001);
        assert_eq!(s.eta(4), 0.5);
        let s3 = Schedules { m0: 3, ..s.clone() };
        assert_eq!(s3.batch(9), 9);
        assert!(Schedules { m0: 0, ..s }.validate().is_err());
    }

    #[test]
    fn pmf_examples() {
        let p = kappa_pmf(&[1.0, 0.5], 1.0).unwrap();
        assert!((p[0] - 4.0 / 7.0).abs() < 1e-15);
        assert!((p[1] - 3.0 / 7.0).abs() < 1e-15);
        let p = kappa_pmf(&[0.25; 4], 4.0).unwrap();
        assert!(p.iter().all(|q| (q - 0.25).abs() < 1e-15));
        assert!(matches!(kappa_pmf(&[2.0, 2.0], 1.0), Err(Error::DegeneratePmf(_))));
        assert!(matches!(kappa_pmf(&[3.0, 1.0], 1.0), Err(Error::DegeneratePmf(_))));
    }

    #[test]
    fn inexact_pmf_examples() {
        let alphas = [0.9, 0.6, 0.3, 0.1];
        let exact = kappa_pmf(&alphas, 1.3).unwrap();
        let limit = kappa_pmf_inexact(&alphas, 1.3, 1e6).unwrap();
        for (a, b) in exact.iter().zip(&limit) {
            assert!(((a - b) / a).abs() < 1e-5);
        }
        let p = kappa_pmf_inexact(&[0.5 / 3.0; 5], 3.0, 2.0).unwrap();
        assert!(p.iter().all(|q| (q - 0.2).abs() < 1e-15));
        assert_eq!(sample_kappa_inexact(&[0.1], 1.0, 3.0, 9).unwrap(), 1);
        assert!(kappa_pmf_inexact(&[0.1], 1.0, 1.0).is_err());
    }

    #[test]
    fn convex_pmf_examples() {
        let lip1 = 2.0;
        let p = kappa_pmf_convex(&[0.25; 6], lip1).unwrap();
        assert!(p.iter().all(|q| (q - 1.0 / 6.0).abs() < 1e-15));
        assert!(matches!(kappa_pmf_convex(&[0.6], lip1), Err(Error::StepPolicyViolation(_))));
        assert!(matches!(kappa_pmf_convex(&[0.1, 0.2], lip1), Err(Error::StepPolicyViolation(_))));
        let alphas: Vec<f64> = (1..=20).map(|k| 1.0 / (2.0 * lip1 * (k as f64).sqrt())).collect();
        let w: Vec<f64> = alphas.iter().map(|a| a - a * a * lip1).collect();
        assert!(w.iter().all(|v| *v > 0.0));
        assert!(w.windows(2).all(|p| p[1] < p[0]));
        kappa_pmf_convex(&alphas, lip1).unwrap();
    }

    #[test]
    fn draws_are_one_based_and_seeded() {
        let alphas = [0.5, 0.4, 0.3];
        let a = sample_kappa(&alphas, 1.0, 3).unwrap();
        assert!((1..=3).contains(&a));
        assert_eq!(a, sample_kappa(&alphas, 1.0, 3).unwrap());
    }
}
