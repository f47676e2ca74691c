//! Training runs, baselines, validation and result bundles.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use zobilevel::algorithm::{run, OuterConfig, RunRecord, RunSummary};
use zobilevel::metric::Point;
use zobilevel::problems::denoise::{generate_dataset, DenoiseInstance, DenoiseOracle, HyperParams, VALIDATION_BETA};
use zobilevel::problems::oed::{self, generate_images, OedInstance, OedOracle, OedParams};
use zobilevel::problems::toy::DistanceOracle;
use zobilevel::problems::{image_to_pgm, pairs_to_csv, rows_to_csv, Pair};
use zobilevel::prox::Regularizer;
use zobilevel::rng::StreamKey;
use zobilevel::smoothing::{NoiseSample, WorkCounters, ZerothOrderOracle};

use crate::config::{ExperimentConfig, ExperimentKind, OutputChoice, REG_BOX};
use crate::diagnostics::{goldstein_surrogate, running_min_slope, SurrogateOptions};
use crate::error::{HarnessError, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "ZOBILEVEL_OUT";

/// Offset separating the validation noise stream from the validation data stream.
const VALIDATION_NOISE_OFFSET: u64 = 1 << 32;

pub const RUN_CSV: &str = "run.csv";
pub const BASELINE_RUN_CSV: &str = "baseline_run.csv";
pub const VALIDATION_CSV: &str = "validation.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const RECONSTRUCTION_CSV: &str = "reconstruction.csv";
pub const CONFIG_TOML: &str = "config.toml";
pub const TIMING_JSON: &str = "timing.json";

/// Counts every call that reaches the wrapped oracle.
struct Counted<O> {
    inner: O,
    calls: AtomicU64,
}

impl<O: ZerothOrderOracle> Counted<O> {
    fn new(inner: O) -> Self {
        Counted { inner, calls: AtomicU64::new(0) }
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<O: ZerothOrderOracle> ZerothOrderOracle for Counted<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, y: &Point, sample: NoiseSample) -> zobilevel::Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.eval(y, sample)
    }
    fn eval_inexact(&self, y: &Point, sample: NoiseSample, beta: f64) -> zobilevel::Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.eval_inexact(y, sample, beta)
    }
    fn lip0_hint(&self) -> Option<f64> {
        self.inner.lip0_hint()
    }
    fn work(&self) -> WorkCounters {
        self.inner.work()
    }
}

/// One training run of the outer loop.
#[derive(Clone, Debug)]
pub struct Training {
    pub record: RunRecord,
    /// The reported parameter (see [`OutputChoice`]).
    pub learned: Vec<f64>,
    /// Oracle calls observed at the oracle boundary.
    pub counted_calls: u64,
    pub seconds: f64,
}

fn train<O: ZerothOrderOracle>(cfg: &ExperimentConfig, oracle: O, y0: Vec<f64>, regularizer: Regularizer) -> Result<Training> {
    let counted = Counted::new(oracle);
    let mut outer = OuterConfig::new(y0.len(), cfg.lip1, cfg.seeds.algorithm, regularizer);
    outer.mode = cfg.mode;
    let start = Instant::now();
    let record = run(&outer, &cfg.schedules, &counted, &Point(y0))?;
    let learned = match cfg.output {
        OutputChoice::Last => record.iterates.last().expect("at least y0").0.clone(),
        OutputChoice::Kappa => record.y_out.0.clone(),
    };
    Ok(Training { record, learned, counted_calls: counted.calls(), seconds: start.elapsed().as_secs_f64() })
}

/// Validation errors of one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodErrors {
    pub method: String,
    pub y: Vec<f64>,
    pub errors: Vec<f64>,
}

impl MethodErrors {
    pub fn median(&self) -> f64 {
        median(&self.errors)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub y: Vec<f64>,
    pub median_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    pub algorithm_seed: u64,
    pub learned_y: Vec<f64>,
    pub run: RunSummary,
    /// Calls seen at the oracle boundary; equals `run.oracle_calls`.
    pub counted_oracle_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_run: Option<RunSummary>,
    pub methods: Vec<MethodSummary>,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
}

impl Summary {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// A single reconstruction of the first validation sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Reconstruction {
    Signal { truth: Vec<f64>, noisy: Vec<f64>, estimate: Vec<f64> },
    Image { side: usize, truth: Vec<f64>, estimate: Vec<f64>, angles: Vec<usize>, sinogram: Vec<Vec<f64>> },
    None,
}

/// Everything an experiment produces, before it is written to disk.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub config: ExperimentConfig,
    pub summary: Summary,
    pub training: Training,
    pub baseline: Option<Training>,
    pub validation: Vec<MethodErrors>,
    pub reconstruction: Reconstruction,
    /// Named CSV dumps of the generated datasets.
    pub datasets: Vec<(String, String)>,
    pub timing: BTreeMap<String, f64>,
}

struct Data {
    denoise: Option<(DenoiseInstance, Vec<Pair>, Vec<Pair>)>,
    oed: Option<(OedInstance, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

fn build_data(cfg: &ExperimentConfig) -> Result<Data> {
    Ok(match cfg.experiment {
        ExperimentKind::Denoise => {
            let mut inst = DenoiseInstance::new(cfg.denoise.n_x)?;
            inst.penalty = cfg.denoise.penalty;
            let train = generate_dataset(cfg.denoise.n_x, cfg.train, cfg.seeds.data)?;
            let val = generate_dataset(cfg.denoise.n_x, cfg.validation, cfg.seeds.validation)?;
            Data { denoise: Some((inst, train, val)), oed: None }
        }
        ExperimentKind::Oed => {
            let o = &cfg.oed;
            let inst = OedInstance::new(o.img_side, o.n_angles, o.k_pick)?;
            let train = generate_images(o.img_side, cfg.train, cfg.seeds.data)?;
            let val = generate_images(o.img_side, cfg.validation, cfg.seeds.validation)?;
            Data { denoise: None, oed: Some((inst, train, val)) }
        }
        ExperimentKind::ToyConvex => Data { denoise: None, oed: None },
    })
}

fn oed_box(dim: usize) -> Result<Regularizer> {
    let lo = (0..dim).map(|i| if i < 3 { -REG_BOX } else { f64::NEG_INFINITY }).collect();
    let hi = (0..dim).map(|i| if i < 3 { REG_BOX } else { f64::INFINITY }).collect();
    Ok(Regularizer::boxed(lo, hi)?)
}

fn oed_full_y(reg: &[f64], n_angles: usize) -> Vec<f64> {
    OedParams::new([reg[0], reg[1], reg[2]], &vec![0.0; n_angles]).y
}

fn validation_noise_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds.validation.wrapping_add(VALIDATION_NOISE_OFFSET)
}

fn evaluate(cfg: &ExperimentConfig, data: &Data, methods: &[(String, Vec<f64>)]) -> Result<Vec<MethodErrors>> {
    methods
        .iter()
        .map(|(name, y)| {
            let errors = match cfg.experiment {
                ExperimentKind::Denoise => {
                    let (inst, _, val) = data.denoise.as_ref().expect("denoise data");
                    inst.validation_errors(&HyperParams::from_y(y)?, val)?
                }
                ExperimentKind::Oed => {
                    let (inst, _, val) = data.oed.as_ref().expect("oed data");
                    inst.validation_errors(&OedParams { y: y.clone() }, val, validation_noise_seed(cfg))?
                }
                ExperimentKind::ToyConvex => vec![y.iter().zip(&cfg.toy.center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()],
            };
            Ok(MethodErrors { method: name.clone(), y: y.clone(), errors })
        })
        .collect()
}

fn exponent_label(v: f64) -> String {
    format!("1e{}", fmt_num(v))
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

/// Method name of a denoising baseline with exponents `b`.
pub fn baseline_name(b: &[f64; 3]) -> String {
    format!("lam={} tau={} nu={}", exponent_label(b[0]), exponent_label(b[1]), exponent_label(b[2]))
}

/// Runs the configured experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut timing = BTreeMap::new();
    let start = Instant::now();
    let data = build_data(cfg)?;
    timing.insert("data_seconds".to_string(), start.elapsed().as_secs_f64());

    let mut datasets = Vec::new();
    let mut diagnostics = BTreeMap::new();
    let (training, baseline, methods) = match cfg.experiment {
        ExperimentKind::Denoise => {
            let (inst, train_set, val) = data.denoise.as_ref().expect("denoise data");
            datasets.push(("train.csv".to_string(), pairs_to_csv(train_set)));
            datasets.push(("validation_set.csv".to_string(), pairs_to_csv(val)));
            let oracle = DenoiseOracle::new(inst.clone(), train_set.clone())?;
            let t = train(cfg, oracle, cfg.denoise.y0.to_vec(), Regularizer::cube(3, -REG_BOX, REG_BOX)?)?;
            let mut methods = vec![("learned".to_string(), t.learned.clone()), ("initial".to_string(), cfg.denoise.y0.to_vec())];
            methods.extend(cfg.denoise.baselines.iter().map(|b| (baseline_name(b), b.to_vec())));
            (t, None, methods)
        }
        ExperimentKind::Oed => {
            let (inst, train_set, val) = data.oed.as_ref().expect("oed data");
            datasets.push(("train_images.csv".to_string(), rows_to_csv(train_set)));
            datasets.push(("validation_images.csv".to_string(), rows_to_csv(val)));
            let n = cfg.oed.n_angles;
            let y0 = oed_full_y(&cfg.oed.reg0, n);
            let t = train(cfg, OedOracle::new(inst.clone(), train_set.clone())?, y0.clone(), oed_box(y0.len())?)?;
            let mut methods = vec![("learned".to_string(), t.learned.clone()), ("initial".to_string(), y0)];
            let baseline = if cfg.oed.reg_only_baseline {
                let oracle = OedOracle::new(inst.clone(), train_set.clone())?.with_fixed_policy(vec![0.0; n])?;
                let b = train(cfg, oracle, cfg.oed.reg0.to_vec(), oed_box(3)?)?;
                methods.push(("reg_only".to_string(), oed_full_y(&b.learned, n)));
                Some(b)
            } else {
                None
            };
            (t, baseline, methods)
        }
        ExperimentKind::ToyConvex => {
            let n = cfg.toy.center.len();
            let oracle = DistanceOracle::new(cfg.toy.center.clone());
            let cube = Regularizer::cube(n, -cfg.toy.half_width, cfg.toy.half_width)?;
            let t = train(cfg, oracle.clone(), cfg.toy.y0.clone(), cube.clone())?;
            let map_sq: Vec<f64> = t.record.map_norms().iter().map(|v| v * v).collect();
            diagnostics.insert("rate_slope".to_string(), running_min_slope(&map_sq));
            let metric = zobilevel::RieszMap::identity(n);
            let opts = SurrogateOptions::default();
            let last = t.record.n_iters();
            for k in [10.min(last), last] {
                let s = goldstein_surrogate(&oracle, &t.record, k, &cfg.schedules, &cube, &metric, opts)?;
                diagnostics.insert(format!("surrogate_k{k}"), s);
            }
            let methods = vec![("learned".to_string(), t.learned.clone()), ("initial".to_string(), cfg.toy.y0.clone())];
            (t, None, methods)
        }
    };
    timing.insert("training_seconds".to_string(), training.seconds);
    if let Some(b) = &baseline {
        timing.insert("baseline_training_seconds".to_string(), b.seconds);
    }

    let start = Instant::now();
    let validation = evaluate(cfg, &data, &methods)?;
    timing.insert("validation_seconds".to_string(), start.elapsed().as_secs_f64());
    let reconstruction = reconstruct(cfg, &data, &training.learned)?;

    let summary = Summary {
        experiment: cfg.experiment,
        algorithm_seed: cfg.seeds.algorithm,
        learned_y: training.learned.clone(),
        run: training.record.summary(),
        counted_oracle_calls: training.counted_calls,
        baseline_run: baseline.as_ref().map(|b| b.record.summary()),
        methods: validation.iter().map(|m| MethodSummary { method: m.method.clone(), y: m.y.clone(), median_error: m.median() }).collect(),
        diagnostics,
    };
    Ok(Outcome { config: cfg.clone(), summary, training, baseline, validation, reconstruction, datasets, timing })
}

fn reconstruct(cfg: &ExperimentConfig, data: &Data, learned: &[f64]) -> Result<Reconstruction> {
    Ok(match cfg.experiment {
        ExperimentKind::Denoise => {
            let (inst, _, val) = data.denoise.as_ref().expect("denoise data");
            let p = &val[0];
            let sol = inst.reconstruct(&HyperParams::from_y(learned)?, &p.d, VALIDATION_BETA)?;
            Reconstruction::Signal { truth: p.x_true.clone(), noisy: p.d.clone(), estimate: sol.x }
        }
        ExperimentKind::Oed => {
            let (inst, _, val) = data.oed.as_ref().expect("oed data");
            let xi = NoiseSample(StreamKey::new(validation_noise_seed(cfg)).child(0));
            let m = inst.simulate(&OedParams { y: learned.to_vec() }, &val[0], xi, oed::VALIDATION_BETA)?;
            let side = inst.side;
            let sinogram = m.d.chunks(inst.blocks[0].n_det()).map(<[f64]>::to_vec).collect();
            Reconstruction::Image { side, truth: val[0].clone(), estimate: m.solve.x, angles: m.j, sinogram }
        }
        ExperimentKind::ToyConvex => Reconstruction::None,
    })
}

/// Output directory: the configured one, else `$ZOBILEVEL_OUT/<experiment>`,
/// else `results/<experiment>`.
pub fn resolve_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = &cfg.out_dir {
        return dir.clone();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"));
    root.join(cfg.experiment.name())
}

/// Paths of a result bundle on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultBundle {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub summary: Summary,
}

impl ResultBundle {
    pub fn run_csv(&self) -> PathBuf {
        self.dir.join(RUN_CSV)
    }
    pub fn validation_csv(&self) -> PathBuf {
        self.dir.join(VALIDATION_CSV)
    }
    pub fn summary_json(&self) -> PathBuf {
        self.dir.join(SUMMARY_JSON)
    }
    pub fn reconstruction_csv(&self) -> PathBuf {
        self.dir.join(RECONSTRUCTION_CSV)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read =
            |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| HarnessError::Bundle(format!("{}: {e}", dir.join(name).display())));
        let config = ExperimentConfig::from_toml_str(&read(CONFIG_TOML)?, None)?;
        let summary: Summary =
            serde_json::from_str(&read(SUMMARY_JSON)?).map_err(|e| HarnessError::Bundle(format!("{SUMMARY_JSON}: {e}")))?;
        let bundle = ResultBundle { dir: dir.to_path_buf(), config, summary };
        for p in [bundle.run_csv(), bundle.validation_csv()] {
            if !p.is_file() {
                return Err(HarnessError::Bundle(format!("{} is missing", p.display())));
            }
        }
        Ok(bundle)
    }

    /// Validation errors as stored in `validation.csv`, grouped by method in file order.
    pub fn validation(&self) -> Result<Vec<(String, Vec<f64>)>> {
        let text = fs::read_to_string(self.validation_csv())?;
        parse_validation_csv(&text)
    }
}

pub fn validation_to_csv(methods: &[MethodErrors]) -> String {
    let mut out = String::from("method,sample,error\n");
    for m in methods {
        for (i, e) in m.errors.iter().enumerate() {
            out.push_str(&format!("{},{i},{e:e}\n", m.method));
        }
    }
    out
}

pub fn parse_validation_csv(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || HarnessError::Bundle(format!("{VALIDATION_CSV} line {}: {line}", lineno + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let e: f64 = fields[2].parse().map_err(|_| bad())?;
        match groups.last_mut() {
            Some((name, v)) if name == fields[0] => v.push(e),
            _ => groups.push((fields[0].to_string(), vec![e])),
        }
    }
    Ok(groups)
}

fn reconstruction_to_csv(r: &Reconstruction) -> Option<String> {
    match r {
        Reconstruction::Signal { truth, noisy, estimate } => {
            let mut out = String::from("i,truth,noisy,reconstruction\n");
            for i in 0..truth.len() {
                out.push_str(&format!("{i},{:e},{:e},{:e}\n", truth[i], noisy[i], estimate[i]));
            }
            Some(out)
        }
        Reconstruction::Image { truth, estimate, .. } => {
            let mut out = String::from("i,truth,reconstruction\n");
            for i in 0..truth.len() {
                out.push_str(&format!("{i},{:e},{:e}\n", truth[i], estimate[i]));
            }
            Some(out)
        }
        Reconstruction::None => None,
    }
}

impl Outcome {
    /// Writes the bundle into `dir`. Everything except `timing.json` is a
    /// deterministic function of the config.
    pub fn write(&self, dir: &Path) -> Result<ResultBundle> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_TOML), self.config.to_toml_string())?;
        fs::write(dir.join(RUN_CSV), self.training.record.to_csv())?;
        if let Some(b) = &self.baseline {
            fs::write(dir.join(BASELINE_RUN_CSV), b.record.to_csv())?;
        }
        fs::write(dir.join(VALIDATION_CSV), validation_to_csv(&self.validation))?;
        fs::write(dir.join(SUMMARY_JSON), serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n")?;
        if let Some(csv) = reconstruction_to_csv(&self.reconstruction) {
            fs::write(dir.join(RECONSTRUCTION_CSV), csv)?;
        }
        if let Reconstruction::Image { side, truth, estimate, angles, sinogram } = &self.reconstruction {
            fs::write(dir.join("truth.pgm"), image_to_pgm(truth, *side))?;
            fs::write(dir.join("reconstruction.pgm"), image_to_pgm(estimate, *side))?;
            let mut csv = String::new();
            for (a, row) in angles.iter().zip(sinogram) {
                csv.push_str(&a.to_string());
                for v in row {
                    csv.push_str(&format!(",{v:e}"));
                }
                csv.push('\n');
            }
            fs::write(dir.join("sinogram.csv"), csv)?;
        }
        for (name, csv) in &self.datasets {
            fs::write(dir.join(name), csv)?;
        }
        fs::write(dir.join(TIMING_JSON), serde_json::to_string_pretty(&self.timing).expect("timing serializes") + "\n")?;
        Ok(ResultBundle { dir: dir.to_path_buf(), config: self.config.clone(), summary: self.summary.clone() })
    }
}

/// Runs the experiment and writes its bundle to [`resolve_out_dir`]. A run
/// that stops on a non-finite iterate leaves `run.partial.csv` and `error.txt`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    let dir = resolve_out_dir(cfg);
    match execute(cfg) {
        Ok(outcome) => outcome.write(&dir),
        Err(err) => {
            fs::create_dir_all(&dir)?;
            if let HarnessError::Numerical(zobilevel::Error::NonFiniteIterate { partial, .. }) = &err {
                fs::write(dir.join("run.partial.csv"), partial.to_csv())?;
            }
            fs::write(dir.join("error.txt"), format!("{err}\n"))?;
            Err(err)
        }
    }
}

/// Recomputes the validation errors of every method stored in a bundle.
pub fn revalidate(bundle: &ResultBundle) -> Result<Vec<MethodErrors>> {
    let data = build_data(&bundle.config)?;
    let methods: Vec<(String, Vec<f64>)> = bundle.summary.methods.iter().map(|m| (m.method.clone(), m.y.clone())).collect();
    evaluate(&bundle.config, &data, &methods)
}
