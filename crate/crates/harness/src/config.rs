//! Experiment configuration.
//!
//! A config file is a TOML table layered over the defaults of the chosen
//! experiment, so a file only needs the keys it changes. Every setting of the
//! reference experiments has a key, and the defaults carry the reference values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use zobilevel::algorithm::{EtaMode, LowerMode, Schedules};
use zobilevel::problems::denoise::ConditionPenalty;

use crate::error::{HarnessError, Result};

/// Half-width of the box on the regularization exponents.
pub const REG_BOX: f64 = 7.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Denoise,
    Oed,
    ToyConvex,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Denoise => "denoise",
            ExperimentKind::Oed => "oed",
            ExperimentKind::ToyConvex => "toy_convex",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoise" => Ok(ExperimentKind::Denoise),
            "oed" => Ok(ExperimentKind::Oed),
            "toy_convex" | "toy" => Ok(ExperimentKind::ToyConvex),
            other => Err(HarnessError::Config(format!("unknown experiment `{other}` (expected denoise, oed or toy_convex)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Training data.
    pub data: u64,
    /// Held-out validation data and its measurement noise.
    pub validation: u64,
    /// Estimator directions, noise draws and the output index.
    pub algorithm: u64,
}

/// Which iterate is reported as the learned parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputChoice {
    /// `y_N`.
    Last,
    /// `y_κ`, falling back to `y_N` when the output-index law is degenerate.
    Kappa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseSettings {
    pub n_x: usize,
    /// Starting exponents `log10 (λ, τ, ν)`.
    pub y0: [f64; 3],
    /// Fixed exponent triples evaluated next to the learned parameters.
    pub baselines: Vec<[f64; 3]>,
    pub penalty: ConditionPenalty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OedSettings {
    pub img_side: usize,
    pub n_angles: usize,
    pub k_pick: usize,
    /// Starting exponents `log10 (λ, τ, ν)`; the logits start at zero.
    pub reg0: [f64; 3],
    /// Also learn the regularization alone under the uniform policy, with
    /// the same seeds, as a paired baseline.
    pub reg_only_baseline: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySettings {
    /// Minimizer `y*` of `||y - y*||`.
    pub center: Vec<f64>,
    pub y0: Vec<f64>,
    /// The box is `[-half_width, half_width]^n`.
    pub half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub schedules: Schedules,
    pub mode: LowerMode,
    /// `lip1(h_η)` for the output-index law.
    pub lip1: f64,
    pub output: OutputChoice,
    pub train: usize,
    pub validation: usize,
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub denoise: DenoiseSettings,
    pub oed: OedSettings,
    pub toy: ToySettings,
}

fn denoise_settings() -> DenoiseSettings {
    DenoiseSettings {
        n_x: 256,
        y0: [-2.0, -2.0, -2.0],
        baselines: vec![[-3.0, -3.0, -3.0], [-1.0, -3.0, -3.0], [-3.0, 0.0, -3.0], [-1.0, 0.0, -3.0]],
        penalty: ConditionPenalty::WithDataTerm,
    }
}

fn oed_settings() -> OedSettings {
    OedSettings { img_side: 16, n_angles: 16, k_pick: 3, reg0: [-1.0, -2.0, -2.0], reg_only_baseline: true }
}

fn toy_settings() -> ToySettings {
    ToySettings { center: vec![1.0, -2.0, 0.5, 3.0, -1.5], y0: vec![0.0; 5], half_width: REG_BOX }
}

impl ExperimentConfig {
    /// Reference settings of `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            experiment: kind,
            schedules: Schedules { alpha0: 1.0, m0: 1, beta0: 0.01, eta_mode: EtaMode::Fixed(0.01), n_iters: 700 },
            mode: LowerMode::Inexact,
            lip1: 1.0,
            output: OutputChoice::Last,
            train: 16,
            validation: 50,
            seeds: Seeds { data: 1, validation: 2, algorithm: 0 },
            out_dir: None,
            denoise: denoise_settings(),
            oed: oed_settings(),
            toy: toy_settings(),
        };
        match kind {
            // lip1 of the smoothed objective, √n lip0/η with lip0 = 1.
            ExperimentKind::Denoise => ExperimentConfig { lip1: 3f64.sqrt() / 0.01, ..base },
            ExperimentKind::Oed => ExperimentConfig {
                schedules: Schedules { alpha0: 0.2, m0: 1, beta0: 0.1, eta_mode: EtaMode::InvSqrt(1.0), n_iters: 2000 },
                train: 32,
                ..base
            },
            ExperimentKind::ToyConvex => ExperimentConfig {
                schedules: Schedules { alpha0: 1.0, m0: 1, beta0: 0.01, eta_mode: EtaMode::Fixed(1.0), n_iters: 2000 },
                mode: LowerMode::Exact,
                lip1: 5f64.sqrt(),
                train: 1,
                validation: 1,
                ..base
            },
        }
    }

    /// Parses a TOML document over the defaults of its `experiment` key
    /// (or of `fallback` when the key is absent).
    pub fn from_toml_str(text: &str, fallback: Option<ExperimentKind>) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let kind = match user.get("experiment") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(HarnessError::Config(format!("`experiment` must be a string, got {other}"))),
            None => fallback.unwrap_or(ExperimentKind::Denoise),
        };
        let mut merged = toml::Table::try_from(ExperimentConfig::defaults(kind)).map_err(|e| HarnessError::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: ExperimentConfig =
            toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Option<ExperimentKind>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, fallback)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    /// Length of the upper-level variable.
    pub fn dim(&self) -> usize {
        match self.experiment {
            ExperimentKind::Denoise => 3,
            ExperimentKind::Oed => 3 + self.oed.n_angles,
            ExperimentKind::ToyConvex => self.toy.center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.schedules.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.lip1 > 0.0 && self.lip1.is_finite()) {
            return bad(format!("lip1 must be positive, got {}", self.lip1));
        }
        if self.train == 0 || self.validation == 0 {
            return bad("train and validation sizes must be at least 1".into());
        }
        let in_box = |y: &[f64]| y.iter().all(|v| v.abs() <= REG_BOX);
        match self.experiment {
            ExperimentKind::Denoise => {
                let d = &self.denoise;
                if d.n_x < 2 {
                    return bad(format!("n_x must be at least 2, got {}", d.n_x));
                }
                if !in_box(&d.y0) {
                    return bad(format!("y0 {:?} lies outside [-{REG_BOX}, {REG_BOX}]^3", d.y0));
                }
                if let Some(b) = d.baselines.iter().find(|b| !b.iter().all(|v| v.is_finite())) {
                    return bad(format!("baseline {b:?} is not finite"));
                }
            }
            ExperimentKind::Oed => {
                let o = &self.oed;
                if o.img_side < 8 {
                    return bad(format!("img_side must be at least 8, got {}", o.img_side));
                }
                if o.k_pick == 0 || o.k_pick > o.n_angles {
                    return bad(format!("need 1 <= k_pick <= n_angles, got k_pick={} n_angles={}", o.k_pick, o.n_angles));
                }
                if !in_box(&o.reg0) {
                    return bad(format!("reg0 {:?} lies outside [-{REG_BOX}, {REG_BOX}]^3", o.reg0));
                }
            }
            ExperimentKind::ToyConvex => {
                let t = &self.toy;
                if t.center.is_empty() || t.center.len() != t.y0.len() {
                    return bad("toy center and y0 must be non-empty and of equal length".into());
                }
                if !(t.half_width > 0.0) || t.y0.iter().any(|v| v.abs() > t.half_width) {
                    return bad("toy y0 must lie inside a box of positive half-width".into());
                }
            }
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}
