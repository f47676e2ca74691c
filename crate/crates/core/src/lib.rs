//! Derivative-free stochastic proximal-gradient method for bilevel learning.
//!
//! The upper-level objective is only available through noisy function values
//! `H(y, ξ)`, each of which requires (approximately) solving a strongly convex
//! lower-level problem. Gradients of the Gaussian-smoothed objective are
//! estimated from paired evaluations at `y` and `y + ηU`, and a proximal step
//! handles the non-smooth part of the upper level.
//!
//! Module map:
//!
//! * [`metric`] - Euclidean geometry with a diagonal Riesz map.
//! * [`smoothing`] - Gaussian smoothing and zeroth-order gradient estimators.
//! * [`prox`] - proximal operators and prox-gradient mappings.
//! * [`lower`] - certified gradient-descent solver for the lower level.
//! * [`algorithm`] - the outer loop, schedules, and output-index laws.
//! * [`stationarity`] - Lambert-W based smoothing radius and residual bounds.
//! * [`problems`] - denoising, tomography design and a convex toy instance.

pub mod algorithm;
pub mod error;
pub mod lower;
pub mod metric;
pub mod problems;
pub mod prox;
pub mod rng;
pub mod smoothing;
pub mod stationarity;

pub use error::{Error, Result};
pub use metric::{DualVector, Point, RieszMap};
