//! Stability lab for stochastic differential delay equations.
//!
//! The crate simulates
//!
//! ```text
//! dx(t) = f(x(t), x(t - tau(t))) dt + g(x(t), x(t - tau(t))) dB(t)
//! ```
//!
//! with explicit Euler-Maruyama, the implicit theta-EM family and the
//! modified truncated EM scheme, and checks mean-square exponential
//! stability two ways: algebraically, from matrices `A`, `B` bounding
//! `2 x_i f_i + sum_l g_il^2` row by row, and empirically, by seeded Monte
//! Carlo estimates of the second moments.
//!
//! Modules, bottom up:
//!
//! - [`model`]: systems, delays, initial data, grids.
//! - [`certify`]: certificates `p > 0` with `(A + B) p < 0`, decay rates, diagnostics.
//! - [`truncation`]: the truncation radius and truncated coefficients.
//! - [`schemes`]: one-step maps and the path integrator.
//! - [`montecarlo`]: counter-based noise, ensemble moments, decay fits.
//! - [`cli`]: presets for the two worked examples, experiment configs, reports.

pub mod certify;
pub mod cli;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod schemes;
pub mod truncation;

pub use error::{Error, Result};
pub use model::{CoeffBounds, DelayFunction, GridSpec, InitialSegment, LipschitzKind, LipschitzModel, SddeSystem};
pub use schemes::{SchemeConfig, SchemeKind};
pub use truncation::TruncationConfig;
