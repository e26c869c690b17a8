//! Experiment configuration files.
//!
//! UTF-8 JSON. Every real-valued field takes a JSON number, a decimal
//! string (`"0.0798"`) or a rational string (`"399/5000"`).
//!
//! ```json
//! {
//!   "system": "example1",
//!   "scheme": { "kind": "theta", "theta": "1/2" },
//!   "grid": { "m_bar": 10, "n_steps": 2000 },
//!   "initial": ["1", "1"],
//!   "n_paths": 500,
//!   "seed": 42,
//!   "window": 0.5,
//!   "out": "out"
//! }
//! ```
//!
//! An inline system replaces the preset name with linear coefficients:
//!
//! ```json
//! "system": {
//!   "drift_x": [["-1", "0"], ["0", "-1"]],
//!   "drift_y": [["0.1", "0"], ["0", "0.1"]],
//!   "noise": ["0.5", "0.5"],
//!   "delay": { "kind": "abs_sin", "tau": "0.1" },
//!   "a": [["-1.75", "0"], ["0", "-1.75"]],
//!   "b": [["0.1", "0"], ["0", "0.1"]]
//! }
//! ```
//!
//! giving `f = Cx x + Cy y` and `g = diag(noise_i x_i)`. Delay kinds are
//! `constant` (`tau`), `one_minus_abs_sin` (`tau (1 - |sin t|)`) and `abs_sin`
//! (`tau |sin t|`).

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer};

use super::preset::{preset, Preset};
use crate::certify::linear_growth_constant;
use crate::error::{Error, Result};
use crate::model::{matrix_from_rows, CoeffBounds, DelayFunction, LipschitzModel, SddeSystem};
use crate::schemes::{SchemeConfig, SchemeKind};
use crate::truncation::TruncationConfig;

/// Parses `"3"`, `"-0.25"`, `"1e-4"` or `"399/5000"`.
pub fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::input(format!("not a number: {s:?}")));
    let v = match s.split_once('/') {
        Some((num, den)) => {
            let den = parse(den)?;
            if den == 0.0 {
                return Err(Error::input(format!("zero denominator in {s:?}")));
            }
            parse(num)? / den
        }
        None => parse(s)?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::input(format!("not a finite number: {s:?}")))
    }
}

/// A real read from a JSON number or a string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(de)? {
            Repr::Number(v) => Ok(Real(v)),
            Repr::Text(s) => parse_number(&s).map(Real).map_err(serde::de::Error::custom),
        }
    }
}

fn reals(v: &[Real]) -> Vec<f64> {
    v.iter().map(|r| r.0).collect()
}

fn rows(v: &[Vec<Real>]) -> Vec<Vec<f64>> {
    v.iter().map(|r| reals(r)).collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Preset(String),
    Inline(InlineSystem),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    pub drift_x: Vec<Vec<Real>>,
    pub drift_y: Vec<Vec<Real>>,
    pub noise: Vec<Real>,
    pub delay: DelaySpec,
    pub a: Vec<Vec<Real>>,
    pub b: Vec<Vec<Real>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelaySpec {
    Constant { tau: Real },
    OneMinusAbsSin { tau: Real },
    AbsSin { tau: Real },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeSpec {
    Em,
    Theta {
        theta: Real,
        epsilon: Option<Real>,
    },
    Mtem {
        h0: Option<Real>,
        gamma: Option<Real>,
        delta_star: Option<Real>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFields {
    pub m_bar: Option<usize>,
    pub n_steps: Option<usize>,
}

/// The file as written; every field optional so flags can fill gaps.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub system: Option<SystemSpec>,
    pub scheme: Option<SchemeSpec>,
    pub grid: Option<GridFields>,
    pub initial: Option<Vec<Real>>,
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub window: Option<Real>,
    /// Reference weights to check alongside the computed certificate.
    pub reference_p: Option<Vec<Real>>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))
    }
}

/// Scheme choice before it is bound to a system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchemeChoice {
    Em,
    Theta { theta: f64, epsilon: Option<f64> },
    Mtem { h0: Option<f64>, gamma: Option<f64>, delta_star: Option<f64> },
}

impl From<&SchemeSpec> for SchemeChoice {
    fn from(s: &SchemeSpec) -> Self {
        match s {
            SchemeSpec::Em => SchemeChoice::Em,
            SchemeSpec::Theta { theta, epsilon } => SchemeChoice::Theta { theta: theta.0, epsilon: epsilon.map(|e| e.0) },
            SchemeSpec::Mtem { h0, gamma, delta_star } => SchemeChoice::Mtem {
                h0: h0.map(|v| v.0),
                gamma: gamma.map(|v| v.0),
                delta_star: delta_star.map(|v| v.0),
            },
        }
    }
}

/// A fully resolved run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: Preset,
    pub scheme: SchemeConfig,
    /// Only used by theta-EM; `None` picks a default below the admissible bound.
    pub epsilon: Option<f64>,
    pub m_bar: usize,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub window: f64,
    pub out: PathBuf,
}

pub const DEFAULT_M_BAR: usize = 10;
pub const DEFAULT_STEPS: usize = 2000;
pub const DEFAULT_PATHS: usize = 500;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_WINDOW: f64 = 0.5;

/// Values supplied on the command line; these win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub scheme: Option<SchemeChoice>,
    pub m_bar: Option<usize>,
    pub n_steps: Option<usize>,
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub window: Option<f64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn resolve(file: ConfigFile, overrides: Overrides) -> Result<Self> {
        let mut model = match (overrides.preset.as_deref(), &file.system) {
            (Some(name), _) => preset(name)?,
            (None, Some(SystemSpec::Preset(name))) => preset(name)?,
            (None, Some(SystemSpec::Inline(spec))) => inline_system(spec)?,
            (None, None) => return Err(Error::input("no system given: pass --preset or a config with \"system\"")),
        };
        if let Some(initial) = &file.initial {
            let v = reals(initial);
            if v.len() != model.system.dim() {
                return Err(Error::input(format!("initial value has length {}, system has d = {}", v.len(), model.system.dim())));
            }
            model.initial_value = v;
        }
        if let Some(p) = &file.reference_p {
            model.reference_p = Some(reals(p));
        }
        let choice = overrides
            .scheme
            .or(file.scheme.as_ref().map(SchemeChoice::from))
            .unwrap_or(SchemeChoice::Mtem { h0: None, gamma: None, delta_star: None });
        let (scheme, epsilon) = match choice {
            SchemeChoice::Em => (SchemeConfig::em(), None),
            SchemeChoice::Theta { theta, epsilon } => (SchemeConfig::theta(theta)?, epsilon),
            SchemeChoice::Mtem { h0, gamma, delta_star } => {
                let d = model.truncation;
                let cfg = TruncationConfig::new(
                    h0.unwrap_or(d.h0),
                    gamma.unwrap_or(d.gamma),
                    delta_star.unwrap_or(d.delta_star),
                    model.system.lipschitz.as_ref(),
                )?;
                (SchemeConfig::new(SchemeKind::Mtem(cfg))?, None)
            }
        };
        let grid = file.grid.as_ref();
        let n_paths = overrides.n_paths.or(file.n_paths).unwrap_or(DEFAULT_PATHS);
        if n_paths == 0 {
            return Err(Error::input("n_paths must be at least 1"));
        }
        let n_steps = overrides.n_steps.or(grid.and_then(|g| g.n_steps)).unwrap_or(DEFAULT_STEPS);
        if n_steps == 0 {
            return Err(Error::input("n_steps must be at least 1"));
        }
        Ok(Self {
            model,
            scheme,
            epsilon,
            m_bar: overrides.m_bar.or(grid.and_then(|g| g.m_bar)).unwrap_or(DEFAULT_M_BAR),
            n_steps,
            n_paths,
            seed: overrides.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            window: overrides.window.or(file.window.map(|w| w.0)).unwrap_or(DEFAULT_WINDOW),
            out: overrides.out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}

fn inline_system(spec: &InlineSystem) -> Result<Preset> {
    let d = spec.drift_x.len();
    let cx = matrix_from_rows(&rows(&spec.drift_x))?;
    let cy = matrix_from_rows(&rows(&spec.drift_y))?;
    if d == 0 || !cx.is_square() || cy.shape() != cx.shape() || spec.noise.len() != d {
        return Err(Error::input(format!("inline system: drift_x, drift_y must be {d}x{d} and noise of length {d}")));
    }
    let bounds = CoeffBounds::from_rows(&rows(&spec.a), &rows(&spec.b))?;
    if bounds.dim() != d {
        return Err(Error::input("inline system: a, b must match the drift dimension"));
    }
    let delay = match spec.delay {
        DelaySpec::Constant { tau } => DelayFunction::constant(tau.0)?,
        DelaySpec::OneMinusAbsSin { tau } => {
            let t0 = tau.0;
            DelayFunction::new(t0, move |t: f64| t0 * (1.0 - t.sin().abs()))?
        }
        DelaySpec::AbsSin { tau } => {
            let t0 = tau.0;
            DelayFunction::new(t0, move |t: f64| t0 * t.sin().abs())?
        }
    };
    let noise = reals(&spec.noise);
    let k = linear_growth_constant(&cx, &cy)?.k;
    let lipschitz = LipschitzModel::global(k)?.with_one_sided(k)?.with_drift_linear_k(k)?;
    let (dx, dy) = (cx.clone(), cy.clone());
    let system = SddeSystem::new(
        d,
        d,
        move |x, y| (0..d).map(|i| (0..d).map(|j| dx[(i, j)] * x[j] + dy[(i, j)] * y[j]).sum()).collect(),
        move |x, _| DMatrix::from_fn(d, d, |i, j| if i == j { noise[i] * x[i] } else { 0.0 }),
        delay,
    )?
    .with_lipschitz(lipschitz)
    .with_claimed_bounds(bounds.clone())?;
    Ok(Preset {
        name: "inline".into(),
        system,
        bounds,
        initial_value: vec![1.0; d],
        reference_p: None,
        reference_epsilon: None,
        linear_drift: Some((cx, cy)),
        truncation: TruncationConfig::new(1.0, 0.2, 1.0, Some(&lipschitz))?,
    })
}
