//! Modified truncation of the coefficients onto a ball of radius `h(delta)`.
//!
//! Outside the ball the arguments are pulled radially back onto its surface
//! and the result is scaled up by the same factor, so `f_delta` and
//! `g_delta` stay unbounded but grow at most linearly.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::certify::{bound_terms, sample_ball, Violation, BOUND_SLACK};
use crate::error::{Error, Result};
use crate::model::{euclidean_norm, CoeffBounds, LipschitzKind, LipschitzModel, SddeSystem};

/// `h(delta) = h0 * delta^(-gamma)` on `(0, delta_star]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationConfig {
    pub h0: f64,
    pub gamma: f64,
    pub delta_star: f64,
}

impl TruncationConfig {
    /// Rejects `gamma >= 1/(2q)` for a polynomial Lipschitz model, since
    /// then `L_{h(delta)}^2 delta` does not vanish as `delta -> 0`.
    pub fn new(h0: f64, gamma: f64, delta_star: f64, lipschitz: Option<&LipschitzModel>) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(h0) && positive(gamma) && positive(delta_star)) {
            return Err(Error::input(format!(
                "h0, gamma, delta_star must be positive, got {h0}, {gamma}, {delta_star}"
            )));
        }
        if let Some(LipschitzModel { kind: LipschitzKind::Polynomial { q, .. }, .. }) = lipschitz {
            if *q > 0.0 && gamma >= 1.0 / (2.0 * q) {
                return Err(Error::Configuration(format!(
                    "gamma = {gamma} must be < 1/(2q) = {} for a degree-{q} Lipschitz model",
                    1.0 / (2.0 * q)
                )));
            }
        }
        Ok(Self { h0, gamma, delta_star })
    }
}

pub fn h_of_delta(config: &TruncationConfig, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= config.delta_star) {
        return Err(Error::input(format!("delta = {delta} outside (0, {}]", config.delta_star)));
    }
    Ok(config.h0 * delta.powf(-config.gamma))
}

/// Values that can be scaled by a positive factor.
pub trait Rescale {
    fn rescale(self, factor: f64) -> Self;
}

impl Rescale for f64 {
    fn rescale(self, factor: f64) -> Self {
        self * factor
    }
}

impl Rescale for Vec<f64> {
    fn rescale(mut self, factor: f64) -> Self {
        self.iter_mut().for_each(|v| *v *= factor);
        self
    }
}

impl Rescale for DMatrix<f64> {
    fn rescale(self, factor: f64) -> Self {
        self * factor
    }
}

/// `h / (|x| v |y|)` when the pair lies strictly outside the ball, else `None`.
pub fn truncation_factor(h: f64, x: &[f64], y: &[f64]) -> Option<f64> {
    let r = euclidean_norm(x).max(euclidean_norm(y));
    (r > h).then(|| h / r)
}

/// `f_h(x, y)`: identity inside the ball, `s^{-1} f(s x, s y)` with
/// `s = h / (|x| v |y|)` outside. The boundary belongs to the identity branch.
pub fn truncate_pair<T: Rescale>(f: impl FnOnce(&[f64], &[f64]) -> T, h: f64, x: &[f64], y: &[f64]) -> T {
    match truncation_factor(h, x, y) {
        None => f(x, y),
        Some(s) => {
            let sx: Vec<f64> = x.iter().map(|v| v * s).collect();
            let sy: Vec<f64> = y.iter().map(|v| v * s).collect();
            f(&sx, &sy).rescale(1.0 / s)
        }
    }
}

impl<T: Rescale> Rescale for Result<T> {
    fn rescale(self, factor: f64) -> Self {
        self.map(|v| v.rescale(factor))
    }
}

pub fn truncated_drift(system: &SddeSystem, h: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    truncate_pair(|a: &[f64], b: &[f64]| system.eval_drift(a, b), h, x, y)
}

pub fn truncated_diffusion(system: &SddeSystem, h: f64, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
    truncate_pair(|a: &[f64], b: &[f64]| system.eval_diffusion(a, b), h, x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearGrowthViolation {
    pub sample: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub norm: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationReport {
    pub h: f64,
    /// `L_{h(delta)}`.
    pub lipschitz_h: f64,
    pub n_samples: usize,
    pub n_outside: usize,
    /// The componentwise bound evaluated on `f_delta`, `g_delta`.
    pub bound_violations: Vec<Violation>,
    /// `|f_delta| v |g_delta| <= L_{h(delta)} (|x| + |y|)`.
    pub growth_violations: Vec<LinearGrowthViolation>,
}

impl TruncationReport {
    pub fn passed(&self) -> bool {
        self.bound_violations.is_empty() && self.growth_violations.is_empty()
    }
}

/// Sample check that the truncated coefficients keep the componentwise
/// bound and grow linearly with constant `L_{h(delta)}`.
///
/// Even-indexed samples lie inside the truncation ball, odd-indexed ones
/// outside it with `|x| v |y|` up to `10 h`.
pub fn check_truncation_lemmas(
    system: &SddeSystem,
    bounds: &CoeffBounds,
    config: &TruncationConfig,
    delta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<TruncationReport> {
    let lipschitz = system
        .lipschitz
        .ok_or_else(|| Error::Configuration("truncation checks need a Lipschitz model on the system".into()))?;
    let d = system.dim();
    if bounds.dim() != d {
        return Err(Error::input(format!("bounds are {0}x{0}, system has d = {1}", bounds.dim(), d)));
    }
    if n_samples == 0 {
        return Err(Error::input("n_samples must be >= 1"));
    }
    let h = h_of_delta(config, delta)?;
    let lipschitz_h = lipschitz.local_constant(h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TruncationReport {
        h,
        lipschitz_h,
        n_samples,
        n_outside: 0,
        bound_violations: Vec::new(),
        growth_violations: Vec::new(),
    };
    for sample in 0..n_samples {
        let (x, y) = if sample % 2 == 0 {
            (sample_ball(&mut rng, d, h), sample_ball(&mut rng, d, h))
        } else {
            let target = h * (1.0 + 9.0 * rng.random::<f64>());
            let mut z = sample_ball(&mut rng, 2 * d, 1.0);
            let y = z.split_off(d);
            let r = euclidean_norm(&z).max(euclidean_norm(&y));
            let s = if r > 0.0 { target / r } else { 0.0 };
            (z.rescale(s), y.rescale(s))
        };
        if truncation_factor(h, &x, &y).is_some() {
            report.n_outside += 1;
        }
        let f = truncated_drift(system, h, &x, &y)?;
        let g = truncated_diffusion(system, h, &x, &y)?;
        if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { sample, what: format!("truncated f or g non-finite at x = {x:?}, y = {y:?}") });
        }
        for (row, term) in bound_terms(bounds, &x, &y, &f, &g).into_iter().enumerate() {
            if !term.holds(BOUND_SLACK) {
                report.bound_violations.push(Violation {
                    sample,
                    x: x.clone(),
                    y: y.clone(),
                    row,
                    lhs: term.lhs,
                    rhs: term.rhs,
                });
            }
        }
        let norm = euclidean_norm(&f).max(g.norm());
        let bound = lipschitz_h * (euclidean_norm(&x) + euclidean_norm(&y));
        if norm > bound * (1.0 + BOUND_SLACK) {
            report.growth_violations.push(LinearGrowthViolation { sample, x, y, norm, bound });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use crate::model::DelayFunction;

    fn cubic(x: &[f64], _: &[f64]) -> f64 {
        x[0].powi(3)
    }

    #[test]
    fn power_law_radius() {
        let c = TruncationConfig::new(1.0, 0.25, 1.0, None).unwrap();
        assert_relative_eq!(h_of_delta(&c, 1.0 / 16.0).unwrap(), 2.0, epsilon = 1e-14);
        let c = TruncationConfig::new(5.0, 0.37, 2.0, None).unwrap();
        assert_eq!(h_of_delta(&c, 1.0).unwrap(), 5.0);
        assert!(h_of_delta(&c, 0.01).unwrap() > h_of_delta(&c, 0.02).unwrap());
        assert!(h_of_delta(&c, 2.5).is_err());
        assert!(h_of_delta(&c, 0.0).is_err());
    }

    #[test]
    fn gamma_admissibility() {
        let poly = LipschitzModel::polynomial(2.0, 2.0).unwrap();
        assert!(TruncationConfig::new(1.0, 0.25, 1.0, Some(&poly)).is_err());
        assert!(TruncationConfig::new(1.0, 0.2, 1.0, Some(&poly)).is_ok());
        let global = LipschitzModel::global(3.0).unwrap();
        assert!(TruncationConfig::new(1.0, 2.0, 1.0, Some(&global)).is_ok());
        assert!(TruncationConfig::new(0.0, 0.1, 1.0, None).is_err());
    }

    #[test]
    fn cubic_is_truncated_to_linear_growth() {
        assert_eq!(truncate_pair(cubic, 2.0, &[4.0], &[0.0]), 16.0);
        assert_eq!(truncate_pair(cubic, 2.0, &[2.0], &[0.0]), 8.0);
        assert_eq!(truncate_pair(cubic, 2.0, &[-1.0], &[2.0]), -1.0);
    }

    #[test]
    fn missing_lipschitz_model_is_configuration_error() {
        let system = SddeSystem::new(
            1,
            1,
            |x, _| vec![-x[0]],
            |_, _| DMatrix::zeros(1, 1),
            DelayFunction::constant(1.0).unwrap(),
        )
        .unwrap();
        let bounds = CoeffBounds::from_rows(&[vec![-2.0]], &[vec![0.0]]).unwrap();
        let config = TruncationConfig::new(1.0, 0.1, 1.0, None).unwrap();
        let r = check_truncation_lemmas(&system, &bounds, &config, 0.01, 10, 0);
        assert!(matches!(r, Err(Error::Configuration(_))));
    }

    proptest! {
        #[test]
        fn linear_maps_pass_through(
            a in -5.0f64..5.0, b in -5.0f64..5.0,
            x in -50.0f64..50.0, y in -50.0f64..50.0, h in 0.1f64..10.0,
        ) {
            let out = truncate_pair(|x: &[f64], y: &[f64]| a * x[0] + b * y[0], h, &[x], &[y]);
            let direct = a * x + b * y;
            prop_assert!((out - direct).abs() <= 1e-12 * (1.0 + a.abs() * x.abs() + b.abs() * y.abs()));
        }

        #[test]
        fn scaling_identity_and_inner_radius(
            x in prop::collection::vec(-20.0f64..20.0, 3),
            y in prop::collection::vec(-20.0f64..20.0, 3),
            h in 0.5f64..5.0,
        ) {
            if let Some(s) = truncation_factor(h, &x, &y) {
                let mut seen = 0.0;
                let out = truncate_pair(|a: &[f64], b: &[f64]| {
                    seen = euclidean_norm(a).max(euclidean_norm(b));
                    a.iter().map(|v| v * v * v).sum::<f64>() + b[0] * b[1]
                }, h, &x, &y);
                prop_assert!((seen - h).abs() <= 1e-12 * h);
                let direct = (x.iter().map(|v| (s * v).powi(3)).sum::<f64>() + s * y[0] * s * y[1]) / s;
                prop_assert!((out - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            }
        }
    }
}
