//! The two worked 2-d examples.

use nalgebra::{dmatrix, DMatrix};

use crate::certify::linear_growth_constant;
use crate::error::{Error, Result};
use crate::model::{CoeffBounds, DelayFunction, InitialSegment, LipschitzModel, SddeSystem};
use crate::truncation::TruncationConfig;

pub const PRESET_NAMES: [&str; 2] = ["example1", "example2"];

/// Delay bound shared by both examples.
pub const TAU: f64 = 0.1;

/// A ready-to-run system with its bound matrices and defaults.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: String,
    pub system: SddeSystem,
    pub bounds: CoeffBounds,
    pub initial_value: Vec<f64>,
    /// Weight vector quoted alongside the example; checked, not trusted.
    pub reference_p: Option<Vec<f64>>,
    pub reference_epsilon: Option<f64>,
    /// `(Cx, Cy)` when the drift is linear, `f = Cx x + Cy y`.
    pub linear_drift: Option<(DMatrix<f64>, DMatrix<f64>)>,
    pub truncation: TruncationConfig,
}

impl Preset {
    pub fn initial(&self) -> InitialSegment {
        InitialSegment::constant(self.initial_value.clone())
    }
}

/// `A = [[-399/5000, 2], [1/5^6, -399/5000]]`, `B = 1e-4` everywhere.
pub fn example_bounds() -> CoeffBounds {
    let a = dmatrix![-399.0 / 5000.0, 2.0; 1.0 / 15625.0, -399.0 / 5000.0];
    CoeffBounds::new(a, DMatrix::from_element(2, 2, 1e-4)).expect("example matrices are Metzler")
}

fn coupling() -> f64 {
    38f64.sqrt() / 625.0
}

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "example1" => example1(),
        "example2" => example2(),
        other => Err(Error::input(format!("unknown preset {other:?}; valid names: {}", PRESET_NAMES.join(", ")))),
    }
}

fn example1() -> Result<Preset> {
    let c21 = coupling();
    let s2 = 0.4f64.sqrt();
    let delay = DelayFunction::new(TAU, |t: f64| TAU * (1.0 - t.sin().abs()))?;
    // The cubic drift and quadratic noise are locally Lipschitz with
    // L_r <= 2 (1 + r^2); the drift is one-sided Lipschitz with L = 1.
    let lipschitz = LipschitzModel::polynomial(2.0, 2.0)?.with_one_sided(1.0)?;
    let system = SddeSystem::new(
        2,
        2,
        move |x, y| {
            let tail = 1e-4 * (y[0] + y[1]);
            vec![
                -0.2 * x[0] - (2.0 / 9.0) * x[0].powi(3) + 0.8 * x[1] + tail,
                c21 * x[0] - x[1] + tail,
            ]
        },
        move |x, _| DMatrix::from_diagonal(&nalgebra::dvector![(2.0 / 3.0) * x[0] * x[0], s2 * x[1]]),
        delay,
    )?
    .with_lipschitz(lipschitz)
    .with_claimed_bounds(example_bounds())?;
    Ok(Preset {
        name: "example1".into(),
        system,
        bounds: example_bounds(),
        initial_value: vec![1.0, 1.0],
        reference_p: Some(vec![500.0, 1.0]),
        reference_epsilon: Some(499.0 / 1000.0),
        linear_drift: None,
        truncation: TruncationConfig::new(1.0, 0.2, 1.0, Some(&lipschitz))?,
    })
}

fn example2() -> Result<Preset> {
    let c21 = coupling();
    let s = 10f64.sqrt() / 5.0;
    let cx = dmatrix![-0.4, 0.8; c21, -1.0];
    let cy = DMatrix::from_element(2, 2, 1e-4);
    let k = linear_growth_constant(&cx, &cy)?.k;
    let lipschitz = LipschitzModel::global(k)?.with_one_sided(k)?.with_drift_linear_k(k)?;
    let delay = DelayFunction::new(TAU, |t: f64| TAU * t.sin().abs())?;
    let (dx, dy) = (cx.clone(), cy.clone());
    let system = SddeSystem::new(
        2,
        2,
        move |x, y| {
            (0..2)
                .map(|i| dx[(i, 0)] * x[0] + dx[(i, 1)] * x[1] + dy[(i, 0)] * y[0] + dy[(i, 1)] * y[1])
                .collect()
        },
        move |x, _| DMatrix::from_diagonal(&nalgebra::dvector![s * x[0], s * x[1]]),
        delay,
    )?
    .with_lipschitz(lipschitz)
    .with_claimed_bounds(example_bounds())?;
    Ok(Preset {
        name: "example2".into(),
        system,
        bounds: example_bounds(),
        initial_value: vec![1.0, 1.0],
        reference_p: Some(vec![500.0, 1.0]),
        reference_epsilon: Some(499.0 / 1000.0),
        linear_drift: Some((cx, cy)),
        truncation: TruncationConfig::new(1.0, 0.2, 1.0, Some(&lipschitz))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn example1_drift_values() {
        let p = preset("example1").unwrap();
        let f = p.system.eval_drift(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(f[0], 0.37778, epsilon = 1e-5);
        assert_relative_eq!(f[1], -0.99014, epsilon = 1e-5);
    }

    #[test]
    fn example2_diffusion_values() {
        let p = preset("example2").unwrap();
        let g = p.system.eval_diffusion(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(g[(0, 0)], 0.63246, epsilon = 1e-5);
        assert_relative_eq!(g[(1, 1)], 0.63246, epsilon = 1e-5);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn example2_delay_vanishes_at_zero() {
        let p = preset("example2").unwrap();
        assert_eq!(p.system.delay().evaluate(0.0), 0.0);
    }

    #[test]
    fn unknown_name_lists_valid_ones() {
        let err = preset("nope").unwrap_err();
        assert!(matches!(err, Error::Input(ref m) if m.contains("example1") && m.contains("example2")));
    }
}
