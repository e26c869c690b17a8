//! Ensemble second moments of geometric Brownian motion under EM against
//! the exact recursion `E X_{k+1}^2 = ((1 + a delta)^2 + sigma^2 delta) E X_k^2`.

use nalgebra::DMatrix;
use stabilab::model::{DelayFunction, GridSpec, InitialSegment, SddeSystem};
use stabilab::montecarlo::{ensemble_moments, EnsembleOptions};
use stabilab::schemes::SchemeConfig;

fn main() -> stabilab::Result<()> {
    let (a, sigma, delta) = (-1.0, 0.5, 0.01);
    let system = SddeSystem::new(
        1,
        1,
        move |x, _| vec![a * x[0]],
        move |x, _| DMatrix::from_element(1, 1, sigma * x[0]),
        DelayFunction::constant(delta)?,
    )?;
    let grid = GridSpec::new(delta, 1, 100)?;
    let series = ensemble_moments(&system, &SchemeConfig::em(), &grid, &InitialSegment::constant(vec![1.0]), &EnsembleOptions::new(10_000, 42))?;

    let growth = (1.0 + a * delta).powi(2) + sigma * sigma * delta;
    for k in (0..=100).step_by(20) {
        let row = series.row(k);
        let exact = growth.powi(k as i32);
        let est = series.component_moments[0][row];
        let se = series.component_se[0][row];
        println!("k = {k:3}: estimate {est:.6} +/- {se:.6}, exact {exact:.6}, z = {:+.2}", (est - exact) / se.max(1e-300));
    }
    Ok(())
}
