//! A user-defined 1-d system with a time-varying delay: check the bound
//! matrices by sampling, certify, simulate.

use nalgebra::{dmatrix, DMatrix};
use stabilab::certify::{check_componentwise_bound, find_certificate};
use stabilab::model::{CoeffBounds, DelayFunction, GridSpec, InitialSegment, SddeSystem};
use stabilab::montecarlo::{ensemble_moments, fit_decay_rate, EnsembleOptions};
use stabilab::schemes::SchemeConfig;

fn main() -> stabilab::Result<()> {
    // dx = (-2x - x^3 + 0.5 y) dt + 0.5 x dB, tau(t) = 0.2 (1 + cos t) / 2
    let delay = DelayFunction::new(0.2, |t: f64| 0.1 * (1.0 + t.cos()))?;
    let system = SddeSystem::new(
        1,
        1,
        |x, y| vec![-2.0 * x[0] - x[0].powi(3) + 0.5 * y[0]],
        |x, _| DMatrix::from_element(1, 1, 0.5 * x[0]),
        delay,
    )?;
    // 2x f + g^2 <= (-4 + 0.5 + 0.25) x^2 + 0.5 y^2 using 2xy <= x^2 + y^2.
    let bounds = CoeffBounds::new(dmatrix![-3.25], dmatrix![0.5])?;

    let report = check_componentwise_bound(&system, &bounds, 10_000, 5.0, 1)?;
    println!("sampled bound violations: {}", report.violations.len());
    let cert = find_certificate(&bounds)?;
    let p = cert.certificate().expect("feasible").clone().with_decay_rate(&bounds, 0.2)?;
    println!("p = {:?}, beta = {:.4}", p.p, p.beta.unwrap());

    let grid = GridSpec::new(0.2, 20, 1000)?;
    let series = ensemble_moments(&system, &SchemeConfig::theta(0.5)?, &grid, &InitialSegment::new(|s| vec![1.0 + s]), &EnsembleOptions::new(500, 3).with_weights(p.p))?;
    let fit = fit_decay_rate(&series, 0.5)?;
    println!("fitted lambda = {:.4} (certified rate -beta = {:.4})", fit.lambda, -p.beta.unwrap());
    Ok(())
}
