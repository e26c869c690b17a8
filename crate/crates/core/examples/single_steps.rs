//! One step of each scheme on a scalar cubic drift, from the same state and increment.

use nalgebra::DMatrix;
use stabilab::model::{DelayFunction, SddeSystem};
use stabilab::schemes::{em_step, mtem_step, theta_step_detailed, PathState};
use stabilab::truncation::TruncationConfig;

fn main() -> stabilab::Result<()> {
    let system = SddeSystem::new(
        1,
        1,
        |x, y| vec![-x[0].powi(3) + 0.1 * y[0]],
        |x, _| DMatrix::from_element(1, 1, 0.5 * x[0]),
        DelayFunction::constant(0.1)?,
    )?;
    let mut history = vec![vec![1.0]; 10];
    history.push(vec![4.0]);
    let state = PathState::new(history)?;
    let (delta, dw) = (0.01, [0.05]);

    println!("EM:    {:?}", em_step(&system, &state, delta, &dw)?);
    for theta in [0.5, 1.0] {
        let sol = theta_step_detailed(&system, &state, theta, delta, &dw, 1e-12, 100)?;
        println!("theta = {theta}: {:?} (residual {:.1e}, {} iterations)", sol.z, sol.residual, sol.iterations);
    }
    let cfg = TruncationConfig::new(0.2, 0.5, 1.0, None)?;
    println!("MTEM:  {:?}", mtem_step(&system, &state, &cfg, delta, &dw)?);
    Ok(())
}
