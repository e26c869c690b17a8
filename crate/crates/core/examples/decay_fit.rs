//! Mean-square decay rate of the first example under backward theta-EM,
//! plus the pathwise exponent of a single trajectory.

use stabilab::certify::find_certificate;
use stabilab::cli::preset;
use stabilab::model::GridSpec;
use stabilab::montecarlo::{as_exponent, ensemble_moments, fit_decay_rate, EnsembleOptions, NoiseStream};
use stabilab::schemes::{integrate_path, SchemeConfig};

fn main() -> stabilab::Result<()> {
    let model = preset("example1")?;
    let p = find_certificate(&model.bounds)?.certificate().expect("feasible").p.clone();
    let grid = GridSpec::new(0.1, 10, 2000)?;
    let scheme = SchemeConfig::theta(1.0)?;

    let series = ensemble_moments(&model.system, &scheme, &grid, &model.initial(), &EnsembleOptions::new(1000, 42).with_weights(p))?;
    let fit = fit_decay_rate(&series, 0.5)?;
    println!("V(0) = {:.4e}, V(T) = {:.4e}", series.initial_weighted(), series.terminal_weighted());
    println!("lambda = {:.5} +/- {:.5} from {} points", fit.lambda, fit.standard_error, fit.n_points);

    let mut noise = NoiseStream::new(42, 0, 2, grid.delta)?;
    let path = integrate_path(&model.system, &scheme, &grid, &model.initial(), &mut noise)?;
    println!("terminal exponents of path 0: {:?}", as_exponent(&path, &grid)?);
    Ok(())
}
