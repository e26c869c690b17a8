//! Explicit EM against the truncated scheme on the cubic example, started
//! far from the origin. Both runs read identical noise streams.

use stabilab::cli::preset;
use stabilab::model::{GridSpec, InitialSegment};
use stabilab::montecarlo::{ensemble_moments, EnsembleOptions};
use stabilab::schemes::SchemeConfig;
use stabilab::Error;

fn main() -> stabilab::Result<()> {
    let model = preset("example1")?;
    let grid = GridSpec::new(0.1, 10, 2000)?;
    let xi = InitialSegment::constant(vec![3.0, 3.0]);
    let options = EnsembleOptions::new(500, 42);

    for scheme in [SchemeConfig::em(), SchemeConfig::mtem(model.truncation)] {
        match ensemble_moments(&model.system, &scheme, &grid, &xi, &options) {
            Ok(s) => {
                println!("{}: {} of {} paths diverged, terminal V = {:.3e}", scheme.name(), s.n_diverged, s.n_paths, s.terminal_weighted());
                if let Some(first) = s.diverged.first() {
                    println!("  first: path {} at step {} ({})", first.path, first.step, first.reason);
                }
            }
            Err(Error::Estimation { step }) => println!("{}: every path diverged by step {step}", scheme.name()),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}
