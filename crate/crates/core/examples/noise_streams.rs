//! Counter-based Brownian increments: any (seed, path, step) can be
//! regenerated directly, so ensembles are reproducible under any scheduling.

use stabilab::montecarlo::{brownian_increments, NoiseStream};
use stabilab::schemes::NoiseSource;

fn main() -> stabilab::Result<()> {
    let stream = NoiseStream::new(42, 7, 3, 0.01)?;
    println!("step 1000, direct:     {:?}", brownian_increments(&stream, 1000));

    let mut sequential = stream.clone();
    let mut dw = [0.0; 3];
    for step in 0..=1000 {
        sequential.increment(step, &mut dw);
    }
    println!("step 1000, sequential: {dw:?}");

    let other_path = NoiseStream::new(42, 8, 3, 0.01)?;
    println!("path 8, step 1000:     {:?}", brownian_increments(&other_path, 1000));
    Ok(())
}
