//! Truncation radius and a sampled check that the truncated coefficients
//! keep the componentwise bound and grow at most linearly.

use stabilab::cli::preset;
use stabilab::truncation::{check_truncation_lemmas, h_of_delta, truncated_drift, TruncationConfig};

fn main() -> stabilab::Result<()> {
    let model = preset("example1")?;
    let lipschitz = model.system.lipschitz.expect("preset carries a Lipschitz model");
    let cfg = TruncationConfig::new(1.0, 0.2, 1.0, Some(&lipschitz))?;

    for delta in [0.1, 0.01, 0.001] {
        println!("h({delta}) = {:.4}", h_of_delta(&cfg, delta)?);
    }

    let h = h_of_delta(&cfg, 0.01)?;
    let far = [50.0, 0.0];
    println!("f at {far:?}: {:?}", model.system.eval_drift(&far, &[0.0, 0.0])?);
    println!("f_delta at {far:?}: {:?}", truncated_drift(&model.system, h, &far, &[0.0, 0.0])?);

    let report = check_truncation_lemmas(&model.system, &model.bounds, &cfg, 0.01, 10_000, 42)?;
    println!(
        "{} samples, {} outside the ball: {} bound and {} growth violations",
        report.n_samples,
        report.n_outside,
        report.bound_violations.len(),
        report.growth_violations.len()
    );
    Ok(())
}
