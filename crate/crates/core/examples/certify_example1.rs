//! Certificate search on the first worked example.
//!
//! The aggregated Khasminskii test fails, but the componentwise matrices
//! still admit a positive `p` with `(A + B) p < 0`.

use stabilab::certify::{find_certificate, growth_constant, khasminskii_diagnostic, verify_certificate};
use stabilab::cli::preset;

fn main() -> stabilab::Result<()> {
    let model = preset("example1")?;
    let bounds = &model.bounds;

    let k = khasminskii_diagnostic(bounds);
    println!("column sums of A: {:?}", k.column_sums_a);
    println!("Khasminskii possibly feasible: {}", k.possibly_feasible);
    println!("growth constant K = {:.4}", growth_constant(bounds));

    let search = find_certificate(bounds)?;
    println!("spectral abscissa of A + B: {:.8}", search.abscissa());
    if let Some(cert) = search.certificate() {
        let cert = cert.clone().with_decay_rate(bounds, model.system.delay().tau_max())?;
        println!("p = {:?}", cert.p);
        println!("margins = {:?}", cert.margins);
        println!("beta = {:.6}", cert.beta.unwrap());
    }

    for p in [[500.0, 1.0], [110.0, 1.0]] {
        let check = verify_certificate(bounds, &p)?;
        println!("p = {p:?}: margins {:?}, feasible {}", check.margins, check.feasible);
    }
    Ok(())
}
