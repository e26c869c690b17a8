//! Conditions for the implicit scheme on the second example: the epsilon
//! certificate (any theta) and the linear-growth step margins (theta <= 1/2).

use stabilab::certify::{
    check_theta_condition, epsilon_upper_bound, find_theta_certificate, linear_growth_constant, theta_low_step_margins,
};
use stabilab::cli::preset;

fn main() -> stabilab::Result<()> {
    let model = preset("example2")?;
    let bounds = &model.bounds;

    let bound = epsilon_upper_bound(bounds)?;
    let eps = 0.998 * bound;
    println!("epsilon must stay below {bound}; using {eps}");
    match find_theta_certificate(bounds, eps)?.certificate() {
        Some(c) => println!("epsilon certificate p = {:?}", c.p),
        None => println!("no epsilon certificate"),
    }
    let reference = check_theta_condition(bounds, &[500.0, 1.0], 0.499)?;
    println!("p = (500, 1) under epsilon = 0.499: margins {:?}", reference.margins);

    let (cx, cy) = model.linear_drift.as_ref().expect("linear drift");
    let growth = linear_growth_constant(cx, cy)?;
    println!("row sums {:?}, K = {:.6}", growth.row_sums, growth.k);
    for theta in [0.0, 0.25, 0.5] {
        println!("theta = {theta}: step margins {:?}", theta_low_step_margins(bounds, growth.k, theta, 0.01));
    }
    Ok(())
}
