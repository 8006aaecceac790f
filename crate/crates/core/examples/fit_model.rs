//! Maximum likelihood fit of a one-factor model and the eigenvalues of
//! `U Gamma` that drive every p-value approximation.

use eigenfit::analysis::analyze;
use eigenfit::datagen::vale_maurelli_sample;
use eigenfit::model::ModelSpec;

fn main() -> eigenfit::Result<()> {
    let model = ModelSpec::fixture("one_factor_5")?;
    let sigma = model.implied_cov(&model.start_values())?;
    let data = vale_maurelli_sample(&sigma, 1.0, 7.0, 800, 42)?;

    let a = analyze(&model, &data, &[])?;
    println!(
        "converged {} after {} iterations, |grad| = {:.2e}",
        a.fit.converged, a.fit.iterations, a.fit.gradient_norm
    );
    for (name, v) in model.param_names().iter().zip(a.fit.theta_hat.as_slice()) {
        println!("  {name:<6} {v:>8.4}");
    }
    println!("T = {:.4} on {} degrees of freedom", a.fit.t_stat, a.dof);
    println!("eigenvalues of U Gamma: {:.3?}", a.spectrum()?.as_slice());
    println!(
        "tr(U Gamma) = {:.4}, tr((U Gamma)^2) = {:.4}",
        a.traces.0, a.traces.1
    );
    Ok(())
}
