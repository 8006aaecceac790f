//! Difference test between a model and a nested model with 11 extra
//! equality constraints.

use eigenfit::analysis::analyze_nested;
use eigenfit::datagen::vale_maurelli_sample;
use eigenfit::model::ModelSpec;
use eigenfit::pvalue::Method;

fn main() -> eigenfit::Result<()> {
    let parent = ModelSpec::fixture("bollen_m1")?;
    let nested = ModelSpec::fixture("bollen_m0")?;
    let sigma = nested.implied_cov(&nested.start_values())?;
    let data = vale_maurelli_sample(&sigma, 1.0, 7.0, 600, 3)?;

    let a = analyze_nested(&parent, &nested, &data, &[])?;
    println!(
        "T(nested) = {:.3}, T(parent) = {:.3}, difference {:.3} on {} df",
        a.nested.t_stat,
        a.parent.t_stat,
        a.statistic(),
        a.m
    );
    for m in [Method::Ntml, Method::Sb, Method::Half, Method::Full] {
        println!("{:<6} p = {:.4}", m.to_string(), a.pvalue(&m)?.p);
    }
    Ok(())
}
