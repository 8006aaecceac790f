//! Every analytic p-value for one non-normal sample, from the normal-theory
//! chi-square to the full eigenvalue mixture.

use eigenfit::analysis::analyze;
use eigenfit::datagen::vale_maurelli_sample;
use eigenfit::model::ModelSpec;
use eigenfit::pvalue::{GroupingScheme, Method};

fn main() -> eigenfit::Result<()> {
    let model = ModelSpec::fixture("bollen_m1")?;
    let sigma = model.implied_cov(&model.start_values())?;
    let data = vale_maurelli_sample(&sigma, 2.0, 21.0, 400, 7)?;
    let a = analyze(&model, &data, &[])?;
    println!("T = {:.3}, d = {}", a.fit.t_stat, a.dof);

    let methods = [
        Method::Ntml,
        Method::Sb,
        Method::Ss,
        Method::Half,
        Method::Grouped(GroupingScheme::new(vec![4, 12])?),
        Method::Full,
    ];
    for m in &methods {
        let r = a.pvalue(m)?;
        println!("{:<14} p = {:.4}", m.to_string(), r.p);
    }
    Ok(())
}
