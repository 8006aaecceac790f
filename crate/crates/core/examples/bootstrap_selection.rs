//! Bollen-Stine bootstrap p-value and bootstrap selection of the
//! approximation whose p-values are closest to uniform.

use eigenfit::datagen::vale_maurelli_sample;
use eigenfit::model::ModelSpec;
use eigenfit::pvalue::Method;
use eigenfit::resample::{bollen_stine_pvalue, select};

fn main() -> eigenfit::Result<()> {
    let model = ModelSpec::fixture("bollen_m1")?;
    let sigma = model.implied_cov(&model.start_values())?;
    let data = vale_maurelli_sample(&sigma, 2.0, 21.0, 300, 11)?;

    let bs = bollen_stine_pvalue(&data, &model, 200, 1)?;
    println!("Bollen-Stine p = {:.4} (T = {:.3})", bs.p, bs.t_stat);

    let candidates = [Method::Sb, Method::Half, Method::Full];
    let sel = select(&data, &model, &candidates, 200, 1)?;
    for (m, d) in &sel.distances {
        println!("  KS distance {m:<5} {d:.4}");
    }
    println!("selected {} with p = {:.4?}", sel.chosen, sel.p);
    Ok(())
}
