//! Tail probabilities of weighted sums of chi-square(1) variables, checked
//! against simulation.

use eigenfit::wchisq::{chi_square_quantile, mc_survival, survival, MixtureWeights};

fn main() -> eigenfit::Result<()> {
    let w = MixtureWeights::new(vec![3.2, 1.7, 1.1, 0.6, 0.4])?;
    println!("weights {:?}, mean {:.3}", w.as_slice(), w.mean());
    for t in [2.0, 5.0, 10.0, 20.0, 40.0] {
        let exact = survival(&w, t)?;
        let mc = mc_survival(&w, t, 200_000, 1)?;
        println!("t = {t:>5}: P(Q > t) = {exact:.6}   simulated {mc:.6}");
    }

    // Equal weights reduce to a scaled chi-square.
    let equal = MixtureWeights::equal(4, 1.0)?;
    let q = chi_square_quantile(4.0, 0.95);
    println!(
        "chi2(4) 95% quantile {q:.4}, tail {:.6}",
        survival(&equal, q)?
    );
    Ok(())
}
