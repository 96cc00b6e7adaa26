//! Prints the cumulative coefficients of the default linear schedule.

use nsdiff::schedule::NoiseSchedule;

fn main() -> nsdiff::Result<()> {
    let s = NoiseSchedule::linear(20, 1e-4, 0.02)?;
    println!("{:>3} {:>10} {:>10} {:>12} {:>12} {:>12}", "t", "beta", "alpha_bar", "alpha_tilde", "alpha_hat", "beta_tilde");
    for t in 1..=s.steps() {
        let c = s.coefficients_at(t)?;
        println!(
            "{t:>3} {:>10.6} {:>10.6} {:>12.6} {:>12.6} {:>12.8}",
            c.beta,
            c.alpha_bar,
            s.alpha_tildes()[t - 1],
            s.alpha_hats()[t - 1],
            c.beta_tilde
        );
    }

    let worked = NoiseSchedule::from_betas(vec![0.1, 0.2, 0.3, 0.4, 0.5])?;
    let c = worked.coefficients_at(5)?;
    println!("\nbetas 0.1..0.5 at t = 5: alpha_bar = {:.4}, beta_tilde = {:.5}", c.alpha_bar, c.beta_tilde);
    Ok(())
}
