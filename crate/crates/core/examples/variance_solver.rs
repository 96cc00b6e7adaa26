//! Recovers the target variance from a posterior variance at every step.

use nsdiff::diffusion::{posterior_coefficients, solvable, solve_sigma_y0_scalar, SolverOutcome};
use nsdiff::schedule::NoiseSchedule;

fn main() -> nsdiff::Result<()> {
    let s = NoiseSchedule::linear(20, 1e-4, 0.02)?;
    let (g, sigma_y0) = (2.5, 0.4);
    for t in 2..=s.steps() {
        let c = s.coefficients_at(t)?;
        let sigma_theta = posterior_coefficients(&c, g, sigma_y0).sigma_tilde;
        let solved = solve_sigma_y0_scalar(&c, g, sigma_theta)?;
        let tag = match solved {
            SolverOutcome::Root(_) => "root",
            SolverOutcome::Fallback(_) => "fallback",
        };
        println!(
            "t = {t:>2}: sigma_theta {sigma_theta:.3e}, solvable {}, recovered {:.12} ({tag})",
            solvable(&c, g, sigma_theta),
            solved.value()
        );
    }
    // a posterior variance below the solvable range falls back to g
    let c = s.coefficients_at(10)?;
    println!("too small a variance: {:?}", solve_sigma_y0_scalar(&c, g, 1e-12)?);
    Ok(())
}
