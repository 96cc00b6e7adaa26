//! Diffuses a target to step t in closed form and inspects the reverse posterior.

use ndarray::array;
use nsdiff::diffusion::{forward_marginal, marginal_variance_array, posterior_params, VariantMode};
use nsdiff::schedule::NoiseSchedule;

fn main() -> nsdiff::Result<()> {
    let s = NoiseSchedule::linear(20, 1e-4, 0.02)?;
    let y0 = array![[2.0, -1.0, 0.5]];
    let f = array![[1.5, -0.5, 0.0]];
    let g = array![[4.0, 0.5, 1.0]];
    let sigma_y0 = array![[1.0, 1.0, 0.2]];
    let eta = array![[0.3, -0.8, 1.1]];
    for mode in VariantMode::ALL {
        println!("{mode}");
        for t in [1, 5, 10, 20] {
            let y_t = forward_marginal(mode, &s, t, y0.view(), f.view(), g.view(), sigma_y0.view(), eta.view())?;
            let var = marginal_variance_array(mode, &s, t, g.view(), sigma_y0.view())?;
            let post = posterior_params(mode, &s, t, y_t.view(), y0.view(), f.view(), g.view(), sigma_y0.view())?;
            println!(
                "  t = {t:>2}: y_t {:.4}, marginal variance {:.5}, posterior mean {:.4}, posterior variance {:.6}",
                y_t, var, post.mu_tilde, post.sigma_tilde
            );
        }
    }
    Ok(())
}
