//! Reverse-process sampling: start at the learned endpoint and walk back to step 0.

use log::debug;
use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::NsDiffModel;
use super::denoiser::{DenoiserInput, NoisePredictor};
use crate::diffusion::{invert_marginal, posterior_params, solve_sigma_y0, VariantMode};
use crate::error::{Error, Result};
use crate::estimators::{predict_prior_rows, stack_channels};
use crate::metrics::quantile_sorted;
use crate::rng::{indexed_substream, Stream};
use crate::schedule::NoiseSchedule;

/// `S x M x D` forecast samples in data units.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble {
    pub samples: Array3<f64>,
}

impl ForecastEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self) -> Array2<f64> {
        self.samples.mean_axis(Axis(0)).expect("nonempty ensemble")
    }

    /// Population standard deviation across samples.
    pub fn std(&self) -> Array2<f64> {
        self.samples.std_axis(Axis(0), 0.0)
    }

    /// Per-cell linear-interpolation quantile, `q` in `[0, 1]`.
    pub fn quantile(&self, q: f64) -> Array2<f64> {
        let (_, m, d) = self.samples.dim();
        let mut out = Array2::zeros((m, d));
        let mut buf = Vec::with_capacity(self.len());
        for ((i, j), o) in out.indexed_iter_mut() {
            buf.clear();
            buf.extend(self.samples.slice(s![.., i, j]).iter().copied());
            buf.sort_by(f64::total_cmp);
            *o = quantile_sorted(&buf, q);
        }
        out
    }
}

/// Result of one reverse chain over stacked rows.
#[derive(Debug, Clone)]
pub struct ReverseOutcome {
    pub y0: Array2<f64>,
    /// Cells where the variance solver fell back to `g`, summed over steps.
    pub solver_fallbacks: usize,
    pub solver_cells: usize,
}

fn normal_like<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Runs the reverse chain from `t = T` to 0 for stacked rows `R x M`.
///
/// `f` and `g` are the endpoint in raw (pre-substitution) form; the variant
/// substitution happens inside the diffusion primitives.
pub fn reverse_chain<P: NoisePredictor + ?Sized, R: Rng>(
    predictor: &P,
    schedule: &NoiseSchedule,
    mode: VariantMode,
    f: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    rng: &mut R,
) -> Result<ReverseOutcome> {
    if f.dim() != g.dim() {
        return Err(Error::Shape {
            context: "sampling endpoint",
            expected: vec![f.nrows(), f.ncols()],
            actual: vec![g.nrows(), g.ncols()],
        });
    }
    let (rows, cols) = f.dim();
    let g_eff = g.mapv(|v| mode.effective_g(v));
    let mut y = &f + &(g_eff.mapv(f64::sqrt) * normal_like(rows, cols, rng));
    // the solver needs t >= 2; step 1 reuses the last solved value
    let mut sigma_hat = g_eff.clone();
    let mut fallbacks = 0;
    let mut solver_cells = 0;
    for t in (1..=schedule.steps()).rev() {
        let steps = vec![t; rows];
        let out = predictor.predict_noise(
            schedule,
            DenoiserInput {
                y_t: y.view(),
                f: f.view(),
                g: g_eff.view(),
                steps: &steps,
            },
        )?;
        if out.eta.dim() != (rows, cols) {
            return Err(Error::Shape {
                context: "predicted noise",
                expected: vec![rows, cols],
                actual: vec![out.eta.nrows(), out.eta.ncols()],
            });
        }
        if let (Some(sigma), true) = (&out.sigma, t >= 2) {
            let solved = solve_sigma_y0(schedule, t, g, sigma.view())?;
            fallbacks += solved.fallbacks;
            solver_cells += rows * cols;
            sigma_hat = solved.sigma_y0;
        }
        let y0_hat = invert_marginal(mode, schedule, t, y.view(), f, g, sigma_hat.view(), out.eta.view())?;
        if t == 1 {
            y = y0_hat;
            break;
        }
        let post = posterior_params(mode, schedule, t, y.view(), y0_hat.view(), f, g, sigma_hat.view())?;
        let var = out.sigma.unwrap_or(post.sigma_tilde);
        y = post.mu_tilde + &(var.mapv(f64::sqrt) * normal_like(rows, cols, rng));
    }
    if fallbacks > 0 {
        debug!("variance solver fell back to g in {fallbacks} of {solver_cells} cells");
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Internal(format!("reverse chain produced a non-finite value {v}")));
    }
    Ok(ReverseOutcome {
        y0: y,
        solver_fallbacks: fallbacks,
        solver_cells,
    })
}

/// Forecast ensemble for one standardized history window `N x D`.
///
/// `window_index` selects the random substream so that windows can be
/// sampled in any order or in parallel with identical results.
pub fn sample_window(
    model: &NsDiffModel,
    x: ArrayView2<'_, f64>,
    samples: usize,
    window_index: u64,
) -> Result<(ForecastEnsemble, ReverseOutcome)> {
    let cfg = &model.config;
    let (n, d) = x.dim();
    if n != cfg.input_len || d != model.features() {
        return Err(Error::Shape {
            context: "sampling history",
            expected: vec![cfg.input_len, model.features()],
            actual: vec![n, d],
        });
    }
    if samples == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let x_rows = stack_channels(std::iter::once(x), n, d)?;
    let prior = predict_prior_rows(&model.mean, &model.variance, x_rows.view())?;
    let m = cfg.horizon;
    // replicate the D endpoint rows once per sample path: row p*D + d
    let mut f = Array2::zeros((samples * d, m));
    let mut g = Array2::zeros((samples * d, m));
    for p in 0..samples {
        f.slice_mut(s![p * d..(p + 1) * d, ..]).assign(&prior.mean);
        g.slice_mut(s![p * d..(p + 1) * d, ..]).assign(&prior.variance);
    }
    let mut rng = indexed_substream(cfg.seed, Stream::Sampling, window_index);
    let outcome = reverse_chain(&model.denoiser, &model.schedule, cfg.variant, f.view(), g.view(), &mut rng)?;
    let mut out = Array3::zeros((samples, m, d));
    for p in 0..samples {
        let path = outcome.y0.slice(s![p * d..(p + 1) * d, ..]).t().to_owned();
        out.slice_mut(s![p, .., ..]).assign(&model.scaler.inverse(path.view())?);
    }
    Ok((ForecastEnsemble { samples: out }, outcome))
}
