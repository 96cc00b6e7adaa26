//! Denoiser training: draw a step and noise per example, diffuse the target
//! in closed form, and fit the predicted noise and posterior variance.

use log::info;
use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::checkpoint::NsDiffModel;
use super::config::TrainConfig;
use super::denoiser::{Denoiser, DenoiserInput};
use crate::data::{make_windows, Split, Standardizer, TimeSeriesDataset, WindowPair};
use crate::diffusion::{marginal_variance, nsdiff_loss, posterior_coefficients, LossWithGrad, VariantMode};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_channel_mlp, predict_prior_rows, stack_channels, ChannelMlp, EpochRecord, FitReport, Target,
};
use crate::learner::{adam_step, AdamConfig};
use crate::rng::{indexed_substream, substream, Stream};
use crate::schedule::NoiseSchedule;

/// Windows for one run: standardized training and validation windows and
/// test windows in data units.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub scaler: Standardizer,
    pub train: Vec<WindowPair>,
    pub val: Vec<WindowPair>,
    pub test: Vec<WindowPair>,
    pub feature_names: Vec<String>,
}

/// Fits the scaler on the training split and cuts windows from every split.
pub fn prepare_data(ds: &TimeSeriesDataset, cfg: &TrainConfig) -> Result<PreparedData> {
    cfg.validate()?;
    if ds.split_bounds.is_none() {
        return Err(Error::Data("dataset has no train/val/test split".into()));
    }
    let scaler = Standardizer::fit(ds)?;
    let scaled = scaler.transform_dataset(ds)?;
    let train = make_windows(&scaled, Split::Train, cfg.window_spec(cfg.train_stride))?;
    let val = make_windows(&scaled, Split::Val, cfg.window_spec(cfg.train_stride))?;
    let test = make_windows(ds, Split::Test, cfg.window_spec(cfg.eval_stride))?;
    Ok(PreparedData {
        scaler,
        train,
        val,
        test,
        feature_names: ds.feature_names.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimators {
    pub mean: ChannelMlp,
    pub variance: ChannelMlp,
    pub mean_report: FitReport,
    pub variance_report: FitReport,
}

/// Supervised pretraining of the conditional mean and variance networks.
pub fn pretrain_estimators(data: &PreparedData, cfg: &TrainConfig) -> Result<Estimators> {
    let ecfg = cfg.estimator_config();
    let (mean, mean_report) = fit_channel_mlp(Target::Mean, &data.train, &data.val, &ecfg)?;
    let (variance, variance_report) = fit_channel_mlp(Target::Variance, &data.train, &data.val, &ecfg)?;
    Ok(Estimators {
        mean,
        variance,
        mean_report,
        variance_report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Stacked rows `(windows * D) x len` for a set of windows.
struct Rows {
    x: Array2<f64>,
    y0: Array2<f64>,
    sigma_y0: Array2<f64>,
    windows: usize,
    features: usize,
}

fn rows_of(windows: &[&WindowPair]) -> Result<Rows> {
    let first = windows.first().ok_or_else(|| Error::Data("empty window batch".into()))?;
    let (n, d) = first.x.dim();
    let m = first.y0.nrows();
    Ok(Rows {
        x: stack_channels(windows.iter().map(|w| w.x.view()), n, d)?,
        y0: stack_channels(windows.iter().map(|w| w.y0.view()), m, d)?,
        sigma_y0: stack_channels(windows.iter().map(|w| w.sigma_y0.view()), m, d)?,
        windows: windows.len(),
        features: d,
    })
}

/// Per-batch random draws: one step per window, standard noise per cell.
fn draw_steps_and_noise(rng_steps: &mut ChaCha8Rng, rng_noise: &mut ChaCha8Rng, rows: &Rows, steps: usize) -> (Vec<usize>, Array2<f64>) {
    let mut per_row = Vec::with_capacity(rows.windows * rows.features);
    for _ in 0..rows.windows {
        let t = rng_steps.gen_range(1..=steps);
        per_row.extend(std::iter::repeat(t).take(rows.features));
    }
    let eta = Array2::from_shape_simple_fn(rows.y0.raw_dim(), || StandardNormal.sample(rng_noise));
    (per_row, eta)
}

struct BatchLoss {
    loss: LossWithGrad,
    learned_sigma: bool,
    cache: super::denoiser::DenoiserCache,
}

/// Diffuses `y0` to the drawn steps, queries the denoiser and evaluates the loss.
#[allow(clippy::too_many_arguments)]
fn batch_loss(
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    mode: VariantMode,
    y0: ArrayView2<'_, f64>,
    f: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    sigma_y0: ArrayView2<'_, f64>,
    steps: &[usize],
    eta: ArrayView2<'_, f64>,
    batch: usize,
) -> Result<BatchLoss> {
    let dim = y0.raw_dim();
    let mut y_t = Array2::zeros(dim.clone());
    let mut sigma_tilde = Array2::zeros(dim.clone());
    let mut g_eff = Array2::zeros(dim);
    for (r, &t) in steps.iter().enumerate() {
        let c = schedule.coefficients_at(t)?;
        let root_ab = c.alpha_bar.sqrt();
        for k in 0..y0.ncols() {
            let (ge, se) = mode.effective(g[[r, k]], sigma_y0[[r, k]]);
            let var = marginal_variance(&c, ge, se);
            y_t[[r, k]] = root_ab * y0[[r, k]] + (1.0 - root_ab) * f[[r, k]] + var.sqrt() * eta[[r, k]];
            sigma_tilde[[r, k]] = posterior_coefficients(&c, ge, se).sigma_tilde;
            g_eff[[r, k]] = ge;
        }
    }
    let input = DenoiserInput {
        y_t: y_t.view(),
        f: f.view(),
        g: g_eff.view(),
        steps,
    };
    let (out, cache) = denoiser.forward(schedule, input)?;
    let learned_sigma = out.sigma.is_some();
    // variants without a learned variance pin it to the analytic posterior
    let sigma_theta = out
        .sigma
        .unwrap_or_else(|| sigma_tilde.mapv(|v| if v > 0.0 { v } else { 1.0 }));
    let loss = nsdiff_loss(eta, out.eta.view(), sigma_tilde.view(), sigma_theta.view(), batch)?;
    Ok(BatchLoss {
        loss,
        learned_sigma,
        cache,
    })
}

/// Frozen endpoint for stacked rows, computed in chunks.
fn priors_for(mean: &ChannelMlp, variance: &ChannelMlp, x_rows: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let p = predict_prior_rows(mean, variance, x_rows)?;
    Ok((p.mean, p.variance))
}

/// Mean per-window loss on the validation windows with draws fixed across epochs.
fn validation_loss(
    denoiser: &Denoiser,
    mean: &ChannelMlp,
    variance: &ChannelMlp,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    val: &[WindowPair],
) -> Result<f64> {
    let mut rng_steps = indexed_substream(cfg.seed, Stream::Validation, 0);
    let mut rng_noise = indexed_substream(cfg.seed, Stream::Validation, 1);
    let mut total = 0.0;
    for chunk in val.chunks(256) {
        let refs: Vec<&WindowPair> = chunk.iter().collect();
        let rows = rows_of(&refs)?;
        let (f, g) = priors_for(mean, variance, rows.x.view())?;
        let (steps, eta) = draw_steps_and_noise(&mut rng_steps, &mut rng_noise, &rows, cfg.steps);
        let b = batch_loss(
            denoiser,
            schedule,
            cfg.variant,
            rows.y0.view(),
            f.view(),
            g.view(),
            rows.sigma_y0.view(),
            &steps,
            eta.view(),
            1,
        )?;
        total += b.loss.value.total;
    }
    Ok(total / val.len() as f64)
}

/// Trains the denoiser against frozen estimators (or jointly when
/// `cfg.end_to_end` is set) and keeps the lowest-validation-loss parameters.
pub fn train_nsdiff(
    cfg: &TrainConfig,
    train: &[WindowPair],
    val: &[WindowPair],
    mean: ChannelMlp,
    variance: ChannelMlp,
    scaler: Standardizer,
) -> Result<(NsDiffModel, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "denoiser training needs nonempty training and validation windows (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    if train[0].y0.nrows() != cfg.horizon || train[0].x.nrows() != cfg.input_len {
        return Err(Error::Shape {
            context: "training windows",
            expected: vec![cfg.input_len, cfg.horizon],
            actual: vec![train[0].x.nrows(), train[0].y0.nrows()],
        });
    }
    let schedule = cfg.schedule()?;
    let mut denoiser = Denoiser::init(
        cfg.denoiser_spec()?,
        cfg.steps,
        cfg.step_embedding,
        cfg.variant,
        &mut substream(cfg.seed, Stream::DenoiserInit),
    )?;
    let mut mean = mean;
    let mut variance = variance;
    let adam = AdamConfig::with_lr(cfg.lr);

    // frozen estimators: the endpoint of every training window is fixed
    let frozen = if cfg.end_to_end {
        None
    } else {
        let refs: Vec<&WindowPair> = train.iter().collect();
        let rows = rows_of(&refs)?;
        Some(priors_for(&mean, &variance, rows.x.view())?)
    };
    let d = train[0].x.ncols();

    let mut rng_shuffle = indexed_substream(cfg.seed, Stream::Shuffle, 2);
    let mut rng_steps = substream(cfg.seed, Stream::Steps);
    let mut rng_noise = substream(cfg.seed, Stream::Noise);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(Denoiser, ChannelMlp, ChannelMlp, f64, usize)> = None;
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_shuffle);
        let mut epoch_total = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&WindowPair> = batch.iter().map(|&i| &train[i]).collect();
            let rows = rows_of(&refs)?;
            let (f, g) = match &frozen {
                Some((f_all, g_all)) => {
                    let mut f = Array2::zeros(rows.y0.raw_dim());
                    let mut g = Array2::zeros(rows.y0.raw_dim());
                    for (k, &i) in batch.iter().enumerate() {
                        f.slice_mut(s![k * d..(k + 1) * d, ..]).assign(&f_all.slice(s![i * d..(i + 1) * d, ..]));
                        g.slice_mut(s![k * d..(k + 1) * d, ..]).assign(&g_all.slice(s![i * d..(i + 1) * d, ..]));
                    }
                    (f, g)
                }
                None => {
                    // detached endpoint from the current estimators, then one supervised step each
                    let fg = priors_for(&mean, &variance, rows.x.view())?;
                    mean.train_step(rows.x.view(), rows.y0.view(), &adam)?;
                    variance.train_step(rows.x.view(), rows.sigma_y0.view(), &adam)?;
                    fg
                }
            };
            let (steps, eta) = draw_steps_and_noise(&mut rng_steps, &mut rng_noise, &rows, cfg.steps);
            let b = batch_loss(
                &denoiser,
                &schedule,
                cfg.variant,
                rows.y0.view(),
                f.view(),
                g.view(),
                rows.sigma_y0.view(),
                &steps,
                eta.view(),
                rows.windows,
            )?;
            let total = b.loss.value.total;
            if !total.is_finite() {
                return Err(Error::Training(format!(
                    "denoiser loss is not finite at epoch {epoch}, step {}",
                    step + 1
                )));
            }
            epoch_total += total * rows.windows as f64;
            denoiser.store_mut().zero_grad();
            let d_sigma = b.learned_sigma.then(|| b.loss.d_sigma_theta.view());
            denoiser.backward(&b.cache, b.loss.d_eta_theta.view(), d_sigma)?;
            adam_step(denoiser.store_mut(), &adam)
                .map_err(|e| Error::Training(format!("denoiser epoch {epoch}, step {}: {e}", step + 1)))?;
        }
        let val_loss = validation_loss(&denoiser, &mean, &variance, &schedule, cfg, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        let train_loss = epoch_total / train.len() as f64;
        info!("denoiser epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().map_or(true, |b| val_loss < b.3) {
            best = Some((denoiser.clone(), mean.clone(), variance.clone(), val_loss, epoch));
        }
    }

    let (mut denoiser, mut mean, mut variance, best_val_loss, best_epoch) = best.expect("at least one epoch");
    denoiser.store_mut().reset_optimizer();
    mean.store_mut().reset_optimizer();
    variance.store_mut().reset_optimizer();
    Ok((
        NsDiffModel {
            config: cfg.clone(),
            schedule,
            mean,
            variance,
            denoiser,
            scaler,
        },
        TrainReport {
            epochs: records,
            best_epoch,
            best_val_loss,
        },
    ))
}

/// Outcome of [`fit_nsdiff`].
#[derive(Debug, Clone)]
pub struct FittedRun {
    pub model: NsDiffModel,
    pub data: PreparedData,
    pub mean_report: Option<FitReport>,
    pub variance_report: Option<FitReport>,
    pub train_report: TrainReport,
}

/// Full training pipeline: windows, estimator pretraining (unless end-to-end) and denoiser training.
pub fn fit_nsdiff(ds: &TimeSeriesDataset, cfg: &TrainConfig) -> Result<FittedRun> {
    let data = prepare_data(ds, cfg)?;
    let (mean, variance, mean_report, variance_report) = if cfg.end_to_end {
        let d = &data.train[0];
        (
            ChannelMlp::init(Target::Mean, d.x.nrows(), d.y0.nrows(), cfg.estimator_hidden, cfg.seed)?,
            ChannelMlp::init(Target::Variance, d.x.nrows(), d.y0.nrows(), cfg.estimator_hidden, cfg.seed)?,
            None,
            None,
        )
    } else {
        let e = pretrain_estimators(&data, cfg)?;
        (e.mean, e.variance, Some(e.mean_report), Some(e.variance_report))
    };
    let (model, train_report) = train_nsdiff(cfg, &data.train, &data.val, mean, variance, data.scaler.clone())?;
    Ok(FittedRun {
        model,
        data,
        mean_report,
        variance_report,
        train_report,
    })
}
