//! Pretrains the conditional mean and variance networks on the linear synthetic series.

use nsdiff::data::{split_dataset, synth_linear, SplitScheme};
use nsdiff::estimators::predict_prior;
use nsdiff::pipeline::{prepare_data, pretrain_estimators, TrainConfig};

fn main() -> nsdiff::Result<()> {
    env_logger::init();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let ds = split_dataset(&synth_linear(7588, cfg.seed)?, SplitScheme::Ratio)?;
    let data = prepare_data(&ds, &cfg)?;
    let est = pretrain_estimators(&data, &cfg)?;
    println!(
        "mean net: best epoch {} (val MSE {:.4}); variance net: best epoch {} (val MSE {:.4})",
        est.mean_report.best_epoch, est.mean_report.best_val_loss, est.variance_report.best_epoch, est.variance_report.best_val_loss
    );
    for w in [data.val.first(), data.val.last()].into_iter().flatten() {
        let prior = predict_prior(&est.mean, &est.variance, w.x.view())?;
        println!(
            "window at {}: predicted mean {:.3}, predicted variance {:.3}, local variance {:.3} (standardized units)",
            w.origin,
            prior.mean.mean().unwrap_or(f64::NAN),
            prior.variance.mean().unwrap_or(f64::NAN),
            w.sigma_y0.mean().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
