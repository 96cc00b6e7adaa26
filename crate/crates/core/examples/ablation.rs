//! Trains the full model and both ablations on one seed and compares calibration.
//!
//! The estimators are pretrained once and shared, since they do not depend on the variant.

use nsdiff::data::{split_dataset, synth_linear, SplitScheme};
use nsdiff::diffusion::VariantMode;
use nsdiff::pipeline::{evaluate, prepare_data, pretrain_estimators, train_nsdiff, TrainConfig};

fn main() -> nsdiff::Result<()> {
    env_logger::init();
    let base = TrainConfig {
        epochs: 3,
        eval_stride: 8,
        ..TrainConfig::default()
    };
    let ds = split_dataset(&synth_linear(7588, base.seed)?, SplitScheme::Ratio)?;
    let data = prepare_data(&ds, &base)?;
    let est = pretrain_estimators(&data, &base)?;
    println!("{:<12} {:>8} {:>8} {:>8}", "variant", "CRPS", "QICE", "MAE");
    for variant in VariantMode::ALL {
        let cfg = TrainConfig { variant, ..base.clone() };
        let (model, _) = train_nsdiff(&cfg, &data.train, &data.val, est.mean.clone(), est.variance.clone(), data.scaler.clone())?;
        let ev = evaluate(&model, &data.test, &data.feature_names, cfg.samples)?;
        println!("{:<12} {:>8.4} {:>8.4} {:>8.4}", variant.to_string(), ev.report.crps, ev.report.qice, ev.report.mae);
    }
    Ok(())
}
