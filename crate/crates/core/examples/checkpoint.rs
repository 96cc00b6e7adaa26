//! Trains a small model, writes it to disk, reloads it and samples from both copies.

use nsdiff::data::{split_dataset, synth_linear, SplitScheme};
use nsdiff::pipeline::{fit_nsdiff, load_checkpoint, sample_window, save_checkpoint, TrainConfig};

fn main() -> nsdiff::Result<()> {
    let cfg = TrainConfig {
        epochs: 1,
        input_len: 48,
        horizon: 24,
        variance_window: 24,
        estimator_hidden: 64,
        samples: 50,
        ..TrainConfig::default()
    };
    let ds = split_dataset(&synth_linear(2000, cfg.seed)?, SplitScheme::Ratio)?;
    let run = fit_nsdiff(&ds, &cfg)?;
    let path = std::env::temp_dir().join("nsdiff-example.nsdf");
    save_checkpoint(&path, &run.model)?;
    let loaded = load_checkpoint(&path)?;
    println!(
        "wrote {} bytes to {}; reload identical: {}",
        run.model.to_bytes()?.len(),
        path.display(),
        loaded == run.model
    );
    let w = &run.data.test[0];
    let x = loaded.scaler.transform(w.x.view())?;
    let (a, _) = sample_window(&run.model, x.view(), cfg.samples, 0)?;
    let (b, _) = sample_window(&loaded, x.view(), cfg.samples, 0)?;
    println!("ensembles from both copies identical: {}", a == b);
    let mean = a.mean();
    println!("first forecast step: mean {:.3}, observed {:.3}", mean[[0, 0]], w.y0[[0, 0]]);
    Ok(())
}
