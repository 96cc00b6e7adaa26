//! Generates both synthetic series, splits them and cuts supervised windows.

use nsdiff::data::{make_windows, split_dataset, synth, Split, SplitScheme, SynthKind, WindowSpec};
use nsdiff::metrics::uncertainty_variation;

fn main() -> nsdiff::Result<()> {
    let spec = WindowSpec {
        input_len: 168,
        horizon: 192,
        variance_window: 96,
        stride: 1,
    };
    for kind in [SynthKind::Linear, SynthKind::Quadratic] {
        let ds = split_dataset(&synth(kind, 7588, 1)?, SplitScheme::Ratio)?;
        let b = ds.split_bounds.expect("split attached");
        let train = make_windows(&ds, Split::Train, spec)?;
        let test = make_windows(&ds, Split::Test, spec)?;
        let last = test.last().expect("test windows");
        let local_std = last.sigma_y0.mapv(f64::sqrt).mean().unwrap_or(f64::NAN);
        println!(
            "{kind}: rows {}, split at {}/{}, {} train and {} test windows, uncertainty variation {:.2}, \
             mean local std in the last test window {:.2}",
            ds.len(),
            b.train_end,
            b.val_end,
            train.len(),
            test.len(),
            uncertainty_variation(&ds)?,
            local_std
        );
    }
    Ok(())
}
