//! Scores calibrated, overconfident and biased ensembles against the same observations.

use ndarray::{Array2, Array3};
use nsdiff::metrics::EvalAccumulator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> nsdiff::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = Normal::new(0.0, 1.0).expect("valid normal");
    let obs = Array2::from_shape_simple_fn((200, 1), || truth.sample(&mut rng));
    for (label, mean, std) in [("calibrated", 0.0, 1.0), ("overconfident", 0.0, 0.3), ("biased", 1.0, 1.0)] {
        let dist = Normal::new(mean, std).expect("valid normal");
        let samples = Array3::from_shape_simple_fn((100, 200, 1), || dist.sample(&mut rng));
        let mut acc = EvalAccumulator::new(1);
        acc.add(samples.view(), obs.view())?;
        let r = acc.finish(&["x".into()])?;
        println!("{label:<14} CRPS {:.4}  QICE {:.4}  MAE {:.4}  MSE {:.4}", r.crps, r.qice, r.mae, r.mse);
    }
    Ok(())
}
