//! Conditional mean and variance estimators that define the diffusion
//! endpoint `N(f(X), g(X))`.
//!
//! Both default estimators are channel-wise MLPs: each feature's history
//! column (length N) is mapped to its horizon column (length M) with weights
//! shared across features.

use log::info;
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{WindowPair, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::learner::{adam_step, AdamConfig, Mlp, MlpSpec, OutputHead, ParameterStore};
use crate::rng::{indexed_substream, substream, Stream};

/// Parameter-name prefix of the conditional mean network.
pub const MEAN_PREFIX: &str = "f_phi";
/// Parameter-name prefix of the conditional variance network.
pub const VARIANCE_PREFIX: &str = "g_psi";

/// Endpoint of the diffusion for one window, or for a stack of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointPrior {
    pub mean: Array2<f64>,
    /// Strictly positive.
    pub variance: Array2<f64>,
}

impl EndpointPrior {
    pub fn new(mean: Array2<f64>, variance: Array2<f64>) -> Result<Self> {
        if mean.dim() != variance.dim() {
            return Err(Error::Shape {
                context: "endpoint prior",
                expected: vec![mean.nrows(), mean.ncols()],
                actual: vec![variance.nrows(), variance.ncols()],
            });
        }
        if let Some(v) = variance.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "endpoint variance must be positive and finite, found {v}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mean.dim()
    }
}

/// A frozen model of `E[Y | X]`; any backbone with this signature can drive the diffusion.
pub trait ConditionalMean {
    fn input_len(&self) -> usize;
    fn horizon(&self) -> usize;
    /// `x` is `input_len x D`; the result is `horizon x D`.
    fn predict_mean(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            batch_size: 32,
            hidden: 512,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were retained.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Which window field a channel network is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Mean,
    Variance,
}

impl Target {
    pub fn prefix(self) -> &'static str {
        match self {
            Target::Mean => MEAN_PREFIX,
            Target::Variance => VARIANCE_PREFIX,
        }
    }

    pub fn head(self) -> OutputHead {
        match self {
            Target::Mean => OutputHead::Identity,
            Target::Variance => OutputHead::Softplus,
        }
    }

    fn field(self, w: &WindowPair) -> &Array2<f64> {
        match self {
            Target::Mean => &w.y0,
            Target::Variance => &w.sigma_y0,
        }
    }
}

/// Per-feature MLP `N -> hidden -> hidden -> M` with shared weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMlp {
    store: ParameterStore,
    mlp: Mlp,
}

/// Stacks `input_len x D` matrices into `(B*D) x input_len` rows, example-major.
pub fn stack_channels<'a, I>(mats: I, len: usize, features: usize) -> Result<Array2<f64>>
where
    I: IntoIterator<Item = ArrayView2<'a, f64>>,
{
    let mut rows = Vec::new();
    for m in mats {
        if m.dim() != (len, features) {
            return Err(Error::Shape {
                context: "window channels",
                expected: vec![len, features],
                actual: vec![m.nrows(), m.ncols()],
            });
        }
        rows.extend(m.t().iter().copied());
    }
    let count = rows.len() / len.max(1);
    Array2::from_shape_vec((count, len), rows).map_err(|e| Error::Internal(e.to_string()))
}

/// Inverse of [`stack_channels`] for a single example: `D x len` rows to `len x D`.
fn unstack_one(rows: Array2<f64>) -> Array2<f64> {
    rows.reversed_axes().as_standard_layout().into_owned()
}

impl ChannelMlp {
    pub fn init(target: Target, input_len: usize, horizon: usize, hidden: usize, seed: u64) -> Result<Self> {
        let spec = MlpSpec::three_layer(input_len, hidden, horizon, target.head())?;
        let stream = match target {
            Target::Mean => Stream::MeanInit,
            Target::Variance => Stream::VarianceInit,
        };
        let mut store = ParameterStore::new();
        let mlp = Mlp::init(&mut store, target.prefix(), spec, &mut substream(seed, stream))?;
        Ok(Self { store, mlp })
    }

    /// Rebuilds a model from parameters loaded out of a checkpoint.
    pub fn from_store(store: ParameterStore, prefix: &str, spec: MlpSpec) -> Result<Self> {
        let mlp = Mlp::attach(&store, prefix, spec)?;
        Ok(Self { store, mlp })
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn spec(&self) -> &MlpSpec {
        self.mlp.spec()
    }

    pub fn is_positive(&self) -> bool {
        self.spec().head == OutputHead::Softplus
    }

    /// Evaluates stacked channel rows, `(B*D) x N -> (B*D) x M`.
    pub fn predict_rows(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.mlp.predict(&self.store, rows)
    }

    /// `N x D -> M x D`.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let rows = stack_channels([x], self.input_len(), x.ncols())?;
        Ok(unstack_one(self.predict_rows(rows.view())?))
    }

    /// One optimizer step on mean squared error over stacked rows; returns the pre-step loss.
    pub fn train_step(&mut self, x_rows: ArrayView2<'_, f64>, y_rows: ArrayView2<'_, f64>, adam: &AdamConfig) -> Result<f64> {
        let (pred, cache) = self.mlp.forward(&self.store, x_rows)?;
        if pred.dim() != y_rows.dim() {
            return Err(Error::Shape {
                context: "estimator target",
                expected: vec![pred.nrows(), pred.ncols()],
                actual: vec![y_rows.nrows(), y_rows.ncols()],
            });
        }
        let residual = &pred - &y_rows;
        let count = residual.len() as f64;
        let loss = residual.mapv(|e| e * e).sum() / count;
        if !loss.is_finite() {
            return Err(Error::Training("non-finite loss".into()));
        }
        let grad = residual * (2.0 / count);
        self.store.zero_grad();
        self.mlp.backward(&mut self.store, &cache, grad.view())?;
        adam_step(&mut self.store, adam)?;
        Ok(loss)
    }

    /// Zeroes every weight and bias; used by tests and examples to get a known network.
    pub fn zero_parameters(&mut self) {
        let ids: Vec<_> = self.store.ids().collect();
        for id in ids {
            self.store.value_mut(id).fill(0.0);
        }
    }
}

impl ConditionalMean for ChannelMlp {
    fn input_len(&self) -> usize {
        self.spec().input_width()
    }

    fn horizon(&self) -> usize {
        self.spec().output_width()
    }

    fn predict_mean(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.predict(x)
    }
}

pub(crate) fn window_rows(windows: &[&WindowPair], target: Target) -> Result<(Array2<f64>, Array2<f64>)> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Data("empty window batch".into()))?;
    let (n, d) = first.x.dim();
    let m = first.y0.nrows();
    let x = stack_channels(windows.iter().map(|w| w.x.view()), n, d)?;
    let y = stack_channels(windows.iter().map(|w| target.field(w).view()), m, d)?;
    Ok((x, y))
}

fn mean_squared_error(model: &ChannelMlp, windows: &[WindowPair], target: Target) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(256) {
        let refs: Vec<&WindowPair> = chunk.iter().collect();
        let (x, y) = window_rows(&refs, target)?;
        let pred = model.predict_rows(x.view())?;
        sum += (&pred - &y).mapv(|e| e * e).sum();
        count += y.len();
    }
    Ok(sum / count as f64)
}

/// Minimises mean squared error of a channel MLP against `target`, keeping
/// the parameters with the lowest validation error.
pub fn fit_channel_mlp(
    target: Target,
    train: &[WindowPair],
    val: &[WindowPair],
    cfg: &EstimatorConfig,
) -> Result<(ChannelMlp, FitReport)> {
    let name = target.prefix();
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "{name}: need nonempty training and validation windows (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config(format!("{name}: epochs and batch size must be positive")));
    }
    let (n, _) = train[0].x.dim();
    let m = train[0].y0.nrows();
    let mut model = ChannelMlp::init(target, n, m, cfg.hidden, cfg.seed)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let shuffle_index = match target {
        Target::Mean => 0,
        Target::Variance => 1,
    };
    let mut rng = indexed_substream(cfg.seed, Stream::Shuffle, shuffle_index);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = (model.clone(), f64::INFINITY, 0);
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&WindowPair> = batch.iter().map(|&i| &train[i]).collect();
            let (x, y) = window_rows(&refs, target)?;
            let loss = model.train_step(x.view(), y.view(), &adam).map_err(|e| match e {
                Error::Training(msg) => Error::Training(format!("{name}: epoch {epoch}, step {}: {msg}", step + 1)),
                other => other,
            })?;
            epoch_loss += loss * y.len() as f64;
            epoch_count += y.len();
        }
        let val_loss = mean_squared_error(&model, val, target)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "{name}: non-finite validation loss at epoch {epoch}"
            )));
        }
        let train_loss = epoch_loss / epoch_count as f64;
        info!("{name} epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.1 {
            best = (model.clone(), val_loss, epoch);
        }
    }
    let (mut retained, best_val_loss, best_epoch) = best;
    retained.store.reset_optimizer();
    Ok((
        retained,
        FitReport {
            epochs: records,
            best_epoch,
            best_val_loss,
        },
    ))
}

/// Fits the conditional mean network to the targets `Y0`.
pub fn pretrain_mean(train: &[WindowPair], val: &[WindowPair], cfg: &EstimatorConfig) -> Result<(ChannelMlp, FitReport)> {
    fit_channel_mlp(Target::Mean, train, val, cfg)
}

/// Fits the conditional variance network to the sliding-window variance targets.
pub fn pretrain_variance(
    train: &[WindowPair],
    val: &[WindowPair],
    cfg: &EstimatorConfig,
) -> Result<(ChannelMlp, FitReport)> {
    fit_channel_mlp(Target::Variance, train, val, cfg)
}

/// Endpoint for one history window; the variance is floored at [`VARIANCE_FLOOR`].
pub fn predict_prior(
    mean_model: &dyn ConditionalMean,
    variance_model: &ChannelMlp,
    x: ArrayView2<'_, f64>,
) -> Result<EndpointPrior> {
    if x.nrows() != mean_model.input_len() || x.nrows() != variance_model.input_len() {
        return Err(Error::Shape {
            context: "prior history",
            expected: vec![mean_model.input_len(), x.ncols()],
            actual: vec![x.nrows(), x.ncols()],
        });
    }
    let mean = mean_model.predict_mean(x)?;
    let variance = variance_model.predict(x)?.mapv(|v| v.max(VARIANCE_FLOOR));
    EndpointPrior::new(mean, variance)
}

/// Endpoint for a stack of windows at once, in the `(B*D) x M` row layout.
pub fn predict_prior_rows(
    mean_model: &ChannelMlp,
    variance_model: &ChannelMlp,
    x_rows: ArrayView2<'_, f64>,
) -> Result<EndpointPrior> {
    let mean = mean_model.predict_rows(x_rows)?;
    let variance = variance_model.predict_rows(x_rows)?.mapv(|v| v.max(VARIANCE_FLOOR));
    EndpointPrior::new(mean, variance)
}
