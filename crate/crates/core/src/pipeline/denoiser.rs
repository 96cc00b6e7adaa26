//! The trainable denoiser: predicts the forward noise and, for the full
//! model, the reverse-posterior variance.

use std::f64::consts::LN_2;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::diffusion::{posterior_coefficients, VariantMode};
use crate::error::{Error, Result};
use crate::learner::{sigmoid, softplus, Embedding, Mlp, MlpCache, MlpSpec, ParameterStore};
use crate::schedule::NoiseSchedule;

/// Parameter-name prefix of the denoiser.
pub const DENOISER_PREFIX: &str = "xi_theta";

fn embedding_name() -> String {
    format!("{DENOISER_PREFIX}/step_embedding")
}

/// Rows of a denoiser query; all arrays are `R x M` with one step index per row.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserInput<'a> {
    pub y_t: ArrayView2<'a, f64>,
    pub f: ArrayView2<'a, f64>,
    /// Endpoint variance after the variant substitution; strictly positive.
    pub g: ArrayView2<'a, f64>,
    pub steps: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub eta: Array2<f64>,
    /// Predicted posterior variance; `None` for variants that do not learn it.
    pub sigma: Option<Array2<f64>>,
}

/// Anything that can stand in for the denoiser during sampling.
pub trait NoisePredictor {
    fn predict_noise(&self, schedule: &NoiseSchedule, input: DenoiserInput<'_>) -> Result<DenoiserOutput>;
}

/// Activations kept for [`Denoiser::backward`].
#[derive(Debug, Clone)]
pub struct DenoiserCache {
    mlp: MlpCache,
    steps: Vec<usize>,
    raw_sigma: Option<Array2<f64>>,
    scale: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    store: ParameterStore,
    mlp: Mlp,
    embedding: Embedding,
    horizon: usize,
    learns_variance: bool,
}

impl Denoiser {
    pub fn init<R: Rng>(spec: MlpSpec, steps: usize, embedding_width: usize, variant: VariantMode, rng: &mut R) -> Result<Self> {
        let horizon = Self::check_spec(&spec, embedding_width, variant)?;
        let mut store = ParameterStore::new();
        let mlp = Mlp::init(&mut store, DENOISER_PREFIX, spec, rng)?;
        let embedding = Embedding::init(&mut store, &embedding_name(), steps, embedding_width, rng)?;
        Ok(Self {
            store,
            mlp,
            embedding,
            horizon,
            learns_variance: variant.learns_variance(),
        })
    }

    pub fn from_store(store: ParameterStore, spec: MlpSpec, steps: usize, embedding_width: usize, variant: VariantMode) -> Result<Self> {
        let horizon = Self::check_spec(&spec, embedding_width, variant)?;
        let mlp = Mlp::attach(&store, DENOISER_PREFIX, spec)?;
        let embedding = Embedding::attach(&store, &embedding_name(), steps, embedding_width)?;
        Ok(Self {
            store,
            mlp,
            embedding,
            horizon,
            learns_variance: variant.learns_variance(),
        })
    }

    fn check_spec(spec: &MlpSpec, embedding_width: usize, variant: VariantMode) -> Result<usize> {
        let inputs = spec.input_width();
        if inputs <= embedding_width || (inputs - embedding_width) % 3 != 0 {
            return Err(Error::Config(format!(
                "denoiser input width {inputs} does not match 3 * horizon + {embedding_width}"
            )));
        }
        let horizon = (inputs - embedding_width) / 3;
        let expected = if variant.learns_variance() { 2 * horizon } else { horizon };
        if spec.output_width() != expected {
            return Err(Error::Config(format!(
                "denoiser output width {} should be {expected} for variant {variant}",
                spec.output_width()
            )));
        }
        Ok(horizon)
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn learns_variance(&self) -> bool {
        self.learns_variance
    }

    /// Per-cell variance scale: the analytic posterior variance under the
    /// perfect-estimator assumption, or `beta_1 g` at step 1 where that is zero.
    fn variance_scale(&self, schedule: &NoiseSchedule, input: &DenoiserInput<'_>) -> Result<Array2<f64>> {
        let mut scale = Array2::zeros(input.g.raw_dim());
        for (r, &t) in input.steps.iter().enumerate() {
            let c = schedule.coefficients_at(t)?;
            for (o, &g) in scale.row_mut(r).iter_mut().zip(input.g.row(r)) {
                *o = if t == 1 {
                    c.beta * g
                } else {
                    posterior_coefficients(&c, g, g).sigma_tilde
                };
            }
        }
        Ok(scale)
    }

    fn assemble(&self, input: &DenoiserInput<'_>) -> Result<Array2<f64>> {
        let (rows, m) = input.y_t.dim();
        for (context, a) in [("denoiser f", &input.f), ("denoiser g", &input.g)] {
            if a.dim() != (rows, m) {
                return Err(Error::Shape {
                    context,
                    expected: vec![rows, m],
                    actual: vec![a.nrows(), a.ncols()],
                });
            }
        }
        if m != self.horizon || input.steps.len() != rows {
            return Err(Error::Shape {
                context: "denoiser input",
                expected: vec![rows, self.horizon],
                actual: vec![input.steps.len(), m],
            });
        }
        if let Some(v) = input.g.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidInput(format!("denoiser endpoint variance must be positive, found {v}")));
        }
        // steps are 1-based, the table is 0-based
        let idx: Vec<usize> = input.steps.iter().map(|t| t.wrapping_sub(1)).collect();
        let emb = self.embedding.lookup(&self.store, &idx)?;
        let log_g = input.g.mapv(f64::ln);
        concatenate(Axis(1), &[input.y_t.view(), input.f.view(), log_g.view(), emb.view()]).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn forward(&self, schedule: &NoiseSchedule, input: DenoiserInput<'_>) -> Result<(DenoiserOutput, DenoiserCache)> {
        let features = self.assemble(&input)?;
        let (out, cache) = self.mlp.forward(&self.store, features.view())?;
        let m = self.horizon;
        let eta = out.slice(s![.., ..m]).to_owned();
        let (sigma, raw_sigma, scale) = if self.learns_variance {
            let raw = out.slice(s![.., m..]).to_owned();
            let scale = self.variance_scale(schedule, &input)?;
            let sigma = &raw.mapv(|r| softplus(r) / LN_2) * &scale;
            (Some(sigma), Some(raw), Some(scale))
        } else {
            (None, None, None)
        };
        Ok((
            DenoiserOutput { eta, sigma },
            DenoiserCache {
                mlp: cache,
                steps: input.steps.to_vec(),
                raw_sigma,
                scale,
            },
        ))
    }

    /// Accumulates parameter gradients given the loss gradients with respect
    /// to the predicted noise and variance.
    pub fn backward(&mut self, cache: &DenoiserCache, d_eta: ArrayView2<'_, f64>, d_sigma: Option<ArrayView2<'_, f64>>) -> Result<()> {
        let rows = d_eta.nrows();
        let m = self.horizon;
        let width = self.mlp.spec().output_width();
        let mut grad = Array2::zeros((rows, width));
        grad.slice_mut(s![.., ..m]).assign(&d_eta);
        match (d_sigma, &cache.raw_sigma, &cache.scale) {
            (Some(ds), Some(raw), Some(scale)) => {
                let mut block = grad.slice_mut(s![.., m..]);
                ndarray::Zip::from(&mut block)
                    .and(&ds)
                    .and(raw)
                    .and(scale)
                    .for_each(|o, &d, &r, &sc| *o = d * sc * sigmoid(r) / LN_2);
            }
            (None, None, None) => {}
            _ => {
                return Err(Error::Internal(
                    "variance gradient supplied inconsistently with the denoiser variant".into(),
                ))
            }
        }
        let d_input = self.mlp.backward(&mut self.store, &cache.mlp, grad.view())?;
        let idx: Vec<usize> = cache.steps.iter().map(|t| t - 1).collect();
        self.embedding
            .backward(&mut self.store, &idx, d_input.slice(s![.., 3 * m..]));
        Ok(())
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, schedule: &NoiseSchedule, input: DenoiserInput<'_>) -> Result<DenoiserOutput> {
        Ok(self.forward(schedule, input)?.0)
    }
}
