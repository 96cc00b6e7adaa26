//! Fully connected network with rectifier hidden layers and hand-written
//! reverse-mode gradients.
//!
//! Rows of the input matrix are independent examples; weights are stored
//! `fan_in x fan_out` so a layer is `x.dot(w) + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParameterStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputHead {
    Identity,
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width followed by each layer's output width.
    pub widths: Vec<usize>,
    pub head: OutputHead,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, head: OutputHead) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(
                "an MLP needs an input width and at least one layer".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::Config(format!("MLP widths must be positive: {widths:?}")));
        }
        Ok(Self { widths, head })
    }

    /// `input -> hidden -> hidden -> output`, the three-layer shape used throughout.
    pub fn three_layer(input: usize, hidden: usize, output: usize, head: OutputHead) -> Result<Self> {
        Self::new(vec![input, hidden, hidden, output], head)
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    layer_inputs: Vec<Array2<f64>>,
    head_pre: Array2<f64>,
}

fn layer_names(prefix: &str, layer: usize) -> (String, String) {
    (format!("{prefix}/w{layer}"), format!("{prefix}/b{layer}"))
}

impl Mlp {
    /// Registers freshly initialised parameters, uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng>(store: &mut ParameterStore, prefix: &str, spec: MlpSpec, rng: &mut R) -> Result<Self> {
        let mut weights = Vec::with_capacity(spec.layers());
        let mut biases = Vec::with_capacity(spec.layers());
        for (l, pair) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..bound));
            let b = Array2::from_shape_simple_fn((1, fan_out), || rng.gen_range(-bound..bound));
            let (wn, bn) = layer_names(prefix, l);
            weights.push(store.insert(wn, w)?);
            biases.push(store.insert(bn, b)?);
        }
        Ok(Self { spec, weights, biases })
    }

    /// Binds to parameters already present in `store`, e.g. after loading a checkpoint.
    pub fn attach(store: &ParameterStore, prefix: &str, spec: MlpSpec) -> Result<Self> {
        let mut weights = Vec::with_capacity(spec.layers());
        let mut biases = Vec::with_capacity(spec.layers());
        for (l, pair) in spec.widths.windows(2).enumerate() {
            let (wn, bn) = layer_names(prefix, l);
            weights.push(store.require(&wn, (pair[0], pair[1]))?);
            biases.push(store.require(&bn, (1, pair[1]))?);
        }
        Ok(Self { spec, weights, biases })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    fn check_input(&self, input: &ArrayView2<'_, f64>) -> Result<()> {
        if input.ncols() != self.spec.input_width() {
            return Err(Error::Shape {
                context: "mlp input",
                expected: vec![input.nrows(), self.spec.input_width()],
                actual: vec![input.nrows(), input.ncols()],
            });
        }
        Ok(())
    }

    pub fn forward(&self, store: &ParameterStore, input: ArrayView2<'_, f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.check_input(&input)?;
        let last = self.spec.layers() - 1;
        let mut layer_inputs = Vec::with_capacity(self.spec.layers());
        let mut h = input.to_owned();
        for l in 0..last {
            let mut z = h.dot(store.value(self.weights[l]));
            z += store.value(self.biases[l]);
            z.mapv_inplace(|v| v.max(0.0));
            layer_inputs.push(std::mem::replace(&mut h, z));
        }
        let mut z = h.dot(store.value(self.weights[last]));
        z += store.value(self.biases[last]);
        layer_inputs.push(h);
        let out = match self.spec.head {
            OutputHead::Identity => z.clone(),
            OutputHead::Softplus => z.mapv(softplus),
        };
        Ok((out, MlpCache { layer_inputs, head_pre: z }))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, store: &ParameterStore, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(store, input)?.0)
    }

    /// Single-example convenience wrapper around [`Mlp::predict`].
    pub fn predict_one(&self, store: &ParameterStore, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|e| Error::Internal(e.to_string()))?;
        Ok(self.predict(store, x)?.into_raw_vec_and_offset().0)
    }

    /// Accumulates parameter gradients for `d loss / d output` and returns
    /// `d loss / d input`.
    pub fn backward(
        &self,
        store: &mut ParameterStore,
        cache: &MlpCache,
        grad_output: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        if grad_output.dim() != cache.head_pre.dim() || cache.layer_inputs.len() != self.spec.layers() {
            return Err(Error::Shape {
                context: "mlp backward",
                expected: vec![cache.head_pre.nrows(), cache.head_pre.ncols()],
                actual: vec![grad_output.nrows(), grad_output.ncols()],
            });
        }
        let mut delta = match self.spec.head {
            OutputHead::Identity => grad_output.to_owned(),
            OutputHead::Softplus => {
                let mut d = grad_output.to_owned();
                d.zip_mut_with(&cache.head_pre, |g, &z| *g *= sigmoid(z));
                d
            }
        };
        for l in (0..self.spec.layers()).rev() {
            let input = &cache.layer_inputs[l];
            let gw = input.t().dot(&delta);
            let gb: Array1<f64> = delta.sum_axis(Axis(0));
            *store.grad_mut(self.weights[l]) += &gw;
            *store.grad_mut(self.biases[l]) += &gb.insert_axis(Axis(0));
            let mut grad_in = delta.dot(&store.value(self.weights[l]).t());
            if l > 0 {
                // rectifier mask: the cached layer input is the post-activation
                grad_in.zip_mut_with(input, |g, &h| {
                    if h <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            delta = grad_in;
        }
        Ok(delta)
    }
}

/// Learned lookup table, one row per discrete index (e.g. diffusion step).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    table: ParamId,
    rows: usize,
    width: usize,
}

impl Embedding {
    pub fn init<R: Rng>(store: &mut ParameterStore, name: &str, rows: usize, width: usize, rng: &mut R) -> Result<Self> {
        let table = Array2::from_shape_simple_fn((rows, width), || rng.gen_range(-1.0..1.0));
        Ok(Self {
            table: store.insert(name, table)?,
            rows,
            width,
        })
    }

    pub fn attach(store: &ParameterStore, name: &str, rows: usize, width: usize) -> Result<Self> {
        Ok(Self {
            table: store.require(name, (rows, width))?,
            rows,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn lookup(&self, store: &ParameterStore, indices: &[usize]) -> Result<Array2<f64>> {
        let table = store.value(self.table);
        let mut out = Array2::zeros((indices.len(), self.width));
        for (mut row, &i) in out.rows_mut().into_iter().zip(indices) {
            if i >= self.rows {
                return Err(Error::InvalidInput(format!(
                    "embedding index {i} outside table of {} rows",
                    self.rows
                )));
            }
            row.assign(&table.row(i));
        }
        Ok(out)
    }

    pub fn backward(&self, store: &mut ParameterStore, indices: &[usize], grad: ArrayView2<'_, f64>) {
        let g = store.grad_mut(self.table);
        for (row, &i) in grad.rows().into_iter().zip(indices) {
            let mut target = g.row_mut(i);
            target += &row;
        }
    }
}

/// Central finite-difference gradient of `loss` with respect to every scalar
/// of parameter `id`, using a step of `rel_step * max(|w|, 1)`.
pub fn numerical_gradient<F>(store: &mut ParameterStore, id: ParamId, rel_step: f64, mut loss: F) -> Array2<f64>
where
    F: FnMut(&ParameterStore) -> f64,
{
    let shape = store.value(id).raw_dim();
    let mut out = Array2::zeros(shape);
    for idx in ndarray::indices(out.raw_dim()) {
        let w = store.value(id)[idx];
        let h = rel_step * w.abs().max(1.0);
        store.value_mut(id)[idx] = w + h;
        let up = loss(store);
        store.value_mut(id)[idx] = w - h;
        let down = loss(store);
        store.value_mut(id)[idx] = w;
        out[idx] = (up - down) / (2.0 * h);
    }
    out
}

/// Largest elementwise relative error, with `floor` guarding near-zero entries.
pub fn max_relative_error(a: &Array2<f64>, b: &Array2<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
