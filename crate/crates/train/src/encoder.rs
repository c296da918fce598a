//! Small trainable encoder standing in for a backbone network.

use dmlbench_core::batch::{normalize_rows, normalize_rows_backward};
use dmlbench_core::{Params, SamplerRng};
use ndarray::{Array1, Array2, ArrayView2, Axis, Ix1, Ix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Identity,
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub normalize_output: bool,
    pub seed: u64,
}

impl EncoderSpec {
    pub fn linear(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self {
            kind: EncoderKind::Linear,
            input_dim,
            hidden_dims: Vec::new(),
            output_dim,
            normalize_output: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(TrainError::config("encoder dimensions must be positive"));
        }
        match self.kind {
            EncoderKind::Identity if self.input_dim != self.output_dim => Err(TrainError::config(format!(
                "identity encoder needs input_dim == output_dim, got {} and {}",
                self.input_dim, self.output_dim
            ))),
            EncoderKind::Mlp if self.hidden_dims.is_empty() => {
                Err(TrainError::config("mlp encoder needs at least one hidden layer"))
            }
            _ => Ok(()),
        }
    }

    fn widths(&self) -> Vec<usize> {
        match self.kind {
            EncoderKind::Identity => Vec::new(),
            EncoderKind::Linear => vec![self.input_dim, self.output_dim],
            EncoderKind::Mlp => {
                let mut w = vec![self.input_dim];
                w.extend(&self.hidden_dims);
                w.push(self.output_dim);
                w
            }
        }
    }

    pub fn n_layers(&self) -> usize {
        self.widths().len().saturating_sub(1)
    }

    /// Weights and biases uniform in `+-1/sqrt(fan_in)`.
    pub fn init_params(&self) -> Result<Params<f64>> {
        self.validate()?;
        let mut rng = SamplerRng::new(self.seed);
        let mut params = Params::new();
        for (l, w) in self.widths().windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..=bound));
            let bias = Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..=bound));
            params.insert(weight_key(l), weight.into_dyn());
            params.insert(bias_key(l), bias.into_dyn());
        }
        Ok(params)
    }
}

pub fn weight_key(layer: usize) -> String {
    format!("encoder.{layer}.weight")
}

pub fn bias_key(layer: usize) -> String {
    format!("encoder.{layer}.bias")
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-normalization output and its row norms, when normalizing.
    normalized: Option<(Array2<f64>, Array1<f64>)>,
}

fn layer<'a>(params: &'a Params<f64>, l: usize) -> Result<(ArrayView2<'a, f64>, ndarray::ArrayView1<'a, f64>)> {
    let get = |k: String| params.get(&k).ok_or_else(|| TrainError::config(format!("missing parameter {k}")));
    let w = get(weight_key(l))?.view().into_dimensionality::<Ix2>().map_err(|e| TrainError::config(e.to_string()))?;
    let b = get(bias_key(l))?.view().into_dimensionality::<Ix1>().map_err(|e| TrainError::config(e.to_string()))?;
    Ok((w, b))
}

/// `x -> (W x + b)` with ReLU between layers, optional row normalization.
pub fn forward(
    spec: &EncoderSpec,
    params: &Params<f64>,
    x: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, ForwardCache)> {
    if x.ncols() != spec.input_dim {
        return Err(TrainError::config(format!(
            "input has {} features, encoder expects {}",
            x.ncols(),
            spec.input_dim
        )));
    }
    let n_layers = spec.n_layers();
    let mut h = x.to_owned();
    let mut inputs = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (w, b) = layer(params, l)?;
        let mut out = h.dot(&w) + b;
        if l + 1 < n_layers {
            out.mapv_inplace(|v| v.max(0.0));
        }
        inputs.push(std::mem::replace(&mut h, out));
    }
    let normalized = if spec.normalize_output {
        let (y, norms) = normalize_rows(h.view())?;
        Some((y, norms))
    } else {
        None
    };
    let out = normalized.as_ref().map_or(h, |(y, _)| y.clone());
    Ok((out, ForwardCache { inputs, normalized }))
}

/// Gradients of every encoder parameter given `dL/d(output)`.
pub fn backward(
    spec: &EncoderSpec,
    params: &Params<f64>,
    cache: &ForwardCache,
    grad_out: Array2<f64>,
) -> Result<Params<f64>> {
    let mut g = match &cache.normalized {
        Some((y, norms)) => normalize_rows_backward(y.view(), norms, grad_out.view()),
        None => grad_out,
    };
    let mut grads = Params::new();
    for l in (0..spec.n_layers()).rev() {
        let (w, _) = layer(params, l)?;
        let input = &cache.inputs[l];
        grads.insert(weight_key(l), input.t().dot(&g).into_dyn());
        grads.insert(bias_key(l), g.sum_axis(Axis(0)).into_dyn());
        if l > 0 {
            let mut gin = g.dot(&w.t());
            // ReLU mask: the input of layer l is the activated output of l-1
            gin.zip_mut_with(input, |gv, &a| {
                if a <= 0.0 {
                    *gv = 0.0
                }
            });
            g = gin;
        }
    }
    Ok(grads)
}
