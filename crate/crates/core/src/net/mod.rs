//! The embedding operator: a stack of linear layers, each followed by optional
//! inverted dropout and a channel-shared PReLU, with exact manual backprop.
//!
//! Layer order inside a block is `Linear → Dropout → PReLU`. The default shape
//! is `input → 512 → 256 → output` with dropout 0.1 after the first two linear
//! layers and a PReLU after every linear layer, final one included.

mod checkpoint;

pub use checkpoint::{Checkpoint, Tensor, CHECKPOINT_MAGIC};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, RandomSource};
use serde::{Deserialize, Serialize};

pub const DEFAULT_HIDDEN: [usize; 2] = [512, 256];
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub has_prelu: bool,
    pub dropout_rate: f64,
}

impl LayerSpec {
    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!(
                "layer dimensions must be >= 1 (got {}x{})",
                self.in_dim, self.out_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Architecture description: hidden widths and dropout rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn with_hidden(mut self, hidden: &[usize]) -> Self {
        self.hidden = hidden.to_vec();
        self
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        let last = dims.len() - 2;
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                has_prelu: true,
                dropout_rate: if i < last { self.dropout } else { 0.0 },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `out_dim × in_dim`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    /// PReLU slope, present iff `spec.has_prelu`.
    pub slope: Option<f64>,
}

/// Parameters of the embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    input: Matrix,
    /// Post-dropout, pre-activation values.
    pre_activation: Matrix,
    mask: Option<Matrix>,
}

/// Activations and dropout masks recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    layers: Vec<LayerTrace>,
    output_shape: (usize, usize),
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.output_shape.0
    }

    /// Dropout masks per layer (`None` where no dropout was applied).
    pub fn masks(&self) -> Vec<Option<Matrix>> {
        self.layers.iter().map(|l| l.mask.clone()).collect()
    }
}

/// Builds the default architecture (`input → 512 → 256 → output`).
pub fn build_model(input_dim: usize, output_dim: usize, rng: &mut RandomSource) -> Result<ModelParams> {
    ModelParams::new(&ModelConfig::new(input_dim, output_dim), rng)
}

fn prelu(z: f64, a: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        a * z
    }
}

impl ModelParams {
    /// Weights uniform in ±1/√fan_in, zero biases, PReLU slopes 0.25.
    pub fn new(config: &ModelConfig, rng: &mut RandomSource) -> Result<Self> {
        let specs = config.layer_specs();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            let bound = 1.0 / (spec.in_dim as f64).sqrt();
            let data = (0..spec.in_dim * spec.out_dim)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
            layers.push(Layer {
                spec,
                weight: Matrix::from_vec(spec.out_dim, spec.in_dim, data)?,
                bias: vec![0.0; spec.out_dim],
                slope: spec.has_prelu.then_some(PRELU_INIT),
            });
        }
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.spec.validate()?;
            if l.weight.shape() != (l.spec.out_dim, l.spec.in_dim)
                || l.bias.len() != l.spec.out_dim
                || l.slope.is_some() != l.spec.has_prelu
            {
                return Err(Error::Dimension(format!("layer {i} parameters do not match its spec")));
            }
            if i > 0 && layers[i - 1].spec.out_dim != l.spec.in_dim {
                return Err(Error::Dimension(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.spec.in_dim,
                    i - 1,
                    layers[i - 1].spec.out_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.spec.out_dim))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len() + usize::from(l.slope.is_some()))
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.all_finite() && l.bias.iter().all(|b| b.is_finite()) && l.slope.is_none_or(f64::is_finite)
        })
    }

    /// Mutable views of every parameter block in a fixed order
    /// (per layer: weight, bias, slope).
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 3);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if let Some(a) = l.slope.as_mut() {
                out.push(std::slice::from_mut(a));
            }
        }
        out
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.spec.out_dim, l.spec.in_dim),
                    bias: vec![0.0; l.spec.out_dim],
                    slope: l.slope.map(|_| 0.0),
                })
                .collect(),
        }
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Inference pass: no dropout, no randomness.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        let masks = vec![None; self.layers.len()];
        self.forward_with_masks(batch, &masks)
    }

    /// Convenience wrapper returning only the embeddings of an inference pass.
    pub fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch).map(|(out, _)| out)
    }

    /// Training pass: samples inverted-dropout masks from `rng`.
    pub fn forward_train(&self, batch: &Matrix, rng: &mut RandomSource) -> Result<(Matrix, ForwardTrace)> {
        self.check_input(batch)?;
        let masks: Vec<Option<Matrix>> = self
            .layers
            .iter()
            .map(|l| {
                let rate = l.spec.dropout_rate;
                (rate > 0.0).then(|| {
                    let keep = 1.0 / (1.0 - rate);
                    let mut m = Matrix::zeros(batch.rows(), l.spec.out_dim);
                    for v in m.as_mut_slice() {
                        *v = if rng.uniform() < rate { 0.0 } else { keep };
                    }
                    m
                })
            })
            .collect();
        self.forward_with_masks(batch, &masks)
    }

    /// Forward pass with caller-supplied dropout masks (one entry per layer).
    pub fn forward_with_masks(&self, batch: &Matrix, masks: &[Option<Matrix>]) -> Result<(Matrix, ForwardTrace)> {
        self.check_input(batch)?;
        if masks.len() != self.layers.len() {
            return Err(Error::Trace(format!(
                "{} masks for {} layers",
                masks.len(),
                self.layers.len()
            )));
        }
        let mut x = batch.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for (layer, mask) in self.layers.iter().zip(masks) {
            let mut z = Matrix::gemm(&x, false, &layer.weight, true)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            if let Some(m) = mask {
                if m.shape() != z.shape() {
                    return Err(Error::Trace(format!(
                        "mask shape {:?} vs activation shape {:?}",
                        m.shape(),
                        z.shape()
                    )));
                }
                for (v, k) in z.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *v *= k;
                }
            }
            let mut out = z.clone();
            if let Some(a) = layer.slope {
                out.as_mut_slice().iter_mut().for_each(|v| *v = prelu(*v, a));
            }
            traces.push(LayerTrace {
                input: x,
                pre_activation: z,
                mask: mask.clone(),
            });
            x = out;
        }
        let trace = ForwardTrace {
            layers: traces,
            output_shape: x.shape(),
        };
        Ok((x, trace))
    }

    /// Exact gradients of a scalar objective given its gradient w.r.t. the embeddings.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &Matrix) -> Result<Gradients> {
        if trace.layers.len() != self.layers.len() {
            return Err(Error::Trace(format!(
                "trace has {} layers, model has {}",
                trace.layers.len(),
                self.layers.len()
            )));
        }
        for (i, (l, t)) in self.layers.iter().zip(&trace.layers).enumerate() {
            if t.pre_activation.cols() != l.spec.out_dim || t.input.cols() != l.spec.in_dim {
                return Err(Error::Trace(format!("layer {i} shapes differ from the model")));
            }
        }
        if grad_output.shape() != trace.output_shape {
            return Err(Error::Trace(format!(
                "upstream gradient {:?} vs output {:?}",
                grad_output.shape(),
                trace.output_shape
            )));
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.clone();
        for (layer, t) in self.layers.iter().zip(&trace.layers).rev() {
            let mut slope_grad = None;
            if let Some(a) = layer.slope {
                let mut ga = 0.0;
                for (gv, &z) in g.as_mut_slice().iter_mut().zip(t.pre_activation.as_slice()) {
                    if z < 0.0 {
                        ga += *gv * z;
                        *gv *= a;
                    }
                }
                slope_grad = Some(ga);
            }
            if let Some(m) = &t.mask {
                for (gv, k) in g.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *gv *= k;
                }
            }
            let weight = Matrix::gemm(&g, true, &t.input, false)?;
            let mut bias = vec![0.0; layer.spec.out_dim];
            for row in g.iter_rows() {
                for (b, v) in bias.iter_mut().zip(row) {
                    *b += v;
                }
            }
            let g_in = g.matmul(&layer.weight)?;
            grads.push(LayerGrad {
                weight,
                bias,
                slope: slope_grad,
            });
            g = g_in;
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }
}

impl Gradients {
    /// Immutable views in the same order as [`ModelParams::blocks_mut`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 3);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
            if let Some(a) = l.slope.as_ref() {
                out.push(std::slice::from_ref(a));
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
