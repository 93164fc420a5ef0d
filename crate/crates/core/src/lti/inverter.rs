//! The inversion network: a ReLU MLP trained in mini-batches.

use ndarray::{linalg::general_mat_mul, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// What the inverter emits for each of the B samples of an observed batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum OutputHead {
    /// `batch × dim` reals (flattened images).
    Continuous { batch: usize, dim: usize },
    /// `batch × seq_len × vocab` logits.
    Tokens { batch: usize, seq_len: usize, vocab: usize },
}

impl OutputHead {
    pub fn batch(&self) -> usize {
        match *self {
            OutputHead::Continuous { batch, .. } | OutputHead::Tokens { batch, .. } => batch,
        }
    }

    /// Outputs per sample.
    pub fn per_sample(&self) -> usize {
        match *self {
            OutputHead::Continuous { dim, .. } => dim,
            OutputHead::Tokens { seq_len, vocab, .. } => seq_len * vocab,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.batch() * self.per_sample()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InverterSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub head: OutputHead,
}

/// Default hidden width of the desk-scale inverter.
pub const DEFAULT_HIDDEN: usize = 1024;

impl InverterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) || self.head.output_dim() == 0 {
            return Err(Error::InvalidArgument("inverter dimensions must be positive".into()));
        }
        if self.head.batch() == 0 {
            return Err(Error::InvalidArgument("inverter batch size must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        let mut out = Vec::with_capacity(self.hidden.len() + 1);
        let mut offset = 0;
        let mut inputs = self.input_dim;
        for &outputs in self.hidden.iter().chain(std::iter::once(&self.head.output_dim())) {
            out.push(Layer {
                inputs,
                outputs,
                weight: offset,
                bias: offset + inputs * outputs,
            });
            offset += inputs * outputs + outputs;
            inputs = outputs;
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers().last().map(|l| l.bias + l.outputs).unwrap_or(0)
    }

    /// Fan-based uniform weights, zero biases.
    pub fn init_theta(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed);
        let mut theta = vec![0.0; self.num_params()];
        for l in self.layers() {
            let a = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for v in &mut theta[l.weight..l.bias] {
                *v = rng.random_range(-a..=a);
            }
        }
        theta
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Layer {
    fn weights<'a>(&self, theta: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.outputs, self.inputs), &theta[self.weight..self.bias]).expect("layer shape")
    }
}

/// Activations of every layer for one mini-batch; `acts[0]` is the input.
pub(crate) struct Trace {
    pub acts: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("output")
    }
}

pub(crate) fn forward(layers: &[Layer], theta: &[f64], input: Array2<f64>) -> Trace {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input);
    let last = layers.len() - 1;
    for (i, l) in layers.iter().enumerate() {
        let x = acts.last().expect("input");
        let mut z = Array2::<f64>::zeros((x.nrows(), l.outputs));
        let bias = &theta[l.bias..l.bias + l.outputs];
        for mut row in z.rows_mut() {
            row.iter_mut().zip(bias).for_each(|(v, b)| *v = *b);
        }
        general_mat_mul(1.0, x, &l.weights(theta).t(), 1.0, &mut z);
        if i != last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        acts.push(z);
    }
    Trace { acts }
}

/// Gradient of the summed loss with respect to theta given d loss / d output.
pub(crate) fn backward(layers: &[Layer], theta: &[f64], trace: &Trace, d_out: Array2<f64>) -> Vec<f64> {
    let mut grad = vec![0.0; theta.len()];
    let mut d = d_out;
    for (i, l) in layers.iter().enumerate().rev() {
        let x = &trace.acts[i];
        {
            let mut gw = ndarray::ArrayViewMut2::from_shape((l.outputs, l.inputs), &mut grad[l.weight..l.bias])
                .expect("layer shape");
            general_mat_mul(1.0, &d.t(), x, 0.0, &mut gw);
        }
        for (g, s) in grad[l.bias..l.bias + l.outputs].iter_mut().zip(d.sum_axis(Axis(0))) {
            *g = s;
        }
        if i > 0 {
            let mut dx = Array2::<f64>::zeros((d.nrows(), l.inputs));
            general_mat_mul(1.0, &d, &l.weights(theta), 0.0, &mut dx);
            dx.zip_mut_with(x, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            d = dx;
        }
    }
    grad
}
