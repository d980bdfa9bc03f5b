//! Toy networks with analytic per-sample gradients: a linear classifier or a
//! one-hidden-layer tanh network. Each layer's weight matrix carries its bias
//! as the last column, applied to the input with a trailing 1 appended.

use crate::data::Dataset;
use crate::error::{Result, RgpError};
use nalgebra::{DMatrix, DVector, DVectorView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Softmax with cross-entropy loss.
    Softmax,
    /// Identity output with loss `½‖z − onehot(y)‖²`.
    Squared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    layers: Vec<DMatrix<f64>>,
    head: Head,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Augmented input of each layer, `[a; 1]`.
    pub inputs: Vec<DVector<f64>>,
    /// Hidden activations before the bias entry (empty for a linear model).
    pub hidden: Vec<DVector<f64>>,
    /// Raw output of the last layer.
    pub output: DVector<f64>,
}

fn augment(x: DVectorView<'_, f64>) -> DVector<f64> {
    let mut a = DVector::zeros(x.len() + 1);
    a.rows_mut(0, x.len()).copy_from(&x);
    a[x.len()] = 1.0;
    a
}

fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let max = z.max();
    let e = z.map(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

impl ToyModel {
    /// Zero-initialised linear model.
    pub fn linear(input_dim: usize, classes: usize, head: Head) -> Self {
        Self { layers: vec![DMatrix::zeros(classes, input_dim + 1)], head }
    }

    /// One hidden tanh layer, Gaussian init scaled by `1/√fan_in`, zero biases.
    pub fn mlp(input_dim: usize, hidden: usize, classes: usize, head: Head, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |rows: usize, fan_in: usize| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            DMatrix::from_fn(rows, fan_in + 1, |_, j| {
                let g: f64 = StandardNormal.sample(&mut rng);
                if j == fan_in {
                    0.0
                } else {
                    g * scale
                }
            })
        };
        let w1 = init(hidden, input_dim);
        let w2 = init(classes, hidden);
        Self { layers: vec![w1, w2], head }
    }

    /// One or two layers whose shapes chain with the bias column.
    pub fn from_layers(layers: Vec<DMatrix<f64>>, head: Head) -> Result<Self> {
        if layers.is_empty() || layers.len() > 2 {
            return Err(RgpError::InvalidConfig(format!("expected 1 or 2 layers, got {}", layers.len())));
        }
        if layers.len() == 2 && layers[1].ncols() != layers[0].nrows() + 1 {
            return Err(RgpError::ShapeMismatch {
                context: "layer chaining",
                expected: (layers[1].nrows(), layers[0].nrows() + 1),
                found: layers[1].shape(),
            });
        }
        Ok(Self { layers, head })
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].ncols() - 1
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].nrows()
    }

    pub fn forward(&self, x: DVectorView<'_, f64>) -> Forward {
        let mut inputs = vec![augment(x)];
        let mut hidden = Vec::new();
        let mut z = &self.layers[0] * &inputs[0];
        for w in &self.layers[1..] {
            let h = z.map(f64::tanh);
            inputs.push(augment(h.column(0)));
            hidden.push(h);
            z = w * inputs.last().unwrap();
        }
        Forward { inputs, hidden, output: z }
    }

    fn target(&self, label: usize) -> DVector<f64> {
        let mut t = DVector::zeros(self.classes());
        t[label] = 1.0;
        t
    }

    pub fn loss(&self, x: DVectorView<'_, f64>, label: usize) -> f64 {
        let z = self.forward(x).output;
        match self.head {
            Head::Softmax => {
                let max = z.max();
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - z[label]
            }
            Head::Squared => 0.5 * (z - self.target(label)).norm_squared(),
        }
    }

    pub fn predict(&self, x: DVectorView<'_, f64>) -> usize {
        self.forward(x).output.argmax().0
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = (0..data.len()).filter(|&i| self.predict(data.sample(i)) == data.label(i)).count();
        correct as f64 / data.len() as f64
    }

    pub fn mean_loss(&self, data: &Dataset) -> f64 {
        (0..data.len()).map(|i| self.loss(data.sample(i), data.label(i))).sum::<f64>() / data.len() as f64
    }

    /// Backpropagated error at each layer's output; the layer's weight
    /// gradient is `δ_l · inputs[l]ᵀ`.
    pub fn backward(&self, forward: &Forward, label: usize) -> Vec<DVector<f64>> {
        let top = match self.head {
            Head::Softmax => softmax(&forward.output) - self.target(label),
            Head::Squared => &forward.output - self.target(label),
        };
        let mut deltas = vec![top];
        for l in (1..self.layers.len()).rev() {
            let w = &self.layers[l];
            let h = &forward.hidden[l - 1];
            let upstream = w.columns(0, h.len()).transpose() * &deltas[0];
            let d = upstream.component_mul(&h.map(|v| 1.0 - v * v));
            deltas.insert(0, d);
        }
        deltas
    }

    /// Full per-sample weight gradients, one per layer.
    pub fn weight_gradients(&self, x: DVectorView<'_, f64>, label: usize) -> Vec<DMatrix<f64>> {
        let f = self.forward(x);
        self.backward(&f, label).iter().zip(&f.inputs).map(|(d, a)| d * a.transpose()).collect()
    }
}
