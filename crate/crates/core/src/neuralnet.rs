//! Fully connected feed-forward network with SELU hidden layers and a linear
//! output layer, hand-written backpropagation and Adam with decoupled weight
//! decay. Batches are matrices with one sample per column.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

pub fn selu(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA * z
    } else {
        SELU_LAMBDA * SELU_ALPHA * z.exp_m1()
    }
}

pub fn selu_prime(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * z.exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Layer {
    fn affine(&self, input: &Matrix) -> Result<Matrix> {
        let mut z = self.weights.matmul(input)?;
        for (i, b) in self.biases.iter().enumerate() {
            for v in z.row_mut(i) {
                *v += b;
            }
        }
        Ok(z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Activations cached by [`Network::forward`] for one backward pass.
#[derive(Debug)]
pub struct Tape {
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Matrix>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// Parameter gradients, laid out like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()))
    }

    /// Every gradient entry, weights before biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.biases);
        }
        out
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.biases.len() != l.weights.rows() {
                return Err(Error::Shape(format!(
                    "layer {i}: {} biases for {} outputs",
                    l.biases.len(),
                    l.weights.rows()
                )));
            }
            if i > 0 && layers[i - 1].weights.rows() != l.weights.cols() {
                return Err(Error::Shape(format!(
                    "layer {i} takes {} inputs but layer {} emits {}",
                    l.weights.cols(),
                    i - 1,
                    layers[i - 1].weights.rows()
                )));
            }
            if !l.weights.is_finite() || l.biases.iter().any(|b| !b.is_finite()) {
                return Err(Error::Numerical(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Network { layers })
    }

    /// All-zero network with the given layer widths `[in, h₁, ..., out]`.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::build(dims, |_, _| 0.0)
    }

    /// LeCun-normal weights `N(0, 1/fan_in)`, zero biases.
    pub fn lecun(dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(dims, |fan_in, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / (fan_in as f64).sqrt()
        })
    }

    fn build(dims: &[usize], mut weight: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid layer widths {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weights: Matrix::from_fn(w[1], w[0], |_, _| weight(w[0], w[1])),
                biases: vec![0.0; w[1]],
            })
            .collect();
        Network::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weights.rows()
    }

    /// Widths `[in, h₁, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weights.rows()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.biases.len()).sum()
    }

    /// `Σ|w|` over weights (biases excluded).
    pub fn weight_l1(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice())
            .map(|w| w.abs())
            .sum()
    }

    /// `Σw²` over weights (biases excluded).
    pub fn weight_sq(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice())
            .map(|w| w * w)
            .sum()
    }

    /// Adds the gradients of `l1·Σ|w| + l2·Σw²` to `grads`.
    pub fn add_regularization_grads(&self, grads: &mut Gradients, l1: f64, l2: f64) {
        for (l, g) in self.layers.iter().zip(&mut grads.layers) {
            for (w, gw) in l.weights.as_slice().iter().zip(g.weights.as_mut_slice()) {
                let sign = if *w > 0.0 {
                    1.0
                } else if *w < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *gw += l1 * sign + 2.0 * l2 * w;
            }
        }
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.rows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {}-row batches, got {}",
                self.input_dim(),
                batch.rows()
            )));
        }
        Ok(())
    }

    /// Forward pass without caching.
    pub fn infer(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut a = self.layers[0].affine(batch)?;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                a = layer.affine(&a)?;
            }
            if i < last {
                a.as_mut_slice().iter_mut().for_each(|v| *v = selu(*v));
            }
        }
        Ok(a)
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Tape)> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&a)?;
            inputs.push(a);
            if i < last {
                let mut act = z.clone();
                act.as_mut_slice().iter_mut().for_each(|v| *v = selu(*v));
                pre.push(z);
                a = act;
            } else {
                a = z;
            }
        }
        Ok((a, Tape { inputs, pre }))
    }

    /// Backpropagates `output_gradient` (∂L/∂output, same shape as the
    /// output) and returns the parameter gradients and ∂L/∂input.
    pub fn backward(&self, tape: Tape, output_gradient: &Matrix) -> Result<(Gradients, Matrix)> {
        if tape.inputs.len() != self.layers.len() || tape.pre.len() + 1 != self.layers.len() {
            return Err(Error::Shape("tape does not match the network depth".into()));
        }
        let batch = tape.batch_size();
        if output_gradient.shape() != (self.output_dim(), batch) {
            return Err(Error::Shape(format!(
                "output gradient is {:?}, expected {:?}",
                output_gradient.shape(),
                (self.output_dim(), batch)
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut delta = output_gradient.clone();
        for i in (0..self.layers.len()).rev() {
            let input = &tape.inputs[i];
            let weights = delta.matmul_t(input)?;
            let biases = (0..delta.rows()).map(|r| delta.row(r).iter().sum()).collect();
            layers.push(LayerGrad { weights, biases });
            let mut back = self.layers[i].weights.t_matmul(&delta)?;
            if i > 0 {
                let z = &tape.pre[i - 1];
                for (d, zv) in back.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *d *= selu_prime(*zv);
                }
            }
            delta = back;
        }
        layers.reverse();
        Ok((Gradients { layers }, delta))
    }
}

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &Network, learning_rate: f64, weight_decay: f64) -> Self {
        let n = net.param_count();
        AdamState {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One Adam step with bias correction; weights (not biases) are also shrunk
/// by `1 − lr·weight_decay`.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if state.m.len() != net.param_count() || grads.layers.len() != net.layers.len() {
        return Err(Error::Shape("optimizer state does not match the network".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let lr = state.learning_rate;
    let shrink = 1.0 - lr * state.weight_decay;
    let mut k = 0;
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        if g.weights.shape() != layer.weights.shape() || g.biases.len() != layer.biases.len() {
            return Err(Error::Shape("gradient does not match the layer shape".into()));
        }
        let params = layer
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(g.weights.as_slice())
            .map(|(p, g)| (p, *g, shrink))
            .chain(layer.biases.iter_mut().zip(&g.biases).map(|(p, g)| (p, *g, 1.0)));
        for (p, g, decay) in params {
            let m = &mut state.m[k];
            let v = &mut state.v[k];
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + state.epsilon);
            k += 1;
        }
    }
    Ok(())
}
