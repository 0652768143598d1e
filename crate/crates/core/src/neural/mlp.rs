//! Fully connected layers with batched forward and backward passes.

use super::NeuralError;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the activation derivative, given the output.
    fn chain(self, grad: &mut Array2<f64>, out: &Array2<f64>) {
        match self {
            Activation::Relu => grad.zip_mut_with(out, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(out, |g, &y| *g *= 1.0 - y * y),
            Activation::Identity => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Uniform fan-in initialization in `±scale/sqrt(in)`, zero biases.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, activation: Activation, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (inputs as f64).sqrt();
        let weights = Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-bound..=bound));
        Self {
            weights,
            biases: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            biases: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs and outputs kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Mlp {
    pub fn init<R: Rng>(sizes: &[usize], activations: &[Activation], scale_last: f64, rng: &mut R) -> Self {
        assert_eq!(sizes.len(), activations.len() + 1, "one activation per layer");
        let n = activations.len();
        let layers = (0..n)
            .map(|i| {
                let scale = if i + 1 == n { scale_last } else { 1.0 };
                Dense::init(sizes[i], sizes[i + 1], activations[i], scale, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Batched forward pass; rows are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<MlpCache, NeuralError> {
        if x.ncols() != self.input_width() {
            return Err(NeuralError::Shape {
                expected: self.input_width(),
                found: x.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for layer in &self.layers {
            let mut z = cur.dot(&layer.weights.t());
            z += &layer.biases;
            layer.activation.apply(&mut z);
            inputs.push(cur);
            cur = z.clone();
            outputs.push(z);
        }
        Ok(MlpCache { inputs, outputs })
    }

    /// Gradients for an upstream gradient on the output, and the gradient
    /// with respect to the input.
    pub fn backward(&self, cache: &MlpCache, d_out: Array2<f64>) -> (Vec<DenseGrad>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.chain(&mut g, &cache.outputs[i]);
            let dw = g.t().dot(&cache.inputs[i]);
            let db = g.sum_axis(Axis(0));
            let dx = g.dot(&layer.weights);
            grads.push(DenseGrad { weights: dw, biases: db });
            g = dx;
        }
        grads.reverse();
        (grads, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mlp = Mlp {
            layers: vec![Dense {
                weights: array![[0.5, -1.0, 2.0], [1.5, 0.0, -0.5]],
                biases: array![0.1, -0.2],
                activation: Activation::Identity,
            }],
        };
        let x = array![[1.0, 2.0, 3.0]];
        let cache = mlp.forward(x.view()).unwrap();
        let up = array![[0.7, -1.3]];
        let (g, dx) = mlp.backward(&cache, up.clone());
        let outer = up.t().dot(&x);
        assert_eq!(g[0].weights, outer);
        assert_eq!(g[0].biases, array![0.7, -1.3]);
        assert_eq!(dx, up.dot(&mlp.layers[0].weights));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mlp = Mlp {
            layers: vec![Dense::zeros(3, 2, Activation::Relu)],
        };
        let err = mlp.forward(array![[1.0, 2.0]].view()).unwrap_err();
        assert!(matches!(err, NeuralError::Shape { expected: 3, found: 2 }));
    }
}
