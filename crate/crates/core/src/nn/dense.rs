use serde::{Deserialize, Serialize};

use super::params::{join, Block, BlockMut, ParamSet};
use crate::error::{Error, Result};
use crate::numcore::{affine, sigmoid, Rng, Tensor1D, Tensor2D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            _ => return None,
        })
    }
}

/// `y = act(W^T x + b)` with `W: in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor2D,
    pub bias: Tensor1D,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Tensor1D,
    pre: Tensor1D,
    out: Tensor1D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub weights: Tensor2D,
    pub bias: Tensor1D,
}

impl DenseLayer {
    pub fn new(weights: Tensor2D, bias: Tensor1D, activation: Activation) -> Result<Self> {
        if weights.cols() != bias.len() {
            return Err(Error::shape(
                "DenseLayer::new",
                format!("W {}x{}", weights.rows(), weights.cols()),
                format!("b len {}", bias.len()),
            ));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor2D::zeros(input, output),
            bias: vec![0.0; output],
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        Self {
            weights: Tensor2D::glorot_uniform(input, output, rng),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Tensor1D, DenseCache)> {
        let pre = affine(&self.weights, x, &self.bias)?;
        let out: Tensor1D = pre.iter().map(|&z| self.activation.apply(z)).collect();
        let cache = DenseCache {
            input: x.to_vec(),
            pre,
            out: out.clone(),
        };
        Ok((out, cache))
    }

    /// Returns the gradient w.r.t. the input; parameter gradients are added
    /// into `grads`.
    pub fn backward_into(
        &self,
        cache: &DenseCache,
        upstream: &[f64],
        grads: &mut DenseGrads,
    ) -> Result<Tensor1D> {
        if upstream.len() != self.output_dim() || cache.input.len() != self.input_dim() {
            return Err(Error::shape(
                "dense_backward",
                format!("layer {}x{}", self.input_dim(), self.output_dim()),
                format!("upstream len {}, cached input len {}", upstream.len(), cache.input.len()),
            ));
        }
        let dpre: Tensor1D = upstream
            .iter()
            .zip(cache.pre.iter().zip(&cache.out))
            .map(|(g, (&z, &y))| g * self.activation.derivative(z, y))
            .collect();
        grads.weights.add_outer(&cache.input, &dpre);
        for (b, d) in grads.bias.iter_mut().zip(&dpre) {
            *b += d;
        }
        let mut dx = vec![0.0; self.input_dim()];
        self.weights.matvec_acc(&dpre, &mut dx);
        Ok(dx)
    }

    pub fn backward(&self, cache: &DenseCache, upstream: &[f64]) -> Result<(Tensor1D, DenseGrads)> {
        let mut grads = DenseGrads::zeros_like(self);
        let dx = self.backward_into(cache, upstream, &mut grads)?;
        Ok((dx, grads))
    }
}

impl DenseGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: Tensor2D::zeros(layer.input_dim(), layer.output_dim()),
            bias: vec![0.0; layer.output_dim()],
        }
    }
}

macro_rules! dense_blocks {
    ($ty:ty) => {
        impl ParamSet for $ty {
            fn blocks(&self, prefix: &str) -> Vec<Block<'_>> {
                vec![
                    Block {
                        name: join(prefix, "weights"),
                        shape: self.weights.shape(),
                        data: self.weights.data(),
                    },
                    Block {
                        name: join(prefix, "bias"),
                        shape: (1, self.bias.len()),
                        data: &self.bias,
                    },
                ]
            }

            fn blocks_mut(&mut self, prefix: &str) -> Vec<BlockMut<'_>> {
                let shape = self.weights.shape();
                let blen = self.bias.len();
                vec![
                    BlockMut {
                        name: join(prefix, "weights"),
                        shape,
                        data: self.weights.data_mut(),
                    },
                    BlockMut {
                        name: join(prefix, "bias"),
                        shape: (1, blen),
                        data: &mut self.bias,
                    },
                ]
            }
        }
    };
}

dense_blocks!(DenseLayer);
dense_blocks!(DenseGrads);
