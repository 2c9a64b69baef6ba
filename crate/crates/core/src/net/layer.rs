use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::invalid(format!(
                "parameter shapes do not match a {in_dim}->{out_dim} layer"
            )));
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite layer parameter".into()));
        }
        Ok(Self { in_dim, out_dim, weights, bias, activation })
    }

    /// He-uniform weights for relu layers, Glorot-uniform for linear ones; zero bias.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / in_dim as f64).sqrt(),
            Activation::None => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self { in_dim, out_dim, weights, bias: vec![0.0; out_dim], activation }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self { in_dim: dim, out_dim: dim, weights, bias: vec![0.0; dim], activation: Activation::None }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix, exec: Exec) -> Result<Matrix> {
        if x.cols() != self.in_dim {
            return Err(Error::invalid(format!(
                "layer expects width {}, got {}",
                self.in_dim,
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.out_dim);
        exec.for_each_chunk(out.data_mut(), self.out_dim, |b, y| {
            let xb = x.row(b);
            for (o, yo) in y.iter_mut().enumerate() {
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = 0.0;
                for (wi, xi) in w.iter().zip(xb) {
                    acc += wi * xi;
                }
                let pre = acc + self.bias[o];
                *yo = match self.activation {
                    Activation::Relu if pre <= 0.0 => 0.0,
                    _ => pre,
                };
            }
        });
        Ok(out)
    }

    /// Gradients given the layer's `input`, its `output` and `∂L/∂output`.
    pub fn backward(
        &self,
        input: &Matrix,
        output: &Matrix,
        upstream: &Matrix,
        exec: Exec,
    ) -> Result<(LayerGrads, Matrix)> {
        if upstream.rows() != output.rows() || upstream.cols() != self.out_dim {
            return Err(Error::contract("upstream gradient shape does not match layer output"));
        }
        let batch = input.rows();
        let mut delta = upstream.clone();
        if self.activation == Activation::Relu {
            for (d, &y) in delta.data_mut().iter_mut().zip(output.data()) {
                if y <= 0.0 {
                    *d = 0.0;
                }
            }
        }

        let mut gw = vec![0.0; self.weights.len()];
        exec.for_each_chunk(&mut gw, self.in_dim, |o, row| {
            for b in 0..batch {
                let d = delta.row(b)[o];
                for (g, xi) in row.iter_mut().zip(input.row(b)) {
                    *g += d * xi;
                }
            }
        });
        let mut gb = vec![0.0; self.out_dim];
        for b in 0..batch {
            for (g, d) in gb.iter_mut().zip(delta.row(b)) {
                *g += d;
            }
        }

        let mut gx = Matrix::zeros(batch, self.in_dim);
        exec.for_each_chunk(gx.data_mut(), self.in_dim, |b, row| {
            for (o, &d) in delta.row(b).iter().enumerate() {
                let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                for (g, wi) in row.iter_mut().zip(w) {
                    *g += d * wi;
                }
            }
        });
        Ok((LayerGrads { weights: gw, bias: gb }, gx))
    }
}
