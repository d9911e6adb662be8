use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Dense affine map `x -> W x + b` with `W` shaped `d_out x d_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    weight: Matrix,
    // d_out x 1, kept as a matrix so the tape can borrow it directly.
    bias: Matrix,
}

impl LinearLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(
                "LinearLayer::new",
                format!(
                    "bias has {} entries, weight is {}x{}",
                    bias.len(),
                    weight.rows(),
                    weight.cols()
                ),
            ));
        }
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(Error::invalid("LinearLayer needs d_in, d_out >= 1"));
        }
        let bias = Matrix::from_vec(bias.len(), 1, bias)?;
        Ok(Self { weight, bias })
    }

    /// Uniform init in `±1/sqrt(d_in)` for both weight and bias.
    pub fn init_uniform<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self {
            weight: Matrix::random_uniform(d_out, d_in, bound, rng),
            bias: Matrix::random_uniform(d_out, 1, bound, rng),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(d_out, d_in),
            bias: Matrix::zeros(d_out, 1),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            weight: Matrix::identity(d),
            bias: Matrix::zeros(d, 1),
        }
    }

    #[inline]
    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        self.bias.as_slice()
    }

    pub(crate) fn bias_matrix(&self) -> &Matrix {
        &self.bias
    }

    pub(crate) fn weight_mut(&mut self) -> &mut Matrix {
        &mut self.weight
    }

    pub(crate) fn bias_matrix_mut(&mut self) -> &mut Matrix {
        &mut self.bias
    }

    pub fn param_count(&self) -> usize {
        self.d_out() * self.d_in() + self.d_out()
    }

    /// `2 * d_in * d_out` per frame; bias adds are not counted.
    pub fn flops(&self, frames: usize) -> u64 {
        2 * (self.d_in() * self.d_out() * frames) as u64
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        linear_forward(self, x)
    }
}

/// `out[i, t] = sum_j W[i, j] x[j, t] + b[i]`.
pub fn linear_forward(layer: &LinearLayer, x: &Matrix) -> Result<Matrix> {
    if x.rows() != layer.d_in() {
        return Err(Error::shape(
            "linear_forward",
            format!(
                "layer {}->{} given input with {} rows",
                layer.d_in(),
                layer.d_out(),
                x.rows()
            ),
        ));
    }
    layer.weight.matmul(x)?.add_column(layer.bias())
}
