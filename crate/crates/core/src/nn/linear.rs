use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{Parameters, Scalar};
use crate::rng::{self, Rng};

/// Dense layer `y = x·Wᵀ + b`; `weight` is `[out_dim, in_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S> {
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

impl<S: Scalar> Linear<S> {
    /// Uniform(-1/√fan_in, 1/√fan_in) for both weights and biases.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out_dim, in_dim), || {
            S::of(rng::uniform(rng, -bound, bound))
        });
        let bias = Array1::from_shape_simple_fn(out_dim, || S::of(rng::uniform(rng, -bound, bound)));
        Linear { weight, bias }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, S>) -> Array2<S> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Returns `(∂L/∂params, ∂L/∂x)` given the layer input and `∂L/∂y`.
    pub fn backward(&self, x: ArrayView2<'_, S>, dy: ArrayView2<'_, S>) -> (Linear<S>, Array2<S>) {
        let grads = Linear {
            weight: dy.t().dot(&x).as_standard_layout().into_owned(),
            bias: dy.sum_axis(Axis(0)),
        };
        (grads, dy.dot(&self.weight))
    }
}

impl<S: Scalar> Parameters<S> for Linear<S> {
    fn tensors(&self) -> Vec<&[S]> {
        vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Linear {
            weight: Array2::<f64>::eye(2),
            bias: Array1::zeros(2),
        };
        let y = layer.forward(array![[1.0, 2.0]].view());
        assert_eq!(y, array![[1.0, 2.0]]);
    }

    #[test]
    fn scalar_product_rule() {
        // y = w·x, w = 3, x = 2, dy = 1 -> dW = 2, dx = 3
        let layer = Linear {
            weight: array![[3.0f64]],
            bias: array![0.0],
        };
        let x = array![[2.0]];
        let (g, dx) = layer.backward(x.view(), array![[1.0]].view());
        assert_eq!(g.weight[[0, 0]], 2.0);
        assert_eq!(g.bias[0], 1.0);
        assert_eq!(dx[[0, 0]], 3.0);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = crate::rng::substream(0, "init");
        let layer = Linear::<f32>::new(16, 8, &mut rng);
        let bound = 0.25f32;
        assert!(layer.weight.iter().chain(layer.bias.iter()).all(|v| v.abs() <= bound));
        assert_eq!(layer.weight.dim(), (8, 16));
    }
}
