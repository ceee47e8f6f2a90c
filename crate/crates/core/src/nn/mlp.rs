use ndarray::{Array2, ArrayView2};

use super::{Activation, Linear, Parameters, Scalar};
use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

/// Layer widths and the activation applied after each layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("an MLP needs at least an input and an output width"));
        }
        if dims.contains(&0) {
            return Err(Error::config(format!("layer widths must be positive: {dims:?}")));
        }
        check_dim("MlpSpec activations", dims.len() - 1, activations.len())?;
        Ok(MlpSpec { dims, activations })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty")
    }
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape<S> {
    inputs: Vec<Array2<S>>,
    pre: Vec<Array2<S>>,
    output: Array2<S>,
}

impl<S> Tape<S> {
    pub fn output(&self) -> &Array2<S> {
        &self.output
    }

    pub fn into_output(self) -> Array2<S> {
        self.output
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    spec: MlpSpec,
    layers: Vec<Linear<S>>,
}

impl<S: Scalar> Mlp<S> {
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Self {
        let layers = spec
            .dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Mlp { spec, layers }
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Linear<S>>) -> Result<Self> {
        check_dim("Mlp layers", spec.dims.len() - 1, layers.len())?;
        for (l, w) in layers.iter().zip(spec.dims.windows(2)) {
            check_dim("Mlp layer input", w[0], l.in_dim())?;
            check_dim("Mlp layer output", w[1], l.out_dim())?;
        }
        Ok(Mlp { spec, layers })
    }

    /// A zero-valued network of the same shape, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Mlp {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.in_dim(), l.out_dim()))
                .collect(),
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Linear<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear<S>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn check_input(&self, x: &ArrayView2<'_, S>) -> Result<()> {
        check_dim("Mlp input width", self.input_dim(), x.ncols())?;
        if x.nrows() == 0 {
            return Err(Error::config("empty batch"));
        }
        Ok(())
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, x: ArrayView2<'_, S>) -> Result<Array2<S>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            let pre = layer.forward(h.view());
            h = act.apply(pre.view());
        }
        Ok(h)
    }

    pub fn forward(&self, x: ArrayView2<'_, S>) -> Result<Tape<S>> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            let p = layer.forward(h.view());
            let out = act.apply(p.view());
            inputs.push(h);
            pre.push(p);
            h = out;
        }
        Ok(Tape {
            inputs,
            pre,
            output: h,
        })
    }

    /// Reverse pass. Returns parameter gradients and `∂L/∂input`.
    pub fn backward(&self, tape: &Tape<S>, d_out: ArrayView2<'_, S>) -> Result<(Mlp<S>, Array2<S>)> {
        if tape.pre.len() != self.layers.len() || d_out.dim() != tape.output.dim() {
            return Err(Error::Dimension {
                context: "Mlp backward gradient",
                expected: tape.output.ncols(),
                actual: d_out.ncols(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let out = if i + 1 == self.layers.len() {
                tape.output.view()
            } else {
                tape.inputs[i + 1].view()
            };
            let d_pre = self.spec.activations[i].backward(tape.pre[i].view(), out, delta.view());
            let (g, dx) = self.layers[i].backward(tape.inputs[i].view(), d_pre.view());
            grads.push(g);
            delta = dx;
        }
        grads.reverse();
        Ok((
            Mlp {
                spec: self.spec.clone(),
                layers: grads,
            },
            delta,
        ))
    }
}

impl<S: Scalar> Parameters<S> for Mlp<S> {
    fn tensors(&self) -> Vec<&[S]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}
