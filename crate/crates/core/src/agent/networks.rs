//! Value function and policy built on top of (optional) embeddings.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::config::{PolicyInputs, ValueInputs};
use crate::error::{check_dim, Error, Result};
use crate::nn::{Activation, Mlp, MlpSpec, Parameters, Scalar, Tape};
use crate::rng::Rng;

/// Inputs to a value network for one batch. Components the network does not
/// read may be `None`.
#[derive(Clone, Copy)]
pub struct ValueArgs<'a, S> {
    pub zsa: Option<ArrayView2<'a, S>>,
    pub zs: Option<ArrayView2<'a, S>>,
    pub state: ArrayView2<'a, S>,
    pub action: ArrayView2<'a, S>,
}

pub struct ValuePass<S> {
    phi: Option<Tape<S>>,
    trunk: Tape<S>,
    pub q: Array1<S>,
}

/// Gradient of a value network plus the gradients w.r.t. its inputs.
pub struct ValueGrads<S> {
    pub params: ValueNet<S>,
    pub d_zsa: Option<Array2<S>>,
    pub d_zs: Option<Array2<S>>,
    pub d_action: Array2<S>,
}

/// `Q(zsa, zs, s, a)`: an optional linear-then-norm layer `φ` over `(s, a)`,
/// concatenated with the embeddings as `[zsa, zs, φ]`, followed by a
/// three-layer trunk.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueNet<S> {
    pub phi: Option<Mlp<S>>,
    pub trunk: Mlp<S>,
    inputs: ValueInputs,
    /// Plain `Q(s, a)`: the trunk reads `(s, a)` directly, without `φ`.
    raw: bool,
    dims: (usize, usize, usize, usize),
}

#[derive(Clone, Copy, Debug)]
pub struct NetShape {
    pub state_dim: usize,
    pub action_dim: usize,
    pub zs_dim: usize,
    pub zsa_dim: usize,
    pub hidden_dim: usize,
}

impl<S: Scalar> ValueNet<S> {
    pub fn new(
        shape: NetShape,
        inputs: ValueInputs,
        raw: bool,
        normalize_phi: bool,
        hidden: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let h = shape.hidden_dim;
        let sa = shape.state_dim + shape.action_dim;
        let trunk_acts = vec![hidden, hidden, Activation::Identity];
        let (phi, trunk_in) = if raw {
            (None, sa)
        } else {
            if !(inputs.zsa || inputs.zs || inputs.state_action) {
                return Err(Error::config("value network has no inputs"));
            }
            let phi = if inputs.state_action {
                let act = if normalize_phi {
                    Activation::AvgL1Norm
                } else {
                    Activation::Identity
                };
                Some(Mlp::new(MlpSpec::new(vec![sa, h], vec![act])?, rng))
            } else {
                None
            };
            let width = usize::from(inputs.zsa) * shape.zsa_dim
                + usize::from(inputs.zs) * shape.zs_dim
                + usize::from(inputs.state_action) * h;
            (phi, width)
        };
        let trunk = Mlp::new(MlpSpec::new(vec![trunk_in, h, h, 1], trunk_acts)?, rng);
        Ok(ValueNet {
            phi,
            trunk,
            inputs,
            raw,
            dims: (shape.state_dim, shape.action_dim, shape.zs_dim, shape.zsa_dim),
        })
    }

    pub fn inputs(&self) -> ValueInputs {
        self.inputs
    }

    pub fn is_raw(&self) -> bool {
        self.raw
    }

    pub fn zeros_like(&self) -> Self {
        ValueNet {
            phi: self.phi.as_ref().map(Mlp::zeros_like),
            trunk: self.trunk.zeros_like(),
            inputs: self.inputs,
            raw: self.raw,
            dims: self.dims,
        }
    }

    fn trunk_input(&self, args: &ValueArgs<'_, S>, phi_out: Option<&Array2<S>>) -> Result<Array2<S>> {
        let (sd, ad, zs_dim, zsa_dim) = self.dims;
        check_dim("value state width", sd, args.state.ncols())?;
        check_dim("value action width", ad, args.action.ncols())?;
        check_dim("value batch", args.state.nrows(), args.action.nrows())?;
        if self.raw {
            return Ok(concatenate(Axis(1), &[args.state, args.action]).expect("matching rows"));
        }
        let mut parts: Vec<ArrayView2<'_, S>> = Vec::with_capacity(3);
        if self.inputs.zsa {
            let zsa = args.zsa.ok_or_else(|| Error::usage("value network needs zsa"))?;
            check_dim("value zsa width", zsa_dim, zsa.ncols())?;
            parts.push(zsa);
        }
        if self.inputs.zs {
            let zs = args.zs.ok_or_else(|| Error::usage("value network needs zs"))?;
            check_dim("value zs width", zs_dim, zs.ncols())?;
            parts.push(zs);
        }
        if let Some(p) = phi_out {
            parts.push(p.view());
        }
        for p in &parts {
            check_dim("value batch", args.state.nrows(), p.nrows())?;
        }
        Ok(concatenate(Axis(1), &parts).expect("checked rows"))
    }

    fn sa(args: &ValueArgs<'_, S>) -> Array2<S> {
        concatenate(Axis(1), &[args.state, args.action]).expect("matching rows")
    }

    pub fn predict(&self, args: ValueArgs<'_, S>) -> Result<Array1<S>> {
        let phi_out = match &self.phi {
            Some(phi) if !self.raw => {
                check_dim("value batch", args.state.nrows(), args.action.nrows())?;
                Some(phi.predict(Self::sa(&args).view())?)
            }
            _ => None,
        };
        let x = self.trunk_input(&args, phi_out.as_ref())?;
        Ok(self.trunk.predict(x.view())?.column(0).to_owned())
    }

    pub fn forward(&self, args: ValueArgs<'_, S>) -> Result<ValuePass<S>> {
        let phi = match &self.phi {
            Some(phi) if !self.raw => {
                check_dim("value batch", args.state.nrows(), args.action.nrows())?;
                Some(phi.forward(Self::sa(&args).view())?)
            }
            _ => None,
        };
        let x = self.trunk_input(&args, phi.as_ref().map(Tape::output))?;
        let trunk = self.trunk.forward(x.view())?;
        let q = trunk.output().column(0).to_owned();
        Ok(ValuePass { phi, trunk, q })
    }

    pub fn backward(&self, pass: &ValuePass<S>, d_q: ArrayView1<'_, S>) -> Result<ValueGrads<S>> {
        check_dim("value gradient batch", pass.q.len(), d_q.len())?;
        let (_, ad, zs_dim, zsa_dim) = self.dims;
        let sd = self.dims.0;
        let d_out = d_q.to_owned().insert_axis(Axis(1));
        let (trunk_grads, d_in) = self.trunk.backward(&pass.trunk, d_out.view())?;
        let mut params = self.zeros_like();
        params.trunk = trunk_grads;
        if self.raw {
            return Ok(ValueGrads {
                params,
                d_zsa: None,
                d_zs: None,
                d_action: d_in.slice(s![.., sd..]).to_owned(),
            });
        }
        let mut offset = 0;
        let mut take = |width: usize| {
            let block = d_in.slice(s![.., offset..offset + width]).to_owned();
            offset += width;
            block
        };
        let d_zsa = self.inputs.zsa.then(|| take(zsa_dim));
        let d_zs = self.inputs.zs.then(|| take(zs_dim));
        let d_action = match (&self.phi, &pass.phi) {
            (Some(phi), Some(tape)) => {
                let d_phi = take(phi.output_dim());
                let (phi_grads, d_sa) = phi.backward(tape, d_phi.view())?;
                params.phi = Some(phi_grads);
                d_sa.slice(s![.., sd..]).to_owned()
            }
            _ => Array2::zeros((d_q.len(), ad)),
        };
        Ok(ValueGrads {
            params,
            d_zsa,
            d_zs,
            d_action,
        })
    }
}

impl<S: Scalar> Parameters<S> for ValueNet<S> {
    fn tensors(&self) -> Vec<&[S]> {
        let mut t = self.phi.as_ref().map(|p| p.tensors()).unwrap_or_default();
        t.extend(self.trunk.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut t = self.phi.as_mut().map(|p| p.tensors_mut()).unwrap_or_default();
        t.extend(self.trunk.tensors_mut());
        t
    }
}

pub struct PolicyPass<S> {
    phi: Option<Tape<S>>,
    trunk: Tape<S>,
}

impl<S> PolicyPass<S> {
    pub fn action(&self) -> &Array2<S> {
        self.trunk.output()
    }
}

/// `π(zs, s)`: optional linear-then-norm `φ` over `s`, concatenated as
/// `[zs, φ]`, then ReLU, ReLU and a tanh output.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet<S> {
    pub phi: Option<Mlp<S>>,
    pub trunk: Mlp<S>,
    inputs: PolicyInputs,
    raw: bool,
    dims: (usize, usize, usize),
}

impl<S: Scalar> PolicyNet<S> {
    pub fn new(shape: NetShape, inputs: PolicyInputs, raw: bool, normalize_phi: bool, rng: &mut Rng) -> Result<Self> {
        let h = shape.hidden_dim;
        let acts = vec![Activation::Relu, Activation::Relu, Activation::Tanh];
        let (phi, trunk_in) = if raw {
            (None, shape.state_dim)
        } else {
            if !(inputs.zs || inputs.state) {
                return Err(Error::config("policy network has no inputs"));
            }
            let phi = if inputs.state {
                let act = if normalize_phi {
                    Activation::AvgL1Norm
                } else {
                    Activation::Identity
                };
                Some(Mlp::new(MlpSpec::new(vec![shape.state_dim, h], vec![act])?, rng))
            } else {
                None
            };
            (phi, usize::from(inputs.zs) * shape.zs_dim + usize::from(inputs.state) * h)
        };
        let trunk = Mlp::new(MlpSpec::new(vec![trunk_in, h, h, shape.action_dim], acts)?, rng);
        Ok(PolicyNet {
            phi,
            trunk,
            inputs,
            raw,
            dims: (shape.state_dim, shape.action_dim, shape.zs_dim),
        })
    }

    pub fn inputs(&self) -> PolicyInputs {
        self.inputs
    }

    pub fn reads_zs(&self) -> bool {
        !self.raw && self.inputs.zs
    }

    pub fn action_dim(&self) -> usize {
        self.dims.1
    }

    pub fn zeros_like(&self) -> Self {
        PolicyNet {
            phi: self.phi.as_ref().map(Mlp::zeros_like),
            trunk: self.trunk.zeros_like(),
            inputs: self.inputs,
            raw: self.raw,
            dims: self.dims,
        }
    }

    fn trunk_input(&self, zs: Option<ArrayView2<'_, S>>, state: ArrayView2<'_, S>, phi_out: Option<&Array2<S>>) -> Result<Array2<S>> {
        let (sd, _, zs_dim) = self.dims;
        check_dim("policy state width", sd, state.ncols())?;
        if self.raw {
            return Ok(state.to_owned());
        }
        let mut parts: Vec<ArrayView2<'_, S>> = Vec::with_capacity(2);
        if self.inputs.zs {
            let zs = zs.ok_or_else(|| Error::usage("policy needs zs"))?;
            check_dim("policy zs width", zs_dim, zs.ncols())?;
            check_dim("policy batch", state.nrows(), zs.nrows())?;
            parts.push(zs);
        }
        if let Some(p) = phi_out {
            parts.push(p.view());
        }
        Ok(concatenate(Axis(1), &parts).expect("checked rows"))
    }

    pub fn predict(&self, zs: Option<ArrayView2<'_, S>>, state: ArrayView2<'_, S>) -> Result<Array2<S>> {
        let phi_out = match &self.phi {
            Some(phi) if !self.raw => Some(phi.predict(state)?),
            _ => None,
        };
        let x = self.trunk_input(zs, state, phi_out.as_ref())?;
        self.trunk.predict(x.view())
    }

    pub fn forward(&self, zs: Option<ArrayView2<'_, S>>, state: ArrayView2<'_, S>) -> Result<PolicyPass<S>> {
        let phi = match &self.phi {
            Some(phi) if !self.raw => Some(phi.forward(state)?),
            _ => None,
        };
        let x = self.trunk_input(zs, state, phi.as_ref().map(Tape::output))?;
        let trunk = self.trunk.forward(x.view())?;
        Ok(PolicyPass { phi, trunk })
    }

    /// Parameter gradient for `∂L/∂a`. Embedding inputs are treated as
    /// constants.
    pub fn backward(&self, pass: &PolicyPass<S>, d_action: ArrayView2<'_, S>) -> Result<PolicyNet<S>> {
        let (trunk_grads, d_in) = self.trunk.backward(&pass.trunk, d_action)?;
        let mut params = self.zeros_like();
        params.trunk = trunk_grads;
        if let (Some(phi), Some(tape)) = (&self.phi, &pass.phi) {
            let start = usize::from(self.inputs.zs) * self.dims.2;
            let d_phi = d_in.slice(s![.., start..]);
            let (phi_grads, _) = phi.backward(tape, d_phi)?;
            params.phi = Some(phi_grads);
        }
        Ok(params)
    }
}

impl<S: Scalar> Parameters<S> for PolicyNet<S> {
    fn tensors(&self) -> Vec<&[S]> {
        let mut t = self.phi.as_ref().map(|p| p.tensors()).unwrap_or_default();
        t.extend(self.trunk.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut t = self.phi.as_mut().map(|p| p.tensors_mut()).unwrap_or_default();
        t.extend(self.trunk.tensors_mut());
        t
    }
}
