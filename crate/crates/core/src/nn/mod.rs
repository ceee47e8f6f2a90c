//! Minimal differentiable feed-forward core.
//!
//! Only what the agent's fixed architectures need: dense layers, a handful of
//! pointwise activations, AvgL1Norm, two regression losses, reverse-mode
//! gradients through an explicit [`Tape`], and Adam.

mod activation;
mod adam;
mod linear;
mod loss;
mod mlp;
mod scalar;

pub use activation::{avg_l1_norm, avg_l1_norm_backward, Activation, AVG_L1_EPS};
pub use adam::{Adam, AdamConfig};
pub use linear::Linear;
pub use loss::{huber, huber_grad, HUBER_THRESHOLD};
pub use mlp::{Mlp, MlpSpec, Tape};
pub use scalar::Scalar;

/// Flat access to every parameter tensor of a network, in a fixed order.
///
/// Gradients are represented by a value of the same type as the parameters,
/// so shapes line up by construction.
pub trait Parameters<S: Scalar> {
    fn tensors(&self) -> Vec<&[S]>;
    fn tensors_mut(&mut self) -> Vec<&mut [S]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    /// `self += other`, elementwise.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }

    fn scale(&mut self, factor: S) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Copies parameter values from a structurally identical network.
    fn copy_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.copy_from_slice(src);
        }
    }

    /// `self ← (1 - tau)·self + tau·other`.
    fn polyak_from(&mut self, other: &Self, tau: S)
    where
        Self: Sized,
    {
        let keep = S::one() - tau;
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = keep * *d + tau * *s;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// FNV-1a over the little-endian bytes of every parameter; used to check
    /// that a network was left untouched.
    fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for t in self.tensors() {
            for v in t {
                bytes.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        crate::rng::fnv1a64(&bytes)
    }
}
