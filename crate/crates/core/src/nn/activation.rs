use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};

use super::Scalar;
use crate::error::Error;

/// Floor on the mean absolute value in AvgL1Norm; keeps the zero vector finite.
pub const AVG_L1_EPS: f64 = 1e-8;

/// Pointwise (or row-wise, for `AvgL1Norm`) function applied after a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Elu,
    Tanh,
    AvgL1Norm,
}

impl Activation {
    pub fn apply<S: Scalar>(self, pre: ArrayView2<'_, S>) -> Array2<S> {
        match self {
            Activation::Identity => pre.to_owned(),
            Activation::Relu => pre.mapv(|v| v.max(S::zero())),
            Activation::Elu => pre.mapv(|v| if v > S::zero() { v } else { v.exp_m1() }),
            Activation::Tanh => pre.mapv(|v| v.tanh()),
            Activation::AvgL1Norm => avg_l1_norm(pre),
        }
    }

    /// `∂L/∂pre` from `∂L/∂out`, given the cached pre- and post-activation.
    pub fn backward<S: Scalar>(
        self,
        pre: ArrayView2<'_, S>,
        out: ArrayView2<'_, S>,
        d_out: ArrayView2<'_, S>,
    ) -> Array2<S> {
        match self {
            Activation::Identity => d_out.to_owned(),
            Activation::Relu => Zip::from(&pre)
                .and(&d_out)
                .map_collect(|&p, &g| if p > S::zero() { g } else { S::zero() }),
            // d/dx (e^x - 1) = e^x = out + 1 on the negative branch
            Activation::Elu => Zip::from(&pre)
                .and(&out)
                .and(&d_out)
                .map_collect(|&p, &o, &g| if p > S::zero() { g } else { g * (o + S::one()) }),
            Activation::Tanh => Zip::from(&out)
                .and(&d_out)
                .map_collect(|&o, &g| g * (S::one() - o * o)),
            Activation::AvgL1Norm => avg_l1_norm_backward(pre, d_out),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
            Activation::AvgL1Norm => "avg_l1_norm",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "elu" => Activation::Elu,
            "tanh" => Activation::Tanh,
            "avg_l1_norm" => Activation::AvgL1Norm,
            other => return Err(Error::config(format!("unknown activation `{other}`"))),
        })
    }
}

fn row_scale<S: Scalar>(row: ndarray::ArrayView1<'_, S>) -> (S, bool) {
    let n = S::of(row.len() as f64);
    let mean_abs = row.iter().map(|v| v.abs()).sum::<S>() / n;
    let eps = S::of(AVG_L1_EPS);
    if mean_abs > eps {
        (mean_abs, true)
    } else {
        (eps, false)
    }
}

/// Row-wise `x / max(mean|x|, ε)`.
pub fn avg_l1_norm<S: Scalar>(x: ArrayView2<'_, S>) -> Array2<S> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let (m, _) = row_scale(row.view());
        row.mapv_inplace(|v| v / m);
    }
    out
}

/// Backward pass of [`avg_l1_norm`] through the mean.
///
/// With `m = mean|x|`: `∂y_j/∂x_k = δ_jk/m − x_j·sign(x_k)/(N·m²)`. When the
/// ε floor is active `m` is constant and only the first term remains.
pub fn avg_l1_norm_backward<S: Scalar>(x: ArrayView2<'_, S>, d_out: ArrayView2<'_, S>) -> Array2<S> {
    let n = S::of(x.ncols() as f64);
    let mut dx = Array2::zeros(x.raw_dim());
    for ((xr, gr), mut dr) in x.rows().into_iter().zip(d_out.rows()).zip(dx.rows_mut()) {
        let (m, active) = row_scale(xr);
        let dot: S = xr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
        let coeff = if active { dot / (n * m * m) } else { S::zero() };
        for ((d, &xv), &g) in dr.iter_mut().zip(xr.iter()).zip(gr.iter()) {
            let sign = if xv > S::zero() {
                S::one()
            } else if xv < S::zero() {
                -S::one()
            } else {
                S::zero()
            };
            *d = g / m - coeff * sign;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn relu_definition() {
        let y = Activation::Relu.apply(array![[-1.0f64, 0.0, 3.0]].view());
        assert_eq!(y, array![[0.0, 0.0, 3.0]]);
    }

    #[test]
    fn elu_values() {
        let y = Activation::Elu.apply(array![[0.0f64, -1.0]].view());
        assert_eq!(y[[0, 0]], 0.0);
        // e^-1 - 1, computed independently
        assert!(close(y[[0, 1]], -0.632_120_558_828_557_7, 1e-15));
    }

    #[test]
    fn avg_l1_norm_examples() {
        let y = avg_l1_norm(array![[2.0f64, -2.0], [1.0, 1.0], [3.0, 1.0]].view());
        assert_eq!(y.row(0).to_vec(), vec![1.0, -1.0]);
        assert_eq!(y.row(1).to_vec(), vec![1.0, 1.0]);
        assert_eq!(y.row(2).to_vec(), vec![1.5, 0.5]);
    }

    #[test]
    fn avg_l1_norm_zero_row_stays_finite() {
        let y = avg_l1_norm(array![[0.0f32, 0.0, 0.0]].view());
        assert!(y.iter().all(|v| *v == 0.0));
        let g = avg_l1_norm_backward(array![[0.0f32, 0.0]].view(), array![[1.0, 1.0]].view());
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn parse_round_trip() {
        for a in [
            Activation::Identity,
            Activation::Relu,
            Activation::Elu,
            Activation::Tanh,
            Activation::AvgL1Norm,
        ] {
            assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        }
        assert!("gelu".parse::<Activation>().is_err());
    }
}
