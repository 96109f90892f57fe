//! Per-pixel layer normalization over the channel axis of a [B, C, H, W]
//! map, with a learned per-channel scale and shift.

use crate::error::{fmt_shape, Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Normalizes each spatial position across channels to zero mean and unit
/// variance (biased estimate, stabilized by `eps`), then applies
/// `gamma * xhat + beta` channelwise.
pub fn layer_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> Result<Var> {
    {
        let xv = tape.value(x);
        if xv.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "layer_norm expects a [B, C, H, W] input, got {}",
                fmt_shape(xv.shape())
            )));
        }
        let c = xv.shape()[1];
        let gs = tape.value(gamma).shape().to_vec();
        let bs = tape.value(beta).shape().to_vec();
        if gs != [c] || bs != [c] {
            return Err(Error::Shape(format!(
                "layer_norm scale and shift must both have shape [{c}], got {} and {}",
                fmt_shape(&gs),
                fmt_shape(&bs)
            )));
        }
    }
    let out = {
        let xv = tape.value(x);
        let gv = tape.value(gamma);
        let bv = tape.value(beta);
        forward_kernel(xv, gv, bv, eps)
    };
    Ok(tape.push_op(
        out,
        vec![x, gamma, beta],
        Box::new(move |g, inputs, _y| {
            let (dx, dgamma, dbeta) = backward_kernel(inputs[0], inputs[1], g, eps);
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    ))
}

/// Per-batch lane statistics: channelwise mean and inverse standard
/// deviation for every spatial position.
fn lane_stats<T: Scalar>(xd: &[T], c: usize, hw: usize, eps: f64) -> (Vec<T>, Vec<T>) {
    let inv_c = T::from_f64(1.0 / c as f64);
    let epst = T::from_f64(eps);
    let mut mu = vec![T::zero(); hw];
    for ci in 0..c {
        let base = ci * hw;
        for i in 0..hw {
            mu[i] += xd[base + i];
        }
    }
    for m in mu.iter_mut() {
        *m *= inv_c;
    }
    let mut var = vec![T::zero(); hw];
    for ci in 0..c {
        let base = ci * hw;
        for i in 0..hw {
            let d = xd[base + i] - mu[i];
            var[i] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v = T::one() / (*v * inv_c + epst).sqrt();
    }
    (mu, var)
}

fn forward_kernel<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Tensor<T> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    let od = out.data_mut();
    for bi in 0..b {
        let xd = &x.data()[bi * c * hw..(bi + 1) * c * hw];
        let (mu, inv_sd) = lane_stats(xd, c, hw, eps);
        for ci in 0..c {
            let (gm, bt) = (gamma.data()[ci], beta.data()[ci]);
            let base = ci * hw;
            let ob = bi * c * hw + base;
            for i in 0..hw {
                od[ob + i] = gm * (xd[base + i] - mu[i]) * inv_sd[i] + bt;
            }
        }
    }
    out
}

fn backward_kernel<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    g: &Tensor<T>,
    eps: f64,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let hw = h * w;
    let inv_c = T::from_f64(1.0 / c as f64);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for bi in 0..b {
        let xd = &x.data()[bi * c * hw..(bi + 1) * c * hw];
        let gd = &g.data()[bi * c * hw..(bi + 1) * c * hw];
        let (mu, inv_sd) = lane_stats(xd, c, hw, eps);
        // Per-position sums of dxhat and of dxhat * xhat across channels.
        let mut s1 = vec![T::zero(); hw];
        let mut s2 = vec![T::zero(); hw];
        for ci in 0..c {
            let gm = gamma.data()[ci];
            let base = ci * hw;
            for i in 0..hw {
                let xhat = (xd[base + i] - mu[i]) * inv_sd[i];
                let dxhat = gd[base + i] * gm;
                s1[i] += dxhat;
                s2[i] += dxhat * xhat;
            }
        }
        let dxd = dx.data_mut();
        for ci in 0..c {
            let gm = gamma.data()[ci];
            let base = ci * hw;
            let ob = bi * c * hw + base;
            let mut dg_acc = T::zero();
            let mut db_acc = T::zero();
            for i in 0..hw {
                let xhat = (xd[base + i] - mu[i]) * inv_sd[i];
                let dxhat = gd[base + i] * gm;
                dxd[ob + i] = inv_sd[i] * (dxhat - (s1[i] + xhat * s2[i]) * inv_c);
                dg_acc += gd[base + i] * xhat;
                db_acc += gd[base + i];
            }
            dgamma.data_mut()[ci] += dg_acc;
            dbeta.data_mut()[ci] += db_acc;
        }
    }
    (dx, dgamma, dbeta)
}
