use crate::error::Result;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub grad_input: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

/// `y = x W^T + b` with `x: [B, in]`, `W: [out, in]`.
pub fn linear_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_rank("linear", 2)?;
    w.expect_rank("linear", 2)?;
    let (batch, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    w.expect_shape("linear weights", &[fout, fin])?;
    b.expect_shape("linear bias", &[fout])?;
    let mut y = Vec::with_capacity(batch * fout);
    for row in x.data().chunks(fin) {
        for (o, wrow) in w.data().chunks(fin).enumerate() {
            let dot: T = row.iter().zip(wrow).map(|(&a, &c)| a * c).sum();
            y.push(dot + b.data()[o]);
        }
    }
    Tensor::from_vec(&[batch, fout], y)
}

pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (batch, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    grad_out.expect_shape("linear_backward", &[batch, fout])?;
    let mut gx = vec![T::zero(); batch * fin];
    let mut gw = vec![T::zero(); fout * fin];
    let mut gb = vec![T::zero(); fout];
    for bb in 0..batch {
        let xrow = &x.data()[bb * fin..(bb + 1) * fin];
        let grow = &grad_out.data()[bb * fout..(bb + 1) * fout];
        let gxrow = &mut gx[bb * fin..(bb + 1) * fin];
        for o in 0..fout {
            let g = grow[o];
            gb[o] = gb[o] + g;
            let wrow = &w.data()[o * fin..(o + 1) * fin];
            let gwrow = &mut gw[o * fin..(o + 1) * fin];
            for f in 0..fin {
                gxrow[f] = gxrow[f] + g * wrow[f];
                gwrow[f] = gwrow[f] + g * xrow[f];
            }
        }
    }
    Ok(LinearGrads {
        grad_input: Tensor::from_vec(&[batch, fin], gx)?,
        grad_weights: Tensor::from_vec(&[fout, fin], gw)?,
        grad_bias: Tensor::from_vec(&[fout], gb)?,
    })
}
