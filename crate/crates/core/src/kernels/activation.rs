use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the upstream gradient where the forward input was strictly
/// positive and zeroes it elsewhere.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape("relu_backward", input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Flat input index of the maximum for every pooled output element.
#[derive(Clone, Debug)]
pub struct PoolCache {
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped;
/// ties go to the first element in row-major window order.
pub fn maxpool2x2_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    x.expect_rank("maxpool2x2", 4)?;
    let sh = x.shape();
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::Geometry(format!("cannot pool a {h}x{w} map")));
    }
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    let xd = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * y + dy) * w + 2 * xx + dx;
                    if xd[j] > xd[best] {
                        best = j;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[b, c, oh, ow], out)?,
        PoolCache {
            argmax,
            input_shape: sh.to_vec(),
        },
    ))
}

pub fn maxpool2x2_backward<T: Real>(grad_out: &Tensor<T>, cache: &PoolCache) -> Result<Tensor<T>> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::shape(
            "maxpool2x2_backward",
            &[cache.argmax.len()],
            &[grad_out.len()],
        ));
    }
    let mut gin = Tensor::zeros(&cache.input_shape);
    let gd = gin.data_mut();
    for (&j, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gd[j] = gd[j] + g;
    }
    Ok(gin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_backward_zero_at_negative_input() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn pool_picks_max_and_routes_gradient() {
        let x = Tensor::<f64>::from_vec(
            &[1, 1, 2, 4],
            vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 2.0, 0.0],
        )
        .unwrap();
        let (y, cache) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[5.0, 2.0]);
        let g = maxpool2x2_backward(&Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 7.0]).unwrap(), &cache)
            .unwrap();
        // tie in the second window goes to the first element
        assert_eq!(g.data(), &[0.0, 1.0, 7.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_maps_drop_trailing_row() {
        let x = Tensor::<f32>::full(&[1, 2, 5, 5], 1.0);
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert!(maxpool2x2_forward(&Tensor::<f32>::zeros(&[1, 1, 1, 4])).is_err());
    }
}
