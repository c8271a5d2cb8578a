use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    logits.expect_rank("softmax_cross_entropy", 2)?;
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if batch == 0 || labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != batch {
        return Err(Error::shape("softmax_cross_entropy labels", &[batch], &[labels.len()]));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let inv_b = T::one() / T::from_usize(batch).unwrap();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(batch * classes);
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        loss = loss + (sum.ln() + max - row[label]);
        for (c, e) in exps.iter().enumerate() {
            let p = *e / sum;
            let target = if c == label { T::one() } else { T::zero() };
            grad.push((p - target) * inv_b);
        }
    }
    let loss = loss * inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss, Tensor::from_vec(&[batch, classes], grad)?))
}
