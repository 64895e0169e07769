//! Dense layer, ReLU, inverted dropout and softmax cross-entropy.

use rand::Rng;

use super::tensor::{gemm, MatRef, Tensor};
use crate::error::{Error, Result};

/// `y = x · w + b` for `x: [B × in]`, `w: [in × out]`, `b: [out]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    x.expect_ndim("dense x", 2)?;
    w.expect_ndim("dense w", 2)?;
    let (batch, n_in, n_out) = (x.dim(0), x.dim(1), w.dim(1));
    if w.dim(0) != n_in {
        return Err(Error::shape("dense x·w", x.shape(), w.shape()));
    }
    b.expect_shape("dense bias", &[n_out])?;
    let mut y = Tensor::zeros(&[batch, n_out]);
    for row in y.data_mut().chunks_exact_mut(n_out) {
        row.copy_from_slice(b.data());
    }
    gemm(
        1.0,
        MatRef::new(x.data(), batch, n_in),
        MatRef::new(w.data(), n_in, n_out),
        1.0,
        y.data_mut(),
    );
    Ok(y)
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<DenseGrads> {
    let (batch, n_in, n_out) = (x.dim(0), x.dim(1), w.dim(1));
    dy.expect_shape("dense dy", &[batch, n_out])?;
    let mut dx = Tensor::zeros(&[batch, n_in]);
    gemm(
        1.0,
        MatRef::new(dy.data(), batch, n_out),
        MatRef::new(w.data(), n_in, n_out).t(),
        0.0,
        dx.data_mut(),
    );
    let mut dw = Tensor::zeros(&[n_in, n_out]);
    gemm(
        1.0,
        MatRef::new(x.data(), batch, n_in).t(),
        MatRef::new(dy.data(), batch, n_out),
        0.0,
        dw.data_mut(),
    );
    let mut db = Tensor::zeros(&[n_out]);
    for row in dy.data().chunks_exact(n_out) {
        db.data_mut().iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    Ok(DenseGrads { dx, dw, db })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU given its output `y`.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    dy.expect_shape("relu dy", y.shape())?;
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(y.shape(), data)
}

/// Inverted dropout. In training mode each element is kept with probability
/// `keep_prob` and scaled by `1/keep_prob`; the returned mask holds the
/// per-element multiplier. Inference mode is the identity with no mask.
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    keep_prob: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::Param(format!("keep_prob must be in (0, 1], got {keep_prob}")));
    }
    if !training || keep_prob == 1.0 {
        return Ok((x.clone(), None));
    }
    let scale = 1.0 / keep_prob;
    let mask_data: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < keep_prob { scale } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(x.shape(), mask_data)?;
    let y = x.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
    Ok((Tensor::from_vec(x.shape(), y)?, Some(mask)))
}

pub fn dropout_backward(mask: Option<&Tensor>, dy: &Tensor) -> Result<Tensor> {
    match mask {
        None => Ok(dy.clone()),
        Some(m) => {
            dy.expect_shape("dropout dy", m.shape())?;
            let d = dy.data().iter().zip(m.data()).map(|(g, m)| g * m).collect();
            Tensor::from_vec(dy.shape(), d)
        }
    }
}

/// Row-wise softmax of `[B × K]` logits, stabilized by max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.expect_ndim("softmax", 2)?;
    let k = logits.dim(1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    logits.expect_ndim("softmax_cross_entropy", 2)?;
    let (batch, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != batch {
        return Err(Error::shape("softmax_cross_entropy labels", logits.shape(), &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label(format!("label {bad} out of range 0..{k}")));
    }
    let mut grad = logits.clone();
    let mut loss = 0.0;
    let inv_b = 1.0 / batch as f64;
    for (row, &label) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss -= row[label] - max - log_sum;
        for v in row.iter_mut() {
            *v = (*v - max - log_sum).exp() * inv_b;
        }
        row[label] -= inv_b;
    }
    Ok((loss * inv_b, grad))
}

/// Index of the largest value in each row; ties go to the lower index.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let k = scores.dim(1);
    scores
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
