//! Xavier initialization, gradient clipping and the Adam optimizer.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Uniform Xavier/Glorot draw of the given shape: `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::from_vec(shape, data).expect("shape product")
}

/// `[fan_in × fan_out]` Xavier matrix, deterministic in `seed`.
pub fn xavier_init(fan_in: usize, fan_out: usize, seed: u64) -> Tensor {
    let mut rng = rng::stream_rng(seed, rng::stream::INIT);
    xavier_uniform(&[fan_in, fan_out], fan_in, fan_out, &mut rng)
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max_norm / g` when their global L2 norm `g`
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Param(format!("max_norm must be > 0, got {max_norm}")));
    }
    let g = global_norm(grads);
    if !g.is_finite() {
        return Err(Error::Numeric("non-finite gradient norm".into()));
    }
    if g > max_norm {
        let s = max_norm / g;
        grads.iter_mut().for_each(|t| t.scale(s));
    }
    Ok(g)
}

/// Clamps every gradient element to `[-max, max]`.
pub fn clip_elementwise(grads: &mut [Tensor], max: f64) -> Result<()> {
    if !(max > 0.0) {
        return Err(Error::Param(format!("clip value must be > 0, got {max}")));
    }
    for t in grads {
        t.data_mut().iter_mut().for_each(|v| *v = v.clamp(-max, max));
    }
    Ok(())
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape("adam", &[params.len()], &[self.m.len(), grads.len()]));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape("adam param/grad", p.shape(), g.shape()));
            }
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (k, &gk) in g.data().iter().enumerate() {
                md[k] = self.beta1 * md[k] + (1.0 - self.beta1) * gk;
                vd[k] = self.beta2 * vd[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = md[k] / bc1;
                let v_hat = vd[k] / bc2;
                pd[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    state.step(params, grads)
}
