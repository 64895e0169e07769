//! 2-D convolution with zero "same" padding and max pooling, NHWC layout.
//!
//! Convolution is cross-correlation over an odd `kh × kw` kernel, computed
//! by lowering each sample to an im2col matrix and multiplying with the
//! kernel viewed as `[kh·kw·cin × cout]`.

use super::tensor::{gemm, MatRef, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct ConvDims {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
}

impl ConvDims {
    fn of(x: &Tensor, k: &Tensor) -> Result<Self> {
        x.expect_ndim("conv2d input", 4)?;
        k.expect_ndim("conv2d kernel", 4)?;
        let d = ConvDims {
            batch: x.dim(0),
            h: x.dim(1),
            w: x.dim(2),
            cin: x.dim(3),
            kh: k.dim(0),
            kw: k.dim(1),
            cout: k.dim(3),
        };
        if k.dim(2) != d.cin {
            return Err(Error::shape("conv2d channels", x.shape(), k.shape()));
        }
        if d.kh % 2 == 0 || d.kw % 2 == 0 {
            return Err(Error::shape("conv2d odd kernel", x.shape(), k.shape()));
        }
        Ok(d)
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn pixels(&self) -> usize {
        self.batch * self.h * self.w
    }
}

/// Lowers `x` to `[B·H·W × kh·kw·cin]`; padded taps stay zero.
fn im2col(x: &Tensor, d: &ConvDims) -> Vec<f64> {
    let patch = d.patch();
    let mut cols = vec![0.0; d.pixels() * patch];
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let xd = x.data();
    for b in 0..d.batch {
        for i in 0..d.h {
            for j in 0..d.w {
                let row = ((b * d.h + i) * d.w + j) * patch;
                for di in 0..d.kh {
                    let si = i as isize + di as isize - ph as isize;
                    if si < 0 || si >= d.h as isize {
                        continue;
                    }
                    for dj in 0..d.kw {
                        let sj = j as isize + dj as isize - pw as isize;
                        if sj < 0 || sj >= d.w as isize {
                            continue;
                        }
                        let src = ((b * d.h + si as usize) * d.w + sj as usize) * d.cin;
                        let dst = row + (di * d.kw + dj) * d.cin;
                        cols[dst..dst + d.cin].copy_from_slice(&xd[src..src + d.cin]);
                    }
                }
            }
        }
    }
    cols
}

/// Scatters column gradients back onto the input grid.
fn col2im(dcols: &[f64], d: &ConvDims) -> Tensor {
    let patch = d.patch();
    let mut dx = Tensor::zeros(&[d.batch, d.h, d.w, d.cin]);
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let dxd = dx.data_mut();
    for b in 0..d.batch {
        for i in 0..d.h {
            for j in 0..d.w {
                let row = ((b * d.h + i) * d.w + j) * patch;
                for di in 0..d.kh {
                    let si = i as isize + di as isize - ph as isize;
                    if si < 0 || si >= d.h as isize {
                        continue;
                    }
                    for dj in 0..d.kw {
                        let sj = j as isize + dj as isize - pw as isize;
                        if sj < 0 || sj >= d.w as isize {
                            continue;
                        }
                        let dst = ((b * d.h + si as usize) * d.w + sj as usize) * d.cin;
                        let src = row + (di * d.kw + dj) * d.cin;
                        for c in 0..d.cin {
                            dxd[dst + c] += dcols[src + c];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `x: [B×H×W×Cin]`, `k: [kh×kw×Cin×Cout]`, `bias: [Cout]` → `[B×H×W×Cout]`.
pub fn conv2d_forward(x: &Tensor, k: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = ConvDims::of(x, k)?;
    bias.expect_shape("conv2d bias", &[d.cout])?;
    let cols = im2col(x, &d);
    let mut y = Tensor::zeros(&[d.batch, d.h, d.w, d.cout]);
    for row in y.data_mut().chunks_exact_mut(d.cout) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        1.0,
        MatRef::new(&cols, d.pixels(), d.patch()),
        MatRef::new(k.data(), d.patch(), d.cout),
        1.0,
        y.data_mut(),
    );
    Ok(y)
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub dx: Tensor,
    pub dk: Tensor,
    pub db: Tensor,
}

pub fn conv2d_backward(x: &Tensor, k: &Tensor, dy: &Tensor) -> Result<ConvGrads> {
    let d = ConvDims::of(x, k)?;
    dy.expect_shape("conv2d dy", &[d.batch, d.h, d.w, d.cout])?;
    let cols = im2col(x, &d);
    let mut dk = Tensor::zeros(k.shape());
    gemm(
        1.0,
        MatRef::new(&cols, d.pixels(), d.patch()).t(),
        MatRef::new(dy.data(), d.pixels(), d.cout),
        0.0,
        dk.data_mut(),
    );
    let mut dcols = vec![0.0; cols.len()];
    gemm(
        1.0,
        MatRef::new(dy.data(), d.pixels(), d.cout),
        MatRef::new(k.data(), d.patch(), d.cout).t(),
        0.0,
        &mut dcols,
    );
    let mut db = Tensor::zeros(&[d.cout]);
    for row in dy.data().chunks_exact(d.cout) {
        db.data_mut().iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    Ok(ConvGrads {
        dx: col2im(&dcols, &d),
        dk,
        db,
    })
}

/// Max pooling output: values plus the flat input index of each maximum.
#[derive(Clone, Debug)]
pub struct PoolOutput {
    pub y: Tensor,
    pub argmax: Vec<usize>,
}

/// Output extent of "same" pooling: `ceil(n / stride)`.
pub fn pooled_len(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

/// Max pooling with `size × size` windows and stride `stride`. Windows at
/// the far edges are truncated rather than padded, so every output sees at
/// least one real input. Ties pick the first element in scan order.
pub fn maxpool_forward(x: &Tensor, size: usize, stride: usize) -> Result<PoolOutput> {
    x.expect_ndim("maxpool input", 4)?;
    if size == 0 || stride == 0 {
        return Err(Error::Param("pool size and stride must be positive".into()));
    }
    let (batch, h, w, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (oh, ow) = (pooled_len(h, stride), pooled_len(w, stride));
    let mut y = Tensor::zeros(&[batch, oh, ow, c]);
    let mut argmax = vec![0; y.len()];
    let xd = x.data();
    for b in 0..batch {
        for oi in 0..oh {
            for oj in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    for i in oi * stride..(oi * stride + size).min(h) {
                        for j in oj * stride..(oj * stride + size).min(w) {
                            let idx = ((b * h + i) * w + j) * c + ch;
                            if best == usize::MAX || xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    let out = ((b * oh + oi) * ow + oj) * c + ch;
                    y.data_mut()[out] = xd[best];
                    argmax[out] = best;
                }
            }
        }
    }
    Ok(PoolOutput { y, argmax })
}

pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Result<Tensor> {
    if dy.len() != argmax.len() {
        return Err(Error::shape("maxpool dy", dy.shape(), &[argmax.len()]));
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&src, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[src] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{check_grad, random_tensor};
    use crate::rng::stream_rng;

    /// Direct four-loop cross-correlation with zero padding.
    fn naive_conv(x: &Tensor, k: &Tensor, bias: &Tensor) -> Tensor {
        let (bn, h, w, cin) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (kh, kw, cout) = (k.dim(0), k.dim(1), k.dim(3));
        let mut y = Tensor::zeros(&[bn, h, w, cout]);
        for b in 0..bn {
            for i in 0..h {
                for j in 0..w {
                    for co in 0..cout {
                        let mut acc = bias.data()[co];
                        for di in 0..kh {
                            for dj in 0..kw {
                                let si = i as isize + di as isize - (kh / 2) as isize;
                                let sj = j as isize + dj as isize - (kw / 2) as isize;
                                if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += x.data()[((b * h + si as usize) * w + sj as usize) * cin + ci]
                                        * k.data()[((di * kw + dj) * cin + ci) * cout + co];
                                }
                            }
                        }
                        y.data_mut()[((b * h + i) * w + j) * cout + co] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = stream_rng(0, 0);
        let x = random_tensor(&[2, 6, 5, 1], &mut rng);
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        k.data_mut()[4] = 1.0;
        assert_eq!(conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::filled(&[1, 5, 5, 1], 2.5);
        let y = conv2d_forward(&x, &Tensor::filled(&[3, 3, 1, 1], 1.0), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 22.5);
        // corner sees a 2 × 2 patch
        assert_eq!(y.data()[0], 10.0);
    }

    #[test]
    fn matches_naive_loops() {
        for seed in 0..20 {
            let mut rng = stream_rng(seed, 3);
            let x = random_tensor(&[2, 7, 4, 3], &mut rng);
            let k = random_tensor(&[3, 3, 3, 5], &mut rng);
            let b = random_tensor(&[5], &mut rng);
            let fast = conv2d_forward(&x, &k, &b).unwrap();
            let slow = naive_conv(&x, &k, &b);
            let diff = fast.data().iter().zip(slow.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn conv_gradients() {
        for seed in 0..5 {
            let mut rng = stream_rng(seed, 4);
            let x = random_tensor(&[2, 5, 4, 2], &mut rng);
            let k = random_tensor(&[3, 3, 2, 3], &mut rng);
            let b = random_tensor(&[3], &mut rng);
            let r = random_tensor(&[2, 5, 4, 3], &mut rng);
            let g = conv2d_backward(&x, &k, &r).unwrap();
            let loss = |x: &Tensor, k: &Tensor, b: &Tensor| {
                conv2d_forward(x, k, b).unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            assert!(check_grad(&x, &g.dx, |t| loss(t, &k, &b)) < 1e-6);
            assert!(check_grad(&k, &g.dk, |t| loss(&x, t, &b)) < 1e-6);
            assert!(check_grad(&b, &g.db, |t| loss(&x, &k, t)) < 1e-6);
        }
    }

    #[test]
    fn pool_shapes_and_values() {
        assert_eq!((pooled_len(20, 3), pooled_len(5, 3)), (7, 2));
        let x = Tensor::from_vec(&[1, 4, 4, 1], (0..16).map(|v| v as f64).collect()).unwrap();
        let p = maxpool_forward(&x, 3, 3).unwrap();
        assert_eq!(p.y.shape(), &[1, 2, 2, 1]);
        assert_eq!(p.y.data(), &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn pool_gradient() {
        for seed in 0..5 {
            let mut rng = stream_rng(seed, 5);
            let x = random_tensor(&[2, 7, 5, 2], &mut rng);
            let r = random_tensor(&[2, 3, 2, 2], &mut rng);
            let p = maxpool_forward(&x, 3, 3).unwrap();
            let dx = maxpool_backward(x.shape(), &p.argmax, &r).unwrap();
            let err = check_grad(&x, &dx, |t| {
                maxpool_forward(t, 3, 3).unwrap().y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
            });
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let r = conv2d_forward(&Tensor::zeros(&[1, 3, 3, 2]), &Tensor::zeros(&[3, 3, 1, 1]), &Tensor::zeros(&[1]));
        assert!(matches!(r, Err(Error::Shape { .. })));
    }
}
