//! LSTM layer with hand-written backpropagation through time.
//!
//! One layer keeps a single weight matrix `w: [(in + units) × 4·units]` and a
//! bias `b: [4·units]`. Pre-activations `z = [x, h] · w + b` are split into
//! four blocks in the order input, candidate, forget, output:
//!
//! ```text
//! i = σ(z_i)   g = tanh(z_g)   f = σ(z_f)   o = σ(z_o)
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! ```

use super::tensor::{gemm, MatRef, Tensor};
use crate::error::{Error, Result};

/// Gate block offsets in units of `units`.
pub const GATE_I: usize = 0;
pub const GATE_G: usize = 1;
pub const GATE_F: usize = 2;
pub const GATE_O: usize = 3;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cell state and output of one layer, `[B × units]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub c: Tensor,
    pub h: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, units: usize) -> Self {
        Self {
            c: Tensor::zeros(&[batch, units]),
            h: Tensor::zeros(&[batch, units]),
        }
    }
}

/// Forward intermediates of one step, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct StepCache {
    /// `[x, h_prev]`, `[B × (in + units)]`.
    xh: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates laid out like `z`, `[B × 4·units]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn check_params(w: &Tensor, b: &Tensor, n_in: usize) -> Result<usize> {
    w.expect_ndim("lstm weights", 2)?;
    if w.dim(1) % 4 != 0 {
        return Err(Error::shape("lstm weights", w.shape(), &[n_in, 0]));
    }
    let units = w.dim(1) / 4;
    if w.dim(0) != n_in + units {
        return Err(Error::shape("lstm weights", w.shape(), &[n_in + units, 4 * units]));
    }
    b.expect_shape("lstm bias", &[4 * units])?;
    Ok(units)
}

/// One time step. `x: [B × in]`.
pub fn lstm_cell_step(x: &Tensor, state: &LstmState, w: &Tensor, b: &Tensor) -> Result<(LstmState, StepCache)> {
    x.expect_ndim("lstm input", 2)?;
    let (batch, n_in) = (x.dim(0), x.dim(1));
    let units = check_params(w, b, n_in)?;
    state.h.expect_shape("lstm h", &[batch, units])?;
    state.c.expect_shape("lstm c", &[batch, units])?;
    step_raw(x.data(), n_in, 1, n_in, batch, state.h.data(), state.c.data(), w, b, units)
        .map(|(h, c, cache)| {
            (
                LstmState {
                    c: Tensor::from_vec(&[batch, units], c).expect("shape"),
                    h: Tensor::from_vec(&[batch, units], h).expect("shape"),
                },
                cache,
            )
        })
}

/// Core step on raw buffers. Row `r` of the input starts at `r * x_rs`
/// and its elements are `x_cs` apart.
#[allow(clippy::too_many_arguments)]
fn step_raw(
    x: &[f64],
    x_rs: usize,
    x_cs: usize,
    n_in: usize,
    batch: usize,
    h_prev: &[f64],
    c_prev: &[f64],
    w: &Tensor,
    b: &Tensor,
    units: usize,
) -> Result<(Vec<f64>, Vec<f64>, StepCache)> {
    let width = n_in + units;
    let mut xh = vec![0.0; batch * width];
    for r in 0..batch {
        let row = &mut xh[r * width..(r + 1) * width];
        for k in 0..n_in {
            row[k] = x[r * x_rs + k * x_cs];
        }
        row[n_in..].copy_from_slice(&h_prev[r * units..(r + 1) * units]);
    }
    let g4 = 4 * units;
    let mut gates = vec![0.0; batch * g4];
    for row in gates.chunks_exact_mut(g4) {
        row.copy_from_slice(b.data());
    }
    gemm(1.0, MatRef::new(&xh, batch, width), MatRef::new(w.data(), width, g4), 1.0, &mut gates);

    let mut c = vec![0.0; batch * units];
    let mut h = vec![0.0; batch * units];
    let mut tanh_c = vec![0.0; batch * units];
    for r in 0..batch {
        let z = &mut gates[r * g4..(r + 1) * g4];
        for u in 0..units {
            let i = sigmoid(z[GATE_I * units + u]);
            let g = z[GATE_G * units + u].tanh();
            let f = sigmoid(z[GATE_F * units + u]);
            let o = sigmoid(z[GATE_O * units + u]);
            z[GATE_I * units + u] = i;
            z[GATE_G * units + u] = g;
            z[GATE_F * units + u] = f;
            z[GATE_O * units + u] = o;
            let idx = r * units + u;
            let cn = f * c_prev[idx] + i * g;
            let tc = cn.tanh();
            c[idx] = cn;
            tanh_c[idx] = tc;
            h[idx] = o * tc;
        }
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite LSTM output".into()));
    }
    let cache = StepCache {
        xh,
        c_prev: c_prev.to_vec(),
        gates,
        tanh_c,
    };
    Ok((h, c, cache))
}

/// Forward intermediates of a whole sequence.
#[derive(Clone, Debug)]
pub struct SeqCache {
    batch: usize,
    steps: usize,
    n_in: usize,
    units: usize,
    caches: Vec<StepCache>,
}

/// Runs `xs: [B × T × in]` from zero state; returns all outputs `[B × T × units]`.
pub fn lstm_sequence_forward(xs: &Tensor, w: &Tensor, b: &Tensor) -> Result<(Tensor, SeqCache)> {
    xs.expect_ndim("lstm sequence", 3)?;
    let (batch, steps, n_in) = (xs.dim(0), xs.dim(1), xs.dim(2));
    let units = check_params(w, b, n_in)?;
    let mut h = vec![0.0; batch * units];
    let mut c = vec![0.0; batch * units];
    let mut hs = Tensor::zeros(&[batch, steps, units]);
    let mut caches = Vec::with_capacity(steps);
    for t in 0..steps {
        let (hn, cn, cache) = step_raw(&xs.data()[t * n_in..], steps * n_in, 1, n_in, batch, &h, &c, w, b, units)?;
        for r in 0..batch {
            let dst = (r * steps + t) * units;
            hs.data_mut()[dst..dst + units].copy_from_slice(&hn[r * units..(r + 1) * units]);
        }
        h = hn;
        c = cn;
        caches.push(cache);
    }
    Ok((
        hs,
        SeqCache {
            batch,
            steps,
            n_in,
            units,
            caches,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct LstmGrads {
    pub dxs: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

/// Backpropagation through time given `dhs: [B × T × units]`, the loss
/// gradient with respect to every step's output.
pub fn lstm_sequence_backward(cache: &SeqCache, w: &Tensor, dhs: &Tensor) -> Result<LstmGrads> {
    let SeqCache {
        batch,
        steps,
        n_in,
        units,
        ..
    } = *cache;
    dhs.expect_shape("lstm dhs", &[batch, steps, units])?;
    let width = n_in + units;
    let g4 = 4 * units;
    let mut dw = Tensor::zeros(&[width, g4]);
    let mut db = Tensor::zeros(&[g4]);
    let mut dxs = Tensor::zeros(&[batch, steps, n_in]);
    let mut dh_next = vec![0.0; batch * units];
    let mut dc_next = vec![0.0; batch * units];
    let mut dz = vec![0.0; batch * g4];
    let mut dxh = vec![0.0; batch * width];

    for t in (0..steps).rev() {
        let sc = &cache.caches[t];
        for r in 0..batch {
            let gates = &sc.gates[r * g4..(r + 1) * g4];
            let dzr = &mut dz[r * g4..(r + 1) * g4];
            for u in 0..units {
                let idx = r * units + u;
                let dh = dhs.data()[(r * steps + t) * units + u] + dh_next[idx];
                let (i, g, f, o) = (
                    gates[GATE_I * units + u],
                    gates[GATE_G * units + u],
                    gates[GATE_F * units + u],
                    gates[GATE_O * units + u],
                );
                let tc = sc.tanh_c[idx];
                let dc = dc_next[idx] + dh * o * (1.0 - tc * tc);
                dzr[GATE_I * units + u] = dc * g * i * (1.0 - i);
                dzr[GATE_G * units + u] = dc * i * (1.0 - g * g);
                dzr[GATE_F * units + u] = dc * sc.c_prev[idx] * f * (1.0 - f);
                dzr[GATE_O * units + u] = dh * tc * o * (1.0 - o);
                dc_next[idx] = dc * f;
            }
        }
        gemm(
            1.0,
            MatRef::new(&sc.xh, batch, width).t(),
            MatRef::new(&dz, batch, g4),
            1.0,
            dw.data_mut(),
        );
        for row in dz.chunks_exact(g4) {
            db.data_mut().iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        gemm(
            1.0,
            MatRef::new(&dz, batch, g4),
            MatRef::new(w.data(), width, g4).t(),
            0.0,
            &mut dxh,
        );
        for r in 0..batch {
            let row = &dxh[r * width..(r + 1) * width];
            let dst = (r * steps + t) * n_in;
            dxs.data_mut()[dst..dst + n_in].copy_from_slice(&row[..n_in]);
            dh_next[r * units..(r + 1) * units].copy_from_slice(&row[n_in..]);
        }
    }
    Ok(LstmGrads { dxs, dw, db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{check_grad, random_tensor};
    use crate::rng::stream_rng;

    #[test]
    fn zero_params_zero_state() {
        let x = Tensor::filled(&[2, 3], 0.7);
        let (s, _) = lstm_cell_step(&x, &LstmState::zeros(2, 4), &Tensor::zeros(&[7, 16]), &Tensor::zeros(&[16])).unwrap();
        assert!(s.h.data().iter().all(|&v| v == 0.0));
        assert!(s.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_preserve_cell() {
        let units = 3;
        let mut rng = stream_rng(1, 0);
        let w = Tensor::zeros(&[2 + units, 4 * units]);
        let mut b = random_tensor(&[4 * units], &mut rng);
        for u in 0..units {
            b.data_mut()[GATE_F * units + u] = 20.0;
            b.data_mut()[GATE_I * units + u] = -20.0;
        }
        let state = LstmState {
            c: random_tensor(&[1, units], &mut rng),
            h: random_tensor(&[1, units], &mut rng),
        };
        let x = random_tensor(&[1, 2], &mut rng);
        let (next, _) = lstm_cell_step(&x, &state, &w, &b).unwrap();
        for (a, b) in next.c.data().iter().zip(state.c.data()) {
            assert!((a - b).abs() < 1e-8, "{a} {b}");
        }
    }

    #[test]
    fn sequence_matches_repeated_steps() {
        let mut rng = stream_rng(2, 0);
        let (batch, steps, n_in, units) = (3, 4, 2, 5);
        let xs = random_tensor(&[batch, steps, n_in], &mut rng);
        let w = random_tensor(&[n_in + units, 4 * units], &mut rng);
        let b = random_tensor(&[4 * units], &mut rng);
        let (hs, _) = lstm_sequence_forward(&xs, &w, &b).unwrap();
        let mut state = LstmState::zeros(batch, units);
        for t in 0..steps {
            let rows: Vec<f64> = (0..batch)
                .flat_map(|r| xs.data()[(r * steps + t) * n_in..(r * steps + t + 1) * n_in].to_vec())
                .collect();
            let x = Tensor::from_vec(&[batch, n_in], rows).unwrap();
            state = lstm_cell_step(&x, &state, &w, &b).unwrap().0;
            for r in 0..batch {
                for u in 0..units {
                    assert_eq!(hs.data()[(r * steps + t) * units + u], state.h.data()[r * units + u]);
                }
            }
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = stream_rng(seed, 7);
            let (batch, steps, n_in, units) = (2, 5, 3, 4);
            let xs = random_tensor(&[batch, steps, n_in], &mut rng);
            let w = random_tensor(&[n_in + units, 4 * units], &mut rng);
            let b = random_tensor(&[4 * units], &mut rng);
            let r = random_tensor(&[batch, steps, units], &mut rng);
            let (_, cache) = lstm_sequence_forward(&xs, &w, &b).unwrap();
            let g = lstm_sequence_backward(&cache, &w, &r).unwrap();
            let loss = |xs: &Tensor, w: &Tensor, b: &Tensor| {
                let (hs, _) = lstm_sequence_forward(xs, w, b).unwrap();
                hs.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            assert!(check_grad(&xs, &g.dxs, |t| loss(t, &w, &b)) < 1e-6);
            assert!(check_grad(&w, &g.dw, |t| loss(&xs, t, &b)) < 1e-6);
            assert!(check_grad(&b, &g.db, |t| loss(&xs, &w, t)) < 1e-6);
        }
    }
}
