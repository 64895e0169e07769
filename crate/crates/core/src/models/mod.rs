//! The three classifiers, assembled from [`crate::nn`] primitives, and their
//! training loop.
//!
//! Every model maps a window batch `[B × W × N]` to `[B × n_bins]` logits.
//! Softmax is folded into the loss during training and applied explicitly
//! by [`Model::probabilities`].

mod train;

pub use train::{
    evaluate_accuracy, predict_set, train, train_until, train_with_callback, ClipMode, Hyperparams, TraceRow, TrainTrace, TRACE_HEADER,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::config::KvMap;
use crate::error::{Error, Result};
use crate::nn::conv::{conv2d_backward, conv2d_forward, maxpool_backward, maxpool_forward};
use crate::nn::layers::{
    argmax_rows, dense_backward, dense_forward, dropout, dropout_backward, relu, relu_backward, softmax,
};
use crate::nn::lstm::{lstm_sequence_backward, lstm_sequence_forward, SeqCache, GATE_F};
use crate::nn::optim::xavier_uniform;
use crate::nn::{checkpoint, ParamSet, Tensor};
use crate::pipeline::{bin_center, BinningSpec};
use crate::rng::{stream, stream_rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Fcn,
    Cnn,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Fcn, ModelKind::Cnn, ModelKind::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fcn => "fcn",
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcn" => Ok(ModelKind::Fcn),
            "cnn" => Ok(ModelKind::Cnn),
            "lstm" => Ok(ModelKind::Lstm),
            _ => Err(Error::Config(format!("unknown architecture `{s}` (expected fcn, cnn or lstm)"))),
        }
    }
}

pub const FCN_HIDDEN: [usize; 2] = [64, 128];
pub const CNN_FILTERS: [usize; 5] = [8, 16, 32, 32, 64];
pub const LSTM_HEAD: [usize; 2] = [64, 32];
pub const POOL: usize = 3;

/// Architecture and input geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub window: usize,
    pub nodes: usize,
    pub n_bins: usize,
    /// Keep probability of the CNN dropout layer.
    pub keep_prob: f64,
    pub lstm_sizes: [usize; 2],
}

impl ModelSpec {
    pub fn new(kind: ModelKind, window: usize, nodes: usize, n_bins: usize) -> Self {
        Self {
            kind,
            window,
            nodes,
            n_bins,
            keep_prob: 0.75,
            lstm_sizes: [64, 128],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.nodes == 0 || self.n_bins < 2 {
            return Err(Error::Config(format!(
                "invalid model geometry window={} nodes={} n_bins={}",
                self.window, self.nodes, self.n_bins
            )));
        }
        if self.lstm_sizes.contains(&0) {
            return Err(Error::Config("lstm sizes must be positive".into()));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!("keep_prob must be in (0, 1], got {}", self.keep_prob)));
        }
        Ok(())
    }

    /// `[H × W]` after the CNN pooling layer.
    pub fn pooled_shape(&self) -> (usize, usize) {
        (self.window.div_ceil(POOL), self.nodes.div_ceil(POOL))
    }

    pub fn cnn_flatten_dim(&self) -> usize {
        let (h, w) = self.pooled_shape();
        h * w * CNN_FILTERS[4]
    }

    fn to_kv(self, kv: &mut KvMap) {
        kv.set("model.kind", self.kind);
        kv.set("model.window", self.window);
        kv.set("model.nodes", self.nodes);
        kv.set("model.n_bins", self.n_bins);
        kv.set("model.keep_prob", format!("{:?}", self.keep_prob));
        kv.set("model.lstm_sizes", format!("{},{}", self.lstm_sizes[0], self.lstm_sizes[1]));
    }

    fn from_kv(kv: &KvMap) -> Result<Self> {
        let sizes: Vec<usize> = kv
            .get("model.lstm_sizes")
            .unwrap_or("64,128")
            .split(',')
            .map(|s| crate::config::parse_value("model.lstm_sizes", s.trim()))
            .collect::<Result<_>>()?;
        if sizes.len() != 2 {
            return Err(Error::Config("model.lstm_sizes needs two entries".into()));
        }
        Ok(Self {
            kind: kv.get_parsed("model.kind")?,
            window: kv.get_parsed("model.window")?,
            nodes: kv.get_parsed("model.nodes")?,
            n_bins: kv.get_parsed("model.n_bins")?,
            keep_prob: kv.get_parsed("model.keep_prob")?,
            lstm_sizes: [sizes[0], sizes[1]],
        })
    }
}

/// A model: its spec plus named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

/// Forward activations kept for the backward pass.
#[derive(Clone, Debug)]
enum Cache {
    Fcn {
        x: Tensor,
        h1: Tensor,
        h2: Tensor,
    },
    Cnn {
        acts: Vec<Tensor>,
        pool_in_shape: Vec<usize>,
        pool_argmax: Vec<usize>,
        mask: Option<Tensor>,
        flat: Tensor,
    },
    Lstm {
        seq1: SeqCache,
        seq2: SeqCache,
        last: Tensor,
        f1: Tensor,
        f2: Tensor,
    },
}

/// Output of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub logits: Tensor,
    cache: Cache,
}

/// Predicted bins and their center distances.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub bins: Vec<usize>,
    pub distances: Vec<f64>,
}

fn dense_param(p: &mut ParamSet, name: &str, n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) {
    p.add(format!("{name}.w"), xavier_uniform(&[n_in, n_out], n_in, n_out, rng));
    p.add(format!("{name}.b"), Tensor::zeros(&[n_out]));
}

fn conv_param(p: &mut ParamSet, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) {
    p.add(format!("{name}.k"), xavier_uniform(&[3, 3, cin, cout], 9 * cin, 9 * cout, rng));
    p.add(format!("{name}.b"), Tensor::zeros(&[cout]));
}

fn lstm_param(p: &mut ParamSet, name: &str, n_in: usize, units: usize, rng: &mut ChaCha8Rng) {
    let w = xavier_uniform(&[n_in + units, 4 * units], n_in + units, 4 * units, rng);
    let mut b = Tensor::zeros(&[4 * units]);
    b.data_mut()[GATE_F * units..(GATE_F + 1) * units].fill(1.0);
    p.add(format!("{name}.w"), w);
    p.add(format!("{name}.b"), b);
}

impl Model {
    /// Builds a freshly initialized model. Weights are Xavier-uniform,
    /// biases zero except the LSTM forget gates, which start at 1.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(seed, stream::INIT);
        let mut p = ParamSet::default();
        let input = spec.window * spec.nodes;
        match spec.kind {
            ModelKind::Fcn => {
                dense_param(&mut p, "fc1", input, FCN_HIDDEN[0], &mut rng);
                dense_param(&mut p, "fc2", FCN_HIDDEN[0], FCN_HIDDEN[1], &mut rng);
                dense_param(&mut p, "out", FCN_HIDDEN[1], spec.n_bins, &mut rng);
            }
            ModelKind::Cnn => {
                let mut cin = 1;
                for (i, &f) in CNN_FILTERS.iter().enumerate() {
                    conv_param(&mut p, &format!("conv{}", i + 1), cin, f, &mut rng);
                    cin = f;
                }
                dense_param(&mut p, "out", spec.cnn_flatten_dim(), spec.n_bins, &mut rng);
            }
            ModelKind::Lstm => {
                let [u1, u2] = spec.lstm_sizes;
                lstm_param(&mut p, "lstm1", spec.nodes, u1, &mut rng);
                lstm_param(&mut p, "lstm2", u1, u2, &mut rng);
                dense_param(&mut p, "fc1", u2, LSTM_HEAD[0], &mut rng);
                dense_param(&mut p, "fc2", LSTM_HEAD[0], LSTM_HEAD[1], &mut rng);
                dense_param(&mut p, "out", LSTM_HEAD[1], spec.n_bins, &mut rng);
            }
        }
        Ok(Self { spec, params: p })
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let s = &self.spec;
        if x.ndim() != 3 || x.dim(1) != s.window || x.dim(2) != s.nodes {
            return Err(Error::shape("model input", x.shape(), &[0, s.window, s.nodes]));
        }
        Ok(x.dim(0))
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        self.forward_impl(x, None)
    }

    /// Training-mode forward pass; dropout draws from `rng`.
    pub fn forward_train(&self, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<ForwardPass> {
        self.forward_impl(x, Some(rng))
    }

    fn forward_impl(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<ForwardPass> {
        let batch = self.check_input(x)?;
        let v = &self.params.values;
        let s = &self.spec;
        let (logits, cache) = match s.kind {
            ModelKind::Fcn => {
                let x = x.clone().reshape(&[batch, s.window * s.nodes])?;
                let h1 = relu(&dense_forward(&x, &v[0], &v[1])?);
                let h2 = relu(&dense_forward(&h1, &v[2], &v[3])?);
                let logits = dense_forward(&h2, &v[4], &v[5])?;
                (logits, Cache::Fcn { x, h1, h2 })
            }
            ModelKind::Cnn => {
                let input = x.clone().reshape(&[batch, s.window, s.nodes, 1])?;
                let a1 = relu(&conv2d_forward(&input, &v[0], &v[1])?);
                let a2 = relu(&conv2d_forward(&a1, &v[2], &v[3])?);
                let pool = maxpool_forward(&a2, POOL, POOL)?;
                let (d, mask) = match rng {
                    Some(rng) => dropout(&pool.y, s.keep_prob, true, rng)?,
                    None => (pool.y.clone(), None),
                };
                let a3 = relu(&conv2d_forward(&d, &v[4], &v[5])?);
                let a4 = relu(&conv2d_forward(&a3, &v[6], &v[7])?);
                let a5 = relu(&conv2d_forward(&a4, &v[8], &v[9])?);
                let flat = a5.clone().reshape(&[batch, s.cnn_flatten_dim()])?;
                let logits = dense_forward(&flat, &v[10], &v[11])?;
                let pool_in_shape = a2.shape().to_vec();
                (
                    logits,
                    Cache::Cnn {
                        acts: vec![input, a1, a2, d, a3, a4, a5],
                        pool_in_shape,
                        pool_argmax: pool.argmax,
                        mask,
                        flat,
                    },
                )
            }
            ModelKind::Lstm => {
                let (hs1, seq1) = lstm_sequence_forward(x, &v[0], &v[1])?;
                let (hs2, seq2) = lstm_sequence_forward(&hs1, &v[2], &v[3])?;
                let u2 = s.lstm_sizes[1];
                let t = s.window - 1;
                let mut last = Tensor::zeros(&[batch, u2]);
                for r in 0..batch {
                    let src = (r * s.window + t) * u2;
                    last.data_mut()[r * u2..(r + 1) * u2].copy_from_slice(&hs2.data()[src..src + u2]);
                }
                let f1 = relu(&dense_forward(&last, &v[4], &v[5])?);
                let f2 = relu(&dense_forward(&f1, &v[6], &v[7])?);
                let logits = dense_forward(&f2, &v[8], &v[9])?;
                (
                    logits,
                    Cache::Lstm {
                        seq1,
                        seq2,
                        last,
                        f1,
                        f2,
                    },
                )
            }
        };
        logits.check_finite("model logits")?;
        Ok(ForwardPass { logits, cache })
    }

    /// Gradients of the loss with respect to every parameter, in parameter
    /// order, given `dlogits`.
    pub fn backward(&self, pass: &ForwardPass, dlogits: &Tensor) -> Result<Vec<Tensor>> {
        let v = &self.params.values;
        let s = &self.spec;
        let mut grads = Vec::with_capacity(v.len());
        match &pass.cache {
            Cache::Fcn { x, h1, h2 } => {
                let g3 = dense_backward(h2, &v[4], dlogits)?;
                let g2 = dense_backward(h1, &v[2], &relu_backward(h2, &g3.dx)?)?;
                let g1 = dense_backward(x, &v[0], &relu_backward(h1, &g2.dx)?)?;
                grads.extend([g1.dw, g1.db, g2.dw, g2.db, g3.dw, g3.db]);
            }
            Cache::Cnn {
                acts,
                pool_in_shape,
                pool_argmax,
                mask,
                flat,
            } => {
                let [input, a1, a2, d, a3, a4, a5] = [&acts[0], &acts[1], &acts[2], &acts[3], &acts[4], &acts[5], &acts[6]];
                let go = dense_backward(flat, &v[10], dlogits)?;
                let da5 = go.dx.reshape(a5.shape())?;
                let g5 = conv2d_backward(a4, &v[8], &relu_backward(a5, &da5)?)?;
                let g4 = conv2d_backward(a3, &v[6], &relu_backward(a4, &g5.dx)?)?;
                let g3 = conv2d_backward(d, &v[4], &relu_backward(a3, &g4.dx)?)?;
                let dpool = dropout_backward(mask.as_ref(), &g3.dx)?;
                let da2 = maxpool_backward(pool_in_shape, pool_argmax, &dpool)?;
                let g2 = conv2d_backward(a1, &v[2], &relu_backward(a2, &da2)?)?;
                let g1 = conv2d_backward(input, &v[0], &relu_backward(a1, &g2.dx)?)?;
                grads.extend([
                    g1.dk, g1.db, g2.dk, g2.db, g3.dk, g3.db, g4.dk, g4.db, g5.dk, g5.db, go.dw, go.db,
                ]);
            }
            Cache::Lstm {
                seq1,
                seq2,
                last,
                f1,
                f2,
            } => {
                let go = dense_backward(f2, &v[8], dlogits)?;
                let g2 = dense_backward(f1, &v[6], &relu_backward(f2, &go.dx)?)?;
                let g1 = dense_backward(last, &v[4], &relu_backward(f1, &g2.dx)?)?;
                let batch = last.dim(0);
                let u2 = s.lstm_sizes[1];
                let mut dhs2 = Tensor::zeros(&[batch, s.window, u2]);
                let t = s.window - 1;
                for r in 0..batch {
                    let dst = (r * s.window + t) * u2;
                    dhs2.data_mut()[dst..dst + u2].copy_from_slice(&g1.dx.data()[r * u2..(r + 1) * u2]);
                }
                let l2 = lstm_sequence_backward(seq2, &v[2], &dhs2)?;
                let l1 = lstm_sequence_backward(seq1, &v[0], &l2.dxs)?;
                grads.extend([l1.dw, l1.db, l2.dw, l2.db, g1.dw, g1.db, g2.dw, g2.db, go.dw, go.db]);
            }
        }
        Ok(grads)
    }

    /// Softmax class probabilities, `[B × n_bins]`.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        softmax(&self.forward(x)?.logits)
    }

    /// Argmax bins (ties toward the lower index) and their bin centers.
    pub fn predict(&self, x: &Tensor, bins: &BinningSpec) -> Result<Prediction> {
        let idx = argmax_rows(&self.forward(x)?.logits);
        prediction_from_bins(idx, bins)
    }

    /// Checkpoint metadata: model spec plus caller-supplied entries.
    pub fn checkpoint_meta(&self, extra: &KvMap) -> KvMap {
        let mut kv = KvMap::default();
        self.spec.to_kv(&mut kv);
        kv.merge(extra);
        kv
    }

    pub fn to_bytes(&self, extra: &KvMap) -> Vec<u8> {
        checkpoint::encode(&self.checkpoint_meta(extra), &self.params)
    }

    pub fn save(&self, path: &Path, extra: &KvMap) -> Result<()> {
        checkpoint::save(path, &self.checkpoint_meta(extra), &self.params)
    }

    /// Loads a checkpoint, rebuilding the architecture from its metadata and
    /// checking every parameter name and shape against it.
    pub fn load(path: &Path) -> Result<(Self, KvMap)> {
        let (meta, params) = checkpoint::load(path)?;
        let spec = ModelSpec::from_kv(&meta).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let mut model = Model::build(spec, 0)?;
        model.params.load_values(&params).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Ok((model, meta))
    }
}

pub fn prediction_from_bins(bins: Vec<usize>, spec: &BinningSpec) -> Result<Prediction> {
    let distances = bins.iter().map(|&b| bin_center(b, spec)).collect::<Result<_>>()?;
    Ok(Prediction { bins, distances })
}

/// FCN over a flattened `W × N` window.
pub fn build_fcn(window: usize, nodes: usize, n_bins: usize, seed: u64) -> Result<Model> {
    Model::build(ModelSpec::new(ModelKind::Fcn, window, nodes, n_bins), seed)
}

/// CNN over a `W × N` single-channel image.
pub fn build_cnn(window: usize, nodes: usize, n_bins: usize, seed: u64) -> Result<Model> {
    Model::build(ModelSpec::new(ModelKind::Cnn, window, nodes, n_bins), seed)
}

/// Two stacked LSTM layers with a dense head on the last step's output.
pub fn build_lstm(window: usize, nodes: usize, n_bins: usize, seed: u64) -> Result<Model> {
    Model::build(ModelSpec::new(ModelKind::Lstm, window, nodes, n_bins), seed)
}
