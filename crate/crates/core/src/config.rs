//! Line-oriented `key = value` files, used both for run configuration and
//! for dataset metadata, and the typed run configuration built from them.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique;
//! order is preserved on output.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::models::{ClipMode, Hyperparams, ModelKind, ModelSpec};
use crate::pipeline::{BinningSpec, PrepConfig, Split};
use crate::scenario::{Arena, MotionParams, Point, TrajectoryKind};
use crate::NUM_NODES;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvMap {
    entries: Vec<(String, String)>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvMap::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if kv.get(k).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
            kv.entries.push((k.to_string(), v.to_string()));
        }
        Ok(kv)
    }

    /// Appends or replaces `key`.
    pub fn set(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub(crate) fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.set(key, value)
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &KvMap) {
        for (k, v) in &other.entries {
            self.set(k.clone(), v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        parse_value(key, v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl fmt::Display for KvMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

pub fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

pub fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{v}` for `{key}`"))),
    }
}


/// Subcommands, used to scope which keys each one reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Preprocess,
    Train,
    Eval,
    Compare,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Simulate,
        Command::Preprocess,
        Command::Train,
        Command::Eval,
        Command::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Preprocess => "preprocess",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Compare => "compare",
        }
    }

    fn bit(self) -> u8 {
        1 << self as u8
    }
}

const SIM: u8 = 1;
const PREP: u8 = 2;
const TRAIN: u8 = 4;
const EVAL: u8 = 8;
const CMP: u8 = 16;
const ALL: u8 = SIM | PREP | TRAIN | EVAL | CMP;
/// Everything that consumes preprocessed tensors.
const TENSORS: u8 = PREP | TRAIN | EVAL | CMP;

/// One recognized configuration key.
#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    used_by: u8,
}

impl KeySpec {
    pub fn used_by(&self, cmd: Command) -> bool {
        self.used_by & cmd.bit() != 0
    }
}

const fn k(key: &'static str, default: &'static str, used_by: u8, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        default,
        help,
        used_by,
    }
}

/// Per-node channel overrides, `node<i>.<field>`; unset fields inherit the
/// `channel.*` value.
pub const NODE_FIELDS: [&str; 6] = ["p0", "d0", "gamma", "sigma", "rho", "rician_k"];

pub const KEYS: &[KeySpec] = &[
    k("seed", "1", ALL, "master seed for simulation, initialization and batching"),
    k("out.dir", "out", TENSORS, "directory for tensors, checkpoints, traces and metrics"),
    k("data.dir", "data", ALL, "dataset root; environment i lives in <data.dir>/env<i>"),
    k("data.env", "0", TENSORS, "environment index read by preprocess/train/eval/compare"),
    k("sim.environments", "1", SIM, "number of environment variants to generate"),
    k("sim.duration_s", "1800", SIM, "trajectory duration, seconds"),
    k("sim.loss_prob", "0", SIM, "independent per-report drop probability, [0, 1)"),
    k("sim.truth_noise_mm", "4", SIM, "uniform ground-truth distance noise half-width, mm"),
    k("traj.kind", "lissajous", SIM, "waypoint-loop | lissajous | random-walk"),
    k("traj.speed", "0.5", SIM, "waypoint-loop cruise speed and random-walk mean speed, m/s"),
    k("traj.max_speed", "1.0", SIM, "speed bound between consecutive ticks, m/s"),
    k("traj.lissajous_period_s", "60", SIM, "Lissajous period, seconds"),
    k("traj.min_wap_distance", "0.1", SIM, "random-walk keep-out radius around the WAP, m"),
    k("arena.room_w", "8.46", SIM, "room width, m"),
    k("arena.room_d", "6.98", SIM, "room depth, m"),
    k("arena.inner_w", "4.14", SIM, "arena width, m"),
    k("arena.inner_d", "2.86", SIM, "arena depth, m"),
    k("arena.wap_x", "center", SIM, "WAP x coordinate, m, or `center`"),
    k("arena.wap_y", "center", SIM, "WAP y coordinate, m, or `center`"),
    k("channel.p0", "-40", SIM, "received power at d0, dBm"),
    k("channel.d0", "1", SIM, "reference distance, m"),
    k("channel.gamma", "2.2", SIM, "path-loss exponent"),
    k("channel.sigma", "4", SIM, "shadowing standard deviation, dB"),
    k("channel.rho", "0.95", SIM, "shadowing correlation per 50 ms tick, [0, 1)"),
    k("channel.rician_k", "6", SIM, "Rician K-factor (linear; `inf` for pure line of sight)"),
    k("channel.env_seed", "0", SIM, "environment seed; fixes static multipath offsets"),
    k("node<i>.<p0|d0|gamma|sigma|rho|rician_k>", "inherit", SIM, "per-node channel override, i in 0..5 (4 is the target)"),
    k("bins.d_min", "0.0151", TENSORS, "lower edge of bin 0, m"),
    k("bins.n_bins", "30", TENSORS, "number of distance bins"),
    k("bins.l_bin", "0.1173", TENSORS, "bin width, m"),
    k("prep.median_window", "5", TENSORS, "odd median filter length, ticks"),
    k("prep.filter_rssi", "true", TENSORS, "median-filter each node's RSSI"),
    k("prep.filter_distance", "true", TENSORS, "median-filter the ground-truth distance"),
    k("prep.window", "20", TENSORS, "window length W, ticks"),
    k("prep.stride", "1", TENSORS, "window stride, ticks"),
    k("prep.cache", "", TENSORS, "tensor cache path (empty: <out.dir>/tensors.bin)"),
    k("split.train", "0.70", TENSORS, "leading fraction of ticks used for training"),
    k("split.val", "0.15", TENSORS, "following fraction used for validation; the rest is test"),
    k("train.profile", "desk", TRAIN | CMP, "desk | full; full switches unset batch_size/iterations to 1024/3000"),
    k("train.batch_size", "128", TRAIN | CMP, "mini-batch size Bs"),
    k("train.iterations", "1500", TRAIN | CMP, "optimizer steps"),
    k("train.lr", "0.0001", TRAIN | CMP, "Adam learning rate"),
    k("train.max_grad_norm", "10", TRAIN | CMP, "gradient clipping threshold"),
    k("train.clip_mode", "global_norm", TRAIN | CMP, "global_norm | value"),
    k("train.keep_prob", "0.75", TRAIN | CMP, "CNN dropout keep probability"),
    k("train.lstm_sizes", "64,128", TRAIN | CMP, "units of the two LSTM layers"),
    k("train.eval_every", "50", TRAIN | CMP, "iterations between validation measurements"),
    k("eval.checkpoint", "", EVAL, "checkpoint to evaluate (empty: <out.dir>/<arch>.ckpt)"),
    k("eval.split", "test", EVAL | CMP, "split scored by eval/compare: val | test"),
];

fn node_override(key: &str) -> Option<(usize, &'static str)> {
    let rest = key.strip_prefix("node")?;
    let (idx, field) = rest.split_once('.')?;
    let idx: usize = idx.parse().ok().filter(|&i| i < NUM_NODES)?;
    NODE_FIELDS.iter().find(|f| **f == field).map(|f| (idx, *f))
}

pub fn is_known_key(key: &str) -> bool {
    KEYS.iter().any(|s| s.key == key) || node_override(key).is_some()
}

/// Keys read by `cmd`, for help output.
pub fn keys_for(cmd: Command) -> impl Iterator<Item = &'static KeySpec> {
    KEYS.iter().filter(move |s| s.used_by(cmd))
}

fn default_of(key: &str) -> &'static str {
    KEYS.iter().find(|s| s.key == key).map(|s| s.default).expect("registered key")
}

/// Simulation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub environments: usize,
    pub duration_s: f64,
    pub loss_prob: f64,
    pub truth_noise_mm: f64,
    pub traj_kind: TrajectoryKind,
    pub motion: MotionParams,
}

/// Fully validated run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,
    pub data_env: usize,
    pub sim: SimConfig,
    pub arena: Arena,
    /// Channel of each node before per-environment seeding.
    pub channel: [ChannelParams; NUM_NODES],
    pub env_seed: u64,
    pub bins: BinningSpec,
    pub prep: PrepConfig,
    pub prep_cache: PathBuf,
    pub train: Hyperparams,
    pub keep_prob: f64,
    pub lstm_sizes: [usize; 2],
    pub eval_checkpoint: Option<PathBuf>,
    pub eval_split: Split,
    /// The user-supplied entries (file plus command line), for provenance.
    pub supplied: KvMap,
}

struct Lookup<'a> {
    user: &'a KvMap,
}

impl Lookup<'_> {
    fn raw(&self, key: &str) -> &str {
        self.user.get(key).unwrap_or_else(|| default_of(key))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        parse_value(key, self.raw(key))
    }

    fn bool(&self, key: &str) -> Result<bool> {
        parse_bool(key, self.raw(key))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        Some(self.raw(key)).filter(|s| !s.is_empty()).map(PathBuf::from)
    }
}

impl Config {
    /// Built-in defaults overlaid with `user`. Every key is checked and every
    /// value validated against its owner's invariants.
    pub fn from_kv(user: &KvMap) -> Result<Self> {
        if let Some((bad, _)) = user.iter().find(|(k, _)| !is_known_key(k)) {
            return Err(Error::Config(format!("unknown configuration key `{bad}`")));
        }
        let l = Lookup { user };

        let wap = match (l.raw("arena.wap_x"), l.raw("arena.wap_y")) {
            ("center", "center") => None,
            ("center", _) | (_, "center") => {
                return Err(Error::Config("arena.wap_x and arena.wap_y must both be set or both be `center`".into()))
            }
            _ => Some(Point::new(l.get("arena.wap_x")?, l.get("arena.wap_y")?)),
        };
        let arena = Arena::centered(
            (l.get("arena.room_w")?, l.get("arena.room_d")?),
            (l.get("arena.inner_w")?, l.get("arena.inner_d")?),
            wap,
        );
        arena.validate()?;

        let base = ChannelParams {
            p0: l.get("channel.p0")?,
            d0: l.get("channel.d0")?,
            gamma: l.get("channel.gamma")?,
            sigma: l.get("channel.sigma")?,
            rho: l.get("channel.rho")?,
            rician_k: l.get("channel.rician_k")?,
            seed: 0,
        };
        let mut channel = [base; NUM_NODES];
        for (key, value) in user.iter() {
            if let Some((i, field)) = node_override(key) {
                let v: f64 = parse_value(key, value)?;
                let p = &mut channel[i];
                match field {
                    "p0" => p.p0 = v,
                    "d0" => p.d0 = v,
                    "gamma" => p.gamma = v,
                    "sigma" => p.sigma = v,
                    "rho" => p.rho = v,
                    _ => p.rician_k = v,
                }
            }
        }
        for p in &channel {
            p.validate()?;
        }

        let sim = SimConfig {
            environments: l.get("sim.environments")?,
            duration_s: l.get("sim.duration_s")?,
            loss_prob: l.get("sim.loss_prob")?,
            truth_noise_mm: l.get("sim.truth_noise_mm")?,
            traj_kind: l.get("traj.kind")?,
            motion: MotionParams {
                max_speed: l.get("traj.max_speed")?,
                speed: l.get("traj.speed")?,
                lissajous_period_s: l.get("traj.lissajous_period_s")?,
                min_wap_distance: l.get("traj.min_wap_distance")?,
            },
        };
        if sim.environments == 0 {
            return Err(Error::Config("sim.environments must be >= 1".into()));
        }
        if !(sim.duration_s > 0.0 && sim.duration_s.is_finite()) {
            return Err(Error::Config(format!("sim.duration_s must be > 0, got {}", sim.duration_s)));
        }
        if !(0.0..1.0).contains(&sim.loss_prob) {
            return Err(Error::Config(format!("sim.loss_prob must be in [0, 1), got {}", sim.loss_prob)));
        }
        if !(sim.truth_noise_mm >= 0.0) {
            return Err(Error::Config("sim.truth_noise_mm must be >= 0".into()));
        }
        let m = &sim.motion;
        if !(m.max_speed > 0.0 && m.speed > 0.0 && m.speed <= m.max_speed) {
            return Err(Error::Config("traj speeds must satisfy 0 < speed <= max_speed".into()));
        }
        if !(m.lissajous_period_s > 0.0 && m.min_wap_distance >= 0.0) {
            return Err(Error::Config("traj.lissajous_period_s must be > 0 and traj.min_wap_distance >= 0".into()));
        }

        let bins = BinningSpec {
            d_min: l.get("bins.d_min")?,
            n_bins: l.get("bins.n_bins")?,
            l_bin: l.get("bins.l_bin")?,
        };
        bins.validate()?;
        let prep = PrepConfig {
            median_window: l.get("prep.median_window")?,
            filter_rssi: l.bool("prep.filter_rssi")?,
            filter_distance: l.bool("prep.filter_distance")?,
            window: l.get("prep.window")?,
            stride: l.get("prep.stride")?,
            train_frac: l.get("split.train")?,
            val_frac: l.get("split.val")?,
        };
        prep.validate()?;

        let out_dir: PathBuf = l.get::<String>("out.dir").map(PathBuf::from)?;
        let seed: u64 = l.get("seed")?;
        let mut train = match l.raw("train.profile") {
            "desk" => Hyperparams::default(),
            "full" => Hyperparams::full_scale(),
            other => return Err(Error::Config(format!("unknown train.profile `{other}` (expected desk or full)"))),
        };
        if user.get("train.batch_size").is_some() || l.raw("train.profile") == "desk" {
            train.batch_size = l.get("train.batch_size")?;
        }
        if user.get("train.iterations").is_some() || l.raw("train.profile") == "desk" {
            train.iterations = l.get("train.iterations")?;
        }
        train.lr = l.get("train.lr")?;
        train.max_grad_norm = l.get("train.max_grad_norm")?;
        train.clip_mode = l.get::<ClipMode>("train.clip_mode")?;
        train.eval_every = l.get("train.eval_every")?;
        train.seed = seed;
        train.validate()?;
        let sizes: Vec<usize> = l
            .raw("train.lstm_sizes")
            .split(',')
            .map(|s| parse_value("train.lstm_sizes", s.trim()))
            .collect::<Result<_>>()?;
        let lstm_sizes = match sizes.as_slice() {
            [a, b] if *a > 0 && *b > 0 => [*a, *b],
            _ => return Err(Error::Config("train.lstm_sizes needs two positive sizes, e.g. `64,128`".into())),
        };
        let keep_prob: f64 = l.get("train.keep_prob")?;
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::Config(format!("train.keep_prob must be in (0, 1], got {keep_prob}")));
        }
        let eval_split = match l.raw("eval.split") {
            "test" => Split::Test,
            "val" => Split::Val,
            other => return Err(Error::Config(format!("eval.split must be val or test, got `{other}`"))),
        };

        Ok(Config {
            seed,
            prep_cache: l.path("prep.cache").unwrap_or_else(|| out_dir.join("tensors.bin")),
            out_dir,
            data_dir: PathBuf::from(l.raw("data.dir")),
            data_env: l.get("data.env")?,
            sim,
            arena,
            channel,
            env_seed: l.get("channel.env_seed")?,
            bins,
            prep,
            train,
            keep_prob,
            lstm_sizes,
            eval_checkpoint: l.path("eval.checkpoint"),
            eval_split,
            supplied: user.clone(),
        })
    }

    /// Directory of environment `env`.
    pub fn env_dir(&self, env: usize) -> PathBuf {
        self.data_dir.join(format!("env{env}"))
    }

    /// Channel parameters of environment `env`: the configured values with
    /// an environment seed derived from `channel.env_seed` and `env`.
    pub fn env_channel(&self, env: usize) -> [ChannelParams; NUM_NODES] {
        let mut p = self.channel;
        let s = crate::rng::mix(self.env_seed, env as u64);
        p.iter_mut().for_each(|c| c.seed = s);
        p
    }

    /// Run seed of environment `env`.
    pub fn env_run_seed(&self, env: usize) -> u64 {
        crate::rng::mix(self.seed, 1000 + env as u64)
    }

    pub fn model_spec(&self, kind: ModelKind) -> ModelSpec {
        ModelSpec {
            keep_prob: self.keep_prob,
            lstm_sizes: self.lstm_sizes,
            ..ModelSpec::new(kind, self.prep.window, NUM_NODES, self.bins.n_bins)
        }
    }

    pub fn checkpoint_path(&self, kind: ModelKind) -> PathBuf {
        self.out_dir.join(format!("{kind}.ckpt"))
    }
}

#[cfg(test)]
mod kv_tests {
    use super::*;

    #[test]
    fn parse_and_print() {
        let kv = KvMap::parse("# comment\n a = 1 \n\nb=two words\n").unwrap();
        assert_eq!(kv.get("a"), Some("1"));
        assert_eq!(kv.get("b"), Some("two words"));
        assert_eq!(kv.to_string(), "a = 1\nb = two words\n");
        assert_eq!(KvMap::parse(&kv.to_string()).unwrap(), kv);
    }

    #[test]
    fn rejects_garbage_and_duplicates() {
        assert!(KvMap::parse("novalue\n").is_err());
        assert!(KvMap::parse("a = 1\na = 2\n").is_err());
        assert!(KvMap::parse(" = 2\n").is_err());
    }

    #[test]
    fn merge_overrides() {
        let mut a = KvMap::parse("x = 1\ny = 2").unwrap();
        a.merge(&KvMap::parse("y = 3\nz = 4").unwrap());
        assert_eq!(a.to_string(), "x = 1\ny = 3\nz = 4\n");
    }
}
