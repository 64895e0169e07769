//! Preprocessing: gap filling, median filtering, per-node normalization,
//! equal-width distance binning and sliding-window tensorization into
//! `[batch × window × nodes]`.
//!
//! The tick axis is split contiguously into train/validation/test segments
//! before filtering, so no filter, statistic or window ever spans two splits.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::config::KvMap;
use crate::error::{Error, Result};
use crate::netsim::Dataset;
use crate::nn::checkpoint::Reader;
use crate::nn::Tensor;
use crate::{NUM_NODES, TICK_MS};

/// Equal-width distance bins; bin `i` covers
/// `[d_min + i·l_bin, d_min + (i+1)·l_bin)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinningSpec {
    pub d_min: f64,
    pub n_bins: usize,
    pub l_bin: f64,
}

impl Default for BinningSpec {
    fn default() -> Self {
        Self {
            d_min: 0.0151,
            n_bins: 30,
            l_bin: 0.1173,
        }
    }
}

impl BinningSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_bin > 0.0 && self.l_bin.is_finite()) {
            return Err(Error::Config(format!("l_bin must be > 0, got {}", self.l_bin)));
        }
        if self.n_bins < 2 {
            return Err(Error::Config(format!("n_bins must be >= 2, got {}", self.n_bins)));
        }
        if !self.d_min.is_finite() {
            return Err(Error::Config("d_min must be finite".into()));
        }
        Ok(())
    }

    /// Upper (exclusive) end of the binned range.
    pub fn d_max(&self) -> f64 {
        self.d_min + self.n_bins as f64 * self.l_bin
    }

    pub fn bin_index(&self, d: f64) -> Result<usize> {
        bin_index(d, self)
    }

    pub fn bin_center(&self, i: usize) -> Result<f64> {
        bin_center(i, self)
    }
}

/// `floor((d - d_min) / l_bin)`; distances outside the binned range are a
/// label error.
pub fn bin_index(d: f64, spec: &BinningSpec) -> Result<usize> {
    let x = (d - spec.d_min) / spec.l_bin;
    if !(x >= 0.0) || d >= spec.d_max() {
        return Err(Error::Label(format!(
            "distance {d} m outside binned range [{}, {})",
            spec.d_min,
            spec.d_max()
        )));
    }
    // Rounding can put x at exactly n_bins for d just below d_max.
    Ok((x.floor() as usize).min(spec.n_bins - 1))
}

pub fn bin_center(i: usize, spec: &BinningSpec) -> Result<f64> {
    if i >= spec.n_bins {
        return Err(Error::Label(format!("bin {i} out of range 0..{}", spec.n_bins)));
    }
    Ok(spec.d_min + (i as f64 + 0.5) * spec.l_bin)
}

/// Centered running median with replicate padding at both ends.
pub fn median_filter(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Param(format!("median window must be odd and >= 1, got {window}")));
    }
    if window > series.len() {
        return Err(Error::Param(format!(
            "median window {window} exceeds series length {}",
            series.len()
        )));
    }
    if window == 1 {
        return Ok(series.to_vec());
    }
    let half = window / 2;
    let last = series.len() - 1;
    let mut buf = vec![0.0; window];
    Ok((0..series.len())
        .map(|i| {
            for (k, slot) in buf.iter_mut().enumerate() {
                let j = (i + k).saturating_sub(half).min(last);
                *slot = series[j];
            }
            *buf.select_nth_unstable_by(half, f64::total_cmp).1
        })
        .collect())
}

/// Standard deviations below this are floored to it.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-node mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fits one `(mean, std)` pair per series.
    pub fn fit(series: &[Vec<f64>]) -> Result<Self> {
        let mut mean = Vec::with_capacity(series.len());
        let mut std = Vec::with_capacity(series.len());
        for s in series {
            if s.is_empty() {
                return Err(Error::Param("cannot normalize an empty series".into()));
            }
            let n = s.len() as f64;
            let m = s.iter().sum::<f64>() / n;
            let var = s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt().max(STD_FLOOR));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, column: usize, series: &[f64]) -> Vec<f64> {
        apply_normalize(series, self.mean[column], self.std[column])
    }
}

/// Fits statistics of a single series.
pub fn fit_normalize(series: &[f64]) -> Result<NormStats> {
    NormStats::fit(&[series.to_vec()])
}

pub fn apply_normalize(series: &[f64], mean: f64, std: f64) -> Vec<f64> {
    series.iter().map(|v| (v - mean) / std).collect()
}

/// Per-tick view of a dataset with dropped reports filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct TickGrid {
    pub timestamps: Vec<u64>,
    /// One series per node, indexed by node id.
    pub rssi: Vec<Vec<f64>>,
    pub distance: Vec<f64>,
    /// Number of filled-in values per node.
    pub filled: Vec<usize>,
}

impl TickGrid {
    pub fn ticks(&self) -> usize {
        self.timestamps.len()
    }
}

/// Aligns records to ground-truth ticks. A missing report takes the node's
/// previous value; missing reports before the first delivery take the first
/// delivered value.
pub fn gap_fill(ds: &Dataset) -> Result<TickGrid> {
    let ticks = ds.truth.len();
    let t0 = ds.truth.samples.first().map(|s| s.0).unwrap_or(0);
    let mut slots: Vec<Vec<Option<f64>>> = vec![vec![None; ticks]; NUM_NODES];
    for r in &ds.records {
        let offset = r.timestamp_ms.checked_sub(t0).filter(|o| o % TICK_MS == 0);
        let idx = offset.map(|o| (o / TICK_MS) as usize).filter(|&i| i < ticks);
        match idx {
            Some(i) => slots[r.node_id as usize][i] = Some(r.rssi_dbm),
            None => {
                return Err(Error::Format {
                    path: "records".into(),
                    msg: format!("record timestamp {} is not on the truth tick grid", r.timestamp_ms),
                })
            }
        }
    }
    let mut rssi = Vec::with_capacity(NUM_NODES);
    let mut filled = Vec::with_capacity(NUM_NODES);
    for (node, s) in slots.iter().enumerate() {
        let first = s.iter().flatten().next().copied().ok_or_else(|| Error::Format {
            path: "records".into(),
            msg: format!("node {node} has no records"),
        })?;
        let mut last = first;
        let mut n_filled = 0;
        rssi.push(
            s.iter()
                .map(|v| match v {
                    Some(v) => {
                        last = *v;
                        *v
                    }
                    None => {
                        n_filled += 1;
                        last
                    }
                })
                .collect(),
        );
        filled.push(n_filled);
    }
    Ok(TickGrid {
        timestamps: ds.truth.samples.iter().map(|s| s.0).collect(),
        rssi,
        distance: ds.truth.distances(),
        filled,
    })
}

/// A batch of windows with their bin labels.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    /// `[Bs × W × N]`.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

/// All windows of one contiguous segment.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub nodes: usize,
    pub window: usize,
    /// Normalized features, `[T × N]` row-major.
    pub features: Vec<f64>,
    /// Ground-truth distance per tick.
    pub distances: Vec<f64>,
    /// First tick of each window.
    pub starts: Vec<usize>,
    /// Bin of each window's last tick.
    pub labels: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn ticks(&self) -> usize {
        self.distances.len()
    }

    /// The `[W × N]` block of window `i`.
    pub fn window(&self, i: usize) -> &[f64] {
        let s = self.starts[i] * self.nodes;
        &self.features[s..s + self.window * self.nodes]
    }

    /// Distance at the last tick of window `i`.
    pub fn target_distance(&self, i: usize) -> f64 {
        self.distances[self.starts[i] + self.window - 1]
    }

    pub fn batch(&self, idx: &[usize]) -> WindowBatch {
        let per = self.window * self.nodes;
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(self.window(i));
        }
        WindowBatch {
            inputs: Tensor::from_vec(&[idx.len(), self.window, self.nodes], data).expect("window shape"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Consecutive batches of at most `size` windows, in order.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = WindowBatch> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let chunks: Vec<Vec<usize>> = idx.chunks(size.max(1)).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |c| self.batch(&c))
    }

    /// Keeps only the listed windows.
    pub fn subset(&self, idx: &[usize]) -> WindowSet {
        WindowSet {
            starts: idx.iter().map(|&i| self.starts[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone()
        }
    }
}

/// Slides a window of `window` ticks with step `stride` over `[T × N]`
/// features. Each window is labeled with the bin of its last tick's
/// distance. Fewer than `window` ticks yields an empty set.
pub fn make_windows(
    features: Vec<f64>,
    nodes: usize,
    distances: Vec<f64>,
    spec: &BinningSpec,
    window: usize,
    stride: usize,
) -> Result<WindowSet> {
    if window == 0 || stride == 0 || nodes == 0 {
        return Err(Error::Param("window, stride and node count must be >= 1".into()));
    }
    let ticks = distances.len();
    if features.len() != ticks * nodes {
        return Err(Error::shape("make_windows", &[features.len()], &[ticks, nodes]));
    }
    let starts: Vec<usize> = if ticks >= window {
        (0..=ticks - window).step_by(stride).collect()
    } else {
        Vec::new()
    };
    let labels = starts
        .iter()
        .map(|&s| bin_index(distances[s + window - 1], spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowSet {
        nodes,
        window,
        features,
        distances,
        starts,
        labels,
    })
}

/// Preprocessing knobs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrepConfig {
    pub median_window: usize,
    pub filter_rssi: bool,
    pub filter_distance: bool,
    pub window: usize,
    pub stride: usize,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            median_window: 5,
            filter_rssi: true,
            filter_distance: true,
            window: 20,
            stride: 1,
            train_frac: 0.70,
            val_frac: 0.15,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_window == 0 || self.median_window % 2 == 0 {
            return Err(Error::Config(format!(
                "median window must be odd and >= 1, got {}",
                self.median_window
            )));
        }
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("window and stride must be >= 1".into()));
        }
        let (a, b) = (self.train_frac, self.val_frac);
        if !(a > 0.0 && b >= 0.0 && a + b < 1.0) {
            return Err(Error::Config(format!(
                "split fractions train={a} val={b} must be positive and sum below 1"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Tick ranges of the contiguous train/validation/test split.
pub fn split_ranges(ticks: usize, cfg: &PrepConfig) -> [std::ops::Range<usize>; 3] {
    let n_train = (ticks as f64 * cfg.train_frac).floor() as usize;
    let n_val = (ticks as f64 * cfg.val_frac).floor() as usize;
    [0..n_train, n_train..n_train + n_val, n_train + n_val..ticks]
}

/// Processing stages in the order they run; recorded in the cache metadata.
pub const PIPELINE_ORDER: [&str; 5] = ["gap_fill", "split", "median_filter", "normalize", "window"];

/// Output of preprocessing: windowed splits plus the frozen statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub spec: BinningSpec,
    pub config: PrepConfig,
    pub stats: NormStats,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    /// Provenance copied from the dataset metadata and the pipeline run.
    pub meta: KvMap,
}

impl Prepared {
    pub fn split(&self, s: Split) -> &WindowSet {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Runs the full preprocessing chain on a dataset.
pub fn preprocess(ds: &Dataset, spec: &BinningSpec, cfg: &PrepConfig) -> Result<Prepared> {
    spec.validate()?;
    cfg.validate()?;
    let grid = gap_fill(ds)?;
    let ranges = split_ranges(grid.ticks(), cfg);

    let filter = |s: &[f64], on: bool| -> Result<Vec<f64>> {
        if on && s.len() >= cfg.median_window {
            median_filter(s, cfg.median_window)
        } else {
            Ok(s.to_vec())
        }
    };
    // Filter each split on its own.
    let mut filtered_rssi: Vec<Vec<Vec<f64>>> = Vec::with_capacity(3);
    let mut filtered_dist: Vec<Vec<f64>> = Vec::with_capacity(3);
    for r in &ranges {
        filtered_rssi.push(
            grid.rssi
                .iter()
                .map(|s| filter(&s[r.clone()], cfg.filter_rssi))
                .collect::<Result<_>>()?,
        );
        filtered_dist.push(filter(&grid.distance[r.clone()], cfg.filter_distance)?);
    }
    if ranges[0].is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let stats = NormStats::fit(&filtered_rssi[0])?;

    let mut sets = Vec::with_capacity(3);
    for (cols, dist) in filtered_rssi.iter().zip(filtered_dist) {
        let ticks = dist.len();
        let normed: Vec<Vec<f64>> = cols.iter().enumerate().map(|(n, s)| stats.apply(n, s)).collect();
        let mut features = vec![0.0; ticks * NUM_NODES];
        for (n, col) in normed.iter().enumerate() {
            for (t, v) in col.iter().enumerate() {
                features[t * NUM_NODES + n] = *v;
            }
        }
        sets.push(make_windows(features, NUM_NODES, dist, spec, cfg.window, cfg.stride)?);
    }
    let test = sets.pop().unwrap();
    let val = sets.pop().unwrap();
    let train = sets.pop().unwrap();

    let mut meta = ds.meta.to_kv();
    meta.set("pipeline.order", PIPELINE_ORDER.join(","));
    for (n, f) in grid.filled.iter().enumerate() {
        meta.set(format!("pipeline.filled.node{n}"), f);
    }
    Ok(Prepared {
        spec: *spec,
        config: *cfg,
        stats,
        train,
        val,
        test,
        meta,
    })
}

const CACHE_MAGIC: &[u8; 8] = b"WDPREP\0\0";
const CACHE_VERSION: u32 = 1;

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn split_floats(key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|t| crate::config::parse_value(key, t)).collect()
}

impl Prepared {
    /// Serializes to the tensor cache format: magic, version, a `key = value`
    /// metadata block, then the three splits (features, distances, window
    /// starts and labels), all little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut meta = self.meta.clone();
        meta.set("bins.d_min", format!("{:?}", self.spec.d_min));
        meta.set("bins.n_bins", self.spec.n_bins);
        meta.set("bins.l_bin", format!("{:?}", self.spec.l_bin));
        meta.set("prep.median_window", self.config.median_window);
        meta.set("prep.filter_rssi", self.config.filter_rssi);
        meta.set("prep.filter_distance", self.config.filter_distance);
        meta.set("prep.window", self.config.window);
        meta.set("prep.stride", self.config.stride);
        meta.set("split.train", format!("{:?}", self.config.train_frac));
        meta.set("split.val", format!("{:?}", self.config.val_frac));
        meta.set("stats.mean", join(&self.stats.mean));
        meta.set("stats.std", join(&self.stats.std));
        let meta = meta.to_string();

        let mut out = Vec::new();
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for set in [&self.train, &self.val, &self.test] {
            out.extend_from_slice(&(set.nodes as u32).to_le_bytes());
            out.extend_from_slice(&(set.window as u32).to_le_bytes());
            out.extend_from_slice(&(set.ticks() as u64).to_le_bytes());
            set.features.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            set.distances.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            out.extend_from_slice(&(set.len() as u64).to_le_bytes());
            set.starts.iter().for_each(|&s| out.extend_from_slice(&(s as u64).to_le_bytes()));
            set.labels.iter().for_each(|&l| out.extend_from_slice(&(l as u32).to_le_bytes()));
        }
        out
    }

    pub fn decode(buf: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader::new(buf);
        if r.take(8)? != CACHE_MAGIC {
            return Err("not a preprocessing cache (bad magic)".into());
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(format!("unsupported cache version {version}"));
        }
        let mut meta = KvMap::parse(&r.string()?).map_err(|e| e.to_string())?;
        let e = |e: Error| e.to_string();
        let spec = BinningSpec {
            d_min: meta.get_parsed("bins.d_min").map_err(e)?,
            n_bins: meta.get_parsed("bins.n_bins").map_err(e)?,
            l_bin: meta.get_parsed("bins.l_bin").map_err(e)?,
        };
        let config = PrepConfig {
            median_window: meta.get_parsed("prep.median_window").map_err(e)?,
            filter_rssi: meta.get_parsed("prep.filter_rssi").map_err(e)?,
            filter_distance: meta.get_parsed("prep.filter_distance").map_err(e)?,
            window: meta.get_parsed("prep.window").map_err(e)?,
            stride: meta.get_parsed("prep.stride").map_err(e)?,
            train_frac: meta.get_parsed("split.train").map_err(e)?,
            val_frac: meta.get_parsed("split.val").map_err(e)?,
        };
        let stats = NormStats {
            mean: split_floats("stats.mean", meta.get("stats.mean").unwrap_or("")).map_err(e)?,
            std: split_floats("stats.std", meta.get("stats.std").unwrap_or("")).map_err(e)?,
        };
        let mut sets = Vec::with_capacity(3);
        for _ in 0..3 {
            let nodes = r.u32()? as usize;
            let window = r.u32()? as usize;
            let ticks = r.u64()? as usize;
            let features = r.f64s(ticks.checked_mul(nodes).ok_or("size overflow")?)?;
            let distances = r.f64s(ticks)?;
            let n = r.u64()? as usize;
            let starts = (0..n).map(|_| r.u64().map(|v| v as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let labels = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            if starts.iter().any(|&s| s + window > ticks) || labels.iter().any(|&l| l >= spec.n_bins) {
                return Err("window index or label out of range".into());
            }
            sets.push(WindowSet {
                nodes,
                window,
                features,
                distances,
                starts,
                labels,
            });
        }
        if !r.at_end() {
            return Err("trailing bytes".into());
        }
        // Keep only provenance keys; the typed fields own the rest.
        let derived = ["bins.", "prep.", "split.", "stats."];
        let kept: Vec<(String, String)> = meta
            .iter()
            .filter(|(k, _)| !derived.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        meta = KvMap::default();
        for (k, v) in kept {
            meta.set(k, v);
        }
        let test = sets.pop().unwrap();
        let val = sets.pop().unwrap();
        let train = sets.pop().unwrap();
        Ok(Self {
            spec,
            config,
            stats,
            train,
            val,
            test,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&buf).map_err(|msg| Error::Format {
            path: path.to_path_buf(),
            msg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelParams;
    use crate::netsim::run_acquisition;
    use crate::scenario::{make_trajectory, Arena, MotionParams, TrajectoryKind};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    /// Sort-and-pick-middle reference with replicate padding.
    fn brute_median(series: &[f64], window: usize) -> Vec<f64> {
        let half = window as isize / 2;
        let n = series.len() as isize;
        (0..n)
            .map(|i| {
                let mut w: Vec<f64> = (i - half..=i + half).map(|j| series[j.clamp(0, n - 1) as usize]).collect();
                w.sort_by(|a, b| a.partial_cmp(b).unwrap());
                w[w.len() / 2]
            })
            .collect()
    }

    #[test]
    fn median_example() {
        assert_eq!(median_filter(&[5., 1., 9., 3., 7.], 3).unwrap(), vec![5., 5., 3., 7., 7.]);
        let s = [2.0, -1.0, 4.5];
        assert_eq!(median_filter(&s, 1).unwrap(), s.to_vec());
    }

    #[test]
    fn median_rejects_bad_windows() {
        assert!(matches!(median_filter(&[1., 2., 3.], 2), Err(Error::Param(_))));
        assert!(matches!(median_filter(&[1., 2., 3.], 5), Err(Error::Param(_))));
        assert!(matches!(median_filter(&[1., 2., 3.], 0), Err(Error::Param(_))));
    }

    #[test]
    fn median_matches_brute_force() {
        let mut rng = crate::rng::stream_rng(99, 0);
        for _ in 0..1000 {
            let len = rng.random_range(1..60);
            let series: Vec<f64> = (0..len).map(|_| rng.random_range(-90.0..-30.0)).collect();
            let window = 2 * rng.random_range(0..=(len - 1) / 2) + 1;
            assert_eq!(median_filter(&series, window).unwrap(), brute_median(&series, window));
        }
    }

    #[test]
    fn normalize_examples() {
        let st = fit_normalize(&[-50.0, -60.0]).unwrap();
        assert_eq!(st.apply(0, &[-50.0, -60.0]), vec![1.0, -1.0]);
        let c = fit_normalize(&[-42.0; 8]).unwrap();
        assert!(c.apply(0, &[-42.0; 8]).iter().all(|&v| v == 0.0));
        // frozen statistics on other data
        assert_eq!(st.apply(0, &[-55.0, -45.0]), vec![0.0, 2.0]);
        assert!(fit_normalize(&[]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_self_stats(xs in proptest::collection::vec(-100.0f64..0.0, 2..200)) {
            let st = fit_normalize(&xs).unwrap();
            prop_assume!(st.std[0] > 1e-3);
            let y = st.apply(0, &xs);
            let n = y.len() as f64;
            let m = y.iter().sum::<f64>() / n;
            let s = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn binning_examples() {
        let spec = BinningSpec::default();
        assert_eq!(bin_index(spec.d_min, &spec).unwrap(), 0);
        assert!((bin_center(0, &spec).unwrap() - 0.07375).abs() < 1e-15);
        assert_eq!(bin_index(spec.d_min + 30.0 * spec.l_bin - 1e-9, &spec).unwrap(), 29);
        assert!(matches!(bin_index(spec.d_max(), &spec), Err(Error::Label(_))));
        assert!(matches!(bin_index(0.0, &spec), Err(Error::Label(_))));
        assert!(bin_center(30, &spec).is_err());
    }

    fn ramp_windows(ticks: usize, window: usize) -> Result<WindowSet> {
        let spec = BinningSpec::default();
        let dist: Vec<f64> = (0..ticks).map(|t| 0.02 + (t % 300) as f64 * 0.01).collect();
        let feats: Vec<f64> = (0..ticks * 5).map(|v| v as f64).collect();
        make_windows(feats, 5, dist, &spec, window, 1)
    }

    #[test]
    fn window_counts() {
        assert_eq!(ramp_windows(100, 20).unwrap().len(), 81);
        let one = ramp_windows(20, 20).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.labels[0], bin_index(one.distances[19], &BinningSpec::default()).unwrap());
        assert!(ramp_windows(10, 20).unwrap().is_empty());
        let mut rng = crate::rng::stream_rng(5, 0);
        for _ in 0..100 {
            let t = rng.random_range(1..400);
            let w = rng.random_range(1..50);
            assert_eq!(ramp_windows(t, w).unwrap().len(), (t + 1).saturating_sub(w));
        }
    }

    #[test]
    fn window_layout() {
        let set = ramp_windows(30, 4).unwrap();
        let b = set.batch(&[2]);
        assert_eq!(b.inputs.shape(), &[1, 4, 5]);
        // ticks 2..6, node-major within a tick
        assert_eq!(b.inputs.data()[0], 10.0);
        assert_eq!(b.inputs.data()[19], 29.0);
    }

    #[test]
    fn shuffle_preserves_multiset() {
        let set = ramp_windows(200, 20).unwrap();
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.shuffle(&mut crate::rng::stream_rng(1, 0));
        let shuffled = set.batch(&idx);
        let mut inverse = vec![0; idx.len()];
        for (pos, &i) in idx.iter().enumerate() {
            inverse[i] = pos;
        }
        let restored = WindowSet {
            features: shuffled.inputs.data().to_vec(),
            distances: vec![0.0; 0],
            starts: vec![],
            labels: vec![],
            nodes: 5,
            window: 20,
        };
        let per = 100;
        for i in 0..set.len() {
            let p = inverse[i];
            assert_eq!(&restored.features[p * per..(p + 1) * per], set.window(i));
            assert_eq!(shuffled.labels[p], set.labels[i]);
        }
    }

    fn sim(duration: f64, loss: f64) -> Dataset {
        let arena = Arena::default();
        let traj = make_trajectory(&arena, TrajectoryKind::Lissajous, duration, &MotionParams::default(), 3).unwrap();
        run_acquisition(&arena, &traj, &[ChannelParams::default(); 5], loss, 4.0, 3).unwrap()
    }

    #[test]
    fn gap_fill_carries_last_value() {
        let ds = sim(30.0, 0.3);
        let grid = gap_fill(&ds).unwrap();
        assert_eq!(grid.ticks(), 600);
        let delivered = ds.records_per_node();
        for n in 0..5 {
            assert_eq!(grid.filled[n], 600 - delivered[n]);
        }
        let by_tick: std::collections::HashMap<(u8, u64), f64> =
            ds.records.iter().map(|r| ((r.node_id, r.seq), r.rssi_dbm)).collect();
        for t in 1..600u64 {
            if !by_tick.contains_key(&(4, t)) {
                assert_eq!(grid.rssi[4][t as usize], grid.rssi[4][t as usize - 1]);
            }
        }
    }

    #[test]
    fn preprocess_end_to_end() {
        let ds = sim(120.0, 0.05);
        let prep = preprocess(&ds, &BinningSpec::default(), &PrepConfig::default()).unwrap();
        let [a, b, c] = split_ranges(2400, &PrepConfig::default());
        assert_eq!((a.len(), b.len(), c.len()), (1680, 360, 360));
        assert_eq!(prep.train.len(), 1680 - 19);
        assert_eq!(prep.val.len(), 360 - 19);
        assert_eq!(prep.meta.get("pipeline.order"), Some("gap_fill,split,median_filter,normalize,window"));
        // train features are standardized per node
        for n in 0..5 {
            let col: Vec<f64> = prep.train.features.iter().skip(n).step_by(5).copied().collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-9);
        }
        let again = preprocess(&ds, &BinningSpec::default(), &PrepConfig::default()).unwrap();
        assert_eq!(prep.encode(), again.encode());
        let back = Prepared::decode(&prep.encode()).unwrap();
        assert_eq!(back.encode(), prep.encode());
        assert_eq!(back.train, prep.train);
        assert_eq!(back.stats, prep.stats);
    }

    #[test]
    fn lissajous_labels_cover_radial_range() {
        let ds = sim(120.0, 0.0);
        let spec = BinningSpec::default();
        let d = ds.truth.distances();
        let lo = bin_index(d.iter().copied().fold(f64::INFINITY, f64::min), &spec).unwrap();
        let hi = bin_index(d.iter().copied().fold(0.0, f64::max), &spec).unwrap();
        let cfg = PrepConfig {
            train_frac: 0.98,
            val_frac: 0.01,
            filter_distance: false,
            ..Default::default()
        };
        let prep = preprocess(&ds, &spec, &cfg).unwrap();
        let mut seen = vec![false; spec.n_bins];
        for set in [&prep.train, &prep.val, &prep.test] {
            set.labels.iter().for_each(|&l| seen[l] = true);
        }
        assert!((lo..=hi).all(|b| seen[b]), "{lo}..={hi} {seen:?}");
    }
}
