//! Bin-based error metrics and the path-loss inversion baseline.
//!
//! For a true bin `x` and predicted bin `y` the worst-case distance error is
//! `e_max = |x - y| * l_bin + l_bin / 2`; `E` is its mean over a test set.
//! Classification accuracy is reported as the "confidence" column.

use std::fmt::Write as _;

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::pipeline::{bin_index, BinningSpec, WindowSet};
use crate::TARGET_NODE;

pub fn e_max(x: usize, y: usize, l_bin: f64) -> f64 {
    x.abs_diff(y) as f64 * l_bin + l_bin / 2.0
}

fn check_pair(xs: &[usize], ys: &[usize]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::shape("label vectors", &[xs.len()], &[ys.len()]));
    }
    if xs.is_empty() {
        return Err(Error::Param("metrics need at least one test case".into()));
    }
    Ok(())
}

/// Mean of [`e_max`] over all pairs.
pub fn avg_upper_bound(xs: &[usize], ys: &[usize], l_bin: f64) -> Result<f64> {
    check_pair(xs, ys)?;
    let steps: usize = xs.iter().zip(ys).map(|(x, y)| x.abs_diff(*y)).sum();
    Ok(steps as f64 * l_bin / xs.len() as f64 + l_bin / 2.0)
}

pub fn classification_accuracy(xs: &[usize], ys: &[usize]) -> Result<f64> {
    check_pair(xs, ys)?;
    let hits = xs.iter().zip(ys).filter(|(x, y)| x == y).count();
    Ok(hits as f64 / xs.len() as f64)
}

/// Inverts the mean path-loss model: `d = d0 * 10^((p0 - rssi) / (10 * gamma))`.
pub fn baseline_pathloss_distance(rssi: f64, params: &ChannelParams) -> f64 {
    params.d0 * 10f64.powf((params.p0 - rssi) / (10.0 * params.gamma))
}

/// Bin of a baseline distance estimate, clamped into range.
pub fn baseline_bin(rssi: f64, params: &ChannelParams, spec: &BinningSpec) -> usize {
    let d = baseline_pathloss_distance(rssi, params);
    match bin_index(d, spec) {
        Ok(b) => b,
        Err(_) if d < spec.d_min => 0,
        Err(_) => spec.n_bins - 1,
    }
}

/// Baseline bins for every window of `set`, from the target node's
/// de-normalized RSSI at the window's last tick.
pub fn baseline_predictions(
    set: &WindowSet,
    target_mean: f64,
    target_std: f64,
    params: &ChannelParams,
    spec: &BinningSpec,
) -> Vec<usize> {
    let node = TARGET_NODE as usize;
    (0..set.len())
        .map(|i| {
            let last = set.starts[i] + set.window - 1;
            let z = set.features[last * set.nodes + node];
            baseline_bin(z * target_std + target_mean, params, spec)
        })
        .collect()
}

/// `counts[true * n_bins + predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub n_bins: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_labels(xs: &[usize], ys: &[usize], n_bins: usize) -> Result<Self> {
        check_pair(xs, ys)?;
        let mut counts = vec![0; n_bins * n_bins];
        for (&x, &y) in xs.iter().zip(ys) {
            if x >= n_bins || y >= n_bins {
                return Err(Error::Label(format!("bin pair ({x}, {y}) out of range 0..{n_bins}")));
            }
            counts[x * n_bins + y] += 1;
        }
        Ok(Self { n_bins, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Test cases per true bin.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.n_bins).map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.n_bins).map(|i| self.counts[i * self.n_bins + i]).sum();
        diag as f64 / self.total() as f64
    }

    pub fn avg_upper_bound(&self, l_bin: f64) -> f64 {
        let mut steps = 0u64;
        for x in 0..self.n_bins {
            for y in 0..self.n_bins {
                steps += self.counts[x * self.n_bins + y] * x.abs_diff(y) as u64;
            }
        }
        steps as f64 * l_bin / self.total() as f64 + l_bin / 2.0
    }

    /// Header row of predicted bins, then one row per true bin.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for y in 0..self.n_bins {
            write!(s, ",{y}").unwrap();
        }
        s.push('\n');
        for x in 0..self.n_bins {
            write!(s, "{x}").unwrap();
            for y in 0..self.n_bins {
                write!(s, ",{}", self.counts[x * self.n_bins + y]).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub n: usize,
    pub accuracy: f64,
    /// Error bound of a correct prediction, `l_bin / 2`.
    pub confidence_bound_m: f64,
    pub avg_upper_bound_m: f64,
    pub confusion: ConfusionMatrix,
}

pub const METRICS_HEADER: &str = "dataset,n,accuracy,confidence_bound_m,avg_upper_bound_m";

impl MetricsReport {
    pub fn compute(dataset: impl Into<String>, truth: &[usize], pred: &[usize], spec: &BinningSpec) -> Result<Self> {
        let confusion = ConfusionMatrix::from_labels(truth, pred, spec.n_bins)?;
        Ok(Self {
            dataset: dataset.into(),
            n: truth.len(),
            accuracy: classification_accuracy(truth, pred)?,
            confidence_bound_m: spec.l_bin / 2.0,
            avg_upper_bound_m: avg_upper_bound(truth, pred, spec.l_bin)?,
            confusion,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6}",
            self.dataset, self.n, self.accuracy, self.confidence_bound_m, self.avg_upper_bound_m
        )
    }
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Aligned text table: dataset, confidence in percent, average upper bound
/// in centimeters.
pub fn metrics_table(reports: &[MetricsReport]) -> String {
    let rows: Vec<[String; 3]> = reports
        .iter()
        .map(|r| {
            [
                r.dataset.clone(),
                format!("{:.2}", r.accuracy * 100.0),
                format!("{:.3}", r.avg_upper_bound_m * 100.0),
            ]
        })
        .collect();
    let head = ["Dataset", "Confidence (%)", "Avg upper bound E (cm)"];
    let width: Vec<usize> = (0..3)
        .map(|c| rows.iter().map(|r| r[c].len()).chain([head[c].len()]).max().unwrap())
        .collect();
    let mut s = String::new();
    let line = |s: &mut String, cells: [&str; 3]| {
        writeln!(s, "{:<w0$}  {:>w1$}  {:>w2$}", cells[0], cells[1], cells[2], w0 = width[0], w1 = width[1], w2 = width[2])
            .unwrap();
    };
    line(&mut s, head);
    writeln!(s, "{}", "-".repeat(width.iter().sum::<usize>() + 4)).unwrap();
    for r in &rows {
        line(&mut s, [&r[0], &r[1], &r[2]]);
    }
    s
}
