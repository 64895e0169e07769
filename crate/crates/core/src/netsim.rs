//! Star-network acquisition: five nodes report RSSI to a coordinator every
//! tick, and the coordinator persists the merged stream with ground truth.
//!
//! On-disk layout of a dataset directory:
//!
//! * `records.csv`: header `node_id,seq,timestamp_ms,rssi_dbm`, then one
//!   [`encode_record`] line per delivered report, sorted by
//!   `(timestamp_ms, node_id)`.
//! * `truth.csv`: header `timestamp_ms,distance_m`, distance with 4 decimals.
//! * `meta.txt`: `key = value` lines describing how the data was generated.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::channel::{ChannelParams, Multipath, NodeChannel};
use crate::config::KvMap;
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::scenario::{sample_ground_truth, Arena, GroundTruth, Point, Trajectory};
use crate::{NUM_NODES, TARGET_NODE, TICK_MS};

pub const RECORDS_FILE: &str = "records.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const META_FILE: &str = "meta.txt";

pub const RECORDS_HEADER: &str = "node_id,seq,timestamp_ms,rssi_dbm";
pub const TRUTH_HEADER: &str = "timestamp_ms,distance_m";

/// Channel models are evaluated no closer than this to the WAP.
const MIN_LINK_DISTANCE: f64 = 1e-3;

/// One RSSI report. `rssi_dbm` is held at the wire's 0.01 dB resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RssiRecord {
    pub node_id: u8,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub rssi_dbm: f64,
}

impl RssiRecord {
    /// Builds a record, quantizing the RSSI to two decimals.
    pub fn new(node_id: u8, seq: u64, timestamp_ms: u64, rssi_dbm: f64) -> Result<Self> {
        if node_id as usize >= NUM_NODES {
            return Err(Error::Parse {
                field: "node_id",
                msg: format!("node_id {node_id} out of range 0..{NUM_NODES}"),
            });
        }
        if !rssi_dbm.is_finite() {
            return Err(Error::Numeric(format!("non-finite RSSI from node {node_id}")));
        }
        Ok(Self {
            node_id,
            seq,
            timestamp_ms,
            rssi_dbm: quantize_centi(rssi_dbm),
        })
    }
}

/// Rounds to the nearest 0.01 and clears negative zero.
pub fn quantize_centi(x: f64) -> f64 {
    (x * 100.0).round() / 100.0 + 0.0
}

/// Wire form: `node_id,seq,timestamp_ms,rssi_dbm\n` with two RSSI decimals.
pub fn encode_record(r: &RssiRecord) -> String {
    format!("{},{},{},{:.2}\n", r.node_id, r.seq, r.timestamp_ms, r.rssi_dbm)
}

fn parse_field<T: std::str::FromStr>(s: Option<&str>, field: &'static str) -> Result<T> {
    let s = s.ok_or(Error::Parse {
        field,
        msg: "missing".into(),
    })?;
    s.trim().parse().map_err(|_| Error::Parse {
        field,
        msg: format!("`{s}` is not a valid number"),
    })
}

/// Parses one wire line. A trailing newline is optional.
pub fn decode_record(line: &str) -> Result<RssiRecord> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 4 {
        return Err(Error::Parse {
            field: "record",
            msg: format!("expected 4 fields, found {}", fields.len()),
        });
    }
    let node_id: u8 = parse_field(Some(fields[0]), "node_id")?;
    if node_id as usize >= NUM_NODES {
        return Err(Error::Parse {
            field: "node_id",
            msg: format!("node_id {node_id} out of range 0..{NUM_NODES}"),
        });
    }
    let seq = parse_field(Some(fields[1]), "seq")?;
    let timestamp_ms = parse_field(Some(fields[2]), "timestamp_ms")?;
    let rssi_dbm: f64 = parse_field(Some(fields[3]), "rssi_dbm")?;
    if !rssi_dbm.is_finite() {
        return Err(Error::Parse {
            field: "rssi_dbm",
            msg: "not finite".into(),
        });
    }
    Ok(RssiRecord {
        node_id,
        seq,
        timestamp_ms,
        rssi_dbm: rssi_dbm + 0.0,
    })
}

/// How a dataset was generated. Written to `meta.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub params: [ChannelParams; NUM_NODES],
    pub arena: Arena,
    pub seed: u64,
    pub loss_prob: f64,
    pub truth_noise_mm: f64,
    /// Free-form provenance, e.g. trajectory kind and duration.
    pub extra: Vec<(String, String)>,
}

impl DatasetMeta {
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.push("seed", self.seed);
        kv.push("loss_prob", self.loss_prob);
        kv.push("truth_noise_mm", self.truth_noise_mm);
        kv.push("arena.room_w", self.arena.room.0);
        kv.push("arena.room_d", self.arena.room.1);
        kv.push("arena.inner_w", self.arena.inner.0);
        kv.push("arena.inner_d", self.arena.inner.1);
        kv.push("arena.wap_x", self.arena.wap.x);
        kv.push("arena.wap_y", self.arena.wap.y);
        for (i, p) in self.params.iter().enumerate() {
            kv.push(format!("node{i}.p0"), p.p0);
            kv.push(format!("node{i}.d0"), p.d0);
            kv.push(format!("node{i}.gamma"), p.gamma);
            kv.push(format!("node{i}.sigma"), p.sigma);
            kv.push(format!("node{i}.rho"), p.rho);
            kv.push(format!("node{i}.rician_k"), p.rician_k);
            kv.push(format!("node{i}.seed"), p.seed);
        }
        for (k, v) in &self.extra {
            kv.push(k.clone(), v);
        }
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let mut params = [ChannelParams::default(); NUM_NODES];
        for (i, p) in params.iter_mut().enumerate() {
            p.p0 = kv.get_parsed(&format!("node{i}.p0"))?;
            p.d0 = kv.get_parsed(&format!("node{i}.d0"))?;
            p.gamma = kv.get_parsed(&format!("node{i}.gamma"))?;
            p.sigma = kv.get_parsed(&format!("node{i}.sigma"))?;
            p.rho = kv.get_parsed(&format!("node{i}.rho"))?;
            p.rician_k = kv.get_parsed(&format!("node{i}.rician_k"))?;
            p.seed = kv.get_parsed(&format!("node{i}.seed"))?;
        }
        let arena = Arena::centered(
            (kv.get_parsed("arena.room_w")?, kv.get_parsed("arena.room_d")?),
            (kv.get_parsed("arena.inner_w")?, kv.get_parsed("arena.inner_d")?),
            Some(Point::new(kv.get_parsed("arena.wap_x")?, kv.get_parsed("arena.wap_y")?)),
        );
        let known = |k: &str| {
            matches!(k, "seed" | "loss_prob" | "truth_noise_mm")
                || k.starts_with("arena.")
                || k.starts_with("node")
        };
        Ok(Self {
            params,
            arena,
            seed: kv.get_parsed("seed")?,
            loss_prob: kv.get_parsed("loss_prob")?,
            truth_noise_mm: kv.get_parsed("truth_noise_mm")?,
            extra: kv
                .iter()
                .filter(|(k, _)| !known(k))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        })
    }
}

/// Merged record stream, ground truth and provenance of one acquisition run.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<RssiRecord>,
    pub truth: GroundTruth,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Delivered record count per node.
    pub fn records_per_node(&self) -> [usize; NUM_NODES] {
        let mut counts = [0; NUM_NODES];
        for r in &self.records {
            counts[r.node_id as usize] += 1;
        }
        counts
    }

    /// Number of ticks covered by the ground truth.
    pub fn ticks(&self) -> usize {
        self.truth.len()
    }

    pub fn records_csv(&self) -> String {
        let mut s = String::with_capacity(self.records.len() * 24 + 40);
        s.push_str(RECORDS_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&encode_record(r));
        }
        s
    }

    pub fn truth_csv(&self) -> String {
        let mut s = String::with_capacity(self.truth.len() * 16 + 24);
        s.push_str(TRUTH_HEADER);
        s.push('\n');
        for &(t, d) in &self.truth.samples {
            let _ = writeln!(s, "{t},{d:.4}");
        }
        s
    }

    /// Writes the three dataset files into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))
        };
        write(RECORDS_FILE, self.records_csv())?;
        write(TRUTH_FILE, self.truth_csv())?;
        write(META_FILE, self.meta.to_kv().to_string())?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(path, e))
        };
        let format_err = |name: &str, msg: String| Error::Format {
            path: dir.join(name),
            msg,
        };

        let records_text = read(RECORDS_FILE)?;
        let mut lines = records_text.lines();
        if lines.next() != Some(RECORDS_HEADER) {
            return Err(format_err(RECORDS_FILE, "missing header".into()));
        }
        let records = lines
            .enumerate()
            .map(|(i, l)| {
                decode_record(l).map_err(|e| format_err(RECORDS_FILE, format!("line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<_>>>()?;

        let truth_text = read(TRUTH_FILE)?;
        let mut lines = truth_text.lines();
        if lines.next() != Some(TRUTH_HEADER) {
            return Err(format_err(TRUTH_FILE, "missing header".into()));
        }
        let samples = lines
            .enumerate()
            .map(|(i, l)| {
                let bad = || format_err(TRUTH_FILE, format!("line {}: malformed `{l}`", i + 2));
                let (t, d) = l.split_once(',').ok_or_else(bad)?;
                Ok((t.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<_>>>()?;

        let meta_text = read(META_FILE)?;
        let kv = KvMap::parse(&meta_text).map_err(|e| format_err(META_FILE, e.to_string()))?;
        let meta = DatasetMeta::from_kv(&kv).map_err(|e| format_err(META_FILE, e.to_string()))?;
        Ok(Self {
            records,
            truth: GroundTruth { samples },
            meta,
        })
    }
}

/// Simulates every tick of `traj`: fixed nodes sample their link at their
/// fixed distance, the target at its current distance. Each report is
/// dropped independently with probability `loss_prob`. The sequence number
/// counts ticks, so drops leave gaps in `seq`.
pub fn run_acquisition(
    arena: &Arena,
    traj: &Trajectory,
    params: &[ChannelParams; NUM_NODES],
    loss_prob: f64,
    truth_noise_mm: f64,
    seed: u64,
) -> Result<Dataset> {
    arena.validate()?;
    if !(0.0..1.0).contains(&loss_prob) {
        return Err(Error::Config(format!("loss_prob must be in [0, 1), got {loss_prob}")));
    }
    let mut channels = params
        .iter()
        .enumerate()
        .map(|(i, p)| NodeChannel::new(*p, i as u8, i as u8 != TARGET_NODE, seed))
        .collect::<Result<Vec<_>>>()?;
    let fixed_dist: Vec<f64> = arena.fixed_nodes.iter().map(|p| p.dist(&arena.wap)).collect();
    let mut loss_rng = rng::stream_rng(seed, stream::LOSS);

    let mut records = Vec::with_capacity(traj.len() * NUM_NODES);
    for (tick, &(t, pos)) in traj.samples.iter().enumerate() {
        for (node, ch) in channels.iter_mut().enumerate() {
            let d = if node as u8 == TARGET_NODE {
                pos.dist(&arena.wap)
            } else {
                fixed_dist[node]
            };
            // The channel advances even when the report is lost.
            let rssi = ch.sample(d.max(MIN_LINK_DISTANCE))?;
            let dropped = loss_prob > 0.0 && loss_rng.random::<f64>() < loss_prob;
            if !dropped {
                records.push(RssiRecord::new(node as u8, tick as u64, t, rssi)?);
            }
        }
    }
    let truth = sample_ground_truth(traj, arena.wap, truth_noise_mm, seed);
    Ok(Dataset {
        records,
        truth,
        meta: DatasetMeta {
            params: *params,
            arena: arena.clone(),
            seed,
            loss_prob,
            truth_noise_mm,
            extra: vec![("tick_ms".into(), TICK_MS.to_string())],
        },
    })
}

/// Static multipath offsets of the fixed nodes, for reporting.
pub fn static_offsets(params: &[ChannelParams; NUM_NODES]) -> Vec<f64> {
    (0..NUM_NODES as u8)
        .filter(|&i| i != TARGET_NODE)
        .map(|i| match Multipath::static_for(&params[i as usize], i) {
            Multipath::Static { offset_db } => offset_db,
            Multipath::Fading => 0.0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{make_trajectory, MotionParams, TrajectoryKind};
    use proptest::prelude::*;

    fn sim(duration: f64, loss: f64, seed: u64) -> Dataset {
        let arena = Arena::default();
        let traj =
            make_trajectory(&arena, TrajectoryKind::Lissajous, duration, &MotionParams::default(), seed).unwrap();
        run_acquisition(&arena, &traj, &[ChannelParams::default(); NUM_NODES], loss, 4.0, seed).unwrap()
    }

    #[test]
    fn encode_examples() {
        let r = RssiRecord::new(2, 7, 350, -58.5).unwrap();
        assert_eq!(encode_record(&r), "2,7,350,-58.50\n");
        let z = RssiRecord::new(0, 0, 0, 0.0).unwrap();
        assert_eq!(encode_record(&z), "0,0,0,0.00\n");
        let nz = RssiRecord::new(0, 0, 0, -0.001).unwrap();
        assert_eq!(encode_record(&nz), "0,0,0,0.00\n");
    }

    #[test]
    fn decode_examples() {
        assert_eq!(
            decode_record("4,12,600,-71.25\n").unwrap(),
            RssiRecord {
                node_id: 4,
                seq: 12,
                timestamp_ms: 600,
                rssi_dbm: -71.25
            }
        );
        match decode_record("9,0,0,-50.00\n") {
            Err(Error::Parse { field: "node_id", .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode_record("2,7,abc,-58.50\n") {
            Err(Error::Parse { field: "timestamp_ms", .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode_record("2,7,350\n") {
            Err(Error::Parse { field: "record", .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(decode_record("2,7,350,nan\n").is_err());
    }

    proptest! {
        #[test]
        fn record_round_trip(node in 0u8..5, seq: u64, ts: u64, centi in -20_000i64..2_000) {
            let r = RssiRecord::new(node, seq, ts, centi as f64 / 100.0).unwrap();
            let back = decode_record(&encode_record(&r)).unwrap();
            prop_assert_eq!(back.rssi_dbm.to_bits(), r.rssi_dbm.to_bits());
            prop_assert_eq!(back, r);
        }
    }

    #[test]
    fn sixty_seconds_without_loss() {
        let ds = sim(60.0, 0.0, 1);
        assert_eq!(ds.records_per_node(), [1200; NUM_NODES]);
        assert!(ds
            .records
            .windows(2)
            .all(|w| (w[0].timestamp_ms, w[0].node_id) < (w[1].timestamp_ms, w[1].node_id)));
    }

    #[test]
    fn seq_gaps_match_drops() {
        let ds = sim(300.0, 0.2, 5);
        let ticks = ds.ticks() as u64;
        for node in 0..NUM_NODES as u8 {
            let seqs: Vec<u64> = ds.records.iter().filter(|r| r.node_id == node).map(|r| r.seq).collect();
            assert!(seqs.windows(2).all(|w| w[0] < w[1]));
            let drops = ticks - seqs.len() as u64;
            let mut gaps = seqs.first().copied().unwrap_or(ticks);
            gaps += seqs.windows(2).map(|w| w[1] - w[0] - 1).sum::<u64>();
            gaps += ticks - 1 - seqs.last().copied().unwrap_or(0);
            assert_eq!(gaps, drops);
        }
    }

    #[test]
    fn write_read_round_trip() {
        let ds = sim(20.0, 0.1, 2);
        let dir = tempfile::tempdir().unwrap();
        ds.write_dir(dir.path()).unwrap();
        let back = Dataset::read_dir(dir.path()).unwrap();
        assert_eq!(back.records, ds.records);
        assert_eq!(back.meta, ds.meta);
        for (a, b) in back.truth.samples.iter().zip(&ds.truth.samples) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() <= 5e-5);
        }
    }

    #[test]
    fn rejects_bad_loss_prob() {
        let arena = Arena::default();
        let traj = make_trajectory(&arena, TrajectoryKind::Lissajous, 1.0, &MotionParams::default(), 0).unwrap();
        let p = [ChannelParams::default(); NUM_NODES];
        assert!(run_acquisition(&arena, &traj, &p, 1.0, 4.0, 0).is_err());
        assert!(run_acquisition(&arena, &traj, &p, -0.1, 4.0, 0).is_err());
    }
}
