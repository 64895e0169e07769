//! Command-line front end: `simulate`, `preprocess`, `train`, `eval` and
//! `compare`.
//!
//! Settings come from built-in defaults, then an optional `--config` file of
//! `key = value` lines, then `--key value` overrides on the command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::Path;

use clap::{Arg, ArgAction};

use crate::config::{keys_for, Command, Config, KvMap};
use crate::error::{Error, Result};
use crate::eval::{baseline_predictions, metrics_csv, metrics_table, MetricsReport};
use crate::models::{predict_set, train_with_callback, Model, ModelKind, TrainTrace};
use crate::netsim::{run_acquisition, Dataset, DatasetMeta};
use crate::pipeline::{preprocess, Prepared};
use crate::scenario::make_trajectory;
use crate::TARGET_NODE;

const ARCHS: [&str; 3] = ["fcn", "cnn", "lstm"];

fn about(cmd: Command) -> &'static str {
    match cmd {
        Command::Simulate => "Generate synthetic acquisition datasets (records.csv, truth.csv, meta.txt)",
        Command::Preprocess => "Gap-fill, filter, normalize and window a dataset into a tensor cache",
        Command::Train => "Train one architecture; writes <out.dir>/<arch>.ckpt and <arch>_trace.csv",
        Command::Eval => "Score a checkpoint and the path-loss baseline; writes <arch>_metrics.csv",
        Command::Compare => "Train all three architectures on the same tensors; writes compare_*.csv",
    }
}

fn key_help(cmd: Command) -> String {
    let mut s = String::from("Configuration keys (set in --config FILE or as --key value):\n");
    let width = keys_for(cmd).map(|k| k.key.len()).max().unwrap_or(0);
    for k in keys_for(cmd) {
        let default = if k.default.is_empty() { "\"\"" } else { k.default };
        s.push_str(&format!("  {:<width$}  {} [default: {}]\n", k.key, k.help, default));
    }
    s
}

fn clap_command() -> clap::Command {
    let mut root = clap::Command::new("wifidist")
        .about("WiFi RSSI indoor distance estimation toolkit")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Command::ALL {
        let mut sub = clap::Command::new(cmd.name())
            .about(about(cmd))
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("FILE")
                    .help("Configuration file of `key = value` lines")
                    .action(ArgAction::Set),
            )
            .after_help(key_help(cmd));
        if matches!(cmd, Command::Train | Command::Eval) {
            sub = sub.arg(
                Arg::new("arch")
                    .required(true)
                    .value_parser(ARCHS)
                    .help("Architecture"),
            );
        }
        root = root.subcommand(sub);
    }
    root
}

/// Separates `--key value` / `--key=value` overrides from the arguments
/// clap understands.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, KvMap)> {
    let mut kept = Vec::new();
    let mut overrides = KvMap::default();
    let mut it = args.into_iter().peekable();
    let mut sub_seen = false;
    while let Some(a) = it.next() {
        let passthrough = !sub_seen
            || !a.starts_with("--")
            || a == "--help"
            || a == "--version"
            || a == "--config"
            || a.starts_with("--config=");
        if passthrough {
            if a == "--config" {
                kept.push(a);
                if let Some(v) = it.next() {
                    kept.push(v);
                }
                continue;
            }
            if !a.starts_with('-') && kept.len() == 1 {
                sub_seen = true;
            }
            kept.push(a);
            continue;
        }
        let body = &a[2..];
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("override `--{body}` needs a value")))?;
                (body.to_string(), v)
            }
        };
        overrides.set(key, value);
    }
    Ok((kept, overrides))
}

/// Runs the front end on `args` (including the program name) and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<String> = args.into_iter().map(|a| a.into().to_string_lossy().into_owned()).collect();
    let (kept, overrides) = match split_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let matches = match clap_command().try_get_matches_from(kept) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cmd = Command::ALL.into_iter().find(|c| c.name() == name).expect("registered subcommand");
    let result = load_config(sub.get_one::<String>("config").map(Path::new), &overrides).and_then(|cfg| {
        let arch = match sub.try_get_one::<String>("arch") {
            Ok(Some(a)) => Some(a.parse::<ModelKind>()?),
            _ => None,
        };
        match cmd {
            Command::Simulate => cmd_simulate(&cfg, out),
            Command::Preprocess => cmd_preprocess(&cfg, out),
            Command::Train => cmd_train(&cfg, arch.expect("required"), out).map(|_| ()),
            Command::Eval => cmd_eval(&cfg, arch.expect("required"), out).map(|_| ()),
            Command::Compare => cmd_compare(&cfg, out),
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Defaults, overlaid with the file at `path`, overlaid with `overrides`.
pub fn load_config(path: Option<&Path>, overrides: &KvMap) -> Result<Config> {
    let mut kv = match path {
        Some(p) => KvMap::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => KvMap::default(),
    };
    kv.merge(overrides);
    Config::from_kv(&kv)
}

fn out_line(out: &mut dyn Write, s: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(s).and_then(|_| out.write_all(b"\n")).map_err(|e| Error::io("<stdout>", e))
}

macro_rules! say {
    ($out:expr, $($t:tt)*) => { out_line($out, format_args!($($t)*)) };
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn cmd_simulate(cfg: &Config, out: &mut dyn Write) -> Result<()> {
    for env in 0..cfg.sim.environments {
        let seed = cfg.env_run_seed(env);
        let traj = make_trajectory(&cfg.arena, cfg.sim.traj_kind, cfg.sim.duration_s, &cfg.sim.motion, seed)?;
        let mut ds = run_acquisition(
            &cfg.arena,
            &traj,
            &cfg.env_channel(env),
            cfg.sim.loss_prob,
            cfg.sim.truth_noise_mm,
            seed,
        )?;
        ds.meta.extra.extend([
            ("env".to_string(), env.to_string()),
            ("traj.kind".to_string(), cfg.sim.traj_kind.to_string()),
            ("sim.duration_s".to_string(), cfg.sim.duration_s.to_string()),
        ]);
        let dir = cfg.env_dir(env);
        ds.write_dir(&dir)?;
        let counts = ds.records_per_node();
        if counts.iter().all(|&c| c == counts[0]) {
            say!(out, "{}: {} ticks, {} records/node", dir.display(), ds.ticks(), counts[0])?;
        } else {
            let list: Vec<String> = counts.iter().map(usize::to_string).collect();
            say!(out, "{}: {} ticks, records/node {}", dir.display(), ds.ticks(), list.join(","))?;
        }
    }
    Ok(())
}

fn run_preprocess(cfg: &Config) -> Result<Prepared> {
    let ds = Dataset::read_dir(&cfg.env_dir(cfg.data_env))?;
    let mut prep = preprocess(&ds, &cfg.bins, &cfg.prep)?;
    prep.meta.set("data.env", cfg.data_env);
    Ok(prep)
}

pub fn cmd_preprocess(cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let prep = run_preprocess(cfg)?;
    prep.save(&cfg.prep_cache)?;
    say!(
        out,
        "{}: windows train={} val={} test={} (W={}, {} bins)",
        cfg.prep_cache.display(),
        prep.train.len(),
        prep.val.len(),
        prep.test.len(),
        prep.config.window,
        prep.spec.n_bins
    )
}

/// The tensor cache if present and built with the current settings,
/// otherwise a fresh in-memory preprocessing run.
pub fn load_tensors(cfg: &Config, out: &mut dyn Write) -> Result<Prepared> {
    if !cfg.prep_cache.exists() {
        say!(out, "no tensor cache at {}; preprocessing in memory", cfg.prep_cache.display())?;
        return run_preprocess(cfg);
    }
    let prep = Prepared::load(&cfg.prep_cache)?;
    let same_env = prep.meta.get("data.env") == Some(cfg.data_env.to_string().as_str());
    if prep.spec != cfg.bins || prep.config != cfg.prep || !same_env {
        return Err(Error::Config(format!(
            "tensor cache {} was built with different settings; rerun preprocess",
            cfg.prep_cache.display()
        )));
    }
    Ok(prep)
}

fn provenance(cfg: &Config) -> KvMap {
    let mut kv = KvMap::default();
    let t = &cfg.train;
    kv.set("seed", cfg.seed);
    kv.set("data.env", cfg.data_env);
    kv.set("train.batch_size", t.batch_size);
    kv.set("train.iterations", t.iterations);
    kv.set("train.lr", format!("{:?}", t.lr));
    kv.set("train.max_grad_norm", format!("{:?}", t.max_grad_norm));
    kv.set("train.clip_mode", t.clip_mode);
    kv.set("bins.d_min", format!("{:?}", cfg.bins.d_min));
    kv.set("bins.n_bins", cfg.bins.n_bins);
    kv.set("bins.l_bin", format!("{:?}", cfg.bins.l_bin));
    kv
}

fn train_one(cfg: &Config, kind: ModelKind, prep: &Prepared, out: &mut dyn Write) -> Result<(Model, TrainTrace)> {
    let mut model = Model::build(cfg.model_spec(kind), cfg.seed)?;
    say!(
        out,
        "{kind}: {} parameters, {} iterations at batch {}",
        model.param_count(),
        cfg.train.iterations,
        cfg.train.batch_size
    )?;
    let mut io_err = None;
    let trace = train_with_callback(&mut model, &prep.train, &prep.val, &cfg.train, |r| {
        let res = say!(
            out,
            "{kind} iter {:>5}  loss {:.4}  val_acc {:.4}",
            r.iteration,
            r.train_loss,
            r.val_accuracy
        );
        if let Err(e) = res {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    Ok((model, trace))
}

pub fn cmd_train(cfg: &Config, kind: ModelKind, out: &mut dyn Write) -> Result<TrainTrace> {
    let prep = load_tensors(cfg, out)?;
    let (model, trace) = train_one(cfg, kind, &prep, out)?;
    let ckpt = cfg.checkpoint_path(kind);
    model.save(&ckpt, &provenance(cfg))?;
    let trace_path = cfg.out_dir.join(format!("{kind}_trace.csv"));
    write_file(&trace_path, &trace.to_csv())?;
    say!(out, "wrote {} and {}", ckpt.display(), trace_path.display())?;
    Ok(trace)
}

fn baseline_report(cfg: &Config, prep: &Prepared) -> Result<MetricsReport> {
    let meta = DatasetMeta::from_kv(&prep.meta)?;
    let node = TARGET_NODE as usize;
    let set = prep.split(cfg.eval_split);
    let pred = baseline_predictions(set, prep.stats.mean[node], prep.stats.std[node], &meta.params[node], &prep.spec);
    MetricsReport::compute(format!("env{}:baseline", cfg.data_env), &set.labels, &pred, &prep.spec)
}

fn model_report(cfg: &Config, model: &Model, prep: &Prepared) -> Result<MetricsReport> {
    let set = prep.split(cfg.eval_split);
    let pred = predict_set(model, set)?;
    MetricsReport::compute(format!("env{}:{}", cfg.data_env, model.kind()), &set.labels, &pred, &prep.spec)
}

pub fn cmd_eval(cfg: &Config, kind: ModelKind, out: &mut dyn Write) -> Result<Vec<MetricsReport>> {
    let path = cfg.eval_checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path(kind));
    if !path.exists() {
        return Err(Error::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found")));
    }
    let (model, _) = Model::load(&path)?;
    if model.kind() != kind {
        return Err(Error::Config(format!("{} holds a {} model, not {kind}", path.display(), model.kind())));
    }
    let prep = load_tensors(cfg, out)?;
    if model.spec.window != prep.config.window || model.spec.n_bins != prep.spec.n_bins {
        return Err(Error::Config(format!(
            "checkpoint geometry (W={}, {} bins) does not match the tensors (W={}, {} bins)",
            model.spec.window, model.spec.n_bins, prep.config.window, prep.spec.n_bins
        )));
    }
    let report = model_report(cfg, &model, &prep)?;
    let reports = vec![report, baseline_report(cfg, &prep)?];
    write_file(&cfg.out_dir.join(format!("{kind}_metrics.csv")), &metrics_csv(&reports))?;
    write_file(&cfg.out_dir.join(format!("{kind}_confusion.csv")), &reports[0].confusion.to_csv())?;
    say!(out, "{} split, {} windows", cfg.eval_split, reports[0].n)?;
    out.write_all(metrics_table(&reports).as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    Ok(reports)
}

pub const COMPARE_HEADER: &str = "iteration,fcn_val_accuracy,cnn_val_accuracy,lstm_val_accuracy";

/// Side-by-side validation accuracy traces over the shared iteration axis.
pub fn compare_csv(traces: &[TrainTrace; 3]) -> String {
    let mut s = format!("{COMPARE_HEADER}\n");
    for (i, row) in traces[0].rows.iter().enumerate() {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            row.iteration, row.val_accuracy, traces[1].rows[i].val_accuracy, traces[2].rows[i].val_accuracy
        ));
    }
    s
}

pub fn cmd_compare(cfg: &Config, out: &mut dyn Write) -> Result<()> {
    let prep = load_tensors(cfg, out)?;
    let mut traces = Vec::with_capacity(3);
    let mut reports = Vec::with_capacity(4);
    for kind in ModelKind::ALL {
        let (model, trace) = train_one(cfg, kind, &prep, out)?;
        reports.push(model_report(cfg, &model, &prep)?);
        traces.push(trace);
    }
    reports.push(baseline_report(cfg, &prep)?);
    let traces: [TrainTrace; 3] = traces.try_into().expect("three traces");
    write_file(&cfg.out_dir.join("compare_trace.csv"), &compare_csv(&traces))?;
    write_file(&cfg.out_dir.join("compare_metrics.csv"), &metrics_csv(&reports))?;
    say!(out, "{} split, {} windows", cfg.eval_split, reports[0].n)?;
    out.write_all(metrics_table(&reports).as_bytes()).map_err(|e| Error::io("<stdout>", e))
}
