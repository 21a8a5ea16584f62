//! Training loop, benchmark sweeps and the CSV reports behind the CLI.

mod autotune;
mod data;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

pub use autotune::{autotune, conv_layers, time_edge, LayerChoice};
pub use data::{DataProvider, DataSpec};

use crate::analysis::{self, CostMode};
use crate::convolution::{ConvMode, TransformCounts};
use crate::error::{Error, Result};
use crate::mempool::PoolStats;
use crate::netgraph::{layered, LayeredSpec, NetGraph};
use crate::taskgraph::{Network, NetworkConfig, Params, RunOptions};
use crate::tensor_ops::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeChoice {
    Direct,
    Fft,
    Auto,
}

impl FromStr for ModeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ModeChoice::Direct),
            "fft" => Ok(ModeChoice::Fft),
            "auto" => Ok(ModeChoice::Auto),
            other => Err(Error::Config(format!("unknown mode `{other}` (direct, fft or auto)"))),
        }
    }
}

impl fmt::Display for ModeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeChoice::Direct => "direct",
            ModeChoice::Fft => "fft",
            ModeChoice::Auto => "auto",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub threads: usize,
    pub warmup: usize,
    pub rounds: usize,
    pub mode: ModeChoice,
    pub memoize: bool,
    pub lr: f64,
    pub seed: u64,
    pub data: DataSpec,
    pub autotune_trials: usize,
    /// Spare chunks reserved in the buffer pool after warm-up, as a fraction
    /// of each size class's peak; see [`crate::mempool::ChunkPool::reserve_headroom`].
    pub pool_headroom: f64,
    /// Mean round time of a one-worker run, for the speedup column.
    pub baseline: Option<Duration>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            threads: 1,
            warmup: 5,
            rounds: 50,
            mode: ModeChoice::Auto,
            memoize: false,
            lr: 0.01,
            seed: 1,
            data: DataSpec::Synthetic { samples: 4 },
            autotune_trials: 3,
            pool_headroom: 0.5,
            baseline: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.pool_headroom.is_finite() && self.pool_headroom >= 0.0) {
            return Err(Error::Config(format!("pool headroom must be non-negative, got {}", self.pool_headroom)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub warmup_losses: Vec<f64>,
    pub losses: Vec<f64>,
    pub round_times: Vec<Duration>,
    pub mean_round: Duration,
    pub speedup: Option<f64>,
    pub modes: Vec<ConvMode>,
    pub autotune: Vec<LayerChoice>,
    pub transforms: TransformCounts,
    /// Pool counters after warmup and at the end of the measured rounds.
    pub pool_after_warmup: PoolStats,
    pub pool: PoolStats,
    pub params_checksum: f64,
}

impl TrainReport {
    /// Chunks obtained from the system allocator during the measured rounds.
    pub fn new_system_allocs(&self) -> u64 {
        self.pool.system_allocs - self.pool_after_warmup.system_allocs
    }

    /// `phase,round,loss,round_ms`, one row per round.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["phase", "round", "loss", "round_ms"]).map_err(csv_err)?;
        for (i, l) in self.warmup_losses.iter().enumerate() {
            out.write_record(["warmup".into(), i.to_string(), l.to_string(), String::new()]).map_err(csv_err)?;
        }
        for (i, (l, t)) in self.losses.iter().zip(&self.round_times).enumerate() {
            let ms = t.as_secs_f64() * 1e3;
            out.write_record(["measured".into(), i.to_string(), l.to_string(), format!("{ms:.4}")]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

pub fn conv_modes<T: Scalar>(
    g: &NetGraph,
    mode: ModeChoice,
    trials: usize,
) -> Result<(Vec<ConvMode>, Vec<LayerChoice>)> {
    match mode {
        ModeChoice::Direct => Ok((vec![ConvMode::Direct; g.edges().len()], Vec::new())),
        ModeChoice::Fft => Ok((vec![ConvMode::Fft; g.edges().len()], Vec::new())),
        ModeChoice::Auto => autotune::<T>(g, trials),
    }
}

/// Warmup rounds then measured rounds on one network, reporting the mean
/// time of the measured rounds.
pub fn train<T: Scalar>(g: &NetGraph, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let (modes, choices) = conv_modes::<T>(g, cfg.mode, cfg.autotune_trials)?;
    let mut data = DataProvider::<T>::new(&cfg.data, g, cfg.seed)?;
    train_with(g, cfg, modes, choices, &mut data)
}

pub fn train_with<T: Scalar>(
    g: &NetGraph,
    cfg: &TrainConfig,
    modes: Vec<ConvMode>,
    autotune: Vec<LayerChoice>,
    data: &mut DataProvider<T>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let net = Network::new(
        g.clone(),
        Params::init(g, cfg.seed),
        NetworkConfig { conv: modes.clone(), memoize: cfg.memoize, lr: cfg.lr },
    )?;
    let opts = RunOptions { threads: cfg.threads, trace: false };
    let warmup_losses = if cfg.warmup > 0 {
        data.set_offset(0);
        net.run(cfg.warmup, &*data, opts)?.losses
    } else {
        Vec::new()
    };
    if cfg.warmup > 0 {
        net.pool().reserve_headroom(cfg.pool_headroom, POOL_MIN_EXTRA);
    }
    let pool_after_warmup = net.pool().stats();
    data.set_offset(cfg.warmup);
    let run = net.run(cfg.rounds, &*data, opts)?;
    let mean_round = run.elapsed / cfg.rounds as u32;
    let speedup = cfg.baseline.map(|b| b.as_secs_f64() / mean_round.as_secs_f64());
    Ok(TrainReport {
        warmup_losses,
        losses: run.losses,
        round_times: run.round_times,
        mean_round,
        speedup,
        modes,
        autotune,
        transforms: run.transforms,
        pool_after_warmup,
        pool: run.pool,
        params_checksum: net.params().flat().iter().sum(),
    })
}

/// Least number of spare chunks reserved per used size class after warm-up.
pub const POOL_MIN_EXTRA: usize = 2;

/// Widths of the measured speedup sweep.
pub const DEFAULT_WIDTHS: [usize; 12] = [5, 10, 15, 20, 25, 30, 40, 50, 60, 80, 100, 120];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub width: usize,
    pub threads: usize,
    pub mean_round_ms: f64,
    pub speedup: f64,
    /// Engine of each conv layer, `d` or `f`, input side first.
    pub modes: String,
}

/// Trains the layered net at every width with every thread count. The
/// engine choice is made once per width and shared by all thread counts;
/// speedup is relative to a one-worker run of the same width.
pub fn bench_sweep<T: Scalar>(
    base: &LayeredSpec,
    cfg: &TrainConfig,
    threads: &[usize],
    widths: &[usize],
    mut progress: impl FnMut(&BenchRow),
) -> Result<Vec<BenchRow>> {
    if threads.is_empty() || widths.is_empty() {
        return Err(Error::Config("bench needs at least one thread count and one width".into()));
    }
    let mut rows = Vec::new();
    for &width in widths {
        let g = layered(&LayeredSpec { width, ..base.clone() })?;
        let (modes, choices) = conv_modes::<T>(&g, cfg.mode, cfg.autotune_trials)?;
        let tag: String =
            conv_layers(&g).values().map(|es| if modes[es[0]] == ConvMode::Fft { 'f' } else { 'd' }).collect();
        let mut data = DataProvider::<T>::new(&cfg.data, &g, cfg.seed)?;
        let mut run = |n: usize| -> Result<Duration> {
            let c = TrainConfig { threads: n, ..cfg.clone() };
            Ok(train_with(&g, &c, modes.clone(), choices.clone(), &mut data)?.mean_round)
        };
        let base_time = run(1)?;
        for &n in threads {
            let t = if n == 1 { base_time } else { run(n)? };
            let row = BenchRow {
                width,
                threads: n,
                mean_round_ms: t.as_secs_f64() * 1e3,
                speedup: base_time.as_secs_f64() / t.as_secs_f64(),
                modes: tag.clone(),
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["width", "threads", "mean_round_ms", "speedup", "modes"]).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.width.to_string(),
            r.threads.to_string(),
            format!("{:.4}", r.mean_round_ms),
            format!("{:.4}", r.speedup),
            r.modes.clone(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_bench_csv(path: &Path) -> Result<Vec<BenchRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let field =
            |i: usize| rec.get(i).ok_or_else(|| Error::Format(format!("bench csv row has {} fields", rec.len())));
        let num = |i: usize| -> Result<f64> {
            field(i)?
                .parse()
                .map_err(|_| Error::Format(format!("bad number `{}` in bench csv", field(i).unwrap_or(""))))
        };
        rows.push(BenchRow {
            width: num(0)? as usize,
            threads: num(1)? as usize,
            mean_round_ms: num(2)?,
            speedup: num(3)?,
            modes: field(4).unwrap_or("").to_string(),
        });
    }
    Ok(rows)
}

/// One row of the predicted speedup table; `measured` comes from a bench
/// CSV when one is supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeRow {
    pub width: usize,
    pub depth: usize,
    pub procs: usize,
    pub t1: f64,
    pub t_inf: f64,
    pub bound: f64,
    pub measured: Option<f64>,
}

pub struct AnalyzeConfig {
    pub procs: Vec<usize>,
    pub c: f64,
    pub mode: CostMode,
    /// Widths to sweep a layered net over; ignored for explicit graphs.
    pub widths: Vec<usize>,
    pub measured: Option<PathBuf>,
}

/// Predicted bounds for a layered net across widths, or for a fixed graph
/// at its own width (its widest conv layer).
pub fn analyze(net: NetSource<'_>, cfg: &AnalyzeConfig) -> Result<Vec<AnalyzeRow>> {
    if cfg.procs.is_empty() || cfg.procs.contains(&0) {
        return Err(Error::Config("processor counts must be positive".into()));
    }
    let measured = match &cfg.measured {
        Some(p) => read_bench_csv(p)?,
        None => Vec::new(),
    };
    let rows: Vec<analysis::SweepRow> = match net {
        NetSource::Layered(spec) => {
            let depth = spec.seq.chars().filter(|&c| c == 'C').count();
            analysis::sweep(&cfg.widths, &[depth], &cfg.procs, cfg.mode, cfg.c, |w, _| LayeredSpec {
                width: w,
                ..spec.clone()
            })?
        }
        NetSource::Graph(g) => {
            let layers = analysis::layers_from_graph(g, cfg.c);
            let cost = analysis::network_cost(&layers, cfg.mode);
            let width = conv_layers(g)
                .values()
                .map(|es| es.iter().map(|&e| g.edge(e).to).collect::<std::collections::BTreeSet<_>>().len())
                .max()
                .unwrap_or(0);
            let depth = conv_layers(g).len();
            cfg.procs
                .iter()
                .map(|&p| {
                    Ok(analysis::SweepRow {
                        width,
                        depth,
                        procs: p,
                        t1: cost.t1,
                        t_inf: cost.t_inf,
                        bound: cost.bound(p)?,
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(rows
        .into_iter()
        .map(|r| AnalyzeRow {
            measured: measured.iter().find(|m| m.width == r.width && m.threads == r.procs).map(|m| m.speedup),
            width: r.width,
            depth: r.depth,
            procs: r.procs,
            t1: r.t1,
            t_inf: r.t_inf,
            bound: r.bound,
        })
        .collect())
}

pub enum NetSource<'a> {
    Layered(&'a LayeredSpec),
    Graph(&'a NetGraph),
}

pub fn write_analyze_csv<W: Write>(rows: &[AnalyzeRow], w: W) -> Result<()> {
    let with_measured = rows.iter().any(|r| r.measured.is_some());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["width", "depth", "P", "T1", "Tinf", "bound"];
    if with_measured {
        header.push("measured");
    }
    out.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.width.to_string(),
            r.depth.to_string(),
            r.procs.to_string(),
            format!("{}", r.t1),
            format!("{}", r.t_inf),
            format!("{:.6}", r.bound),
        ];
        if with_measured {
            rec.push(r.measured.map(|m| format!("{m:.4}")).unwrap_or_default());
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
