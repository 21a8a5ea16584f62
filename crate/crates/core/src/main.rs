use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use znn::analysis::{CostMode, FFT_CONSTANT};
use znn::netgraph::{parse_layered_spec, parse_netspec, NetGraph};
use znn::trainer::{
    analyze, bench_sweep, train, write_analyze_csv, write_bench_csv, AnalyzeConfig, DataSpec, NetSource, TrainConfig,
    DEFAULT_WIDTHS,
};
use znn::Error;

#[derive(Parser)]
#[command(name = "znn", version, about = "Task-parallel 3D ConvNet training on multicore CPUs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long, default_value_t = 50)]
    rounds: usize,
    /// direct, fft or auto (per-layer timing)
    #[arg(long, default_value = "auto")]
    mode: String,
    /// Cache spectra between the passes of a round
    #[arg(long)]
    memoize: bool,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `synthetic`, `synthetic:<samples>`, or a directory with input/ and label/
    #[arg(long, default_value = "synthetic")]
    data: String,
    #[arg(long, default_value_t = 3)]
    autotune_trials: usize,
    /// Spare buffers reserved after warm-up, as a fraction of each size class's peak
    #[arg(long, default_value_t = 0.5)]
    pool_headroom: f64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a net and report timing and losses
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Per-round CSV
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also time a one-worker run and report the speedup over it
        #[arg(long)]
        speedup: bool,
    },
    /// Measure speedup over thread counts and widths of a layered net
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        threads: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
        /// CSV output; stdout when absent
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Predicted work, span and speedup bound
    Analyze {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "4,8,18,40,64")]
        procs: Vec<usize>,
        #[arg(long, default_value_t = FFT_CONSTANT)]
        fft_constant: f64,
        /// direct, fft or fft-memo
        #[arg(long, default_value = "fft-memo")]
        mode: String,
        /// Widths for a layered net; defaults to the benchmark widths
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
        /// Bench CSV whose speedups are joined as a `measured` column
        #[arg(long)]
        measured: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

enum Fail {
    Config(Error),
    Runtime(Error),
}

fn config(e: Error) -> Fail {
    Fail::Config(e)
}

fn runtime(e: Error) -> Fail {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Graph(_) => Fail::Config(e),
        e => Fail::Runtime(e),
    }
}

fn read_spec(path: &Path) -> Result<String, Fail> {
    std::fs::read_to_string(path)
        .map_err(|e| Fail::Config(Error::Config(format!("cannot read {}: {e}", path.display()))))
}

fn data_spec(s: &str) -> Result<DataSpec, Fail> {
    match s.split_once(':') {
        _ if s == "synthetic" => Ok(DataSpec::Synthetic { samples: 4 }),
        Some(("synthetic", n)) => match n.parse() {
            Ok(n) if n > 0 => Ok(DataSpec::Synthetic { samples: n }),
            _ => Err(Fail::Config(Error::Config(format!("bad sample count `{n}`")))),
        },
        _ => Ok(DataSpec::Dir(PathBuf::from(s))),
    }
}

fn train_config(a: &RunArgs, threads: usize) -> Result<TrainConfig, Fail> {
    let cfg = TrainConfig {
        threads,
        warmup: a.warmup,
        rounds: a.rounds,
        mode: a.mode.parse().map_err(config)?,
        memoize: a.memoize,
        lr: a.lr,
        seed: a.seed,
        data: data_spec(&a.data)?,
        autotune_trials: a.autotune_trials,
        pool_headroom: a.pool_headroom,
        baseline: None,
    };
    cfg.validate().map_err(config)?;
    Ok(cfg)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Fail> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Fail::Config(e.into()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<(), Fail> {
    match cli.cmd {
        Cmd::Train { run, threads, report, speedup } => {
            let g: NetGraph = parse_netspec(&read_spec(&run.net)?).map_err(config)?;
            let mut cfg = train_config(&run, threads)?;
            if speedup && threads > 1 {
                let base = train::<f32>(&g, &TrainConfig { threads: 1, ..cfg.clone() }).map_err(runtime)?;
                cfg.baseline = Some(base.mean_round);
            }
            let r = train::<f32>(&g, &cfg).map_err(runtime)?;
            for c in &r.autotune {
                eprintln!(
                    "layer at depth {}: direct {:.3} ms, fft {:.3} ms -> {}",
                    c.depth,
                    c.direct_s * 1e3,
                    c.fft_s * 1e3,
                    c.mode
                );
            }
            println!("threads        {threads}");
            println!("mean round     {:.3} ms", r.mean_round.as_secs_f64() * 1e3);
            if let Some(s) = r.speedup {
                println!("speedup        {s:.3}");
            } else if speedup {
                println!("speedup        1.000");
            }
            println!("loss           {:.6e} -> {:.6e}", r.losses[0], r.losses[r.losses.len() - 1]);
            println!("transforms     {}", r.transforms.total());
            println!(
                "pool           {} system chunks, {} bytes, {} new after warmup",
                r.pool.system_allocs,
                r.pool.system_bytes,
                r.new_system_allocs()
            );
            if let Some(p) = &report {
                r.write_csv(BufWriter::new(File::create(p).map_err(|e| Fail::Config(e.into()))?)).map_err(runtime)?;
            }
        }
        Cmd::Bench { run, threads, widths, report } => {
            let spec = parse_layered_spec(&read_spec(&run.net)?)
                .map_err(config)?
                .ok_or_else(|| Fail::Config(Error::Config("bench needs a [layered] net to vary the width".into())))?;
            if threads.contains(&0) {
                return Err(Fail::Config(Error::Config("thread counts must be positive".into())));
            }
            let cfg = train_config(&run, 1)?;
            let widths = widths.unwrap_or_else(|| DEFAULT_WIDTHS.to_vec());
            let rows = bench_sweep::<f32>(&spec, &cfg, &threads, &widths, |r| {
                eprintln!(
                    "width {:>4} threads {:>3}: {:.3} ms, speedup {:.2}",
                    r.width, r.threads, r.mean_round_ms, r.speedup
                )
            })
            .map_err(runtime)?;
            write_bench_csv(&rows, output(&report)?).map_err(runtime)?;
        }
        Cmd::Analyze { net, procs, fft_constant, mode, widths, measured, report } => {
            let text = read_spec(&net)?;
            let mode: CostMode = mode.parse().map_err(config)?;
            if !(fft_constant > 0.0) {
                return Err(Fail::Config(Error::Config("fft constant must be positive".into())));
            }
            let cfg = AnalyzeConfig {
                procs,
                c: fft_constant,
                mode,
                widths: widths.unwrap_or_else(|| DEFAULT_WIDTHS.to_vec()),
                measured,
            };
            let rows = match parse_layered_spec(&text).map_err(config)? {
                Some(spec) => analyze(NetSource::Layered(&spec), &cfg),
                None => analyze(NetSource::Graph(&parse_netspec(&text).map_err(config)?), &cfg),
            }
            .map_err(runtime)?;
            write_analyze_csv(&rows, output(&report)?).map_err(runtime)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Fail::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
