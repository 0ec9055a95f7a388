//! `odcal`: scenario generation, ground-truth counts, streaming calibration
//! and report export.

mod report;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use odcal_core::io::{self as odio, CountStream};
use odcal_core::scenario::simulate_frames;
use odcal_core::{
    build_scenario, CalibConfig, Calibrator, DemandProtocol, FrameOutput, GridSpec, Network, PoiSelector,
    ScenarioSpec, SimConfig,
};

#[derive(Parser)]
#[command(name = "odcal", version, about = "Sequential OD demand calibration from streaming link counts")]
struct Cli {
    /// Worker threads for replicate simulations (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a grid network, random demand and ground-truth vehicle plans.
    Generate(GenerateArgs),
    /// Simulate ground-truth plans frame by frame and write sensor counts.
    Truth(TruthArgs),
    /// Calibrate OD demand frame by frame from sensor counts.
    Calibrate(CalibrateArgs),
    /// Recompute the summary table and error correlations of a calibration run.
    Metrics(MetricsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Poi {
    All,
    Ring,
}

#[derive(Clone, Copy, ValueEnum)]
enum Demand {
    Count,
    Rate,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 4)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    cols: usize,
    /// Link length in meters.
    #[arg(long, default_value_t = 400.0)]
    link_length: f64,
    #[arg(long, default_value_t = 2)]
    lanes: u32,
    /// Nodes that act as trip origins and destinations.
    #[arg(long, value_enum, default_value = "all")]
    poi: Poi,
    /// `count`: trips per OD pair over the whole duration; `rate`: trips per hour.
    #[arg(long, value_enum, default_value = "count")]
    demand: Demand,
    #[arg(long, default_value_t = 20.0)]
    lo: f64,
    #[arg(long, default_value_t = 35.0)]
    hi: f64,
    /// Total seconds, a multiple of the frame length.
    #[arg(long, default_value_t = 4 * 3600)]
    duration: u32,
    #[arg(long, default_value_t = 3600)]
    frame: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = -0.01, allow_hyphen_values = true)]
    gamma: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TruthArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    plans: PathBuf,
    #[arg(long, default_value_t = 3600)]
    frame: u32,
    /// Number of frames (default: enough to cover the last departure).
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    nod: PathBuf,
    /// Directory holding `counts_<t>.csv` files.
    #[arg(long, conflicts_with = "stdin", required_unless_present = "stdin")]
    counts_dir: Option<PathBuf>,
    /// Read `frame,sensor_link_id,count` records from standard input.
    #[arg(long)]
    stdin: bool,
    /// TOML file with calibration settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with `true_od_<t>.csv` files, enabling OD error columns.
    #[arg(long)]
    truth_dir: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Calibrate at most this many frames.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ConfigOverrides {
    /// Frame length in seconds.
    #[arg(long)]
    delta: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long)]
    rho: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Iteration error (percent) that ends a frame early.
    #[arg(long)]
    eps_exit: Option<f64>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    network: PathBuf,
    /// Output directory of a calibration run.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    truth_dir: Option<PathBuf>,
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut CalibConfig) {
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(v) = self.seed {
            cfg.base_seed = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.replicates {
            cfg.replicates = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.eps_exit {
            cfg.epsilon_exit = v;
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn read_network(path: &Path) -> Result<Network> {
    odio::read_network(path).with_context(|| format!("reading network {}", path.display()))
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let mut grid = GridSpec::new(args.rows, args.cols, args.link_length);
    grid.lanes = args.lanes;
    grid.poi = match args.poi {
        Poi::All => PoiSelector::AllNodes,
        Poi::Ring => PoiSelector::RingPattern,
    };
    let demand = match args.demand {
        Demand::Count => {
            if args.lo < 0.0 || args.hi.fract() != 0.0 || args.lo.fract() != 0.0 {
                bail!("count demand needs nonnegative integer bounds");
            }
            DemandProtocol::Count { lo: args.lo as u32, hi: args.hi as u32 }
        }
        Demand::Rate => DemandProtocol::Rate { lo: args.lo, hi: args.hi },
    };
    let spec = ScenarioSpec {
        gamma: args.gamma,
        ..ScenarioSpec::new(grid, demand, args.duration, args.frame, args.seed)
    };
    let sc = build_scenario(&spec)?;
    fs::create_dir_all(&args.out_dir)?;
    let out = &args.out_dir;
    odio::write_network(&sc.net, &out.join("network.json"))?;
    odio::write_nod(&sc.net, &sc.nod, create(&out.join("nod.csv"))?)?;
    odio::write_plans(&sc.net, &sc.plans, create(&out.join("plans.csv"))?)?;
    for (t, od) in sc.true_od().iter().enumerate() {
        odio::write_od(&sc.net, od, create(&out.join(format!("true_od_{t}.csv")))?)?;
    }
    info!("{} trips over {} OD pairs in {} frames", sc.plans.len(), sc.net.num_od_pairs(), sc.num_frames);
    Ok(())
}

fn truth(args: &TruthArgs) -> Result<()> {
    if args.frame == 0 {
        bail!("frame length must be positive");
    }
    let net = read_network(&args.network)?;
    let plans = odio::read_plans(&net, open(&args.plans)?)
        .with_context(|| format!("reading plans {}", args.plans.display()))?;
    let frames = args.frames.unwrap_or_else(|| {
        plans.iter().map(|p| p.departure / args.frame + 1).max().unwrap_or(1) as usize
    });
    if let Some(p) = plans.iter().find(|p| (p.departure / args.frame) as usize >= frames) {
        bail!("plan departing at {} s lies beyond {frames} frames", p.departure);
    }
    let results = simulate_frames(&net, &plans, args.frame, frames, &SimConfig::default())?;
    fs::create_dir_all(&args.out_dir)?;
    let counts: Vec<Vec<f64>> = results.iter().map(|r| r.counts_f64()).collect();
    for (t, c) in counts.iter().enumerate() {
        odio::write_counts(&net, c, create(&args.out_dir.join(format!("counts_{t}.csv")))?)?;
    }
    odio::write_count_stream(&net, &counts, create(&args.out_dir.join("counts_stream.csv"))?)?;
    let left = results.last().map_or(0, |r| r.carryover());
    if left > 0 {
        warn!("{left} vehicles are still travelling after the last frame");
    }
    Ok(())
}

/// Indices `t` of the `counts_<t>.csv` files in `dir`, checked to be contiguous from zero.
fn count_files(dir: &Path, limit: Option<usize>) -> Result<Vec<PathBuf>> {
    let path = |t: usize| dir.join(format!("counts_{t}.csv"));
    if let Some(n) = limit {
        return (0..n)
            .map(|t| {
                let p = path(t);
                if p.is_file() {
                    Ok(p)
                } else {
                    bail!("missing counts file for frame {t}: {}", p.display())
                }
            })
            .collect();
    }
    let mut present = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(t) = name.strip_prefix("counts_").and_then(|s| s.strip_suffix(".csv")).and_then(|s| s.parse().ok()) {
            present.push(t);
        }
    }
    present.sort_unstable();
    if present.is_empty() {
        bail!("no counts_<t>.csv files in {}", dir.display());
    }
    for (expected, &t) in present.iter().enumerate() {
        if t != expected {
            bail!("missing counts file for frame {expected}: {}", path(expected).display());
        }
    }
    Ok(present.into_iter().map(path).collect())
}

fn write_frame(net: &Network, out: &Path, raw: &[f64], f: &FrameOutput) -> Result<()> {
    let t = f.frame;
    let file = |name: &str| create(&out.join(format!("{name}_{t}.{}", if name == "state" { "json" } else { "csv" })));
    odio::write_od(net, &f.od_estimate, file("od")?)?;
    odio::write_route_flows(net, &f.route_flows, file("route_flows")?)?;
    odio::write_count_comparison(net, raw, &f.analytic_counts, &f.sim.counts_f64(), file("sensor_counts")?)?;
    odio::write_error_records(&f.records, file("errors")?)?;
    odio::write_fp_trace(&f.fp_min_errors, file("fp_trace")?)?;
    odio::write_plan_dump(&f.plans, file("plans")?)?;
    let mut w = file("state")?;
    f.sim.state.write_json(&mut w)?;
    w.flush()?;
    report::write_correlations(&f.records, file("correlations")?)?;
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let net = read_network(&args.network)?;
    let nod = odio::read_nod(&net, open(&args.nod)?).with_context(|| format!("reading NOD {}", args.nod.display()))?;
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("bad config {}", p.display()))?
        }
        None => CalibConfig::default(),
    };
    args.overrides.apply(&mut cfg);
    fs::create_dir_all(&args.out_dir)?;
    let mut cal = Calibrator::new(&net, nod, cfg)?;
    let limit = args.frames.unwrap_or(usize::MAX);

    let mut next: Box<dyn FnMut() -> Result<Option<(usize, Vec<f64>)>>> = match &args.counts_dir {
        Some(dir) => {
            let files = count_files(dir, args.frames)?;
            let net = &net;
            let mut it = files.into_iter().enumerate();
            Box::new(move || match it.next() {
                None => Ok(None),
                Some((t, p)) => {
                    let c = odio::read_counts(net, open(&p)?).with_context(|| format!("frame {t}: {}", p.display()))?;
                    Ok(Some((t, c)))
                }
            })
        }
        None => {
            let mut stream = CountStream::new(&net, io::stdin().lock());
            Box::new(move || stream.next_frame().context("reading count stream"))
        }
    };

    let mut frames = 0;
    let mut unconverged = Vec::new();
    while frames < limit {
        let Some((t, raw)) = next()? else { break };
        let started = Instant::now();
        let out = cal.push_frame(t, &raw).with_context(|| format!("calibrating frame {t}"))?;
        let best = out.best_record();
        info!(
            "frame {t}: {} rounds, best round {} with iteration error {:.2}%, {:.1} s",
            out.records.len(),
            out.best_iteration,
            best.iter_err,
            started.elapsed().as_secs_f64()
        );
        if !out.converged {
            unconverged.push(t);
        }
        write_frame(&net, &args.out_dir, &raw, &out)?;
        frames += 1;
    }
    if frames == 0 {
        bail!("no count frames to calibrate");
    }
    let rows = report::summarize(&net, &args.out_dir, args.truth_dir.as_deref(), frames)?;
    odio::write_summary(&rows, create(&args.out_dir.join("summary.csv"))?)?;
    if !unconverged.is_empty() {
        warn!("frames {unconverged:?} stopped at the iteration cap without meeting the exit threshold");
    }
    Ok(())
}

fn metrics(args: &MetricsArgs) -> Result<()> {
    let net = read_network(&args.network)?;
    let mut frames = 0;
    while args.run_dir.join(format!("errors_{frames}.csv")).is_file() {
        let records = odio::read_error_records(open(&args.run_dir.join(format!("errors_{frames}.csv")))?)?;
        report::write_correlations(&records, create(&args.run_dir.join(format!("correlations_{frames}.csv")))?)?;
        frames += 1;
    }
    if frames == 0 {
        bail!("no errors_<t>.csv files in {}", args.run_dir.display());
    }
    let rows = report::summarize(&net, &args.run_dir, args.truth_dir.as_deref(), frames)?;
    odio::write_summary(&rows, create(&args.run_dir.join("summary.csv"))?)?;
    odio::write_summary(&rows, io::stdout().lock())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Truth(a) => truth(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Metrics(a) => metrics(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
