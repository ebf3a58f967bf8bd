//! `cimsnn` command-line driver.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | file could not be read or written |
//! | 2 | bad command line |
//! | 3 | malformed or invalid input (network, config, spikes, events, weights) |
//! | 4 | a layer's fan-in exceeds the core capacity |
//! | 5 | simulator and reference model disagree |
//! | 6 | calibration did not converge |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use cimsnn::arch::{load_network, ArchParams, EnergyParams, NetworkSpec, PrecisionMode};
use cimsnn::golden::run_network;
use cimsnn::io::{
    encode_spikes, ingest_events_file, read_spikes, read_weights, write_spikes, write_weights,
    Binning, IoError,
};
use cimsnn::mapper::{map_network, MapError};
use cimsnn::metrics::{
    aer_tradeoff, calibrate, render_calibration, sweep, write_sweep_csv, CalibratedConfig,
    CalibrationTargets, MetricsError, OperatingPoint, RunReport, SweepGrid,
};
use cimsnn::pipeline::{simulate_network, SimError, SimOptions};
use cimsnn::tensor::{SpikeTensor, WeightTensor};
use cimsnn::workload::{gen_spikes, random_network_weights};

const EXIT_IO: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_FAN_IN: u8 = 4;
const EXIT_MISMATCH: u8 = 5;
const EXIT_CALIBRATION: u8 = 6;

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let err = e.into();
        Failure {
            code: classify(&err),
            err,
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<MapError>() {
            return map_code(e);
        }
        if let Some(SimError::Map(e)) = cause.downcast_ref::<SimError>() {
            return map_code(e);
        }
        if let Some(e) = cause.downcast_ref::<MetricsError>() {
            return match e {
                MetricsError::CalibrationDiverged { .. } => EXIT_CALIBRATION,
                MetricsError::Sim(SimError::Map(m)) => map_code(m),
                _ => EXIT_INPUT,
            };
        }
        if let Some(e) = cause.downcast_ref::<IoError>() {
            return match e {
                IoError::Io { .. } => EXIT_IO,
                _ => EXIT_INPUT,
            };
        }
        if let Some(e) = cause.downcast_ref::<cimsnn::arch::ConfigError>() {
            return match e {
                cimsnn::arch::ConfigError::Io { .. } => EXIT_IO,
                _ => EXIT_INPUT,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_INPUT
}

fn map_code(e: &MapError) -> u8 {
    match e {
        MapError::FanInExceedsCapacity { .. } => EXIT_FAN_IN,
        _ => EXIT_INPUT,
    }
}

fn fail(code: u8, err: anyhow::Error) -> Failure {
    Failure { code, err }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "cimsnn", version, about = "Cycle-level simulator of a digital CIM SNN core")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a network and write a performance report.
    Run(RunArgs),
    /// Run the bit-exact reference model only.
    Golden(GoldenArgs),
    /// Run simulator and reference model and compare spikes bit for bit.
    Compare(NetInput),
    /// Print the tile schedule of every layer as JSON.
    Map(MapArgs),
    /// Fit the energy model to measured targets and write a config file.
    Calibrate(CalibrateArgs),
    /// Reference workload over a sparsity x precision x frequency grid, as CSV.
    Sweep(SweepArgs),
    /// Write a random SPKT spike tensor.
    GenSpikes(GenSpikesArgs),
    /// Bin a DVS event CSV into an SPKT spike tensor.
    IngestEvents(IngestArgs),
    /// Compare raw bitmap and address-event storage.
    AnalyzeAer(AerArgs),
    /// Write random weights for a network as an SPKW file.
    GenWeights(GenWeightsArgs),
}

#[derive(Args)]
struct NetInput {
    /// Network description (TOML).
    #[arg(long)]
    net: PathBuf,
    /// Override the network's weight precision (4, 6 or 8).
    #[arg(long)]
    precision: Option<u32>,
    /// Input spikes (SPKT).
    #[arg(long, conflicts_with_all = ["events", "input_sparsity"])]
    spikes: Option<PathBuf>,
    /// Input events (CSV t_us,x,y,polarity), binned over the network's timesteps.
    #[arg(long, requires = "window_us", conflicts_with = "input_sparsity")]
    events: Option<PathBuf>,
    /// Bin width for --events, in microseconds.
    #[arg(long)]
    window_us: Option<u64>,
    /// Events a pixel needs within one bin to spike (1 = OR binning).
    #[arg(long, default_value_t = 1)]
    min_count: u32,
    /// Generate random input spikes with this sparsity instead of reading a file.
    #[arg(long)]
    input_sparsity: Option<f64>,
    /// Weights (SPKW); random weights from --seed when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: NetInput,
    /// Calibrated parameter file; the shipped calibration when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    freq_mhz: Option<f64>,
    #[arg(long)]
    voltage: Option<f64>,
    /// Report JSON path; standard output when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write a per-unit event trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the output spikes (SPKT).
    #[arg(long)]
    out_spikes: Option<PathBuf>,
}

#[derive(Args)]
struct GoldenArgs {
    #[command(flatten)]
    input: NetInput,
    /// Write the output spikes (SPKT).
    #[arg(long)]
    out_spikes: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    precision: Option<u32>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Targets table (TOML); the chip's measured values when omitted.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.75, 0.8, 0.85, 0.9, 0.95])]
    sparsities: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [4, 6, 8])]
    precisions: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = [50.0, 150.0])]
    freq_mhz: Vec<f64>,
    /// One voltage per frequency, or a single voltage for all.
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 1.0])]
    voltage: Vec<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = cimsnn::workload::REFERENCE_SEED)]
    seed: u64,
    /// CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenSpikesArgs {
    /// Tensor dims as T,C,H,W.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long)]
    sparsity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    timesteps: usize,
    #[arg(long)]
    window_us: u64,
    #[arg(long, default_value_t = 1)]
    min_count: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AerArgs {
    /// Address width A in bits per event.
    #[arg(long)]
    addr_bits: u32,
    /// Measure entries and sparsity from a spike file.
    #[arg(long, conflicts_with_all = ["entries", "sparsity"])]
    spikes: Option<PathBuf>,
    #[arg(long, requires = "sparsity")]
    entries: Option<u64>,
    #[arg(long)]
    sparsity: Option<f64>,
}

#[derive(Args)]
struct GenWeightsArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    precision: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_net(path: &Path, precision: Option<u32>) -> CliResult<NetworkSpec> {
    let mut net = load_network(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(bits) = precision {
        net.precision = PrecisionMode::new(bits)?;
        net.validate()?;
    }
    Ok(net)
}

fn load_inputs(a: &NetInput) -> CliResult<(NetworkSpec, Vec<WeightTensor>, SpikeTensor)> {
    let net = load_net(&a.net, a.precision)?;
    let weights = match &a.weights {
        Some(path) => {
            let (p, w) = read_weights(path).with_context(|| format!("reading {}", path.display()))?;
            if p != net.precision {
                return Err(fail(
                    EXIT_INPUT,
                    anyhow!("{} holds {}-bit weights, network uses {}-bit", path.display(), p.weight_bits(), net.precision.weight_bits()),
                ));
            }
            w
        }
        None => random_network_weights(&net, a.seed),
    };
    let dims = (net.timesteps, net.input_channels, net.input_h, net.input_w);
    let input = if let Some(path) = &a.spikes {
        read_spikes(path).with_context(|| format!("reading {}", path.display()))?
    } else if let Some(path) = &a.events {
        let b = Binning {
            width: net.input_w,
            height: net.input_h,
            timesteps: net.timesteps,
            window_us: a.window_us.expect("clap enforces --window-us"),
            min_count: a.min_count,
        };
        if b.window_us == 0 || b.min_count == 0 {
            return Err(fail(EXIT_USAGE, anyhow!("--window-us and --min-count must be positive")));
        }
        ingest_events_file(path, &b).with_context(|| format!("reading {}", path.display()))?
    } else if let Some(s) = a.input_sparsity {
        check_sparsity(s)?;
        gen_spikes(dims, s, a.seed)
    } else {
        return Err(fail(EXIT_USAGE, anyhow!("one of --spikes, --events or --input-sparsity is required")));
    };
    Ok((net, weights, input))
}

fn check_sparsity(s: f64) -> CliResult {
    if (0.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(fail(EXIT_USAGE, anyhow!("sparsity {s} is outside [0, 1]")))
    }
}

fn load_config(path: Option<&Path>) -> CliResult<CalibratedConfig> {
    match path {
        None => Ok(CalibratedConfig::shipped()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(CalibratedConfig::parse(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
    }
}

/// Write to `path`, or to standard output when `None`.
fn emit(path: Option<&Path>, data: &[u8]) -> CliResult {
    match path {
        Some(p) => fs::write(p, data).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(data)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn cmd_run(a: &RunArgs) -> CliResult {
    let (net, weights, input) = load_inputs(&a.input)?;
    let cfg = load_config(a.config.as_deref())?;
    let mut arch = cfg.arch;
    let op = OperatingPoint::new(
        a.freq_mhz.unwrap_or(arch.clock_mhz),
        a.voltage.unwrap_or(cfg.energy.v_ref),
    );
    if !(op.clock_mhz > 0.0 && op.voltage > 0.0) {
        return Err(fail(EXIT_USAGE, anyhow!("frequency and voltage must be positive")));
    }
    arch.clock_mhz = op.clock_mhz;
    let run = simulate_network(&net, &weights, &input, &arch, SimOptions { trace: a.trace.is_some() })?;
    let report = RunReport::from_network(&run, net.precision, &cfg.energy, &arch, op);
    if let Some(path) = &a.trace {
        let f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
        run.trace.write_csv(std::io::BufWriter::new(f)).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.out_spikes {
        write_spikes(path, run.output())?;
    }
    emit(a.report.as_deref(), format!("{}\n", report.to_json()).as_bytes())?;
    eprintln!(
        "{} cycles, {:.4} GOPS, {:.4} mW, {:.4} TOPS/W",
        report.total_cycles, report.gops, report.power_mw, report.tops_per_w
    );
    Ok(())
}

fn cmd_golden(a: &GoldenArgs) -> CliResult {
    let (net, weights, input) = load_inputs(&a.input)?;
    let run = run_network(&net, &weights, &input)?;
    if let Some(path) = &a.out_spikes {
        write_spikes(path, run.output())?;
    }
    let layers: Vec<serde_json::Value> = run
        .layer_spikes
        .iter()
        .zip(&run.input_sparsity)
        .enumerate()
        .map(|(i, (s, sp))| {
            serde_json::json!({
                "index": i,
                "output_spikes": s.count_ones(),
                "input_sparsity": sp,
            })
        })
        .collect();
    let summary = serde_json::json!({ "layers": layers });
    emit(None, format!("{}\n", serde_json::to_string_pretty(&summary)?).as_bytes())
}

fn cmd_compare(a: &NetInput) -> CliResult {
    let (net, weights, input) = load_inputs(a)?;
    let golden = run_network(&net, &weights, &input)?;
    let sim = simulate_network(&net, &weights, &input, &ArchParams::default(), SimOptions::default())?;
    for (i, (g, s)) in golden.layer_spikes.iter().zip(&sim.layer_spikes).enumerate() {
        if encode_spikes(g) != encode_spikes(s) {
            let differ = (0..g.len()).filter(|&j| g.get_flat(j) != s.get_flat(j)).count();
            return Err(fail(
                EXIT_MISMATCH,
                anyhow!("layer {i}: {differ} of {} spike bits differ", g.len()),
            ));
        }
    }
    println!(
        "identical: {} layers, {} output spikes",
        golden.layer_spikes.len(),
        golden.output().count_ones()
    );
    Ok(())
}

fn cmd_map(a: &MapArgs) -> CliResult {
    let net = load_net(&a.net, a.precision)?;
    let schedules = map_network(&net, &ArchParams::default())?;
    emit(None, format!("{}\n", serde_json::to_string_pretty(&schedules)?).as_bytes())
}

fn cmd_calibrate(a: &CalibrateArgs) -> CliResult {
    let targets = match &a.targets {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            CalibrationTargets::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => CalibrationTargets::default(),
    };
    let cal = calibrate(&targets, &ArchParams::default(), &EnergyParams::default())?;
    emit(a.out.as_deref(), render_calibration(&cal, &targets).as_bytes())?;
    eprintln!(
        "cu_overhead_cycles = {}, {:.4} TOPS/W, {:.4} GOPS, {:.4} mW",
        cal.arch.cu_overhead_cycles, cal.report.tops_per_w, cal.report.gops, cal.report.power_mw
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref())?;
    for &s in &a.sparsities {
        check_sparsity(s)?;
    }
    let voltages = match a.voltage.len() {
        1 => vec![a.voltage[0]; a.freq_mhz.len()],
        n if n == a.freq_mhz.len() => a.voltage.clone(),
        _ => return Err(fail(EXIT_USAGE, anyhow!("give one voltage or one per frequency"))),
    };
    let grid = SweepGrid {
        sparsities: a.sparsities.clone(),
        precisions: a
            .precisions
            .iter()
            .map(|&b| PrecisionMode::new(b))
            .collect::<Result<_, _>>()
            .map_err(|e| fail(EXIT_USAGE, e.into()))?,
        points: a.freq_mhz.iter().zip(&voltages).map(|(&f, &v)| OperatingPoint::new(f, v)).collect(),
    };
    let rows = sweep(&grid, &cfg.arch, &cfg.energy, a.seed)?;
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    emit(a.out.as_deref(), &buf)
}

fn cmd_gen_spikes(a: &GenSpikesArgs) -> CliResult {
    check_sparsity(a.sparsity)?;
    if a.dims.len() != 4 {
        return Err(fail(EXIT_USAGE, anyhow!("--dims takes four values T,C,H,W")));
    }
    let s = gen_spikes((a.dims[0], a.dims[1], a.dims[2], a.dims[3]), a.sparsity, a.seed);
    write_spikes(&a.out, &s)?;
    eprintln!("{} of {} bits set", s.count_ones(), s.len());
    Ok(())
}

fn cmd_ingest(a: &IngestArgs) -> CliResult {
    if a.window_us == 0 || a.min_count == 0 {
        return Err(fail(EXIT_USAGE, anyhow!("--window-us and --min-count must be positive")));
    }
    let b = Binning {
        width: a.width,
        height: a.height,
        timesteps: a.timesteps,
        window_us: a.window_us,
        min_count: a.min_count,
    };
    let s = ingest_events_file(&a.events, &b)?;
    write_spikes(&a.out, &s)?;
    eprintln!("{} of {} bits set", s.count_ones(), s.len());
    Ok(())
}

fn cmd_aer(a: &AerArgs) -> CliResult {
    if a.addr_bits == 0 {
        return Err(fail(EXIT_USAGE, anyhow!("--addr-bits must be positive")));
    }
    let (entries, sparsity) = match (&a.spikes, a.entries, a.sparsity) {
        (Some(path), _, _) => {
            let s = read_spikes(path)?;
            (s.len() as u64, s.sparsity())
        }
        (None, Some(n), Some(s)) => (n, s),
        _ => return Err(fail(EXIT_USAGE, anyhow!("give --spikes or both --entries and --sparsity"))),
    };
    check_sparsity(sparsity)?;
    if entries == 0 {
        return Err(fail(EXIT_USAGE, anyhow!("no entries to store")));
    }
    let t = aer_tradeoff(entries, a.addr_bits, sparsity);
    let out = serde_json::json!({
        "entries": entries,
        "addr_bits": a.addr_bits,
        "sparsity": sparsity,
        "raw_bits": t.raw_bits,
        "aer_bits": t.aer_bits,
        "crossover_sparsity": t.crossover_sparsity,
        "aer_smaller": t.aer_bits < t.raw_bits,
    });
    emit(None, format!("{}\n", serde_json::to_string_pretty(&out)?).as_bytes())
}

fn cmd_gen_weights(a: &GenWeightsArgs) -> CliResult {
    let net = load_net(&a.net, a.precision)?;
    write_weights(&a.out, net.precision, &random_network_weights(&net, a.seed))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Golden(a) => cmd_golden(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Map(a) => cmd_map(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GenSpikes(a) => cmd_gen_spikes(a),
        Command::IngestEvents(a) => cmd_ingest(a),
        Command::AnalyzeAer(a) => cmd_aer(a),
        Command::GenWeights(a) => cmd_gen_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
