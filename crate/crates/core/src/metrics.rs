//! Energy, power, throughput and efficiency from simulation counters, the
//! calibration of the energy model, and the AER storage comparison.
//!
//! # Report schema
//!
//! [`RunReport`] serializes to JSON with these keys (all required, no others
//! accepted on read):
//!
//! | key | meaning |
//! |-----|---------|
//! | `weight_bits` | 4, 6 or 8 |
//! | `clock_mhz`, `voltage` | operating point |
//! | `total_cycles`, `wall_time_s` | latency |
//! | `energy_pj` | `compute_macros`, `neuron_units`, `ifspad`, `fifos`, `transfers`, `leakage`, `total` |
//! | `raw_sops` | accumulations actually performed for real neurons |
//! | `dense_sops` | accumulations of the equivalent dense layer |
//! | `effective_ops` | `dense_sops * op_count_scale` |
//! | `gops`, `power_mw`, `tops_per_w` | derived rates |
//! | `stats` | raw counters (see `RunStats`) |
//! | `layers` | per-layer `index`, `kind`, `mode`, `input_sparsity`, `cycles`, `energy_pj` |

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    ArchParams, ConfigError, EnergyParams, LayerKind, Mode, PrecisionMode,
};
use crate::cim::{AddressTuple, ComputeMacro, Parity};
use crate::fixed::Overflow;
use crate::pipeline::{simulate_single_layer, LayerStats, NetworkRun, RunStats, SimError};
use crate::workload::{
    random_weights, reference_input, reference_layer, reference_neuron, REFERENCE_CHANNELS,
    REFERENCE_HW, REFERENCE_SEED, REFERENCE_TIMESTEPS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("calibration diverged: {what} (residual {residual:.4})")]
    CalibrationDiverged { what: String, residual: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPoint {
    pub clock_mhz: f64,
    pub voltage: f64,
}

impl OperatingPoint {
    pub fn new(clock_mhz: f64, voltage: f64) -> Self {
        OperatingPoint { clock_mhz, voltage }
    }

    /// The energy model's reference point.
    pub fn reference(e: &EnergyParams) -> Self {
        OperatingPoint::new(e.f_ref_mhz, e.v_ref)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyBreakdown {
    pub compute_macros: f64,
    pub neuron_units: f64,
    pub ifspad: f64,
    pub fifos: f64,
    pub transfers: f64,
    pub leakage: f64,
    pub total: f64,
}

/// Energy in pJ for a set of counters. Idle pipeline slots during fill and
/// drain draw no dynamic energy, so each accumulation is charged exactly one
/// read, compute and store.
pub fn energy_of(
    stats: &RunStats,
    e: &EnergyParams,
    op: OperatingPoint,
    units: usize,
) -> EnergyBreakdown {
    let v = op.voltage / e.v_ref;
    let dynamic = v * v;
    let leak_per_cycle = e.e_leakage_per_cycle * (e.f_ref_mhz / op.clock_mhz) * v;
    let mut b = EnergyBreakdown {
        compute_macros: dynamic
            * (stats.macro_ops as f64 * e.e_base() + stats.parity_switches as f64 * e.e_parity_switch),
        neuron_units: dynamic * stats.nu_cycles as f64 * e.e_neuron_cycle,
        ifspad: dynamic
            * (stats.ifspad_writes as f64 * e.e_ifspad_write + stats.ifspad_reads as f64 * e.e_ifspad_read),
        fifos: dynamic * stats.fifo_ops as f64 * e.e_fifo_op,
        transfers: dynamic * stats.xfer_words as f64 * e.e_xfer_word,
        leakage: stats.cycles as f64 * units as f64 * leak_per_cycle,
        total: 0.0,
    };
    b.total = b.compute_macros + b.neuron_units + b.ifspad + b.fifos + b.transfers + b.leakage;
    b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerReport {
    pub index: usize,
    pub kind: LayerKind,
    pub mode: Option<Mode>,
    pub input_sparsity: Vec<f64>,
    pub cycles: u64,
    pub energy_pj: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub weight_bits: u32,
    pub clock_mhz: f64,
    pub voltage: f64,
    pub total_cycles: u64,
    pub wall_time_s: f64,
    pub energy_pj: EnergyBreakdown,
    pub raw_sops: u64,
    pub dense_sops: u64,
    pub effective_ops: f64,
    pub gops: f64,
    pub power_mw: f64,
    pub tops_per_w: f64,
    pub stats: RunStats,
    pub layers: Vec<LayerReport>,
}

impl RunReport {
    pub fn from_stats(
        stats: &RunStats,
        layers: &[LayerStats],
        p: PrecisionMode,
        e: &EnergyParams,
        arch: &ArchParams,
        op: OperatingPoint,
    ) -> RunReport {
        let units = arch.total_units();
        let energy = energy_of(stats, e, op, units);
        let wall_time_s = stats.cycles as f64 / (op.clock_mhz * 1e6);
        let effective_ops = stats.dense_sops as f64 * e.op_count_scale;
        let (gops, power_mw) = if wall_time_s > 0.0 {
            (
                effective_ops / wall_time_s / 1e9,
                energy.total * 1e-12 / wall_time_s * 1e3,
            )
        } else {
            (0.0, 0.0)
        };
        let tops_per_w = if power_mw > 0.0 { gops / power_mw } else { 0.0 };
        RunReport {
            weight_bits: p.weight_bits(),
            clock_mhz: op.clock_mhz,
            voltage: op.voltage,
            total_cycles: stats.cycles,
            wall_time_s,
            energy_pj: energy,
            raw_sops: stats.raw_sops,
            dense_sops: stats.dense_sops,
            effective_ops,
            gops,
            power_mw,
            tops_per_w,
            stats: stats.clone(),
            layers: layers
                .iter()
                .map(|l| LayerReport {
                    index: l.index,
                    kind: l.kind,
                    mode: l.mode,
                    input_sparsity: l.input_sparsity.clone(),
                    cycles: l.stats.cycles,
                    energy_pj: energy_of(&l.stats, e, op, units).total,
                })
                .collect(),
        }
    }

    pub fn from_network(
        run: &NetworkRun,
        p: PrecisionMode,
        e: &EnergyParams,
        arch: &ArchParams,
        op: OperatingPoint,
    ) -> RunReport {
        Self::from_stats(&run.total, &run.layers, p, e, arch, op)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Relative energy per accumulation when parity switches are amortized
/// over batches of `n`: `1 + r / n` with `r = E_switch / E_base`.
pub fn switching_model(n: f64, switch_ratio: f64) -> f64 {
    assert!(n >= 1.0);
    1.0 + switch_ratio / n
}

/// Measured energy per op of a synthetic stream of `n_ops` accumulations
/// issued in same-parity batches of `batch`.
pub fn measured_energy_per_op(batch: usize, n_ops: usize, e: &EnergyParams) -> f64 {
    let ops: Vec<AddressTuple> = (0..n_ops)
        .map(|i| {
            let parity = if (i / batch).is_multiple_of(2) { Parity::Even } else { Parity::Odd };
            AddressTuple::new(i % 128, (i / 128) % 16, parity)
        })
        .collect();
    let mut m = ComputeMacro::new(PrecisionMode::W4, Overflow::Wrap);
    let run = m.run_op_sequence(&ops, 1).expect("in-range tuples");
    let stats = RunStats {
        macro_ops: ops.len() as u64,
        parity_switches: run.switches,
        ..Default::default()
    };
    energy_of(&stats, e, OperatingPoint::reference(e), 0).total / n_ops as f64
}

/// Simulate the reference layer at one precision and sparsity.
pub fn run_reference(
    p: PrecisionMode,
    sparsity: f64,
    arch: &ArchParams,
    seed: u64,
) -> Result<RunStats, SimError> {
    let layer = reference_layer(p);
    let input = reference_input(sparsity, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights = random_weights(&layer, p, &mut rng);
    let (_, stats) =
        simulate_single_layer(&layer, p, &input, &weights, reference_neuron(p), Overflow::Wrap, arch)?;
    Ok(stats)
}

pub fn reference_report(
    p: PrecisionMode,
    sparsity: f64,
    arch: &ArchParams,
    e: &EnergyParams,
    op: OperatingPoint,
) -> Result<RunReport, SimError> {
    let stats = run_reference(p, sparsity, arch, REFERENCE_SEED)?;
    Ok(RunReport::from_stats(&stats, &[], p, e, arch, op))
}

/// Calibration targets; defaults are the chip's measured operating points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationTargets {
    pub weight_bits: u32,
    pub sparsity: f64,
    pub clock_mhz: f64,
    pub voltage: f64,
    pub tops_per_w: f64,
    pub gops: f64,
    pub power_mw: f64,
    /// Second operating point, used to split static from dynamic power.
    pub high_clock_mhz: f64,
    pub high_voltage: f64,
    pub high_power_mw: f64,
    /// Lower sparsity of the throughput pair (the upper one is `sparsity`).
    pub low_sparsity: f64,
    /// Fixed per-unit overhead expressed as an equivalent input density.
    pub overhead_density: f64,
    pub tolerance: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            weight_bits: 4,
            sparsity: 0.95,
            clock_mhz: 50.0,
            voltage: 0.9,
            tops_per_w: 5.0,
            gops: 24.54,
            power_mw: 4.9,
            high_clock_mhz: 150.0,
            high_voltage: 1.0,
            high_power_mw: 18.0,
            low_sparsity: 0.80,
            overhead_density: 0.10,
            tolerance: 0.02,
        }
    }
}

impl CalibrationTargets {
    /// Required throughput ratio between the two sparsities.
    pub fn throughput_ratio(&self) -> f64 {
        (self.overhead_density + 1.0 - self.low_sparsity) / (self.overhead_density + 1.0 - self.sparsity)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            line: 0,
            column: 0,
            message: e.message().to_string(),
        })
    }
}

/// Fitted parameters plus what they achieve on the reference workload.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub arch: ArchParams,
    pub energy: EnergyParams,
    pub throughput_ratio: f64,
    pub static_power_mw: f64,
    pub dynamic_scale: f64,
    pub report: RunReport,
    pub high_report: RunReport,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Fit, in order: the CU overhead (throughput ratio across sparsity), the
/// static/dynamic power split (two operating points, dynamic power ~ f V^2,
/// static ~ V), one common scale on all dynamic energies (power) and the op
/// count scale (GOPS). Ratios between precisions and frequencies are left to
/// the model.
pub fn calibrate(
    targets: &CalibrationTargets,
    base_arch: &ArchParams,
    base_energy: &EnergyParams,
) -> Result<Calibration, MetricsError> {
    let p = PrecisionMode::new(targets.weight_bits)?;
    base_arch.validate()?;
    base_energy.validate()?;
    let diverged = |what: &str, residual: f64| MetricsError::CalibrationDiverged {
        what: what.to_string(),
        residual,
    };

    let want = targets.throughput_ratio();
    let ratio_at = |overhead: u64| -> Result<f64, MetricsError> {
        let arch = ArchParams {
            cu_overhead_cycles: overhead,
            ..base_arch.clone()
        };
        let lo = run_reference(p, targets.low_sparsity, &arch, REFERENCE_SEED)?;
        let hi = run_reference(p, targets.sparsity, &arch, REFERENCE_SEED)?;
        Ok(lo.cycles as f64 / hi.cycles as f64)
    };
    let r0 = ratio_at(0)?;
    let overhead = if r0 <= want {
        0
    } else {
        let mut hi = 1u64;
        while ratio_at(hi)? > want {
            hi *= 2;
            if hi > 1 << 24 {
                return Err(diverged("no CU overhead reaches the throughput ratio", r0 - want));
            }
        }
        // ratio_at is non-increasing in the overhead.
        let mut lo = 0u64;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if ratio_at(mid)? > want {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if (ratio_at(lo)? - want).abs() < (ratio_at(hi)? - want).abs() {
            lo
        } else {
            hi
        }
    };
    let arch = ArchParams {
        cu_overhead_cycles: overhead,
        ..base_arch.clone()
    };
    let throughput_ratio = ratio_at(overhead)?;

    let a = (targets.high_clock_mhz / targets.clock_mhz) * (targets.high_voltage / targets.voltage).powi(2);
    let b = targets.high_voltage / targets.voltage;
    let static_mw = (targets.high_power_mw - a * targets.power_mw) / (b - a);
    let dynamic_mw = targets.power_mw - static_mw;
    if !(static_mw >= 0.0 && dynamic_mw > 0.0) {
        return Err(diverged("power targets give a negative static or dynamic share", static_mw));
    }

    let stats = run_reference(p, targets.sparsity, &arch, REFERENCE_SEED)?;
    let op = OperatingPoint::new(targets.clock_mhz, targets.voltage);
    let mut energy = EnergyParams {
        v_ref: targets.voltage,
        f_ref_mhz: targets.clock_mhz,
        e_leakage_per_cycle: 0.0,
        op_count_scale: 1.0,
        ..base_energy.clone()
    };
    let wall = stats.cycles as f64 / (targets.clock_mhz * 1e6);
    let dyn_pj = energy_of(&stats, &energy, op, 0).total;
    let dyn_mw0 = dyn_pj * 1e-12 / wall * 1e3;
    if !(dyn_mw0 > 0.0) {
        return Err(diverged("reference workload consumes no dynamic energy", dyn_mw0));
    }
    let k = dynamic_mw / dyn_mw0;
    energy.scale_dynamic(k);
    // Static power S (mW) spread over all units and cycles at the reference clock.
    energy.e_leakage_per_cycle =
        static_mw * 1e-3 / (targets.clock_mhz * 1e6) * 1e12 / arch.total_units() as f64;
    let gops0 = stats.dense_sops as f64 / wall / 1e9;
    energy.op_count_scale = targets.gops / gops0;

    let report = RunReport::from_stats(&stats, &[], p, &energy, &arch, op);
    let high_op = OperatingPoint::new(targets.high_clock_mhz, targets.high_voltage);
    let high_report = RunReport::from_stats(&stats, &[], p, &energy, &arch, high_op);
    let checks = [
        ("throughput ratio", throughput_ratio, want),
        ("TOPS/W", report.tops_per_w, targets.tops_per_w),
        ("GOPS", report.gops, targets.gops),
        ("power", report.power_mw, targets.power_mw),
        ("power at the second operating point", high_report.power_mw, targets.high_power_mw),
    ];
    for (what, got, want) in checks {
        let r = rel(got, want);
        if r > targets.tolerance {
            return Err(diverged(&format!("{what}: got {got:.4}, want {want:.4}"), r));
        }
    }
    Ok(Calibration {
        arch,
        energy,
        throughput_ratio,
        static_power_mw: static_mw,
        dynamic_scale: k,
        report,
        high_report,
    })
}

/// Architecture and energy parameters as stored in a calibrated config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibratedConfig {
    pub arch: ArchParams,
    pub energy: EnergyParams,
}

const CALIBRATED: &str = include_str!("../data/calibrated.toml");

impl CalibratedConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: CalibratedConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| {
                    let before = &text[..s.start];
                    let line = before.matches('\n').count() + 1;
                    let column = s.start - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    (line, column)
                })
                .unwrap_or((0, 0));
            ConfigError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.arch.validate()?;
        cfg.energy.validate()?;
        Ok(cfg)
    }

    /// The fitted defaults shipped with the crate.
    pub fn shipped() -> Self {
        Self::parse(CALIBRATED).expect("shipped calibration parses")
    }

    pub fn shipped_text() -> &'static str {
        CALIBRATED
    }
}

/// Render a calibration as a commented key = value file.
pub fn render_calibration(cal: &Calibration, targets: &CalibrationTargets) -> String {
    let a = &cal.arch;
    let e = &cal.energy;
    let mut s = String::new();
    let mut line = |l: String| {
        s.push_str(&l);
        s.push('\n');
    };
    line("# Calibrated timing and energy parameters.".into());
    line("#".into());
    line(format!(
        "# Reference workload: 1x1 conv, {REFERENCE_CHANNELS} input channels, {REFERENCE_HW}x{REFERENCE_HW} \
         input, T = {REFERENCE_TIMESTEPS},"
    ));
    line(format!(
        "# Bernoulli input spikes (seed {REFERENCE_SEED}), {}-bit weights, Mode 1, all 9 CUs busy.",
        targets.weight_bits
    ));
    line(format!(
        "# Targets at {}% sparsity, {} MHz, {} V: {} TOPS/W, {} GOPS, {} mW.",
        targets.sparsity * 100.0,
        targets.clock_mhz,
        targets.voltage,
        targets.tops_per_w,
        targets.gops,
        targets.power_mw
    ));
    line(format!(
        "# Second point for the static/dynamic split: {} mW at {} MHz, {} V.",
        targets.high_power_mw, targets.high_clock_mhz, targets.high_voltage
    ));
    line(format!(
        "# Throughput ratio between {}% and {}% sparsity: {:.4} (fixed overhead worth {} input density).",
        targets.low_sparsity * 100.0,
        targets.sparsity * 100.0,
        targets.throughput_ratio(),
        targets.overhead_density
    ));
    line("# Regenerate with `cimsnn calibrate --out <file>`.".into());
    line(String::new());
    line("[arch]".into());
    line(format!("n_compute_units = {}", a.n_compute_units));
    line(format!("n_neuron_units = {}", a.n_neuron_units));
    line(format!("fifo_depth = {}", a.fifo_depth));
    line(format!("clock_mhz = {:?}", a.clock_mhz));
    line(format!("parity_switch_cycles = {}", a.parity_switch_cycles));
    line(format!("xfer_cycles = {}", a.xfer_cycles));
    line(format!(
        "# fitted: throughput ratio achieved {:.4}",
        cal.throughput_ratio
    ));
    line(format!("cu_overhead_cycles = {}", a.cu_overhead_cycles));
    line(String::new());
    line("[energy]".into());
    line(format!(
        "# fitted: dynamic energies scaled by {:.6} from the uncalibrated defaults",
        cal.dynamic_scale
    ));
    line("# (switch / accumulation energy ratio kept at 5/9).".into());
    for (k, v) in [
        ("e_read_cycle", e.e_read_cycle),
        ("e_compute_cycle", e.e_compute_cycle),
        ("e_store_cycle", e.e_store_cycle),
        ("e_parity_switch", e.e_parity_switch),
        ("e_ifspad_write", e.e_ifspad_write),
        ("e_ifspad_read", e.e_ifspad_read),
        ("e_fifo_op", e.e_fifo_op),
        ("e_xfer_word", e.e_xfer_word),
        ("e_neuron_cycle", e.e_neuron_cycle),
    ] {
        line(format!("{k} = {v:?}"));
    }
    line(format!(
        "# fitted: static power {:.6} mW at the reference voltage, per unit and cycle",
        cal.static_power_mw
    ));
    line(format!("e_leakage_per_cycle = {:?}", e.e_leakage_per_cycle));
    line(format!(
        "# fitted: reported ops per dense-equivalent accumulation ({:.4} GOPS achieved)",
        cal.report.gops
    ));
    line(format!("op_count_scale = {:?}", e.op_count_scale));
    line(format!("v_ref = {:?}", e.v_ref));
    line(format!("f_ref_mhz = {:?}", e.f_ref_mhz));
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AerTradeoff {
    pub raw_bits: f64,
    pub aer_bits: f64,
    pub crossover_sparsity: f64,
}

/// Storage of `entries` binary spikes as a raw bitmap versus address events
/// of `addr_bits` each. AER wins above the crossover sparsity `1 - 1/A`.
pub fn aer_tradeoff(entries: u64, addr_bits: u32, sparsity: f64) -> AerTradeoff {
    assert!(entries > 0 && addr_bits > 0, "entries and address width must be positive");
    assert!((0.0..=1.0).contains(&sparsity));
    let n = entries as f64;
    let a = addr_bits as f64;
    AerTradeoff {
        raw_bits: n,
        aer_bits: a * n * (1.0 - sparsity),
        crossover_sparsity: 1.0 - 1.0 / a,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub sparsities: Vec<f64>,
    pub precisions: Vec<PrecisionMode>,
    pub points: Vec<OperatingPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub weight_bits: u32,
    pub sparsity: f64,
    pub clock_mhz: f64,
    pub voltage: f64,
    pub cycles: u64,
    pub effective_ops: f64,
    pub energy_pj: f64,
    pub gops: f64,
    pub power_mw: f64,
    pub tops_per_w: f64,
}

/// Reference workload over a sparsity x precision x operating point grid.
/// Rows come back sorted by precision, sparsity, clock and voltage.
pub fn sweep(
    grid: &SweepGrid,
    arch: &ArchParams,
    e: &EnergyParams,
    seed: u64,
) -> Result<Vec<SweepRow>, SimError> {
    let cells: Vec<(PrecisionMode, f64)> = grid
        .precisions
        .iter()
        .flat_map(|&p| grid.sparsities.iter().map(move |&s| (p, s)))
        .collect();
    let stats: Vec<RunStats> = cells
        .par_iter()
        .map(|&(p, s)| run_reference(p, s, arch, seed))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (&(p, s), st) in cells.iter().zip(&stats) {
        for &op in &grid.points {
            let r = RunReport::from_stats(st, &[], p, e, arch, op);
            rows.push(SweepRow {
                weight_bits: p.weight_bits(),
                sparsity: s,
                clock_mhz: op.clock_mhz,
                voltage: op.voltage,
                cycles: r.total_cycles,
                effective_ops: r.effective_ops,
                energy_pj: r.energy_pj.total,
                gops: r.gops,
                power_mw: r.power_mw,
                tops_per_w: r.tops_per_w,
            });
        }
    }
    rows.sort_by(|a, b| {
        (a.weight_bits, a.sparsity, a.clock_mhz, a.voltage)
            .partial_cmp(&(b.weight_bits, b.sparsity, b.clock_mhz, b.voltage))
            .expect("finite grid values")
    });
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
