//! Cycle simulator of the CU chains and neuron units.
//!
//! Functional state flows through the bit-level macro models; timing comes
//! from the per-unit datapath simulation and the event-driven chain model in
//! [`chain`]. Tiles and layers run one after another on the single core.

pub mod chain;

use std::io::Write;
use std::ops::AddAssign;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    ArchParams, LayerKind, LayerSpec, Mode, NetworkSpec, NeuronSpec, PrecisionMode, VMEM_ROWS,
};
use crate::cim::{ComputeMacro, MacroError, NeuronMacro, Parity, NEURON_PASS_CYCLES};
use crate::datapath::{datapath_cycles, im2col_load, DatapathConfig, DatapathError, TileWindow};
use crate::fixed::Overflow;
use crate::golden::{self, check_weights};
use crate::mapper::{map_network, tile_layer, MapError, Tile, TileSchedule};
use crate::tensor::{ShapeError, SpikeMap, SpikeTensor, WeightTensor};

pub use chain::{simulate_chain, ChainEvent, ChainTiming, EventKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Macro(#[from] MacroError),
    #[error(transparent)]
    Datapath(#[from] DatapathError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Cu,
    Nu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitNode {
    /// Core-wide id: CUs are `0..n_compute_units`, NUs follow.
    pub id: usize,
    pub kind: UnitKind,
    pub chain: usize,
    pub upstream: Option<usize>,
    pub downstream: Option<usize>,
}

impl UnitNode {
    pub fn label(&self, arch: &ArchParams) -> String {
        match self.kind {
            UnitKind::Cu => format!("cu{}", self.id),
            UnitKind::Nu => format!("nu{}", self.id - arch.n_compute_units),
        }
    }
}

pub fn build_topology(mode: Mode, arch: &ArchParams) -> Vec<Vec<UnitNode>> {
    let (chains, cus) = match mode {
        Mode::Mode1 => (arch.n_neuron_units, arch.n_compute_units / arch.n_neuron_units),
        Mode::Mode2 => (1, arch.n_compute_units),
    };
    (0..chains)
        .map(|c| {
            let mut ids: Vec<(usize, UnitKind)> =
                (0..cus).map(|k| (c * cus + k, UnitKind::Cu)).collect();
            ids.push((arch.n_compute_units + c, UnitKind::Nu));
            (0..ids.len())
                .map(|i| UnitNode {
                    id: ids[i].0,
                    kind: ids[i].1,
                    chain: c,
                    upstream: i.checked_sub(1).map(|j| ids[j].0),
                    downstream: ids.get(i + 1).map(|x| x.0),
                })
                .collect()
        })
        .collect()
}

/// Snapshot of a CU's 32 Vmem rows handed to the next unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialVmemBlock {
    pub rows: [u64; VMEM_ROWS],
    pub timestep: usize,
}

/// Counters gathered while simulating. All fields add up across tiles and
/// layers, `cycles` included, since the core runs them back to back.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunStats {
    pub cycles: u64,
    pub tiles: u64,
    /// Address tuples issued to compute macros (each runs R, C and S once).
    pub macro_ops: u64,
    /// Weight-into-Vmem accumulations for real (unmasked) output channels.
    pub raw_sops: u64,
    /// Accumulations a dense engine would perform for the same tiles.
    pub dense_sops: u64,
    pub parity_switches: u64,
    pub ifspad_writes: u64,
    pub ifspad_reads: u64,
    pub fifo_ops: u64,
    pub xfer_words: u64,
    pub nu_cycles: u64,
    pub neuron_passes: u64,
    pub cu_busy_cycles: u64,
    pub detector_stalls: u64,
    pub link_stall_cycles: u64,
    /// Set bits loaded into IFspads.
    pub spikes_presented: u64,
    pub output_spikes: u64,
}

impl AddAssign<&RunStats> for RunStats {
    fn add_assign(&mut self, o: &RunStats) {
        self.cycles += o.cycles;
        self.tiles += o.tiles;
        self.macro_ops += o.macro_ops;
        self.raw_sops += o.raw_sops;
        self.dense_sops += o.dense_sops;
        self.parity_switches += o.parity_switches;
        self.ifspad_writes += o.ifspad_writes;
        self.ifspad_reads += o.ifspad_reads;
        self.fifo_ops += o.fifo_ops;
        self.xfer_words += o.xfer_words;
        self.nu_cycles += o.nu_cycles;
        self.neuron_passes += o.neuron_passes;
        self.cu_busy_cycles += o.cu_busy_cycles;
        self.detector_stalls += o.detector_stalls;
        self.link_stall_cycles += o.link_stall_cycles;
        self.spikes_presented += o.spikes_presented;
        self.output_spikes += o.output_spikes;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub layer: usize,
    pub tile: usize,
    pub unit: usize,
    pub timestep: usize,
    pub kind: EventKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTrace {
    pub events: Vec<TraceEvent>,
}

impl SimTrace {
    /// CSV with header `cycle,layer,tile,unit,timestep,event`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cycle", "layer", "tile", "unit", "timestep", "event"])?;
        for e in &self.events {
            w.write_record([
                e.cycle.to_string(),
                e.layer.to_string(),
                e.tile.to_string(),
                e.unit.to_string(),
                e.timestep.to_string(),
                e.kind.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub trace: bool,
}

/// Everything a tile needs besides its coordinates.
pub struct LayerContext<'a> {
    pub layer: &'a LayerSpec,
    pub schedule: &'a TileSchedule,
    pub frames: &'a [SpikeMap],
    pub weights: &'a WeightTensor,
    pub neuron: NeuronSpec,
    pub overflow: Overflow,
    pub arch: &'a ArchParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileResult {
    /// `(t, channel, y, x)` of every output spike.
    pub spikes: Vec<(usize, usize, usize, usize)>,
    pub stats: RunStats,
    /// Chain events with global unit ids and tile-local cycles.
    pub events: Vec<(u64, usize, usize, EventKind)>,
    pub makespan: u64,
    /// `delays[u][t]` of every active chain, as fed to the chain timing.
    pub chain_delays: Vec<Vec<Vec<u64>>>,
}

fn load_weights(
    cu: &mut ComputeMacro,
    weights: &WeightTensor,
    channels: &[usize],
    rows: std::ops::Range<usize>,
) {
    cu.clear_weights();
    for (y, f) in rows.enumerate() {
        for (j, &k) in channels.iter().enumerate() {
            cu.set_weight(y, j, weights.at(k, f));
        }
    }
}

/// Run one tile over all timesteps: every active chain gets its weights,
/// the CUs accumulate partial Vmems in chain order, and the NU keeps the full
/// Vmems resident across timesteps.
pub fn simulate_tile(ctx: &LayerContext<'_>, tile: Tile, trace: bool) -> Result<TileResult, SimError> {
    let s = ctx.schedule;
    let p: PrecisionMode = s.precision();
    let arch = ctx.arch;
    let dcfg = DatapathConfig::from_arch(arch);
    let positions = &s.position_groups[tile.position_group];
    let topology = build_topology(s.mode, arch);
    let steps = ctx.frames.len();
    let mut result = TileResult {
        spikes: Vec::new(),
        stats: RunStats {
            tiles: 1,
            ..Default::default()
        },
        events: Vec::new(),
        makespan: 0,
        chain_delays: Vec::new(),
    };

    for (c, units) in topology.iter().enumerate() {
        let channels = s.chain_channels(tile.channel_group, c);
        if channels.is_empty() {
            continue;
        }
        let active_even = (0..channels.len()).filter(|j| Parity::of_field(*j) == Parity::Even).count() as u64;
        let active_odd = channels.len() as u64 - active_even;
        let mut cus: Vec<ComputeMacro> = (0..s.cus_per_chain)
            .map(|k| {
                let mut m = ComputeMacro::new(p, ctx.overflow);
                load_weights(&mut m, ctx.weights, channels, s.row_range(k));
                m
            })
            .collect();
        let mut nu = NeuronMacro::new(p, ctx.overflow, &ctx.neuron);
        let mut delays = vec![vec![0u64; steps]; units.len()];

        for (t, frame) in ctx.frames.iter().enumerate() {
            let mut block = PartialVmemBlock {
                rows: [0; VMEM_ROWS],
                timestep: t,
            };
            for (k, cu) in cus.iter_mut().enumerate() {
                let window = TileWindow::new(ctx.layer.clone(), positions.clone(), s.row_range(k));
                let spad = im2col_load(frame, &window)?;
                let run = datapath_cycles(&spad, &dcfg);
                cu.load_vmem_rows(&block.rows);
                let seq = cu.run_op_sequence(&run.ops, arch.parity_switch_cycles)?;
                debug_assert_eq!(seq.cycles, run.macro_cycles);
                block = PartialVmemBlock {
                    rows: cu.vmem_rows(),
                    timestep: t,
                };
                delays[k][t] = arch.cu_overhead_cycles + run.cycles;

                let st = &mut result.stats;
                st.macro_ops += run.ops.len() as u64;
                st.raw_sops += run
                    .ops
                    .iter()
                    .map(|o| if o.parity == Parity::Even { active_even } else { active_odd })
                    .sum::<u64>();
                st.dense_sops += (spad.used_rows() * positions.len() * channels.len()) as u64;
                st.parity_switches += run.switches;
                st.ifspad_writes += run.ifspad_writes;
                st.ifspad_reads += run.ifspad_reads;
                st.fifo_ops += run.fifo_pushes + run.fifo_pops;
                st.cu_busy_cycles += delays[k][t];
                st.detector_stalls += run.detector_stalls;
                st.spikes_presented += spad.count_ones() as u64;
            }
            debug_assert_eq!(block.timestep, t);
            nu.load_partial(&block.rows);
            let pass = nu.neuron_pass(&ctx.neuron);
            delays[s.cus_per_chain][t] = pass.cycles;
            result.stats.nu_cycles += pass.cycles;
            result.stats.neuron_passes += 1;
            for (x, &(oy, ox)) in positions.iter().enumerate() {
                for (j, &k) in channels.iter().enumerate() {
                    if pass.spiked(x, j) {
                        result.spikes.push((t, k, oy, ox));
                    }
                }
            }
        }

        let timing = simulate_chain(&delays, arch.xfer_cycles, trace);
        result.stats.xfer_words += timing.sends * VMEM_ROWS as u64;
        result.stats.link_stall_cycles += timing.link_stall_cycles;
        result.makespan = result.makespan.max(timing.makespan);
        result.events.extend(
            timing
                .events
                .iter()
                .map(|e| (e.cycle, units[e.unit].id, e.timestep, e.kind)),
        );
        result.chain_delays.push(delays);
    }
    debug_assert_eq!(NEURON_PASS_CYCLES, 66);
    result.stats.cycles = result.makespan;
    result.stats.output_spikes = result.spikes.len() as u64;
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub index: usize,
    pub kind: LayerKind,
    pub mode: Option<Mode>,
    /// Input sparsity at every timestep.
    pub input_sparsity: Vec<f64>,
    pub stats: RunStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkRun {
    pub layer_spikes: Vec<SpikeTensor>,
    pub layers: Vec<LayerStats>,
    pub total: RunStats,
    pub trace: SimTrace,
}

impl NetworkRun {
    pub fn output(&self) -> &SpikeTensor {
        self.layer_spikes.last().expect("network has at least one layer")
    }
}

/// Simulate one weighted layer over all its tiles; returns output spikes,
/// stats and tile-ordered trace events with layer-local cycles.
pub fn simulate_layer(
    layer: &LayerSpec,
    schedule: &TileSchedule,
    input: &SpikeTensor,
    weights: &WeightTensor,
    neuron: NeuronSpec,
    overflow: Overflow,
    arch: &ArchParams,
    opts: SimOptions,
) -> Result<(SpikeTensor, RunStats, Vec<TraceEvent>), SimError> {
    check_weights(layer, weights)?;
    weights.check_precision(schedule.precision())?;
    let ctx = LayerContext {
        layer,
        schedule,
        frames: input.frames(),
        weights,
        neuron,
        overflow,
        arch,
    };
    let tiles: Vec<Tile> = schedule.tiles().collect();
    let results: Vec<TileResult> = tiles
        .par_iter()
        .map(|&t| simulate_tile(&ctx, t, opts.trace))
        .collect::<Result<_, _>>()?;

    let (k, h, w) = layer.output_shape();
    let mut out = SpikeTensor::zeros(input.timesteps(), k, h, w);
    let mut stats = RunStats::default();
    let mut events = Vec::new();
    for (i, r) in results.iter().enumerate() {
        for &(t, ch, y, x) in &r.spikes {
            out.set(t, ch, y, x, true);
        }
        let offset = stats.cycles;
        events.extend(r.events.iter().map(|&(cycle, unit, timestep, kind)| TraceEvent {
            cycle: offset + cycle,
            layer: 0,
            tile: i,
            unit,
            timestep,
            kind,
        }));
        stats += &r.stats;
    }
    Ok((out, stats, events))
}

pub fn simulate_network(
    net: &NetworkSpec,
    weights: &[WeightTensor],
    input: &SpikeTensor,
    arch: &ArchParams,
    opts: SimOptions,
) -> Result<NetworkRun, SimError> {
    net.validate().map_err(MapError::from)?;
    let schedules = map_network(net, arch)?;
    let weighted = net.weighted_layers().count();
    if weights.len() != weighted {
        return Err(ShapeError::Mismatch(format!(
            "{} weight tensors for {weighted} weighted layers",
            weights.len()
        ))
        .into());
    }
    if input.dims() != (net.timesteps, net.input_channels, net.input_h, net.input_w) {
        return Err(ShapeError::Mismatch(format!(
            "input {:?} does not match network input",
            input.dims()
        ))
        .into());
    }
    let mut run = NetworkRun {
        layer_spikes: Vec::new(),
        layers: Vec::new(),
        total: RunStats::default(),
        trace: SimTrace::default(),
    };
    let mut current = input.clone();
    let mut w_iter = weights.iter();
    for (i, (layer, schedule)) in net.layers.iter().zip(&schedules).enumerate() {
        let input_sparsity = current.frames().iter().map(SpikeMap::sparsity).collect();
        let (spikes, stats) = match schedule {
            None => {
                let frames = current
                    .frames()
                    .iter()
                    .map(|f| golden::maxpool(f, layer.kernel_h, layer.stride))
                    .collect::<Result<Vec<_>, _>>()?;
                (SpikeTensor::from_frames(frames)?, RunStats::default())
            }
            Some(schedule) => {
                let w = w_iter.next().expect("weight count checked");
                let (spikes, stats, events) = simulate_layer(
                    layer,
                    schedule,
                    &current,
                    w,
                    net.neuron_for(i),
                    net.overflow,
                    arch,
                    opts,
                )?;
                let offset = run.total.cycles;
                run.trace.events.extend(events.into_iter().map(|mut e| {
                    e.cycle += offset;
                    e.layer = i;
                    e
                }));
                (spikes, stats)
            }
        };
        run.total += &stats;
        run.layers.push(LayerStats {
            index: i,
            kind: layer.kind,
            mode: schedule.as_ref().map(|s| s.mode),
            input_sparsity,
            stats,
        });
        run.layer_spikes.push(spikes.clone());
        current = spikes;
    }
    Ok(run)
}

/// Convenience: map and simulate a single weighted layer on one input.
pub fn simulate_single_layer(
    layer: &LayerSpec,
    p: PrecisionMode,
    input: &SpikeTensor,
    weights: &WeightTensor,
    neuron: NeuronSpec,
    overflow: Overflow,
    arch: &ArchParams,
) -> Result<(SpikeTensor, RunStats), SimError> {
    let schedule = tile_layer(layer, p, arch)?;
    let (spikes, stats, _) =
        simulate_layer(layer, &schedule, input, weights, neuron, overflow, arch, SimOptions::default())?;
    Ok((spikes, stats))
}
