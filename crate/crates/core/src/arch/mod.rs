//! Architecture, precision, neuron, energy and network description types.
//!
//! Everything in here is immutable once validated. The closed-form capacity
//! numbers of the core (neurons per macro, output channels per mode) live on
//! [`PrecisionMode`].

mod netfile;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::{self, Overflow};

pub use netfile::{load_network, parse_network, save_network, write_network};

/// Columns in every macro array.
pub const MACRO_COLS: usize = 48;
/// Weight rows in a compute macro.
pub const WEIGHT_ROWS: usize = 128;
/// Vmem rows in a compute macro (two per IFspad column).
pub const VMEM_ROWS: usize = 32;
pub const COMPUTE_MACRO_ROWS: usize = WEIGHT_ROWS + VMEM_ROWS;
pub const NEURON_PARTIAL_ROWS: usize = 32;
pub const NEURON_FULL_ROWS: usize = 32;
pub const NEURON_PARAM_ROWS: usize = 8;
pub const NEURON_MACRO_ROWS: usize = NEURON_PARTIAL_ROWS + NEURON_FULL_ROWS + NEURON_PARAM_ROWS;
pub const IFSPAD_ROWS: usize = WEIGHT_ROWS;
pub const IFSPAD_COLS: usize = VMEM_ROWS / 2;
/// Compute macros per chain in Mode 1.
pub const MODE1_CHAIN_LEN: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unsupported weight precision {0} bits (supported: 4, 6, 8)")]
    UnsupportedPrecision(u32),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid network: {0}")]
    Validation(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Weight / Vmem bit-width pair. Vmem is always `2 * weight_bits - 1` wide.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct PrecisionMode {
    weight_bits: u32,
    vmem_bits: u32,
}

impl PrecisionMode {
    pub const W4: PrecisionMode = PrecisionMode { weight_bits: 4, vmem_bits: 7 };
    pub const W6: PrecisionMode = PrecisionMode { weight_bits: 6, vmem_bits: 11 };
    pub const W8: PrecisionMode = PrecisionMode { weight_bits: 8, vmem_bits: 15 };
    pub const ALL: [PrecisionMode; 3] = [Self::W4, Self::W6, Self::W8];

    pub fn new(weight_bits: u32) -> Result<Self, ConfigError> {
        match weight_bits {
            4 | 6 | 8 => Ok(PrecisionMode {
                weight_bits,
                vmem_bits: 2 * weight_bits - 1,
            }),
            other => Err(ConfigError::UnsupportedPrecision(other)),
        }
    }

    pub fn weight_bits(self) -> u32 {
        self.weight_bits
    }

    pub fn vmem_bits(self) -> u32 {
        self.vmem_bits
    }

    /// Weight fields (output channels) stored side by side in one macro row.
    pub fn fields_per_row(self) -> usize {
        MACRO_COLS / self.weight_bits as usize
    }

    /// Vmem fields per Vmem row; each one is fed by a pair of weight fields.
    pub fn vmem_fields_per_row(self) -> usize {
        self.fields_per_row() / 2
    }

    pub fn neurons_per_macro(self) -> usize {
        self.fields_per_row() * IFSPAD_COLS
    }

    pub fn parallel_channels(self, mode: Mode) -> usize {
        match mode {
            Mode::Mode1 => MODE1_CHAIN_LEN * self.fields_per_row(),
            Mode::Mode2 => self.fields_per_row(),
        }
    }

    pub fn weight_min(self) -> i32 {
        fixed::min_value(self.weight_bits)
    }

    pub fn weight_max(self) -> i32 {
        fixed::max_value(self.weight_bits)
    }

    pub fn vmem_min(self) -> i32 {
        fixed::min_value(self.vmem_bits)
    }

    pub fn vmem_max(self) -> i32 {
        fixed::max_value(self.vmem_bits)
    }
}

impl TryFrom<u32> for PrecisionMode {
    type Error = ConfigError;
    fn try_from(bits: u32) -> Result<Self, Self::Error> {
        PrecisionMode::new(bits)
    }
}

impl From<PrecisionMode> for u32 {
    fn from(p: PrecisionMode) -> u32 {
        p.weight_bits
    }
}

impl fmt::Debug for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}-bit", self.weight_bits, self.vmem_bits)
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Core configuration: three Mode 1 chains or one long Mode 2 chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mode1,
    Mode2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronModel {
    If,
    Lif,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reset {
    Hard,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeuronSpec {
    pub model: NeuronModel,
    pub reset: Reset,
    pub threshold: i32,
    pub leak: i32,
}

impl NeuronSpec {
    pub fn if_neuron(threshold: i32, reset: Reset) -> Self {
        NeuronSpec {
            model: NeuronModel::If,
            reset,
            threshold,
            leak: 0,
        }
    }

    pub fn lif_neuron(threshold: i32, leak: i32, reset: Reset) -> Self {
        NeuronSpec {
            model: NeuronModel::Lif,
            reset,
            threshold,
            leak,
        }
    }

    /// Leak applied per timestep; zero for IF.
    pub fn effective_leak(&self) -> i32 {
        match self.model {
            NeuronModel::If => 0,
            NeuronModel::Lif => self.leak,
        }
    }

    pub fn validate(&self, p: PrecisionMode) -> Result<(), ConfigError> {
        let bits = p.vmem_bits();
        if !fixed::in_range(self.threshold as i64, bits) {
            return Err(ConfigError::Validation(format!(
                "threshold {} not representable in {bits}-bit Vmem",
                self.threshold
            )));
        }
        if self.leak < 0 || !fixed::in_range(self.leak as i64, bits) {
            return Err(ConfigError::Validation(format!(
                "leak {} must be in [0, {}]",
                self.leak,
                p.vmem_max()
            )));
        }
        if self.model == NeuronModel::If && self.leak != 0 {
            return Err(ConfigError::Validation("IF neurons must have leak = 0".into()));
        }
        Ok(())
    }
}

/// Tunable architecture parameters. Array geometry is fixed by the
/// `*_ROWS` / `*_COLS` constants of this module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchParams {
    pub n_compute_units: usize,
    pub n_neuron_units: usize,
    pub fifo_depth: usize,
    pub clock_mhz: f64,
    pub parity_switch_cycles: u64,
    /// Cycles to move one partial-Vmem block over a link (32 words, 1 word/cycle).
    pub xfer_cycles: u64,
    /// Fixed per-invocation cost of a compute unit (IFmem fetch, control setup).
    /// Zero until calibration assigns it.
    pub cu_overhead_cycles: u64,
}

impl Default for ArchParams {
    fn default() -> Self {
        ArchParams {
            n_compute_units: 9,
            n_neuron_units: 3,
            fifo_depth: 16,
            clock_mhz: 50.0,
            parity_switch_cycles: 1,
            xfer_cycles: VMEM_ROWS as u64,
            cu_overhead_cycles: 0,
        }
    }
}

impl ArchParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_compute_units != 9 || self.n_neuron_units != 3 {
            return Err(ConfigError::Validation(
                "the core model supports exactly 9 compute and 3 neuron units".into(),
            ));
        }
        if self.fifo_depth == 0 {
            return Err(ConfigError::Validation("fifo_depth must be >= 1".into()));
        }
        if !(self.clock_mhz > 0.0) {
            return Err(ConfigError::Validation("clock_mhz must be positive".into()));
        }
        Ok(())
    }

    pub fn total_units(&self) -> usize {
        self.n_compute_units + self.n_neuron_units
    }
}

/// Energy cost table, in pJ at the reference operating point
/// (`v_ref`, `f_ref_mhz`). Dynamic terms scale with V^2; leakage is a static
/// power expressed per unit-cycle at the reference clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyParams {
    pub e_read_cycle: f64,
    pub e_compute_cycle: f64,
    pub e_store_cycle: f64,
    pub e_parity_switch: f64,
    pub e_ifspad_write: f64,
    pub e_ifspad_read: f64,
    pub e_fifo_op: f64,
    pub e_xfer_word: f64,
    pub e_neuron_cycle: f64,
    pub e_leakage_per_cycle: f64,
    pub op_count_scale: f64,
    pub v_ref: f64,
    pub f_ref_mhz: f64,
}

/// Default ratio of one even/odd peripheral reconfiguration to one
/// read+compute+store accumulation.
pub const DEFAULT_SWITCH_RATIO: f64 = 5.0 / 9.0;

impl Default for EnergyParams {
    fn default() -> Self {
        let e_read = 1.0;
        let e_compute = 0.6;
        let e_store = 0.8;
        EnergyParams {
            e_read_cycle: e_read,
            e_compute_cycle: e_compute,
            e_store_cycle: e_store,
            e_parity_switch: DEFAULT_SWITCH_RATIO * (e_read + e_compute + e_store),
            e_ifspad_write: 0.12,
            e_ifspad_read: 0.10,
            e_fifo_op: 0.04,
            e_xfer_word: 0.25,
            e_neuron_cycle: 2.4,
            e_leakage_per_cycle: 0.0,
            op_count_scale: 1.0,
            v_ref: 0.9,
            f_ref_mhz: 50.0,
        }
    }
}

impl EnergyParams {
    /// Energy of one accumulation (read + compute + store).
    pub fn e_base(&self) -> f64 {
        self.e_read_cycle + self.e_compute_cycle + self.e_store_cycle
    }

    pub fn switch_ratio(&self) -> f64 {
        self.e_parity_switch / self.e_base()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [
            ("e_read_cycle", self.e_read_cycle),
            ("e_compute_cycle", self.e_compute_cycle),
            ("e_store_cycle", self.e_store_cycle),
            ("e_parity_switch", self.e_parity_switch),
            ("e_ifspad_write", self.e_ifspad_write),
            ("e_ifspad_read", self.e_ifspad_read),
            ("e_fifo_op", self.e_fifo_op),
            ("e_xfer_word", self.e_xfer_word),
            ("e_neuron_cycle", self.e_neuron_cycle),
            ("e_leakage_per_cycle", self.e_leakage_per_cycle),
            ("op_count_scale", self.op_count_scale),
        ];
        for (name, v) in all {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ConfigError::Validation(format!("{name} must be a finite value >= 0")));
            }
        }
        if !(self.v_ref > 0.0 && self.f_ref_mhz > 0.0) {
            return Err(ConfigError::Validation("v_ref and f_ref_mhz must be positive".into()));
        }
        Ok(())
    }

    /// Multiply every dynamic energy term by `k`.
    pub fn scale_dynamic(&mut self, k: f64) {
        self.e_read_cycle *= k;
        self.e_compute_cycle *= k;
        self.e_store_cycle *= k;
        self.e_parity_switch *= k;
        self.e_ifspad_write *= k;
        self.e_ifspad_read *= k;
        self.e_fifo_op *= k;
        self.e_xfer_word *= k;
        self.e_neuron_cycle *= k;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
    MaxPool,
}

/// One layer with its resolved input geometry.
///
/// A fully connected layer is stored as a convolution whose kernel covers the
/// whole input (`kernel_h = in_h`, `kernel_w = in_w`, no padding), so both share
/// the same channel-major fan-in ordering `c * R * S + r * S + s`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    /// Per-layer neuron override; `None` uses the network default.
    pub neuron: Option<NeuronSpec>,
}

impl LayerSpec {
    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_h: usize,
        in_w: usize,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            in_h,
            in_w,
            neuron: None,
        }
    }

    /// FC layer over a `(channels, h, w)` input volume.
    pub fn fc(in_channels: usize, in_h: usize, in_w: usize, out_features: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Fc,
            in_channels,
            out_channels: out_features,
            kernel_h: in_h,
            kernel_w: in_w,
            stride: 1,
            padding: 0,
            in_h,
            in_w,
            neuron: None,
        }
    }

    pub fn maxpool(channels: usize, window: usize, stride: usize, in_h: usize, in_w: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            in_channels: channels,
            out_channels: channels,
            kernel_h: window,
            kernel_w: window,
            stride,
            padding: 0,
            in_h,
            in_w,
            neuron: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::MaxPool => self.kernel_h * self.kernel_w,
            _ => self.in_channels * self.kernel_h * self.kernel_w,
        }
    }

    fn out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        let padded = input + 2 * padding;
        if stride == 0 || kernel == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    pub fn out_h(&self) -> usize {
        Self::out_dim(self.in_h, self.kernel_h, self.stride, self.padding).unwrap_or(0)
    }

    pub fn out_w(&self) -> usize {
        Self::out_dim(self.in_w, self.kernel_w, self.stride, self.padding).unwrap_or(0)
    }

    pub fn output_positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        (self.out_channels, self.out_h(), self.out_w())
    }

    pub fn is_host_layer(&self) -> bool {
        self.kind == LayerKind::MaxPool
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Validation(m));
        if self.in_channels == 0 || self.out_channels == 0 || self.in_h == 0 || self.in_w == 0 {
            return err(format!("{:?} layer has a zero dimension", self.kind));
        }
        if self.stride == 0 {
            return err("stride must be positive".into());
        }
        if Self::out_dim(self.in_h, self.kernel_h, self.stride, self.padding).is_none()
            || Self::out_dim(self.in_w, self.kernel_w, self.stride, self.padding).is_none()
        {
            return err(format!(
                "kernel {}x{} does not fit input {}x{} with padding {}",
                self.kernel_h, self.kernel_w, self.in_h, self.in_w, self.padding
            ));
        }
        match self.kind {
            LayerKind::Conv => {
                if self.fan_in() == 0 {
                    return err("conv fan-in must be positive".into());
                }
            }
            LayerKind::Fc => {
                if self.kernel_h != self.in_h || self.kernel_w != self.in_w || self.padding != 0 {
                    return err("fc layers must cover the full input without padding".into());
                }
            }
            LayerKind::MaxPool => {
                if self.in_channels != self.out_channels {
                    return err("maxpool must preserve the channel count".into());
                }
                if self.padding != 0 {
                    return err("maxpool does not support padding".into());
                }
                if !(self.in_h - self.kernel_h).is_multiple_of(self.stride)
                    || !(self.in_w - self.kernel_w).is_multiple_of(self.stride)
                {
                    return err(format!(
                        "maxpool {}x{}/{} does not tile input {}x{}",
                        self.kernel_h, self.kernel_w, self.stride, self.in_h, self.in_w
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A validated network: ordered layers plus the global run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub timesteps: usize,
    pub precision: PrecisionMode,
    pub neuron: NeuronSpec,
    pub overflow: Overflow,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.layers.is_empty() {
            return Err(ConfigError::Validation("network has no layers".into()));
        }
        if self.timesteps == 0 {
            return Err(ConfigError::Validation("timesteps must be >= 1".into()));
        }
        self.neuron.validate(self.precision)?;
        let (mut c, mut h, mut w) = (self.input_channels, self.input_h, self.input_w);
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .validate()
                .map_err(|e| ConfigError::Validation(format!("layer {i}: {e}")))?;
            if (layer.in_channels, layer.in_h, layer.in_w) != (c, h, w) {
                return Err(ConfigError::Validation(format!(
                    "layer {i} expects input {}x{}x{} but receives {c}x{h}x{w}",
                    layer.in_channels, layer.in_h, layer.in_w
                )));
            }
            if let Some(n) = &layer.neuron {
                n.validate(self.precision)
                    .map_err(|e| ConfigError::Validation(format!("layer {i}: {e}")))?;
            }
            (c, h, w) = layer.output_shape();
        }
        Ok(())
    }

    pub fn neuron_for(&self, layer: usize) -> NeuronSpec {
        self.layers[layer].neuron.unwrap_or(self.neuron)
    }

    /// Indices of layers that carry weights (everything except pooling).
    pub fn weighted_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_host_layer())
            .map(|(i, _)| i)
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.layers
            .last()
            .map(|l| l.output_shape())
            .unwrap_or((self.input_channels, self.input_h, self.input_w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_pairs() {
        let p4 = PrecisionMode::new(4).unwrap();
        assert_eq!((p4.weight_bits(), p4.vmem_bits()), (4, 7));
        let p6 = PrecisionMode::new(6).unwrap();
        assert_eq!((p6.weight_bits(), p6.vmem_bits()), (6, 11));
        assert_eq!(PrecisionMode::new(8).unwrap().vmem_bits(), 15);
        assert_eq!(PrecisionMode::new(5), Err(ConfigError::UnsupportedPrecision(5)));
        assert!(PrecisionMode::new(0).is_err());
        assert!(PrecisionMode::new(16).is_err());
    }

    #[test]
    fn capacity_numbers() {
        assert_eq!(PrecisionMode::W4.neurons_per_macro(), 192);
        assert_eq!(PrecisionMode::W6.neurons_per_macro(), 128);
        assert_eq!(PrecisionMode::W8.neurons_per_macro(), 96);
        assert_eq!(PrecisionMode::W4.parallel_channels(Mode::Mode1), 36);
        assert_eq!(PrecisionMode::W8.parallel_channels(Mode::Mode2), 6);
        assert_eq!(PrecisionMode::W6.parallel_channels(Mode::Mode2), 8);
        for p in PrecisionMode::ALL {
            assert_eq!(p.neurons_per_macro() * p.weight_bits() as usize, 768);
            assert_eq!(
                p.parallel_channels(Mode::Mode1),
                3 * p.parallel_channels(Mode::Mode2)
            );
            assert_eq!(48 % p.weight_bits(), 0);
        }
    }

    #[test]
    fn neuron_validation() {
        let p = PrecisionMode::W4;
        assert!(NeuronSpec::if_neuron(63, Reset::Hard).validate(p).is_ok());
        assert!(NeuronSpec::if_neuron(64, Reset::Hard).validate(p).is_err());
        assert!(NeuronSpec::if_neuron(-64, Reset::Soft).validate(p).is_ok());
        assert!(NeuronSpec::lif_neuron(10, -1, Reset::Soft).validate(p).is_err());
        let bad_if = NeuronSpec {
            leak: 2,
            ..NeuronSpec::if_neuron(5, Reset::Hard)
        };
        assert!(bad_if.validate(p).is_err());
    }

    #[test]
    fn layer_geometry() {
        let l = LayerSpec::conv(2, 32, 3, 1, 0, 64, 64);
        assert_eq!((l.out_h(), l.out_w()), (62, 62));
        assert_eq!(l.fan_in(), 18);
        let fc = LayerSpec::fc(16, 2, 2, 11);
        assert_eq!(fc.fan_in(), 64);
        assert_eq!(fc.output_shape(), (11, 1, 1));
        let pool = LayerSpec::maxpool(4, 2, 2, 5, 4);
        assert!(pool.validate().is_err());
        let too_big = LayerSpec::conv(1, 1, 5, 1, 0, 3, 3);
        assert!(too_big.validate().is_err());
    }

    #[test]
    fn default_energy_switch_ratio() {
        let e = EnergyParams::default();
        assert!((e.switch_ratio() - 5.0 / 9.0).abs() < 1e-12);
        assert!(e.validate().is_ok());
    }
}
