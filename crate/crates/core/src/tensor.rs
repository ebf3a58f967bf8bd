//! Spike, weight and Vmem tensors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::PrecisionMode;
use crate::fixed;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error("shape mismatch: {0}")]
    Mismatch(String),
    #[error("value {value} out of range for {bits}-bit two's complement")]
    OutOfRange { value: i32, bits: u32 },
}

/// One timestep of binary spikes, `(C, H, W)` row-major and bit-packed.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpikeMap {
    channels: usize,
    height: usize,
    width: usize,
    words: Vec<u64>,
}

impl SpikeMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        let n = channels * height * width;
        SpikeMap {
            channels,
            height,
            width,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Self {
        let mut m = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    if f(c, y, x) {
                        m.set(c, y, x, true);
                    }
                }
            }
        }
        m
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn index(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        (c * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> bool {
        self.get_flat(self.index(c, y, x))
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: bool) {
        let i = self.index(c, y, x);
        self.set_flat(i, v);
    }

    pub fn get_flat(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set_flat(&mut self, i: usize, v: bool) {
        let mask = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Fraction of zero entries.
    pub fn sparsity(&self) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        1.0 - self.count_ones() as f64 / self.len() as f64
    }

    /// Same bits viewed as `(C * H * W, 1, 1)`.
    pub fn flattened(&self) -> SpikeMap {
        SpikeMap {
            channels: self.len(),
            height: 1,
            width: 1,
            words: self.words.clone(),
        }
    }

    pub fn reshaped(&self, channels: usize, height: usize, width: usize) -> Result<SpikeMap, ShapeError> {
        if channels * height * width != self.len() {
            return Err(ShapeError::Mismatch(format!(
                "cannot reshape {:?} to ({channels}, {height}, {width})",
                self.shape()
            )));
        }
        Ok(SpikeMap {
            channels,
            height,
            width,
            words: self.words.clone(),
        })
    }
}

impl std::fmt::Debug for SpikeMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "SpikeMap({}x{}x{}, {} set)",
            self.channels,
            self.height,
            self.width,
            self.count_ones()
        )
    }
}

/// A spike train over `T` timesteps.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpikeTensor {
    frames: Vec<SpikeMap>,
    shape: (usize, usize, usize),
}

impl SpikeTensor {
    pub fn zeros(timesteps: usize, channels: usize, height: usize, width: usize) -> Self {
        SpikeTensor {
            frames: vec![SpikeMap::zeros(channels, height, width); timesteps],
            shape: (channels, height, width),
        }
    }

    pub fn from_frames(frames: Vec<SpikeMap>) -> Result<Self, ShapeError> {
        let shape = frames
            .first()
            .map(|f| f.shape())
            .ok_or_else(|| ShapeError::Mismatch("spike tensor needs at least one timestep".into()))?;
        if frames.iter().any(|f| f.shape() != shape) {
            return Err(ShapeError::Mismatch("frames differ in shape".into()));
        }
        Ok(SpikeTensor { frames, shape })
    }

    pub fn timesteps(&self) -> usize {
        self.frames.len()
    }

    /// `(T, C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.frames.len(), self.shape.0, self.shape.1, self.shape.2)
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn frame(&self, t: usize) -> &SpikeMap {
        &self.frames[t]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut SpikeMap {
        &mut self.frames[t]
    }

    pub fn frames(&self) -> &[SpikeMap] {
        &self.frames
    }

    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> bool {
        self.frames[t].get(c, y, x)
    }

    pub fn set(&mut self, t: usize, c: usize, y: usize, x: usize, v: bool) {
        self.frames[t].set(c, y, x, v)
    }

    pub fn count_ones(&self) -> usize {
        self.frames.iter().map(SpikeMap::count_ones).sum()
    }

    pub fn len(&self) -> usize {
        self.frames.len() * self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sparsity(&self) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        1.0 - self.count_ones() as f64 / self.len() as f64
    }

    /// Bit at flat row-major `(T, C, H, W)` index.
    pub fn get_flat(&self, i: usize) -> bool {
        let per = self.shape.0 * self.shape.1 * self.shape.2;
        self.frames[i / per].get_flat(i % per)
    }

    pub fn set_flat(&mut self, i: usize, v: bool) {
        let per = self.shape.0 * self.shape.1 * self.shape.2;
        self.frames[i / per].set_flat(i % per, v)
    }
}

/// Signed weights, `(K, C, R, S)` for conv or `(out, in)` for FC.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightTensor {
    dims: Vec<usize>,
    values: Vec<i32>,
}

impl WeightTensor {
    pub fn new(dims: Vec<usize>, values: Vec<i32>) -> Result<Self, ShapeError> {
        let n: usize = dims.iter().product();
        if dims.is_empty() || n != values.len() {
            return Err(ShapeError::Mismatch(format!(
                "dims {dims:?} need {n} values, got {}",
                values.len()
            )));
        }
        Ok(WeightTensor { dims, values })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    /// Number of output neurons / channels (leading dimension).
    pub fn outputs(&self) -> usize {
        self.dims[0]
    }

    /// Elements per output: the fan-in.
    pub fn fan_in(&self) -> usize {
        self.values.len() / self.dims[0]
    }

    /// Weight of output `k` at canonical fan-in index `f`.
    pub fn at(&self, k: usize, f: usize) -> i32 {
        self.values[k * self.fan_in() + f]
    }

    pub fn check_precision(&self, p: PrecisionMode) -> Result<(), ShapeError> {
        let bits = p.weight_bits();
        match self.values.iter().find(|v| !fixed::in_range(**v as i64, bits)) {
            Some(&value) => Err(ShapeError::OutOfRange { value, bits }),
            None => Ok(()),
        }
    }
}

/// Membrane potentials for one layer, `(K, H_out, W_out)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VmemTensor {
    shape: (usize, usize, usize),
    values: Vec<i32>,
}

impl VmemTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        VmemTensor {
            shape: (channels, height, width),
            values: vec![0; channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn index(&self, k: usize, y: usize, x: usize) -> usize {
        (k * self.shape.1 + y) * self.shape.2 + x
    }

    pub fn get(&self, k: usize, y: usize, x: usize) -> i32 {
        self.values[self.index(k, y, x)]
    }

    pub fn set(&mut self, k: usize, y: usize, x: usize, v: i32) {
        let i = self.index(k, y, x);
        self.values[i] = v;
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [i32] {
        &mut self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spike_map_bits() {
        let mut m = SpikeMap::zeros(2, 3, 5);
        m.set(1, 2, 4, true);
        assert!(m.get(1, 2, 4));
        assert_eq!(m.count_ones(), 1);
        assert!((m.sparsity() - 29.0 / 30.0).abs() < 1e-12);
        let f = m.flattened();
        assert!(f.get(29, 0, 0));
        m.set(1, 2, 4, false);
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn weight_range_check() {
        let w = WeightTensor::new(vec![1, 2], vec![7, -8]).unwrap();
        assert!(w.check_precision(PrecisionMode::W4).is_ok());
        let w = WeightTensor::new(vec![1, 2], vec![8, 0]).unwrap();
        assert!(w.check_precision(PrecisionMode::W4).is_err());
        assert!(WeightTensor::new(vec![2, 2], vec![1]).is_err());
    }
}
