//! Input spike path: IFmem to IFspad loading with hardware im2col, the
//! trailing-zero spike detector and the even/odd ping-pong FIFO controller.

mod pingpong;
mod timing;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{LayerKind, LayerSpec, IFSPAD_COLS, IFSPAD_ROWS};
use crate::golden::receptive_input;
use crate::tensor::SpikeMap;

pub use pingpong::{pingpong_run, Action, PingPong, PingPongRun};
pub use timing::{
    datapath_cycles, write_trace_csv, DatapathConfig, DatapathEvent, DatapathRun, TraceAction,
    TraceUnit,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DatapathError {
    #[error("tile needs {rows} rows x {cols} columns, IFspad holds {IFSPAD_ROWS} x {IFSPAD_COLS}")]
    TileOverflow { rows: usize, cols: usize },
    #[error("fan-in slice {start}..{end} outside layer fan-in {fan_in}")]
    RowsOutOfRange { start: usize, end: usize, fan_in: usize },
    #[error("input frame {got:?} does not match layer input {expected:?}")]
    InputShape {
        got: (usize, usize, usize),
        expected: (usize, usize, usize),
    },
}

/// 128x16 input spike scratchpad. Bit `x` of `rows[y]` is the spike that
/// weight row `y` contributes to output position `x`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IfSpad {
    rows: Vec<u16>,
    used_rows: usize,
    used_cols: usize,
}

impl IfSpad {
    pub fn new(used_rows: usize, used_cols: usize) -> Result<Self, DatapathError> {
        if used_rows > IFSPAD_ROWS || used_cols > IFSPAD_COLS {
            return Err(DatapathError::TileOverflow {
                rows: used_rows,
                cols: used_cols,
            });
        }
        Ok(IfSpad {
            rows: vec![0; IFSPAD_ROWS],
            used_rows,
            used_cols,
        })
    }

    pub fn from_rows(rows: &[u16]) -> Result<Self, DatapathError> {
        let mut s = Self::new(rows.len(), IFSPAD_COLS)?;
        s.rows[..rows.len()].copy_from_slice(rows);
        Ok(s)
    }

    pub fn used_rows(&self) -> usize {
        self.used_rows
    }

    pub fn used_cols(&self) -> usize {
        self.used_cols
    }

    pub fn row(&self, y: usize) -> u16 {
        self.rows[y]
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        (self.rows[y] >> x) & 1 == 1
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        if v {
            self.rows[y] |= 1 << x;
        } else {
            self.rows[y] &= !(1 << x);
        }
    }

    pub fn count_ones(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones() as usize).sum()
    }
}

/// The slice of a layer one compute macro sees: up to 16 output positions
/// and a contiguous run of fan-in indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileWindow {
    pub layer: LayerSpec,
    pub positions: Vec<(usize, usize)>,
    pub rows: Range<usize>,
}

impl TileWindow {
    pub fn new(layer: LayerSpec, positions: Vec<(usize, usize)>, rows: Range<usize>) -> Self {
        TileWindow {
            layer,
            positions,
            rows,
        }
    }

    pub fn validate(&self) -> Result<(), DatapathError> {
        if self.rows.len() > IFSPAD_ROWS || self.positions.len() > IFSPAD_COLS {
            return Err(DatapathError::TileOverflow {
                rows: self.rows.len(),
                cols: self.positions.len(),
            });
        }
        let fan_in = self.layer.fan_in();
        if self.rows.end > fan_in || self.rows.start > self.rows.end {
            return Err(DatapathError::RowsOutOfRange {
                start: self.rows.start,
                end: self.rows.end,
                fan_in,
            });
        }
        Ok(())
    }
}

/// Populate the IFspad for `tile`. Column `x` receives the receptive field
/// of `tile.positions[x]`, restricted to the tile's fan-in rows; padding taps
/// read as 0. FC layers use a single column.
pub fn im2col_load(input: &SpikeMap, tile: &TileWindow) -> Result<IfSpad, DatapathError> {
    tile.validate()?;
    let layer = &tile.layer;
    let expected = (layer.in_channels, layer.in_h, layer.in_w);
    let frame;
    let input = if input.shape() == expected {
        input
    } else if layer.kind == LayerKind::Fc && input.len() == layer.fan_in() {
        frame = input
            .reshaped(expected.0, expected.1, expected.2)
            .expect("length checked");
        &frame
    } else {
        return Err(DatapathError::InputShape {
            got: input.shape(),
            expected,
        });
    };
    let mut spad = IfSpad::new(tile.rows.len(), tile.positions.len())?;
    for (y, f) in tile.rows.clone().enumerate() {
        for (x, &(oy, ox)) in tile.positions.iter().enumerate() {
            if let Some((c, iy, ix)) = receptive_input(layer, oy, ox, f) {
                if input.get(c, iy, ix) {
                    spad.set(y, x, true);
                }
            }
        }
    }
    Ok(spad)
}

/// Trailing-zero detector: set bit positions, LSB first.
pub fn detect_spikes(row: u16) -> Vec<usize> {
    let mut out = Vec::with_capacity(row.count_ones() as usize);
    let mut bits = row;
    while bits != 0 {
        out.push(bits.trailing_zeros() as usize);
        bits &= bits - 1;
    }
    out
}
