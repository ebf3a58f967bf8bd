//! Layer to core mapping: mode choice, row balancing and tiling.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    ArchParams, ConfigError, LayerKind, LayerSpec, Mode, NetworkSpec, PrecisionMode, IFSPAD_COLS,
    MODE1_CHAIN_LEN, WEIGHT_ROWS,
};

pub const MODE1_CAPACITY: usize = WEIGHT_ROWS * MODE1_CHAIN_LEN;
pub const MODE2_CAPACITY: usize = WEIGHT_ROWS * 9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error(
        "{}fan-in {fan_in} exceeds core capacity {MODE2_CAPACITY}; split the input channels \
         into groups of at most {MODE2_CAPACITY} fan-in each",
        layer.map(|l| format!("layer {l}: ")).unwrap_or_default()
    )]
    FanInExceedsCapacity { fan_in: usize, layer: Option<usize> },
    #[error("layer is not mapped onto the core: {0}")]
    HostLayer(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub fn select_mode(fan_in: usize) -> Result<Mode, MapError> {
    match fan_in {
        0 => Err(MapError::Config(ConfigError::Validation("fan-in must be positive".into()))),
        f if f <= MODE1_CAPACITY => Ok(Mode::Mode1),
        f if f <= MODE2_CAPACITY => Ok(Mode::Mode2),
        f => Err(MapError::FanInExceedsCapacity {
            fan_in: f,
            layer: None,
        }),
    }
}

/// Balanced split of `fan_in` rows over `n_macros`, larger shares first.
/// Slices are contiguous in channel-major fan-in order, so whole channels
/// stay together whenever the balance allows it.
pub fn distribute_rows(fan_in: usize, n_macros: usize) -> Vec<usize> {
    let base = fan_in / n_macros;
    let extra = fan_in % n_macros;
    (0..n_macros).map(|i| base + usize::from(i < extra)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSchedule {
    pub mode: Mode,
    pub weight_bits: u32,
    pub fan_in: usize,
    pub chains: usize,
    pub cus_per_chain: usize,
    /// Output channels handled by one chain (one per weight field).
    pub channels_per_chain: usize,
    pub rows_per_macro: Vec<usize>,
    pub channel_groups: Vec<Vec<usize>>,
    pub position_groups: Vec<Vec<(usize, usize)>>,
    pub loop_order: Vec<String>,
}

/// One (channel group, position group) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub channel_group: usize,
    pub position_group: usize,
}

impl TileSchedule {
    pub fn precision(&self) -> PrecisionMode {
        PrecisionMode::new(self.weight_bits).expect("schedule built from a valid precision")
    }

    /// Fan-in rows of CU `k` within a chain.
    pub fn row_range(&self, k: usize) -> Range<usize> {
        let start: usize = self.rows_per_macro[..k].iter().sum();
        start..start + self.rows_per_macro[k]
    }

    /// Output channels of `chain` inside channel group `group`; may be empty.
    pub fn chain_channels(&self, group: usize, chain: usize) -> &[usize] {
        let g = &self.channel_groups[group];
        let lo = (chain * self.channels_per_chain).min(g.len());
        let hi = ((chain + 1) * self.channels_per_chain).min(g.len());
        &g[lo..hi]
    }

    pub fn tiles(&self) -> impl Iterator<Item = Tile> + '_ {
        (0..self.channel_groups.len()).flat_map(move |c| {
            (0..self.position_groups.len()).map(move |p| Tile {
                channel_group: c,
                position_group: p,
            })
        })
    }

    pub fn tile_count(&self) -> usize {
        self.channel_groups.len() * self.position_groups.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }
}

pub fn tile_layer(layer: &LayerSpec, p: PrecisionMode, arch: &ArchParams) -> Result<TileSchedule, MapError> {
    arch.validate()?;
    layer.validate()?;
    if layer.kind == LayerKind::MaxPool {
        return Err(MapError::HostLayer("maxpool runs between layers on the host".into()));
    }
    let fan_in = layer.fan_in();
    let mode = select_mode(fan_in)?;
    let (chains, cus_per_chain) = match mode {
        Mode::Mode1 => (arch.n_neuron_units, MODE1_CHAIN_LEN),
        Mode::Mode2 => (1, arch.n_compute_units),
    };
    let group_size = p.parallel_channels(mode);
    let channels: Vec<usize> = (0..layer.out_channels).collect();
    let channel_groups = channels.chunks(group_size).map(<[usize]>::to_vec).collect();
    let positions: Vec<(usize, usize)> = (0..layer.out_h())
        .flat_map(|y| (0..layer.out_w()).map(move |x| (y, x)))
        .collect();
    let per_group = if layer.kind == LayerKind::Fc { 1 } else { IFSPAD_COLS };
    let position_groups = positions.chunks(per_group).map(<[(usize, usize)]>::to_vec).collect();
    Ok(TileSchedule {
        mode,
        weight_bits: p.weight_bits(),
        fan_in,
        chains,
        cus_per_chain,
        channels_per_chain: p.fields_per_row(),
        rows_per_macro: distribute_rows(fan_in, cus_per_chain),
        channel_groups,
        position_groups,
        loop_order: vec!["channel_group".into(), "position_group".into(), "timestep".into()],
    })
}

/// Schedules for every layer; `None` for host (pooling) layers.
pub fn map_network(net: &NetworkSpec, arch: &ArchParams) -> Result<Vec<Option<TileSchedule>>, MapError> {
    net.layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            if layer.is_host_layer() {
                return Ok(None);
            }
            tile_layer(layer, net.precision, arch).map(Some).map_err(|e| match e {
                MapError::FanInExceedsCapacity { fan_in, .. } => MapError::FanInExceedsCapacity {
                    fan_in,
                    layer: Some(i),
                },
                other => other,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn mode_thresholds() {
        assert_eq!(select_mode(288), Ok(Mode::Mode1));
        assert_eq!(select_mode(384), Ok(Mode::Mode1));
        assert_eq!(select_mode(385), Ok(Mode::Mode2));
        assert_eq!(select_mode(576), Ok(Mode::Mode2));
        assert_eq!(select_mode(1152), Ok(Mode::Mode2));
        let err = select_mode(1200).unwrap_err();
        assert!(matches!(err, MapError::FanInExceedsCapacity { fan_in: 1200, .. }));
        assert!(err.to_string().contains("split"));
    }

    #[test]
    fn row_balance() {
        assert_eq!(distribute_rows(288, 3), vec![96, 96, 96]);
        assert_eq!(distribute_rows(100, 3), vec![34, 33, 33]);
        assert_eq!(distribute_rows(1152, 9), vec![128; 9]);
        assert_eq!(distribute_rows(2, 3), vec![1, 1, 0]);
    }

    #[test]
    fn first_gesture_layer() {
        let layer = LayerSpec::conv(2, 32, 3, 1, 0, 64, 64);
        let s = tile_layer(&layer, PrecisionMode::W4, &ArchParams::default()).unwrap();
        assert_eq!(s.mode, Mode::Mode1);
        assert_eq!(s.channel_groups.len(), 1);
        assert_eq!(s.position_groups.len(), 241);
        assert_eq!(s.chain_channels(0, 0), &(0..12).collect::<Vec<_>>()[..]);
        assert_eq!(s.chain_channels(0, 2), &(24..32).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn fc_and_eight_bit() {
        let fc = LayerSpec::fc(64, 1, 1, 11);
        let s = tile_layer(&fc, PrecisionMode::W4, &ArchParams::default()).unwrap();
        assert_eq!((s.mode, s.channel_groups.len(), s.position_groups.len()), (Mode::Mode1, 1, 1));
        assert!(s.chain_channels(0, 1).is_empty());

        let conv = LayerSpec::conv(32, 32, 3, 1, 1, 8, 8);
        let s = tile_layer(&conv, PrecisionMode::W8, &ArchParams::default()).unwrap();
        assert_eq!((s.mode, s.fan_in, s.channel_groups.len()), (Mode::Mode1, 288, 2));
    }

    #[test]
    fn mode2_single_chain() {
        let conv = LayerSpec::conv(64, 20, 3, 1, 1, 4, 4);
        let s = tile_layer(&conv, PrecisionMode::W6, &ArchParams::default()).unwrap();
        assert_eq!((s.mode, s.chains, s.cus_per_chain), (Mode::Mode2, 1, 9));
        assert_eq!(s.rows_per_macro.iter().sum::<usize>(), 576);
        assert_eq!(s.channel_groups.len(), 3);
        assert_eq!(s.row_range(8), 512..576);
    }

    #[test]
    fn coverage_is_exact() {
        let layer = LayerSpec::conv(3, 50, 3, 2, 1, 11, 9);
        let s = tile_layer(&layer, PrecisionMode::W4, &ArchParams::default()).unwrap();
        let mut seen = HashSet::new();
        for t in s.tiles() {
            for chain in 0..s.chains {
                for &k in s.chain_channels(t.channel_group, chain) {
                    for &(y, x) in &s.position_groups[t.position_group] {
                        assert!(seen.insert((k, y, x)));
                    }
                }
            }
        }
        assert_eq!(seen.len(), 50 * layer.output_positions());
    }

    #[test]
    fn network_errors_name_the_layer() {
        let mut net = crate::arch::parse_network(
            "precision = 4\ntimesteps = 1\n[input]\nchannels = 2\nh = 8\nw = 8\n\
             [neuron]\nmodel = \"if\"\nreset = \"hard\"\nthreshold = 4\n\
             [[layer]]\ntype = \"conv\"\nout_channels = 140\n\
             [[layer]]\ntype = \"conv\"\nout_channels = 4\n",
        )
        .unwrap();
        let err = map_network(&net, &ArchParams::default()).unwrap_err();
        assert_eq!(
            err,
            MapError::FanInExceedsCapacity {
                fan_in: 1260,
                layer: Some(1)
            }
        );
        assert!(err.to_string().starts_with("layer 1:"));
        net.layers.pop();
        assert_eq!(map_network(&net, &ArchParams::default()).unwrap().len(), 1);
    }
}
