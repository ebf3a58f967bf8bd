//! Synthetic spike inputs, random weights and the fixed reference layer used
//! for calibration and sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{
    LayerKind, LayerSpec, Mode, NetworkSpec, NeuronModel, NeuronSpec, PrecisionMode, Reset,
};
use crate::fixed::Overflow;
use crate::tensor::{SpikeTensor, WeightTensor};

pub const REFERENCE_CHANNELS: usize = 384;
pub const REFERENCE_HW: usize = 4;
pub const REFERENCE_TIMESTEPS: usize = 8;
pub const REFERENCE_SEED: u64 = 2024;

/// I.i.d. Bernoulli(1 - sparsity) spikes, filled in flat `(T, C, H, W)` order.
pub fn gen_spikes(dims: (usize, usize, usize, usize), sparsity: f64, seed: u64) -> SpikeTensor {
    assert!((0.0..=1.0).contains(&sparsity), "sparsity must lie in [0, 1]");
    let (t, c, h, w) = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SpikeTensor::zeros(t, c, h, w);
    let p = 1.0 - sparsity;
    for i in 0..out.len() {
        if rng.gen_bool(p) {
            out.set_flat(i, true);
        }
    }
    out
}

pub fn weight_dims(layer: &LayerSpec) -> Vec<usize> {
    match layer.kind {
        LayerKind::Fc => vec![layer.out_channels, layer.fan_in()],
        _ => vec![layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w],
    }
}

/// Weights drawn uniformly from the full range of the precision.
pub fn random_weights(layer: &LayerSpec, p: PrecisionMode, rng: &mut impl Rng) -> WeightTensor {
    let dims = weight_dims(layer);
    let n = dims.iter().product();
    let values = (0..n).map(|_| rng.gen_range(p.weight_min()..=p.weight_max())).collect();
    WeightTensor::new(dims, values).expect("dims and values agree")
}

/// One tensor per weighted layer, in layer order.
pub fn random_network_weights(net: &NetworkSpec, seed: u64) -> Vec<WeightTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    net.layers
        .iter()
        .filter(|l| !l.is_host_layer())
        .map(|l| random_weights(l, net.precision, &mut rng))
        .collect()
}

/// 1x1 convolution over 384 channels at 4x4: one tile that fills all nine
/// compute macros (128 rows each) and every weight field in Mode 1. The
/// spike pattern does not depend on the precision, so cycle counts match
/// across precisions.
pub fn reference_layer(p: PrecisionMode) -> LayerSpec {
    LayerSpec::conv(
        REFERENCE_CHANNELS,
        p.parallel_channels(Mode::Mode1),
        1,
        1,
        0,
        REFERENCE_HW,
        REFERENCE_HW,
    )
}

pub fn reference_input(sparsity: f64, seed: u64) -> SpikeTensor {
    gen_spikes(
        (REFERENCE_TIMESTEPS, REFERENCE_CHANNELS, REFERENCE_HW, REFERENCE_HW),
        sparsity,
        seed,
    )
}

/// Neuron used on the reference layer. A threshold above the reachable
/// range keeps the output silent so the workload stays fixed.
pub fn reference_neuron(p: PrecisionMode) -> NeuronSpec {
    NeuronSpec::if_neuron(p.vmem_max(), Reset::Soft)
}

/// Small random network: up to three layers, spatial dims up to 16 and up
/// to five timesteps.
pub fn random_network(
    seed: u64,
    p: PrecisionMode,
    model: NeuronModel,
    reset: Reset,
    overflow: Overflow,
) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let timesteps = rng.gen_range(1..=5);
    let input_channels = rng.gen_range(1..=4);
    let input_h = rng.gen_range(3..=16);
    let input_w = rng.gen_range(3..=16);
    let n_layers = rng.gen_range(1..=3);
    let mut layers = Vec::new();
    let (mut c, mut h, mut w) = (input_channels, input_h, input_w);
    for i in 0..n_layers {
        let last = i + 1 == n_layers;
        let roll: f64 = rng.gen();
        let layer = if i > 0 && h >= 2 && w >= 2 && h % 2 == 0 && w % 2 == 0 && roll < 0.2 {
            LayerSpec::maxpool(c, 2, 2, h, w)
        } else if last && roll < 0.5 {
            LayerSpec::fc(c, h, w, rng.gen_range(1..=20))
        } else {
            let k = rng.gen_range(1..=3.min(h).min(w));
            let stride = rng.gen_range(1..=2);
            let padding = rng.gen_range(0..k);
            LayerSpec::conv(c, rng.gen_range(1..=48), k, stride, padding, h, w)
        };
        if layer.kind == LayerKind::Fc && layer.fan_in() > crate::mapper::MODE2_CAPACITY {
            layers.push(LayerSpec::conv(c, rng.gen_range(1..=8), 1, 1, 0, h, w));
        } else {
            layers.push(layer);
        }
        let l = layers.last().unwrap();
        (c, h, w) = l.output_shape();
    }
    // Thresholds sit near the typical drive so that every layer both fires
    // and stays quiet somewhere.
    let threshold = rng.gen_range(1..=(2 * p.weight_max()).min(p.vmem_max()));
    let leak = match model {
        NeuronModel::If => 0,
        NeuronModel::Lif => rng.gen_range(0..=p.weight_max() / 2),
    };
    NetworkSpec {
        input_channels,
        input_h,
        input_w,
        timesteps,
        precision: p,
        neuron: NeuronSpec {
            model,
            reset,
            threshold,
            leak,
        },
        overflow,
        layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spike_generation_extremes() {
        assert_eq!(gen_spikes((2, 3, 4, 5), 1.0, 9).count_ones(), 0);
        assert_eq!(gen_spikes((2, 3, 4, 5), 0.0, 9).count_ones(), 120);
        assert_eq!(gen_spikes((2, 3, 4, 5), 0.5, 9), gen_spikes((2, 3, 4, 5), 0.5, 9));
    }

    #[test]
    fn spike_density_binomial() {
        // 10^6 draws at p = 0.05: sigma = 2.2e-4, so +-0.001 is about 4.6 sigma
        let s = gen_spikes((1, 1, 1000, 1000), 0.95, 42);
        let frac = s.count_ones() as f64 / 1e6;
        assert!((frac - 0.05).abs() <= 0.001, "{frac}");
    }

    #[test]
    fn reference_shapes() {
        for p in PrecisionMode::ALL {
            let l = reference_layer(p);
            assert_eq!(l.fan_in(), 384);
            assert_eq!(l.out_channels, 3 * p.fields_per_row());
            assert_eq!(l.output_positions(), 16);
        }
    }

    #[test]
    fn random_networks_validate() {
        for seed in 0..200 {
            for p in PrecisionMode::ALL {
                let net = random_network(seed, p, NeuronModel::Lif, Reset::Soft, Overflow::Wrap);
                net.validate().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
                assert!(net.layers.len() <= 3 && net.timesteps <= 5);
                assert!(net.input_h <= 16 && net.input_w <= 16);
            }
        }
    }
}
