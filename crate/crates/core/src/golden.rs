//! Integer reference executor for spiking Conv / FC / MaxPool layers.
//!
//! This is the functional oracle for the cycle simulator: it knows nothing
//! about macros, IFspads or FIFOs and simply walks every receptive field in
//! canonical fan-in order (`c * R * S + r * S + s`). Summation is sequential in
//! that order so saturating arithmetic gives the same answer as the chained
//! compute units.

use serde::{Deserialize, Serialize};

use crate::arch::{LayerKind, LayerSpec, NetworkSpec, NeuronSpec, PrecisionMode, Reset};
use crate::fixed::{self, Overflow};
use crate::tensor::{ShapeError, SpikeMap, SpikeTensor, VmemTensor, WeightTensor};

pub(crate) fn check_weights(layer: &LayerSpec, w: &WeightTensor) -> Result<(), ShapeError> {
    let expected: Vec<usize> = match layer.kind {
        LayerKind::Conv => vec![layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w],
        LayerKind::Fc => vec![layer.out_channels, layer.fan_in()],
        LayerKind::MaxPool => {
            return Err(ShapeError::Mismatch("maxpool layers carry no weights".into()))
        }
    };
    if w.dims() != expected.as_slice() {
        return Err(ShapeError::Mismatch(format!(
            "weights {:?} do not match layer {:?}",
            w.dims(),
            expected
        )));
    }
    Ok(())
}

/// Input coordinates feeding fan-in index `f` of output position `(oy, ox)`,
/// or `None` when that tap lands in the zero padding.
pub fn receptive_input(
    layer: &LayerSpec,
    oy: usize,
    ox: usize,
    f: usize,
) -> Option<(usize, usize, usize)> {
    let rs = layer.kernel_h * layer.kernel_w;
    let c = f / rs;
    let r = (f % rs) / layer.kernel_w;
    let s = f % layer.kernel_w;
    let iy = (oy * layer.stride + r) as isize - layer.padding as isize;
    let ix = (ox * layer.stride + s) as isize - layer.padding as isize;
    if iy < 0 || ix < 0 || iy as usize >= layer.in_h || ix as usize >= layer.in_w {
        return None;
    }
    Some((c, iy as usize, ix as usize))
}

/// Weighted sum of binary inputs for every output neuron of one timestep.
pub fn conv_accumulate(
    spikes: &SpikeMap,
    weights: &WeightTensor,
    layer: &LayerSpec,
    p: PrecisionMode,
    overflow: Overflow,
) -> Result<VmemTensor, ShapeError> {
    if spikes.shape() != (layer.in_channels, layer.in_h, layer.in_w) {
        return Err(ShapeError::Mismatch(format!(
            "input {:?} does not match layer input {:?}",
            spikes.shape(),
            (layer.in_channels, layer.in_h, layer.in_w)
        )));
    }
    check_weights(layer, weights)?;
    weights.check_precision(p)?;
    let bits = p.vmem_bits();
    let (k_out, h_out, w_out) = layer.output_shape();
    let fan_in = layer.fan_in();
    let mut out = VmemTensor::zeros(k_out, h_out, w_out);
    for k in 0..k_out {
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut acc = 0i32;
                for f in 0..fan_in {
                    if let Some((c, iy, ix)) = receptive_input(layer, oy, ox, f) {
                        if spikes.get(c, iy, ix) {
                            acc = fixed::add(acc, weights.at(k, f), bits, overflow);
                        }
                    }
                }
                out.set(k, oy, ox, acc);
            }
        }
    }
    Ok(out)
}

/// Single-neuron update. Returns `(spiked, new_vmem)`.
///
/// `v' = v + input - leak`, spike when `v' >= threshold`, then hard reset to
/// zero or soft reset by subtracting the threshold.
pub fn neuron_step(v: i32, input: i32, n: &NeuronSpec, bits: u32, overflow: Overflow) -> (bool, i32) {
    let integrated = fixed::add(v, input, bits, overflow);
    let leaked = fixed::sub(integrated, n.effective_leak(), bits, overflow);
    if leaked >= n.threshold {
        let reset = match n.reset {
            Reset::Hard => 0,
            Reset::Soft => fixed::sub(leaked, n.threshold, bits, overflow),
        };
        (true, reset)
    } else {
        (false, leaked)
    }
}

/// Apply [`neuron_step`] elementwise; `vmem` is updated in place.
pub fn neuron_update(
    vmem: &mut VmemTensor,
    input: &VmemTensor,
    n: &NeuronSpec,
    p: PrecisionMode,
    overflow: Overflow,
) -> Result<SpikeMap, ShapeError> {
    if vmem.shape() != input.shape() {
        return Err(ShapeError::Mismatch(format!(
            "vmem {:?} vs input {:?}",
            vmem.shape(),
            input.shape()
        )));
    }
    let (k, h, w) = vmem.shape();
    let mut spikes = SpikeMap::zeros(k, h, w);
    let bits = p.vmem_bits();
    for (i, (v, x)) in vmem.values_mut().iter_mut().zip(input.values()).enumerate() {
        let (fired, next) = neuron_step(*v, *x, n, bits, overflow);
        *v = next;
        if fired {
            spikes.set_flat(i, true);
        }
    }
    Ok(spikes)
}

/// Max (logical OR) over square windows.
pub fn maxpool(spikes: &SpikeMap, window: usize, stride: usize) -> Result<SpikeMap, ShapeError> {
    let (c, h, w) = spikes.shape();
    if window == 0 || stride == 0 || h < window || w < window {
        return Err(ShapeError::Mismatch(format!(
            "maxpool {window}/{stride} on {h}x{w}"
        )));
    }
    if !(h - window).is_multiple_of(stride) || !(w - window).is_multiple_of(stride) {
        return Err(ShapeError::Mismatch(format!(
            "maxpool {window}/{stride} does not tile {h}x{w}"
        )));
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    Ok(SpikeMap::from_fn(c, oh, ow, |ch, oy, ox| {
        (0..window).any(|dy| (0..window).any(|dx| spikes.get(ch, oy * stride + dy, ox * stride + dx)))
    }))
}

/// Result of running a whole network on the reference model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenRun {
    /// Output spikes of every layer (pooling layers included).
    pub layer_spikes: Vec<SpikeTensor>,
    /// Vmem after the last timestep; `None` for pooling layers.
    pub final_vmems: Vec<Option<VmemTensor>>,
    /// Input sparsity of every layer at every timestep.
    pub input_sparsity: Vec<Vec<f64>>,
}

impl GoldenRun {
    pub fn output(&self) -> &SpikeTensor {
        self.layer_spikes.last().expect("network has at least one layer")
    }
}

/// Run one layer over all timesteps, keeping Vmem across timesteps.
pub fn run_layer(
    layer: &LayerSpec,
    weights: Option<&WeightTensor>,
    input: &SpikeTensor,
    neuron: &NeuronSpec,
    p: PrecisionMode,
    overflow: Overflow,
) -> Result<(SpikeTensor, Option<VmemTensor>), ShapeError> {
    let mut frames = Vec::with_capacity(input.timesteps());
    if layer.kind == LayerKind::MaxPool {
        for f in input.frames() {
            frames.push(maxpool(f, layer.kernel_h, layer.stride)?);
        }
        return Ok((SpikeTensor::from_frames(frames)?, None));
    }
    let weights = weights.ok_or_else(|| ShapeError::Mismatch("missing weights".into()))?;
    let (k, h, w) = layer.output_shape();
    let mut vmem = VmemTensor::zeros(k, h, w);
    for f in input.frames() {
        let frame = if layer.kind == LayerKind::Fc {
            f.reshaped(layer.in_channels, layer.in_h, layer.in_w)?
        } else {
            f.clone()
        };
        let drive = conv_accumulate(&frame, weights, layer, p, overflow)?;
        frames.push(neuron_update(&mut vmem, &drive, neuron, p, overflow)?);
    }
    Ok((SpikeTensor::from_frames(frames)?, Some(vmem)))
}

/// Execute `net` for `net.timesteps` steps. `weights` holds one tensor per
/// non-pooling layer, in order.
pub fn run_network(
    net: &NetworkSpec,
    weights: &[WeightTensor],
    input: &SpikeTensor,
) -> Result<GoldenRun, ShapeError> {
    let weighted = net.weighted_layers().count();
    if weights.len() != weighted {
        return Err(ShapeError::Mismatch(format!(
            "{} weight tensors for {weighted} weighted layers",
            weights.len()
        )));
    }
    if input.dims() != (net.timesteps, net.input_channels, net.input_h, net.input_w) {
        return Err(ShapeError::Mismatch(format!(
            "input {:?} does not match network input {:?}",
            input.dims(),
            (net.timesteps, net.input_channels, net.input_h, net.input_w)
        )));
    }
    let mut run = GoldenRun {
        layer_spikes: Vec::new(),
        final_vmems: Vec::new(),
        input_sparsity: Vec::new(),
    };
    let mut current = input.clone();
    let mut w_iter = weights.iter();
    for (i, layer) in net.layers.iter().enumerate() {
        run.input_sparsity
            .push(current.frames().iter().map(SpikeMap::sparsity).collect());
        let w = if layer.is_host_layer() { None } else { w_iter.next() };
        let (spikes, vmem) =
            run_layer(layer, w, &current, &net.neuron_for(i), net.precision, net.overflow)?;
        run.layer_spikes.push(spikes.clone());
        run.final_vmems.push(vmem);
        current = spikes;
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::NeuronModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P: PrecisionMode = PrecisionMode::W4;

    #[test]
    fn zero_spikes_zero_vmem() {
        let layer = LayerSpec::conv(2, 3, 3, 1, 1, 5, 5);
        let w = WeightTensor::new(vec![3, 2, 3, 3], vec![5; 54]).unwrap();
        let v = conv_accumulate(&SpikeMap::zeros(2, 5, 5), &w, &layer, P, Overflow::Wrap).unwrap();
        assert!(v.values().iter().all(|&x| x == 0));
    }

    #[test]
    fn single_spike_one_by_one_kernel() {
        let layer = LayerSpec::conv(1, 1, 1, 1, 0, 3, 3);
        let w = WeightTensor::new(vec![1, 1, 1, 1], vec![3]).unwrap();
        let mut s = SpikeMap::zeros(1, 3, 3);
        s.set(0, 1, 1, true);
        let v = conv_accumulate(&s, &w, &layer, P, Overflow::Wrap).unwrap();
        assert_eq!(v.get(0, 1, 1), 3);
        assert_eq!(v.values().iter().filter(|&&x| x != 0).count(), 1);
    }

    // Independent oracle: plain nested loops over the padded input, summing
    // in i64 and wrapping once at the end (wraparound addition is associative).
    fn naive_conv(s: &SpikeMap, w: &[i32], k: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Vec<i32> {
        let (c, h, wd) = s.shape();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Vec::new();
        for ko in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut sum = 0i64;
                    for ci in 0..c {
                        for r in 0..kh {
                            for sx in 0..kw {
                                let y = (oy * stride + r) as i64 - pad as i64;
                                let x = (ox * stride + sx) as i64 - pad as i64;
                                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < wd
                                    && s.get(ci, y as usize, x as usize)
                                {
                                    sum += w[((ko * c + ci) * kh + r) * kw + sx] as i64;
                                }
                            }
                        }
                    }
                    out.push(fixed::wrap(sum, P.vmem_bits()));
                }
            }
        }
        out
    }

    #[test]
    fn random_conv_matches_naive_loops_seed_7() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = SpikeMap::from_fn(2, 4, 4, |_, _, _| rng.gen_bool(0.5));
        let wv: Vec<i32> = (0..3 * 2 * 9).map(|_| rng.gen_range(-8..=7)).collect();
        let w = WeightTensor::new(vec![3, 2, 3, 3], wv.clone()).unwrap();
        for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
            let layer = LayerSpec::conv(2, 3, 3, stride, pad, 4, 4);
            let got = conv_accumulate(&s, &w, &layer, P, Overflow::Wrap).unwrap();
            assert_eq!(got.values(), naive_conv(&s, &wv, 3, 3, 3, stride, pad).as_slice());
        }
    }

    #[test]
    fn neuron_examples() {
        let hard = NeuronSpec::if_neuron(12, Reset::Hard);
        assert_eq!(neuron_step(10, 5, &hard, 7, Overflow::Wrap), (true, 0));
        let soft = NeuronSpec::if_neuron(12, Reset::Soft);
        assert_eq!(neuron_step(10, 5, &soft, 7, Overflow::Wrap), (true, 3));
        let lif = NeuronSpec::lif_neuron(20, 1, Reset::Hard);
        assert_eq!(neuron_step(10, 5, &lif, 7, Overflow::Wrap), (false, 14));
        assert_eq!(lif.model, NeuronModel::Lif);
    }

    #[test]
    fn maxpool_windows() {
        let mut s = SpikeMap::zeros(1, 2, 2);
        s.set(0, 0, 0, true);
        assert!(maxpool(&s, 2, 2).unwrap().get(0, 0, 0));
        assert!(!maxpool(&SpikeMap::zeros(1, 2, 2), 2, 2).unwrap().get(0, 0, 0));
        assert!(maxpool(&SpikeMap::zeros(1, 3, 3), 2, 2).is_err());
    }

    #[test]
    fn maxpool_random_seed_3_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SpikeMap::from_fn(1, 4, 4, |_, _, _| rng.gen_bool(0.3));
        let got = maxpool(&s, 2, 2).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut m = 0u8;
                for y in 2 * oy..2 * oy + 2 {
                    for x in 2 * ox..2 * ox + 2 {
                        m = m.max(s.get(0, y, x) as u8);
                    }
                }
                assert_eq!(got.get(0, oy, ox), m == 1);
            }
        }
    }

    #[test]
    fn mismatched_input_is_rejected() {
        let layer = LayerSpec::conv(2, 1, 3, 1, 1, 4, 4);
        let w = WeightTensor::new(vec![1, 2, 3, 3], vec![0; 18]).unwrap();
        assert!(conv_accumulate(&SpikeMap::zeros(1, 4, 4), &w, &layer, P, Overflow::Wrap).is_err());
        let bad = WeightTensor::new(vec![1, 2, 2, 2], vec![0; 8]).unwrap();
        assert!(conv_accumulate(&SpikeMap::zeros(2, 4, 4), &bad, &layer, P, Overflow::Wrap).is_err());
    }
}
