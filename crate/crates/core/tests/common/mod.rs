//! Oracles shared by the integration tests.

use std::collections::HashMap;

use cimsnn::arch::LayerSpec;
use cimsnn::tensor::SpikeMap;

/// Latest finishing time over an explicit dependence graph of one chain.
/// Node `(u, t, 0)` is the start of timestep `t` on unit `u`, `(u, t, 1)` the
/// moment its result leaves; the sink node collects arrivals.
pub fn dag_makespan(delays: &[Vec<u64>], xfer: u64) -> u64 {
    let n = delays.len();
    let steps = delays.first().map_or(0, Vec::len);
    if n == 0 || steps == 0 {
        return 0;
    }
    type Node = (usize, usize, usize);
    let mut edges: HashMap<Node, Vec<(Node, u64)>> = HashMap::new();
    let mut indeg: HashMap<Node, usize> = HashMap::new();
    let sink = (usize::MAX, 0, 0);
    let mut add = |a: Node, b: Node, w: u64| {
        edges.entry(a).or_default().push((b, w));
        *indeg.entry(b).or_default() += 1;
        indeg.entry(a).or_default();
    };
    for u in 0..n {
        for t in 0..steps {
            let start = (u, t, 0);
            let depart = (u, t, 1);
            add(start, depart, delays[u][t]);
            if t > 0 {
                // the unit is free once it handed off the previous timestep
                add((u, t - 1, 1), start, 0);
            }
            if u > 0 {
                add((u - 1, t, 1), start, xfer);
            }
            if u + 1 < n && t > 0 {
                // one-entry link: the previous block must have been consumed
                add((u + 1, t - 1, 0), depart, 0);
            }
            if u + 1 == n {
                add(depart, sink, xfer);
            }
        }
    }
    let mut dist: HashMap<Node, u64> = indeg.keys().map(|&k| (k, 0)).collect();
    let mut ready: Vec<Node> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&k, _)| k).collect();
    let mut seen = 0;
    while let Some(a) = ready.pop() {
        seen += 1;
        for &(b, w) in edges.get(&a).map(Vec::as_slice).unwrap_or(&[]) {
            let cand = dist[&a] + w;
            let d = dist.get_mut(&b).unwrap();
            *d = (*d).max(cand);
            let k = indeg.get_mut(&b).unwrap();
            *k -= 1;
            if *k == 0 {
                ready.push(b);
            }
        }
    }
    assert_eq!(seen, indeg.len(), "dependence graph has a cycle");
    dist[&sink]
}

/// Explicitly zero-padded input, then plain strided windows.
pub fn im2col_oracle(input: &SpikeMap, layer: &LayerSpec, positions: &[(usize, usize)], rows: std::ops::Range<usize>) -> Vec<Vec<bool>> {
    let (c, h, w) = (layer.in_channels, layer.in_h, layer.in_w);
    let pad = layer.padding;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![false; c * ph * pw];
    let flat = if input.shape() == (c, h, w) { input.clone() } else { input.reshaped(c, h, w).unwrap() };
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                padded[(ci * ph + y + pad) * pw + x + pad] = flat.get(ci, y, x);
            }
        }
    }
    let (kh, kw) = (layer.kernel_h, layer.kernel_w);
    rows.map(|f| {
        let (ci, r, s) = (f / (kh * kw), f / kw % kh, f % kw);
        positions
            .iter()
            .map(|&(oy, ox)| padded[(ci * ph + oy * layer.stride + r) * pw + ox * layer.stride + s])
            .collect()
    })
    .collect()
}
