#!/usr/bin/env python3
"""Independent reference for a two-layer toy network.

Writes toy_net.json next to this script: the network description, input
spikes, weights and the expected spikes of every layer. Plain Python ints,
wraparound at the Vmem width after every addition.

    python3 toy_net.py
"""
import json
import os
import random

SEED = 11
T, C, H, W = 3, 2, 6, 6
WB = 4
VB = 2 * WB - 1
THRESHOLD, LEAK = 5, 1

NET = """precision = 4
timesteps = 3

[input]
channels = 2
h = 6
w = 6

[neuron]
model = "lif"
reset = "soft"
threshold = 5
leak = 1

[[layer]]
type = "conv"
out_channels = 4
kernel = 3
stride = 1
padding = 1

[[layer]]
type = "fc"
out_features = 5
"""


def wrap(v):
    v &= (1 << VB) - 1
    return v - (1 << VB) if v >> (VB - 1) else v


def conv(x, w, cin, h, wd, cout, k, stride, pad):
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = [[[0] * ow for _ in range(oh)] for _ in range(cout)]
    for o in range(cout):
        for oy in range(oh):
            for ox in range(ow):
                acc = 0
                for c in range(cin):
                    for r in range(k):
                        for s in range(k):
                            iy, ix = oy * stride + r - pad, ox * stride + s - pad
                            if 0 <= iy < h and 0 <= ix < wd and x[c][iy][ix]:
                                acc = wrap(acc + w[o][c][r][s])
                out[o][oy][ox] = acc
    return out


def lif(vmem, drive):
    spikes = []
    for i, d in enumerate(drive):
        v = wrap(wrap(vmem[i] + d) - LEAK)
        if v >= THRESHOLD:
            spikes.append(1)
            v = wrap(v - THRESHOLD)
        else:
            spikes.append(0)
        vmem[i] = v
    return spikes


def flat(t):
    if isinstance(t, list):
        return [v for e in t for v in flat(e)]
    return [t]


def main():
    rng = random.Random(SEED)
    x = [[[[int(rng.random() < 0.4) for _ in range(W)] for _ in range(H)] for _ in range(C)] for _ in range(T)]
    lo, hi = -(1 << (WB - 1)), (1 << (WB - 1)) - 1
    w1 = [[[[rng.randint(lo, hi) for _ in range(3)] for _ in range(3)] for _ in range(C)] for _ in range(4)]
    w2 = [[rng.randint(lo, hi) for _ in range(4 * H * W)] for _ in range(5)]

    v1, v2 = [0] * (4 * H * W), [0] * 5
    out1, out2 = [], []
    for t in range(T):
        s1 = lif(v1, flat(conv(x[t], w1, C, H, W, 4, 3, 1, 1)))
        drive2 = []
        for o in range(5):
            acc = 0
            for f, bit in enumerate(s1):
                if bit:
                    acc = wrap(acc + w2[o][f])
            drive2.append(acc)
        out1.append(s1)
        out2.append(lif(v2, drive2))

    doc = {
        "seed": SEED,
        "network": NET,
        "input": flat(x),
        "weights": [{"dims": [4, C, 3, 3], "values": flat(w1)}, {"dims": [5, 4 * H * W], "values": flat(w2)}],
        "layer_spikes": [flat(out1), flat(out2)],
    }
    path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "toy_net.json")
    with open(path, "w") as f:
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")


if __name__ == "__main__":
    main()
