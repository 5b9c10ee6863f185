"""Naive scalar forward pass, written independently of the vectorised core.

Loops over every output pixel and channel in plain Python integers, so it
shares no arithmetic with the numpy implementation.
"""


def levels(bits):
    if bits == 1:
        return [-1, 1]
    m = 2 ** (bits - 1) - 1
    return list(range(-m, m + 1))


def activate(val, ths, act_bits):
    lv = levels(act_bits)
    return lv[sum(1 for th in ths if val > th)]


def encode(raw, bits, shift):
    if bits == 1:
        return 1 if raw >= 0 else -1
    m = 2 ** (bits - 1) - 1
    return max(-m, min(m, raw >> shift))


def conv(x, layer, act_bits):
    h, w, c = len(x), len(x[0]), len(x[0][0])
    k, s, p = layer.kernel, layer.stride, layer.pad
    oh, ow = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
    W = layer.weights.tolist()
    out = []
    for oy in range(oh):
        row = []
        for ox in range(ow):
            px = []
            for o in range(layer.out_ch):
                val = 0
                idx = 0
                for ky in range(k):
                    for kx in range(k):
                        for ci in range(c):
                            yy, xx = oy * s + ky - p, ox * s + kx - p
                            v = x[yy][xx][ci] if 0 <= yy < h and 0 <= xx < w else 0
                            val += W[o][idx] * v
                            idx += 1
                px.append(activate(val, layer.thresholds[o].tolist(), act_bits))
            row.append(px)
        out.append(row)
    return out


def pool(x, k, s):
    h, w, c = len(x), len(x[0]), len(x[0][0])
    return [[[max(x[oy * s + dy][ox * s + dx][ci] for dy in range(k) for dx in range(k))
              for ci in range(c)]
             for ox in range((w - k) // s + 1)]
            for oy in range((h - k) // s + 1)]


def flatten(x):
    if isinstance(x[0], list):
        return [v for row in x for px in row for v in px] if isinstance(x[0][0], list) else [
            v for px in x for v in px]
    return list(x)


def forward(net, image, forced=None):
    """Scores of the head for one raw image; ``forced`` = {layer: (channels, level)}."""
    forced = forced or {}
    q = net.quant
    x = [[[encode(int(v), net.input_quant.bits, net.input_quant.shift) for v in px] for px in row]
         for row in image.tolist()]
    for i, layer in enumerate(net.layers):
        if layer.kind == "maxpool":
            x = pool(x, layer.kernel, layer.stride)
        elif layer.kind == "conv":
            x = conv(x, layer, q.act_bits)
        else:
            flat = flatten(x)
            W = layer.weights.tolist()
            vals = [sum(wi * xi for wi, xi in zip(W[o], flat)) for o in range(layer.out_ch)]
            if layer.thresholds is None:
                return vals
            x = [activate(v, layer.thresholds[o].tolist(), q.act_bits) for o, v in enumerate(vals)]
        if i in forced:
            chans, level = forced[i]
            if isinstance(x[0], list):
                for row in x:
                    for px in row:
                        for c in chans:
                            px[c] = level
            else:
                for c in chans:
                    x[c] = level
    raise AssertionError("network has no head")


def classify(scores):
    best = 0
    for i, v in enumerate(scores):
        if v > scores[best]:
            best = i
    return best
