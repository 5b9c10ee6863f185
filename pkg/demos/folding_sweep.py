"""How the folding factor changes the blast radius of one faulty PE.

Folding factor f means each PE computes f channels.  Under the default
schedule we break each PE in turn and record accuracy.  Larger f means
fewer PEs, each of which takes more channels down with it.

    python demos/folding_sweep.py [--layer 1] [--images 500]
"""
import argparse

import numpy as np

from qnnfault import QuantSpec, evaluate, make_dataset, synthetic_network
from qnnfault.scheduler import folding_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--layer", type=int, default=1)
    ap.add_argument("--level", type=int, default=1)
    ap.add_argument("--images", type=int, default=500)
    args = ap.parse_args()

    net = synthetic_network("desk", QuantSpec(2, 2), seed=0)
    ds = make_dataset(net, args.images, seed=1, pool=5, label_noise=0.15)
    base = evaluate(net, ds)
    out_ch = net.layers[args.layer].out_ch
    foldings = [f for f in (1, 2, 4, 8, 16, 32) if out_ch % f == 0]
    print(f"layer {args.layer} ({out_ch} channels), stuck at {args.level:+d}, "
          f"baseline {100 * base.correct / len(ds):.1f}%")
    print(f"{'f':>3} {'PEs':>4} {'worst':>7} {'median':>7} {'best':>7}")
    for p in folding_sweep(net, args.layer, ds, foldings, args.level):
        acc = 100 * np.array(p.counts) / p.total
        print(f"{p.folding:3d} {p.pe_count:4d} {acc.min():6.1f}% {np.median(acc):6.1f}% {acc.max():6.1f}%")


if __name__ == "__main__":
    main()
