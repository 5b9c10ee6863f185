"""Whole-channel stuck-at campaign on the desk-scale synthetic net.

For each precision the script builds the net, draws a 1000-image labelled
set, sticks every channel of every thresholded layer at every legal level
and prints one table row: fault-free accuracy, then the worst and best
accuracy seen for each stuck level.  A=1 nets have no zero level, so that
column shows ``--``.

Before the campaign, a handful of faults are checked both ways (threshold
rewriting vs forcing the channel output) to show the two agree.

    python demos/whole_channel_table.py [--images 1000]
"""
import argparse
import time

from qnnfault import QuantSpec, plan_whole_channel, run_campaign, summarize, synthetic_network, make_dataset
from qnnfault.campaign import table_row
from qnnfault.injector import all_single_faults, verify_all


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=1000)
    args = ap.parse_args()

    header = ["net", "fault-free", "s@-1 min", "s@-1 max", "s@0 min", "s@0 max", "s@+1 min", "s@+1 max"]
    rows = []
    for w, a in [(1, 1), (1, 2), (2, 2), (4, 4)]:
        net = synthetic_network("desk", QuantSpec(w, a), seed=0)
        ds = make_dataset(net, args.images, seed=1, pool=5, label_noise=0.15)

        # spot check: first and last fault of each layer
        faults = all_single_faults(net)
        sample = [f for i, f in enumerate(faults) if i == 0 or i == len(faults) - 1 or f.layer != faults[i - 1].layer]
        assert all(verify_all(net, ds, sample)), "injection and forced output disagree"

        t0 = time.perf_counter()
        res = run_campaign(plan_whole_channel(net), net, ds)
        print(f"{net.quant.label}: {len(res.counts)} experiments in {time.perf_counter() - t0:.1f} s")
        rows.append(table_row(summarize(res), net.quant.label))

    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    print()
    for r in [header] + rows:
        print("  ".join(c.rjust(wd) for c, wd in zip(r, widths)))


if __name__ == "__main__":
    main()
