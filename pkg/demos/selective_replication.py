"""Selective triplication and the cost/error trade-off.

A channel is worth triplicating when sticking it (at its worst level) costs
more than ``t`` accuracy points.  For every precision we plan replication at
a few thresholds, re-run the campaign on the protected net to confirm the
worst drop is now within ``t``, and collect (hardware cost, worst-case error)
points.  The unprotected net and full TMR bracket each precision's curve.
The Pareto frontier across all points is printed last.

    python demos/selective_replication.py [--images 1000]
"""
import argparse
import math
from dataclasses import replace

from qnnfault import (
    OpsProfile,
    QuantSpec,
    apply_replication,
    make_dataset,
    pareto_frontier,
    plan_replication,
    plan_whole_channel,
    protected_campaign,
    run_campaign,
    synthetic_network,
    worst_case_drop,
)
from qnnfault.replication import cost_point, full_tmr_plan, plan_from_channels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=1000)
    ap.add_argument("--thresholds", type=float, nargs="+", default=[0.5, 1, 2, 5, 10])
    args = ap.parse_args()

    points = []
    for w, a in [(1, 1), (2, 2), (4, 4)]:
        net = synthetic_network("desk", QuantSpec(w, a), seed=0)
        ds = make_dataset(net, args.images, seed=1, pool=5, label_noise=0.15)
        res = run_campaign(plan_whole_channel(net), net, ds)
        ops = OpsProfile.from_network(net)
        n_chan = sum(ops.layer_channels.values())
        print(f"\n{net.quant.label}: baseline {100 * res.baseline / res.total:.1f}%, "
              f"unprotected worst drop {float(worst_case_drop(res)):.1f} points")

        bare = cost_point(res, replace(plan_from_channels({}, ops), threshold=math.inf), ops, net.quant)
        points.append(bare)
        for t in args.thresholds:
            plan = plan_replication(res, t, ops)
            again = protected_campaign(apply_replication(net, plan), res.plan, ds)
            n = sum(len(c) for c in plan.channels.values())
            print(f"  t={t:<4}  {n:3d}/{n_chan} channels  overhead {float(plan.ops_overhead):6.2f}%  "
                  f"protected worst drop {float(worst_case_drop(again)):.1f}")
            points.append(cost_point(res, plan, ops, net.quant))
        points.append(cost_point(res, full_tmr_plan(ops), ops, net.quant))

    print("\nPareto frontier (cost in LUT-proxy units, worst-case error in %):")
    for p in pareto_frontier(points):
        t = "full TMR" if p.threshold is None else f"t={p.threshold}"
        print(f"  {p.precision:5s} {t:9s} cost {p.hardware_cost:10.0f}  error {p.worst_case_error:5.1f}")


if __name__ == "__main__":
    main()
