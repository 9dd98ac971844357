"""Spectral constants against cylinder depth k for the nonuniform/uniform Green pair."""
import argparse

from hypstat.coding import build_free_group_coding
from hypstat.green import FiniteMeasure, green_metric
from hypstat.symbolic import analyze_pair


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--depths", type=int, nargs="+", default=[2, 3, 4, 5])
    ap.add_argument("--radius", type=int, default=12)
    args = ap.parse_args(argv)
    A = build_free_group_coding(2)
    G = A.group
    d = green_metric(FiniteMeasure.nearest_neighbour(G, {"a": 0.35, "b": 0.15}), args.radius)[0]
    ds = green_metric(FiniteMeasure.uniform(G), args.radius)[0]
    ref = None
    print(f"{'k':>2} {'tau':>12} {'sigma2':>12} {'v_d':>10} {'rel dtau':>9}")
    for k in args.depths:
        r = analyze_pair(A, d, ds, depth=k).report
        ref = r.tau if ref is None else ref
        print(f"{k:2d} {r.tau:12.8f} {r.sigma2:12.8f} {r.v_d:10.6f} {abs(r.tau / ref - 1):9.1e}")


if __name__ == "__main__":
    main()
