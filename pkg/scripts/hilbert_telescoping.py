"""Sup over sampled coding paths of |S_n psi - d(o, ev_n)| for word, Green and Hilbert metrics.

Word and nearest-neighbour Green metrics telescope exactly; the Hilbert length
of a Schottky representation carries a bounded transient that levels off.
"""
import argparse

import numpy as np

from hypstat.coding import build_free_group_coding
from hypstat.green import FiniteMeasure, green_metric
from hypstat.hilbert import hilbert_length, schottky_rep
from hypstat.metrics import word_metric
from hypstat.potentials import busemann_potential, sample_star_paths, telescoping_defects


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=24)
    ap.add_argument("--paths", type=int, default=1000)
    ap.add_argument("--depth", type=int, default=4)
    args = ap.parse_args(argv)
    A = build_free_group_coding(2)
    G = A.group
    metrics = {
        "word": word_metric(G),
        "green": green_metric(FiniteMeasure.nearest_neighbour(G, {"a": 0.35, "b": 0.15}), 12)[0],
        "hilbert": hilbert_length(schottky_rep(G)),
    }
    paths = sample_star_paths(A, args.n + args.depth, args.paths, seed=0)
    rows = {}
    for name, d in metrics.items():
        psi = busemann_potential(d, A, args.depth, 3 * args.depth)
        rows[name] = telescoping_defects(psi, d, A, paths, args.n).max(axis=0)
    print(f"{'n':>3} " + " ".join(f"{k:>10}" for k in rows))
    for i in range(args.n):
        print(f"{i + 1:3d} " + " ".join(f"{v[i]:10.3e}" for v in rows.values()))
    n = np.arange(1, args.n + 1)
    half = args.n // 2
    for k, v in rows.items():
        print(f"{k}: slope n<={half} {np.polyfit(n[:half], v[:half], 1)[0]:.2e}, "
              f"n>{half} {np.polyfit(n[half:], v[half:], 1)[0]:.2e}")


if __name__ == "__main__":
    main()
