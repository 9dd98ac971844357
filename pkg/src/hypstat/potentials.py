"""Locally constant potentials on the coding's path space.

A depth-``k`` potential assigns a value to every letter path
``x_0 -> x_1 -> ... -> x_k`` that avoids the augmentation state.  Paths
starting at ``*`` are included so Birkhoff sums along ``*``-paths telescope.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Optional

import numpy as np

from .coding import AUGMENT, STAR, AutomaticStructure
from .metrics import MetricModel

Cylinder = tuple[int, ...]


@dataclass(frozen=True)
class CylinderPotential:
    depth: int
    values: Mapping[Cylinder, float]
    resolution_error: float = 0.0
    flagged: tuple[Cylinder, ...] = ()
    name: str = ""

    def __post_init__(self):
        if not np.isfinite(self.resolution_error):
            raise ValueError("resolution error must be finite")

    def __call__(self, cyl: Cylinder) -> float:
        return self.values[tuple(cyl)]

    def __add__(self, other: "CylinderPotential") -> "CylinderPotential":
        return self._combine(other, 1.0)

    def __sub__(self, other: "CylinderPotential") -> "CylinderPotential":
        return self._combine(other, -1.0)

    def _combine(self, other, sign):
        if other.depth != self.depth:
            raise ValueError("potentials have different depths")
        vals = {c: v + sign * other.values[c] for c, v in self.values.items() if c in other.values}
        return CylinderPotential(self.depth, vals, self.resolution_error + other.resolution_error,
                                 tuple(sorted(set(self.flagged) | set(other.flagged))))

    def scaled(self, c: float) -> "CylinderPotential":
        return CylinderPotential(self.depth, {k: c * v for k, v in self.values.items()},
                                 abs(c) * self.resolution_error, self.flagged, self.name)

    def shifted(self, c: float, where: Optional[Callable[[Cylinder], bool]] = None) -> "CylinderPotential":
        vals = {k: v + (c if where is None or where(k) else 0.0) for k, v in self.values.items()}
        return CylinderPotential(self.depth, vals, self.resolution_error, self.flagged, self.name)

    def on(self, cylinders) -> np.ndarray:
        return np.array([self.values[tuple(c)] for c in cylinders], dtype=float)

    def birkhoff_sum(self, path: Cylinder, n: int) -> float:
        """``S_n psi(x) = sum_{i<n} psi(x_i ... x_{i+k})`` along a vertex path."""
        k = self.depth
        if len(path) < n + k:
            raise ValueError(f"path of {len(path)} vertices too short for n={n}, depth {k}")
        return float(sum(self.values[tuple(path[i:i + k + 1])] for i in range(n)))


def constant_potential(A: AutomaticStructure, depth: int, c: float = 1.0) -> CylinderPotential:
    return CylinderPotential(depth, {cyl: float(c) for cyl in cylinders(A, depth)}, 0.0)


def cylinders(A: AutomaticStructure, depth: int, include_star: bool = True) -> list[Cylinder]:
    """All letter paths of ``depth`` edges avoiding the augmentation state."""
    succ = _successors(A)
    starts = [v for v in range(A.n_vertices) if v != AUGMENT and (include_star or v != STAR)]
    out = []
    level = [(v,) for v in starts]
    for _ in range(depth):
        level = [p + (w,) for p in level for w in succ[p[-1]]]
    out.extend(level)
    return sorted(out)


def _successors(A: AutomaticStructure) -> list[list[int]]:
    succ: list[list[int]] = [[] for _ in range(A.n_vertices)]
    for u, v, _ in A.letter_edges:
        if v != AUGMENT and v not in succ[u]:
            succ[u].append(v)
    return succ


def path_word(A: AutomaticStructure, path: Cylinder) -> str:
    lab = A.edge_label
    return "".join(lab[(path[i], path[i + 1])] for i in range(len(path) - 1))


def _extension_oracle(A: AutomaticStructure, horizon: int):
    """``ok[m][v]``: an augmentation-free path of ``m`` more edges leaves ``v``."""
    succ = _successors(A)
    n = A.n_vertices
    ok = [np.ones(n, bool)]
    ok[0][AUGMENT] = False
    for _ in range(horizon):
        prev = ok[-1]
        ok.append(np.array([v != AUGMENT and any(prev[w] for w in succ[v]) for v in range(n)]))
    return succ, ok


def _smallest_continuation(A, succ, ok, path, extra):
    """Lexicographically smallest continuation (by label order, then target)."""
    idx = {x: i for i, x in enumerate(A.alphabet.letters)}
    lab = A.edge_label
    path = list(path)
    for m in range(extra, 0, -1):
        v = path[-1]
        opts = [w for w in succ[v] if ok[m - 1][w]]
        if not opts:
            return None
        path.append(min(opts, key=lambda w: (idx[lab[(v, w)]], w)))
    return tuple(path)


def _random_continuation(succ, ok, path, extra, rng):
    path = list(path)
    for m in range(extra, 0, -1):
        opts = [w for w in succ[path[-1]] if ok[m - 1][w]]
        if not opts:
            return None
        path.append(opts[rng.integers(len(opts))])
    return tuple(path)


def busemann_potential(d: MetricModel, A: AutomaticStructure, depth: int = 4,
                       horizon: Optional[int] = None, n_alternatives: int = 4,
                       seed: int = 0, allow_weak: bool = False,
                       name: str = "") -> CylinderPotential:
    """Truncated Busemann potential of ``d`` on depth-``depth`` cylinders.

    Each cylinder is continued to ``horizon`` edges and assigned
    ``d(o, ev_H) - d(o, ev_1^{-1} ev_H)``, the increment of the Busemann
    cocycle at the endpoint; along geodesic words ``ev_1^{-1} ev_H`` is the
    label word with its first letter removed.  Randomly sampled
    continuations measure how much the value depends on the choice.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    horizon = 3 * depth if horizon is None else horizon
    if horizon <= depth:
        raise ValueError("horizon must exceed the depth")
    if not d.strongly_hyperbolic and not allow_weak:
        raise ValueError("metric is not flagged strongly hyperbolic (pass allow_weak=True)")
    succ, ok = _extension_oracle(A, horizon)
    rng = np.random.default_rng(seed)
    extra = horizon - depth

    def value(full):
        w = path_word(A, full)
        return d.distance(w) - d.distance(w[1:])

    vals: dict[Cylinder, float] = {}
    flagged = []
    res = 0.0
    for cyl in cylinders(A, depth):
        full = _smallest_continuation(A, succ, ok, cyl, extra)
        if full is None:
            flagged.append(cyl)
            continue
        v = value(full)
        vals[cyl] = v
        for _ in range(n_alternatives):
            alt = _random_continuation(succ, ok, cyl, extra, rng)
            if alt is not None and alt != full:
                res = max(res, abs(value(alt) - v))
    return CylinderPotential(depth, vals, res, tuple(flagged), name or d.kind)


def sample_star_paths(A: AutomaticStructure, length: int, n: int, seed: int = 0) -> list[Cylinder]:
    """Uniformly chosen next-vertex ``*``-paths of ``length`` edges avoiding 0."""
    succ, ok = _extension_oracle(A, length)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        p = _random_continuation(succ, ok, (STAR,), length, rng)
        if p is None:
            raise ValueError("no augmentation-free *-path of the requested length")
        out.append(p)
    return out


def telescoping_defects(psi: CylinderPotential, d: MetricModel, A: AutomaticStructure,
                        paths, n_max: int) -> np.ndarray:
    """``|S_n psi(x) - d(o, ev_n x)|`` for each path and ``n = 1..n_max``."""
    out = np.zeros((len(paths), n_max))
    k = psi.depth
    for i, p in enumerate(paths):
        vals = [psi.values[tuple(p[j:j + k + 1])] for j in range(n_max)]
        S = np.cumsum(vals)
        w = path_word(A, p)
        for n in range(1, n_max + 1):
            out[i, n - 1] = abs(S[n - 1] - d.distance(w[:n]))
    return out
