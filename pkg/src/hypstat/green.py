"""Green metrics of finitely supported symmetric random walks on free groups.

The Green function ``G(o, g) = sum_n mu^{*n}(g)`` is computed by exact
convolution on the word ball ``B_R`` with the walk killed on leaving the
ball.  Both truncations undercount, so the computed values are lower bounds;
the reported errors bound what is missing:

* time tail: the killed operator is symmetric and nonnegative, so its norm is
  bounded by a Collatz-Wielandt ratio, giving ``sum_{n>N} v_n(g) <=
  ||v_N||_2 rho/(1 - rho)``;
* space tail (nearest-neighbour walks): mass killed at the boundary returns
  to ``g`` with probability at most ``G(h, g)/G(o,o) <= F^{d(h, g)}``, summed
  exactly over exit points by a two-pass tree recursion.

For nearest-neighbour (possibly lazy) walks on a tree, ``G(o, g)/G(o, o)``
is the product of first-passage probabilities of the letters of ``g``; the
resulting metric is additive with per-letter weights read off the table.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .group import IDENTITY, FreeGroup
from .metrics import AdditiveMetric, MetricDomainError, MetricModel


class MeasureError(ValueError):
    pass


class BudgetExceededError(MemoryError):
    pass


@dataclass(frozen=True)
class FiniteMeasure:
    group: FreeGroup
    weights: Mapping[str, float]

    def __post_init__(self):
        w = {}
        for g, p in self.weights.items():
            g = self.group.reduce(g)
            if p <= 0:
                raise MeasureError(f"weight of {g or 'e'!r} must be positive")
            w[g] = w.get(g, 0.0) + float(p)
        object.__setattr__(self, "weights", dict(sorted(w.items(), key=lambda kv: (len(kv[0]), kv[0]))))
        total = sum(w.values())
        if abs(total - 1.0) > 1e-12:
            raise MeasureError(f"weights sum to {total!r}, not 1")
        for g, p in w.items():
            q = w.get(self.group.invert(g))
            if q is None or abs(p - q) > 1e-12:
                raise MeasureError(f"measure is not symmetric at {g or 'e'!r}")
        if not self._generates():
            raise MeasureError("support does not generate the group as a semigroup")

    def _generates(self) -> bool:
        m = self.max_length
        cap = 2 + 2 * m
        reach = {IDENTITY}
        frontier = {IDENTITY}
        while frontier:
            new = set()
            for g in frontier:
                for s in self.weights:
                    h = self.group.multiply(g, s)
                    if len(h) <= cap and h not in reach:
                        new.add(h)
            reach |= new
            frontier = new
        return all(g in reach for g in self.group.ball(2))

    @property
    def support(self) -> tuple[str, ...]:
        return tuple(self.weights)

    @property
    def max_length(self) -> int:
        return max(len(g) for g in self.weights)

    @property
    def is_nearest_neighbour(self) -> bool:
        return self.max_length <= 1

    @classmethod
    def uniform(cls, group: FreeGroup) -> "FiniteMeasure":
        p = 1.0 / len(group.letters)
        return cls(group, {x: p for x in group.letters})

    @classmethod
    def nearest_neighbour(cls, group: FreeGroup, weights: Mapping[str, float]) -> "FiniteMeasure":
        """Symmetric letter weights; a letter's inverse inherits its weight."""
        w = {}
        for x, p in weights.items():
            w[x] = p
            w.setdefault(group.alphabet.inverse[x], p)
        return cls(group, w)

    def descriptor(self) -> dict:
        return {"rank": self.group.rank,
                "weights": [[g or "e", repr(float(p))] for g, p in self.weights.items()]}


def parse_measure(text: str, group: FreeGroup, source: str = "<measure>") -> FiniteMeasure:
    """Lines ``weight <word> <rational>``; ``e`` is the identity."""
    weights: dict[str, Fraction] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 3 or tok[0] != "weight":
            raise MeasureError(f"{source}:{lineno}: expected 'weight <word> <rational>'")
        word = "" if tok[1] == "e" else tok[1]
        try:
            p = Fraction(tok[2])
        except (ValueError, ZeroDivisionError):
            raise MeasureError(f"{source}:{lineno}: bad rational {tok[2]!r}") from None
        try:
            word = group.reduce(word)
        except ValueError as exc:
            raise MeasureError(f"{source}:{lineno}: {exc}") from None
        weights[word] = weights.get(word, Fraction(0)) + p
    if not weights:
        raise MeasureError(f"{source}: empty measure")
    if sum(weights.values()) != 1:
        raise MeasureError(f"{source}: weights sum to {sum(weights.values())}, not 1")
    return FiniteMeasure(group, {g: float(p) for g, p in weights.items()})


def load_measure(path, group: FreeGroup) -> FiniteMeasure:
    path = Path(path)
    return parse_measure(path.read_text(), group, str(path))


class BallIndex:
    """Shortlex indexing of the word ball ``B_R`` of a free group."""

    def __init__(self, group: FreeGroup, radius: int, budget: int = 20_000_000):
        size = group.ball_size(radius)
        if size > budget:
            raise BudgetExceededError(
                f"ball of radius {radius} has {size} elements (budget {budget})")
        m = len(group.letters)
        inv = np.array([group.letters.index(group.alphabet.inverse[x]) for x in group.letters])
        self.group, self.radius, self.size = group, radius, size
        parent = [np.array([-1])]
        last = [np.array([-1])]
        starts = [0, 1]
        for n in range(1, radius + 1):
            prev_last = last[-1]
            p_idx = np.arange(starts[n - 1], starts[n])
            P = np.repeat(p_idx, m)
            X = np.tile(np.arange(m), len(p_idx))
            PL = np.repeat(prev_last, m)
            keep = (PL < 0) | (inv[np.maximum(PL, 0)] != X)
            parent.append(P[keep])
            last.append(X[keep])
            starts.append(starts[-1] + int(keep.sum()))
        self.parent = np.concatenate(parent).astype(np.int64)
        self.last = np.concatenate(last).astype(np.int64)
        self.starts = np.array(starts)
        self.level = np.repeat(np.arange(radius + 1), np.diff(self.starts))
        self.inverse_letter = inv
        child = np.full((size, m), -1, dtype=np.int64)
        child[self.parent[1:], self.last[1:]] = np.arange(1, size)
        self.child = child
        # g·x is the parent when x cancels the last letter, else the child
        nb = child.copy()
        cancel = (self.last[:, None] >= 0) & (inv[np.maximum(self.last, 0)][:, None] == np.arange(m)[None, :])
        nb[cancel] = np.broadcast_to(self.parent[:, None], nb.shape)[cancel]
        self.neighbour = nb

    def index(self, g: str) -> int:
        i = 0
        for x in self.group.reduce(g):
            i = int(self.neighbour[i, self.group.letters.index(x)])
            if i < 0:
                raise MetricDomainError(f"{g!r} lies outside the ball of radius {self.radius}")
        return i

    def word(self, i: int) -> str:
        out = []
        L = self.group.letters
        while i > 0:
            out.append(L[self.last[i]])
            i = int(self.parent[i])
        return "".join(reversed(out))

    def multiply_index(self, word: str) -> np.ndarray:
        """Index of ``g * word`` for every ``g`` in the ball, -1 when it leaves."""
        idx = np.arange(self.size)
        for x in word:
            j = self.group.letters.index(x)
            ok = idx >= 0
            idx = np.where(ok, self.neighbour[np.maximum(idx, 0), j], -1)
        return idx


def _shift_tables(mu: FiniteMeasure, index: BallIndex, inner: int):
    """For each support element s: index of ``g s^{-1}`` restricted to the inner ball."""
    G = mu.group
    tables = []
    for s, p in mu.weights.items():
        idx = index.multiply_index(G.invert(s))[:inner]
        idx = np.where(idx >= inner, -1, idx)
        tables.append((p, idx))
    return tables


def _step(v: np.ndarray, tables) -> np.ndarray:
    """One convolution step on a vector with a trailing zero slot (index -1)."""
    out = np.zeros_like(v)
    buf = np.empty(len(v) - 1)
    for p, idx in tables:
        np.take(v, idx, out=buf)
        buf *= p
        out[:-1] += buf
    return out


@dataclass
class ConvolutionPowers:
    index: BallIndex
    powers: list[np.ndarray]

    def at(self, n: int, g: str) -> float:
        return float(self.powers[n][self.index.index(g)])

    def as_dict(self, n: int) -> dict[str, float]:
        v = self.powers[n]
        return {self.index.word(int(i)): float(v[i]) for i in np.flatnonzero(v)}


def convolution_powers(mu: FiniteMeasure, N: int, budget: int = 5_000_000) -> ConvolutionPowers:
    """Exact ``mu^{*n}`` for ``n <= N`` (no truncation: the ball covers every step)."""
    if N < 1:
        raise ValueError("N must be at least 1")
    R = N * mu.max_length
    try:
        index = BallIndex(mu.group, R, budget)
    except BudgetExceededError as exc:
        raise BudgetExceededError(f"reachable set too large for N={N}: {exc}") from None
    tables = _shift_tables(mu, index, index.size)
    v = np.zeros(index.size + 1)
    v[0] = 1.0
    powers = [v[:-1]]
    for _ in range(N):
        v = _step(v, tables)
        powers.append(v[:-1])
    return ConvolutionPowers(index, powers)


@dataclass
class GreenTable:
    """Lower-bound values of ``G(o, g)`` on ``B_R`` with additive error bounds."""

    radius: int
    steps: int
    values: np.ndarray
    errors: np.ndarray
    rho_hat: float
    rho_certified: float
    rho_heuristic: float
    time_tail: float
    certified: bool
    descriptor: dict
    index: Optional[BallIndex] = None

    def value(self, g: str) -> tuple[float, float]:
        i = self.index.index(g)
        return float(self.values[i]), float(self.errors[i])

    def distance(self, g: str) -> tuple[float, float]:
        """``(d_mu(o, g), error)``: centre and half-width of the log bracket."""
        i = self.index.index(g)
        return self._dist(i)

    def _dist(self, i):
        d, err = self._bracket(self.values[i], self.errors[i])
        return float(d), float(err)

    def _bracket(self, gi, ei):
        # G(o,g)/G(o,o) lies in [gi/(g0+e0), (gi+ei)/g0]; centre its -log image
        g0, e0 = self.values[0], self.errors[0]
        lo = np.log(g0) - np.log(gi + ei)
        hi = np.log(g0 + e0) - np.log(gi)
        return 0.5 * (lo + hi), 0.5 * (hi - lo)

    def distances(self) -> tuple[np.ndarray, np.ndarray]:
        return self._bracket(self.values, self.errors)

    def save(self, path) -> None:
        np.savez_compressed(path, values=self.values, errors=self.errors,
                            meta=np.array(json.dumps({
                                "radius": self.radius, "steps": self.steps,
                                "rho_hat": self.rho_hat, "rho_certified": self.rho_certified,
                                "rho_heuristic": self.rho_heuristic,
                                "time_tail": self.time_tail, "certified": self.certified,
                                "descriptor": self.descriptor}, sort_keys=True)))

    @classmethod
    def load(cls, path, group: FreeGroup) -> "GreenTable":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            values, errors = z["values"], z["errors"]
        meta["index"] = BallIndex(group, meta["radius"])
        return cls(values=values, errors=errors, **meta)


def green_table_key(mu: FiniteMeasure, radius: int, steps: int) -> str:
    blob = json.dumps({"measure": mu.descriptor(), "radius": radius, "steps": steps,
                       "version": 1}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def _exit_kernel(index: BallIndex, a: np.ndarray, r: float) -> np.ndarray:
    """``K(g) = sum_p a_p r^{d(p, g)}`` on the tree ball, by down/up passes."""
    down = a.astype(float).copy()
    st = index.starts
    R = index.radius
    for n in range(R, 0, -1):
        sl = slice(st[n], st[n + 1])
        down[: st[n]] += r * np.bincount(index.parent[sl], weights=down[sl], minlength=st[n])[: st[n]]
    full = down.copy()
    for n in range(1, R + 1):
        sl = slice(st[n], st[n + 1])
        par = index.parent[sl]
        full[sl] = down[sl] + r * (full[par] - r * down[sl])
    return full


def compute_green_table(mu: FiniteMeasure, radius: int = 12, steps: int = 160,
                        budget: int = 20_000_000) -> GreenTable:
    G = mu.group
    m = mu.max_length
    index = BallIndex(G, radius + m - 1, budget) if m > 1 else BallIndex(G, radius, budget)
    inner = int(G.ball_size(radius))
    tables = _shift_tables(mu, index, inner)
    if m > 1:
        index = BallIndex(G, radius, budget)
    v = np.zeros(inner + 1)
    v[0] = 1.0
    acc = v.copy()
    even_returns = []
    for n in range(1, steps + 1):
        v = _step(v, tables)
        acc += v
        if n % 2 == 0 and n >= steps // 2:
            even_returns.append(v[0] ** (1.0 / n) if v[0] > 0 else 0.0)
    acc = acc[:-1]
    # Collatz-Wielandt on P^2, which is insensitive to the bipartite parity of the walk
    v1 = _step(v, tables)
    v2 = _step(v1, tables)
    v3 = _step(v2, tables)
    u = (v + v1)[:-1]
    p2u = (v2 + v3)[:-1]
    rho_cw = float(np.sqrt(np.max(p2u / u))) if np.all(u > 0) else math.inf
    v = v[:-1]
    rho_heur = 1.05 * max(even_returns) if even_returns else math.inf
    rho_hat = max(rho_cw, rho_heur) if math.isfinite(rho_cw) else rho_heur
    certified = math.isfinite(rho_cw) and rho_hat < 1.0
    if rho_hat < 1.0:
        time_tail = float(np.linalg.norm(v) * rho_hat / (1.0 - rho_hat))
    else:
        time_tail = math.inf
    errors = np.full(inner, time_tail)

    if not math.isfinite(time_tail):
        certified = False
    elif mu.is_nearest_neighbour:
        letters = G.letters
        g0 = acc[0]
        F_hat = max((acc[1 + i] + time_tail) / g0 for i in range(len(letters)))
        F_hat = min(1.0, 1.01 * F_hat)
        # exit mass through each boundary vertex p: G_k(p) * mu(children of p)
        lvl = index.level
        last = index.last
        inv = index.inverse_letter
        p_letter = np.array([mu.weights.get(x, 0.0) for x in letters])
        back = np.where(last >= 0, p_letter[inv[np.maximum(last, 0)]], 0.0)
        out_prob = p_letter.sum() - back
        a = np.where(lvl == radius, (acc + time_tail) * out_prob, 0.0)
        K = _exit_kernel(index, a, F_hat)
        beta = F_hat * K[0]
        if beta < 1.0:
            g0_upper = (g0 + time_tail) / (1.0 - beta)
            spatial = F_hat * K * g0_upper
        else:
            spatial = np.full(inner, math.inf)
            certified = False
        errors = errors + spatial
    else:
        # no tree structure to exploit: crude escaped-mass estimate, not certified
        escaped = 1.0
        F_hat = float(np.max(acc[1:len(G.letters) + 1]) / acc[0]) ** (1.0 / m)
        errors = errors + escaped * acc[0] * F_hat ** np.maximum(radius + 1 - index.level, 0)
        certified = False
    return GreenTable(radius, steps, acc, errors, float(rho_hat), float(rho_cw),
                      float(rho_heur), time_tail, bool(certified),
                      {"measure": mu.descriptor(), "radius": radius, "steps": steps}, index)


class GreenMetric(AdditiveMetric):
    """Green metric of a nearest-neighbour walk (additive along reduced words)."""

    def __init__(self, mu: FiniteMeasure, table: GreenTable):
        G = mu.group
        d, err = [], []
        for x in G.letters:
            dx, ex = table.distance(x)
            d.append(dx)
            err.append(ex)
        super().__init__(G.alphabet, dict(zip(G.letters, d)), G, kind="green",
                         tolerance=float(max(err)),
                         info={"measure": mu.descriptor(), "radius": table.radius,
                               "steps": table.steps})
        self.measure = mu
        self.table = table
        self.letter_errors = np.array(err)

    def error(self, g: str) -> float:
        g = self.group.reduce(g)
        return float(sum(self.letter_errors[self.alphabet.index(x)] for x in g))


class GreenTableMetric(MetricModel):
    """Green metric read directly from the table (general finite support)."""

    kind = "green-table"

    def __init__(self, mu: FiniteMeasure, table: GreenTable):
        super().__init__(mu.group.alphabet, mu.group, True, 1.0, None, 0.0)
        self.measure = mu
        self.table = table

    def _distance(self, g):
        return self.table.distance(g)[0]

    def error(self, g: str) -> float:
        return self.table.distance(g)[1]

    def descriptor(self):
        return {"kind": self.kind, "measure": self.measure.descriptor(),
                "radius": self.table.radius, "steps": self.table.steps}


def green_metric(mu: FiniteMeasure, radius: int = 12, steps: int = 160,
                 tolerance: float = 1e-8, table: Optional[GreenTable] = None):
    """Build ``d_mu`` and its table.

    Returns ``(metric, table, flagged)`` where ``flagged`` lists the words
    of length at most ``radius // 2`` whose distance error exceeds
    ``tolerance``.
    """
    if table is None:
        table = compute_green_table(mu, radius, steps)
    metric = GreenMetric(mu, table) if mu.is_nearest_neighbour else GreenTableMetric(mu, table)
    _, err = table.distances()
    half = table.index.starts[radius // 2 + 1]
    bad = np.flatnonzero(err[:half] > tolerance)
    flagged = [table.index.word(int(i)) for i in bad[:50]]
    if not table.certified:
        flagged = flagged or ["<uncertified tail bound>"]
    return metric, table, flagged
