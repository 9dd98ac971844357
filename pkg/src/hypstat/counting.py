"""Exhaustive enumeration of metric balls and the empirical counting statistics.

Balls ``{g : d(o, g) < T}`` are enumerated over ``*``-paths of the coding,
one BFS level at a time with numpy arrays.  Completeness is certified in one
of two ways:

* monotone: ``d`` is additive along geodesic words with positive letter
  weights, so ``d`` never decreases along a path and a node with ``d >= T``
  has no descendant in the ball;
* radius cap: all paths up to ``R = ceil(L (T + C))`` are expanded using the
  quasi-isometry envelope ``(L, C)``, and the frontier at length ``R`` is
  checked to lie outside the ball.

``fast`` mode prunes at ``d >= T + slack`` and is only heuristic.  The
``compressed`` mode aggregates paths by (vertex, letter-class counts) for
additive pairs; it has no words but reaches much larger ``T``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .coding import STAR, AutomaticStructure
from .group import FreeGroup
from .metrics import MetricModel, translation_length


class BudgetExceededError(RuntimeError):
    pass


@dataclass(frozen=True)
class Certificate:
    mode: str
    status: str
    detail: str
    witness: Optional[str] = None

    def to_dict(self) -> dict:
        return {"mode": self.mode, "status": self.status, "detail": self.detail,
                "witness": self.witness}


@dataclass
class _PathTree:
    alphabet: tuple[str, ...]
    parent: list[np.ndarray]
    label: list[np.ndarray]

    def letters(self, level: int, idx: np.ndarray) -> np.ndarray:
        """Letter indices of the words at ``(level, idx)``: shape (len(idx), level)."""
        out = np.empty((len(idx), level), dtype=np.int64)
        cur = np.asarray(idx, dtype=np.int64)
        for j in range(level, 0, -1):
            out[:, j - 1] = self.label[j][cur]
            cur = self.parent[j][cur]
        return out

    def words(self, level: int, idx: np.ndarray) -> list[str]:
        if level == 0:
            return [""] * len(idx)
        chars = np.array(self.alphabet)[self.letters(level, idx)]
        return ["".join(row) for row in chars]


@dataclass
class BallEnumeration:
    T: float
    d: np.ndarray
    d_star: Optional[np.ndarray]
    lengths: np.ndarray
    certificate: Certificate
    metric_hash: str = ""
    weights: Optional[np.ndarray] = None
    node: Optional[np.ndarray] = None
    tree: Optional[_PathTree] = field(default=None, repr=False)
    wall_time: float = 0.0

    @property
    def cardinality(self):
        if self.weights is None:
            return int(len(self.d))
        return float(self.weights.sum())

    @property
    def w(self) -> np.ndarray:
        return np.ones(len(self.d)) if self.weights is None else self.weights

    def words(self, idx: Optional[Sequence[int]] = None) -> list[str]:
        if self.tree is None:
            raise ValueError("compressed enumerations carry no words")
        idx = np.arange(len(self.d)) if idx is None else np.asarray(idx)
        out: list[Optional[str]] = [None] * len(idx)
        lv = self.lengths[idx]
        for n in np.unique(lv):
            sel = np.flatnonzero(lv == n)
            ws = self.tree.words(int(n), self.node[idx[sel]])
            for i, w in zip(sel, ws):
                out[i] = w
        return out  # type: ignore[return-value]

    def letter_matrix(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """``(positions, letters)`` for all ball elements of a given length."""
        sel = np.flatnonzero(self.lengths == level)
        return sel, self.tree.letters(level, self.node[sel])

    def count(self, T: float) -> float:
        """Weighted count of elements with ``d < T`` (requires ``T <= self.T``)."""
        if T > self.T + 1e-12:
            raise ValueError(f"T={T} exceeds the enumerated radius {self.T}")
        k = int(np.searchsorted(self.d, T, side="left"))
        if self.weights is None:
            return k
        return float(self.weights[:k].sum())

    def restrict(self, T: float) -> "BallEnumeration":
        k = int(np.searchsorted(self.d, T, side="left"))
        sl = slice(0, k)
        return BallEnumeration(
            T, self.d[sl], None if self.d_star is None else self.d_star[sl], self.lengths[sl],
            self.certificate, self.metric_hash,
            None if self.weights is None else self.weights[sl],
            None if self.node is None else self.node[sl], self.tree, self.wall_time)

    def to_csv_rows(self, ell_d=None, ell_star=None):
        words = self.words()
        for i, g in enumerate(words):
            yield (g, float(self.d[i]), None if self.d_star is None else float(self.d_star[i]),
                   None if ell_d is None else float(ell_d[i]),
                   None if ell_star is None else float(ell_star[i]))


def _edge_tables(A: AutomaticStructure):
    out = A.out_edges
    start = np.zeros(A.n_vertices + 1, dtype=np.int64)
    dst, lab = [], []
    idx = {x: i for i, x in enumerate(A.alphabet.letters)}
    for v in range(A.n_vertices):
        for _, w, x in out[v]:
            dst.append(w)
            lab.append(idx[x])
        start[v + 1] = len(dst)
    return start, np.array(dst, dtype=np.int64), np.array(lab, dtype=np.int64)


def _expand(vertices, start, dst, lab):
    deg = start[vertices + 1] - start[vertices]
    parents = np.repeat(np.arange(len(vertices)), deg)
    first = np.repeat(start[vertices], deg)
    offs = np.arange(len(parents)) - np.repeat(np.cumsum(deg) - deg, deg)
    e = first + offs
    return parents, dst[e], lab[e]


def word_radius_cap(d: MetricModel, T: float) -> int:
    q = d.quasi_iso
    if q is None:
        raise ValueError("metric has no quasi-isometry envelope; measure one first")
    return max(0, int(math.ceil(q.L * (T + q.C))))


def enumerate_ball(A: AutomaticStructure, d: MetricModel, T: float, mode: str = "exact",
                   d_star: Optional[MetricModel] = None, budget: int = 10_000_000,
                   slack: float = 0.0, metric_hash: str = "") -> BallEnumeration:
    """All ``g`` with ``d(o, g) < T``, sorted by ``(d, shortlex)``."""
    if mode == "compressed":
        return _enumerate_compressed(A, d, d_star, T, budget, metric_hash)
    if mode not in ("exact", "fast"):
        raise ValueError(f"unknown mode {mode!r}")
    t0 = time.perf_counter()
    w = d.letter_weights
    monotone = w is not None and bool(np.all(w > 0))
    if mode == "exact" and not monotone:
        R = word_radius_cap(d, T)
        projected = sum(A.path_counts(R))
        if projected > budget:
            raise BudgetExceededError(
                f"word radius {R} needs {projected} paths (budget {budget}); lower T")
        cut = math.inf
    else:
        R = None
        cut = T if mode == "exact" else T + slack
    start, dst, lab = _edge_tables(A)
    vert = np.array([STAR])
    sd = d.batch_start(1)
    ss = d_star.batch_start(1) if d_star is not None else None
    dv = d.batch_values(sd)
    tree = _PathTree(A.alphabet.letters, [np.zeros(1, np.int64)], [np.zeros(1, np.int64)])
    out_d, out_s, out_len, out_node = [], [], [], []

    def collect(level, dvals, state_s):
        inb = np.flatnonzero(dvals < T)
        if len(inb):
            out_d.append(dvals[inb])
            if state_s is not None:
                out_s.append(d_star.batch_values(_take(state_s, inb)))
            out_len.append(np.full(len(inb), level))
            out_node.append(inb)

    collect(0, dv, ss)
    total = 1
    level = 0
    frontier_min = math.inf
    frontier_witness = None
    while len(vert):
        if R is not None and level >= R:
            break
        level += 1
        par, cv, cl = _expand(vert, start, dst, lab)
        if len(par) == 0:
            break
        sd_c = d.batch_step(sd, par, cl)
        dv_c = d.batch_values(sd_c)
        ss_c = d_star.batch_step(ss, par, cl) if d_star is not None else None
        keep = np.flatnonzero(dv_c < cut) if cut < math.inf else np.arange(len(par))
        total += len(keep)
        if total > budget:
            raise BudgetExceededError(f"enumeration exceeded {budget} nodes at length {level}; lower T")
        tree.parent.append(par[keep])
        tree.label.append(cl[keep])
        vert = cv[keep]
        sd = _take(sd_c, keep)
        ss = _take(ss_c, keep) if ss_c is not None else None
        dv = dv_c[keep]
        collect(level, dv, ss)
        if R is not None and level == R and len(dv):
            j = int(np.argmin(dv))
            frontier_min = float(dv[j])
            frontier_witness = tree.words(level, np.array([j]))[0]
    d_all = np.concatenate(out_d) if out_d else np.zeros(0)
    s_all = np.concatenate(out_s) if out_s else (np.zeros(0) if d_star is not None else None)
    l_all = np.concatenate(out_len) if out_len else np.zeros(0, np.int64)
    n_all = np.concatenate(out_node) if out_node else np.zeros(0, np.int64)
    order = np.lexsort((n_all, l_all, d_all))
    if mode == "fast":
        cert = Certificate("fast", "HEURISTIC", f"pruned at d >= T + {slack:g}")
    elif R is None:
        cert = Certificate("exact", "PASS", "monotone: positive letter weights along geodesics")
    elif level < R or frontier_min >= T:
        cert = Certificate("exact", "PASS",
                           f"radius cap R={R}; frontier min d={frontier_min:.6g} >= T")
    else:
        cert = Certificate("exact", "FAIL",
                           f"radius cap R={R}; frontier element with d={frontier_min:.6g} < T",
                           frontier_witness)
    return BallEnumeration(
        float(T), d_all[order], None if s_all is None else s_all[order], l_all[order], cert,
        metric_hash, None, n_all[order], tree, time.perf_counter() - t0)


def _take(state, idx):
    if isinstance(state, tuple):
        return tuple(x[idx] if isinstance(x, np.ndarray) else x for x in state)
    return state[idx]


def _enumerate_compressed(A, d, d_star, T, budget, metric_hash):
    t0 = time.perf_counter()
    wd = d.letter_weights
    ws = d_star.letter_weights if d_star is not None else np.zeros_like(wd)
    if wd is None or ws is None or np.any(wd <= 0):
        raise ValueError("compressed mode needs additive metrics with positive weights")
    pairs = np.stack([wd, ws], axis=1)
    cls_w, cls = np.unique(pairs, axis=0, return_inverse=True)
    cls = cls.ravel()
    nc = len(cls_w)
    start, dst, lab = _edge_tables(A)
    vert = np.array([STAR])
    counts = np.zeros((1, nc), dtype=np.int64)
    mult = np.ones(1)
    out = [(np.zeros(1), np.zeros(1), np.ones(1), np.zeros(1, np.int64))] if T > 0 else []
    level = 0
    states = 1
    while len(vert):
        level += 1
        par, cv, cl = _expand(vert, start, dst, lab)
        c = counts[par].copy()
        c[np.arange(len(par)), cls[cl]] += 1
        m = mult[par]
        key = np.column_stack([cv, c])
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        m = np.bincount(inv, weights=m, minlength=len(uniq))
        cv, c = uniq[:, 0], uniq[:, 1:]
        dv = c @ cls_w[:, 0]
        keep = dv < T
        vert, counts, mult = cv[keep], c[keep], m[keep]
        states += int(keep.sum())
        if states > budget:
            raise BudgetExceededError(f"compressed enumeration exceeded {budget} states")
        if keep.any():
            out.append((dv[keep], counts @ cls_w[:, 1], mult, np.full(int(keep.sum()), level)))
    d_all = np.concatenate([o[0] for o in out])
    s_all = np.concatenate([o[1] for o in out])
    w_all = np.concatenate([o[2] for o in out])
    l_all = np.concatenate([o[3] for o in out])
    order = np.lexsort((s_all, l_all, d_all))
    cert = Certificate("compressed", "PASS", "monotone, aggregated by letter-class counts")
    return BallEnumeration(float(T), d_all[order], s_all[order] if d_star is not None else None,
                           l_all[order], cert, metric_hash, w_all[order], None, None,
                           time.perf_counter() - t0)


def snap_grid(ball: BallEnumeration, targets: Sequence[float], delta: float = 1e-9) -> np.ndarray:
    """Move each target up to just above the next attained distance.

    For lattice-valued metrics ``N(T)`` is a staircase; sampling every grid
    point right after a jump removes the phase bias from slope fits.
    """
    vals = np.unique(ball.d)
    out = []
    for T in targets:
        j = int(np.searchsorted(vals, T, side="left"))
        if j < len(vals) and vals[j] + delta <= ball.T + 1e-12:
            out.append(float(vals[j] + delta))
        else:
            out.append(float(T))
    return np.array(sorted(set(out)))


def counts_on_grid(ball: BallEnumeration, T_grid: Sequence[float]) -> np.ndarray:
    return np.array([ball.count(float(T)) for T in T_grid], dtype=float)


@dataclass(frozen=True)
class GrowthFit:
    v: float
    band: float
    intercept: float
    T: np.ndarray
    log_counts: np.ndarray
    used: np.ndarray

    def fitted(self) -> np.ndarray:
        return self.intercept + self.v * self.T


def growth_rate(T_grid: Sequence[float], counts: Sequence[float]) -> GrowthFit:
    """Least-squares slope of ``log N(T)`` over the upper half of the grid."""
    T = np.asarray(T_grid, dtype=float)
    N = np.asarray(counts, dtype=float)
    if len(T) < 5 or np.any(N <= 0):
        raise ValueError("degenerate grid: need at least 5 points with positive counts")
    y = np.log(N)
    used = np.arange(len(T)) >= len(T) // 2
    if used.sum() < 3:
        used = np.arange(len(T)) >= len(T) - 3
    A = np.column_stack([np.ones(used.sum()), T[used]])
    coef, *_ = np.linalg.lstsq(A, y[used], rcond=None)
    v = float(coef[1])
    if (T.max() - T.min()) * abs(v) < 3.0:
        raise ValueError("degenerate grid: spans fewer than 3 units of T*v")
    resid = y[used] - A @ coef
    dof = max(int(used.sum()) - 2, 1)
    s2 = float(resid @ resid) / dof
    Tc = T[used] - T[used].mean()
    band = 2.0 * math.sqrt(s2 / float(Tc @ Tc)) if Tc @ Tc > 0 else math.inf
    return GrowthFit(v, band, float(coef[0]), T, y, used)


@dataclass(frozen=True)
class OrbitalReport:
    T: np.ndarray
    values: np.ndarray
    oscillation: float
    plateau: bool
    window_oscillation: np.ndarray


def orbital_constant(T_grid, counts, v: float, tol: float = 0.05, windows: int = 3) -> OrbitalReport:
    """``e^{-vT} N(T)`` and its relative oscillation over the last third."""
    T = np.asarray(T_grid, dtype=float)
    vals = np.exp(-v * T) * np.asarray(counts, dtype=float)
    n = len(vals)
    tail = vals[n - max(n // 3, 2):]
    osc = float((tail.max() - tail.min()) / tail.mean())
    chunks = np.array_split(vals, windows)
    wo = np.array([(c.max() - c.min()) / c.mean() if len(c) else 0.0 for c in chunks])
    return OrbitalReport(T, vals, osc, osc <= tol, wo)


@dataclass
class MomentReport:
    T: float
    N: float
    tau: float
    sigma2: float
    tau_hat: float
    moments: np.ndarray
    moments_d: np.ndarray
    ks: float
    ks_d: float
    ks_sup: float
    t_grid: np.ndarray
    cdf: np.ndarray
    cdf_d: np.ndarray
    reference: np.ndarray
    variance_sum: float
    variance_identity_error: float

    @property
    def targets(self) -> np.ndarray:
        return np.array([0.0, self.sigma2, 0.0, 3 * self.sigma2 ** 2])

    def to_dict(self) -> dict:
        return {"T": self.T, "N": self.N, "tau": self.tau, "sigma2": self.sigma2,
                "tau_hat": self.tau_hat, "moments": self.moments.tolist(),
                "moments_d": self.moments_d.tolist(), "targets": self.targets.tolist(),
                "ks": self.ks, "ks_d": self.ks_d, "ks_sup": self.ks_sup,
                "variance_sum": self.variance_sum,
                "variance_identity_error": self.variance_identity_error}


def _weighted_cdf(x, w, grid):
    o = np.argsort(x, kind="stable")
    xs, cw = x[o], np.cumsum(w[o])
    k = np.searchsorted(xs, grid, side="right")
    tot = cw[-1] if len(cw) else 1.0
    return np.where(k > 0, cw[np.maximum(k - 1, 0)], 0.0) / tot


def _reference_cdf(t, sigma2):
    if sigma2 > 0:
        return norm.cdf(t, scale=math.sqrt(sigma2))
    return (np.asarray(t) >= 0).astype(float)


def _sup_ks(x, w, sigma2):
    o = np.argsort(x, kind="stable")
    xs, ws = x[o], w[o] / w.sum()
    hi = np.cumsum(ws)
    lo = hi - ws
    ref = _reference_cdf(xs, sigma2)
    ref_left = ref if sigma2 > 0 else (xs > 0).astype(float)
    return float(max(np.max(np.abs(hi - ref)), np.max(np.abs(lo - ref_left))))


def clt_report(ball: BallEnumeration, tau: float, sigma2: float, T: Optional[float] = None,
               n_grid: int = 201) -> MomentReport:
    """Moments, CDF and KS distance of ``(d* - tau T)/sqrt T`` (and of ``(d* - tau d)/sqrt T``)."""
    if ball.d_star is None:
        raise ValueError("ball has no d_star column")
    T = ball.T if T is None else T
    b = ball.restrict(T) if T < ball.T else ball
    w = b.w
    N = float(w.sum())
    x = (b.d_star - tau * T) / math.sqrt(T)
    xd = (b.d_star - tau * b.d) / math.sqrt(T)
    if sigma2 <= 0 and np.ptp(xd) > 1e-9 and np.ptp(x) > 1e-9:
        spread = float(np.sqrt((w * xd ** 2).sum() / N))
        if spread > 0.5:
            raise ValueError("sigma^2 <= 0 but the distortion has nontrivial spread")
    mom = np.array([(w * x ** p).sum() / N for p in range(1, 5)])
    mom_d = np.array([(w * xd ** p).sum() / N for p in range(1, 5)])
    half = 5 * math.sqrt(sigma2) if sigma2 > 0 else 1.0
    grid = np.linspace(-half, half, n_grid)
    ref = _reference_cdf(grid, sigma2)
    cdf = _weighted_cdf(x, w, grid)
    cdf_d = _weighted_cdf(xd, w, grid)
    ks = float(np.max(np.abs(cdf - ref)))
    ks_d = float(np.max(np.abs(cdf_d - ref)))
    vs = float((w * (b.d_star - tau * T) ** 2).sum() / T)
    ident = abs(vs - N * mom[1]) / max(abs(vs), 1e-300)
    tau_hat = float((w * b.d_star).sum() / N / T)
    return MomentReport(T, N, tau, sigma2, tau_hat, mom, mom_d, ks, ks_d, _sup_ks(x, w, sigma2),
                        grid, cdf, cdf_d, ref, vs, ident)


@dataclass
class SimilarityReport:
    verdict: str
    ratios: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    spread: float
    tau_hat: float
    n_inconclusive: int
    samples: list[str]

    @property
    def similar(self) -> bool:
        return self.verdict == "SIMILAR"

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "spread": self.spread, "tau_hat": self.tau_hat,
                "n_samples": len(self.samples), "n_inconclusive": self.n_inconclusive,
                "ratio_min": float(self.ratios.min()), "ratio_max": float(self.ratios.max())}


def rough_similarity_test(d: MetricModel, d_star: MetricModel, group: FreeGroup,
                          n_samples: int = 50, length: int = 12, seed: int = 0,
                          tol: float = 1e-6, max_power: int = 32,
                          max_rel_width: float = 0.05) -> SimilarityReport:
    """Compare ``l_{d*}/l_d`` over random cyclically reduced classes."""
    if n_samples < 50:
        raise ValueError("need at least 50 conjugacy classes")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_samples):
        n = int(rng.integers(1, length + 1))
        samples.append(group.random_cyclically_reduced(n, rng))
    r, lo, hi = [], [], []
    inconclusive = 0
    for g in samples:
        a = translation_length(d, g, max_power)
        b = translation_length(d_star, g, max_power)
        r.append(b.estimate / a.estimate)
        lo_i = b.lower / a.upper
        hi_i = b.upper / a.lower if a.lower > 0 else math.inf
        lo.append(lo_i)
        hi.append(hi_i)
        if hi_i - lo_i > max_rel_width * r[-1]:
            inconclusive += 1
    if inconclusive > 0.1 * n_samples:
        raise ValueError(f"translation-length brackets too wide on {inconclusive} of {n_samples} samples")
    r, lo, hi = np.array(r), np.array(lo), np.array(hi)
    spread = float(r.max() - r.min())
    similar = float(lo.max()) <= float(hi.min()) + tol * max(1.0, float(np.median(r)))
    return SimilarityReport("SIMILAR" if similar else "NOT SIMILAR", r, lo, hi, spread,
                            float(np.median(r)), inconclusive, samples)


@dataclass
class DefectReport:
    T: np.ndarray
    fractions: np.ndarray
    inconclusive: np.ndarray
    non_increasing: bool
    noise: float

    def to_dict(self) -> dict:
        return {"T": self.T.tolist(), "fractions": self.fractions.tolist(),
                "inconclusive": self.inconclusive.tolist(),
                "non_increasing": self.non_increasing, "noise": self.noise}


def translation_lengths(ball: BallEnumeration, d: MetricModel, group: FreeGroup,
                        max_power: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """``(ell_d, bracket width)`` for every element of an explicit ball.

    Additive metrics are exact: cancelling conjugator letters are removed
    from both ends.  Others fall back to power brackets element by element.
    """
    n = len(ball.d)
    ell = np.zeros(n)
    width = np.zeros(n)
    wts = d.letter_weights
    if wts is None:
        words = ball.words()
        for i, g in enumerate(words):
            if not g:
                continue
            t = translation_length(d, g, max_power)
            ell[i], width[i] = t.estimate, t.width
        return ell, width
    L = ball.tree.alphabet
    inv = np.array([L.index(group.alphabet.inverse[x]) for x in L])
    for level in np.unique(ball.lengths):
        level = int(level)
        if level == 0:
            continue
        sel, M = ball.letter_matrix(level)
        alive = np.ones(len(sel), bool)
        cut = np.zeros(len(sel))
        for i in range(level // 2):
            hit = alive & (M[:, i] == inv[M[:, level - 1 - i]])
            cut[hit] += wts[M[hit, i]] + wts[M[hit, level - 1 - i]]
            alive &= hit
        ell[sel] = ball.d[sel] - cut
    return ell, width


def translation_defect_fraction(ball: BallEnumeration, d: MetricModel, group: FreeGroup,
                                T_grid: Sequence[float], exponent: float = 1.0 / 3.0,
                                noise: float = 0.02) -> DefectReport:
    """Fraction of ``{d < T}`` with ``|d - ell_d| > T^exponent`` along a grid."""
    ell, width = translation_lengths(ball, d, group)
    gap = np.abs(ball.d - ell)
    T = np.asarray(T_grid, dtype=float)
    fr, inc = [], []
    for t in T:
        k = int(np.searchsorted(ball.d, t, side="left"))
        thr = t ** exponent
        g, wd = gap[:k], width[:k]
        undecided = (g - wd <= thr) & (g + wd > thr)
        fr.append(float(np.mean(g > thr)) if k else 0.0)
        inc.append(int(undecided.sum()))
    fr = np.array(fr)
    trend_T = T >= 1.0
    f = fr[trend_T]
    ok = bool(np.all(np.diff(f) <= noise)) if len(f) > 1 else True
    return DefectReport(T, fr, np.array(inc), ok, noise)


@dataclass(frozen=True)
class EmpiricalTheta:
    s: float
    theta: float
    band: float


def empirical_manhattan(ball: BallEnumeration, s: float, T_grid: Sequence[float]) -> EmpiricalTheta:
    """Slope of ``log sum_{d < T} exp(-s d*)`` in ``T``."""
    if ball.d_star is None:
        raise ValueError("ball has no d_star column")
    T = np.asarray(T_grid, dtype=float)
    if len(T) < 5:
        raise ValueError("need at least 5 T-points")
    w = ball.w * np.exp(-s * ball.d_star)
    cw = np.cumsum(w)
    k = np.searchsorted(ball.d, T, side="left")
    sums = np.where(k > 0, cw[np.maximum(k - 1, 0)], 0.0)
    fit = growth_rate(T, sums)
    return EmpiricalTheta(float(s), fit.v, fit.band)
