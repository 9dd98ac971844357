"""Left-invariant metrics evaluated as ``g -> d(o, g)`` on words.

Every model works on label words of the coding.  Models whose distance is a
sum of per-letter weights along geodesic words expose ``letter_weights``;
the enumeration code uses that to prune exactly and to aggregate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from .group import Alphabet, FreeGroup


class MetricDomainError(ValueError):
    """Element outside the domain of an evaluator (not coded, not tabulated)."""


@dataclass(frozen=True)
class QuasiIsometry:
    L: float
    C: float

    def lower(self, n):
        return np.asarray(n) / self.L - self.C

    def upper(self, n):
        return self.L * np.asarray(n) + self.C

    def inflate(self, factor: float = 1.25) -> "QuasiIsometry":
        return QuasiIsometry(self.L * factor, self.C * factor)


class MetricModel:
    """Base class.  Subclasses implement ``_distance`` on words."""

    kind: str = "abstract"

    def __init__(self, alphabet: Alphabet, group: Optional[FreeGroup] = None,
                 strongly_hyperbolic: bool = True, scale: float = 1.0,
                 quasi_iso: Optional[QuasiIsometry] = None, tolerance: float = 0.0,
                 coding=None):
        self.alphabet = alphabet
        self.group = group
        self.strongly_hyperbolic = strongly_hyperbolic
        self.scale = float(scale)
        self.quasi_iso = quasi_iso
        self.tolerance = tolerance
        self.coding = coding
        self._memo: dict[str, float] = {}

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, scale={self.scale:g})"

    def normal_form(self, g: str) -> str:
        if self.group is not None:
            return self.group.reduce(g)
        self.alphabet.check(g)
        if self.coding is not None and not self.coding.accepts(g):
            raise MetricDomainError(f"word {g!r} is not spelled by a *-path of the coding")
        return g

    def distance(self, g: str) -> float:
        """``d(o, g)``."""
        g = self.normal_form(g)
        val = self._memo.get(g)
        if val is None:
            val = self.scale * self._distance(g)
            self._memo[g] = val
        return val

    __call__ = distance

    def distance_between(self, g: str, h: str) -> float:
        if self.group is None:
            raise MetricDomainError("two-point distances need group multiplication")
        return self.distance(self.group.multiply(self.group.invert(g), h))

    def _distance(self, g: str) -> float:
        raise NotImplementedError

    @property
    def letter_weights(self) -> Optional[np.ndarray]:
        """Per-letter weights if d is additive along geodesic words, else None."""
        return None

    @property
    def is_additive(self) -> bool:
        return self.letter_weights is not None

    def exact_translation_length(self, g: str) -> Optional[float]:
        return None

    def descriptor(self) -> dict[str, Any]:
        """Content used for hashing and manifests."""
        return {"kind": self.kind, "scale": self.scale}

    # batched evaluation along *-paths, used by the enumerator
    def batch_start(self, n: int) -> Any:
        w = self.letter_weights
        if w is not None:
            return np.zeros(n)
        return np.array([""] * n, dtype=object)

    def batch_step(self, state: Any, parents: np.ndarray, letters: np.ndarray) -> Any:
        w = self.letter_weights
        if w is not None:
            return state[parents] + w[letters]
        L = self.alphabet.letters
        return np.array([state[p] + L[x] for p, x in zip(parents, letters)], dtype=object)

    def batch_values(self, state: Any) -> np.ndarray:
        if self.letter_weights is not None:
            return state
        return np.array([self.distance(g) for g in state], dtype=float)


class WordMetric(MetricModel):
    kind = "word"

    def __init__(self, alphabet: Alphabet, group: Optional[FreeGroup] = None, coding=None):
        super().__init__(alphabet, group, True, 1.0, QuasiIsometry(1.0, 0.0), 0.0, coding)

    def _distance(self, g: str) -> float:
        return float(len(g))

    @property
    def letter_weights(self):
        return np.ones(len(self.alphabet))

    def exact_translation_length(self, g):
        if self.group is None:
            return None
        core, _ = self.group.cyclic_reduce(g)
        return float(len(core))

    def descriptor(self):
        return {"kind": "word", "letters": list(self.alphabet.letters)}


def word_metric(alphabet_or_group, coding=None) -> WordMetric:
    if isinstance(alphabet_or_group, FreeGroup):
        return WordMetric(alphabet_or_group.alphabet, alphabet_or_group, coding)
    return WordMetric(alphabet_or_group, None, coding)


class AdditiveMetric(MetricModel):
    """``d(o, g) = sum of weights of the letters of the geodesic word of g``."""

    kind = "additive"

    def __init__(self, alphabet: Alphabet, weights: Mapping[str, float],
                 group: Optional[FreeGroup] = None, coding=None, tolerance: float = 0.0,
                 kind: Optional[str] = None, info: Optional[dict] = None):
        w = np.array([float(weights[x]) for x in alphabet.letters])
        if np.any(w <= 0):
            raise ValueError("letter weights must be positive")
        L = float(max(w.max(), 1.0 / w.min()))
        super().__init__(alphabet, group, True, 1.0, QuasiIsometry(L, 0.0), tolerance, coding)
        self._w = w
        if kind is not None:
            self.kind = kind
        self.info = dict(info or {})

    def _distance(self, g):
        idx = [self.alphabet.index(x) for x in g]
        return float(self._w[idx].sum()) if idx else 0.0

    @property
    def letter_weights(self):
        return self._w

    def exact_translation_length(self, g):
        if self.group is None:
            return None
        core, _ = self.group.cyclic_reduce(g)
        return self._distance(core)

    def descriptor(self):
        return {"kind": self.kind, "weights": [float(x) for x in self._w], **self.info}


class ScaledMetric(MetricModel):
    kind = "scaled"

    def __init__(self, base: MetricModel, c: float):
        if not c > 0:
            raise ValueError("scale must be positive")
        base_l = base.base if isinstance(base, ScaledMetric) else base
        total = c * base.scale
        qi = None
        if base_l.quasi_iso is not None:
            q = base_l.quasi_iso
            qi = QuasiIsometry(max(q.L * total, 1.0 / total * q.L), q.C * max(total, 1.0))
        super().__init__(base_l.alphabet, base_l.group, base_l.strongly_hyperbolic,
                         total, qi, base_l.tolerance * total, base_l.coding)
        self.base = base_l

    def normal_form(self, g):
        return self.base.normal_form(g)

    def _distance(self, g):
        # base memo holds base.scale * raw; undo it so composition multiplies
        return self.base.distance(g) / self.base.scale

    @property
    def letter_weights(self):
        w = self.base.letter_weights
        return None if w is None else w * (self.scale / self.base.scale)

    def exact_translation_length(self, g):
        ell = self.base.exact_translation_length(g)
        return None if ell is None else ell * self.scale / self.base.scale

    def batch_start(self, n):
        return self.base.batch_start(n)

    def batch_step(self, state, parents, letters):
        return self.base.batch_step(state, parents, letters)

    def batch_values(self, state):
        return self.base.batch_values(state) * (self.scale / self.base.scale)

    def descriptor(self):
        return {"kind": "scaled", "scale": self.scale, "base": self.base.descriptor()}


def scale_metric(d: MetricModel, c: float) -> MetricModel:
    """``c * d``; the growth rate of the result is ``v_d / c``."""
    return ScaledMetric(d, c)


class TableMetric(MetricModel):
    """Externally supplied values ``d(o, g)`` for a finite set of words."""

    kind = "table"

    def __init__(self, alphabet: Alphabet, table: Mapping[str, float],
                 group: Optional[FreeGroup] = None, errors: Optional[Mapping[str, float]] = None,
                 strongly_hyperbolic: bool = False, coding=None, name: str = "table"):
        super().__init__(alphabet, group, strongly_hyperbolic, 1.0, None, 0.0, coding)
        self.table = {self.normal_form(k): float(v) for k, v in table.items()}
        self.errors = dict(errors or {})
        self.name = name

    def _distance(self, g):
        try:
            return self.table[g]
        except KeyError:
            raise MetricDomainError(f"element {g!r} not in table {self.name!r}") from None

    def descriptor(self):
        return {"kind": "table", "name": self.name, "size": len(self.table)}


def measure_quasi_isometry(d: MetricModel, words_by_length: Sequence[Sequence[str]],
                           inflate: float = 1.25) -> QuasiIsometry:
    """Fit ``(L, C)`` with ``|g|/L - C <= d(o,g) <= L|g| + C`` on the given spheres.

    ``L`` comes from the extreme slopes on the outermost sphere and ``C``
    absorbs what remains at shorter lengths; both are then inflated.
    """
    lo, hi = [], []
    for n, words in enumerate(words_by_length):
        if not words:
            continue
        vals = np.array([d.distance(g) for g in words])
        lo.append((n, vals.min()))
        hi.append((n, vals.max()))
    n_max, m_lo = lo[-1]
    _, m_hi = hi[-1]
    if n_max == 0:
        return QuasiIsometry(1.0, 0.0).inflate(inflate)
    L = max(m_hi / n_max, n_max / m_lo if m_lo > 0 else math.inf, 1.0)
    C = 0.0
    for (n, a), (_, b) in zip(lo, hi):
        C = max(C, b - L * n, n / L - a)
    return QuasiIsometry(L * inflate, C * inflate)


@dataclass(frozen=True)
class TranslationLength:
    estimate: float
    lower: float
    upper: float
    exact: bool

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, x: float, slack: float = 1e-12) -> bool:
        return self.lower - slack <= x <= self.upper + slack


def translation_length(d: MetricModel, g: str, max_power: int = 32,
                       defect: Optional[float] = None,
                       max_width: Optional[float] = None) -> TranslationLength:
    """``lim d(o, g^n)/n`` with a bracket.

    ``n -> d(o, g^n)`` is subadditive, so ``min_n d(o,g^n)/n`` is an upper
    bound.  Superadditivity up to a defect ``K`` gives the lower bound
    ``max_n (d(o,g^n) - K)/n``; ``K`` is measured on the sampled powers when
    not supplied.
    """
    if d.group is None:
        raise MetricDomainError("translation lengths need a group with powers")
    g = d.group.reduce(g)
    if not g:
        raise ValueError("translation length of the identity is not defined here")
    exact = d.exact_translation_length(g)
    if exact is not None:
        return TranslationLength(exact, exact, exact, True)
    ns = np.arange(1, max_power + 1)
    vals = np.array([d.distance(d.group.power(g, int(n))) for n in ns])
    if defect is None:
        defect = 0.0
        for i in range(len(ns)):
            for j in range(i, len(ns) - i - 1):
                k = ns[i] + ns[j] - 1
                if k < len(ns):
                    defect = max(defect, vals[i] + vals[j] - vals[k])
    upper = float(np.min(vals / ns))
    lower = float(np.max((vals - defect) / ns))
    lower = min(lower, upper)
    est = float(vals[-1] / ns[-1])
    if max_width is not None and upper - lower > max_width:
        raise ValueError(f"bracket width {upper - lower:.3g} exceeds {max_width:.3g}; "
                         f"increase max_power")
    return TranslationLength(est, lower, upper, False)
