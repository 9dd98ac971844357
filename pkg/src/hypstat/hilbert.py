"""Hilbert lengths ``log sigma_1 - log sigma_n`` of linear representations."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .group import FreeGroup
from .metrics import MetricModel

RENORM_EVERY = 8


class RepresentationError(ValueError):
    pass


class NonAnosovWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MatrixRep:
    group: FreeGroup
    matrices: Mapping[str, np.ndarray]

    def __post_init__(self):
        mats = {}
        n = None
        for x in self.group.letters:
            if x not in self.matrices:
                raise RepresentationError(f"no matrix for letter {x!r}")
            M = np.array(self.matrices[x], dtype=float if np.isrealobj(self.matrices[x]) else complex)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise RepresentationError(f"matrix for {x!r} is not square")
            if n is None:
                n = M.shape[0]
            elif M.shape[0] != n:
                raise RepresentationError("matrices have different dimensions")
            if abs(np.linalg.det(M) - 1.0) > 1e-9:
                raise RepresentationError(f"matrix for {x!r} does not have unit determinant")
            mats[x] = M
        for x in self.group.letters:
            y = self.group.alphabet.inverse[x]
            if np.max(np.abs(mats[x] @ mats[y] - np.eye(n))) > 1e-12 * max(1.0, np.abs(mats[x]).max() * np.abs(mats[y]).max()):
                raise RepresentationError(f"rho({x}) rho({y}) is not the identity")
        object.__setattr__(self, "matrices", mats)

    @property
    def dim(self) -> int:
        return next(iter(self.matrices.values())).shape[0]

    @classmethod
    def from_generators(cls, group: FreeGroup, gens: Mapping[str, np.ndarray]) -> "MatrixRep":
        """Fill in inverse letters that are not given."""
        mats = {k: np.asarray(v) for k, v in gens.items()}
        for x in group.letters:
            y = group.alphabet.inverse[x]
            if x not in mats and y in mats:
                mats[x] = np.linalg.inv(mats[y])
        return cls(group, mats)

    def product(self, g: str) -> tuple[np.ndarray, float]:
        """``(M, s)`` with ``rho(g) = e^s M``, renormalised every few steps."""
        n = self.dim
        M = np.eye(n, dtype=next(iter(self.matrices.values())).dtype)
        s = 0.0
        for i, x in enumerate(self.group.reduce(g), 1):
            M = M @ self.matrices[x]
            if i % RENORM_EVERY == 0:
                c = np.abs(M).max()
                M = M / c
                s += math.log(c)
        return M, s

    def descriptor(self) -> dict:
        return {"dim": self.dim,
                "gens": {x: np.asarray(self.matrices[x]).tolist() for x in self.group.letters}}


def parse_representation(text: str, group: FreeGroup, source: str = "<rep>") -> MatrixRep:
    """``dim n`` then blocks ``gen <letter>`` followed by ``n`` rows of ``n`` numbers."""
    lines = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            lines.append((lineno, line))
    if not lines or not lines[0][1].startswith("dim"):
        raise RepresentationError(f"{source}: first line must be 'dim n'")
    try:
        n = int(lines[0][1].split()[1])
    except (IndexError, ValueError):
        raise RepresentationError(f"{source}:{lines[0][0]}: bad 'dim' line") from None
    gens = {}
    i = 1
    while i < len(lines):
        lineno, line = lines[i]
        tok = line.split()
        if tok[0] != "gen" or len(tok) != 2:
            raise RepresentationError(f"{source}:{lineno}: expected 'gen <letter>'")
        if tok[1] not in group.alphabet.inverse:
            raise RepresentationError(f"{source}:{lineno}: unknown letter {tok[1]!r}")
        rows = []
        for j in range(n):
            if i + 1 + j >= len(lines):
                raise RepresentationError(f"{source}: matrix for {tok[1]!r} truncated")
            ln, row = lines[i + 1 + j]
            try:
                vals = [complex(v.replace("i", "j")) if ("j" in v or "i" in v) else float(v)
                        for v in row.split()]
            except ValueError:
                raise RepresentationError(f"{source}:{ln}: bad number") from None
            if len(vals) != n:
                raise RepresentationError(f"{source}:{ln}: expected {n} entries")
            rows.append(vals)
        gens[tok[1]] = np.array(rows)
        i += 1 + n
    return MatrixRep.from_generators(group, gens)


def load_representation(path, group: FreeGroup) -> MatrixRep:
    path = Path(path)
    return parse_representation(path.read_text(), group, str(path))


class HilbertMetric(MetricModel):
    """``alpha(g) = log sigma_1(rho g) - log sigma_n(rho g)``.

    ``sigma_n(rho g) = 1/sigma_1(rho g^{-1})``, so both terms come from top
    singular values of renormalised products and never from a tiny
    singular value of an ill-conditioned matrix.
    """

    kind = "hilbert"

    def __init__(self, rep: MatrixRep, collapse_tol: float = 1e-6):
        super().__init__(rep.group.alphabet, rep.group, True, 1.0, None, 1e-12)
        self.rep = rep
        self.collapse_tol = collapse_tol

    def _distance(self, g):
        if not g:
            return 0.0
        G = self.group
        M, s = self.rep.product(g)
        Mi, si = self.rep.product(G.invert(g))
        a = math.log(np.linalg.norm(M, 2)) + s + math.log(np.linalg.norm(Mi, 2)) + si
        if len(g) >= 8 and a < self.collapse_tol * len(g):
            warnings.warn(f"singular values collapse along {g!r}: not Anosov?", NonAnosovWarning)
        return max(a, 0.0)

    def log_sigma1(self, g: str) -> float:
        M, s = self.rep.product(g)
        return math.log(np.linalg.norm(M, 2)) + s

    def exact_translation_length(self, g):
        core, _ = self.group.cyclic_reduce(g)
        M, s = self.rep.product(core)
        ev = np.abs(np.linalg.eigvals(M))
        return float(math.log(ev.max()) - math.log(ev.min())) if ev.min() > 0 else None

    def descriptor(self):
        return {"kind": "hilbert", "rep": self.rep.descriptor()}

    # batched products along *-paths: state = (M, Minv, log scales, depth)
    def batch_start(self, n):
        d = self.rep.dim
        eye = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        return (eye, eye.copy(), np.zeros(n), np.zeros(n), 0)

    def batch_step(self, state, parents, letters):
        M, Mi, s, si, depth = state
        L = self.alphabet.letters
        inv = self.alphabet.inverse
        A = np.stack([self.rep.matrices[x] for x in L])
        Ai = np.stack([self.rep.matrices[inv[x]] for x in L])
        M = M[parents] @ A[letters]
        Mi = Ai[letters] @ Mi[parents]
        s, si = s[parents], si[parents]
        depth += 1
        if depth % RENORM_EVERY == 0:
            c = np.abs(M).max(axis=(1, 2))
            ci = np.abs(Mi).max(axis=(1, 2))
            M = M / c[:, None, None]
            Mi = Mi / ci[:, None, None]
            s = s + np.log(c)
            si = si + np.log(ci)
        return (M, Mi, s, si, depth)

    def batch_values(self, state):
        M, Mi, s, si, depth = state
        if len(s) == 0:
            return np.zeros(0)
        a = np.log(np.linalg.norm(M, 2, axis=(1, 2))) + s
        b = np.log(np.linalg.norm(Mi, 2, axis=(1, 2))) + si
        return np.maximum(a + b, 0.0)


def hilbert_length(rep: MatrixRep) -> HilbertMetric:
    return HilbertMetric(rep)


def schottky_rep(group: FreeGroup, length: float = 2.0) -> MatrixRep:
    """Two hyperbolic elements of SL2(R) with axes crossing at right angles at i."""
    if group.rank != 2:
        raise ValueError("the Schottky example is for rank 2")
    a = np.array([[math.cosh(length / 2), math.sinh(length / 2)],
                  [math.sinh(length / 2), math.cosh(length / 2)]])
    c, s = math.cos(math.pi / 4), math.sin(math.pi / 4)
    R = np.array([[c, -s], [s, c]])
    b = R @ a @ R.T
    return MatrixRep.from_generators(group, {"a": a, "b": b})
