"""Cannon codings (strongly Markov automatic structures) and their graph analysis.

Vertex ids are dense integers with the initial state ``*`` at 0 and the
augmentation state at 1.  Edges carry a letter label, or ``None`` for the
identity label used on edges into the augmentation state.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .group import Alphabet, FreeGroup
from .linalg import spectral_radius

STAR = 0
AUGMENT = 1


class AutomatonParseError(ValueError):
    def __init__(self, message: str, lineno: Optional[int] = None, path=None):
        where = f"{path}:{lineno}: " if lineno is not None else ""
        super().__init__(where + message)
        self.lineno = lineno


Edge = tuple[int, int, Optional[str]]


@dataclass(frozen=True, eq=False)
class AutomaticStructure:
    n_vertices: int
    edges: tuple[Edge, ...]
    alphabet: Alphabet
    names: tuple[str, ...] = ()
    group: Optional[FreeGroup] = None

    def __post_init__(self):
        if self.n_vertices < 2:
            raise ValueError("need at least the initial and augmentation states")
        for u, v, lab in self.edges:
            if not (0 <= u < self.n_vertices and 0 <= v < self.n_vertices):
                raise ValueError(f"edge ({u}, {v}) references a missing vertex")
            if lab is not None and lab not in self.alphabet.inverse:
                raise ValueError(f"edge label {lab!r} not in alphabet")
        if not self.names:
            object.__setattr__(self, "names", tuple(str(i) for i in range(self.n_vertices)))

    def _key(self):
        return (self.n_vertices, tuple(sorted(self.edges, key=_edge_key)),
                self.alphabet.letters, tuple(sorted(self.alphabet.inverse.items())))

    def __eq__(self, other):
        return isinstance(other, AutomaticStructure) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    @property
    def initial(self) -> int:
        return STAR

    @property
    def augmentation(self) -> int:
        return AUGMENT

    @cached_property
    def letter_edges(self) -> tuple[Edge, ...]:
        """Edges with a letter label, sorted by (source, label order, target)."""
        idx = {x: i for i, x in enumerate(self.alphabet.letters)}
        es = [e for e in self.edges if e[2] is not None]
        return tuple(sorted(es, key=lambda e: (e[0], idx[e[2]], e[1])))

    @cached_property
    def out_edges(self) -> tuple[tuple[Edge, ...], ...]:
        out: list[list[Edge]] = [[] for _ in range(self.n_vertices)]
        for e in self.letter_edges:
            out[e[0]].append(e)
        return tuple(tuple(x) for x in out)

    @cached_property
    def edge_label(self) -> dict[tuple[int, int], str]:
        """Label of the first letter edge between two vertices."""
        lab: dict[tuple[int, int], str] = {}
        for u, v, x in self.letter_edges:
            lab.setdefault((u, v), x)
        return lab

    def adjacency(self, include_augmentation: bool = False) -> sp.csr_matrix:
        """Edge-count matrix of letter edges (identity edges optional)."""
        es = self.edges if include_augmentation else self.letter_edges
        rows = [e[0] for e in es]
        cols = [e[1] for e in es]
        n = self.n_vertices
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))

    def path_counts(self, n: int) -> list[int]:
        """Number of letter paths from ``*`` of each length ``0..n``."""
        A = self.adjacency().toarray().astype(np.int64).astype(object)
        v = np.zeros(self.n_vertices, dtype=object)
        v[STAR] = 1
        out = [1]
        for _ in range(n):
            v = v @ A
            out.append(int(v.sum()))
        return out

    def accepts(self, word: str) -> bool:
        """Whether some letter path from ``*`` spells ``word``."""
        cur = {STAR}
        for x in word:
            cur = {v for u in cur for (_, v, lab) in self.out_edges[u] if lab == x}
            if not cur:
                return False
        return True

    def paths(self, n: int) -> Iterator[tuple[tuple[int, ...], str]]:
        """All letter paths from ``*`` of length exactly ``n`` as (vertices, word)."""
        stack: list[tuple[tuple[int, ...], str]] = [((STAR,), "")]
        while stack:
            vs, w = stack.pop()
            if len(w) == n:
                yield vs, w
                continue
            for _, v, x in reversed(self.out_edges[vs[-1]]):
                stack.append((vs + (v,), w + x))


def _edge_key(e: Edge):
    return (e[0], e[1], "" if e[2] is None else e[2])


def build_free_group_coding(rank: int) -> AutomaticStructure:
    """The standard geodesic coding of the free group of the given rank."""
    G = FreeGroup(rank)
    letters = G.letters
    inv = G.alphabet.inverse
    vid = {x: 2 + i for i, x in enumerate(letters)}
    edges: list[Edge] = []
    for x in letters:
        edges.append((STAR, vid[x], x))
    for x in letters:
        for y in letters:
            if y != inv[x]:
                edges.append((vid[x], vid[y], y))
        edges.append((vid[x], AUGMENT, None))
    names = ("*", "0") + letters
    return AutomaticStructure(2 + len(letters), tuple(edges), G.alphabet, names, G)


def _case_swap_alphabet(labels: Sequence[str], lineno=None) -> Alphabet:
    pairs = []
    seen = set()
    for x in labels:
        if x in seen:
            continue
        y = x.swapcase()
        if y == x:
            raise AutomatonParseError(
                f"label {x!r} has no case-swapped inverse; give an 'alphabet' line", lineno)
        seen.update((x, y))
        pairs.append((x, y) if x.islower() else (y, x))
    return Alphabet.from_pairs(pairs)


def load_automatic_structure(path) -> AutomaticStructure:
    """Parse the automaton text format.

    Lines: ``vertices N``, ``initial <id>``, optional ``augment <id>``,
    optional ``alphabet x X y Y ...`` (inverse pairs), and
    ``edge <src> <dst> <label|e>``.  ``#`` starts a comment.  Without an
    ``alphabet`` line inverses are case swaps.
    """
    path = Path(path)
    n = None
    initial = None
    augment = None
    pairs = None
    raw_edges: list[tuple[int, int, Optional[str], int]] = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key = tok[0]
        try:
            if key == "vertices" and len(tok) == 2:
                n = int(tok[1])
                if n < 1:
                    raise AutomatonParseError("vertex count must be positive", lineno, path)
            elif key == "initial" and len(tok) == 2:
                initial = int(tok[1])
            elif key == "augment" and len(tok) == 2:
                augment = int(tok[1])
            elif key == "alphabet" and len(tok) >= 3 and len(tok) % 2 == 1:
                pairs = [(tok[i], tok[i + 1]) for i in range(1, len(tok), 2)]
            elif key == "edge" and len(tok) == 4:
                lab = None if tok[3] == "e" else tok[3]
                raw_edges.append((int(tok[1]), int(tok[2]), lab, lineno))
            else:
                raise AutomatonParseError(f"cannot parse line {line!r}", lineno, path)
        except ValueError as exc:
            if isinstance(exc, AutomatonParseError):
                raise
            raise AutomatonParseError(f"bad integer in line {line!r}", lineno, path) from None
    if n is None:
        raise AutomatonParseError("missing 'vertices' line", None, path)
    if initial is None:
        raise AutomatonParseError("missing 'initial' line (no * state)", None, path)

    def check_id(v, lineno):
        if not 0 <= v < n:
            raise AutomatonParseError(f"dangling vertex reference {v}", lineno, path)

    check_id(initial, None)
    if augment is not None:
        check_id(augment, None)
    for u, v, _, lineno in raw_edges:
        check_id(u, lineno)
        check_id(v, lineno)

    labels = [lab for _, _, lab, _ in raw_edges if lab is not None]
    if pairs is not None:
        try:
            alphabet = Alphabet.from_pairs(pairs)
        except ValueError as exc:
            raise AutomatonParseError(str(exc), None, path) from None
        for u, v, lab, lineno in raw_edges:
            if lab is not None and lab not in alphabet.inverse:
                raise AutomatonParseError(f"label {lab!r} not in alphabet", lineno, path)
    else:
        alphabet = _case_swap_alphabet(labels)

    if augment is None:
        # an existing sink reached only by identity edges plays the role of 0
        has_out = {u for u, _, _, _ in raw_edges}
        cands = [v for v in range(n) if v != initial and v not in has_out
                 and any(e[1] == v for e in raw_edges)
                 and all(e[2] is None for e in raw_edges if e[1] == v)]
        augment = cands[0] if len(cands) == 1 else None

    order = [initial]
    if augment is not None:
        order.append(augment)
    order += [v for v in range(n) if v not in (initial, augment)]
    new_id = {}
    if augment is None:
        new_id[initial] = STAR
        nxt = 2
        for v in order[1:]:
            new_id[v] = nxt
            nxt += 1
        total = n + 1
    else:
        new_id = {v: i for i, v in enumerate(order)}
        total = n
    names = ["?"] * total
    for v, i in new_id.items():
        names[i] = str(v)
    if augment is None:
        names[AUGMENT] = "aug"

    edges = {(new_id[u], new_id[v], lab) for u, v, lab, _ in raw_edges}
    edges = [e for e in sorted(edges, key=_edge_key)]
    # restore parallel duplicates faithfully: they are violations worth reporting
    counts: dict[Edge, int] = {}
    for u, v, lab, _ in raw_edges:
        key = (new_id[u], new_id[v], lab)
        counts[key] = counts.get(key, 0) + 1
    edges = [e for e in edges for _ in range(counts[e])]
    for v in range(total):
        if v not in (STAR, AUGMENT) and (v, AUGMENT, None) not in counts:
            edges.append((v, AUGMENT, None))

    A = AutomaticStructure(total, tuple(sorted(edges, key=_edge_key)), alphabet, tuple(names))
    unreachable = _unreachable(A)
    if unreachable:
        bad = ", ".join(A.names[v] for v in unreachable)
        raise AutomatonParseError(f"unreachable (isolated) vertices: {bad}", None, path)
    group = _free_group_if_standard(A)
    if group is not None:
        object.__setattr__(A, "group", group)
    return A


def _free_group_if_standard(A: AutomaticStructure) -> Optional[FreeGroup]:
    rank = len(A.alphabet) // 2
    if 2 * rank != len(A.alphabet) or rank < 1:
        return None
    try:
        ref = build_free_group_coding(rank)
    except ValueError:
        return None
    if ref.alphabet.letters == A.alphabet.letters and ref == A:
        return ref.group
    return None


def _unreachable(A: AutomaticStructure) -> list[int]:
    adj = A.adjacency(include_augmentation=True)
    seen = np.zeros(A.n_vertices, bool)
    seen[STAR] = True
    queue = deque([STAR])
    while queue:
        u = queue.popleft()
        for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return [int(v) for v in np.flatnonzero(~seen)]


def dump_automatic_structure(A: AutomaticStructure, path) -> None:
    lines = [f"vertices {A.n_vertices}", f"initial {STAR}", f"augment {AUGMENT}"]
    pairs = []
    done = set()
    for x in A.alphabet.letters:
        if x not in done:
            y = A.alphabet.inverse[x]
            pairs += [x, y]
            done.update((x, y))
    lines.append("alphabet " + " ".join(pairs))
    for u, v, lab in sorted(A.edges, key=_edge_key):
        lines.append(f"edge {u} {v} {'e' if lab is None else lab}")
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class ValidationReport:
    depth: int
    passed: bool
    sphere_counts: list[int]
    expected_counts: Optional[list[int]]
    violations: list[str] = field(default_factory=list)
    geodesy: str = "checked"

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "passed": self.passed,
            "sphere_counts": self.sphere_counts,
            "expected_counts": self.expected_counts,
            "violations": self.violations,
            "geodesy": self.geodesy,
        }


def validate_strongly_markov(A: AutomaticStructure, depth: int,
                             group: Optional[FreeGroup] = None,
                             max_violations: int = 20) -> ValidationReport:
    """Check bijectivity and geodesy of ev on all ``*``-paths of length <= depth.

    For free groups the reduced form is exact, so injectivity, geodesy and
    surjectivity onto the word ball are all checked.  For other groups only
    injectivity on label words is checkable and geodesy is recorded as
    assumed.
    """
    group = group if group is not None else A.group
    violations: list[str] = []
    counts = [1]
    seen: dict[str, str] = {"": ""}
    level = [(STAR, "")]
    for m in range(1, depth + 1):
        nxt = []
        for u, w in level:
            for _, v, x in A.out_edges[u]:
                nxt.append((v, w + x))
        counts.append(len(nxt))
        for v, w in nxt:
            g = group.reduce(w) if group is not None else w
            if group is not None and len(g) != len(w) and len(violations) < max_violations:
                violations.append(f"geodesy: path word {w!r} reduces to {g!r}")
            if g in seen:
                if len(violations) < max_violations:
                    violations.append(f"injectivity: {w!r} and {seen[g]!r} evaluate to {g!r}")
            else:
                seen[g] = w
        level = nxt
    expected = None
    if group is not None:
        expected = [group.sphere_size(m) for m in range(depth + 1)]
        for m, (c, e) in enumerate(zip(counts, expected)):
            if c != e and len(violations) < max_violations:
                violations.append(f"surjectivity: {c} paths of length {m}, sphere has {e}")
        if len(seen) != group.ball_size(depth) and not violations:
            violations.append("surjectivity: image differs from the word ball")
    multi: dict[tuple[int, int], int] = {}
    for u, v, _ in A.letter_edges:
        multi[(u, v)] = multi.get((u, v), 0) + 1
    for (u, v), c in sorted(multi.items()):
        if c > 1 and len(violations) < max_violations:
            violations.append(f"parallel edges: {c} letter edges {A.names[u]} -> {A.names[v]}")
    return ValidationReport(depth, not violations, counts, expected, violations,
                            "checked" if group is not None else "assumed")


@dataclass(frozen=True)
class ComponentInfo:
    id: int
    vertices: tuple[int, ...]
    period: Optional[int]
    spectral_radius: float
    is_word_maximal: bool

    @property
    def has_cycle(self) -> bool:
        return self.period is not None


def _period(adj: sp.csr_matrix, verts: Sequence[int]) -> Optional[int]:
    inside = set(verts)
    root = min(verts)
    level = {root: 0}
    queue = deque([root])
    g = 0
    while queue:
        u = queue.popleft()
        for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
            v = int(v)
            if v not in inside:
                continue
            if v not in level:
                level[v] = level[u] + 1
                queue.append(v)
            else:
                g = math.gcd(g, level[u] + 1 - level[v])
    return g if g > 0 else None


def scc_decomposition(A: AutomaticStructure, rel_tol: float = 1e-9) -> list[ComponentInfo]:
    """Strongly connected components of the letter graph, ordered by smallest vertex."""
    adj = A.adjacency()
    _, labels = connected_components(adj, directed=True, connection="strong")
    groups: dict[int, list[int]] = {}
    for v, c in enumerate(labels):
        groups.setdefault(int(c), []).append(v)
    comps = sorted(groups.values(), key=min)
    raw = []
    for verts in comps:
        p = _period(adj, verts)
        rho = spectral_radius(adj[verts][:, verts]) if p is not None else 0.0
        raw.append((tuple(verts), p, rho))
    rho_max = max((r for _, _, r in raw), default=0.0)
    out = []
    for i, (verts, p, rho) in enumerate(raw):
        maximal = p is not None and rho_max > 0 and abs(rho - rho_max) <= rel_tol * rho_max
        out.append(ComponentInfo(i, verts, p, float(rho), bool(maximal)))
    return out


def word_maximal_components(A: AutomaticStructure) -> list[ComponentInfo]:
    return [c for c in scc_decomposition(A) if c.is_word_maximal]
