import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hypstat.group import FreeGroup
from hypstat.hilbert import MatrixRep, NonAnosovWarning, RepresentationError, hilbert_length, \
    parse_representation, schottky_rep

G = FreeGroup(2)
rep = schottky_rep(G, 2.0)
alpha = hilbert_length(rep)


def h2_orbit_distance(g: str) -> float:
    """``d_H2(i, g.i)`` from ``cosh d = ||g||_F^2 / 2`` (SL2(R) acting by Moebius maps)."""
    M = np.eye(2)
    for x in g:
        M = M @ rep.matrices[x]
    return math.acosh(max(1.0, float((M ** 2).sum()) / 2))


@given(st.lists(st.sampled_from(G.letters), max_size=8).map(G.reduce))
def test_matches_h2_orbit_distance(g):
    assert abs(alpha.distance(g) - h2_orbit_distance(g)) <= 1e-9 * max(1.0, len(g))


@given(st.lists(st.sampled_from(G.letters), min_size=1, max_size=10).map(G.reduce)
       .filter(bool))
def test_translation_length_is_trace_formula(g):
    M = np.eye(2)
    for x in G.cyclic_reduce(g)[0]:
        M = M @ rep.matrices[x]
    ell = 2 * math.acosh(max(1.0, abs(np.trace(M)) / 2))
    assert alpha.exact_translation_length(g) == pytest.approx(ell, rel=1e-9, abs=1e-9)


def test_batch_matches_scalar():
    words = [w for n in range(6) for w in G.sphere(n)]
    state = alpha.batch_start(1)
    # build all words of length <= 5 level by level
    level_words = [""]
    vals = {"": 0.0}
    for n in range(1, 6):
        parents, letters, new = [], [], []
        for i, w in enumerate(level_words):
            for j, x in enumerate(G.letters):
                if w and G.alphabet.inverse[w[-1]] == x:
                    continue
                parents.append(i)
                letters.append(j)
                new.append(w + x)
        state = alpha.batch_step(state, np.array(parents), np.array(letters))
        for w, v in zip(new, alpha.batch_values(state)):
            vals[w] = v
        level_words = new
    for w in words:
        assert vals[w] == pytest.approx(alpha.distance(w), abs=1e-10)


def test_long_words_stay_finite():
    # alpha(g^n) = n ell(g) + O(1), and the offset converges exponentially fast
    ell = alpha.exact_translation_length("ab")
    off = [alpha.distance("ab" * n) - n * ell for n in (50, 100, 200)]
    assert all(math.isfinite(x) for x in off)
    assert abs(off[2] - off[1]) < 1e-8 and abs(off[1] - off[0]) < 1e-8


def test_parse_and_errors():
    text = "dim 2\ngen a\n2 0\n0 0.5\ngen b\n1 1\n0 1\n"
    r = parse_representation(text, G)
    assert np.allclose(r.matrices["A"], np.diag([0.5, 2.0]))
    with pytest.raises(RepresentationError, match="determinant"):
        parse_representation("dim 2\ngen a\n2 0\n0 1\ngen b\n1 0\n0 1\n", G)
    with pytest.raises(RepresentationError, match="dim"):
        parse_representation("gen a\n", G)
    with pytest.raises(RepresentationError, match="no matrix"):
        parse_representation("dim 1\ngen a\n1\n", G)


def test_collapse_warns():
    # a unipotent image is not Anosov: alpha grows only logarithmically
    r = MatrixRep.from_generators(G, {"a": np.array([[1.0, 1.0], [0.0, 1.0]]),
                                      "b": np.array([[1.0, 0.0], [0.0, 1.0]])})
    d = hilbert_length(r)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        d.distance("b" * 10)
    assert any(issubclass(x.category, NonAnosovWarning) for x in w)
