import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hypstat.group import FreeGroup
from hypstat.metrics import AdditiveMetric, MetricDomainError, TableMetric, \
    measure_quasi_isometry, scale_metric, translation_length, word_metric

G = FreeGroup(2)
words = st.lists(st.sampled_from(G.letters), max_size=16).map("".join)
w = word_metric(G)
add = AdditiveMetric(G.alphabet, {"a": 0.7, "A": 0.7, "b": 1.9, "B": 1.9}, G)


@given(words, words)
def test_word_metric_axioms(g, h):
    assert w.distance(g) == len(G.reduce(g))
    assert w.distance_between(g, h) == w.distance_between(h, g)
    assert w.distance_between(g, g) == 0


@given(words, words, words)
def test_triangle_inequality(g, h, k):
    for d in (w, add):
        assert d.distance_between(g, k) <= d.distance_between(g, h) + d.distance_between(h, k) + 1e-12


@given(words, st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_scaling_composes(g, c1, c2):
    d = scale_metric(scale_metric(add, c1), c2)
    assert math.isclose(d.distance(g), c1 * c2 * add.distance(g), rel_tol=1e-12, abs_tol=1e-12)
    assert np.allclose(d.letter_weights, c1 * c2 * add.letter_weights)


@given(words.filter(lambda s: G.reduce(s) != ""))
def test_translation_length_exact_and_conjugation_invariant(g):
    g = G.reduce(g)
    core, _ = G.cyclic_reduce(g)
    t = translation_length(w, g)
    assert t.exact and t.estimate == len(core)
    conj = G.multiply(G.multiply("ab", g), G.invert("ab"))
    assert translation_length(add, conj).estimate == pytest.approx(add.distance(core))


def test_translation_bracket_for_non_additive_metric():
    # |g| + c [g != e] is a left-invariant metric with no exact formula here;
    # its translation length is still the cyclic core length
    class Padded(TableMetric):
        def _distance(self, g):
            return len(g) + (0.75 if g else 0.0)
    d = Padded(G.alphabet, {}, G)
    g = "aabA"  # core "ab", conjugator length 1
    t = translation_length(d, g, max_power=24)
    assert not t.exact and t.contains(2.0)
    assert t.width < 0.2


def test_translation_length_needs_group():
    d = word_metric(G.alphabet)
    with pytest.raises(MetricDomainError):
        translation_length(d, "ab")


def test_quasi_isometry_envelope():
    spheres = [list(G.sphere(n)) for n in range(5)]
    q = measure_quasi_isometry(add, spheres)
    for n, sph in enumerate(spheres):
        for g in sph:
            assert q.lower(n) <= add.distance(g) <= q.upper(n)
    assert add.quasi_iso.L == pytest.approx(1.9)


def test_additive_rejects_nonpositive():
    with pytest.raises(ValueError):
        AdditiveMetric(G.alphabet, {"a": 0.0, "A": 0.0, "b": 1, "B": 1}, G)
