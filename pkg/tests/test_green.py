import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import first_passage, oracle_distance
from hypstat.green import BallIndex, FiniteMeasure, GreenTable, MeasureError, \
    compute_green_table, convolution_powers, green_metric, parse_measure
from hypstat.group import FreeGroup

G = FreeGroup(2)


def test_first_passage_oracle_srw():
    # simple random walk on F_k: F = 1/(2k - 1)
    for k in (2, 3):
        F = first_passage({x: 1 / (2 * k) for x in FreeGroup(k).letters})
        assert all(abs(f - 1 / (2 * k - 1)) < 1e-14 for f in F.values())


@pytest.mark.parametrize("weights", [{"a": 0.25, "b": 0.25}, {"a": 0.35, "b": 0.15},
                                     {"a": 0.05, "b": 0.45}])
def test_green_table_against_first_passage(weights):
    mu = FiniteMeasure.nearest_neighbour(G, weights)
    d, table, _ = green_metric(mu, 8, 160)
    F = first_passage(dict(mu.weights))
    assert table.certified
    for n in range(0, 5):
        for g in G.sphere(n):
            dg, err = table.distance(g)
            truth = oracle_distance(F, g)
            assert abs(dg - truth) <= err + 1e-12, g
            assert abs(d.distance(g) - truth) <= d.error(g) + 1e-12


def test_lower_bounds_are_lower(green_small, F2, nonuniform_mu):
    _, _, tn, _ = green_small
    F = first_passage(dict(nonuniform_mu.weights))
    # G(o, o) = 1 / (1 - sum mu(x) F_x) for nearest-neighbour walks on trees
    g00 = 1 / (1 - sum(nonuniform_mu.weights[x] * F[x] for x in F))
    assert tn.values[0] <= g00 <= tn.values[0] + tn.errors[0]


def test_convolution_powers_are_probabilities():
    mu = FiniteMeasure.nearest_neighbour(G, {"a": 0.35, "b": 0.15})
    cp = convolution_powers(mu, 6)
    for n in range(7):
        assert abs(cp.powers[n].sum() - 1.0) < 1e-12
    assert cp.at(1, "a") == pytest.approx(0.35)
    assert cp.at(2, "") == pytest.approx(2 * 0.35 ** 2 + 2 * 0.15 ** 2)
    assert all(v == 0 for g, v in cp.as_dict(3).items() if len(g) % 2 == 0)


def test_general_support_table_is_flagged():
    mu = FiniteMeasure(G, {"a": 0.2, "A": 0.2, "b": 0.2, "B": 0.2, "ab": 0.1, "BA": 0.1})
    d, table, flagged = green_metric(mu, 5, 60)
    assert not d.is_additive and not table.certified and flagged
    assert d.distance("ab") > 0


def test_table_roundtrip(tmp_path, green_small):
    _, _, tn, _ = green_small
    p = tmp_path / "t.npz"
    tn.save(p)
    t2 = GreenTable.load(p, G)
    assert np.array_equal(t2.values, tn.values) and np.array_equal(t2.errors, tn.errors)
    assert t2.distance("aB") == tn.distance("aB")


def test_parse_measure_exact_rationals():
    mu = parse_measure("weight a 7/20\nweight A 7/20\nweight b 3/20\nweight B 3/20\n", G)
    assert mu.weights["a"] == float(Fraction(7, 20))


@pytest.mark.parametrize("text,msg", [
    ("weight a 1/2\nweight A 1/4\nweight b 1/4\n", "symmetric|sum"),
    ("weight a 1/2\nweight A 1/2\n", "generate"),
    ("weight a x\n", "rational"),
    ("junk\n", "expected"),
    ("", "empty"),
])
def test_parse_measure_errors(text, msg):
    with pytest.raises(MeasureError, match=msg):
        parse_measure(text, G)


@given(st.integers(0, 6))
@settings(max_examples=10)
def test_ball_index_roundtrip(R):
    idx = BallIndex(G, R)
    assert idx.size == G.ball_size(R)
    for i in range(0, idx.size, max(1, idx.size // 50)):
        assert idx.index(idx.word(i)) == i


def test_error_bound_shrinks_with_steps():
    mu = FiniteMeasure.uniform(G)
    a = compute_green_table(mu, 6, 40)
    b = compute_green_table(mu, 6, 160)
    assert b.errors[0] < a.errors[0]
    assert b.rho_hat < 1
