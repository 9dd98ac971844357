import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hypstat.coding import AUGMENT, STAR, AutomaticStructure, scc_decomposition
from hypstat.group import Alphabet, FreeGroup
from hypstat.metrics import scale_metric, word_metric
from hypstat.potentials import busemann_potential, constant_potential
from hypstat.symbolic import BracketError, analyze_pair, asymptotic_variance, \
    autocovariance_series, critical_exponent, distortion_constants, equilibrium_at, \
    manhattan_curve, manhattan_theta, maximal_sfts, normalize_pair, pressure_of, \
    refine_to_blocks

LOG3 = math.log(3.0)


@pytest.fixture(scope="module")
def sft2(coding2):
    return maximal_sfts(coding2, 2)[0]


def dense_transfer(sft, pot):
    M = np.zeros((sft.n_states, sft.n_states))
    np.add.at(M, (sft.src, sft.dst), np.exp(pot))
    return M


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_zero_potential_gives_log3(coding2, k):
    sft = maximal_sfts(coding2, k)[0]
    assert abs(pressure_of(sft, np.zeros(sft.n_transitions)).value - LOG3) < 1e-12


@given(arrays(float, 36, elements=st.floats(-3, 3)))
def test_pressure_matches_dense_eig(sft2, pot):
    P = pressure_of(sft2, pot).value
    ref = math.log(max(abs(np.linalg.eigvals(dense_transfer(sft2, pot)))))
    assert abs(P - ref) < 1e-10


@given(arrays(float, 36, elements=st.floats(-3, 3)), st.floats(-50, 50))
def test_constant_shift(sft2, pot, c):
    assert abs(pressure_of(sft2, pot + c).value - pressure_of(sft2, pot).value - c) < 1e-10


def test_period_two_component_pressure_zero():
    al = Alphabet.free(2)
    A = AutomaticStructure(4, ((STAR, 2, "a"), (2, 3, "b"), (3, 2, "a"),
                               (2, AUGMENT, None), (3, AUGMENT, None)), al)
    comp = [c for c in scc_decomposition(A) if c.period == 2][0]
    for k in (1, 2, 3):
        sft = refine_to_blocks(A, comp, k)
        assert abs(pressure_of(sft, np.zeros(sft.n_transitions)).value) < 1e-12


def edge_chain_variance(sft, eq, f):
    """Independent oracle: Green-Kubo on the dense edge chain via its fundamental matrix."""
    m = sft.n_transitions
    P = np.zeros((m, m))
    for e in range(m):
        nxt = np.flatnonzero(sft.src == sft.dst[e])
        P[e, nxt] = eq.kernel[nxt]
    nu = eq.edge_probs
    fb = f - nu @ f
    Z = np.linalg.inv(np.eye(m) - P + np.outer(np.ones(m), nu))
    return float(nu @ fb ** 2 + 2 * nu @ (fb * (Z @ fb - fb)))


@given(arrays(float, 36, elements=st.floats(-1, 1)), arrays(float, 36, elements=st.floats(-2, 2)))
@settings(max_examples=25)
def test_asymptotic_variance_oracle(sft2, pot, f):
    _, eq = equilibrium_at(sft2, pot)
    v = asymptotic_variance(sft2, eq, f)
    ref = edge_chain_variance(sft2, eq, f)
    series, _ = autocovariance_series(sft2, eq, f)
    assert v == pytest.approx(ref, rel=1e-8, abs=1e-10)
    assert series == pytest.approx(ref, rel=1e-8, abs=1e-10)


def test_equilibrium_of_zero_potential(sft2):
    _, eq = equilibrium_at(sft2, np.zeros(sft2.n_transitions))
    assert eq.state_probs.sum() == pytest.approx(1.0)
    assert eq.entropy == pytest.approx(LOG3, abs=1e-12)
    # stationarity: inflow equals state mass
    inflow = np.bincount(sft2.dst, weights=eq.edge_probs, minlength=sft2.n_states)
    assert np.allclose(inflow, eq.state_probs)


def test_degenerate_pair_is_a_line(coding2, F2):
    w = word_metric(F2)
    sft = maximal_sfts(coding2, 3)[0]
    pw = sft.values(busemann_potential(w, coding2, 3))
    p2 = sft.values(busemann_potential(scale_metric(w, 2.0), coding2, 3))
    r = distortion_constants(sft, pw, p2)
    assert r.tau == pytest.approx(2.0, abs=1e-12)
    assert r.sigma2 <= 1e-12 and abs(r.sigma2_curve) <= 1e-8
    curve = manhattan_curve(sft, p2, pw, np.linspace(-0.5, 0.5, 11))
    assert curve.chord_deviation() <= 1e-8
    # theta(s) = v_w - 2 s exactly
    assert np.allclose(curve.theta, LOG3 - 2 * curve.s, atol=1e-9)


def test_theta_endpoints(coding2, green_small):
    dn, du = green_small[:2]
    sft = maximal_sfts(coding2, 2)[0]
    pd = sft.values(busemann_potential(dn, coding2, 2))
    ps = sft.values(busemann_potential(du, coding2, 2))
    v_d = critical_exponent(sft, pd)
    v_s = critical_exponent(sft, ps)
    assert manhattan_theta(sft, ps, pd, 0.0) == pytest.approx(v_d, abs=1e-10)
    assert manhattan_theta(sft, ps, pd, v_s) == pytest.approx(0.0, abs=1e-9)


def test_routes_agree_and_depth_stable(coding2, green_small):
    dn, du = green_small[:2]
    out = []
    for k in (2, 3, 4):
        sft = maximal_sfts(coding2, k)[0]
        pd = sft.values(busemann_potential(dn, coding2, k))
        ps = sft.values(busemann_potential(du, coding2, k))
        r = distortion_constants(sft, pd, ps)
        assert r.routes_agree
        assert r.sigma2_fd == pytest.approx(r.sigma2, rel=1e-4)
        assert r.sigma2_series == pytest.approx(r.sigma2, rel=1e-8)
        assert r.sigma2_normalized == pytest.approx(r.sigma2 * r.v_d / r.tau ** 2, rel=1e-10)
        out.append((r.tau, r.sigma2))
    taus = [t for t, _ in out]
    assert max(taus) - min(taus) < 1e-9


def test_normalize_pair(coding2, green_small):
    dn, du = green_small[:2]
    pa = analyze_pair(coding2, dn, du, 2, 6)
    r = pa.report
    dn2, du2, rec = normalize_pair(dn, du, r.v_d, r.tau)
    pb = analyze_pair(coding2, dn2, du2, 2, 6)
    assert pb.report.v_d == pytest.approx(1.0, abs=1e-9)
    assert pb.report.tau == pytest.approx(1.0, abs=1e-9)
    assert pb.report.sigma2 == pytest.approx(r.sigma2_normalized, rel=1e-8)
    assert pa.agreement.passed


def test_bracket_error_for_nonpositive(coding2):
    sft = maximal_sfts(coding2, 1)[0]
    with pytest.raises(BracketError):
        manhattan_theta(sft, np.zeros(sft.n_transitions), np.zeros(sft.n_transitions), 0.0)


def test_depth_mismatch(coding2):
    sft = maximal_sfts(coding2, 2)[0]
    with pytest.raises(ValueError):
        sft.values(constant_potential(coding2, 3))
