"""Transfer matrices, pressure, equilibrium states and the Manhattan curve.

Depth-``k`` potentials live on ``(k+1)``-vertex cylinders.  Recoding a
component by its ``k``-blocks turns each such cylinder into one transition,
so every transfer operator below is a sparse nonnegative matrix on blocks.
Potentials are passed around as arrays aligned with the transitions.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coding import AUGMENT, AutomaticStructure, ComponentInfo, scc_decomposition
from .linalg import perron
from .potentials import CylinderPotential

FD_STEPS = (1e-2, 5e-3, 2.5e-3)


class BracketError(RuntimeError):
    pass


@dataclass(frozen=True)
class BlockSFT:
    component: ComponentInfo
    k: int
    states: tuple[tuple[int, ...], ...]
    src: np.ndarray
    dst: np.ndarray
    cylinders: tuple[tuple[int, ...], ...]

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_transitions(self) -> int:
        return len(self.src)

    def adjacency(self) -> sp.csr_matrix:
        return self.matrix(np.ones(self.n_transitions))

    def matrix(self, weights: np.ndarray) -> sp.csr_matrix:
        n = self.n_states
        return sp.csr_matrix((weights, (self.src, self.dst)), shape=(n, n))

    def values(self, psi: CylinderPotential) -> np.ndarray:
        if psi.depth != self.k:
            raise ValueError(f"potential depth {psi.depth} does not match block length {self.k}")
        try:
            return psi.on(self.cylinders)
        except KeyError as exc:
            raise ValueError(f"potential has no value on cylinder {exc.args[0]}") from None


def refine_to_blocks(A: AutomaticStructure, component: ComponentInfo, k: int) -> BlockSFT:
    """Higher-block recoding of a component: states are ``k``-vertex paths."""
    if k < 1:
        raise ValueError("k must be at least 1")
    inside = set(component.vertices)
    succ: dict[int, list[int]] = {v: [] for v in component.vertices}
    for u, v, _ in A.letter_edges:
        if u in inside and v in inside and v != AUGMENT and v not in succ[u]:
            succ[u].append(v)
    for v in succ:
        succ[v].sort()
    blocks = [(v,) for v in sorted(inside)]
    for _ in range(k - 1):
        blocks = [b + (w,) for b in blocks for w in succ[b[-1]]]
    if not blocks:
        raise ValueError("component has no admissible blocks")
    index = {b: i for i, b in enumerate(blocks)}
    src, dst, cyl = [], [], []
    for i, b in enumerate(blocks):
        for w in succ[b[-1]]:
            c = b + (w,)
            j = index.get(c[1:])
            if j is not None:
                src.append(i)
                dst.append(j)
                cyl.append(c)
    return BlockSFT(component, k, tuple(blocks), np.array(src, dtype=np.int64),
                    np.array(dst, dtype=np.int64), tuple(cyl))


@dataclass(frozen=True)
class TransferMatrix:
    component_id: int
    sft: BlockSFT
    log_weights: np.ndarray
    s: float = 0.0
    t: float = 0.0

    @property
    def log_shift(self) -> float:
        return float(self.log_weights.max()) if len(self.log_weights) else 0.0

    @property
    def matrix(self) -> sp.csr_matrix:
        """Entries ``exp(log_weights - log_shift)``; Perron value scaled by ``e^{-shift}``."""
        return self.sft.matrix(np.exp(self.log_weights - self.log_shift))


def transfer_from_values(sft: BlockSFT, potential: np.ndarray, s=0.0, t=0.0) -> TransferMatrix:
    """Transfer matrix with weights ``exp(potential)`` on the transitions."""
    potential = np.asarray(potential, dtype=float)
    if potential.shape != (sft.n_transitions,):
        raise ValueError("potential array does not match the transitions")
    return TransferMatrix(sft.component.id, sft, potential, float(s), float(t))


def build_transfer(sft: BlockSFT, psi_d: CylinderPotential, phi: CylinderPotential,
                   s: float, t: float) -> TransferMatrix:
    """Weights ``exp(-s psi_d - t phi)`` on block transitions."""
    if psi_d.depth != phi.depth:
        raise ValueError("potentials have different depths")
    return transfer_from_values(sft, -s * sft.values(psi_d) - t * sft.values(phi), s, t)


@dataclass(frozen=True)
class PressurePoint:
    s: float
    t: float
    value: float
    left: np.ndarray
    right: np.ndarray
    residual: float
    component_id: int
    scaled_eigenvalue: float
    log_shift: float

    @property
    def eigenvalue(self) -> float:
        return math.exp(self.value)


def pressure(M: TransferMatrix, tol: float = 1e-13) -> PressurePoint:
    """``log`` of the Perron value, by shifted power iteration."""
    pd = perron(M.matrix, tol=tol)
    return PressurePoint(M.s, M.t, math.log(pd.eigenvalue) + M.log_shift, pd.left, pd.right,
                         pd.residual, M.component_id, pd.eigenvalue, M.log_shift)


def pressure_of(sft: BlockSFT, potential: np.ndarray, tol: float = 1e-13) -> PressurePoint:
    return pressure(transfer_from_values(sft, potential), tol)


@dataclass(frozen=True)
class EquilibriumState:
    state_probs: np.ndarray
    edge_probs: np.ndarray
    kernel: np.ndarray
    entropy: float

    def integrate(self, f: np.ndarray) -> float:
        return float(self.edge_probs @ f)


def equilibrium_measure(point: PressurePoint, M: TransferMatrix) -> EquilibriumState:
    """Shift-invariant Markov measure from the Perron vectors.

    ``pi_i = l_i r_i`` and ``Q_ij = M_ij r_j / (lambda r_i)``.
    """
    sft = M.sft
    w = np.exp(M.log_weights - M.log_shift)
    l, r = point.left, point.right
    lam = point.scaled_eigenvalue
    Q = w * r[sft.dst] / (lam * r[sft.src])
    pi = l * r
    pi = pi / pi.sum()
    # renormalise rows against round-off
    rows = np.bincount(sft.src, weights=Q, minlength=sft.n_states)
    Q = Q / rows[sft.src]
    edge = pi[sft.src] * Q
    with np.errstate(divide="ignore"):
        ent = -float(np.sum(edge * np.where(Q > 0, np.log(Q), 0.0)))
    return EquilibriumState(pi, edge, Q, ent)


def equilibrium_at(sft: BlockSFT, potential: np.ndarray, tol: float = 1e-13):
    M = transfer_from_values(sft, potential)
    pt = pressure(M, tol)
    return pt, equilibrium_measure(pt, M)


def asymptotic_variance(sft: BlockSFT, eq: EquilibriumState, f: np.ndarray) -> float:
    """Green-Kubo variance of ``f`` (on transitions) under the equilibrium chain.

    ``sigma^2 = E[fbar^2] + 2 a . Z gbar`` with ``gbar_i = sum_j Q_ij fbar_ij``,
    ``a_j = sum_i pi_i Q_ij fbar_ij`` and ``Z gbar`` the Poisson solution
    ``(I - Q) x = gbar``, ``pi . x = 0``.  The bordered solve is valid for
    periodic chains, where the plain autocovariance series does not converge.
    """
    f = np.asarray(f, dtype=float)
    mean = eq.integrate(f)
    fb = f - mean
    n = sft.n_states
    g = np.bincount(sft.src, weights=eq.kernel * fb, minlength=n)
    a = np.bincount(sft.dst, weights=eq.edge_probs * fb, minlength=n)
    Q = sp.csr_matrix((eq.kernel, (sft.src, sft.dst)), shape=(n, n))
    ones = sp.csr_matrix(np.ones((n, 1)))
    pi = sp.csr_matrix(eq.state_probs[None, :])
    K = sp.bmat([[sp.identity(n) - Q, ones], [pi, None]], format="csc")
    rhs = np.append(g, 0.0)
    x = spla.spsolve(K, rhs)[:n]
    return float(eq.edge_probs @ fb ** 2 + 2.0 * a @ x)


def autocovariance_series(sft: BlockSFT, eq: EquilibriumState, f: np.ndarray,
                          tol: float = 1e-15, max_terms: int = 10_000) -> tuple[float, int]:
    """Truncated Green-Kubo sum (aperiodic components); returns (value, terms)."""
    f = np.asarray(f, dtype=float)
    fb = f - eq.integrate(f)
    n = sft.n_states
    Q = sp.csr_matrix((eq.kernel, (sft.src, sft.dst)), shape=(n, n))
    g = np.bincount(sft.src, weights=eq.kernel * fb, minlength=n)
    a = np.bincount(sft.dst, weights=eq.edge_probs * fb, minlength=n)
    total = float(eq.edge_probs @ fb ** 2)
    v = g
    small = 0
    for j in range(1, max_terms + 1):
        c = float(a @ v)
        total += 2.0 * c
        small = small + 1 if abs(c) < tol else 0
        if small >= 5:
            return total, j
        v = Q @ v
    return total, max_terms


def _root_in_t(sft: BlockSFT, base: np.ndarray, direction: np.ndarray, tol: float = 1e-13,
               guess: Optional[float] = None, max_newton: int = 5) -> tuple[float, PressurePoint]:
    """Solve ``P(base - t * direction) = 0`` for ``t``; P is decreasing in t."""

    def P(t):
        return pressure_of(sft, base - t * direction, tol)

    if guess is None:
        guess = 0.0
    lo = hi = guess
    p = P(guess).value
    step = 1.0
    if p > 0:
        while True:
            hi = lo + step
            if P(hi).value < 0:
                break
            lo, step = hi, step * 2
            if step > 1e8:
                raise BracketError("pressure stays positive: potential not eventually positive")
    else:
        while True:
            lo = hi - step
            if P(lo).value > 0:
                break
            hi, step = lo, step * 2
            if step > 1e8:
                raise BracketError("pressure stays negative: potential not eventually positive")
    while hi - lo > 1e-6:
        mid = 0.5 * (lo + hi)
        if P(mid).value > 0:
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    for _ in range(max_newton):
        M = transfer_from_values(sft, base - t * direction)
        pt = pressure(M, tol)
        if abs(pt.value) <= 1e-15:
            break
        eq = equilibrium_measure(pt, M)
        dP = -eq.integrate(direction)
        if dP >= 0:
            raise BracketError("pressure not decreasing in t")
        t_new = t - pt.value / dP
        if not (lo - 1e-6 <= t_new <= hi + 1e-6):
            break
        t = t_new
    pt = P(t)
    if abs(pt.value) > 1e-10:
        raise BracketError(f"root not resolved: P = {pt.value:.3e} at t = {t}")
    return t, pt


def manhattan_theta(sft: BlockSFT, psi_star: np.ndarray, psi_d: np.ndarray, s: float,
                    tol: float = 1e-13, guess: Optional[float] = None) -> float:
    """``theta(s)``: the ``t`` with ``P(-s psi_star - t psi_d) = 0``."""
    t, _ = _root_in_t(sft, -s * np.asarray(psi_star, float), np.asarray(psi_d, float), tol, guess)
    return t


def critical_exponent(sft: BlockSFT, psi: np.ndarray, tol: float = 1e-13) -> float:
    """Growth rate from pressure: the ``u`` with ``P(-u psi) = 0``."""
    return manhattan_theta(sft, np.zeros_like(psi), psi, 0.0, tol)


@dataclass(frozen=True)
class NormalizationRecord:
    v_d: float
    tau_raw: float
    scale_d: float
    scale_star: float

    def to_dict(self) -> dict:
        return asdict(self)


def normalization_record(v_d: float, tau_raw: float) -> NormalizationRecord:
    if not (v_d > 0 and tau_raw > 0):
        raise ValueError("growth rate and mean distortion must be positive")
    return NormalizationRecord(v_d, tau_raw, v_d, v_d / tau_raw)


def normalize_pair(d, d_star, v_d: float, tau_raw: float):
    """``(v_d d, (v_d/tau) d_star, record)``: growth rate 1 and mean distortion 1."""
    from .metrics import scale_metric

    rec = normalization_record(v_d, tau_raw)
    return scale_metric(d, rec.scale_d), scale_metric(d_star, rec.scale_star), rec


@dataclass
class ManhattanCurve:
    s: np.ndarray
    theta: np.ndarray
    dtheta0: float
    d2theta0: float
    normalization: Optional[NormalizationRecord] = None

    def second_differences(self) -> np.ndarray:
        s, th = self.s, self.theta
        h1 = s[1:-1] - s[:-2]
        h2 = s[2:] - s[1:-1]
        return 2 * (h1 * th[2:] - (h1 + h2) * th[1:-1] + h2 * th[:-2]) / (h1 * h2 * (h1 + h2))

    def chord_deviation(self) -> float:
        s, th = self.s, self.theta
        chord = th[0] + (th[-1] - th[0]) * (s - s[0]) / (s[-1] - s[0])
        return float(np.max(np.abs(th - chord)))


def _richardson(values: Sequence[float], order: int = 2) -> float:
    """Extrapolate values at h, h/2, h/4 assuming error expansion in h^order."""
    a = list(values)
    p = order
    while len(a) > 1:
        f = 2.0 ** p
        a = [(f * a[i + 1] - a[i]) / (f - 1.0) for i in range(len(a) - 1)]
        p += 2
    return a[0]


def curve_derivatives(sft: BlockSFT, psi_star, psi_d, steps=FD_STEPS, tol=1e-13):
    """``theta'(0)`` and ``theta''(0)`` by central differences plus Richardson."""
    th0 = manhattan_theta(sft, psi_star, psi_d, 0.0, tol)
    d1, d2 = [], []
    for h in steps:
        tp = manhattan_theta(sft, psi_star, psi_d, h, tol, guess=th0)
        tm = manhattan_theta(sft, psi_star, psi_d, -h, tol, guess=th0)
        d1.append((tp - tm) / (2 * h))
        d2.append((tp - 2 * th0 + tm) / h ** 2)
    return th0, _richardson(d1), _richardson(d2), d1, d2


def manhattan_curve(sft: BlockSFT, psi_star, psi_d, s_grid, tol=1e-13,
                    normalization: Optional[NormalizationRecord] = None) -> ManhattanCurve:
    s_grid = np.asarray(s_grid, dtype=float)
    th = []
    guess = None
    for s in s_grid:
        t = manhattan_theta(sft, psi_star, psi_d, float(s), tol, guess)
        th.append(t)
        guess = t
    _, d1, d2, _, _ = curve_derivatives(sft, psi_star, psi_d, tol=tol)
    return ManhattanCurve(s_grid, np.array(th), d1, d2, normalization)


@dataclass
class DistortionReport:
    tau: float
    sigma2: float
    v_d: float
    v_star: float
    tau_curve: float
    sigma2_curve: float
    sigma2_fd: float
    sigma2_series: float
    series_terms: int
    sigma2_normalized: float
    lambda_s: float
    lambda_t: float
    lambda_tt: float
    theta0: float
    entropy: float
    normalization: NormalizationRecord
    component_id: int
    depth: int
    resolution_error: float

    @property
    def route_discrepancy(self) -> float:
        return abs(self.sigma2 - self.sigma2_curve)

    @property
    def agreement_tolerance(self) -> float:
        return max(1e-4, 0.02 * abs(self.sigma2))

    @property
    def routes_agree(self) -> bool:
        return self.route_discrepancy <= self.agreement_tolerance

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "normalization"}
        out["normalization"] = self.normalization.to_dict()
        out["route_discrepancy"] = self.route_discrepancy
        out["routes_agree"] = self.routes_agree
        out["routes"] = {"tau": "spectral", "sigma2": "spectral",
                         "tau_curve": "curve", "sigma2_curve": "curve",
                         "sigma2_fd": "spectral-fd", "sigma2_series": "spectral-series"}
        return out


def distortion_constants(sft: BlockSFT, psi_d: np.ndarray, psi_star: np.ndarray,
                         tol: float = 1e-13, resolution_error: float = 0.0) -> DistortionReport:
    """``tau`` and ``sigma^2`` of ``d_star`` relative to ``d`` in user units.

    Spectral route: with ``mu`` the equilibrium state of ``-v_d psi_d``,
    ``tau = int psi_star / int psi_d`` and ``sigma^2 = Var(psi_star - tau
    psi_d) / int psi_d`` (asymptotic variance).  In normalised units
    (``psi' = v_d psi_d``, ``phi = (v_d/tau) psi_star - psi'``) this is
    ``-lambda_tt/lambda_s``; the record maps one to the other.  Curve
    route: finite differences of ``theta``.
    """
    psi_d = np.asarray(psi_d, float)
    psi_star = np.asarray(psi_star, float)
    v_d = critical_exponent(sft, psi_d, tol)
    v_star = critical_exponent(sft, psi_star, tol)
    _, eq = equilibrium_at(sft, -v_d * psi_d, tol)
    Id = eq.integrate(psi_d)
    Is = eq.integrate(psi_star)
    tau = Is / Id
    f = psi_star - tau * psi_d
    var_f = max(asymptotic_variance(sft, eq, f), 0.0) if np.ptp(f) > 0 else 0.0
    series, terms = autocovariance_series(sft, eq, f)
    sigma2 = var_f / Id
    rec = normalization_record(v_d, tau)
    psi_n = v_d * psi_d
    phi = rec.scale_star * psi_star - psi_n
    lam_s = -eq.integrate(psi_n)
    lam_t = eq.integrate(phi)
    lam_tt = rec.scale_star ** 2 * var_f
    sig_norm = -lam_tt / lam_s
    # second difference of P(-psi' - t phi) in t
    fd = []
    p0 = pressure_of(sft, -psi_n, tol).value
    for h in FD_STEPS:
        pp = pressure_of(sft, -psi_n - h * phi, tol).value
        pm = pressure_of(sft, -psi_n + h * phi, tol).value
        fd.append((pp - 2 * p0 + pm) / h ** 2)
    lam_tt_fd = _richardson(fd)
    # convert normalised sigma^2 back: sigma2_user = sigma2_norm * tau^2 / v_d
    sigma2_fd = (-lam_tt_fd / lam_s) * tau ** 2 / v_d
    th0, d1, d2, _, _ = curve_derivatives(sft, psi_star, psi_d, tol=tol)
    return DistortionReport(
        tau=tau, sigma2=sigma2, v_d=v_d, v_star=v_star, tau_curve=-d1, sigma2_curve=d2,
        sigma2_fd=sigma2_fd, sigma2_series=series / Id, series_terms=terms,
        sigma2_normalized=sig_norm, lambda_s=lam_s, lambda_t=lam_t, lambda_tt=lam_tt,
        theta0=th0, entropy=eq.entropy, normalization=rec, component_id=sft.component.id,
        depth=sft.k, resolution_error=resolution_error)


@dataclass
class AgreementReport:
    components: list[int]
    grid: list[tuple[float, float]]
    pressures: np.ndarray
    discrepancy: np.ndarray
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.discrepancy <= self.tolerance))

    @property
    def max_discrepancy(self) -> float:
        return float(self.discrepancy.max()) if self.discrepancy.size else 0.0


def maximal_sfts(A: AutomaticStructure, k: int) -> list[BlockSFT]:
    return [refine_to_blocks(A, c, k) for c in scc_decomposition(A) if c.is_word_maximal]


def pressure_agreement(A: AutomaticStructure, psi_d: CylinderPotential, phi: CylinderPotential,
                       grid: Sequence[tuple[float, float]], tol: float = 1e-8) -> AgreementReport:
    sfts = maximal_sfts(A, psi_d.depth)
    if not sfts:
        raise ValueError("no word-maximal component")
    P = np.array([[pressure(build_transfer(sft, psi_d, phi, s, t)).value for sft in sfts]
                  for s, t in grid])
    disc = P.max(axis=1) - P.min(axis=1)
    return AgreementReport([sft.component.id for sft in sfts], list(grid), P, disc, tol)


@dataclass
class PairAnalysis:
    sft: BlockSFT
    psi_d: CylinderPotential
    psi_star: CylinderPotential
    report: DistortionReport
    agreement: AgreementReport
    error_bars: dict

    @property
    def phi(self) -> CylinderPotential:
        """``Phi = psi_star' - psi_d'`` in normalised units."""
        rec = self.report.normalization
        return self.psi_star.scaled(rec.scale_star) - self.psi_d.scaled(rec.scale_d)


def _spectral_summary(sft, psi_d, psi_star, tol):
    v_d = critical_exponent(sft, psi_d, tol)
    v_s = critical_exponent(sft, psi_star, tol)
    _, eq = equilibrium_at(sft, -v_d * psi_d, tol)
    Id = eq.integrate(psi_d)
    tau = eq.integrate(psi_star) / Id
    f = psi_star - tau * psi_d
    var = max(asymptotic_variance(sft, eq, f), 0.0) if np.ptp(f) > 0 else 0.0
    return np.array([tau, var / Id, v_d, v_s, v_d / v_s])


def _letter_error_vectors(A, sft, metric):
    """Per-letter perturbation directions for metrics with per-letter errors."""
    errs = getattr(metric, "letter_errors", None)
    if errs is None or not np.any(errs > 0):
        return []
    lab = A.edge_label
    first = np.array([metric.alphabet.index(lab[(c[0], c[1])]) for c in sft.cylinders])
    return [np.where(first == i, errs[i], 0.0) for i in range(len(errs)) if errs[i] > 0]


def analyze_pair(A: AutomaticStructure, d, d_star, depth: int = 4, horizon: Optional[int] = None,
                 tol: float = 1e-13, seed: int = 0, n_alternatives: int = 4,
                 grid: Optional[Sequence[tuple[float, float]]] = None) -> PairAnalysis:
    """Potentials, constants, pressure agreement and error bars for a pair ``(d, d*)``.

    Error bars propagate per-letter metric errors (Green tables) and the
    Busemann resolution error through the spectral route, summing absolute
    first-order changes.
    """
    from .potentials import busemann_potential

    psi_d = busemann_potential(d, A, depth, horizon, n_alternatives, seed, name="d")
    psi_s = busemann_potential(d_star, A, depth, horizon, n_alternatives, seed, name="d_star")
    sfts = maximal_sfts(A, depth)
    if not sfts:
        raise ValueError("no word-maximal component")
    sft = sfts[0]
    vd, vs = sft.values(psi_d), sft.values(psi_s)
    res = psi_d.resolution_error + psi_s.resolution_error
    report = distortion_constants(sft, vd, vs, tol, res)
    base = _spectral_summary(sft, vd, vs, tol)
    err = np.zeros_like(base)
    for dv in _letter_error_vectors(A, sft, d):
        err += np.abs(_spectral_summary(sft, vd + dv, vs, tol) - base)
    for dv in _letter_error_vectors(A, sft, d_star):
        err += np.abs(_spectral_summary(sft, vd, vs + dv, tol) - base)
    for pot, which in ((psi_d, 0), (psi_s, 1)):
        if pot.resolution_error > 0:
            e = np.full(sft.n_transitions, pot.resolution_error)
            args = (vd + e, vs) if which == 0 else (vd, vs + e)
            err += np.abs(_spectral_summary(sft, *args, tol) - base)
    names = ("tau", "sigma2", "v_d", "v_star", "v_ratio")
    rec = report.normalization
    phi = psi_s.scaled(rec.scale_star) - psi_d.scaled(rec.scale_d)
    grid = grid if grid is not None else [(s, t) for s in (0.95, 1.0, 1.05) for t in (-0.05, 0.0, 0.05)]
    agreement = pressure_agreement(A, psi_d.scaled(rec.scale_d), phi, grid)
    return PairAnalysis(sft, psi_d, psi_s, report, agreement, dict(zip(names, err.tolist())))
