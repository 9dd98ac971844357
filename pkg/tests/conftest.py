import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hypstat.coding import build_free_group_coding
from hypstat.green import FiniteMeasure, green_metric
from hypstat.group import FreeGroup

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def F2():
    return FreeGroup(2)


@pytest.fixture(scope="session")
def coding2():
    return build_free_group_coding(2)


@pytest.fixture(scope="session")
def nonuniform_mu(F2):
    return FiniteMeasure.nearest_neighbour(F2, {"a": 0.35, "b": 0.15})


@pytest.fixture(scope="session")
def green_small(F2, nonuniform_mu):
    """Radius-8 Green metrics: cheap enough for unit tests."""
    dn, tn, _ = green_metric(nonuniform_mu, 8, 120)
    du, tu, _ = green_metric(FiniteMeasure.uniform(F2), 8, 120)
    return dn, du, tn, tu


def first_passage(weights: dict[str, float], iters: int = 2000) -> dict[str, float]:
    """Oracle for symmetric nearest-neighbour walks on free groups.

    On the tree, reaching ``x`` from a neighbour ``y != x`` of ``o`` means
    returning to ``o`` first, so ``F_x = mu(x) + sum_{y != x} mu(y) F_y F_x``.
    """
    F = {x: 0.0 for x in weights}
    for _ in range(iters):
        F = {x: weights[x] / (1.0 - sum(weights[y] * F[y] for y in weights if y != x))
             for x in weights}
    return F


def oracle_distance(F: dict[str, float], g: str) -> float:
    return float(sum(-np.log(F[x]) for x in g))
