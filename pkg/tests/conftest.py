import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from maxcovar.core import (  # noqa: E402
    GaussianBelief,
    HalfspaceChanceConstraint,
    LinearGaussianSystem,
    PlanningScene,
)
from maxcovar.moments import normal_inverse_cdf  # noqa: E402

# epsilon with Phi^{-1}(1 - epsilon) = 1
EPS_Z1 = 1.0 - 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))

_CRITERIA: list = []


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    """Register a one-line pass/fail verdict, shown in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def scalar_benchmark():
    """A = B = 1, D = 0, |u| <= 1 with Phi^{-1}(1 - eps) = 1 (so c = 1), Y_r = 1."""
    assert abs(normal_inverse_cdf(1 - EPS_Z1) - 1.0) < 1e-9
    system = LinearGaussianSystem(np.eye(1), np.eye(1), np.zeros((1, 1)))
    ctl = (HalfspaceChanceConstraint([1.0], 1.0, EPS_Z1), HalfspaceChanceConstraint([-1.0], 1.0, EPS_Z1))
    scene = PlanningScene((), ctl, np.eye(1), np.eye(1))
    goal = GaussianBelief([0.0], [[1.0]])
    return system, scene, goal


def hold_system(n: int, m: int | None = None):
    """A = I, B = I, D = 0: the system that can stay put at zero cost."""
    m = n if m is None else m
    return LinearGaussianSystem(np.eye(n), np.eye(n)[:, :m], np.zeros((n, n)))


def random_system(rng, n: int, m: int, noise: float = 0.05) -> LinearGaussianSystem:
    A = np.eye(n) + 0.15 * rng.standard_normal((n, n))
    B = rng.standard_normal((n, m)) / math.sqrt(n)
    D = noise * (np.eye(n) + 0.3 * rng.standard_normal((n, n)))
    return LinearGaussianSystem(A, B, D)


def random_spd(rng, n: int, lo: float, hi: float) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * rng.uniform(lo, hi, n)) @ Q.T


def box_scene(n: int, m: int, beta: float, eps: float, sigma_ref=1.0, y_ref=1.0,
              state_bound: float | None = None, state_eps: float = 0.05) -> PlanningScene:
    ctl = []
    for i in range(m):
        for s in (1.0, -1.0):
            a = np.zeros(m)
            a[i] = s
            ctl.append(HalfspaceChanceConstraint(a, beta, eps))
    st = []
    if state_bound is not None:
        for s in (1.0, -1.0):
            a = np.zeros(n)
            a[0] = s
            st.append(HalfspaceChanceConstraint(a, state_bound, state_eps))
    return PlanningScene(tuple(st), tuple(ctl), sigma_ref * np.eye(n), y_ref * np.eye(m))
