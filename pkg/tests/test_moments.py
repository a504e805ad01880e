import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from conftest import EPS_Z1, hold_system, random_spd, random_system
from maxcovar.core import (
    AffineFeedbackLaw,
    GaussianBelief,
    HalfspaceChanceConstraint,
    InvalidArgumentError,
    LinearGaussianSystem,
    PlanningScene,
    psd_order_leq,
)
from maxcovar.moments import (
    check_maneuver,
    control_chance_margin,
    covariances_psd,
    normal_inverse_cdf,
    propagate,
    state_chance_margin,
)


@pytest.mark.parametrize("p, z, tol", [(0.5, 0.0, 1e-15), (0.8413447, 1.0, 1e-6), (0.97725, 2.0, 1e-4)])
def test_normal_inverse_cdf_values(p, z, tol):
    assert normal_inverse_cdf(p) == pytest.approx(z, abs=tol)


def test_normal_inverse_cdf_against_scipy():
    ps = np.concatenate([np.linspace(1e-12, 1e-3, 50), np.linspace(1e-3, 1 - 1e-3, 400),
                         1 - np.logspace(-3, -12, 50)])
    worst = max(abs(normal_inverse_cdf(p) - norm.ppf(p)) for p in ps)
    assert worst <= 1e-9


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_normal_inverse_cdf_domain(p):
    with pytest.raises(InvalidArgumentError):
        normal_inverse_cdf(p)


def test_propagate_scalar_example():
    system = LinearGaussianSystem([[1.0]], [[1.0]], [[0.5]])
    law = AffineFeedbackLaw.from_steps([([[-0.5]], [0.0])])
    traj = propagate(system, GaussianBelief([2.0], [[1.0]]), law)
    assert traj.means[1][0] == pytest.approx(2.0)
    assert traj.covariances[1][0, 0] == pytest.approx(0.5)


def test_propagate_identity_case(rng):
    system = hold_system(3, 2)
    S0 = random_spd(rng, 3, 0.1, 2.0)
    law = AffineFeedbackLaw.from_steps([(np.zeros((2, 3)), np.zeros(2))] * 5)
    traj = propagate(system, GaussianBelief([1.0, 2.0, 3.0], S0), law)
    assert len(traj) == 6 and traj.steps == 5
    for mu, S in zip(traj.means, traj.covariances):
        np.testing.assert_allclose(mu, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(S, S0, atol=1e-15)


def test_propagate_dimension_mismatch():
    system = hold_system(2)
    with pytest.raises(InvalidArgumentError):
        propagate(system, GaussianBelief([0.0, 0.0], np.eye(2)),
                  AffineFeedbackLaw.from_steps([(np.zeros((1, 2)), [0.0])]))
    with pytest.raises(InvalidArgumentError):
        propagate(system, GaussianBelief([0.0], np.eye(1)),
                  AffineFeedbackLaw.from_steps([(np.zeros((2, 2)), [0.0, 0.0])]))


def _random_law(rng, n, m, L, scale=0.3):
    return AffineFeedbackLaw.from_steps([(scale * rng.standard_normal((m, n)), rng.standard_normal(m))
                                         for _ in range(L)])


def test_propagation_preserves_psd(rng):
    for _ in range(50):
        n, m = rng.integers(1, 5), rng.integers(1, 3)
        system = random_system(rng, n, m)
        S0 = random_spd(rng, n, 0.0, 3.0)
        traj = propagate(system, GaussianBelief(np.zeros(n), S0), _random_law(rng, n, m, 8))
        assert covariances_psd(traj)


def test_superposition_in_initial_covariance(rng):
    n, m = 3, 2
    system = random_system(rng, n, m)
    law = _random_law(rng, n, m, 6)
    X, Y = random_spd(rng, n, 0.1, 2.0), random_spd(rng, n, 0.1, 2.0)

    def covs(S):
        return propagate(system, GaussianBelief(np.zeros(n), S), law).covariances

    for a, b, c, d in zip(covs(X + Y), covs(np.zeros((n, n))), covs(X), covs(Y)):
        np.testing.assert_allclose(a + b, c + d, atol=1e-8)


def test_loewner_monotonicity(rng):
    for _ in range(30):
        n, m = 3, 2
        system = random_system(rng, n, m)
        law = _random_law(rng, n, m, 5)
        S = random_spd(rng, n, 0.5, 2.0)
        S_small = S - random_spd(rng, n, 0.0, 0.4)
        big = propagate(system, GaussianBelief(np.zeros(n), S), law)
        small = propagate(system, GaussianBelief(np.zeros(n), S_small), law)
        for Sb, Ss in zip(big.covariances, small.covariances):
            assert psd_order_leq(Ss, Sb, 1e-9)


def test_state_margin_examples():
    eps = 1 - 0.97725
    c = HalfspaceChanceConstraint([1.0, 0.0], 3.0, eps)
    assert state_chance_margin([1.0, 0.0], np.eye(2), c) == pytest.approx(0.0, abs=1e-3)
    assert state_chance_margin([0.0], [[1.0]], HalfspaceChanceConstraint([1.0], 0.0, 0.5)) == 0.0
    assert state_chance_margin([2.0], [[1.0]], HalfspaceChanceConstraint([1.0], 1.0, 0.5)) == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        state_chance_margin([0.0, 0.0], [[1.0]], HalfspaceChanceConstraint([1.0], 1.0, 0.5))


def test_state_margin_monotone_in_covariance(rng):
    c = HalfspaceChanceConstraint([1.0, -0.5, 2.0], 1.0, 0.1)
    for _ in range(100):
        S = random_spd(rng, 3, 0.0, 2.0)
        bigger = S + random_spd(rng, 3, 0.0, 1.0)
        mu = rng.standard_normal(3)
        assert state_chance_margin(mu, S, c) <= state_chance_margin(mu, bigger, c) + 1e-12


def test_control_margin_examples():
    c = HalfspaceChanceConstraint([1.0], 1.0, 0.1)
    assert control_chance_margin([[0.0]], [0.5], [[3.0]], c) == pytest.approx(-0.5)
    c1 = HalfspaceChanceConstraint([1.0], 2.0, EPS_Z1)
    assert control_chance_margin([[-1.0]], [0.0], [[1.0]], c1) == pytest.approx(-1.0, abs=1e-12)


def test_control_margin_matches_sample_quantile(rng):
    K = rng.standard_normal((2, 3))
    v = np.array([0.2, -0.1])
    S = random_spd(rng, 3, 0.2, 1.0)
    alpha = np.array([1.0, 1.0])
    g = K.T @ alpha
    sd = math.sqrt(g @ S @ g)
    # choose beta so that the analytic margin is exactly zero
    c = HalfspaceChanceConstraint(alpha, normal_inverse_cdf(0.9) * sd + alpha @ v, 0.1)
    assert control_chance_margin(K, v, S, c) == pytest.approx(0.0, abs=1e-12)
    x = rng.multivariate_normal(np.zeros(3), S, size=100_000)
    u = x @ K.T + v
    rate = np.mean(u @ alpha > c.beta)
    assert abs(rate - 0.1) <= 3 * math.sqrt(0.1 * 0.9 / 100_000)


def test_epsilon_zero_is_infinitely_tight():
    c = HalfspaceChanceConstraint([1.0], 1.0, 0.0)
    assert state_chance_margin([0.0], [[1.0]], c) == math.inf
    assert state_chance_margin([0.0], [[0.0]], c) == -1.0


def test_check_maneuver_examples():
    system = hold_system(2)
    scene = PlanningScene((), (), np.eye(2), np.eye(2))
    law = AffineFeedbackLaw.from_steps([(np.zeros((2, 2)), np.zeros(2))])
    start = GaussianBelief(np.zeros(2), 0.5 * np.eye(2))
    rep = check_maneuver(system, start, law, scene, GaussianBelief(np.zeros(2), np.eye(2)), True)
    assert rep.passed and rep.terminal_ok and rep.mean_error == 0.0
    rep = check_maneuver(system, start, law, scene, GaussianBelief(np.zeros(2), 0.25 * np.eye(2)), True)
    assert not rep.passed and not rep.terminal_ok


def test_check_maneuver_spectral_vs_loewner():
    system = hold_system(2)
    scene = PlanningScene((), (), np.eye(2), np.eye(2))
    law = AffineFeedbackLaw.from_steps([(np.zeros((2, 2)), np.zeros(2))])
    start = GaussianBelief(np.zeros(2), np.diag([0.5, 1.5]))
    goal = GaussianBelief(np.zeros(2), np.diag([1.0, 2.0]))
    assert check_maneuver(system, start, law, scene, goal, spectral_terminal=False).passed
    assert not check_maneuver(system, start, law, scene, goal, spectral_terminal=True).passed


def test_check_maneuver_flags_mean_and_margins():
    system = hold_system(1)
    ctl = (HalfspaceChanceConstraint([1.0], 0.4, 0.5),)
    scene = PlanningScene((), ctl, np.eye(1), np.eye(1))
    law = AffineFeedbackLaw.from_steps([([[0.0]], [0.5])])
    goal = GaussianBelief([0.5], [[1.0]])
    rep = check_maneuver(system, GaussianBelief([0.0], [[0.5]]), law, scene, goal)
    assert rep.mean_error == pytest.approx(0.0)
    assert rep.worst_control_margin == pytest.approx(0.1)
    assert not rep.passed
    d = json.loads(json.dumps(rep.to_dict()))
    assert set(d) == {"pass", "mean_error", "terminal_ok", "worst_state_margin",
                      "worst_control_margin", "per_step"}
    assert d["pass"] is False and d["worst_state_margin"] is None
