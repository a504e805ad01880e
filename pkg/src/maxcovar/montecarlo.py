"""Sampling-based checks of steering controllers."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import (
    PSD_TOL,
    AffineFeedbackLaw,
    GaussianBelief,
    HalfspaceChanceConstraint,
    InvalidArgumentError,
    LinearGaussianSystem,
    PlanningScene,
)
from .moments import MomentTrajectory, propagate


@dataclass(frozen=True)
class RolloutSamples:
    """``states`` has shape (trials, L+1, n); ``controls`` has shape (trials, L, m)."""

    states: np.ndarray
    controls: np.ndarray
    nominal: MomentTrajectory

    @property
    def trials(self) -> int:
        return self.states.shape[0]


def _sqrt_factor(S: np.ndarray) -> np.ndarray:
    """``F`` with ``F F' = S``; Cholesky, or eigen-factor with negative eigenvalues clipped."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(S)
        return V * np.sqrt(np.clip(w, 0.0, None))


def rollout(system: LinearGaussianSystem, initial: GaussianBelief, law: AffineFeedbackLaw,
            trials: int, rng: np.random.Generator) -> RolloutSamples:
    """Simulate ``trials`` closed-loop trajectories of the stochastic system.

    Feedback acts on the deviation from the analytically propagated mean.
    """
    if np.linalg.eigvalsh(initial.covariance)[0] < -PSD_TOL:
        raise InvalidArgumentError("initial covariance is not PSD")
    nominal = propagate(system, initial, law)
    n, m, L = system.n, system.m, len(law)
    trials = int(trials)
    states = np.empty((trials, L + 1, n))
    controls = np.empty((trials, L, m))
    if trials == 0:
        return RolloutSamples(states, controls, nominal)
    F = _sqrt_factor(initial.covariance)
    x = initial.mean + rng.standard_normal((trials, n)) @ F.T
    states[:, 0] = x
    A, B, D = system.a, system.b, system.d
    for k, (K, v) in enumerate(law.steps):
        u = (x - nominal.means[k]) @ K.T + v
        controls[:, k] = u
        x = x @ A.T + u @ B.T + rng.standard_normal((trials, n)) @ D.T
        states[:, k + 1] = x
    return RolloutSamples(states, controls, nominal)


def empirical_violation_rate(samples: RolloutSamples, c: HalfspaceChanceConstraint, k: int,
                             kind: str = "state") -> float:
    """Fraction of trajectories with ``alpha' z_k > beta``."""
    if samples.trials == 0:
        return 0.0
    z = samples.states[:, k] if kind == "state" else samples.controls[:, k]
    if z.shape[1] != c.dim:
        raise InvalidArgumentError("constraint dimension disagrees with samples")
    return float(np.mean(z @ c.alpha > c.beta))


def violation_table(samples: RolloutSamples, scene: PlanningScene) -> list:
    """Per-step violation rates for every scene constraint (steps 0..L-1)."""
    rows = []
    L = samples.controls.shape[1]
    for k in range(L):
        for i, c in enumerate(scene.state_constraints):
            rows.append({"k": k, "kind": "state", "index": i, "epsilon": c.epsilon,
                         "rate": empirical_violation_rate(samples, c, k, "state")})
        for i, c in enumerate(scene.control_constraints):
            rows.append({"k": k, "kind": "control", "index": i, "epsilon": c.epsilon,
                         "rate": empirical_violation_rate(samples, c, k, "control")})
    return rows


def rates_within_tolerance(samples: RolloutSamples, scene: PlanningScene, sigmas: float = 3.0) -> bool:
    """Every empirical rate is at most ``epsilon + sigmas * sqrt(epsilon (1 - epsilon) / trials)``."""
    T = samples.trials
    for row in violation_table(samples, scene):
        eps = row["epsilon"]
        if row["rate"] > eps + sigmas * np.sqrt(eps * (1 - eps) / T):
            return False
    return True


def sample_moments(samples: RolloutSamples):
    """Per-step empirical means and covariances."""
    means = samples.states.mean(axis=0)
    covs = [np.cov(samples.states[:, k], rowvar=False).reshape(means.shape[1], -1)
            for k in range(samples.states.shape[1])]
    return means, covs


def write_summary_csv(samples: RolloutSamples, scene: PlanningScene, path) -> None:
    """Per-step mean, covariance Frobenius norm and violation rate of each constraint."""
    means, covs = sample_moments(samples)
    table = violation_table(samples, scene)
    names = [f"state_{i}" for i in range(len(scene.state_constraints))]
    names += [f"control_{i}" for i in range(len(scene.control_constraints))]
    n = means.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", *[f"mean_{j}" for j in range(n)], "cov_fro", *names])
        for k in range(means.shape[0]):
            rates = {f"{r['kind']}_{r['index']}": r["rate"] for r in table if r["k"] == k}
            w.writerow([k, *means[k].tolist(), float(np.linalg.norm(covs[k])),
                        *[rates.get(name, "") for name in names]])
