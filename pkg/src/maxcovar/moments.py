"""Exact Gaussian moment propagation and chance-constraint margins."""

from __future__ import annotations

import math
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
    max_eigenvalue,
    min_eigenvalue,
    psd_order_leq,
    symmetrize,
)

MARGIN_TOL = 1e-7
MEAN_TOL = 1e-6

# Acklam's rational approximation to the normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    if p > 1 - _P_LOW:
        return -_acklam(1 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
        (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)


def normal_inverse_cdf(p: float) -> float:
    """Standard normal quantile, accurate to about 1e-15 in the central range.

    A rational approximation (relative error ~1e-9) followed by one Halley
    step against ``erfc``.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError(f"probability must lie in (0, 1), got {p}")
    if p > 0.5:
        # 1 - p is exact here, and refining in the lower tail avoids cancellation
        return -normal_inverse_cdf(1.0 - p)
    x = _acklam(p)
    # Halley refinement: e = Phi(x) - p
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


def quantile(c: HalfspaceChanceConstraint) -> float:
    """``Phi^{-1}(1 - epsilon)``; infinite when epsilon is zero."""
    if c.epsilon == 0.0:
        return math.inf
    return normal_inverse_cdf(1.0 - c.epsilon)


def _tightened(q: float, variance: float) -> float:
    # q * sqrt(variance), treating inf * 0 as 0
    variance = max(variance, 0.0)
    if variance == 0.0:
        return 0.0
    return q * math.sqrt(variance)


@dataclass(frozen=True)
class MomentTrajectory:
    means: tuple
    covariances: tuple

    def __post_init__(self):
        if len(self.means) != len(self.covariances) or len(self.means) < 1:
            raise InvalidArgumentError("means and covariances must have equal nonzero length")

    def __len__(self) -> int:
        return len(self.means)

    @property
    def steps(self) -> int:
        return len(self.means) - 1

    def belief(self, k: int) -> GaussianBelief:
        return GaussianBelief(self.means[k], self.covariances[k])

    def to_dict(self) -> dict:
        return {"means": [np.asarray(m).tolist() for m in self.means],
                "covariances": [np.asarray(S).tolist() for S in self.covariances]}

    @classmethod
    def from_dict(cls, data: dict) -> "MomentTrajectory":
        return cls(tuple(np.asarray(m, dtype=float) for m in data["means"]),
                   tuple(np.asarray(S, dtype=float) for S in data["covariances"]))


def _check_law(system: LinearGaussianSystem, law: AffineFeedbackLaw) -> None:
    if (law.m, law.n) != (system.m, system.n):
        raise InvalidArgumentError(
            f"law gains are {law.m}x{law.n} but system needs {system.m}x{system.n}")


def propagate(system: LinearGaussianSystem, initial: GaussianBelief,
              law: AffineFeedbackLaw) -> MomentTrajectory:
    """Closed-form mean and covariance under ``u_k = K_k (x_k - mu_k) + v_k``."""
    _check_law(system, law)
    if initial.n != system.n:
        raise InvalidArgumentError("initial belief dimension disagrees with system")
    A, B, W = system.a, system.b, system.noise_cov
    mu, S = initial.mean.copy(), initial.covariance.copy()
    means, covs = [mu], [S]
    for K, v in law.steps:
        Acl = A + B @ K
        mu = A @ mu + B @ v
        S = symmetrize(Acl @ S @ Acl.T + W)
        means.append(mu)
        covs.append(S)
    return MomentTrajectory(tuple(means), tuple(covs))


def state_chance_margin(mu_k, sigma_k, c: HalfspaceChanceConstraint) -> float:
    """Left-hand side of the deterministic state chance constraint (<= 0 is satisfied)."""
    mu_k = np.atleast_1d(np.asarray(mu_k, dtype=float))
    sigma_k = np.atleast_2d(np.asarray(sigma_k, dtype=float))
    if mu_k.size != c.dim or sigma_k.shape != (c.dim, c.dim):
        raise InvalidArgumentError("state constraint dimension mismatch")
    a = c.alpha
    return _tightened(quantile(c), a @ sigma_k @ a) + a @ mu_k - c.beta


def control_chance_margin(K_k, v_k, sigma_k, c: HalfspaceChanceConstraint) -> float:
    """Left-hand side of the deterministic control chance constraint (<= 0 is satisfied)."""
    K_k = np.atleast_2d(np.asarray(K_k, dtype=float))
    v_k = np.atleast_1d(np.asarray(v_k, dtype=float))
    sigma_k = np.atleast_2d(np.asarray(sigma_k, dtype=float))
    m, n = K_k.shape
    if v_k.size != m or c.dim != m or sigma_k.shape != (n, n):
        raise InvalidArgumentError("control constraint dimension mismatch")
    a = c.alpha
    g = K_k.T @ a
    return _tightened(quantile(c), g @ sigma_k @ g) + a @ v_k - c.beta


@dataclass(frozen=True)
class ManeuverReport:
    passed: bool
    mean_error: float
    terminal_ok: bool
    worst_state_margin: float
    worst_control_margin: float
    per_step: tuple
    trajectory: MomentTrajectory

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "mean_error": self.mean_error,
            "terminal_ok": self.terminal_ok,
            # -inf (no constraints of that kind) is not valid JSON
            "worst_state_margin": self.worst_state_margin if math.isfinite(self.worst_state_margin) else None,
            "worst_control_margin": (self.worst_control_margin
                                     if math.isfinite(self.worst_control_margin) else None),
            "per_step": list(self.per_step),
        }


def terminal_covariance_ok(sigma_end, goal_cov, spectral: bool, tol: float = MARGIN_TOL) -> bool:
    """Spectral test ``lmax(S) <= lmin(G)`` or Loewner test ``S <= G``."""
    if spectral:
        return max_eigenvalue(sigma_end) <= min_eigenvalue(goal_cov) + tol
    return psd_order_leq(sigma_end, goal_cov, tol)


def check_maneuver(system: LinearGaussianSystem, initial: GaussianBelief, law: AffineFeedbackLaw,
                   scene: PlanningScene, goal: GaussianBelief, spectral_terminal: bool = True,
                   margin_tol: float = MARGIN_TOL, mean_tol: float = MEAN_TOL) -> ManeuverReport:
    """Replay ``law`` from ``initial`` and test every constraint of the maneuver.

    State and control chance constraints are checked at steps ``0..L-1``;
    the terminal mean and covariance are checked against ``goal``.
    """
    scene.check_system(system)
    if goal.n != system.n:
        raise InvalidArgumentError("goal dimension disagrees with system")
    traj = propagate(system, initial, law)
    worst_x, worst_u = -math.inf, -math.inf
    per_step = []
    for k, (K, v) in enumerate(law.steps):
        mu, S = traj.means[k], traj.covariances[k]
        xm = [state_chance_margin(mu, S, c) for c in scene.state_constraints]
        um = [control_chance_margin(K, v, S, c) for c in scene.control_constraints]
        worst_x = max([worst_x, *xm])
        worst_u = max([worst_u, *um])
        per_step.append({"k": k, "state_margins": xm, "control_margins": um})
    mean_error = float(np.linalg.norm(traj.means[-1] - goal.mean))
    terminal_ok = terminal_covariance_ok(traj.covariances[-1], goal.covariance, spectral_terminal,
                                         margin_tol)
    passed = (mean_error <= mean_tol and terminal_ok
              and worst_x <= margin_tol and worst_u <= margin_tol)
    return ManeuverReport(bool(passed), mean_error, bool(terminal_ok), float(worst_x),
                          float(worst_u), tuple(per_step), traj)


def covariances_psd(traj: MomentTrajectory, tol: float = PSD_TOL) -> bool:
    return all(np.linalg.eigvalsh(S)[0] >= -tol for S in traj.covariances)
