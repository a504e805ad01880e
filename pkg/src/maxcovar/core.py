"""Domain types and spectral helpers shared across the package.

All types are frozen dataclasses holding read-only numpy arrays, so they can
be shared freely between threads. Every type round-trips through a plain
JSON-compatible dict via ``to_dict`` / ``from_dict``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PSD_TOL = 1e-9
SYM_TOL = 1e-9


class InvalidArgumentError(ValueError):
    """Raised for malformed inputs: bad shapes, non-symmetric matrices, etc."""


def _frozen(x, ndim: int | None = None, name: str = "array") -> np.ndarray:
    arr = np.array(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidArgumentError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


def _check_symmetric(M: np.ndarray, tol: float = SYM_TOL, name: str = "matrix") -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=0.0, atol=tol):
        raise InvalidArgumentError(f"{name} is not symmetric within {tol:g}")


def symmetrize(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def _mat_to_list(M: np.ndarray) -> list:
    return np.asarray(M, dtype=float).tolist()


# ---------------------------------------------------------------------------
# spectral utilities


def min_eigenvalue(M) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    M = _as_matrix(M, "M")
    _check_symmetric(M, name="M")
    return float(np.linalg.eigvalsh(symmetrize(M))[0])


def max_eigenvalue(M) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    M = _as_matrix(M, "M")
    _check_symmetric(M, name="M")
    return float(np.linalg.eigvalsh(symmetrize(M))[-1])


def psd_order_leq(A, B, tol: float = PSD_TOL) -> bool:
    """Loewner order test ``A <= B``, i.e. ``B - A`` is PSD up to ``tol``."""
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    if A.shape != B.shape:
        raise InvalidArgumentError(f"shape mismatch: {A.shape} vs {B.shape}")
    return min_eigenvalue(symmetrize(B - A)) >= -tol


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class LinearGaussianSystem:
    """Discrete-time dynamics ``x+ = A x + B u + D w`` with ``w ~ N(0, I)``.

    ``dt`` is carried as metadata only; the matrices are already discretized.
    """

    a: np.ndarray
    b: np.ndarray
    d: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        a = _as_matrix(self.a, "A")
        b = _as_matrix(self.b, "B")
        d = _as_matrix(self.d, "D")
        n = a.shape[0]
        if a.shape != (n, n):
            raise InvalidArgumentError(f"A must be square, got {a.shape}")
        if b.shape[0] != n:
            raise InvalidArgumentError(f"B must have {n} rows, got {b.shape}")
        if d.shape != (n, n):
            raise InvalidArgumentError(f"D must be {n}x{n}, got {d.shape}")
        sv = np.linalg.svd(a, compute_uv=False)
        if sv[-1] < 1e-12 * sv[0]:
            raise InvalidArgumentError("A is singular (condition check failed)")
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "b", _frozen(b))
        object.__setattr__(self, "d", _frozen(d))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    @property
    def noise_cov(self) -> np.ndarray:
        return self.d @ self.d.T

    def to_dict(self) -> dict:
        return {"a": _mat_to_list(self.a), "b": _mat_to_list(self.b), "d": _mat_to_list(self.d),
                "n": self.n, "m": self.m, "dt": self.dt}

    @classmethod
    def from_dict(cls, data: dict) -> "LinearGaussianSystem":
        sys = cls(data["a"], data["b"], data["d"], data.get("dt", 1.0))
        for key in ("n", "m"):
            if key in data and int(data[key]) != getattr(sys, key):
                raise InvalidArgumentError(f"declared {key}={data[key]} disagrees with matrices")
        return sys


@dataclass(frozen=True)
class GaussianBelief:
    """A Gaussian state distribution. The covariance is symmetrized on construction."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.ndim != 1:
            raise InvalidArgumentError(f"mean must be a vector, got shape {mean.shape}")
        cov = _as_matrix(self.covariance, "covariance")
        if cov.shape != (mean.size, mean.size):
            raise InvalidArgumentError(f"covariance must be {mean.size}x{mean.size}, got {cov.shape}")
        _check_symmetric(cov, name="covariance")
        cov = (cov + cov.T) / 2
        if np.linalg.eigvalsh(cov)[0] < -PSD_TOL:
            raise InvalidArgumentError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "covariance", _frozen(cov))

    @property
    def n(self) -> int:
        return self.mean.size

    def scaled(self, s: float) -> "GaussianBelief":
        """Same mean, covariance multiplied by ``s``."""
        return GaussianBelief(self.mean, s * self.covariance)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "covariance": _mat_to_list(self.covariance)}

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianBelief":
        return cls(data["mean"], data["covariance"])


@dataclass(frozen=True)
class HalfspaceChanceConstraint:
    """``P(alpha' z <= beta) >= 1 - epsilon`` for a state or control vector ``z``."""

    alpha: np.ndarray
    beta: float
    epsilon: float

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if alpha.ndim != 1:
            raise InvalidArgumentError("alpha must be a vector")
        if not np.any(alpha != 0):
            raise InvalidArgumentError("alpha must have a nonzero entry")
        eps = float(self.epsilon)
        if not 0.0 <= eps <= 0.5:
            raise InvalidArgumentError(f"epsilon must lie in [0, 0.5], got {eps}")
        object.__setattr__(self, "alpha", _frozen(alpha))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "epsilon", eps)

    @property
    def dim(self) -> int:
        return self.alpha.size

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "beta": self.beta, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, data: dict) -> "HalfspaceChanceConstraint":
        return cls(data["alpha"], data["beta"], data["epsilon"])


@dataclass(frozen=True)
class PlanningScene:
    """Chance constraints plus the reference matrices used to linearize them."""

    state_constraints: tuple = ()
    control_constraints: tuple = ()
    sigma_ref: np.ndarray = None
    y_ref: np.ndarray = None

    def __post_init__(self):
        if self.sigma_ref is None or self.y_ref is None:
            raise InvalidArgumentError("sigma_ref and y_ref are required")
        sr = _as_matrix(self.sigma_ref, "sigma_ref")
        yr = _as_matrix(self.y_ref, "y_ref")
        for name, M in (("sigma_ref", sr), ("y_ref", yr)):
            _check_symmetric(M, name=name)
            if np.linalg.eigvalsh(symmetrize(M))[0] <= 0:
                raise InvalidArgumentError(f"{name} must be positive definite")
        sc = tuple(self.state_constraints)
        cc = tuple(self.control_constraints)
        for c in sc:
            if c.dim != sr.shape[0]:
                raise InvalidArgumentError("state constraint dimension disagrees with sigma_ref")
        for c in cc:
            if c.dim != yr.shape[0]:
                raise InvalidArgumentError("control constraint dimension disagrees with y_ref")
        object.__setattr__(self, "state_constraints", sc)
        object.__setattr__(self, "control_constraints", cc)
        object.__setattr__(self, "sigma_ref", _frozen(symmetrize(sr)))
        object.__setattr__(self, "y_ref", _frozen(symmetrize(yr)))

    @property
    def n(self) -> int:
        return self.sigma_ref.shape[0]

    @property
    def m(self) -> int:
        return self.y_ref.shape[0]

    def check_system(self, system: LinearGaussianSystem) -> None:
        if (self.n, self.m) != (system.n, system.m):
            raise InvalidArgumentError(
                f"scene is for (n, m)=({self.n}, {self.m}) but system has ({system.n}, {system.m})")

    def to_dict(self) -> dict:
        return {
            "state_constraints": [c.to_dict() for c in self.state_constraints],
            "control_constraints": [c.to_dict() for c in self.control_constraints],
            "sigma_ref": _mat_to_list(self.sigma_ref),
            "y_ref": _mat_to_list(self.y_ref),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlanningScene":
        return cls(
            tuple(HalfspaceChanceConstraint.from_dict(c) for c in data.get("state_constraints", [])),
            tuple(HalfspaceChanceConstraint.from_dict(c) for c in data.get("control_constraints", [])),
            data["sigma_ref"],
            data["y_ref"],
        )


@dataclass(frozen=True)
class AffineFeedbackLaw:
    """Control sequence ``u_k = K_k (x_k - mu_k) + v_k`` with ``K_k`` of shape (m, n)."""

    gains: tuple
    feedforward: tuple

    def __post_init__(self):
        gains = tuple(_frozen(_as_matrix(K, "K")) for K in self.gains)
        ff = tuple(_frozen(np.atleast_1d(np.asarray(v, dtype=float)), 1, "v") for v in self.feedforward)
        if len(gains) < 1 or len(gains) != len(ff):
            raise InvalidArgumentError("law needs L >= 1 matching (K, v) pairs")
        shape = gains[0].shape
        if any(K.shape != shape for K in gains):
            raise InvalidArgumentError("all gains must share one shape")
        if any(v.size != shape[0] for v in ff):
            raise InvalidArgumentError(f"all feedforward terms must have length {shape[0]}")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "feedforward", ff)

    @classmethod
    def from_steps(cls, steps: Sequence) -> "AffineFeedbackLaw":
        steps = list(steps)
        return cls(tuple(K for K, _ in steps), tuple(v for _, v in steps))

    @property
    def steps(self) -> list:
        return list(zip(self.gains, self.feedforward))

    @property
    def m(self) -> int:
        return self.gains[0].shape[0]

    @property
    def n(self) -> int:
        return self.gains[0].shape[1]

    def __len__(self) -> int:
        return len(self.gains)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AffineFeedbackLaw) or len(self) != len(other):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.gains, other.gains)) and all(
            np.array_equal(a, b) for a, b in zip(self.feedforward, other.feedforward))

    __hash__ = None

    def to_dict(self) -> dict:
        return {"steps": [{"k": _mat_to_list(K), "v": v.tolist()} for K, v in self.steps]}

    @classmethod
    def from_dict(cls, data: dict) -> "AffineFeedbackLaw":
        return cls.from_steps((s["k"], s["v"]) for s in data["steps"])


@dataclass(frozen=True)
class SteeringWeights:
    """Per-step quadratic weights ``Q_k`` (PSD) and ``R_k`` (PD)."""

    q: tuple
    r: tuple

    def __post_init__(self):
        q = tuple(_frozen(symmetrize(_as_matrix(Q, "Q"))) for Q in self.q)
        r = tuple(_frozen(symmetrize(_as_matrix(R, "R"))) for R in self.r)
        if len(q) != len(r):
            raise InvalidArgumentError("Q and R lists must have equal length")
        for Q in q:
            if np.linalg.eigvalsh(Q)[0] < -PSD_TOL:
                raise InvalidArgumentError("Q_k must be PSD")
        for R in r:
            if np.linalg.eigvalsh(R)[0] <= 0:
                raise InvalidArgumentError("R_k must be positive definite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)

    @property
    def horizon(self) -> int:
        return len(self.q)

    @classmethod
    def constant(cls, Q, R, horizon: int) -> "SteeringWeights":
        return cls((Q,) * horizon, (R,) * horizon)

    @classmethod
    def default(cls, n: int, m: int, horizon: int) -> "SteeringWeights":
        """Q = 0, R = I at every step."""
        return cls.constant(np.zeros((n, n)), np.eye(m), horizon)

    def is_zero(self) -> bool:
        return all(not np.any(Q) for Q in self.q) and all(not np.any(R) for R in self.r)
