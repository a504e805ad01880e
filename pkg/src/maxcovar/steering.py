"""Covariance-steering SDPs: OPT-STEER, MAX-COVAR and the FEASIBLE predicate.

Both programs use the lossless change of variables ``U_k = K_k Sigma_k`` with
an auxiliary ``Y_k >= U_k Sigma_k^{-1} U_k'`` (written as a Schur-complement
LMI), and tangent-line linearizations of the square-root chance constraints
around the scene's reference matrices. Every solve is replayed through the
exact moment recursion before the controller is trusted.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .conic import AffineExpr, ConicProgram, ConicSolution, SolverSettings, bmat
from .core import (
    PSD_TOL,
    AffineFeedbackLaw,
    GaussianBelief,
    HalfspaceChanceConstraint,
    InvalidArgumentError,
    LinearGaussianSystem,
    PlanningScene,
    SteeringWeights,
    min_eigenvalue,
    symmetrize,
)
from .moments import ManeuverReport, MomentTrajectory, check_maneuver, quantile

log = logging.getLogger(__name__)

# constraint back-off, relative to 1 + |rhs|; keeps replay margins on the safe
# side of the solver's feasibility tolerance
BACKOFF = 1e-6
# weight on sum tr(Y_k) when the objective would otherwise leave Y_k slack
TIGHTENING = 1e-4
GAP_TOL = 1e-5
SINGULAR_TOL = 1e-10


class RecoveryFailedError(RuntimeError):
    """Feedback gains could not be recovered from the SDP solution."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RelaxationGapError(RuntimeError):
    """An optimal SDP solution failed exact replay verification."""

    def __init__(self, message: str, report: ManeuverReport | None = None):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# linearized chance constraints


@dataclass(frozen=True)
class LinearizedChance:
    """``quad * alpha' S alpha + alpha' z - rhs <= 0``, affine in ``(S, z)``."""

    alpha: np.ndarray
    quad: float
    rhs: float

    def lhs(self, z, S) -> float:
        a = self.alpha
        return self.quad * float(a @ np.atleast_2d(S) @ a) + float(a @ np.atleast_1d(z)) - self.rhs


def _linearize(c: HalfspaceChanceConstraint, ref) -> LinearizedChance:
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    if ref.shape != (c.dim, c.dim):
        raise InvalidArgumentError("reference matrix dimension disagrees with constraint")
    s = float(c.alpha @ ref @ c.alpha)
    if s <= 0:
        raise InvalidArgumentError("degenerate linearization point: alpha' ref alpha <= 0")
    q = quantile(c)
    if not math.isfinite(q):
        raise InvalidArgumentError("epsilon = 0 cannot be linearized")
    r = math.sqrt(s)
    return LinearizedChance(c.alpha.copy(), q / (2 * r), c.beta - q * r / 2)


def linearize_state_chance(c: HalfspaceChanceConstraint, sigma_ref) -> LinearizedChance:
    """Tangent-line overestimate of the state chance constraint around ``sigma_ref``."""
    return _linearize(c, sigma_ref)


def linearize_control_chance(c: HalfspaceChanceConstraint, y_ref) -> LinearizedChance:
    """Tangent-line overestimate of the relaxed control chance constraint around ``y_ref``."""
    return _linearize(c, y_ref)


# ---------------------------------------------------------------------------
# program construction


def _col(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1, 1)


def _add_dynamics(prog: ConicProgram, system: LinearGaussianSystem, scene: PlanningScene, N: int,
                  sigma0, mu0, backoff: float):
    """Variables and constraints shared by both programs.

    ``sigma0`` and ``mu0`` are either fixed arrays or expressions already
    declared on ``prog``. Returns the per-step expression lists.
    """
    n, m = system.n, system.m
    A, B, W = system.a, system.b, system.noise_cov
    Sig = [sigma0 if isinstance(sigma0, AffineExpr) else AffineExpr.const(symmetrize(sigma0))]
    mu = [mu0 if isinstance(mu0, AffineExpr) else AffineExpr.const(_col(mu0))]
    U, Y, v = [], [], []
    for k in range(N):
        U.append(prog.add_variable(f"U_{k}", (m, n)))
        Y.append(prog.add_variable(f"Y_{k}", (m, m), symmetric=True))
        v.append(prog.add_variable(f"v_{k}", (m, 1)))
        Sig.append(prog.add_variable(f"Sigma_{k + 1}", (n, n), symmetric=True))
        mu.append(prog.add_variable(f"mu_{k + 1}", (n, 1)))
    x_lin = [linearize_state_chance(c, scene.sigma_ref) for c in scene.state_constraints]
    u_lin = [linearize_control_chance(c, scene.y_ref) for c in scene.control_constraints]
    for k in range(N):
        # mean and covariance recursions
        prog.add_eq(A @ mu[k] + B @ v[k] - mu[k + 1])
        prog.add_eq(A @ Sig[k] @ A.T + B @ U[k] @ A.T + A @ U[k].T @ B.T + B @ Y[k] @ B.T
                    + W - Sig[k + 1])
        # Y_k >= U_k Sigma_k^{-1} U_k'
        prog.add_psd(bmat([[Sig[k], U[k].T], [U[k], Y[k]]]))
        for lin in x_lin:
            a = lin.alpha.reshape(1, -1)
            prog.add_ineq(lin.quad * (a @ Sig[k] @ a.T) + a @ mu[k]
                          - (lin.rhs - backoff * (1 + abs(lin.rhs))))
        for lin in u_lin:
            a = lin.alpha.reshape(1, -1)
            prog.add_ineq(lin.quad * (a @ Y[k] @ a.T) + a @ v[k]
                          - (lin.rhs - backoff * (1 + abs(lin.rhs))))
    return Sig, mu, U, Y, v


def _terminal(prog: ConicProgram, Sig_N: AffineExpr, goal: GaussianBelief, spectral: bool,
              backoff: float) -> None:
    n = goal.n
    if spectral:
        c = min_eigenvalue(goal.covariance)
        prog.add_psd((c - backoff * (1 + abs(c))) * np.eye(n) - Sig_N)
    else:
        scale = 1 + np.abs(goal.covariance).max()
        prog.add_psd(goal.covariance - backoff * scale * np.eye(n) - Sig_N)


def _quad_epigraph(prog: ConicProgram, name: str, z: AffineExpr, W) -> AffineExpr:
    """Scalar ``s >= z' W z`` for PSD ``W``; returns the expression for ``s``."""
    W = symmetrize(W)
    vals, vecs = np.linalg.eigh(W)
    keep = vals > 1e-12 * max(1.0, vals.max(initial=0.0))
    if not np.any(keep):
        return AffineExpr((1, 1))
    F = vecs[:, keep] * np.sqrt(vals[keep])  # W = F F'
    s = prog.add_variable(name, (1, 1))
    r = F.shape[1]
    prog.add_psd(bmat([[s, (F.T @ z).T], [F.T @ z, np.eye(r)]]))
    return s


def _times_identity(t: AffineExpr, n: int) -> AffineExpr:
    out = AffineExpr((n, n))
    for i in range(n):
        e = np.zeros((n, 1))
        e[i] = 1.0
        out = out + e @ t @ e.T
    return out


def _check_inputs(system: LinearGaussianSystem, scene: PlanningScene, N: int, *beliefs) -> None:
    if int(N) < 1:
        raise InvalidArgumentError("horizon N must be >= 1")
    scene.check_system(system)
    for b in beliefs:
        if b is not None and b.n != system.n:
            raise InvalidArgumentError("belief dimension disagrees with system")


def build_opt_steer(system: LinearGaussianSystem, initial: GaussianBelief, goal: GaussianBelief,
                    N: int, scene: PlanningScene, weights: SteeringWeights | None = None,
                    spectral_terminal: bool = True, backoff: float = BACKOFF,
                    tightening: float = TIGHTENING) -> ConicProgram:
    """SDP relaxation of the optimal steering problem from ``initial`` to ``goal``.

    ``weights=None`` gives a pure feasibility program (zero objective apart
    from a small ``tightening`` term on ``sum tr(Y_k)``).
    """
    _check_inputs(system, scene, N, initial, goal)
    if weights is not None and weights.horizon != N:
        raise InvalidArgumentError(f"weights cover {weights.horizon} steps, horizon is {N}")
    prog = ConicProgram()
    Sig, mu, U, Y, v = _add_dynamics(prog, system, scene, N, initial.covariance, initial.mean, backoff)
    prog.add_eq(mu[N] - _col(goal.mean))
    _terminal(prog, Sig[N], goal, spectral_terminal, backoff)

    J = AffineExpr((1, 1))
    if weights is None:
        for k in range(N):
            J = J + tightening * Y[k].trace()
    else:
        for k in range(N):
            Q, R = weights.q[k], weights.r[k]
            J = J + (Q @ Sig[k]).trace() + (R @ Y[k]).trace()
            J = J + _quad_epigraph(prog, f"cost_mu_{k}", mu[k], Q)
            J = J + _quad_epigraph(prog, f"cost_v_{k}", v[k], R)
    prog.minimize(J)
    prog.metadata = {
        "kind": "opt_steer", "N": int(N), "n": system.n, "m": system.m,
        "sigma0": initial.covariance.tolist(), "mu0": initial.mean.tolist(),
        "goal": goal.to_dict(), "spectral_terminal": bool(spectral_terminal),
    }
    return prog


def build_max_covar(system: LinearGaussianSystem, mu_q, target: GaussianBelief, N: int,
                    scene: PlanningScene, backoff: float = BACKOFF,
                    tightening: float = TIGHTENING) -> ConicProgram:
    """SDP maximizing ``lambda_min(Sigma_0)`` over initial covariances that reach ``target``.

    The eigenvalue objective uses the epigraph ``Sigma_0 >= t I``; the terminal
    condition is spectral, ``Sigma_N <= lambda_min(Sigma_target) I``.
    """
    mu_q = np.atleast_1d(np.asarray(mu_q, dtype=float))
    _check_inputs(system, scene, N, target)
    if mu_q.size != system.n:
        raise InvalidArgumentError("mu_q dimension disagrees with system")
    n = system.n
    prog = ConicProgram()
    t = prog.add_variable("t", (1, 1))
    S0 = prog.add_variable("Sigma_0", (n, n), symmetric=True)
    prog.add_psd(S0 - _times_identity(t, n))
    Sig, mu, U, Y, v = _add_dynamics(prog, system, scene, N, S0, mu_q, backoff)
    prog.add_eq(mu[N] - _col(target.mean))
    _terminal(prog, Sig[N], target, True, backoff)
    J = -1.0 * t
    for k in range(N):
        J = J + tightening * Y[k].trace()
    prog.minimize(J)
    prog.metadata = {
        "kind": "max_covar", "N": int(N), "n": n, "m": system.m,
        "sigma0": None, "mu0": mu_q.tolist(),
        "goal": target.to_dict(), "spectral_terminal": True,
    }
    return prog


# ---------------------------------------------------------------------------
# recovery and verification


@dataclass
class SteeringSolution:
    status: str
    law: AffineFeedbackLaw | None = None
    trajectory: MomentTrajectory | None = None
    aux_U: tuple = ()
    aux_Y: tuple = ()
    objective_value: float = math.nan
    verified: bool = False
    replay_gap: float = math.nan
    report: ManeuverReport | None = None
    flags: tuple = ()
    solver_stats: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        """Solver did not declare infeasibility and the exact replay passed."""
        return self.verified and self.law is not None

    @property
    def initial(self) -> GaussianBelief:
        return self.trajectory.belief(0)

    @property
    def sigma_max(self) -> np.ndarray:
        return self.trajectory.covariances[0]

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "verified": self.verified,
            "objective_value": self.objective_value,
            "replay_gap": self.replay_gap,
            "law": self.law.to_dict() if self.law is not None else None,
            "trajectory": self.trajectory.to_dict() if self.trajectory is not None else None,
        }


def _gain(U: np.ndarray, S: np.ndarray):
    """``K = U S^{-1}``; falls back to the pseudo-inverse when ``S`` is singular."""
    S = symmetrize(S)
    scale = max(1.0, float(np.abs(S).max()))
    try:
        L = np.linalg.cholesky(S)
        if np.min(np.diag(L)) ** 2 > SINGULAR_TOL * scale:
            K = np.linalg.solve(L.T, np.linalg.solve(L, U.T)).T
            return K, False
    except np.linalg.LinAlgError:
        pass
    K = U @ np.linalg.pinv(S, rcond=SINGULAR_TOL, hermitian=True)
    err = float(np.abs(K @ S - U).max())
    if err > 1e-6 * (1 + float(np.abs(U).max())):
        raise RecoveryFailedError("U_k is not in the range of a singular Sigma_k",
                                  {"residual": err, "min_eig": float(np.linalg.eigvalsh(S)[0])})
    return K, True


def recover_controller(solution: ConicSolution, program: ConicProgram) -> SteeringSolution:
    """Rebuild ``K_k = U_k Sigma_k^{-1}`` and ``v_k`` from a solved steering program."""
    if not solution.usable:
        raise RecoveryFailedError(f"cannot recover from status {solution.status!r}")
    meta = program.metadata
    N = meta["N"]
    vals = solution.values
    sig = [np.asarray(meta["sigma0"], dtype=float) if meta["sigma0"] is not None else vals["Sigma_0"]]
    sig += [vals[f"Sigma_{k}"] for k in range(1, N + 1)]
    sig = [symmetrize(S) for S in sig]
    lam0 = float(np.linalg.eigvalsh(sig[0])[0])
    if lam0 < -PSD_TOL:
        raise RecoveryFailedError("initial covariance returned by the solver is not PSD",
                                  {"min_eig": lam0, "status": solution.status})
    means = [np.asarray(meta["mu0"], dtype=float)] + [vals[f"mu_{k}"].ravel() for k in range(1, N + 1)]
    gains, ff, flags = [], [], []
    U = tuple(vals[f"U_{k}"] for k in range(N))
    Y = tuple(symmetrize(vals[f"Y_{k}"]) for k in range(N))
    for k in range(N):
        K, pinv = _gain(U[k], sig[k])
        if pinv:
            flags.append(f"pinv@{k}")
        gains.append(K)
        ff.append(vals[f"v_{k}"].ravel())
    return SteeringSolution(
        status=solution.status,
        law=AffineFeedbackLaw(tuple(gains), tuple(ff)),
        trajectory=MomentTrajectory(tuple(means), tuple(sig)),
        aux_U=U, aux_Y=Y,
        objective_value=solution.objective_value,
        flags=tuple(flags),
        solver_stats=solution.solver_stats,
    )


def _trajectory_gap(sdp: MomentTrajectory, replay: MomentTrajectory) -> float:
    gap = 0.0
    for S, R in zip(sdp.covariances, replay.covariances):
        gap = max(gap, np.linalg.norm(R - S) / max(np.linalg.norm(S), 1e-12))
    return float(gap)


def _verify(sol: SteeringSolution, system, scene, goal: GaussianBelief, spectral: bool) -> SteeringSolution:
    report = check_maneuver(system, sol.initial, sol.law, scene, goal, spectral)
    sol.report = report
    sol.replay_gap = _trajectory_gap(sol.trajectory, report.trajectory)
    sol.verified = report.passed
    if sol.status == conic.OPTIMAL:
        if not report.passed:
            raise RelaxationGapError(
                f"replay failed: mean_error={report.mean_error:.3g}, terminal_ok={report.terminal_ok}, "
                f"state={report.worst_state_margin:.3g}, control={report.worst_control_margin:.3g}",
                report)
        if sol.replay_gap > GAP_TOL:
            sol.verified = False
            raise RelaxationGapError(
                f"replayed covariances differ from the SDP by {sol.replay_gap:.3g} (relative)", report)
    return sol


def _solve_and_recover(program, system, scene, goal, spectral, settings, backend) -> SteeringSolution:
    result = conic.solve(program, settings, backend)
    if not result.usable:
        return SteeringSolution(status=result.status, objective_value=result.objective_value,
                                solver_stats=result.solver_stats)
    sol = recover_controller(result, program)
    return _verify(sol, system, scene, goal, spectral)


def opt_steer(system: LinearGaussianSystem, initial: GaussianBelief, goal: GaussianBelief, N: int,
              scene: PlanningScene, weights: SteeringWeights | None = None,
              spectral_terminal: bool = True, settings: SolverSettings | None = None,
              backend=None) -> SteeringSolution:
    """Solve, recover and replay-verify a steering maneuver.

    Infeasibility comes back as ``status == "infeasible"``. An optimal solve
    whose replay fails raises :class:`RelaxationGapError`.
    """
    prog = build_opt_steer(system, initial, goal, N, scene, weights, spectral_terminal)
    return _solve_and_recover(prog, system, scene, goal, spectral_terminal, settings, backend)


def max_covar(system: LinearGaussianSystem, mu_q, target: GaussianBelief, N: int,
              scene: PlanningScene, settings: SolverSettings | None = None,
              backend=None) -> SteeringSolution:
    """Largest-``lambda_min`` initial covariance at ``mu_q`` that reaches ``target`` in N steps.

    The result's ``sigma_max`` and ``law`` are the node covariance and edge
    controller used during tree growth.
    """
    prog = build_max_covar(system, mu_q, target, N, scene)
    return _solve_and_recover(prog, system, scene, target, True, settings, backend)


def feasible(q: GaussianBelief, p: GaussianBelief, L: int, system: LinearGaussianSystem,
             scene: PlanningScene, settings: SolverSettings | None = None, backend=None) -> bool:
    """Whether an L-step maneuver from ``q`` into the spectral goal set of ``p`` exists."""
    try:
        sol = opt_steer(system, q, p, L, scene, None, True, settings, backend)
    except (RelaxationGapError, RecoveryFailedError) as exc:
        log.warning("feasibility check failed: %s", exc)
        return False
    return sol.feasible
