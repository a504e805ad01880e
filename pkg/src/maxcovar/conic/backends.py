"""Solver backends for :class:`ConicProgram`.

The default backend hands the program straight to Clarabel's interior-point
method. :class:`CvxpyBackend` goes through cvxpy instead and exists mainly for
differential testing.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..core import InvalidArgumentError
from .program import AffineExpr, ConicProgram, Variable

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
INACCURATE = "inaccurate"
FAILED = "failed"
STATUSES = (OPTIMAL, INFEASIBLE, UNBOUNDED, INACCURATE, FAILED)

RESIDUAL_TOL = 1e-7


@dataclass(frozen=True)
class SolverSettings:
    # tighter than usual: interior-point slack in the Schur LMIs scales with the
    # gap tolerance and shows up directly as replay disagreement
    tol_feas: float = 1e-10
    tol_gap: float = 1e-10
    max_iter: int = 200
    verbose: bool = False


@dataclass
class ConicSolution:
    status: str
    values: dict = field(default_factory=dict)
    objective_value: float = math.nan
    solver_stats: dict = field(default_factory=dict)

    @property
    def usable(self) -> bool:
        return self.status in (OPTIMAL, INACCURATE) and bool(self.values)


# ---------------------------------------------------------------------------
# vectorization helpers


@lru_cache(maxsize=None)
def _sym_param_map(n: int) -> np.ndarray:
    """Map from upper-triangle parameters (column-major) to column-major vec(X)."""
    T = np.zeros((n * n, n * (n + 1) // 2))
    p = 0
    for j in range(n):
        for i in range(j + 1):
            T[i + j * n, p] = 1.0
            T[j + i * n, p] = 1.0
            p += 1
    return T


@lru_cache(maxsize=None)
def _commutation(r: int, c: int) -> np.ndarray:
    """``vec(X.T) = K vec(X)`` for ``X`` of shape (r, c)."""
    K = np.zeros((r * c, r * c))
    for i in range(r):
        for j in range(c):
            K[j + i * c, i + j * r] = 1.0
    return K


def _var_map(var: Variable) -> np.ndarray:
    r, c = var.shape
    return _sym_param_map(r) if var.symmetric else np.eye(r * c)


def _params_to_value(var: Variable, x: np.ndarray) -> np.ndarray:
    r, c = var.shape
    return (_var_map(var) @ x).reshape((r, c), order="F")


def _kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    p, q = A.shape
    r, s = B.shape
    return (A[:, None, :, None] * B[None, :, None, :]).reshape(p * r, q * s)


class _Layout:
    def __init__(self, program: ConicProgram):
        self.offsets = {}
        self.maps = {}
        off = 0
        for name, var in program.variables.items():
            self.offsets[name] = off
            self.maps[name] = _sym_param_map(var.shape[0]) if var.symmetric else None
            off += var.size
        self.size = off
        self.variables = program.variables

    def coefficients(self, expr: AffineExpr):
        """Return ``(blocks, c0)`` with ``vec(expr) = sum_v M_v x_v + c0`` (column-major vec).

        ``blocks`` maps variable name to a dense coefficient block.
        """
        blocks = {}
        for t in expr.terms:
            M = _kron(t.right.T, t.left)
            if t.transpose:
                M = M @ _commutation(*self.variables[t.var].shape)
            if self.maps[t.var] is not None:
                M = M @ self.maps[t.var]
            if t.var in blocks:
                blocks[t.var] = blocks[t.var] + M
            else:
                blocks[t.var] = M
        return blocks, expr.constant.reshape(-1, order="F")

    def unpack(self, x: np.ndarray) -> dict:
        out = {}
        for name, var in self.variables.items():
            off = self.offsets[name]
            out[name] = _params_to_value(var, x[off:off + var.size])
        return out


class _Rows:
    """Accumulates constraint rows as COO triplets."""

    def __init__(self, layout: _Layout):
        self.layout = layout
        self.ri, self.ci, self.data, self.b = [], [], [], []
        self.count = 0

    def add(self, blocks: dict, rhs: np.ndarray, sign: float = 1.0) -> None:
        for name, M in blocks.items():
            r, c = np.nonzero(M)
            self.ri.append(r + self.count)
            self.ci.append(c + self.layout.offsets[name])
            self.data.append(sign * M[r, c])
        self.b.append(rhs)
        self.count += rhs.size

    def matrix(self) -> tuple:
        if not self.data:
            return sp.csc_matrix((self.count, self.layout.size)), np.zeros(self.count)
        A = sp.csc_matrix((np.concatenate(self.data), (np.concatenate(self.ri), np.concatenate(self.ci))),
                          shape=(self.count, self.layout.size))
        return A, np.concatenate(self.b)


def _upper_rows(n: int):
    """Column-major upper-triangle (i, j) pairs, the order Clarabel expects."""
    return [(i, j) for j in range(n) for i in range(j + 1)]


@lru_cache(maxsize=None)
def _svec_operator(n: int) -> np.ndarray:
    """Linear map from column-major vec(M) to the scaled upper-triangle vector."""
    pairs = _upper_rows(n)
    S = np.zeros((len(pairs), n * n))
    r2 = math.sqrt(2.0)
    for row, (i, j) in enumerate(pairs):
        if i == j:
            S[row, i + j * n] = 1.0
        else:
            S[row, i + j * n] = r2 / 2
            S[row, j + i * n] = r2 / 2
    return S


def _select_rows(blocks: dict, c0: np.ndarray, keep: np.ndarray):
    return {k: M[keep] for k, M in blocks.items()}, c0[keep]


@lru_cache(maxsize=None)
def _triangle_index(r: int):
    lower = np.array([i + j * r for j in range(r) for i in range(j + 1, r)])
    upper = np.array([j + i * r for j in range(r) for i in range(j + 1, r)])
    return lower, upper


def _symmetric_upper(expr: AffineExpr, blocks: dict, c0: np.ndarray):
    """Row indices to keep for an equality: the upper triangle when it is symmetric in structure."""
    r, c = expr.shape
    full = np.arange(r * c)
    if r != c or r == 1:
        return full
    lower, upper = _triangle_index(r)
    if not np.allclose(c0[lower], c0[upper], atol=1e-14, rtol=0):
        return full
    for M in blocks.values():
        if not np.allclose(M[lower], M[upper], atol=1e-14, rtol=0):
            return full
    return np.setdiff1d(full, lower)


def _nonempty_rows(blocks: dict, nrows: int) -> np.ndarray:
    mask = np.zeros(nrows, dtype=bool)
    for M in blocks.values():
        mask |= np.any(M != 0, axis=1)
    return mask


def residuals(program: ConicProgram, values: dict) -> dict:
    """Constraint violations at ``values``, absolute and scaled by ``1 + |constant|``."""
    eq_abs = eq_rel = ineq_abs = ineq_rel = psd_abs = psd_rel = 0.0
    for e in program.eq_constraints:
        r = np.abs(e.evaluate(values)).max()
        eq_abs = max(eq_abs, r)
        eq_rel = max(eq_rel, r / (1 + np.abs(e.constant).max()))
    for e in program.ineq_constraints:
        r = max(float(e.evaluate(values).max()), 0.0)
        ineq_abs = max(ineq_abs, r)
        ineq_rel = max(ineq_rel, r / (1 + np.abs(e.constant).max()))
    for e in program.psd_constraints:
        M = e.evaluate(values)
        r = max(-float(np.linalg.eigvalsh(0.5 * (M + M.T))[0]), 0.0)
        psd_abs = max(psd_abs, r)
        psd_rel = max(psd_rel, r / (1 + np.abs(M).max()))
    return {"eq": eq_abs, "ineq": ineq_abs, "psd": psd_abs,
            "eq_rel": eq_rel, "ineq_rel": ineq_rel, "psd_rel": psd_rel,
            "max_rel": max(eq_rel, ineq_rel, psd_rel)}


def _finish(program: ConicProgram, status: str, values: dict, objective: float, stats: dict) -> ConicSolution:
    if values and status in (OPTIMAL, INACCURATE):
        res = residuals(program, values)
        stats["residuals"] = res
        if status == OPTIMAL and res["max_rel"] > RESIDUAL_TOL:
            status = INACCURATE
    return ConicSolution(status, values, objective, stats)


class ClarabelBackend:
    """Compile to Clarabel's ``A x + s = b, s in K`` form and solve."""

    name = "clarabel"

    _STATUS = {
        "Solved": OPTIMAL,
        "AlmostSolved": INACCURATE,
        "PrimalInfeasible": INFEASIBLE,
        "AlmostPrimalInfeasible": INFEASIBLE,
        "DualInfeasible": UNBOUNDED,
        "AlmostDualInfeasible": UNBOUNDED,
        "MaxIterations": INACCURATE,
        "MaxTime": INACCURATE,
        "InsufficientProgress": INACCURATE,
        "NumericalError": FAILED,
    }

    def solve(self, program: ConicProgram, settings: SolverSettings) -> ConicSolution:
        import clarabel

        t0 = time.perf_counter()
        layout = _Layout(program)

        def infeasible_constant():
            return ConicSolution(INFEASIBLE, {}, math.inf,
                                 {"iterations": 0, "solve_time": time.perf_counter() - t0,
                                  "note": "constant constraint violated"})

        zero, nonneg, psd = _Rows(layout), _Rows(layout), _Rows(layout)
        for e in program.eq_constraints:
            blocks, c0 = layout.coefficients(e)
            blocks, c0 = _select_rows(blocks, c0, _symmetric_upper(e, blocks, c0))
            live = _nonempty_rows(blocks, c0.size)
            if np.any(np.abs(c0[~live]) > 1e-12 * (1 + np.abs(c0).max(initial=0.0))):
                return infeasible_constant()
            blocks, c0 = _select_rows(blocks, c0, live)
            zero.add(blocks, -c0)
        for e in program.ineq_constraints:
            blocks, c0 = layout.coefficients(e)
            live = _nonempty_rows(blocks, c0.size)
            if np.any(c0[~live] > 1e-12 * (1 + np.abs(c0).max(initial=0.0))):
                return infeasible_constant()
            blocks, c0 = _select_rows(blocks, c0, live)
            nonneg.add(blocks, -c0)
        psd_sizes = []
        for e in program.psd_constraints:
            blocks, c0 = layout.coefficients(e)
            S = _svec_operator(e.shape[0])
            psd.add({k: S @ M for k, M in blocks.items()}, S @ c0, sign=-1.0)
            psd_sizes.append(e.shape[0])

        cones, mats, rhs = [], [], []
        for rows, cone in ((zero, clarabel.ZeroConeT), (nonneg, clarabel.NonnegativeConeT)):
            if rows.count:
                A_, b_ = rows.matrix()
                mats.append(A_)
                rhs.append(b_)
                cones.append(cone(rows.count))
        if psd.count:
            A_, b_ = psd.matrix()
            mats.append(A_)
            rhs.append(b_)
            cones.extend(clarabel.PSDTriangleConeT(k) for k in psd_sizes)
        if not mats:
            raise InvalidArgumentError("program has no constraints")
        A = sp.vstack(mats).tocsc()
        b = np.concatenate(rhs)
        qblocks, q0 = layout.coefficients(program.objective)
        q = np.zeros(layout.size)
        for name, M in qblocks.items():
            off = layout.offsets[name]
            q[off:off + M.shape[1]] += M[0]
        P = sp.csc_matrix((layout.size, layout.size))

        opts = clarabel.DefaultSettings()
        opts.verbose = settings.verbose
        opts.max_iter = settings.max_iter
        opts.tol_feas = settings.tol_feas
        opts.tol_gap_abs = settings.tol_gap
        opts.tol_gap_rel = settings.tol_gap
        try:
            solver = clarabel.DefaultSolver(P, q, A, b, cones, opts)
            out = solver.solve()
        except Exception as exc:  # solver breakdown must not crash callers
            log.warning("clarabel raised: %s", exc)
            return ConicSolution(FAILED, {}, math.nan, {"error": str(exc)})
        status = self._STATUS.get(str(out.status), FAILED)
        stats = {"iterations": int(out.iterations), "solve_time": time.perf_counter() - t0,
                 "raw_status": str(out.status), "r_prim": float(out.r_prim), "r_dual": float(out.r_dual)}
        values = {}
        objective = math.nan
        if status in (OPTIMAL, INACCURATE):
            x = np.asarray(out.x, dtype=float)
            if not np.all(np.isfinite(x)):
                return ConicSolution(FAILED, {}, math.nan, stats)
            values = layout.unpack(x)
            objective = float(q @ x + q0[0])
        elif status == UNBOUNDED:
            objective = -math.inf
        elif status == INFEASIBLE:
            objective = math.inf
        return _finish(program, status, values, objective, stats)


class CvxpyBackend:
    """Solve through cvxpy; ``solver`` names any installed cvxpy conic solver."""

    name = "cvxpy"

    _STATUS = {
        "optimal": OPTIMAL,
        "optimal_inaccurate": INACCURATE,
        "infeasible": INFEASIBLE,
        "infeasible_inaccurate": INFEASIBLE,
        "unbounded": UNBOUNDED,
        "unbounded_inaccurate": UNBOUNDED,
    }

    def __init__(self, solver: str = "CLARABEL"):
        self.solver = solver

    def solve(self, program: ConicProgram, settings: SolverSettings) -> ConicSolution:
        import cvxpy as cp

        t0 = time.perf_counter()
        cvars = {name: cp.Variable(v.shape, symmetric=v.symmetric, name=name)
                 for name, v in program.variables.items()}

        def lower(expr: AffineExpr):
            out = cp.Constant(expr.constant)
            for t in expr.terms:
                X = cvars[t.var].T if t.transpose else cvars[t.var]
                out = out + t.left @ X @ t.right
            return out

        cons = [lower(e) == 0 for e in program.eq_constraints]
        cons += [lower(e) <= 0 for e in program.ineq_constraints]
        for e in program.psd_constraints:
            M = lower(e)
            cons.append(0.5 * (M + M.T) >> 0)
        prob = cp.Problem(cp.Minimize(lower(program.objective)[0, 0]), cons)
        try:
            prob.solve(solver=self.solver, verbose=settings.verbose)
        except cp.error.SolverError as exc:
            log.warning("cvxpy solver error: %s", exc)
            return ConicSolution(FAILED, {}, math.nan, {"error": str(exc)})
        status = self._STATUS.get(prob.status, FAILED)
        stats = {"solve_time": time.perf_counter() - t0, "raw_status": prob.status,
                 "iterations": getattr(prob.solver_stats, "num_iters", None)}
        values = {}
        if status in (OPTIMAL, INACCURATE):
            values = {name: np.atleast_2d(np.asarray(v.value, dtype=float)).reshape(v.shape)
                      for name, v in cvars.items()}
        objective = float(prob.value) if prob.value is not None else math.nan
        return _finish(program, status, values, objective, stats)


DEFAULT_BACKEND = ClarabelBackend()


def solve(program: ConicProgram, settings: SolverSettings | None = None, backend=None) -> ConicSolution:
    """Validate ``program`` and solve it with ``backend`` (Clarabel by default)."""
    program.validate()
    settings = settings or SolverSettings()
    backend = backend or DEFAULT_BACKEND
    return backend.solve(program, settings)
