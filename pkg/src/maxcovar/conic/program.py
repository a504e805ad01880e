"""Affine expressions over matrix variables and the conic program container.

An :class:`AffineExpr` is a sum of terms ``L @ X @ R`` (or ``L @ X.T @ R``)
plus a constant matrix. That is enough to write every constraint of the
steering programs, block LMIs included (see :func:`bmat`), and it keeps the
program independent of any modeling library.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import InvalidArgumentError


@dataclass(frozen=True)
class Variable:
    name: str
    shape: tuple
    symmetric: bool = False

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 2 or min(shape) < 1:
            raise InvalidArgumentError(f"variable {self.name!r} needs a 2-d shape, got {shape}")
        if self.symmetric and shape[0] != shape[1]:
            raise InvalidArgumentError(f"symmetric variable {self.name!r} must be square")
        object.__setattr__(self, "shape", shape)

    @property
    def size(self) -> int:
        """Number of free scalars."""
        r, c = self.shape
        return r * (r + 1) // 2 if self.symmetric else r * c

    def to_dict(self) -> dict:
        return {"name": self.name, "shape": list(self.shape), "symmetric": self.symmetric}

    @classmethod
    def from_dict(cls, data: dict) -> "Variable":
        return cls(data["name"], tuple(data["shape"]), bool(data.get("symmetric", False)))


@dataclass(frozen=True)
class Term:
    var: str
    left: np.ndarray
    right: np.ndarray
    transpose: bool = False


class AffineExpr:
    """Matrix-valued affine function of the program variables."""

    __array_ufunc__ = None  # make ndarray @ expr dispatch to __rmatmul__

    def __init__(self, shape, terms=(), constant=None):
        self.shape = tuple(int(s) for s in shape)
        self.terms = tuple(terms)
        self.constant = np.zeros(self.shape) if constant is None else np.array(constant, dtype=float)
        if self.constant.shape != self.shape:
            raise InvalidArgumentError(f"constant shape {self.constant.shape} != {self.shape}")

    @classmethod
    def of(cls, var: Variable) -> "AffineExpr":
        r, c = var.shape
        return cls(var.shape, [Term(var.name, np.eye(r), np.eye(c))])

    @classmethod
    def const(cls, value) -> "AffineExpr":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return cls(value.shape, (), value)

    @property
    def T(self) -> "AffineExpr":
        terms = [Term(t.var, t.right.T, t.left.T, not t.transpose) for t in self.terms]
        return AffineExpr(self.shape[::-1], terms, self.constant.T)

    def variables(self) -> set:
        return {t.var for t in self.terms}

    def _coerce(self, other) -> "AffineExpr":
        if isinstance(other, AffineExpr):
            return other
        other = np.asarray(other, dtype=float)
        if other.ndim == 0:
            other = np.full(self.shape, float(other))
        return AffineExpr.const(np.atleast_2d(other).reshape(self.shape))

    def __add__(self, other) -> "AffineExpr":
        other = self._coerce(other)
        if other.shape != self.shape:
            raise InvalidArgumentError(f"cannot add shapes {self.shape} and {other.shape}")
        return AffineExpr(self.shape, self.terms + other.terms, self.constant + other.constant)

    __radd__ = __add__

    def __neg__(self) -> "AffineExpr":
        return -1.0 * self

    def __sub__(self, other) -> "AffineExpr":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "AffineExpr":
        return self._coerce(other) + (-self)

    def __mul__(self, s) -> "AffineExpr":
        s = float(s)
        return AffineExpr(self.shape, [Term(t.var, s * t.left, t.right, t.transpose) for t in self.terms],
                          s * self.constant)

    __rmul__ = __mul__

    def __matmul__(self, M) -> "AffineExpr":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != self.shape[1]:
            raise InvalidArgumentError(f"matmul shape mismatch {self.shape} @ {M.shape}")
        terms = [Term(t.var, t.left, t.right @ M, t.transpose) for t in self.terms]
        return AffineExpr((self.shape[0], M.shape[1]), terms, self.constant @ M)

    def __rmatmul__(self, M) -> "AffineExpr":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[1] != self.shape[0]:
            raise InvalidArgumentError(f"matmul shape mismatch {M.shape} @ {self.shape}")
        terms = [Term(t.var, M @ t.left, t.right, t.transpose) for t in self.terms]
        return AffineExpr((M.shape[0], self.shape[1]), terms, M @ self.constant)

    def trace(self) -> "AffineExpr":
        """``tr(E)`` as a 1x1 expression."""
        if self.shape[0] != self.shape[1]:
            raise InvalidArgumentError("trace of a non-square expression")
        total = AffineExpr((1, 1))
        for i in range(self.shape[0]):
            e = np.zeros((self.shape[0], 1))
            e[i] = 1.0
            total = total + (e.T @ self @ e)
        return total

    def evaluate(self, values: dict) -> np.ndarray:
        out = self.constant.copy()
        for t in self.terms:
            X = np.atleast_2d(values[t.var])
            out = out + t.left @ (X.T if t.transpose else X) @ t.right
        return out

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "constant": self.constant.tolist(),
            "terms": [{"var": t.var, "left": t.left.tolist(), "right": t.right.tolist(),
                       "transpose": t.transpose} for t in self.terms],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AffineExpr":
        shape = tuple(data["shape"])
        terms = [Term(t["var"], np.array(t["left"], dtype=float).reshape(shape[0], -1),
                      np.array(t["right"], dtype=float).reshape(-1, shape[1]), bool(t["transpose"]))
                 for t in data["terms"]]
        return cls(shape, terms, np.array(data["constant"], dtype=float).reshape(shape))


def bmat(blocks) -> AffineExpr:
    """Assemble a block matrix from expressions, arrays, or ``None`` (zero blocks)."""
    rows = [list(r) for r in blocks]
    heights, widths = [None] * len(rows), [None] * len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != len(widths):
            raise InvalidArgumentError("ragged block layout")
        for j, blk in enumerate(r):
            if blk is None:
                continue
            h, w = blk.shape if isinstance(blk, AffineExpr) else np.atleast_2d(blk).shape
            if heights[i] not in (None, h) or widths[j] not in (None, w):
                raise InvalidArgumentError("inconsistent block sizes")
            heights[i], widths[j] = h, w
    if None in heights or None in widths:
        raise InvalidArgumentError("every block row and column needs at least one sized block")
    r_off = np.concatenate([[0], np.cumsum(heights)])
    c_off = np.concatenate([[0], np.cumsum(widths)])
    total = AffineExpr((int(r_off[-1]), int(c_off[-1])))
    for i, r in enumerate(rows):
        Ei = np.zeros((total.shape[0], heights[i]))
        Ei[r_off[i]:r_off[i + 1]] = np.eye(heights[i])
        for j, blk in enumerate(r):
            if blk is None:
                continue
            Ej = np.zeros((widths[j], total.shape[1]))
            Ej[:, c_off[j]:c_off[j + 1]] = np.eye(widths[j])
            blk = blk if isinstance(blk, AffineExpr) else AffineExpr.const(blk)
            total = total + (Ei @ blk @ Ej)
    return total


@dataclass
class ConicProgram:
    """``minimize objective`` subject to ``eq == 0``, ``ineq <= 0`` (elementwise) and ``psd >= 0``.

    The program is treated as immutable once handed to a backend.
    """

    variables: dict = field(default_factory=dict)
    objective: AffineExpr = field(default_factory=lambda: AffineExpr((1, 1)))
    eq_constraints: list = field(default_factory=list)
    ineq_constraints: list = field(default_factory=list)
    psd_constraints: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add_variable(self, name: str, shape, symmetric: bool = False) -> AffineExpr:
        if name in self.variables:
            raise InvalidArgumentError(f"duplicate variable {name!r}")
        var = Variable(name, tuple(shape), symmetric)
        self.variables[name] = var
        return AffineExpr.of(var)

    def add_eq(self, expr: AffineExpr) -> None:
        self.eq_constraints.append(expr)

    def add_ineq(self, expr: AffineExpr) -> None:
        self.ineq_constraints.append(expr)

    def add_psd(self, expr: AffineExpr) -> None:
        self.psd_constraints.append(expr)

    def minimize(self, expr: AffineExpr) -> None:
        self.objective = expr

    def validate(self) -> None:
        """Check variable references, shapes, and symmetric structure of PSD blocks."""
        names = set(self.variables)
        everything = [self.objective, *self.eq_constraints, *self.ineq_constraints, *self.psd_constraints]
        for expr in everything:
            missing = expr.variables() - names
            if missing:
                raise InvalidArgumentError(f"undeclared variables: {sorted(missing)}")
            for t in expr.terms:
                r, c = self.variables[t.var].shape
                if t.transpose:
                    r, c = c, r
                if t.left.shape != (expr.shape[0], r) or t.right.shape != (c, expr.shape[1]):
                    raise InvalidArgumentError(f"term on {t.var!r} has inconsistent shape")
        if self.objective.shape != (1, 1):
            raise InvalidArgumentError("objective must be scalar")
        rng = np.random.default_rng(0)
        probe = {}
        for v in self.variables.values():
            X = rng.standard_normal(v.shape)
            probe[v.name] = X + X.T if v.symmetric else X
        for expr in self.psd_constraints:
            if expr.shape[0] != expr.shape[1]:
                raise InvalidArgumentError("PSD constraint must be square")
            M = expr.evaluate(probe)
            if not np.allclose(M, M.T, atol=1e-9 * (1 + np.abs(M).max())):
                raise InvalidArgumentError("PSD constraint is not symmetric-structured")

    def to_dict(self) -> dict:
        return {
            "variables": [v.to_dict() for v in self.variables.values()],
            "objective": self.objective.to_dict(),
            "eq_constraints": [e.to_dict() for e in self.eq_constraints],
            "ineq_constraints": [e.to_dict() for e in self.ineq_constraints],
            "psd_constraints": [e.to_dict() for e in self.psd_constraints],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConicProgram":
        variables = {}
        for v in data["variables"]:
            var = Variable.from_dict(v)
            variables[var.name] = var
        return cls(
            variables,
            AffineExpr.from_dict(data["objective"]),
            [AffineExpr.from_dict(e) for e in data["eq_constraints"]],
            [AffineExpr.from_dict(e) for e in data["ineq_constraints"]],
            [AffineExpr.from_dict(e) for e in data["psd_constraints"]],
            dict(data.get("metadata", {})),
        )
