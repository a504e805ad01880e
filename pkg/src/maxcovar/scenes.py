"""Benchmark systems and experiment configuration files.

A configuration is one JSON document with ``system``, ``scene``, ``goal``,
``tree``, ``query`` and ``coverage`` sections. Two are bundled:
``sixdof.json`` (planar triple integrator at full scale) and ``desk.json``
(a planar double integrator small enough for the test suite).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .core import (
    GaussianBelief,
    HalfspaceChanceConstraint,
    InvalidArgumentError,
    LinearGaussianSystem,
    PlanningScene,
)


def triple_integrator_2d(dt: float = 0.1, noise: float = 0.1) -> LinearGaussianSystem:
    """Position, velocity and acceleration in the plane; input drives the acceleration rate."""
    I, Z = np.eye(2), np.zeros((2, 2))
    A = np.block([[I, dt * I, Z], [Z, I, dt * I], [Z, Z, I]])
    B = np.vstack([Z, Z, dt * I])
    return LinearGaussianSystem(A, B, noise * np.eye(6), dt)


def double_integrator_2d(dt: float = 0.1, noise: float = 0.1) -> LinearGaussianSystem:
    """Planar point mass, state ``[x, y, vx, vy]``, acceleration input."""
    I, Z = np.eye(2), np.zeros((2, 2))
    A = np.block([[I, dt * I], [Z, I]])
    B = np.vstack([Z, dt * I])
    return LinearGaussianSystem(A, B, noise * np.eye(4), dt)


def box_control_constraints(bound: float, epsilon: float, m: int = 2) -> tuple:
    """``P(+/- u_i <= bound) >= 1 - epsilon`` for every input channel."""
    out = []
    for i in range(m):
        for s in (1.0, -1.0):
            a = np.zeros(m)
            a[i] = s
            out.append(HalfspaceChanceConstraint(a, bound, epsilon))
    return tuple(out)


@dataclass
class ExperimentConfig:
    system: LinearGaussianSystem
    scene: PlanningScene
    goal: GaussianBelief
    horizon: int
    n_iter: int = 0
    radii: np.ndarray | None = None
    mode: str = "maxcovar"
    seed: int = 0
    max_nodes: int | None = None
    query: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        for key in ("system", "scene", "goal", "tree"):
            if key not in data:
                raise InvalidArgumentError(f"config is missing the {key!r} section")
        system = LinearGaussianSystem.from_dict(data["system"])
        scene = PlanningScene.from_dict(data["scene"])
        scene.check_system(system)
        goal = GaussianBelief.from_dict(data["goal"])
        if goal.n != system.n:
            raise InvalidArgumentError("goal dimension disagrees with system")
        tree = data["tree"]
        radii = np.asarray(tree["radii"], dtype=float)
        if radii.shape != (system.n,):
            raise InvalidArgumentError(f"tree.radii must have length {system.n}")
        mode = tree.get("mode", "maxcovar")
        if mode not in ("maxcovar", "randcovar"):
            raise InvalidArgumentError(f"unknown tree mode {mode!r}")
        horizon = int(tree["horizon"])
        if horizon < 1:
            raise InvalidArgumentError("tree.horizon must be >= 1")
        max_nodes = tree.get("max_nodes")
        return cls(system, scene, goal, horizon, int(tree.get("n_iter", 0)), radii, mode,
                   int(tree.get("seed", 0)), None if max_nodes is None else int(max_nodes),
                   dict(data.get("query", {})), dict(data.get("coverage", {})))

    def to_dict(self) -> dict:
        return {
            "system": self.system.to_dict(),
            "scene": self.scene.to_dict(),
            "goal": self.goal.to_dict(),
            "tree": {"horizon": self.horizon, "n_iter": self.n_iter, "radii": self.radii.tolist(),
                     "mode": self.mode, "seed": self.seed, "max_nodes": self.max_nodes},
            "query": self.query,
            "coverage": self.coverage,
        }


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def bundled_config(name: str) -> ExperimentConfig:
    """Load ``sixdof`` or ``desk`` from the package data."""
    text = resources.files("maxcovar.configs").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return ExperimentConfig.from_dict(json.loads(text))


def bundled_config_path(name: str):
    return resources.files("maxcovar.configs").joinpath(f"{name}.json")
