"""Backward reachable trees of Gaussian beliefs rooted at a goal distribution.

Two growth procedures share the same site sequence (node selection and
mean sampling draw from dedicated random streams):

* :func:`grow_maxcovar` gives every new node the MAX-COVAR covariance and
  edge controller;
* :func:`grow_randcovar` is the baseline that samples a random node
  covariance no larger than the MAX-COVAR one and connects it with OPT-STEER.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .conic import SolverSettings
from .core import (
    AffineFeedbackLaw,
    GaussianBelief,
    InvalidArgumentError,
    LinearGaussianSystem,
    PlanningScene,
    SteeringWeights,
    min_eigenvalue,
    symmetrize,
)
from .moments import check_maneuver
from .steering import RecoveryFailedError, RelaxationGapError, max_covar, opt_steer

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
RANDCOVAR_EIG_LO = 0.01


class TreeIntegrityError(ValueError):
    """A loaded or audited tree violates a structural or edge-validity invariant."""


class RngStreams:
    """Independent generators for node selection, mean sampling and covariance sampling."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        sel, mean, cov = np.random.SeedSequence(self.seed).spawn(3)
        self.select = np.random.default_rng(sel)
        self.mean = np.random.default_rng(mean)
        self.cov = np.random.default_rng(cov)


@dataclass
class BrtNode:
    id: int
    mean: np.ndarray
    covariance: np.ndarray
    parent: int | None = None
    edge_law: AffineFeedbackLaw | None = None
    children: list = field(default_factory=list)
    depth: int = 0

    @property
    def belief(self) -> GaussianBelief:
        return GaussianBelief(self.mean, self.covariance)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "mean": np.asarray(self.mean).tolist(),
            "covariance": np.asarray(self.covariance).tolist(),
            "parent": self.parent,
            "children": list(self.children),
            "depth": self.depth,
            "edge_law": self.edge_law.to_dict() if self.edge_law is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BrtNode":
        law = AffineFeedbackLaw.from_dict(data["edge_law"]) if data.get("edge_law") else None
        return cls(int(data["id"]), np.asarray(data["mean"], dtype=float),
                   np.asarray(data["covariance"], dtype=float), data.get("parent"), law,
                   list(data.get("children", [])), int(data.get("depth", 0)))


@dataclass
class Brt:
    system: LinearGaussianSystem
    scene: PlanningScene
    goal: GaussianBelief
    horizon: int
    seed: int = 0
    mode: str = "maxcovar"
    radii: np.ndarray | None = None
    nodes: list = field(default_factory=list)
    edges: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def means(self) -> np.ndarray:
        return np.array([nd.mean for nd in self.nodes])

    def add_node(self, mean, covariance, parent: int, law: AffineFeedbackLaw) -> BrtNode:
        pnode = self.nodes[parent]
        node = BrtNode(len(self.nodes), np.asarray(mean, dtype=float), symmetrize(covariance),
                       parent, law, [], pnode.depth + 1)
        self.nodes.append(node)
        pnode.children.append(node.id)
        self.edges[(node.id, parent)] = law
        return node

    def path_to_root(self, i: int) -> list:
        path = [i]
        while self.nodes[path[-1]].parent is not None:
            path.append(self.nodes[path[-1]].parent)
            if len(path) > len(self.nodes):
                raise TreeIntegrityError("parent pointers contain a cycle")
        return path

    def check_structure(self) -> None:
        """Root, parent/child, depth and edge-map invariants."""
        if not self.nodes:
            raise TreeIntegrityError("tree has no root")
        root = self.nodes[0]
        if root.parent is not None or root.edge_law is not None or root.depth != 0:
            raise TreeIntegrityError("root must have no parent, no edge law, depth 0")
        for i, nd in enumerate(self.nodes):
            if nd.id != i:
                raise TreeIntegrityError(f"node at index {i} has id {nd.id}")
            if i == 0:
                continue
            if nd.parent is None or nd.edge_law is None:
                raise TreeIntegrityError(f"node {i} lacks a parent or edge law")
            if not 0 <= nd.parent < len(self.nodes) or nd.parent == i:
                raise TreeIntegrityError(f"node {i} has invalid parent {nd.parent}")
            if nd.depth != self.nodes[nd.parent].depth + 1:
                raise TreeIntegrityError(f"node {i} depth disagrees with its parent")
            if i not in self.nodes[nd.parent].children:
                raise TreeIntegrityError(f"node {i} missing from its parent's children")
            if self.edges.get((i, nd.parent)) != nd.edge_law:
                raise TreeIntegrityError(f"edge ({i}, {nd.parent}) disagrees with node law")
            self.path_to_root(i)
        if len(self.edges) != len(self.nodes) - 1:
            raise TreeIntegrityError("edge map has stray entries")

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "system": self.system.to_dict(),
            "scene": self.scene.to_dict(),
            "goal": self.goal.to_dict(),
            "horizon": self.horizon,
            "seed": self.seed,
            "mode": self.mode,
            "radii": None if self.radii is None else np.asarray(self.radii).tolist(),
            "nodes": [nd.to_dict() for nd in self.nodes],
            "edges": [{"from": i, "to": j, "law": law.to_dict()}
                      for (i, j), law in sorted(self.edges.items())],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def from_dict(cls, data: dict, audit: bool = True) -> "Brt":
        if data.get("version") != FORMAT_VERSION:
            raise TreeIntegrityError(f"unsupported tree format version {data.get('version')}")
        tree = cls(
            LinearGaussianSystem.from_dict(data["system"]),
            PlanningScene.from_dict(data["scene"]),
            GaussianBelief.from_dict(data["goal"]),
            int(data["horizon"]),
            int(data.get("seed", 0)),
            data.get("mode", "maxcovar"),
            None if data.get("radii") is None else np.asarray(data["radii"], dtype=float),
        )
        tree.nodes = [BrtNode.from_dict(nd) for nd in data["nodes"]]
        tree.edges = {(int(e["from"]), int(e["to"])): AffineFeedbackLaw.from_dict(e["law"])
                      for e in data["edges"]}
        tree.check_structure()
        if audit:
            bad = audit_tree(tree)
            if bad:
                raise TreeIntegrityError(f"edge replay failed for edges {[(i, j) for i, j, _ in bad]}")
        return tree

    @classmethod
    def load(cls, path, audit: bool = True) -> "Brt":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), audit=audit)


def create_root(goal: GaussianBelief, system: LinearGaussianSystem, scene: PlanningScene,
                horizon: int, seed: int = 0, mode: str = "maxcovar", radii=None) -> Brt:
    """A one-node tree holding the goal distribution."""
    if goal.n != system.n:
        raise InvalidArgumentError("goal dimension disagrees with system")
    scene.check_system(system)
    tree = Brt(system, scene, goal, int(horizon), int(seed), mode,
               None if radii is None else np.asarray(radii, dtype=float))
    tree.nodes.append(BrtNode(0, goal.mean.copy(), goal.covariance.copy()))
    return tree


def audit_tree(tree: Brt) -> list:
    """Replay every edge; returns ``(child, parent, report)`` for each failing edge."""
    bad = []
    for nd in tree.nodes[1:]:
        report = check_maneuver(tree.system, nd.belief, nd.edge_law, tree.scene,
                                tree.nodes[nd.parent].belief, spectral_terminal=True)
        if not report.passed:
            bad.append((nd.id, nd.parent, report))
    return bad


# ---------------------------------------------------------------------------
# sampling


def selection_bounds(tree: Brt, radii=None):
    """Axis-aligned hull of node means, inflated by ``radii``."""
    means = tree.means
    r = np.zeros(tree.system.n) if radii is None else np.asarray(radii, dtype=float)
    return means.min(axis=0) - r, means.max(axis=0) + r


def select_node(tree: Brt, rng: np.random.Generator, radii=None, bounds=None) -> int:
    """Voronoi-biased choice: nearest node mean to a uniform point in the sampling box."""
    if bounds is None:
        bounds = selection_bounds(tree, tree.radii if radii is None else radii)
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    point = rng.uniform(lo, hi)
    d = np.linalg.norm(tree.means - point, axis=1)
    return int(np.argmin(d))  # first minimum, i.e. lowest id on ties


def sample_mean_around(node: BrtNode, radii, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from the box ``node.mean +/- radii``."""
    radii = np.asarray(radii, dtype=float)
    if radii.shape != node.mean.shape:
        raise InvalidArgumentError("radii must match the state dimension")
    return node.mean + rng.uniform(-1.0, 1.0, size=radii.shape) * radii


def sample_psd(n: int, eig_lo: float, eig_hi: float, rng: np.random.Generator) -> np.ndarray:
    """Random PSD matrix with eigenvalues uniform in ``[eig_lo, eig_hi]`` and a random eigenbasis.

    The eigenbasis is the Q factor of a standard-normal square matrix with
    column signs fixed by ``diag(R) > 0`` (Haar distributed).
    """
    if eig_lo > eig_hi or eig_lo < 0:
        raise InvalidArgumentError("need 0 <= eig_lo <= eig_hi")
    lam = rng.uniform(eig_lo, eig_hi, size=n)
    G = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(G)
    Q = Q * np.where(np.diag(R) < 0, -1.0, 1.0)
    return symmetrize((Q * lam) @ Q.T)


# ---------------------------------------------------------------------------
# growth


def _as_streams(rng) -> RngStreams:
    return rng if isinstance(rng, RngStreams) else RngStreams(int(rng))


def _solve_safely(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs), None
    except (RelaxationGapError, RecoveryFailedError) as exc:
        return None, str(exc)


def _grow(tree: Brt, n_iter: int, radii, rng, mode: str, settings, backend, max_nodes=None) -> Brt:
    streams = _as_streams(rng)
    radii = np.asarray(radii, dtype=float)
    if tree.radii is None and n_iter > 0:
        tree.radii = radii
    N, n = tree.horizon, tree.system.n
    for it in range(int(n_iter)):
        if max_nodes is not None and len(tree) >= max_nodes:
            break
        t0 = time.perf_counter()
        k = select_node(tree, streams.select, radii)
        parent = tree.nodes[k]
        mu_q = sample_mean_around(parent, radii, streams.mean)
        record = {"iteration": it, "selected": k, "accepted": False}
        sol, err = _solve_safely(max_covar, tree.system, mu_q, parent.belief, N, tree.scene,
                                 settings=settings, backend=backend)
        record["status"] = sol.status if sol is not None else "error"
        if mode == "maxcovar":
            if sol is not None and sol.feasible:
                tree.add_node(mu_q, sol.sigma_max, k, sol.law)
                record["accepted"] = True
        else:
            if sol is not None and sol.feasible:
                lam = min_eigenvalue(sol.sigma_max)
                sigma = sample_psd(n, RANDCOVAR_EIG_LO * lam, lam, streams.cov)
                steer, err = _solve_safely(opt_steer, tree.system, GaussianBelief(mu_q, sigma),
                                           parent.belief, N, tree.scene,
                                           SteeringWeights.default(n, tree.system.m, N), True,
                                           settings, backend)
                record["lambda_max_covar"] = lam
                if steer is not None and steer.feasible:
                    tree.add_node(mu_q, sigma, k, steer.law)
                    record["accepted"] = True
                else:
                    record["status"] = steer.status if steer is not None else "error"
            else:
                sample_psd(n, 0.0, 1.0, streams.cov)  # keep the covariance stream aligned
        if err:
            record["error"] = err
        record["seconds"] = time.perf_counter() - t0
        tree.history.append(record)
        log.debug("iteration %d: %s", it, record)
    return tree


def grow_maxcovar(tree: Brt, n_iter: int, radii, rng, settings: SolverSettings | None = None,
                  backend=None, max_nodes: int | None = None) -> Brt:
    """Grow ``tree`` in place with MAX-COVAR nodes and edges; returns it.

    ``n_iter`` caps the number of iterations; growth also stops once the
    tree holds ``max_nodes`` nodes.
    """
    return _grow(tree, n_iter, radii, rng, "maxcovar", settings, backend, max_nodes)


def grow_randcovar(tree: Brt, n_iter: int, radii, rng, settings: SolverSettings | None = None,
                   backend=None, max_nodes: int | None = None) -> Brt:
    """Grow ``tree`` in place with randomly sampled node covariances; returns it."""
    return _grow(tree, n_iter, radii, rng, "randcovar", settings, backend, max_nodes)


def build_tree(system: LinearGaussianSystem, scene: PlanningScene, goal: GaussianBelief,
               horizon: int, n_iter: int, radii, seed: int, mode: str = "maxcovar",
               settings: SolverSettings | None = None, backend=None,
               max_nodes: int | None = None) -> Brt:
    """Root a tree at ``goal`` and grow it for at most ``n_iter`` iterations."""
    if mode not in ("maxcovar", "randcovar"):
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    tree = create_root(goal, system, scene, horizon, seed, mode, radii)
    grow = grow_maxcovar if mode == "maxcovar" else grow_randcovar
    return grow(tree, n_iter, radii, RngStreams(seed), settings, backend, max_nodes)


def build_report(tree: Brt) -> dict:
    hist = tree.history
    accepted = sum(r["accepted"] for r in hist)
    return {
        "mode": tree.mode,
        "iterations": len(hist),
        "accepted": accepted,
        "acceptance_rate": accepted / len(hist) if hist else 0.0,
        "nodes": len(tree),
        "seconds_total": sum(r["seconds"] for r in hist),
        "per_iteration": hist,
    }
