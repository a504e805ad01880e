"""Query-time planning through a backward reachable tree."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .brt import Brt, BrtNode
from .conic import SolverSettings
from .core import AffineFeedbackLaw, GaussianBelief, InvalidArgumentError, SteeringWeights
from .steering import RecoveryFailedError, RelaxationGapError, feasible, opt_steer

log = logging.getLogger(__name__)

DEFAULT_M = 10


@dataclass
class QueryResult:
    found: bool
    connect_law: AffineFeedbackLaw | None = None
    node_path: list = field(default_factory=list)
    full_law: AffineFeedbackLaw | None = None
    hops: int = 0
    attempts: int = 0
    wall_time: float = 0.0
    query: GaussianBelief | None = None

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "found": self.found,
            "hops": self.hops,
            "attempts": self.attempts,
            "node_path": list(self.node_path),
            "query": self.query.to_dict() if self.query is not None else None,
            "connect_law": self.connect_law.to_dict() if self.connect_law is not None else None,
            "full_law": self.full_law.to_dict() if self.full_law is not None else None,
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "QueryResult":
        law = lambda d: AffineFeedbackLaw.from_dict(d) if d else None  # noqa: E731
        return cls(bool(data["found"]), law(data.get("connect_law")), list(data.get("node_path", [])),
                   law(data.get("full_law")), int(data.get("hops", 0)), int(data.get("attempts", 0)),
                   float(data.get("wall_time", 0.0)),
                   GaussianBelief.from_dict(data["query"]) if data.get("query") else None)


def nearest_nodes(tree: Brt, mu_q, M: int) -> list:
    """Ids of the ``M`` nodes whose means are closest to ``mu_q``; ties by id."""
    if M <= 0:
        return []
    d = np.linalg.norm(tree.means - np.asarray(mu_q, dtype=float), axis=1)
    order = np.lexsort((np.arange(len(d)), d))
    return [int(i) for i in order[:M]]


def concat(a: AffineFeedbackLaw, b: AffineFeedbackLaw) -> AffineFeedbackLaw:
    """Run ``a`` first, then ``b``."""
    return AffineFeedbackLaw(a.gains + b.gains, a.feedforward + b.feedforward)


def chain_law(tree: Brt, connect: AffineFeedbackLaw, node_id: int):
    """Concatenate ``connect`` with the stored edge laws from ``node_id`` to the root."""
    path = tree.path_to_root(node_id)
    law = connect
    for child, parent in zip(path[:-1], path[1:]):
        law = concat(law, tree.edges[(child, parent)])
    return law, path


def query(tree: Brt, q: GaussianBelief, M: int = DEFAULT_M, weights: SteeringWeights | None = None,
          settings: SolverSettings | None = None, backend=None) -> QueryResult:
    """Try single-hop connections to the ``M`` nearest nodes; chain to the root on the first success."""
    if not len(tree):
        raise InvalidArgumentError("tree is empty")
    N = tree.horizon
    weights = weights or SteeringWeights.default(tree.system.n, tree.system.m, N)
    t0 = time.perf_counter()
    attempts = 0
    for k in nearest_nodes(tree, q.mean, M):
        attempts += 1
        node = tree.nodes[k]
        try:
            sol = opt_steer(tree.system, q, node.belief, N, tree.scene, weights, True, settings, backend)
        except (RelaxationGapError, RecoveryFailedError) as exc:
            log.info("connection to node %d rejected: %s", k, exc)
            continue
        if not sol.feasible:
            continue
        full, path = chain_law(tree, sol.law, k)
        return QueryResult(True, sol.law, path, full, node.depth + 1, attempts,
                           time.perf_counter() - t0, q)
    return QueryResult(False, attempts=attempts, wall_time=time.perf_counter() - t0, query=q)


def brs_member(q: GaussianBelief, node: BrtNode, h: int, tree: Brt,
               settings: SolverSettings | None = None, backend=None) -> bool:
    """Whether ``q`` can reach ``node`` in ``h`` hops (one solve of horizon ``h * N``)."""
    if h < 1:
        return False
    return feasible(q, node.belief, h * tree.horizon, tree.system, tree.scene, settings, backend)


def tree_brs_member(q: GaussianBelief, tree: Brt, h: int, exhaustive: bool = False,
                    settings: SolverSettings | None = None, backend=None):
    """Membership of ``q`` in the h-hop backward reachable set of the whole tree.

    Candidates are tried nearest-first and the search stops at the first
    member unless ``exhaustive`` is set, in which case the list of every
    member node id is returned instead of a bool.
    """
    members = []
    for i in nearest_nodes(tree, q.mean, len(tree)):
        node = tree.nodes[i]
        if node.depth >= h:
            continue
        if brs_member(q, node, h - node.depth, tree, settings, backend):
            if not exhaustive:
                return True
            members.append(i)
    return members if exhaustive else False


def sample_annulus_query(rng: np.random.Generator, n: int, inner: float, outer: float,
                         eig_lo: float, eig_hi: float) -> GaussianBelief:
    """Query with position uniform (by area) in the planar annulus and a random diagonal covariance.

    Only the first two state coordinates (the position) are sampled; the rest
    of the mean is zero.
    """
    if not 0 <= inner <= outer:
        raise InvalidArgumentError("need 0 <= inner <= outer")
    if not 0 <= eig_lo <= eig_hi:
        raise InvalidArgumentError("need 0 <= eig_lo <= eig_hi")
    ang = rng.uniform(0.0, 2 * np.pi)
    r = np.sqrt(rng.uniform(inner ** 2, outer ** 2))
    mean = np.zeros(n)
    mean[:2] = r * np.cos(ang), r * np.sin(ang)
    return GaussianBelief(mean, np.diag(rng.uniform(eig_lo, eig_hi, size=n)))


def coverage(trees: dict, intervals, trials: int, inner: float, outer: float, seed: int,
             M: int = DEFAULT_M, settings: SolverSettings | None = None, backend=None) -> list:
    """Query success rate of each tree per covariance interval.

    Every tree sees the same query sequence. Returns rows with keys
    ``interval_lo, interval_hi, tree, success_rate, trials``.
    """
    names = list(trees)
    if not names:
        raise InvalidArgumentError("no trees given")
    n = trees[names[0]].system.n
    rng = np.random.default_rng(seed)
    rows = []
    for lo, hi in intervals:
        hits = dict.fromkeys(names, 0)
        for _ in range(int(trials)):
            q = sample_annulus_query(rng, n, inner, outer, lo, hi)
            for name in names:
                hits[name] += query(trees[name], q, M, None, settings, backend).found
        for name in names:
            rows.append({"interval_lo": float(lo), "interval_hi": float(hi), "tree": name,
                         "success_rate": hits[name] / trials if trials else 0.0, "trials": int(trials)})
    return rows
