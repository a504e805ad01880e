# %% [markdown]
# # Building and querying a tree on a planar double integrator
#
# The bundled `desk` config is a 4-state double integrator with a chance
# constrained control box. We grow a small tree of maximal-covariance nodes
# backwards from the goal, plan a query through it and check the resulting
# multi-hop controller by sampling.

# %%
import time

import numpy as np

from maxcovar import GaussianBelief, audit_tree, build_tree, bundled_config, check_maneuver, query, rollout
from maxcovar.montecarlo import rates_within_tolerance

cfg = bundled_config("desk")
t0 = time.perf_counter()
tree = build_tree(cfg.system, cfg.scene, cfg.goal, cfg.horizon, cfg.n_iter, cfg.radii, cfg.seed,
                  max_nodes=30)
print(f"{len(tree)} nodes in {time.perf_counter() - t0:.1f} s, deepest node at depth "
      f"{max(nd.depth for nd in tree.nodes)}")
print("edges failing replay:", audit_tree(tree))

# %% [markdown]
# Query from a point several metres from the goal. The planner tries the
# nearest nodes one at a time and chains the stored edge laws to the root.

# %%
q = GaussianBelief(np.array(cfg.query["mean"], dtype=float), np.array(cfg.query["covariance"]))
res = query(tree, q)
print(f"found={res.found} hops={res.hops} path={res.node_path} attempts={res.attempts} "
      f"time={res.wall_time:.3f} s")

# %%
if res.found:
    report = check_maneuver(tree.system, q, res.full_law, tree.scene, tree.goal)
    samples = rollout(tree.system, q, res.full_law, 10_000, np.random.default_rng(1))
    final = samples.states[:, -1]
    print("analytic replay passes:", report.passed)
    print("sampled violation rates within tolerance:", rates_within_tolerance(samples, tree.scene))
    print("final mean:", np.round(final.mean(axis=0), 3))
    print("largest final variance:", np.linalg.eigvalsh(np.cov(final, rowvar=False))[-1].round(4),
          "goal bound:", np.linalg.eigvalsh(tree.goal.covariance)[0])
