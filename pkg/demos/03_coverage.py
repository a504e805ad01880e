# %% [markdown]
# # Why maximal covariances matter
#
# Two trees grown from the same seed visit the same node means. One stores the
# largest admissible covariance at each node, the other a random covariance
# below that bound. Queries with larger covariance are much harder for the
# second tree to serve.

# %%
from maxcovar import build_tree, bundled_config
from maxcovar.planner import coverage

cfg = bundled_config("desk")
trees = {
    mode: build_tree(cfg.system, cfg.scene, cfg.goal, cfg.horizon, cfg.n_iter, cfg.radii, cfg.seed,
                     mode, max_nodes=cfg.max_nodes)
    for mode in ("maxcovar", "randcovar")
}
print({k: len(t) for k, t in trees.items()})

# %% [markdown]
# 30 queries per interval keeps this quick; the acceptance test uses 100.

# %%
ann = cfg.coverage["annulus"]
rows = coverage(trees, cfg.coverage["intervals"], 30, ann["inner"], ann["outer"], cfg.coverage["seed"])
for r in rows:
    bar = "#" * round(40 * r["success_rate"])
    print(f"[{r['interval_lo']:>3g}, {r['interval_hi']:>3g}] {r['tree']:>9} {r['success_rate']:.2f} {bar}")
