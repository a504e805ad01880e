# %% [markdown]
# # One-step covariance steering on a scalar system
#
# The smallest interesting case: x+ = x + u with no process noise, a control
# limit |u| <= 1 that must hold with probability 1 - eps, and a goal
# distribution N(0, 1). We ask for the largest initial variance that a single
# feedback step can squeeze into the goal.

# %%
import math

import numpy as np

from maxcovar import GaussianBelief, HalfspaceChanceConstraint, LinearGaussianSystem, PlanningScene
from maxcovar import check_maneuver, feasible, max_covar, rollout

# pick eps so that the normal quantile at 1 - eps is exactly one
eps = 1.0 - 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
system = LinearGaussianSystem([[1.0]], [[1.0]], [[0.0]])
limits = (HalfspaceChanceConstraint([1.0], 1.0, eps), HalfspaceChanceConstraint([-1.0], 1.0, eps))
scene = PlanningScene((), limits, sigma_ref=[[1.0]], y_ref=[[1.0]])
goal = GaussianBelief([0.0], [[1.0]])

# %% [markdown]
# With c = beta / quantile = 1 the answer has a closed form, (1 + c)^2 = 4,
# reached with gain K = -1/2.

# %%
sol = max_covar(system, [0.0], goal, 1, scene)
print("status:", sol.status)
print("largest initial variance:", sol.sigma_max[0, 0])
print("recovered gain:", sol.law.gains[0][0, 0])

# %% [markdown]
# The controller is reusable: any smaller initial variance replays
# successfully with the same law.

# %%
for s in (0.1, 0.5, 0.9):
    report = check_maneuver(system, sol.initial.scaled(s), sol.law, scene, goal)
    print(f"scale {s}: replay passes = {report.passed}")

print("5% above the maximum is feasible:", feasible(GaussianBelief([0.0], [[4.2]]), goal, 1, system, scene))
print("5% below the maximum is feasible:", feasible(GaussianBelief([0.0], [[3.8]]), goal, 1, system, scene))

# %% [markdown]
# Monte Carlo: the control limit should be violated in about eps of the runs
# at the boundary case.

# %%
samples = rollout(system, sol.initial, sol.law, 100_000, np.random.default_rng(0))
u = samples.controls[:, 0, 0]
print(f"eps = {eps:.4f}, empirical P(u > 1) = {np.mean(u > 1.0):.4f}")
