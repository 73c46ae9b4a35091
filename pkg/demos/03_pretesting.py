# %% [markdown]
# # How Gaussian are per-coordinate client gradients?
#
# Run a few simulated rounds, capture the raw client updates of the last one
# and ask Shapiro-Wilk and Anderson-Darling about each coordinate.

# %%
import numpy as np

from ema_fl.gradients import stack_updates
from ema_fl.normality import pretest_round
from ema_fl.sim import DatasetSpec, ModelSpec, SimConfig, init_state, run_round
from ema_fl.sim.simulation import collect_updates

cfg = SimConfig(rounds=5, dataset=DatasetSpec(n_classes=4, dim=20), model=ModelSpec(kind="mlp"))
state = init_state(cfg)
for _ in range(cfg.rounds):
    state, _ = run_round(state)
matrix = stack_updates(collect_updates(state, state.round))
print("update matrix", matrix.shape)

# %%
for kind in ("sw", "ad", "both"):
    r = pretest_round(matrix.T, alpha=0.05, kind=kind)
    print(f"{kind:>4}: pre-testing rate {r.rate:.3f} ({r.passed}/{r.total}, constant {r.constant_count})")

# %% [markdown]
# Reference points: i.i.d. Gaussian columns pass about 95% of the time,
# uniform ones far less often.

# %%
rng = np.random.default_rng(0)
print("gaussian:", pretest_round(rng.normal(size=(2000, 50))).rate)
print("uniform :", pretest_round(rng.uniform(size=(2000, 50))).rate)
