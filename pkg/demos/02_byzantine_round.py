# %% [markdown]
# # One poisoned round, six aggregation rules
#
# Fifty clients report gradients of a 20-dimensional model.  Ten of them send
# huge values.  We compare what each rule hands back to the server.

# %%
import numpy as np

from ema_fl.aggregators import AggregationRuleConfig, aggregate
from ema_fl.gradients import transpose_to_coordinates, updates_from_matrix, validate_round

rng = np.random.default_rng(1)
true_grad = rng.normal(size=20)
matrix = true_grad + 0.5 * rng.normal(size=(50, 20))
matrix[:10] = 1e6

token = b"demo"
updates = validate_round(updates_from_matrix(matrix, auth_token=token), token, 20)
print(len(transpose_to_coordinates(updates)), "coordinate samples of", len(updates), "clients")

# %%
def val_loss(params):
    return float(0.5 * np.sum((params - true_grad) ** 2))

for rule in ("mean", "median", "trimmed_mean", "ema", "krum", "zeno"):
    cfg = AggregationRuleConfig(rule=rule, byzantine_count_f=10, zeno_remove_b=10)
    out = aggregate(updates, cfg, validation_oracle=val_loss, params=np.zeros(20), learning_rate=1e-7)
    err = np.abs(out.values - true_grad).max()
    print(f"{rule:>13}: max |error| = {err:.3g}")

# %% [markdown]
# EMA diagnostics show how many clients survived the fences per coordinate.

# %%
out = aggregate(updates, AggregationRuleConfig(rule="ema"))
d = out.diagnostics
print("weight", d.weight, "| retained per coordinate", sorted(set(d.retained_counts.tolist())),
      "| median fallbacks", d.median_fallbacks)
