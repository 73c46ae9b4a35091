# %% [markdown]
# # Estimating a mean from three order statistics
#
# The estimator mixes the midpoint of the first and third quartiles with the
# median: ``w * (q1 + q3) / 2 + (1 - w) * m`` with ``w = 0.70 + 0.39 / n``.

# %%
import numpy as np

from ema_fl.quantiles import QuartileRule, estimator_weight, quartiles, sample_estimated_mean

x = np.arange(1.0, 9.0)
print("index quartiles   :", quartiles(x))
print("mirrored quartiles:", quartiles(x, QuartileRule.MIRRORED))
print("w(8) =", estimator_weight(8).w)
print("estimate (index)   :", sample_estimated_mean(x, "index"))
print("estimate (mirrored):", sample_estimated_mean(x))

# %% [markdown]
# The weight shrinks towards 0.70 as the sample grows.

# %%
for n in (4, 10, 50, 400, 10_000):
    print(f"n={n:>6}  w={estimator_weight(n).w:.5f}")

# %% [markdown]
# Monte Carlo: 10,000 Gaussian samples of size 50.  The index rule reads q3
# one position early, which drags the estimate down by about 0.065 sigma; the
# mirrored rule is centred.

# %%
rng = np.random.default_rng(0)
draws = rng.normal(3.0, 1.0, size=(10_000, 50))
for rule in QuartileRule:
    est = np.array([sample_estimated_mean(row, rule) for row in draws])
    print(f"{rule.value:>8}: mean {est.mean():.4f}  sd {est.std():.4f}  (sample mean sd {draws.mean(1).std():.4f})")
