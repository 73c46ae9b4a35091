# %% [markdown]
# # Accuracy as the share of sign-flipping clients grows
#
# Uses ``configs/attack_sweep.toml``: 50 clients, lr 0.01, batch 128,
# 100 rounds.  Two seeds keep the demo around half a minute.

# %%
from dataclasses import replace
from pathlib import Path

import numpy as np

from ema_fl.aggregators import AggregationRuleConfig
from ema_fl.config import load_config
from ema_fl.sim import AttackSpec, run_simulation

base = load_config(Path(__file__).resolve().parents[1] / "configs" / "attack_sweep.toml")
fractions = (0.0, 0.1, 0.2, 0.3)
rules = ("mean", "trimmed_mean", "ema")

print("fraction " + "".join(f"{r:>14}" for r in rules))
for f in fractions:
    row = []
    for rule in rules:
        accs = [
            run_simulation(replace(base, seed=s, attack=AttackSpec(f, "sign_flip" if f else "none"),
                                   rule=AggregationRuleConfig(rule=rule)))[-1].test_accuracy
            for s in (0, 1)
        ]
        row.append(np.mean(accs))
    print(f"{f:>8} " + "".join(f"{a:>14.4f}" for a in row))
