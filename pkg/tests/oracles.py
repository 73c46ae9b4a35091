"""Slow, loop-based reference implementations used as test oracles.

Nothing here touches numpy vectorisation or the package internals, so a
shared bug between oracle and implementation is unlikely.
"""

import math


def median_ref(values):
    s = sorted(values)
    n = len(s)
    return s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2


def trimmed_mean_ref(values, beta):
    s = sorted(values)
    cut = math.ceil(round(beta * len(s), 9))
    kept = s[cut : len(s) - cut]
    return math.fsum(kept) / len(kept)


def ema_ref(values, k=1.5, rule="index"):
    """One coordinate: fences from the full sample, estimate from the kept run."""
    s = sorted(values)
    n = len(s)
    m = median_ref(s)
    if n < 4:
        return m
    quar1 = n // 4
    q1, q3 = s[quar1 - 1], s[3 * quar1 - 1]
    lo, hi = q1 - k * (q3 - q1), q3 + k * (q3 - q1)
    kept = [v for v in s if lo <= v <= hi]
    c = len(kept)
    if c < 4:
        return m
    a = c // 4
    t1 = kept[a - 1]
    t3 = kept[c - a] if rule == "mirrored" else kept[3 * a - 1]
    w = 0.70 + 0.39 / n
    return w * (t1 + t3) / 2 + (1 - w) * m


def krum_ref(rows, f):
    n = len(rows)
    scores = []
    for i in range(n):
        d = sorted(
            sum((a - b) ** 2 for a, b in zip(rows[i], rows[j])) for j in range(n) if j != i
        )
        scores.append(sum(d[: n - f - 2]))
    return scores


def mse_ref(outputs, targets):
    total = 0.0
    count = 0
    for row_o, row_t in zip(outputs, targets):
        for o, t in zip(row_o, row_t):
            total += (o - t) ** 2
            count += 1
    return total / count
