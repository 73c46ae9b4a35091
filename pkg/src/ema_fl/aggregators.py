"""Aggregation rules: EMA and the baselines it is compared against.

Scalar rules (EMA, mean, median, trimmed mean) act coordinate-wise on the
``(D, n)`` coordinate layout produced by
:func:`ema_fl.gradients.transpose_to_coordinates`.  Krum and Zeno score
whole update vectors and take the client-major ``(n, D)`` layout.

Every rule returns an :class:`AggregationOutcome` holding the global update
and per-round diagnostics.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    ConfigError,
    EmptyRound,
    NonFiniteValue,
    OracleFailure,
    TooFewClients,
    TrimTooAggressive,
)
from .gradients import ClientUpdate, GradientVector, coordinate_matrix, stack_updates
from .outliers import DEFAULT_K, fence_rows, retained_bounds
from .quantiles import (
    MIN_QUARTILE_SIZE,
    WEIGHT_INTERCEPT,
    WEIGHT_SLOPE,
    QuartileRule,
    median_rows,
)

DEFAULT_ZENO_RHO = 5e-4


class Rule(str, Enum):
    EMA = "ema"
    MEAN = "mean"
    MEDIAN = "median"
    TRIMMED_MEAN = "trimmed_mean"
    KRUM = "krum"
    ZENO = "zeno"

    @classmethod
    def parse(cls, name: str) -> "Rule":
        key = str(getattr(name, "value", name)).strip().lower().replace("-", "_")
        aliases = {"trim": "trimmed_mean", "trimmedmean": "trimmed_mean"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown aggregation rule {name!r}") from None


@dataclass(frozen=True)
class AggregationRuleConfig:
    rule: Rule = Rule.EMA
    k: float = DEFAULT_K
    trim_fraction: float = 0.2
    byzantine_count_f: int = 0
    zeno_rho: float = DEFAULT_ZENO_RHO
    zeno_remove_b: int = 0
    zeno_gamma: float | None = None
    quartile_rule: QuartileRule = QuartileRule.INDEX

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule.parse(self.rule))
        try:
            object.__setattr__(self, "quartile_rule", QuartileRule.parse(self.quartile_rule))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.k <= 0:
            raise ConfigError("k must be positive")
        if not 0 <= self.trim_fraction < 0.5:
            raise ConfigError("trim_fraction must lie in [0, 0.5)")
        if self.byzantine_count_f < 0 or self.zeno_remove_b < 0:
            raise ConfigError("client counts must be non-negative")
        if self.zeno_rho < 0:
            raise ConfigError("zeno_rho must be non-negative")
        if self.zeno_gamma is not None and self.zeno_gamma <= 0:
            raise ConfigError("zeno_gamma must be positive")


@dataclass
class AggregationDiagnostics:
    rule: str
    n_clients: int
    retained_counts: np.ndarray | None = None
    weight: float | None = None
    median_fallbacks: int = 0
    all_filtered: int = 0
    selected_client: int | None = None
    dropped_clients: tuple = ()

    @property
    def retained_mean(self) -> float:
        if self.retained_counts is None:
            return float(self.n_clients)
        return float(np.mean(self.retained_counts))


@dataclass
class AggregationOutcome:
    global_update: GradientVector
    diagnostics: AggregationDiagnostics = field(repr=False)

    @property
    def values(self) -> np.ndarray:
        return self.global_update.values


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EMA_THREADS", "1")))
    except ValueError:
        return 1


def _by_blocks(fn, coords: np.ndarray, threads: int | None = None):
    """Apply ``fn`` to row blocks; rows are independent so the result is schedule-free."""
    threads = threads or _threads()
    if threads == 1 or coords.shape[0] < 2 * threads:
        return fn(coords)
    blocks = np.array_split(coords, threads, axis=0)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(fn, blocks))
    return tuple(np.concatenate(p) for p in zip(*parts))


def _outcome(values: np.ndarray, diagnostics: AggregationDiagnostics) -> AggregationOutcome:
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{diagnostics.rule} produced a non-finite aggregate")
    return AggregationOutcome(GradientVector(values), diagnostics)


def _ema_block(coords: np.ndarray, k: float, rule: QuartileRule):
    d, n = coords.shape
    ordered = np.sort(coords, axis=1)
    m = median_rows(ordered)
    if n < MIN_QUARTILE_SIZE:
        return m, np.full(d, n), np.ones(d, dtype=bool)

    lower, upper = fence_rows(ordered, k)
    start, stop = retained_bounds(ordered, lower, upper)
    count = stop - start
    fallback = count < MIN_QUARTILE_SIZE
    quar1 = count // 4
    rows = np.arange(d)
    q1 = ordered[rows, np.clip(start + quar1 - 1, 0, n - 1)]
    if rule is QuartileRule.MIRRORED:
        q3 = ordered[rows, np.clip(stop - quar1, 0, n - 1)]
    else:
        q3 = ordered[rows, np.clip(start + 3 * quar1 - 1, 0, n - 1)]
    w = WEIGHT_INTERCEPT + WEIGHT_SLOPE / n
    estimate = w * (q1 + q3) / 2 + (1 - w) * m
    return np.where(fallback, m, estimate), count, fallback


def aggregate_ema(
    samples, k: float = DEFAULT_K, quartile_rule=QuartileRule.INDEX
) -> AggregationOutcome:
    """Quartile-based estimated-mean aggregation.

    Per coordinate: sort the client values, take the median, drop values
    outside the IQR fences, then combine the first and third quartiles of
    the kept run with the pre-trim median using ``w = 0.70 + 0.39 / n``
    (``n`` = number of clients).  Coordinates with fewer than four clients,
    or fewer than four values left after trimming, fall back to the
    untrimmed median.

    The fences always use the INDEX quartile rule; ``quartile_rule`` picks
    the quartiles of the kept run that enter the estimate (INDEX by default,
    MIRRORED removes the small downward bias on symmetric data).

    Args:
        samples: Sequence of ``CoordinateSample`` or a ``(D, n)`` array.
        k: IQR fence multiplier.
        quartile_rule: ``QuartileRule`` (or its name) for the estimate.
    """
    coords = coordinate_matrix(samples)
    n = coords.shape[1]
    rule = QuartileRule.parse(quartile_rule)
    estimate, count, fallback = _by_blocks(lambda c: _ema_block(c, k, rule), coords)
    diag = AggregationDiagnostics(
        rule=Rule.EMA.value,
        n_clients=n,
        retained_counts=np.asarray(count),
        weight=WEIGHT_INTERCEPT + WEIGHT_SLOPE / n if n >= MIN_QUARTILE_SIZE else None,
        median_fallbacks=int(np.sum(fallback)),
        all_filtered=int(np.sum(np.asarray(count) == 0)),
    )
    return _outcome(estimate, diag)


def aggregate_mean(samples) -> AggregationOutcome:
    coords = coordinate_matrix(samples)
    return _outcome(
        coords.mean(axis=1), AggregationDiagnostics(Rule.MEAN.value, coords.shape[1])
    )


def aggregate_median(samples) -> AggregationOutcome:
    coords = coordinate_matrix(samples)
    (values,) = _by_blocks(lambda c: (median_rows(np.sort(c, axis=1)),), coords)
    return _outcome(values, AggregationDiagnostics(Rule.MEDIAN.value, coords.shape[1]))


def trim_count(n: int, trim_fraction: float) -> int:
    """Values cut from each end: ``ceil(trim_fraction * n)``.

    The product is rounded to 9 decimals first so that e.g. ``0.1 * 30``
    cuts 3 values rather than 4.
    """
    return math.ceil(round(trim_fraction * n, 9))


def aggregate_trimmed_mean(samples, trim_fraction: float = 0.2) -> AggregationOutcome:
    """Drop the ``ceil(beta * n)`` smallest and largest values per coordinate, average the rest."""
    if not 0 <= trim_fraction < 0.5:
        raise TrimTooAggressive(f"trim_fraction must lie in [0, 0.5), got {trim_fraction}")
    coords = coordinate_matrix(samples)
    n = coords.shape[1]
    cut = trim_count(n, trim_fraction)
    if n - 2 * cut <= 0:
        raise TrimTooAggressive(f"trimming {cut} from each end of {n} leaves nothing")

    def block(c):
        return (np.sort(c, axis=1)[:, cut : n - cut].mean(axis=1),)

    (values,) = _by_blocks(block, coords)
    diag = AggregationDiagnostics(
        Rule.TRIMMED_MEAN.value, n, retained_counts=np.full(coords.shape[0], n - 2 * cut)
    )
    return _outcome(values, diag)


def _client_matrix(updates) -> tuple[list[int], np.ndarray]:
    if isinstance(updates, np.ndarray):
        matrix = np.atleast_2d(np.asarray(updates, dtype=np.float64))
        if matrix.size == 0:
            raise EmptyRound("no updates")
        return list(range(matrix.shape[0])), matrix
    updates = sorted(updates, key=lambda u: u.client_id)
    if not updates:
        raise EmptyRound("no updates")
    return [u.client_id for u in updates], stack_updates(updates)


def krum_scores(matrix: np.ndarray, f: int) -> np.ndarray:
    """Sum of squared distances from each update to its ``n - f - 2`` nearest peers."""
    n = matrix.shape[0]
    if n < f + 3:
        raise TooFewClients(f"Krum needs n >= f + 3 (n={n}, f={f})")
    dist = cdist(matrix, matrix, metric="sqeuclidean")
    np.fill_diagonal(dist, np.inf)
    nearest = np.sort(dist, axis=1)[:, : n - f - 2]
    return nearest.sum(axis=1)


def aggregate_krum(updates: Sequence[ClientUpdate] | np.ndarray, f: int = 0) -> AggregationOutcome:
    """Return the single update with the lowest Krum score; ties go to the lowest client id."""
    ids, matrix = _client_matrix(updates)
    scores = krum_scores(matrix, f)
    best = int(np.argmin(scores))
    diag = AggregationDiagnostics(Rule.KRUM.value, len(ids), selected_client=ids[best])
    return _outcome(matrix[best].copy(), diag)


def zeno_scores(
    matrix: np.ndarray,
    validation_oracle: Callable[[np.ndarray], float],
    params: np.ndarray,
    rho: float,
    gamma: float,
) -> np.ndarray:
    base = float(validation_oracle(params))
    if not math.isfinite(base):
        raise OracleFailure("validation loss at current parameters is not finite")
    scores = np.empty(matrix.shape[0])
    for i, g in enumerate(matrix):
        loss = float(validation_oracle(params - gamma * g))
        if not math.isfinite(loss):
            raise OracleFailure(f"validation loss for update {i} is not finite")
        scores[i] = base - loss - rho * float(g @ g)
    return scores


def aggregate_zeno(
    updates: Sequence[ClientUpdate] | np.ndarray,
    validation_oracle: Callable[[np.ndarray], float],
    params,
    rho: float = DEFAULT_ZENO_RHO,
    b: int = 0,
    gamma: float = 0.01,
) -> AggregationOutcome:
    """Score updates by validation-loss descent minus a norm penalty, drop the ``b`` worst, average."""
    ids, matrix = _client_matrix(updates)
    n = len(ids)
    if n <= b:
        raise TooFewClients(f"Zeno needs n > b (n={n}, b={b})")
    params = np.asarray(params, dtype=np.float64)
    scores = zeno_scores(matrix, validation_oracle, params, rho, gamma)
    order = np.argsort(scores, kind="stable")
    dropped = np.sort(order[:b])
    keep = np.sort(order[b:])
    diag = AggregationDiagnostics(
        Rule.ZENO.value,
        n,
        retained_counts=np.full(matrix.shape[1], n - b),
        dropped_clients=tuple(ids[i] for i in dropped),
    )
    return _outcome(matrix[keep].mean(axis=0), diag)


def aggregate(
    updates: Sequence[ClientUpdate] | np.ndarray,
    config: AggregationRuleConfig,
    *,
    validation_oracle: Callable[[np.ndarray], float] | None = None,
    params=None,
    learning_rate: float = 0.01,
) -> AggregationOutcome:
    """Run the rule named by ``config`` on client-major updates.

    ``updates`` is a sequence of ``ClientUpdate`` or an ``(n, D)`` array.
    Zeno additionally needs ``validation_oracle`` and ``params``; its step
    size defaults to ``learning_rate``.
    """
    ids, matrix = _client_matrix(updates)
    rule = config.rule
    if rule is Rule.EMA:
        return aggregate_ema(matrix.T, config.k, config.quartile_rule)
    if rule is Rule.MEAN:
        return aggregate_mean(matrix.T)
    if rule is Rule.MEDIAN:
        return aggregate_median(matrix.T)
    if rule is Rule.TRIMMED_MEAN:
        return aggregate_trimmed_mean(matrix.T, config.trim_fraction)
    if rule is Rule.KRUM:
        outcome = aggregate_krum(matrix, config.byzantine_count_f)
        outcome.diagnostics.selected_client = ids[outcome.diagnostics.selected_client]
        return outcome
    if validation_oracle is None or params is None:
        raise ConfigError("Zeno needs a validation oracle and current parameters")
    gamma = config.zeno_gamma if config.zeno_gamma is not None else learning_rate
    outcome = aggregate_zeno(
        matrix, validation_oracle, params, config.zeno_rho, config.zeno_remove_b, gamma
    )
    outcome.diagnostics.dropped_clients = tuple(
        ids[i] for i in outcome.diagnostics.dropped_clients
    )
    return outcome
