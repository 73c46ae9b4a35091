"""IQR fences and value-based outlier filtering.

Fences come from the quartiles of the untrimmed sample::

    lower = q1 - k * (q3 - q1)
    upper = q3 + k * (q3 - q1)

Values on a fence are kept.  Because the fences bracket ``[q1, q3]`` and the
sample is sorted, the retained values always form one contiguous run of the
sorted array, which is what the batched helpers exploit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllFiltered
from .quantiles import SortedSample, _as_sorted, quartile_indices

DEFAULT_K = 1.5


@dataclass(frozen=True)
class OutlierThresholds:
    lower: float
    upper: float
    k: float
    iqr: float

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.iqr < 0 or self.lower > self.upper:
            raise ValueError("inconsistent thresholds")

    def contains(self, values) -> np.ndarray:
        values = np.asarray(values)
        return (values >= self.lower) & (values <= self.upper)


@dataclass(frozen=True)
class FilterReport:
    """Result of fencing a sample.

    ``outlier_fraction`` is ``dropped_count / n``.  ``range_fraction`` is the
    share of the sample's range lost by trimming, i.e.
    ``1 - (max(kept) - min(kept)) / (max - min)``; it is ``None`` for a
    constant sample.
    """

    retained: SortedSample
    retained_count: int
    dropped_count: int
    outlier_fraction: float
    range_fraction: float | None = None


def compute_thresholds(sample, k: float = DEFAULT_K) -> OutlierThresholds:
    values = _as_sorted(sample)
    i1, i3 = quartile_indices(values.size)
    q1, q3 = float(values[i1]), float(values[i3])
    iqr = q3 - q1
    return OutlierThresholds(q1 - k * iqr, q3 + k * iqr, k, iqr)


def filter_outliers(sample, thresholds: OutlierThresholds) -> FilterReport:
    values = _as_sorted(sample)
    kept = values[thresholds.contains(values)]
    if kept.size == 0:
        raise AllFiltered(
            f"every value lies outside [{thresholds.lower}, {thresholds.upper}]"
        )
    n = values.size
    span = values[-1] - values[0]
    range_fraction = None
    if span > 0:
        range_fraction = float(1.0 - (kept[-1] - kept[0]) / span)
    return FilterReport(
        retained=SortedSample(kept),
        retained_count=kept.size,
        dropped_count=n - kept.size,
        outlier_fraction=(n - kept.size) / n,
        range_fraction=range_fraction,
    )


def normalized_trimmed_mean(sample, k: float = DEFAULT_K) -> float:
    """Mean of the values inside the IQR fences."""
    values = _as_sorted(sample)
    report = filter_outliers(values, compute_thresholds(values, k))
    return float(report.retained.values.sum() / report.retained_count)


def fence_rows(sorted_rows: np.ndarray, k: float = DEFAULT_K) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper fences for every row of a row-sorted array."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    i1, i3 = quartile_indices(sorted_rows.shape[1])
    q1, q3 = sorted_rows[:, i1], sorted_rows[:, i3]
    iqr = q3 - q1
    return q1 - k * iqr, q3 + k * iqr


def retained_bounds(
    sorted_rows: np.ndarray, lower: np.ndarray, upper: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Half-open index range ``[start, stop)`` of in-fence values per row."""
    start = np.sum(sorted_rows < lower[:, None], axis=1)
    stop = np.sum(sorted_rows <= upper[:, None], axis=1)
    return start, stop
