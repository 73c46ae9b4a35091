"""Normality tests and the pre-testing rate of per-coordinate gradient samples.

Shapiro-Wilk follows Royston's AS R94 (coefficient approximation and the
normalising transform of ``1 - W``), valid for ``3 <= n <= 5000``.
Anderson-Darling uses the both-parameters-estimated case with Stephens'
small-sample correction ``A*^2 = A^2 (1 + 0.75/n + 2.25/n^2)``.

Both tests have batched cores (``*_rows``) working on many samples of the
same size at once; the pre-testing rate over thousands of coordinates relies
on them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import ConstantSample, SampleSizeOutOfRange
from .gradients import coordinate_matrix
from .quantiles import _as_sorted

SW_MIN_N, SW_MAX_N = 3, 5000
AD_MIN_N = 8

# Stephens, both mean and variance estimated.
AD_CRITICAL = {0.10: 0.631, 0.05: 0.752, 0.025: 0.873, 0.01: 1.035}

# AS R94 polynomial coefficients, ascending powers.
_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)
_SMALL = 1e-19
_RANGE_EPS = 1e-19


def _poly(coefs, x):
    return np.polynomial.polynomial.polyval(x, coefs)


class TestKind(str, Enum):
    SHAPIRO_WILK = "sw"
    ANDERSON_DARLING = "ad"
    BOTH = "both"

    __test__ = False  # keeps pytest from collecting it

    @classmethod
    def parse(cls, name) -> "TestKind":
        key = str(getattr(name, "value", name)).strip().lower().replace("-", "_")
        aliases = {
            "shapirowilk": "sw",
            "shapiro_wilk": "sw",
            "andersondarling": "ad",
            "anderson_darling": "ad",
        }
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class NormalityTestResult:
    """Outcome of one normality test.

    For Shapiro-Wilk ``statistic`` is ``W`` and ``is_normal`` means
    ``p_value > alpha``.  For Anderson-Darling ``statistic`` is the raw
    ``A^2``, ``modified_statistic`` is ``A*^2`` and ``is_normal`` means
    ``A*^2 < critical_value``; ``p_value`` is the D'Agostino-Stephens
    approximation, reported for information only.
    """

    test: str
    statistic: float
    p_value: float
    alpha: float
    is_normal: bool
    n: int
    modified_statistic: float | None = None
    critical_value: float | None = None


@lru_cache(maxsize=64)
def shapiro_wilk_coefficients(n: int) -> np.ndarray:
    """AS R94 weights ``a_1..a_n`` (antisymmetric, ``sum a_i^2 = 1``)."""
    if not SW_MIN_N <= n <= SW_MAX_N:
        raise SampleSizeOutOfRange(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    a = np.zeros(n)
    half = n // 2
    if n == 3:
        a[-1] = np.sqrt(0.5)
    else:
        i = np.arange(1, n + 1)
        m = ndtri((i - 0.375) / (n + 0.25))
        summ2 = float(m @ m)
        rsn = 1.0 / np.sqrt(n)
        upper = m[::-1][:half]  # m_n, m_{n-1}, ... (positive)
        coef = np.empty(half)
        coef[0] = upper[0] / np.sqrt(summ2) + _poly(_C1, rsn)
        if n > 5:
            coef[1] = upper[1] / np.sqrt(summ2) + _poly(_C2, rsn)
            phi = (summ2 - 2 * upper[0] ** 2 - 2 * upper[1] ** 2) / (
                1 - 2 * coef[0] ** 2 - 2 * coef[1] ** 2
            )
            coef[2:] = upper[2:] / np.sqrt(phi)
        else:
            phi = (summ2 - 2 * upper[0] ** 2) / (1 - 2 * coef[0] ** 2)
            coef[1:] = upper[1:] / np.sqrt(phi)
        a[n - half :] = coef[::-1]
    a[:half] = -a[::-1][:half]
    a.flags.writeable = False
    return a


def shapiro_wilk_pvalue(w: np.ndarray, n: int) -> np.ndarray:
    """Royston's upper-tail p-value for ``W`` at sample size ``n``."""
    w = np.clip(np.asarray(w, dtype=np.float64), 0.0, 1.0)
    if n == 3:
        p = (6 / np.pi) * (np.arcsin(np.sqrt(w)) - np.arcsin(np.sqrt(0.75)))
        return np.clip(p, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log1p(-w)
        if n <= 11:
            gamma = _poly(_G, n)
            tiny = y >= gamma
            y = -np.log(np.where(tiny, np.nan, gamma - y))
            mu = _poly(_C3, n)
            sigma = np.exp(_poly(_C4, n))
        else:
            tiny = np.zeros_like(y, dtype=bool)
            ln = np.log(n)
            mu = _poly(_C5, ln)
            sigma = np.exp(_poly(_C6, ln))
        p = ndtr(-(y - mu) / sigma)
    p = np.where(tiny, _SMALL, p)
    # W == 1 exactly gives y = -inf and p = 1.
    return np.clip(np.nan_to_num(p, nan=1.0), 0.0, 1.0)


def shapiro_wilk_rows(sorted_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(W, p)`` for every row of a row-sorted array; constant rows give NaN."""
    sorted_rows = np.atleast_2d(np.asarray(sorted_rows, dtype=np.float64))
    n = sorted_rows.shape[1]
    a = shapiro_wilk_coefficients(n)
    rng = sorted_rows[:, -1] - sorted_rows[:, 0]
    constant = rng <= _RANGE_EPS * np.maximum(1.0, np.abs(sorted_rows[:, 0]))
    scale = np.where(constant, 1.0, rng)[:, None]
    x = sorted_rows / scale
    centred = x - x.mean(axis=1, keepdims=True)
    ssq = np.einsum("ij,ij->i", centred, centred)
    num = (centred @ a) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.minimum(num / ssq, 1.0)
    w = np.where(constant, np.nan, w)
    p = np.where(constant, np.nan, shapiro_wilk_pvalue(np.nan_to_num(w, nan=1.0), n))
    return w, p


def _check_sample(values: np.ndarray, lo: int, hi: int | None, name: str):
    n = values.size
    if n < lo or (hi is not None and n > hi):
        bound = f"{lo} <= n <= {hi}" if hi is not None else f"n >= {lo}"
        raise SampleSizeOutOfRange(f"{name} needs {bound}, got {n}")
    if values[-1] - values[0] <= _RANGE_EPS * max(1.0, abs(values[0])):
        raise ConstantSample(f"{name} is undefined for a constant sample")


def shapiro_wilk(sample, alpha: float = 0.05) -> NormalityTestResult:
    values = _as_sorted(sample)
    _check_sample(values, SW_MIN_N, SW_MAX_N, "Shapiro-Wilk")
    w, p = shapiro_wilk_rows(values[None, :])
    return NormalityTestResult(
        "shapiro_wilk", float(w[0]), float(p[0]), alpha, bool(p[0] > alpha), values.size
    )


def _ad_critical(alpha: float) -> float:
    for level, crit in AD_CRITICAL.items():
        if abs(alpha - level) < 1e-12:
            return crit
    raise ValueError(
        f"Anderson-Darling critical values exist only for alpha in {sorted(AD_CRITICAL)}"
    )


def anderson_darling_pvalue(modified: np.ndarray) -> np.ndarray:
    """D'Agostino & Stephens (1986) piecewise approximation for ``A*^2``."""
    z = np.asarray(modified, dtype=np.float64)
    with np.errstate(over="ignore"):
        p = np.select(
            [z < 0.2, z < 0.34, z < 0.6],
            [
                1 - np.exp(-13.436 + 101.14 * z - 223.73 * z**2),
                1 - np.exp(-8.318 + 42.796 * z - 59.938 * z**2),
                np.exp(0.9177 - 4.279 * z - 1.38 * z**2),
            ],
            np.exp(1.2937 - 5.709 * z + 0.0186 * z**2),
        )
    return np.clip(p, 0.0, 1.0)


def anderson_darling_rows(sorted_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(A^2, A*^2)`` for every row, parameters estimated from the row."""
    sorted_rows = np.atleast_2d(np.asarray(sorted_rows, dtype=np.float64))
    n = sorted_rows.shape[1]
    mean = sorted_rows.mean(axis=1, keepdims=True)
    sd = sorted_rows.std(axis=1, ddof=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (sorted_rows - mean) / sd
    i = np.arange(1, n + 1)
    log_cdf = log_ndtr(z)
    log_sf = log_ndtr(-z[:, ::-1])
    a2 = -n - np.sum((2 * i - 1) * (log_cdf + log_sf), axis=1) / n
    modified = a2 * (1 + 0.75 / n + 2.25 / n**2)
    return a2, modified


def anderson_darling(sample, alpha: float = 0.05) -> NormalityTestResult:
    values = _as_sorted(sample)
    _check_sample(values, AD_MIN_N, None, "Anderson-Darling")
    crit = _ad_critical(alpha)
    a2, modified = anderson_darling_rows(values[None, :])
    return NormalityTestResult(
        "anderson_darling",
        float(a2[0]),
        float(anderson_darling_pvalue(modified)[0]),
        alpha,
        bool(modified[0] < crit),
        values.size,
        modified_statistic=float(modified[0]),
        critical_value=crit,
    )


@dataclass(frozen=True)
class PretestReport:
    """Share of coordinates whose cross-client sample passes normality.

    Constant coordinates count as passing and are tallied in
    ``constant_count``; coordinates a test cannot handle are tallied in
    ``error_count`` and count as failing.  For ``kind="both"`` a coordinate
    passes only when both tests accept it.
    """

    total: int
    passed: int
    rate: float
    alpha: float
    kind: str
    constant_count: int = 0
    error_count: int = 0
    sw_passed: int | None = None
    ad_passed: int | None = None

    @property
    def failed(self) -> int:
        return self.total - self.passed - self.error_count

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def pretest_round(samples, alpha: float = 0.05, kind="both", block: int = 4096) -> PretestReport:
    """Run the chosen normality test on every coordinate sample.

    Args:
        samples: Sequence of ``CoordinateSample`` or a ``(D, n)`` array.
        alpha: Significance level; Anderson-Darling needs one of its table levels.
        kind: ``"sw"``, ``"ad"`` or ``"both"``.
        block: Coordinates processed per vectorised batch.
    """
    kind = TestKind.parse(kind)
    coords = coordinate_matrix(samples)
    d, n = coords.shape
    run_sw = kind in (TestKind.SHAPIRO_WILK, TestKind.BOTH)
    run_ad = kind in (TestKind.ANDERSON_DARLING, TestKind.BOTH)
    crit = _ad_critical(alpha) if run_ad else None

    sw_ok_size = SW_MIN_N <= n <= SW_MAX_N
    ad_ok_size = n >= AD_MIN_N
    size_error = (run_sw and not sw_ok_size) or (run_ad and not ad_ok_size)

    passed = constant = errors = sw_pass = ad_pass = 0
    for lo in range(0, d, block):
        rows = np.sort(coords[lo : lo + block], axis=1)
        spread = rows[:, -1] - rows[:, 0]
        const = spread <= _RANGE_EPS * np.maximum(1.0, np.abs(rows[:, 0]))
        ok = np.ones(rows.shape[0], dtype=bool)
        if not size_error:
            live = rows[~const]
            if run_sw:
                _, p = shapiro_wilk_rows(live) if live.size else (None, np.empty(0))
                sw_mask = p > alpha
                sw_pass += int(sw_mask.sum())
                ok[~const] &= sw_mask
            if run_ad:
                _, mod = anderson_darling_rows(live) if live.size else (None, np.empty(0))
                ad_mask = mod < crit
                ad_pass += int(ad_mask.sum())
                ok[~const] &= ad_mask
            passed += int(ok.sum())
        else:
            passed += int(const.sum())
            errors += int((~const).sum())
        constant += int(const.sum())

    return PretestReport(
        total=d,
        passed=passed,
        rate=passed / d,
        alpha=alpha,
        kind=kind.value,
        constant_count=constant,
        error_count=errors,
        sw_passed=sw_pass + constant if run_sw and not size_error else None,
        ad_passed=ad_pass + constant if run_ad and not size_error else None,
    )
