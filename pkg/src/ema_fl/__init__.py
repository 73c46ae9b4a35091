"""Quartile-based estimated-mean (EMA) gradient aggregation for federated learning.

The package provides the EMA rule and its IQR outlier filter, baseline
aggregators (mean, median, trimmed mean, Krum, Zeno), normality pre-testing
of per-coordinate gradient samples, CV-based non-IID detection and a
deterministic FedSGD simulator.
"""

from .aggregators import (
    AggregationOutcome,
    AggregationRuleConfig,
    Rule,
    aggregate,
    aggregate_ema,
    aggregate_krum,
    aggregate_mean,
    aggregate_median,
    aggregate_trimmed_mean,
    aggregate_zeno,
)
from .gradients import (
    ClientUpdate,
    CoordinateSample,
    GradientVector,
    transpose_to_coordinates,
    validate_round,
)
from .heterogeneity import ClientLossRecord, HeterogeneityReport, Verdict, detect_non_iid, evaluate_model_on_client
from .normality import anderson_darling, pretest_round, shapiro_wilk
from .outliers import compute_thresholds, filter_outliers, normalized_trimmed_mean
from .quantiles import QuartileRule, QuartileSummary, SortedSample, estimated_mean, estimator_weight, median, quartiles, sample_estimated_mean

__version__ = "0.1.0"
