"""Per-client loss evaluation and coefficient-of-variation non-IID detection."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, TooFewClients

DEFAULT_THRESHOLD = 0.25
MU_EPSILON = 1e-12

NON_IID_MESSAGE = "The dataset is likely non-iid."
IID_MESSAGE = "The dataset is likely iid."


class Verdict(str, Enum):
    LIKELY_NON_IID = "LikelyNonIID"
    LIKELY_IID = "LikelyIID"
    UNDEFINED = "Undefined"


@dataclass(frozen=True)
class ClientLossRecord:
    client_id: int
    loss: float

    def __post_init__(self):
        if not math.isfinite(self.loss) or self.loss < 0:
            raise ValueError(f"client {self.client_id}: loss must be finite and >= 0")

    def display(self) -> str:
        return f"Client: {self.client_id}, Loss: {self.loss:.4f}"


@dataclass(frozen=True)
class HeterogeneityReport:
    losses: tuple
    mu: float
    sigma: float
    cv: float | None
    threshold_d: float
    verdict: Verdict

    @property
    def message(self) -> str:
        if self.verdict is Verdict.LIKELY_NON_IID:
            return NON_IID_MESSAGE
        if self.verdict is Verdict.LIKELY_IID:
            return IID_MESSAGE
        return "Coefficient of variation is undefined (mean loss is zero)."

    def to_dict(self) -> dict:
        return {
            "losses": [{"client_id": r.client_id, "loss": r.loss} for r in self.losses],
            "mu": self.mu,
            "sigma": self.sigma,
            "cv": self.cv,
            "threshold_d": self.threshold_d,
            "verdict": self.verdict.value,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["client_id", "loss"])
        for r in self.losses:
            writer.writerow([r.client_id, f"{r.loss:.4f}"])
        return buf.getvalue()


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label outside [0, n_classes)")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def evaluate_model_on_client(
    model: Callable[[np.ndarray], np.ndarray], features, targets
) -> float:
    """Mean squared error of ``model(features)`` against the client's targets.

    Integer class labels (1-D ``targets``) are one-hot encoded to the width of
    the model output before the error is taken.  The mean runs over every
    entry of the output matrix.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        raise EmptyDataset("client dataset is empty")
    outputs = np.asarray(model(features), dtype=np.float64)
    if outputs.ndim == 1:
        outputs = outputs[:, None]
    targets = np.asarray(targets)
    if targets.ndim == 1 and outputs.shape[1] > 1:
        targets = one_hot(targets, outputs.shape[1])
    targets = targets.astype(np.float64).reshape(outputs.shape[0], -1)
    if targets.shape != outputs.shape:
        raise DimensionMismatch(
            f"model output {outputs.shape} does not match targets {targets.shape}"
        )
    return float(np.mean((outputs - targets) ** 2))


def detect_non_iid(
    losses: Sequence[ClientLossRecord] | Sequence[float], d: float = DEFAULT_THRESHOLD
) -> HeterogeneityReport:
    """Flag likely non-IID data when the coefficient of variation of client losses exceeds ``d``.

    The standard deviation is the population (``1/n``) form.  A mean loss at
    or below ``1e-12`` yields ``Verdict.UNDEFINED``.
    """
    records = tuple(
        r if isinstance(r, ClientLossRecord) else ClientLossRecord(i, float(r))
        for i, r in enumerate(losses)
    )
    if len(records) < 2:
        raise TooFewClients("need losses from at least two clients")
    if d <= 0:
        raise ValueError("threshold d must be positive")
    values = np.array([r.loss for r in records])
    mu = float(values.mean())
    sigma = float(np.sqrt(np.mean((values - mu) ** 2)))
    if mu <= MU_EPSILON:
        return HeterogeneityReport(records, mu, sigma, None, d, Verdict.UNDEFINED)
    cv = sigma / mu
    verdict = Verdict.LIKELY_NON_IID if cv > d else Verdict.LIKELY_IID
    return HeterogeneityReport(records, mu, sigma, cv, d, verdict)


def exclude_above_quantile(
    records: Sequence[ClientLossRecord], quantile: float | None = None
) -> list[int]:
    """Client ids whose loss lies above the given loss quantile.

    Disabled (returns no ids) when ``quantile`` is ``None``.
    """
    if quantile is None:
        return []
    if not 0 < quantile < 1:
        raise ValueError("quantile must lie in (0, 1)")
    cutoff = np.quantile([r.loss for r in records], quantile)
    return [r.client_id for r in records if r.loss > cutoff]


def read_losses_csv(path) -> list[ClientLossRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"client_id", "loss"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns client_id,loss")
        return [ClientLossRecord(int(row["client_id"]), float(row["loss"])) for row in reader]
