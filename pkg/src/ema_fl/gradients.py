"""Gradient data model, round validation and the per-coordinate re-layout.

Clients exchange flat gradient vectors.  The server gathers one vector per
client, checks the round, and re-lays the ``n x D`` update matrix into ``D``
cross-client samples, one per model coordinate.  Every scalar aggregation
rule consumes that coordinate layout.

Two fixture formats are supported for dumping a round to disk:

* ``EMAG`` binary: magic ``b"EMAG"``, version ``u16``, ``D`` as ``u64``,
  ``n`` as ``u32``, then ``n`` rows of ``D`` little-endian float64 values.
* CSV with header ``client_id,coord_0,...,coord_{D-1}``.
"""

from __future__ import annotations

import csv
import hmac
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, DuplicateClient, EmptyRound, NonFiniteValue

DUMP_MAGIC = b"EMAG"
DUMP_VERSION = 1
_HEADER = struct.Struct("<4sHQI")

logger = logging.getLogger(__name__)


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GradientVector:
    """Flat gradient with the shape of the parameter tensor it came from."""

    values: np.ndarray
    shape: tuple = ()

    def __post_init__(self):
        values = _frozen_array(self.values)
        shape = tuple(int(s) for s in self.shape) if self.shape else (values.size,)
        if any(s <= 0 for s in shape):
            raise ValueError(f"shape entries must be positive, got {shape}")
        if math.prod(shape) != values.size:
            raise DimensionMismatch(
                f"shape {shape} does not match {values.size} values"
            )
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue("gradient contains NaN or infinite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return self.values.size

    def reshaped(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    round: int
    gradient: GradientVector
    auth_token: bytes = b""

    def __post_init__(self):
        if self.client_id < 0 or self.round < 0:
            raise ValueError("client_id and round must be non-negative")
        if not isinstance(self.gradient, GradientVector):
            object.__setattr__(self, "gradient", GradientVector(self.gradient))


@dataclass(frozen=True)
class CoordinateSample:
    """Values of one model coordinate across all clients, by ascending client id."""

    coordinate_index: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = _frozen_array(self.values)
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue(
                f"coordinate {self.coordinate_index} holds non-finite values"
            )
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size


def validate_round(
    updates: Sequence[ClientUpdate],
    expected_token: bytes,
    expected_dim: int,
    *,
    strict: bool = False,
) -> list[ClientUpdate]:
    """Keep the authenticated, well-shaped updates of a round.

    Updates with a wrong token or a wrong dimension are dropped.  The result
    is ordered by ascending ``client_id`` regardless of arrival order.

    Args:
        updates: Updates collected for one round.
        expected_token: Shared secret every honest client presents.
        expected_dim: Model dimension ``D``.
        strict: Raise ``DimensionMismatch`` (listing every offender) instead
            of silently dropping wrongly shaped updates.

    Raises:
        DuplicateClient: Two updates carry the same client id.
        DimensionMismatch: Only with ``strict=True``.
        EmptyRound: Nothing survives.
    """
    if not updates:
        raise EmptyRound("round contains no updates")

    seen: set[int] = set()
    for u in updates:
        if u.client_id in seen:
            raise DuplicateClient(f"client {u.client_id} sent more than one update")
        seen.add(u.client_id)

    wrong_dim = [u.client_id for u in updates if u.gradient.dim != expected_dim]
    if wrong_dim and strict:
        raise DimensionMismatch(
            f"expected dimension {expected_dim}; offending clients {wrong_dim}",
            offenders=wrong_dim,
        )

    for cid in wrong_dim:
        logger.warning("client %d: dimension mismatch (expected %d)", cid, expected_dim)
    kept = []
    for u in updates:
        if u.gradient.dim != expected_dim:
            continue
        if not hmac.compare_digest(bytes(u.auth_token), bytes(expected_token)):
            logger.warning("client %d: authentication failed", u.client_id)
            continue
        kept.append(u)
    if not kept:
        raise EmptyRound("no update passed authentication and shape checks")
    return sorted(kept, key=lambda u: u.client_id)


def stack_updates(updates: Sequence[ClientUpdate]) -> np.ndarray:
    """Client-major ``(n, D)`` matrix, rows by ascending client id."""
    if not updates:
        raise EmptyRound("round contains no updates")
    ordered = sorted(updates, key=lambda u: u.client_id)
    dims = {u.gradient.dim for u in ordered}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed gradient dimensions {sorted(dims)}")
    return np.stack([u.gradient.values for u in ordered])


def transpose_to_coordinates(updates: Sequence[ClientUpdate]) -> list[CoordinateSample]:
    matrix = stack_updates(updates)
    return [CoordinateSample(j, matrix[:, j]) for j in range(matrix.shape[1])]


def coordinate_matrix(samples) -> np.ndarray:
    """``(D, n)`` array from coordinate samples; row ``j`` is coordinate ``j``.

    A 2-D array is accepted as-is and interpreted in the same layout.
    """
    if isinstance(samples, np.ndarray):
        arr = np.asarray(samples, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatch("coordinate matrix must be 2-D (D, n)")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise EmptyRound("coordinate matrix is empty")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("coordinate matrix holds non-finite values")
        return arr
    samples = list(samples)
    if not samples:
        raise EmptyRound("no coordinate samples")
    sizes = {s.n for s in samples}
    if len(sizes) != 1:
        raise DimensionMismatch(f"coordinate samples have mixed sizes {sorted(sizes)}")
    if 0 in sizes:
        raise EmptyRound("coordinate samples are empty")
    ordered = sorted(samples, key=lambda s: s.coordinate_index)
    return np.stack([s.values for s in ordered])


def reconstruct_updates(
    samples: Sequence[CoordinateSample],
    client_ids: Sequence[int] | None = None,
    round: int = 0,
    auth_token: bytes = b"",
) -> list[ClientUpdate]:
    """Inverse of :func:`transpose_to_coordinates`."""
    matrix = coordinate_matrix(samples).T
    ids = list(client_ids) if client_ids is not None else list(range(matrix.shape[0]))
    if len(ids) != matrix.shape[0]:
        raise DimensionMismatch("client_ids length differs from sample size")
    return [
        ClientUpdate(cid, round, GradientVector(row), auth_token)
        for cid, row in zip(ids, matrix)
    ]


def updates_from_matrix(
    matrix,
    round: int = 0,
    auth_token: bytes = b"",
    client_ids: Iterable[int] | None = None,
) -> list[ClientUpdate]:
    """Wrap the rows of an ``(n, D)`` matrix as client updates."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    ids = list(client_ids) if client_ids is not None else range(matrix.shape[0])
    return [
        ClientUpdate(int(cid), round, GradientVector(row), auth_token)
        for cid, row in zip(ids, matrix)
    ]


def write_gradient_dump(path, matrix) -> None:
    """Write an ``(n, D)`` update matrix in the ``EMAG`` binary layout."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype="<f8"))
    n, dim = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, dim, n))
        fh.write(np.ascontiguousarray(matrix).tobytes())


def read_gradient_dump(path) -> np.ndarray:
    """Read an ``EMAG`` binary dump back into an ``(n, D)`` float64 matrix."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, dim, n = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != DUMP_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 8 * n * dim
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=n * dim)
    return data.reshape(n, dim).astype(np.float64)


def write_gradient_csv(path, matrix, client_ids: Sequence[int] | None = None) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    n, dim = matrix.shape
    ids = list(client_ids) if client_ids is not None else list(range(n))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id"] + [f"coord_{j}" for j in range(dim)])
        for cid, row in zip(ids, matrix):
            writer.writerow([cid] + [repr(float(v)) for v in row])


def read_gradient_csv(path) -> tuple[list[int], np.ndarray]:
    """Return ``(client_ids, matrix)`` from the CSV fixture format."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "client_id":
            raise ValueError(f"{path}: first column must be client_id")
        dim = len(header) - 1
        if header[1:] != [f"coord_{j}" for j in range(dim)]:
            raise ValueError(f"{path}: malformed coordinate header")
        ids, rows = [], []
        for line in reader:
            if not line:
                continue
            if len(line) != dim + 1:
                raise DimensionMismatch(f"{path}: row for client {line[0]} has wrong width")
            ids.append(int(line[0]))
            rows.append([float(v) for v in line[1:]])
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), dim)


def load_round(path) -> tuple[list[int], np.ndarray]:
    """Load a dumped round from either format, picked by file suffix."""
    if str(path).lower().endswith(".csv"):
        return read_gradient_csv(path)
    matrix = read_gradient_dump(path)
    return list(range(matrix.shape[0])), matrix
