"""Byzantine client behaviour injected into simulated rounds.

Malicious clients are always the ``floor(fraction * n)`` lowest client ids,
so the attacked set never depends on the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import ConfigError


class AttackKind(str, Enum):
    NONE = "none"
    SIGN_FLIP = "sign_flip"
    GAUSSIAN_NOISE = "gaussian_noise"
    SCALE_UP = "scale_up"
    ZERO = "zero"

    @classmethod
    def parse(cls, name) -> "AttackKind":
        key = str(getattr(name, "value", name)).strip().lower().replace("-", "_")
        aliases = {"signflip": "sign_flip", "noise": "gaussian_noise", "scale": "scale_up", "scaleup": "scale_up"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ConfigError(f"unknown attack kind {name!r}") from None


@dataclass(frozen=True)
class AttackSpec:
    fraction: float = 0.0
    kind: AttackKind = AttackKind.NONE
    sigma: float = 1.0
    factor: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind.parse(self.kind))
        if not 0 <= self.fraction < 1:
            raise ConfigError("attack fraction must lie in [0, 1)")
        if self.sigma < 0:
            raise ConfigError("noise sigma must be non-negative")

    def malicious_count(self, n_clients: int) -> int:
        # Rounded to 9 decimals so that e.g. 0.3 * 10 counts 3 clients.
        return math.floor(round(self.fraction * n_clients, 9))

    def is_malicious(self, client_id: int, n_clients: int) -> bool:
        return self.kind is not AttackKind.NONE and client_id < self.malicious_count(n_clients)


def noise_stream(seed: int, client_id: int, round: int) -> np.random.Generator:
    return np.random.default_rng([seed, client_id, round, 0xA77C])


def apply_attack(
    update: np.ndarray, spec: AttackSpec, client_id: int, round: int, seed: int, n_clients: int
) -> np.ndarray:
    """Return the update client ``client_id`` actually sends in ``round``."""
    update = np.asarray(update, dtype=np.float64)
    if not spec.is_malicious(client_id, n_clients):
        return update
    return corrupt(update, spec, noise_stream(seed, client_id, round))


def corrupt(update: np.ndarray, spec: AttackSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply the attack transform unconditionally."""
    kind = spec.kind
    if kind is AttackKind.SIGN_FLIP:
        return -update
    if kind is AttackKind.GAUSSIAN_NOISE:
        rng = rng if rng is not None else np.random.default_rng()
        return update + rng.normal(0.0, spec.sigma, update.shape)
    if kind is AttackKind.SCALE_UP:
        return spec.factor * update
    if kind is AttackKind.ZERO:
        return np.zeros_like(update)
    return update
