"""Synchronous FedSGD rounds with pluggable aggregation and attack injection.

Each round every client draws one seeded mini-batch from its shard and sends
the exact gradient of the model loss.  Malicious clients corrupt their update,
the server validates and aggregates the round, and the global parameters take
one step of size ``learning_rate`` against the aggregate.

All randomness is derived from ``SimConfig.seed`` so that identical configs
produce identical metrics.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from ..aggregators import AggregationOutcome, AggregationRuleConfig, Rule, aggregate
from ..errors import ConfigError
from ..gradients import ClientUpdate, GradientVector, stack_updates, validate_round
from .attacks import AttackSpec, apply_attack
from .data import Dataset, DatasetSpec, PartitionSpec, load_dataset, partition_data, train_test_split
from .models import Model, ModelSpec, local_gradient

METRICS_HEADER = (
    "round",
    "rule",
    "attack_kind",
    "attack_fraction",
    "seed",
    "test_accuracy",
    "test_loss",
    "ema_fallback_count",
    "retained_mean",
)
ZENO_VALIDATION_SIZE = 64


@dataclass(frozen=True)
class SimConfig:
    n_clients: int = 50
    rounds: int = 100
    learning_rate: float = 0.01
    batch_size: int = 128
    seed: int = 0
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    rule: AggregationRuleConfig = field(default_factory=AggregationRuleConfig)
    model: ModelSpec | None = None
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    auth_token: bytes = b"ema-fl-shared-token"

    def __post_init__(self):
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if not np.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def with_overrides(self, **changes) -> "SimConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    test_accuracy: float
    test_loss: float
    ema_fallback_count: int
    retained_mean: float
    wall_time: float = field(default=0.0, compare=False)
    selected_client: int | None = None
    dropped_clients: tuple = ()


@dataclass
class SimState:
    """Everything the orchestrator owns between rounds."""

    config: SimConfig
    model: Model
    params: np.ndarray
    train: Dataset
    test: Dataset
    client_indices: list
    validation: Dataset
    round: int = 0


def resolve_model_spec(config: SimConfig, data: Dataset) -> ModelSpec:
    spec = config.model or ModelSpec(input_dim=data.dim, n_classes=data.n_classes)
    if spec.input_dim != data.dim or spec.n_classes != data.n_classes:
        spec = replace(spec, input_dim=data.dim, n_classes=data.n_classes)
    return spec


def init_state(config: SimConfig) -> SimState:
    data = load_dataset(config.dataset, config.seed)
    train, test = train_test_split(data, config.dataset.test_fraction, config.seed)
    model = Model(resolve_model_spec(config, data))
    clients = partition_data(train, config.partition, config.n_clients, config.seed)
    rng = np.random.default_rng([config.seed, 0x2E70])
    val_idx = rng.choice(len(test), size=min(ZENO_VALIDATION_SIZE, len(test)), replace=False)
    return SimState(
        config=config,
        model=model,
        params=model.init_params(config.seed),
        train=train,
        test=test,
        client_indices=clients,
        validation=test.subset(np.sort(val_idx)),
    )


def client_batch(state: SimState, client_id: int, round: int) -> np.ndarray:
    idx = state.client_indices[client_id]
    rng = np.random.default_rng([state.config.seed, client_id, round, 0xBA7C])
    size = min(state.config.batch_size, idx.size)
    return np.sort(rng.choice(idx, size=size, replace=False))


def collect_updates(state: SimState, round: int) -> list[ClientUpdate]:
    cfg = state.config
    updates = []
    for cid in range(cfg.n_clients):
        batch = state.train.subset(client_batch(state, cid, round))
        grad = local_gradient(state.model, state.params, batch.features, batch.labels)
        sent = apply_attack(grad, cfg.attack, cid, round, cfg.seed, cfg.n_clients)
        updates.append(ClientUpdate(cid, round, GradientVector(sent), cfg.auth_token))
    return updates


def server_step(state: SimState, updates: Iterable[ClientUpdate]) -> AggregationOutcome:
    cfg = state.config
    valid = validate_round(list(updates), cfg.auth_token, state.model.n_params)
    oracle = None
    if cfg.rule.rule is Rule.ZENO:
        val = state.validation
        oracle = lambda p: state.model.loss(p, val.features, val.labels)  # noqa: E731
    return aggregate(
        stack_updates(valid),
        cfg.rule,
        validation_oracle=oracle,
        params=state.params,
        learning_rate=cfg.learning_rate,
    )


def run_round(state: SimState) -> tuple[SimState, RoundMetrics]:
    """Advance the simulation by one synchronous round."""
    start = time.perf_counter()
    round = state.round
    outcome = server_step(state, collect_updates(state, round))
    params = state.params - state.config.learning_rate * outcome.values
    new_state = replace(state, params=params, round=round + 1)
    diag = outcome.diagnostics
    metrics = RoundMetrics(
        round=round + 1,
        test_accuracy=new_state.model.accuracy(params, state.test.features, state.test.labels),
        test_loss=new_state.model.loss(params, state.test.features, state.test.labels),
        ema_fallback_count=diag.median_fallbacks,
        retained_mean=diag.retained_mean,
        wall_time=time.perf_counter() - start,
        selected_client=diag.selected_client,
        dropped_clients=diag.dropped_clients,
    )
    return new_state, metrics


def run_simulation(config: SimConfig) -> list[RoundMetrics]:
    """Run ``config.rounds`` rounds from a fresh state; ``rounds=0`` yields no metrics."""
    return run_simulation_with_state(config)[1]


def run_simulation_with_state(config: SimConfig) -> tuple[SimState, list[RoundMetrics]]:
    state = init_state(config)
    history = []
    for _ in range(config.rounds):
        state, metrics = run_round(state)
        history.append(metrics)
    return state, history


def metrics_rows(config: SimConfig, history: Iterable[RoundMetrics]) -> list[list[str]]:
    rows = []
    for m in history:
        rows.append(
            [
                str(m.round),
                config.rule.rule.value,
                config.attack.kind.value,
                repr(float(config.attack.fraction)),
                str(config.seed),
                repr(m.test_accuracy),
                repr(m.test_loss),
                str(m.ema_fallback_count),
                repr(m.retained_mean),
            ]
        )
    return rows


def metrics_csv(config: SimConfig, history: Iterable[RoundMetrics], header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(METRICS_HEADER)
    writer.writerows(metrics_rows(config, history))
    return buf.getvalue()
