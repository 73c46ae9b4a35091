"""Deterministic federated-learning simulator."""

from .attacks import AttackKind, AttackSpec, apply_attack
from .data import (
    Dataset,
    DatasetSpec,
    PartitionKind,
    PartitionSpec,
    load_dataset,
    make_blobs,
    partition_data,
    read_idx_images,
    read_idx_labels,
)
from .models import Model, ModelSpec, local_gradient
from .simulation import (
    METRICS_HEADER,
    RoundMetrics,
    SimConfig,
    SimState,
    init_state,
    metrics_csv,
    run_round,
    run_simulation,
    run_simulation_with_state,
)
