from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from ema_fl.aggregators import AggregationRuleConfig
from ema_fl.errors import ConfigError, DimensionMismatch, TooFewSamples
from ema_fl.sim import (
    AttackSpec,
    Dataset,
    DatasetSpec,
    Model,
    ModelSpec,
    PartitionSpec,
    SimConfig,
    apply_attack,
    init_state,
    local_gradient,
    make_blobs,
    metrics_csv,
    partition_data,
    run_round,
    run_simulation,
    run_simulation_with_state,
)
from ema_fl.sim.data import load_idx_dataset, write_idx_images, write_idx_labels


def _toy(n=1000, classes=2, dim=3, seed=0):
    return make_blobs(DatasetSpec(n_classes=classes, dim=dim, n_samples=n), seed)


def test_iid_partition_is_even_and_disjoint():
    parts = partition_data(_toy(), PartitionSpec("iid"), 50, 0)
    assert [p.size for p in parts] == [20] * 50
    assert np.unique(np.concatenate(parts)).size == 1000


def test_label_shard_one_class_per_client():
    data = _toy()
    parts = partition_data(data, PartitionSpec("label_shard", shards_per_client=1), 10, 1)
    assert all(np.unique(data.labels[p]).size == 1 for p in parts)
    assert sum(p.size for p in parts) == 1000


def test_dirichlet_large_alpha_matches_global_proportions():
    data = _toy(n=20000, classes=4)
    parts = partition_data(data, PartitionSpec("dirichlet", alpha=1000), 10, 2)
    glob = np.bincount(data.labels, minlength=4) / len(data)
    for p in parts:
        local = np.bincount(data.labels[p], minlength=4) / p.size
        assert np.sum((local - glob) ** 2 / glob) < 0.05


def test_dirichlet_small_alpha_never_leaves_a_client_empty():
    parts = partition_data(_toy(n=200), PartitionSpec("dirichlet", alpha=0.01), 40, 3)
    assert min(p.size for p in parts) >= 1
    assert np.unique(np.concatenate(parts)).size == 200


def test_partition_errors():
    with pytest.raises(TooFewSamples):
        partition_data(_toy(n=10), PartitionSpec(), 11, 0)
    with pytest.raises(ConfigError):
        PartitionSpec("random")


def _finite_difference(model, params, x, y, step=1e-5):
    grad = np.empty_like(params)
    for i in range(params.size):
        e = np.zeros_like(params)
        e[i] = step
        grad[i] = (model.loss(params + e, x, y) - model.loss(params - e, x, y)) / (2 * step)
    return grad


@pytest.mark.parametrize("kind", ["logistic", "mlp"])
@pytest.mark.parametrize("loss", ["cross_entropy", "mse_onehot"])
def test_gradient_matches_finite_differences(kind, loss):
    rng = np.random.default_rng(4)
    model = Model(ModelSpec(kind, input_dim=4, n_classes=3, hidden_units=5, loss=loss))
    params = rng.normal(scale=0.5, size=model.n_params)
    x, y = rng.normal(size=(16, 4)), rng.integers(0, 3, size=16)
    exact = local_gradient(model, params, x, y)
    approx = _finite_difference(model, params, x, y)
    assert np.linalg.norm(exact - approx) / np.linalg.norm(approx) < 1e-5


def test_zero_logistic_symmetric_batch_has_zero_bias_gradient():
    model = Model(ModelSpec(input_dim=2, n_classes=2))
    x = np.array([[1.0, 2.0], [-1.0, -2.0]])
    grad = model.gradient(model.init_params(0), x, [0, 1])
    assert np.allclose(grad[-2:], 0)


def test_model_rejects_wrong_width():
    model = Model(ModelSpec(input_dim=3))
    with pytest.raises(DimensionMismatch):
        model.logits(np.zeros(model.n_params), np.zeros((2, 4)))


def test_attacks():
    g = np.array([1.0, -2.0, 0.5])
    flip = AttackSpec(0.2, "sign_flip")
    assert np.array_equal(apply_attack(g, flip, 0, 0, 0, 50), -g)
    assert np.array_equal(apply_attack(g, flip, 10, 0, 0, 50), g)  # only ids 0..9
    assert np.array_equal(apply_attack(g, AttackSpec(0.0, "sign_flip"), 0, 0, 0, 50), g)
    assert np.array_equal(apply_attack(g, AttackSpec(0.5, "scale_up", factor=3), 0, 0, 0, 2), 3 * g)
    assert not apply_attack(g, AttackSpec(0.5, "zero"), 0, 0, 0, 2).any()
    assert AttackSpec(0.3, "sign_flip").malicious_count(10) == 3
    with pytest.raises(ConfigError):
        AttackSpec(0.1, "bitflip")


def test_gaussian_noise_is_centred_on_the_update():
    g = np.array([0.3, -1.0])
    spec = AttackSpec(0.5, "gaussian_noise", sigma=2.0)
    draws = np.array([apply_attack(g, spec, 0, r, 7, 2) for r in range(10_000)])
    se = 2.0 / np.sqrt(10_000)
    assert np.all(np.abs(draws.mean(axis=0) - g) < 4 * se)
    assert np.array_equal(apply_attack(g, spec, 0, 3, 7, 2), apply_attack(g, spec, 0, 3, 7, 2))


SMALL = SimConfig(
    n_clients=10,
    rounds=5,
    batch_size=32,
    dataset=DatasetSpec(n_samples=2000, dim=5),
)


def test_zero_rounds_leave_model_untouched():
    state, history = run_simulation_with_state(replace(SMALL, rounds=0))
    assert history == [] and not state.params.any()
    assert metrics_csv(SMALL, history).count("\n") == 1


def test_simulation_is_deterministic_and_seed_sensitive():
    a = metrics_csv(SMALL, run_simulation(SMALL))
    assert a == metrics_csv(SMALL, run_simulation(SMALL))
    other = replace(SMALL, seed=1)
    assert a != metrics_csv(other, run_simulation(other))
    assert a.count("\n") == 6


def test_run_round_advances_state():
    state = init_state(SMALL)
    new, metrics = run_round(state)
    assert new.round == 1 and metrics.round == 1
    assert not np.array_equal(new.params, state.params)
    assert state.round == 0  # old state is untouched


@pytest.mark.parametrize("rule", ["ema", "mean", "median", "trimmed_mean", "krum", "zeno"])
def test_every_rule_runs(rule):
    cfg = replace(
        SMALL,
        attack=AttackSpec(0.2, "sign_flip"),
        rule=AggregationRuleConfig(rule=rule, byzantine_count_f=2, zeno_remove_b=2),
    )
    history = run_simulation(cfg)
    assert len(history) == 5 and all(0 <= m.test_accuracy <= 1 for m in history)


def test_mean_learns_separable_blobs():
    accs = {}
    for rule in ("mean", "ema"):
        cfg = SimConfig(seed=0, rule=AggregationRuleConfig(rule=rule))
        accs[rule] = run_simulation(cfg)[-1].test_accuracy
    assert accs["mean"] >= 0.95
    assert abs(accs["ema"] - accs["mean"]) <= 0.02


def test_blob_bayes_accuracy():
    # Two unit-variance clusters 5 apart: Bayes accuracy is Phi(2.5).
    assert stats.norm.cdf(DatasetSpec().separation / 2) >= 0.99


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    images = rng.integers(0, 256, size=(12, 4, 3), dtype=np.uint8)
    labels = rng.integers(0, 10, size=12)
    write_idx_images(tmp_path / "img.idx", images)
    write_idx_labels(tmp_path / "lab.idx", labels)
    data = load_idx_dataset(tmp_path / "img.idx", tmp_path / "lab.idx", subsample=10)
    assert isinstance(data, Dataset) and data.features.shape == (10, 12)
    assert np.allclose(data.features * 255, images[:10].reshape(10, -1))
    assert np.array_equal(data.labels, labels[:10])
