import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ema_fl.errors import DimensionMismatch, EmptyDataset, TooFewClients
from ema_fl.heterogeneity import (
    IID_MESSAGE,
    NON_IID_MESSAGE,
    ClientLossRecord,
    Verdict,
    detect_non_iid,
    evaluate_model_on_client,
    exclude_above_quantile,
    one_hot,
    read_losses_csv,
)
from oracles import mse_ref

loss_lists = st.lists(st.floats(0.01, 100), min_size=2, max_size=30)


def test_anchor_losses():
    report = detect_non_iid([2.4, 1.4], 0.25)
    assert report.mu == pytest.approx(1.9)
    assert report.sigma == pytest.approx(0.5)
    assert report.cv == pytest.approx(0.5 / 1.9, abs=1e-12)
    assert report.verdict is Verdict.LIKELY_NON_IID
    assert report.message == NON_IID_MESSAGE


def test_equal_and_zero_losses():
    report = detect_non_iid([0.7] * 5, 0.01)
    assert report.cv == 0 and report.verdict is Verdict.LIKELY_IID
    assert report.message == IID_MESSAGE
    zero = detect_non_iid([0.0, 0.0, 0.0])
    assert zero.verdict is Verdict.UNDEFINED and zero.cv is None


def test_input_validation():
    with pytest.raises(TooFewClients):
        detect_non_iid([1.0])
    with pytest.raises(ValueError):
        detect_non_iid([1.0, 2.0], d=0)
    with pytest.raises(ValueError):
        ClientLossRecord(0, float("nan"))


@settings(max_examples=150, deadline=None)
@given(loss_lists, st.sampled_from([0.01, 1.0, 100.0]))
def test_cv_scale_invariant(losses, c):
    a = detect_non_iid(losses).cv
    b = detect_non_iid([c * x for x in losses]).cv
    assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(loss_lists, st.floats(0.1, 100))
def test_positive_shift_does_not_raise_cv(losses, shift):
    assert detect_non_iid([x + shift for x in losses]).cv <= detect_non_iid(losses).cv + 1e-12


@settings(max_examples=150, deadline=None)
@given(loss_lists, st.floats(0.01, 2), st.floats(0.01, 2))
def test_verdict_monotone_in_threshold(losses, d1, d2):
    lo, hi = sorted((d1, d2))
    if detect_non_iid(losses, lo).verdict is Verdict.LIKELY_IID:
        assert detect_non_iid(losses, hi).verdict is Verdict.LIKELY_IID


def test_mse_perfect_fit_and_uniform_zero():
    targets = one_hot([0, 2, 1, 2], 3)
    assert evaluate_model_on_client(lambda x: targets, np.zeros((4, 1)), targets) == 0
    for c in (2, 3, 10):
        labels = np.arange(17) % c
        zero = lambda x, c=c: np.zeros((x.shape[0], c))
        assert evaluate_model_on_client(zero, np.zeros((17, 2)), labels) == 1 / c


def test_mse_matches_double_loop():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(6, 4))
    x = rng.normal(size=(40, 6))
    labels = rng.integers(0, 4, size=40)
    model = lambda f: f @ w
    got = evaluate_model_on_client(model, x, labels)
    assert got == pytest.approx(mse_ref(model(x).tolist(), one_hot(labels, 4).tolist()), abs=1e-10)


def test_mse_errors():
    with pytest.raises(EmptyDataset):
        evaluate_model_on_client(lambda x: x, np.zeros((0, 2)), [])
    with pytest.raises(DimensionMismatch):
        evaluate_model_on_client(lambda x: np.zeros((3, 2)), np.zeros((3, 1)), np.zeros((3, 3)))


def test_report_serialisation(tmp_path):
    report = detect_non_iid([ClientLossRecord(3, 2.4), ClientLossRecord(7, 1.4)])
    assert report.losses[0].display() == "Client: 3, Loss: 2.4000"
    assert report.to_csv() == "client_id,loss\n3,2.4000\n7,1.4000\n"
    assert json.loads(report.to_json())["verdict"] == "LikelyNonIID"
    path = tmp_path / "losses.csv"
    path.write_text(report.to_csv())
    assert [r.client_id for r in read_losses_csv(path)] == [3, 7]


def test_exclusion_hook_off_by_default():
    records = [ClientLossRecord(i, float(i)) for i in range(10)]
    assert exclude_above_quantile(records) == []
    assert exclude_above_quantile(records, 0.8) == [8, 9]
