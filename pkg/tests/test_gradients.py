import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ema_fl.errors import DimensionMismatch, DuplicateClient, EmptyRound, NonFiniteValue
from ema_fl.gradients import (
    ClientUpdate,
    CoordinateSample,
    GradientVector,
    coordinate_matrix,
    load_round,
    read_gradient_csv,
    read_gradient_dump,
    reconstruct_updates,
    stack_updates,
    transpose_to_coordinates,
    updates_from_matrix,
    validate_round,
    write_gradient_csv,
    write_gradient_dump,
)

TOKEN = b"secret"


def test_gradient_vector_rejects_non_finite():
    with pytest.raises(NonFiniteValue):
        GradientVector([1.0, np.nan])
    with pytest.raises(NonFiniteValue):
        GradientVector([np.inf])


def test_gradient_vector_shape_must_match():
    g = GradientVector(np.arange(6.0), shape=(2, 3))
    assert g.reshaped().shape == (2, 3)
    with pytest.raises(DimensionMismatch):
        GradientVector(np.arange(6.0), shape=(4, 2))


def test_gradient_vector_is_immutable():
    g = GradientVector([1.0, 2.0])
    with pytest.raises(ValueError):
        g.values[0] = 5.0


def test_validate_round_identity():
    rng = np.random.default_rng(0)
    updates = updates_from_matrix(rng.normal(size=(50, 10)), auth_token=TOKEN)
    kept = validate_round(updates, TOKEN, 10)
    assert [u.client_id for u in kept] == list(range(50))
    assert all(a is b for a, b in zip(kept, updates))


def test_validate_round_drops_bad_token():
    updates = updates_from_matrix(np.ones((3, 2)), auth_token=TOKEN)
    updates[1] = ClientUpdate(1, 0, GradientVector([1.0, 1.0]), b"forged")
    kept = validate_round(updates, TOKEN, 2)
    assert [u.client_id for u in kept] == [0, 2]


def test_validate_round_duplicate_client():
    g = GradientVector([1.0])
    with pytest.raises(DuplicateClient):
        validate_round([ClientUpdate(3, 0, g, TOKEN), ClientUpdate(3, 0, g, TOKEN)], TOKEN, 1)


def test_validate_round_dimension_mismatch():
    updates = [
        ClientUpdate(0, 0, GradientVector([1.0, 2.0]), TOKEN),
        ClientUpdate(1, 0, GradientVector([1.0]), TOKEN),
        ClientUpdate(2, 0, GradientVector([1.0, 2.0, 3.0]), TOKEN),
    ]
    assert [u.client_id for u in validate_round(updates, TOKEN, 2)] == [0]
    with pytest.raises(DimensionMismatch) as info:
        validate_round(updates, TOKEN, 2, strict=True)
    assert info.value.offenders == (1, 2)


def test_validate_round_empty():
    with pytest.raises(EmptyRound):
        validate_round([], TOKEN, 1)
    with pytest.raises(EmptyRound):
        validate_round([ClientUpdate(0, 0, GradientVector([1.0]), b"x")], TOKEN, 1)


def test_validate_round_sorts_by_client_id():
    updates = updates_from_matrix(np.eye(3), auth_token=TOKEN, client_ids=[7, 2, 5])
    assert [u.client_id for u in validate_round(updates, TOKEN, 3)] == [2, 5, 7]


def test_transpose_small_cases():
    updates = updates_from_matrix([[1.0, 2.0], [3.0, 4.0]])
    samples = transpose_to_coordinates(updates)
    assert [s.values.tolist() for s in samples] == [[1.0, 3.0], [2.0, 4.0]]
    single = transpose_to_coordinates(updates_from_matrix([[5.0]]))
    assert len(single) == 1 and single[0].values.tolist() == [5.0]


def test_transpose_round_trip_bit_exact():
    rng = np.random.default_rng(1)
    matrix = rng.normal(size=(50, 1000))
    samples = transpose_to_coordinates(updates_from_matrix(matrix))
    assert len(samples) == 1000
    back = stack_updates(reconstruct_updates(samples))
    assert np.array_equal(back, matrix)
    assert np.array_equal(coordinate_matrix(samples), matrix.T)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.randoms(use_true_random=False))
def test_transpose_independent_of_arrival_order(n, d, rnd):
    rng = np.random.default_rng(rnd.randint(0, 2**32 - 1))
    updates = updates_from_matrix(rng.normal(size=(n, d)))
    shuffled = list(updates)
    rnd.shuffle(shuffled)
    a = coordinate_matrix(transpose_to_coordinates(updates))
    b = coordinate_matrix(transpose_to_coordinates(shuffled))
    assert np.array_equal(a, b)


def test_coordinate_sample_rejects_nan():
    with pytest.raises(NonFiniteValue):
        CoordinateSample(0, [1.0, np.nan])


def test_binary_dump_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    matrix = rng.normal(size=(7, 13))
    path = tmp_path / "round.emag"
    write_gradient_dump(path, matrix)
    raw = path.read_bytes()
    assert raw[:4] == b"EMAG"
    assert int.from_bytes(raw[4:6], "little") == 1
    assert int.from_bytes(raw[6:14], "little") == 13
    assert int.from_bytes(raw[14:18], "little") == 7
    assert len(raw) == 18 + 8 * 7 * 13
    assert np.array_equal(read_gradient_dump(path), matrix)
    # First row-major value sits right after the header.
    assert np.frombuffer(raw[18:26], "<f8")[0] == matrix[0, 0]


def test_binary_dump_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.emag"
    path.write_bytes(b"NOPE" + bytes(14))
    with pytest.raises(ValueError):
        read_gradient_dump(path)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    matrix = rng.normal(size=(4, 3))
    path = tmp_path / "round.csv"
    write_gradient_csv(path, matrix, client_ids=[10, 11, 12, 13])
    assert path.read_text().splitlines()[0] == "client_id,coord_0,coord_1,coord_2"
    ids, back = read_gradient_csv(path)
    assert ids == [10, 11, 12, 13]
    assert np.array_equal(back, matrix)
    assert load_round(path)[0] == ids
