import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cbpf.context import (
    cosine,
    enumerate_situations,
    represent_many,
    similarity_matrix,
    situation_label,
    situation_representation,
    situation_similarity,
    write_similarity_csv,
)
from cbpf.dataset import Dataset
from cbpf.errors import ValidationError

from helpers import make_schema, random_dataset

SCHEMA = make_schema((3, 3, 4))  # time, social, season stand-ins


def _vectors(rng, e=5):
    return rng.normal(size=(SCHEMA.n_conditions, e))


def test_single_known_factor_aggregation_is_that_vector(rng):
    W = _vectors(rng)
    rep = situation_representation((-1, 2, -1), W, SCHEMA, "aggregation")
    np.testing.assert_array_equal(rep.vector, W[3 + 2])


def test_concatenation_block_layout(rng):
    W = _vectors(rng)
    # morning = f0 c0, family = f1 c1, spring = f2 c0
    rep = situation_representation((0, 1, 0), W, SCHEMA, "concatenation")
    np.testing.assert_array_equal(rep.vector, np.concatenate([W[0], W[4], W[6]]))
    assert rep.vector.shape == (3 * 5,)


def test_concatenation_unknown_block_is_zero(rng):
    W = _vectors(rng)
    rep = situation_representation((0, -1, 2), W, SCHEMA, "concatenation")
    assert np.all(rep.vector[5:10] == 0)
    empty = situation_representation((-1, -1, -1), W, SCHEMA, "concatenation")
    assert not empty.vector.any()


def test_opposite_vectors_neutralize_under_aggregation(rng):
    v = rng.normal(size=4)
    W = np.zeros((SCHEMA.n_conditions, 4))
    W[0], W[3] = v, -v
    rep = situation_representation((0, 0, -1), W, SCHEMA, "aggregation")
    np.testing.assert_allclose(rep.vector, 0.0, atol=1e-15)


def test_aggregation_mean_of_known(rng):
    W = _vectors(rng)
    rep = situation_representation((1, -1, 3), W, SCHEMA, "aggregation")
    np.testing.assert_allclose(rep.vector, (W[1] + W[9]) / 2)


def test_aggregation_without_known_factor_rejected(rng):
    with pytest.raises(ValidationError):
        situation_representation((-1, -1, -1), _vectors(rng), SCHEMA, "aggregation")
    # batch form keeps the pipeline going with a zero vector
    assert not represent_many(np.array([[-1, -1, -1]]), _vectors(rng), SCHEMA, "aggregation").any()


def test_unknown_strategy_rejected(rng):
    with pytest.raises(ValidationError):
        represent_many(np.array([[0, 0, 0]]), _vectors(rng), SCHEMA, "sum")


def test_identical_keys_identical_vectors(rng):
    W = _vectors(rng)
    for strategy in ("aggregation", "concatenation"):
        a = situation_representation((2, 0, 1), W, SCHEMA, strategy)
        b = situation_representation((2, 0, 1), W, SCHEMA, strategy)
        assert a.situation_key == b.situation_key
        np.testing.assert_array_equal(a.vector, b.vector)


@pytest.mark.parametrize("a,b,expected", [
    ((1, 2, 3), (2, 4, 6), 1.0),
    ((1, 1), (1, -1), 0.0),
    ((1, 0), (0, 1), 0.0),
    ((3, 4), (3, 4), 1.0),
    ((1, 0), (1, 1), 1 / np.sqrt(2)),
    ((1, 2, 2), (-2, -4, -4), -1.0),
    ((0, 0), (1, 2), 0.0),
])
def test_cosine_hand_values(a, b, expected):
    assert abs(cosine(np.array(a, float), np.array(b, float)) - expected) <= 1e-12


vec = arrays(np.float64, 6, elements=st.floats(-10, 10, allow_nan=False, allow_subnormal=False))


@settings(max_examples=200, deadline=None)
@given(vec, vec, st.floats(0.01, 100))
def test_cosine_properties(a, b, scale):
    s = cosine(a, b)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(cosine(b, a), abs=1e-12)
    assert cosine(scale * a, b) == pytest.approx(s, abs=1e-9)
    if np.linalg.norm(a) > 1e-6:
        assert cosine(a, a) == pytest.approx(1.0, abs=1e-12)


def test_similarity_validation(rng):
    W = _vectors(rng)
    a = situation_representation((0, 0, 0), W, SCHEMA, "aggregation")
    b = situation_representation((0, 0, 0), W, SCHEMA, "concatenation")
    with pytest.raises(ValidationError):
        situation_similarity(a, b)
    c = situation_representation((0, 0, 0), W[:, :3], SCHEMA, "aggregation")
    with pytest.raises(ValidationError):
        situation_similarity(a, c)


def test_concatenation_disjoint_factors_zero(rng):
    W = _vectors(rng)
    a = situation_representation((1, -1, -1), W, SCHEMA, "concatenation")
    b = situation_representation((-1, 2, 3), W, SCHEMA, "concatenation")
    assert situation_similarity(a, b) == 0.0


def test_strategies_agree_for_single_factor_situations(rng):
    schema = make_schema((4,))
    W = rng.normal(size=(4, 6))
    keys = np.array([[0], [1], [2], [3]])
    np.testing.assert_array_equal(represent_many(keys, W, schema, "aggregation"),
                                  represent_many(keys, W, schema, "concatenation"))
    # with several factors they agree whenever both situations know the same single factor
    W = _vectors(rng)
    for c1, c2 in itertools.product(range(4), repeat=2):
        ka, kb = (-1, -1, c1), (-1, -1, c2)
        ag = situation_similarity(*(situation_representation(k, W, SCHEMA, "aggregation") for k in (ka, kb)))
        cn = situation_similarity(*(situation_representation(k, W, SCHEMA, "concatenation") for k in (ka, kb)))
        assert ag == pytest.approx(cn, abs=1e-12)


def test_enumerate_constant_context():
    d = Dataset(SCHEMA, ["u"], ["i"], np.zeros(4, dtype=np.intp), np.zeros(4, dtype=np.intp),
                np.full(4, 3.0), np.tile([1, 2, -1], (4, 1)))
    groups = enumerate_situations(d)
    assert len(groups) == 1
    assert groups[0][0] == (1, 2, -1)
    assert groups[0][1].tolist() == [0, 1, 2, 3]


def test_enumerate_all_distinct():
    codes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, -1, -1]])
    d = Dataset(SCHEMA, ["u"], ["i"], np.zeros(5, dtype=np.intp), np.zeros(5, dtype=np.intp), np.full(5, 3.0), codes)
    groups = enumerate_situations(d)
    assert len(groups) == 5
    assert sorted(int(ix[0]) for _, ix in groups) == list(range(5))


def test_enumerate_single_known_factor_data(rng):
    # Music style: exactly one factor known per observation
    n = 300
    codes = -np.ones((n, 3), dtype=np.intp)
    which = rng.integers(3, size=n)
    for t in range(n):
        codes[t, which[t]] = rng.integers(len(SCHEMA.factors[which[t]].conditions))
    d = Dataset(SCHEMA, ["u"], ["i"], np.zeros(n, dtype=np.intp), np.zeros(n, dtype=np.intp), np.full(n, 3.0), codes)
    keys = [k for k, _ in enumerate_situations(d)]
    present = {(int(np.flatnonzero(row >= 0)[0]), int(row[row >= 0][0])) for row in codes}
    assert len(keys) == len(present) == SCHEMA.n_conditions


def test_enumerate_partitions_observations(rng):
    d = random_dataset(rng, n_obs=200)
    groups = enumerate_situations(d)
    allix = np.concatenate([ix for _, ix in groups])
    assert sorted(allix.tolist()) == list(range(len(d)))
    assert len({k for k, _ in groups}) == len(groups)
    for key, ix in groups:
        assert np.all(d.codes[ix] == np.array(key))


def test_similarity_matrix_and_csv(rng, tmp_path):
    W = _vectors(rng)
    reps = [situation_representation(k, W, SCHEMA, "concatenation") for k in [(0, 0, 0), (1, -1, 2), (0, 0, 0)]]
    S = similarity_matrix(reps)
    assert S.shape == (3, 3)
    np.testing.assert_allclose(np.diag(S), 1.0)
    assert S[0, 2] == pytest.approx(1.0)
    path = tmp_path / "sim.csv"
    write_similarity_csv(path, reps, SCHEMA)
    assert "f0=c0_0|f1=c1_0|f2=c2_0" in path.read_text()
    assert situation_label((1, -1, 2), SCHEMA) == "f0=c0_1|f1=?|f2=c2_2"
