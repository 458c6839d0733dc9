import numpy as np
import pytest

from cbpf.baselines import (
    DspfConfig,
    binary_situation_representation,
    context_free_mf,
    dspf_condition_influence,
    dspf_influence_matrix,
    exact_prefilter,
)
from cbpf.context import cosine
from cbpf.dataset import Dataset
from cbpf.errors import EmptyLocalDataset, ValidationError
from cbpf.influence import InfluenceMode, influence_matrix
from cbpf.prefilter import LocalSelector, binary_representer, influence_representer
from cbpf.recommender import BiasBaseline, MfHyperparams, train_mf

from helpers import make_schema, random_dataset


def test_exact_prefilter_no_match(rng):
    d = random_dataset(rng, n_obs=30, p_unknown=0.0)
    with pytest.raises(EmptyLocalDataset):
        exact_prefilter(d, (-1, -1, -1))


def test_exact_prefilter_universal_match():
    schema = make_schema((2, 2))
    d = Dataset(schema, ["u"], ["i"], np.zeros(5, dtype=np.intp), np.zeros(5, dtype=np.intp),
                np.full(5, 3.0), np.tile([1, 0], (5, 1)))
    assert exact_prefilter(d, (1, 0)).tolist() == [0, 1, 2, 3, 4]


def test_exact_equals_threshold_one_on_binary_vectors(rng):
    # fully known situations: binary vectors are equal in direction only when identical
    d = random_dataset(rng, n_obs=200, p_unknown=0.0)
    sel = LocalSelector(d, binary_representer(d.schema), 1.0)
    for key in map(tuple, np.unique(d.codes, axis=0)):
        assert np.array_equal(exact_prefilter(d, key), sel.select(key))


@pytest.mark.parametrize("threshold", [-1.0, 0.0, 0.5, 0.9, 1.0])
def test_exact_subset_of_similarity_selection(rng, threshold):
    d = random_dataset(rng, n_obs=150)
    m = influence_matrix(d, InfluenceMode("item"))
    sel = LocalSelector(d, influence_representer(m.values, d.schema, "aggregation"), threshold)
    for key in map(tuple, np.unique(d.codes, axis=0)):
        assert set(exact_prefilter(d, key).tolist()) <= set(sel.select(key).tolist())


def test_binary_representation_cosines():
    schema = make_schema((3, 3, 3))
    a = binary_situation_representation((0, 1, 2), schema)
    assert a.tolist() == [1, 0, 0, 0, 1, 0, 0, 0, 1]
    assert cosine(a, binary_situation_representation((0, 1, 2), schema)) == pytest.approx(1.0)
    assert cosine(a, binary_situation_representation((1, 2, 0), schema)) == 0.0
    assert cosine(a, binary_situation_representation((0, 2, 1), schema)) == pytest.approx(1 / 3, abs=1e-12)


def _dspf_data(ratings_with_condition, other=()):
    """One item; ratings in condition 0 of a binary factor, then ``other`` ratings in condition 1."""
    r = list(ratings_with_condition) + list(other)
    n = len(r)
    codes = np.array([[0]] * len(ratings_with_condition) + [[1]] * len(other), dtype=np.intp).reshape(n, 1)
    return Dataset(make_schema((2,)), [f"u{j}" for j in range(n)], ["i"], np.arange(n),
                   np.zeros(n, dtype=np.intp), np.asarray(r, dtype=float), codes)


def flat(mu, d):
    return BiasBaseline(mu, np.zeros(d.n_items), np.zeros(d.n_users))


def test_dspf_hand_example():
    d = _dspf_data([4, 2, 5])  # residuals +1, -1, +2 around 3
    m = dspf_influence_matrix(d, DspfConfig(beta=1.0), flat(3.0, d))
    assert m.values[0, 0] == pytest.approx(0.5)
    assert m.support[0, 0] == 3


def test_dspf_single_residual_no_damping():
    d = _dspf_data([4])
    assert dspf_influence_matrix(d, DspfConfig(beta=0.0), flat(3.0, d)).values[0, 0] == pytest.approx(1.0)


def test_dspf_empty_condition_is_zero():
    d = _dspf_data([4, 2])
    m = dspf_influence_matrix(d, DspfConfig(beta=0.0), flat(3.0, d))
    assert m.values[1, 0] == 0.0 and m.support[1, 0] == 0


def test_dspf_large_beta_vanishes(rng):
    d = random_dataset(rng, n_obs=120)
    v = dspf_influence_matrix(d, DspfConfig(beta=1e12)).values
    assert np.abs(v).max() < 1e-9


def test_dspf_uses_bias_baseline(rng):
    d = random_dataset(rng, n_obs=120)
    cfg = DspfConfig(basis="user", beta=2.0)
    base = BiasBaseline.fit(d)
    resid = d.ratings - base.predict_idx(d.user_idx, d.item_idx)
    v = dspf_condition_influence(d, 4, cfg).values
    for u in range(d.n_users):
        rows = (d.user_idx == u) & (d.bits[:, 4] == 1)
        assert v[u] == pytest.approx(resid[rows].sum() / (rows.sum() + 2.0))


def test_dspf_validation():
    with pytest.raises(ValidationError):
        DspfConfig(beta=-1)
    with pytest.raises(ValidationError):
        DspfConfig(basis="item_cluster")


def test_context_free_mf_is_train_mf_on_all(rng):
    d = random_dataset(rng, n_obs=80)
    hp = MfHyperparams(epochs=10)
    a, b = context_free_mf(d, hp), train_mf(d, np.arange(len(d)), hp)
    assert np.array_equal(a.user_factors, b.user_factors) and np.array_equal(a.item_bias, b.item_bias)
