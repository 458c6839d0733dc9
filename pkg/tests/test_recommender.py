import numpy as np
import pytest

from cbpf.dataset import Dataset
from cbpf.errors import EmptyLocalDataset, ValidationError
from cbpf.recommender import (
    BiasBaseline,
    MfHyperparams,
    MfModel,
    _sgd_epochs,
    baseline_predict,
    predict,
    sample_gradient,
    sample_loss,
    train_mf,
)

from helpers import make_schema, random_dataset


def table(rows, scale=(1, 5)):
    users = sorted({u for u, _, _ in rows})
    items = sorted({i for _, i, _ in rows})
    n = len(rows)
    return Dataset(make_schema((2,), scale), users, items,
                   np.array([users.index(u) for u, _, _ in rows]), np.array([items.index(i) for _, i, _ in rows]),
                   np.array([r for _, _, r in rows], dtype=float), np.zeros((n, 1), dtype=np.intp))


def test_zero_epochs_leaves_biases_zero(rng):
    d = random_dataset(rng, n_obs=40)
    m = train_mf(d, np.arange(len(d)), MfHyperparams(epochs=0))
    assert not m.user_bias.any() and not m.item_bias.any()
    assert m.mu == pytest.approx(d.ratings.mean())
    assert np.all(np.abs(m.user_factors) <= 0.1)


def test_single_rating_interpolated():
    d = table([("u", "i", 4.0)])
    trace = []
    m = train_mf(d, [0], MfHyperparams(epochs=200, learning_rate=0.05, regularization=0.0), trace)
    assert abs(predict(m, "u", "i") - 4.0) < 0.1
    assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    h = 1e-6
    for _ in range(10):
        k = 5
        r, mu = rng.uniform(1, 5), rng.uniform(2, 4)
        bu, bi = rng.normal(), rng.normal()
        p, q = rng.normal(size=k), rng.normal(size=k)
        reg = rng.uniform(0, 0.5)
        g_bu, g_bi, g_p, g_q = sample_gradient(r, mu, bu, bi, p, q, reg)
        loss = lambda bu_, bi_, p_, q_: sample_loss(r, mu, bu_, bi_, p_, q_, reg)
        numeric = [(loss(bu + h, bi, p, q) - loss(bu - h, bi, p, q)) / (2 * h),
                   (loss(bu, bi + h, p, q) - loss(bu, bi - h, p, q)) / (2 * h)]
        for f in range(k):
            e = np.eye(k)[f] * h
            numeric.append((loss(bu, bi, p + e, q) - loss(bu, bi, p - e, q)) / (2 * h))
        for f in range(k):
            e = np.eye(k)[f] * h
            numeric.append((loss(bu, bi, p, q + e) - loss(bu, bi, p, q - e)) / (2 * h))
        analytic = np.r_[g_bu, g_bi, g_p, g_q]
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
        assert rel.max() < 1e-5


def test_sgd_step_is_negative_gradient():
    rng = np.random.default_rng(2)
    k, lr, reg = 4, 0.01, 0.05
    bu, bi = rng.normal(size=1), rng.normal(size=1)
    P, Q = rng.normal(size=(1, k)), rng.normal(size=(1, k))
    r, mu = 4.0, 3.0
    g = sample_gradient(r, mu, bu[0], bi[0], P[0].copy(), Q[0].copy(), reg)
    expect = (bu[0] - lr * g[0], bi[0] - lr * g[1], P[0] - lr * g[2], Q[0] - lr * g[3])
    one = np.zeros(1, dtype=np.int64)
    _sgd_epochs(one, one, np.array([r]), mu, bu, bi, P, Q, lr, reg, np.zeros((1, 1), dtype=np.int64))
    assert bu[0] == pytest.approx(expect[0], abs=1e-14)
    assert bi[0] == pytest.approx(expect[1], abs=1e-14)
    np.testing.assert_allclose(P[0], expect[2], atol=1e-14)
    np.testing.assert_allclose(Q[0], expect[3], atol=1e-14)


def test_loss_non_increasing_small_lr():
    rng = np.random.default_rng(5)
    d = random_dataset(rng, n_obs=20, n_users=5, n_items=4)
    trace = []
    train_mf(d, np.arange(20), MfHyperparams(learning_rate=0.001, epochs=100), trace)
    assert len(trace) == 101
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert trace[-1] < trace[0]


def test_deterministic_given_seed(rng):
    d = random_dataset(rng, n_obs=100)
    a = train_mf(d, np.arange(100), MfHyperparams(seed=3))
    b = train_mf(d, np.arange(100), MfHyperparams(seed=3))
    c = train_mf(d, np.arange(100), MfHyperparams(seed=4))
    for x, y in [(a.user_factors, b.user_factors), (a.item_factors, b.item_factors),
                 (a.user_bias, b.user_bias), (a.item_bias, b.item_bias)]:
        assert np.array_equal(x, y)
    assert not np.array_equal(a.user_factors, c.user_factors)


def test_tracing_does_not_change_parameters(rng):
    d = random_dataset(rng, n_obs=60)
    a = train_mf(d, np.arange(60), MfHyperparams(epochs=7))
    b = train_mf(d, np.arange(60), MfHyperparams(epochs=7), loss_trace=[])
    assert np.array_equal(a.item_factors, b.item_factors)


def test_empty_training_set():
    d = table([("u", "i", 4.0)])
    with pytest.raises(EmptyLocalDataset):
        train_mf(d, [], MfHyperparams())


def test_cold_start_predictions():
    d = table([("a", "x", 5.0), ("a", "y", 4.0), ("b", "x", 5.0)])
    m = train_mf(d, [0, 1, 2], MfHyperparams(epochs=50))
    assert predict(m, "nobody", "nothing") == pytest.approx(m.mu)
    ua = m.user_index["a"]
    assert predict(m, "a", "nothing") == pytest.approx(min(5.0, m.mu + m.user_bias[ua]))
    ix = m.item_index["x"]
    assert predict(m, "nobody", "x") == pytest.approx(min(5.0, m.mu + m.item_bias[ix]))


def test_predictions_clamped():
    m = MfModel(4.8, np.array([1.0]), np.array([1.0]), np.ones((1, 2)), np.ones((1, 2)), (1.0, 5.0), {"u": 0}, {"i": 0})
    assert predict(m, "u", "i") == 5.0
    m.mu = -3.0
    assert predict(m, "u", "i") == 1.0
    assert predict(m, "?", "?") == 1.0


def test_save_load_round_trip(rng, tmp_path):
    d = random_dataset(rng, n_obs=50)
    m = train_mf(d, np.arange(50), MfHyperparams(factors=3, epochs=5))
    path = tmp_path / "model.txt"
    m.save(path)
    assert path.read_text().startswith("cbpf-mf 1 ")
    back = MfModel.load(path)
    assert back.mu == m.mu and back.scale == m.scale
    assert back.user_index == m.user_index and back.item_index == m.item_index
    for a, b in [(m.user_bias, back.user_bias), (m.item_factors, back.item_factors), (m.user_factors, back.user_factors)]:
        assert np.array_equal(a, b)


def test_hyperparameter_validation():
    for bad in [dict(factors=0), dict(learning_rate=0), dict(regularization=-1), dict(epochs=-1), dict(init_scale=0)]:
        with pytest.raises(ValidationError):
            MfHyperparams(**bad)


def test_baseline_constant_ratings():
    d = table([("a", "x", 3.0), ("b", "y", 3.0), ("a", "y", 3.0)])
    for u in "ab":
        for i in "xy":
            assert baseline_predict(d, u, i) == pytest.approx(3.0)


def test_baseline_hand_computed():
    rows = [("u1", "i1", 5.0), ("u1", "i2", 4.0), ("u2", "i1", 3.0), ("u3", "i2", 1.0)]
    d = table(rows)
    # mu = 3.25; b_i1 = 0.75, b_i2 = -0.75; b_u1 = 1.25, b_u2 = -1, b_u3 = -1.5
    assert baseline_predict(d, "u2", "i2") == pytest.approx(1.5)
    assert baseline_predict(d, "u1", "i1") == pytest.approx(5.25)
    assert baseline_predict(d, "u3", "i1") == pytest.approx(2.5)
    b = BiasBaseline.fit(d)
    np.testing.assert_allclose(b.item_bias, [0.75, -0.75])
    np.testing.assert_allclose(b.user_bias, [1.25, -1.0, -1.5])


def test_baseline_heavy_damping_tends_to_mean():
    d = table([("u1", "i1", 5.0), ("u1", "i2", 4.0), ("u2", "i1", 3.0), ("u3", "i2", 1.0)])
    assert baseline_predict(d, "u1", "i1", beta_damping=1e9) == pytest.approx(3.25, abs=1e-6)
    with pytest.raises(ValidationError):
        BiasBaseline.fit(d, damping=-1)
