"""Biased matrix factorization trained by SGD, and the bias-only baseline predictor."""

from __future__ import annotations

from dataclasses import dataclass
from os import PathLike
from typing import Hashable, Sequence

import numba
import numpy as np

from .dataset import Dataset
from .errors import EmptyLocalDataset, ValidationError


@dataclass(frozen=True)
class MfHyperparams:
    factors: int = 10
    learning_rate: float = 0.01
    regularization: float = 0.05
    epochs: int = 100
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.factors < 1:
            raise ValidationError("factors must be positive")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.regularization < 0:
            raise ValidationError("regularization must be non-negative")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if not self.init_scale > 0:
            raise ValidationError("init_scale must be positive")


@dataclass
class MfModel:
    """Parameters of a trained model over the users and items it saw.

    ``user_index``/``item_index`` map ids to rows of the bias and factor
    arrays.
    """

    mu: float
    user_bias: np.ndarray
    item_bias: np.ndarray
    user_factors: np.ndarray
    item_factors: np.ndarray
    scale: tuple[float, float]
    user_index: dict
    item_index: dict

    def predict_rows(self, urow: np.ndarray, irow: np.ndarray) -> np.ndarray:
        """Vectorized prediction for row indices; -1 marks an unseen entity."""
        urow = np.asarray(urow, dtype=np.intp)
        irow = np.asarray(irow, dtype=np.intp)
        pred = np.full(len(urow), self.mu)
        ku = urow >= 0
        ki = irow >= 0
        pred[ku] += self.user_bias[urow[ku]]
        pred[ki] += self.item_bias[irow[ki]]
        both = ku & ki
        pred[both] += np.einsum("ij,ij->i", self.user_factors[urow[both]], self.item_factors[irow[both]])
        return np.clip(pred, *self.scale)

    def predict_many(self, users: Sequence[Hashable], items: Sequence[Hashable]) -> np.ndarray:
        urow = np.asarray([self.user_index.get(u, -1) for u in users], dtype=np.intp)
        irow = np.asarray([self.item_index.get(i, -1) for i in items], dtype=np.intp)
        return self.predict_rows(urow, irow)

    def save(self, path: str | PathLike) -> None:
        """Write the text parameter dump described in the README."""
        with open(path, "w") as f:
            f.write(f"cbpf-mf 1 {len(self.user_bias)} {len(self.item_bias)} {self.user_factors.shape[1]}\n")
            f.write(f"{self.scale[0]!r} {self.scale[1]!r}\n{self.mu!r}\n")
            f.write("\t".join(map(str, self.user_index)) + "\n")
            f.write("\t".join(map(str, self.item_index)) + "\n")
            for arr in (self.user_bias, self.item_bias):
                f.write(" ".join(repr(float(x)) for x in arr) + "\n")
            for mat in (self.user_factors, self.item_factors):
                for row in mat:
                    f.write(" ".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def load(cls, path: str | PathLike) -> "MfModel":
        with open(path) as f:
            lines = f.read().split("\n")
        magic, version, n_u, n_i, k = lines[0].split()
        if magic != "cbpf-mf" or version != "1":
            raise ValidationError(f"{path}: not a model dump")
        n_u, n_i, k = int(n_u), int(n_i), int(k)
        lo, hi = map(float, lines[1].split())
        mu = float(lines[2])
        users = lines[3].split("\t") if n_u else []
        items = lines[4].split("\t") if n_i else []
        nums = lambda s: np.array([float(x) for x in s.split()], dtype=np.float64)
        bu, bi = nums(lines[5]), nums(lines[6])
        rows = lines[7:7 + n_u + n_i]
        P = np.array([nums(r) for r in rows[:n_u]]).reshape(n_u, k)
        Q = np.array([nums(r) for r in rows[n_u:]]).reshape(n_i, k)
        return cls(mu, bu, bi, P, Q, (lo, hi),
                   {u: j for j, u in enumerate(users)}, {i: j for j, i in enumerate(items)})


@numba.njit(cache=True, nogil=True)
def _sgd_epochs(u, i, r, mu, bu, bi, P, Q, lr, reg, orders):
    k = P.shape[1]
    for e in range(orders.shape[0]):
        for t in orders[e]:
            uu = u[t]
            ii = i[t]
            dot = 0.0
            for f in range(k):
                dot += P[uu, f] * Q[ii, f]
            err = r[t] - (mu + bu[uu] + bi[ii] + dot)
            bu[uu] += lr * (err - reg * bu[uu])
            bi[ii] += lr * (err - reg * bi[ii])
            for f in range(k):
                pf = P[uu, f]
                qf = Q[ii, f]
                P[uu, f] += lr * (err * qf - reg * pf)
                Q[ii, f] += lr * (err * pf - reg * qf)


def _compact(idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inverse = np.unique(idx, return_inverse=True)
    return uniq, inverse.reshape(-1).astype(np.int64)


def init_params(n_users: int, n_items: int, hp: MfHyperparams):
    rng = np.random.default_rng(hp.seed)
    P = rng.uniform(-hp.init_scale, hp.init_scale, size=(n_users, hp.factors))
    Q = rng.uniform(-hp.init_scale, hp.init_scale, size=(n_items, hp.factors))
    return rng, np.zeros(n_users), np.zeros(n_items), P, Q


def train_mf(d: Dataset, indices, hp: MfHyperparams = MfHyperparams(), loss_trace: list | None = None) -> MfModel:
    """Fit a biased MF model on the observations ``indices`` of ``d``.

    The global mean is fixed to the training mean; biases start at 0 and
    factors uniform in ``[-init_scale, init_scale]``. Each epoch visits the
    observations in a fresh seeded permutation, so training is reproducible.
    When ``loss_trace`` is given, the regularized objective is appended
    before the first epoch and after each one.
    """
    indices = np.asarray(indices, dtype=np.intp)
    if len(indices) == 0:
        raise EmptyLocalDataset("cannot train on an empty observation set")
    users, u = _compact(d.user_idx[indices])
    items, i = _compact(d.item_idx[indices])
    r = np.ascontiguousarray(d.ratings[indices], dtype=np.float64)
    mu = float(r.mean())
    rng, bu, bi, P, Q = init_params(len(users), len(items), hp)
    lr, reg = float(hp.learning_rate), float(hp.regularization)
    if loss_trace is None:
        orders = np.vstack([rng.permutation(len(r)) for _ in range(hp.epochs)]) if hp.epochs else np.zeros((0, len(r)), dtype=np.int64)
        _sgd_epochs(u, i, r, mu, bu, bi, P, Q, lr, reg, orders.astype(np.int64))
    else:
        loss_trace.append(objective(u, i, r, mu, bu, bi, P, Q, reg))
        for _ in range(hp.epochs):
            order = rng.permutation(len(r)).astype(np.int64)[None, :]
            _sgd_epochs(u, i, r, mu, bu, bi, P, Q, lr, reg, order)
            loss_trace.append(objective(u, i, r, mu, bu, bi, P, Q, reg))
    scale = tuple(float(x) for x in d.schema.rating_scale)
    return MfModel(
        mu=mu,
        user_bias=bu,
        item_bias=bi,
        user_factors=P,
        item_factors=Q,
        scale=scale,
        user_index={d.users[g]: j for j, g in enumerate(users)},
        item_index={d.items[g]: j for j, g in enumerate(items)},
    )


def objective(u, i, r, mu, bu, bi, P, Q, reg) -> float:
    """Sum over observations of the per-sample loss (see :func:`sample_loss`)."""
    err = r - (mu + bu[u] + bi[i] + np.einsum("ij,ij->i", P[u], Q[i]))
    penalty = bu[u] ** 2 + bi[i] ** 2 + (P[u] ** 2).sum(1) + (Q[i] ** 2).sum(1)
    return float(0.5 * (err ** 2).sum() + 0.5 * reg * penalty.sum())


def sample_loss(rating, mu, b_u, b_i, p_u, q_i, reg) -> float:
    """Per-sample loss ``(e**2 + reg*(b_u**2 + b_i**2 + |p_u|**2 + |q_i|**2)) / 2``."""
    e = rating - (mu + b_u + b_i + p_u @ q_i)
    return 0.5 * e * e + 0.5 * reg * (b_u * b_u + b_i * b_i + p_u @ p_u + q_i @ q_i)


def sample_gradient(rating, mu, b_u, b_i, p_u, q_i, reg):
    """Gradient of :func:`sample_loss`; the SGD step is ``-learning_rate`` times this."""
    e = rating - (mu + b_u + b_i + p_u @ q_i)
    return (-e + reg * b_u, -e + reg * b_i, -e * q_i + reg * p_u, -e * p_u + reg * q_i)


def predict(model: MfModel, user: Hashable, item: Hashable) -> float:
    return float(model.predict_many([user], [item])[0])


@dataclass
class BiasBaseline:
    """Damped bias predictor ``mu + b_u + b_i``.

    Item biases are damped mean deviations from ``mu``; user biases are damped
    mean deviations from ``mu + b_i``.
    """

    mu: float
    item_bias: np.ndarray
    user_bias: np.ndarray

    @classmethod
    def fit(cls, d: Dataset, indices=None, damping: float = 0.0) -> "BiasBaseline":
        if damping < 0:
            raise ValidationError("damping must be non-negative")
        idx = np.arange(len(d)) if indices is None else np.asarray(indices, dtype=np.intp)
        r = d.ratings[idx]
        u = d.user_idx[idx]
        i = d.item_idx[idx]
        if len(r) == 0:
            return cls(0.0, np.zeros(d.n_items), np.zeros(d.n_users))
        mu = float(r.mean())
        bi = _damped_mean(r - mu, i, d.n_items, damping)
        bu = _damped_mean(r - mu - bi[i], u, d.n_users, damping)
        return cls(mu, bi, bu)

    def predict_idx(self, u, i) -> np.ndarray:
        return self.mu + self.user_bias[np.asarray(u)] + self.item_bias[np.asarray(i)]


def _damped_mean(resid, group, n, damping):
    total = np.bincount(group, weights=resid, minlength=n)
    count = np.bincount(group, minlength=n)
    denom = count + damping
    out = np.zeros(n)
    np.divide(total, denom, out=out, where=denom > 0)
    return out


def baseline_predict(d: Dataset, user: Hashable, item: Hashable, beta_damping: float = 0.0) -> float:
    """Context-free bias prediction for one pair; unseen ids contribute a zero bias."""
    b = BiasBaseline.fit(d, damping=beta_damping)
    bu = b.user_bias[d.user_pos[user]] if user in d.user_pos else 0.0
    bi = b.item_bias[d.item_pos[item]] if item in d.item_pos else 0.0
    return float(b.mu + bu + bi)
