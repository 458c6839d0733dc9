"""Builders for small random contextual datasets used across the tests."""

import numpy as np

from cbpf.dataset import ContextFactorSpec, Dataset, DatasetSchema


def make_schema(conditions_per_factor=(3, 2, 4), scale=(1, 5)):
    factors = tuple(
        ContextFactorSpec(f"f{k}", tuple(f"c{k}_{j}" for j in range(c)))
        for k, c in enumerate(conditions_per_factor)
    )
    return DatasetSchema(rating_scale=scale, factors=factors)


def random_dataset(rng, n_obs=60, n_users=6, n_items=5, conditions=(3, 2, 4), p_unknown=0.2,
                   integer=True, scale=(1, 5)):
    schema = make_schema(conditions, scale)
    lo, hi = scale
    u = rng.integers(n_users, size=n_obs)
    i = rng.integers(n_items, size=n_obs)
    if integer:
        r = rng.integers(lo, hi + 1, size=n_obs).astype(float)
    else:
        r = rng.uniform(lo, hi, size=n_obs)
    codes = np.column_stack([rng.integers(c, size=n_obs) for c in conditions])
    codes[rng.random(codes.shape) < p_unknown] = -1
    return Dataset(
        schema=schema,
        users=[f"u{j}" for j in range(n_users)],
        items=[f"i{j}" for j in range(n_items)],
        user_idx=u.astype(np.intp),
        item_idx=i.astype(np.intp),
        ratings=r,
        codes=codes.astype(np.intp),
    )


def pcc_oracle(xs, ys):
    """Textbook two-pass Pearson correlation in plain Python; 0 when undefined."""
    n = len(xs)
    if n < 2:
        return 0.0
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    if len(set(xs)) == 1 or len(set(ys)) == 1 or sxx == 0 or syy == 0:
        return 0.0
    return sxy / (sxx ** 0.5 * syy ** 0.5)


def influence_oracle(d, basis_of_obs, n_entities, unknown_as_zero=False):
    """Influence matrix computed observation by observation with :func:`pcc_oracle`."""
    schema = d.schema
    out = np.zeros((schema.n_conditions, n_entities))
    for j in range(schema.n_conditions):
        factor = int(schema.condition_factor[j])
        for e in range(n_entities):
            xs, ys = [], []
            for t in range(len(d)):
                if basis_of_obs[t] != e:
                    continue
                if not unknown_as_zero and d.codes[t, factor] < 0:
                    continue
                xs.append(float(d.ratings[t]))
                ys.append(float(d.bits[t, j]))
            out[j, e] = pcc_oracle(xs, ys)
    return out
