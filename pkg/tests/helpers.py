"""Small hand-built model states shared by the scoring and service tests."""

from __future__ import annotations

import numpy as np

from crank.domain import Carousel, CategoryMap
from crank.factorization import EmbeddingTable
from crank.pipeline import LoadedModel
from crank.priors import BetaPrior, PriorStore
from crank.scoring import DiscoveryInputs, ScoringStores


def single_item_model() -> LoadedModel:
    """One user, one item: r_hat = 1.0, s_hat = 0.8, eta = 0, prior (1, 1)."""
    items = EmbeddingTable(["u1"], ["i1"], np.array([[1.0]]), np.array([[1.0]]))
    cats = EmbeddingTable(["u1"], ["dairy"], np.array([[1.0]]), np.array([[0.8]]))
    return LoadedModel(
        items, DiscoveryInputs(cats, {}), PriorStore(), CategoryMap({"i1": "dairy"}), {}
    )


def random_model(rng: np.random.Generator, n_users=5, n_items=30, n_cats=6, dim=3) -> LoadedModel:
    users = [f"u{n}" for n in range(n_users)]
    item_ids = [f"i{n}" for n in range(n_items)]
    cat_ids = [f"c{n}" for n in range(n_cats)]
    catalog = CategoryMap({i: cat_ids[int(rng.integers(n_cats))] for i in item_ids})
    # Non-negative factors keep every r_hat and s_hat >= 0.
    items = EmbeddingTable(users, item_ids, rng.random((n_users, dim)), rng.random((n_items, dim)))
    cats = EmbeddingTable(users, cat_ids, rng.random((n_users, dim)), rng.random((n_cats, dim)))
    eta = {u: {c: int(rng.integers(0, 4)) for c in cat_ids if rng.random() < 0.5} for u in users}
    priors = PriorStore()
    for u in users:
        for k in range(12):
            priors.set(u, f"k{k}", BetaPrior(float(rng.integers(1, 20)), float(rng.integers(1, 20))))
    return LoadedModel(items, DiscoveryInputs(cats, eta), priors, catalog, {})


def stores_of(model: LoadedModel) -> ScoringStores:
    return ScoringStores(model.item_table, model.discovery, model.priors, model.catalog)


def random_candidates(rng: np.random.Generator, n: int, item_pool: int = 30, max_len: int = 8) -> list[Carousel]:
    out = []
    for k in range(n):
        size = int(rng.integers(1, max_len + 1))
        picks = rng.choice(item_pool, size=size, replace=False)
        out.append(Carousel(f"k{k}", tuple(f"i{p}" for p in picks)))
    return out
