"""Carousel scoring (affinity + discovery) and score-and-sort zone assignment."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .domain import Carousel, CarouselId, CategoryId, CategoryMap, UnknownItemError, UserId
from .factorization import EmbeddingTable
from .priors import PriorStore, expected_lambda


def parse_log_base(value: float | str) -> float:
    if isinstance(value, str):
        value = math.e if value.strip().lower() == "e" else float(value)
    if not (value > 0 and value != 1 and math.isfinite(value)):
        raise ValueError(f"log base must be positive, finite and != 1, got {value}")
    return float(value)


@dataclass(frozen=True)
class ScoringConfig:
    w: float = 0.7
    log_base: float = math.e
    normalize: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"w must lie in [0, 1], got {self.w}")
        object.__setattr__(self, "log_base", parse_log_base(self.log_base))


@dataclass(frozen=True)
class CarouselScore:
    carousel: CarouselId
    alpha: float
    gamma: float
    phi: float
    lam: float = math.nan


@dataclass(frozen=True)
class ZoneRanking:
    carousels: tuple[CarouselId, ...]
    scores: dict[CarouselId, CarouselScore] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.carousels)) != len(self.carousels):
            raise ValueError("zone assignment must be injective")


def position_weight(l: int, log_base: float = math.e) -> float:
    """Logarithmic discount 1 / log(1 + l) for 1-based position ``l``."""
    if l < 1:
        raise ValueError(f"position must be >= 1, got {l}")
    return 1.0 / math.log(1 + l, log_base)


@lru_cache(maxsize=64)
def _weights(n: int, log_base: float) -> np.ndarray:
    w = np.array([position_weight(l, log_base) for l in range(1, n + 1)])
    w.flags.writeable = False
    return w


def position_weights(n: int, log_base: float = math.e) -> np.ndarray:
    return _weights(n, float(log_base))


def affinity_score(lam: float, item_affinities: Sequence[float], log_base: float = math.e) -> float:
    """Prior-weighted, position-discounted sum of user-item affinities."""
    if len(item_affinities) == 0:
        raise ValueError("carousel affinity needs at least one item")
    return lam * math.fsum(
        r * position_weight(l, log_base) for l, r in enumerate(item_affinities, 1)
    )


def discovery_score(s_hat: float, eta: int) -> float:
    """Category discovery value; decays with the user's purchase count."""
    if eta < 0:
        raise ValueError(f"purchase count must be >= 0, got {eta}")
    return s_hat * math.exp(-eta)


def discovery_carousel_score(g_values: Sequence[float], log_base: float = math.e) -> float:
    if len(g_values) == 0:
        raise ValueError("carousel discovery needs at least one item")
    return math.fsum(g * position_weight(l, log_base) for l, g in enumerate(g_values, 1))


def combined_score(alpha: float, gamma: float, cfg: ScoringConfig) -> float:
    return cfg.w * alpha + (1.0 - cfg.w) * gamma


class DiscoveryInputs:
    """User-category affinities (from the category factor model) and purchase counts.

    An unseen category scores as the user's mean category affinity; an
    unseen user is represented by the mean user factor, which makes a fully
    cold (user, category) pair score the global mean.
    """

    def __init__(
        self,
        table: EmbeddingTable,
        eta: Mapping[UserId, Mapping[CategoryId, int]] | None = None,
    ):
        self.table = table
        self.eta: dict[UserId, dict[CategoryId, int]] = {
            u: dict(cats) for u, cats in (eta or {}).items()
        }
        self._mean_col = (
            table.col_factors.mean(axis=0) if len(table.col_ids) else np.zeros(table.dim)
        )

    def s_hat(self, u: UserId, c: CategoryId) -> float:
        return float(self.s_hat_many(u, [c])[0])

    def s_hat_many(self, u: UserId, cats: Sequence[CategoryId]) -> np.ndarray:
        x = self.table.row_vector(u)
        index = self.table.col_index
        idx = np.fromiter((index.get(c, -1) for c in cats), dtype=np.intp, count=len(cats))
        out = np.empty(len(cats))
        known = idx >= 0
        if known.any():
            out[known] = self.table.col_factors[idx[known]] @ x
        if not known.all():
            out[~known] = float(self._mean_col @ x)
        return out

    def eta_of(self, u: UserId, c: CategoryId) -> int:
        return self.eta.get(u, {}).get(c, 0)

    def g_many(self, u: UserId, cats: Sequence[CategoryId]) -> np.ndarray:
        user_eta = self.eta.get(u, {})
        eta = np.fromiter((user_eta.get(c, 0) for c in cats), dtype=np.float64, count=len(cats))
        return self.s_hat_many(u, cats) * np.exp(-eta)

    @staticmethod
    def load_eta(path) -> dict[UserId, dict[CategoryId, int]]:
        eta: dict[UserId, dict[CategoryId, int]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    n = int(obj["eta"])
                    if n < 0:
                        raise ValueError("negative count")
                    eta.setdefault(obj["user"], {})[obj["category"]] = n
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad eta record ({exc})") from None
        return eta


class ScoringStores:
    """Immutable model state plus the live prior store, indexed for scoring.

    The item -> (embedding row, category) index and the per-category factor
    matrix are built once so a request costs one dict lookup per item.
    """

    def __init__(
        self,
        items: EmbeddingTable,
        discovery: DiscoveryInputs,
        priors: PriorStore,
        catalog: CategoryMap,
    ):
        self.items = items
        self.discovery = discovery
        self.priors = priors
        self.catalog = catalog
        self.categories = catalog.categories()
        cat_pos = {c: n for n, c in enumerate(self.categories)}
        col_index = items.col_index
        self.item_info: dict[str, tuple[int, int]] = {
            item: (col_index.get(item, -1), cat_pos[cat]) for item, cat in catalog.items()
        }
        self.cat_pos = cat_pos
        # Category factors aligned with self.categories; unembedded categories
        # take the mean factor so their affinity is the user's mean affinity.
        dt = discovery.table
        self.cat_factors = np.array(
            [
                dt.col_factors[dt.col_index[c]] if c in dt.col_index else discovery._mean_col
                for c in self.categories
            ]
        ).reshape(len(self.categories), dt.dim)

    def g_all(self, u: UserId) -> np.ndarray:
        """Discovery value of every catalog category for ``u``."""
        s_hat = self.cat_factors @ self.discovery.table.row_vector(u)
        user_eta = self.discovery.eta.get(u)
        if user_eta:
            eta = np.zeros(len(self.categories))
            for c, n in user_eta.items():
                pos = self.cat_pos.get(c)
                if pos is not None:
                    eta[pos] = n
            return s_hat * np.exp(-eta)
        return s_hat


def score_carousels(
    u: UserId,
    candidates: Sequence[Carousel],
    stores: ScoringStores,
    cfg: ScoringConfig,
) -> list[CarouselScore]:
    """Score each candidate for ``u``; item order inside carousels is left untouched.

    Items with no embedding contribute zero affinity. Each (user, carousel)
    prior is read exactly once, so duplicate candidates see the same value.
    """
    if not candidates:
        raise ValueError("no candidate carousels")
    info = stores.item_info
    try:
        pairs = [info[i] for c in candidates for i in c.items]
    except KeyError as exc:
        raise UnknownItemError(exc.args[0]) from None
    lookup = np.array(pairs, dtype=np.intp).reshape(len(pairs), 2)
    idx, cat = lookup[:, 0], lookup[:, 1]
    lengths = [len(c.items) for c in candidates]
    starts = np.cumsum([0] + lengths[:-1])
    weights = np.concatenate([position_weights(n, cfg.log_base) for n in lengths])

    table = stores.items
    known = idx >= 0
    if known.all():
        r_hat = table.col_factors[idx] @ table.row_vector(u)
    else:
        r_hat = np.zeros(len(idx))
        r_hat[known] = table.col_factors[idx[known]] @ table.row_vector(u)
    g = stores.g_all(u)[cat]

    aff_sums = np.add.reduceat(r_hat * weights, starts)
    gammas = np.add.reduceat(g * weights, starts)

    snapshot: dict[CarouselId, float] = {}
    for c in candidates:
        if c.id not in snapshot:
            snapshot[c.id] = expected_lambda(stores.priors.get(u, c.id))
    lams = np.array([snapshot[c.id] for c in candidates])
    alphas = lams * aff_sums

    if cfg.normalize:
        alphas_n, gammas_n = _minmax(alphas), _minmax(gammas)
    else:
        alphas_n, gammas_n = alphas, gammas
    phis = cfg.w * alphas_n + (1.0 - cfg.w) * gammas_n
    return [
        CarouselScore(c.id, a, gm, p, lam)
        for c, a, gm, p, lam in zip(
            candidates, alphas.tolist(), gammas.tolist(), phis.tolist(), lams.tolist()
        )
    ]


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def rank_carousels(
    scores: Sequence[CarouselScore], Z: int, cfg: ScoringConfig | None = None
) -> ZoneRanking:
    """Assign the top ``Z`` carousels by phi to zones 1..Z (ties: id ascending)."""
    if Z < 1:
        raise ValueError(f"Z must be >= 1, got {Z}")
    if not scores:
        raise ValueError("nothing to rank")
    ordered = sorted(scores, key=lambda s: (-s.phi, s.carousel))
    chosen: list[CarouselScore] = []
    seen: set[CarouselId] = set()
    for s in ordered:
        if s.carousel in seen:
            continue
        seen.add(s.carousel)
        chosen.append(s)
        if len(chosen) == Z:
            break
    return ZoneRanking(tuple(s.carousel for s in chosen), {s.carousel: s for s in chosen})
