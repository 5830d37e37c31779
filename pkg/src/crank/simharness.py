"""Synthetic A/B rig: static popularity ordering vs the live ranking engine.

The world has users with latent category tastes, items with a quality draw,
and ten themed carousels. A visit walks the page zone by zone; the chance of
looking at a carousel decays as 1/log2(1 + zone) and the chance of engaging
with the item at position l decays as 1/log2(1 + l), scaled by the user's
true affinity for the item. Items from categories the user has never bought
are additionally scaled by the user's curiosity.
"""

from __future__ import annotations

import hashlib
import json
import math
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .domain import Carousel, CategoryMap, EventType, InteractionEvent
from .factorization import TrainConfig
from .ingestion import SessionRule
from .pipeline import LoadedModel, train_models
from .scoring import DiscoveryInputs, ScoringConfig
from .service import Engine, RankRequest

Policy = Literal["static", "dynamic"]

METRICS = ("atc_per_visit", "item_page_visits_per_visit", "distinct_new_categories_touched")


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 200
    n_categories: int = 12
    items_per_category: int = 12
    n_carousels: int = 10
    carousel_len: int = 8
    themes_per_carousel: int = 2
    n_user_types: int = 4
    history_sessions: int = 6
    orders_per_user: int = 20
    basket_size: int = 5
    habit_categories: int = 3
    taste_concentration: float = 0.5
    taste_noise: float = 0.3
    click_scale: float = 0.15
    atc_given_click: float = 0.5
    curiosity_range: tuple[float, float] = (0.5, 1.0)

    def __post_init__(self) -> None:
        if self.n_users < 2:
            raise ValueError("world needs at least 2 users")
        if self.n_categories < 2:
            raise ValueError("world needs at least 2 categories")
        if self.n_carousels < 1 or self.carousel_len < 1 or self.items_per_category < 1:
            raise ValueError("carousel and catalog sizes must be positive")
        if self.carousel_len > self.themes_per_carousel * self.items_per_category:
            raise ValueError("carousel_len exceeds the items available to a carousel")
        if self.themes_per_carousel > self.n_categories:
            raise ValueError("themes_per_carousel exceeds n_categories")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class SyntheticWorld:
    cfg: WorldConfig
    seed: int
    users: list[str]
    items: list[str]
    item_category: np.ndarray          # item index -> category index
    taste: np.ndarray                  # users x categories, row max 1
    quality: np.ndarray                # items
    curiosity: np.ndarray              # users
    carousels: list[Carousel]
    carousel_items: np.ndarray         # carousels x len, item indices
    history: list[InteractionEvent] = field(repr=False, default_factory=list)

    @property
    def catalog(self) -> CategoryMap:
        return CategoryMap({it: f"cat{c}" for it, c in zip(self.items, self.item_category)})

    def affinity(self, u: int) -> np.ndarray:
        """Ground-truth engagement propensity of user ``u`` for every item."""
        return self.taste[u, self.item_category] * self.quality


def generate_world(cfg: WorldConfig = WorldConfig(), seed: int = 0) -> SyntheticWorld:
    rng = np.random.default_rng(seed)
    n_items = cfg.n_categories * cfg.items_per_category
    item_category = np.repeat(np.arange(cfg.n_categories), cfg.items_per_category)
    profiles = rng.dirichlet(np.full(cfg.n_categories, cfg.taste_concentration), size=cfg.n_user_types)
    user_type = rng.integers(cfg.n_user_types, size=cfg.n_users)
    taste = profiles[user_type] * rng.lognormal(0.0, cfg.taste_noise, size=(cfg.n_users, cfg.n_categories))
    taste /= taste.max(axis=1, keepdims=True)
    quality = rng.beta(4.0, 2.0, size=n_items)
    curiosity = rng.uniform(*cfg.curiosity_range, size=cfg.n_users)
    carousel_items = np.empty((cfg.n_carousels, cfg.carousel_len), dtype=np.intp)
    for k in range(cfg.n_carousels):
        themes = rng.choice(cfg.n_categories, size=cfg.themes_per_carousel, replace=False)
        pool = np.flatnonzero(np.isin(item_category, themes))
        carousel_items[k] = rng.choice(pool, size=cfg.carousel_len, replace=False)
    users = [f"u{n}" for n in range(cfg.n_users)]
    items = [f"i{n}" for n in range(n_items)]
    carousels = [
        Carousel(f"c{k}", tuple(items[j] for j in carousel_items[k])) for k in range(cfg.n_carousels)
    ]
    world = SyntheticWorld(
        cfg, seed, users, items, item_category, taste, quality, curiosity, carousels, carousel_items
    )
    world.history = _history(world, np.random.default_rng([seed, 1]))
    return world


@dataclass
class VisitOutcome:
    events: list[InteractionEvent]
    atc: int
    clicks: int
    new_categories: int


class _Behavior:
    """Samples one visit given the page layout; tracks each user's purchased categories."""

    def __init__(self, world: SyntheticWorld):
        cfg = world.cfg
        self.world = world
        n_zones = cfg.n_carousels
        self.zone_bias = 1.0 / np.log2(1.0 + np.arange(1, n_zones + 1))
        self.pos_bias = 1.0 / np.log2(1.0 + np.arange(1, cfg.carousel_len + 1))
        self.bought = np.zeros((cfg.n_users, cfg.n_categories), dtype=bool)
        self.aff = np.stack([world.affinity(u) for u in range(cfg.n_users)])
        self.cindex = {c.id: k for k, c in enumerate(world.carousels)}

    def visit(self, rng: np.random.Generator, u: int, layout: Sequence[str], ts: int) -> VisitOutcome:
        w, cfg = self.world, self.world.cfg
        ks = np.array([self.cindex[c] for c in layout])
        items = w.carousel_items[ks]                         # zones x len
        cats = w.item_category[items]
        new = ~self.bought[u, cats]
        aff = self.aff[u, items] * np.where(new, w.curiosity[u], 1.0)
        seen = rng.random(len(ks)) < self.zone_bias[: len(ks)]
        p_click = cfg.click_scale * aff * self.pos_bias[None, :] * seen[:, None]
        clicks = rng.random(items.shape) < p_click
        atcs = clicks & (rng.random(items.shape) < cfg.atc_given_click * aff)
        user = w.users[u]
        events: list[InteractionEvent] = []
        for z in np.flatnonzero(seen):
            cid = layout[z]
            events.append(InteractionEvent(user, cid, EventType.VIEW, ts))
            for l in np.flatnonzero(clicks[z]):
                item = w.items[items[z, l]]
                events.append(InteractionEvent(user, cid, EventType.CLICK, ts, item))
                if atcs[z, l]:
                    events.append(InteractionEvent(user, cid, EventType.ATC, ts, item))
        new_cats = {int(c) for c in cats[clicks & new]}
        self.bought[u, cats[atcs]] = True
        return VisitOutcome(events, int(atcs.sum()), int(clicks.sum()), len(new_cats))


HISTORY_START = 1_600_000_000
SESSION_SPACING = 60
ORDERS_CAROUSEL = "orders"


def _history(world: SyntheticWorld, rng: np.random.Generator) -> list[InteractionEvent]:
    """Visits under uniformly random layouts; the training log for both policies."""
    behavior = _Behavior(world)
    cfg = world.cfg
    events: list[InteractionEvent] = []
    ids = [c.id for c in world.carousels]
    ts = HISTORY_START
    for _ in range(cfg.history_sessions):
        for u in rng.permutation(cfg.n_users):
            layout = [ids[k] for k in rng.permutation(len(ids))]
            events.extend(behavior.visit(rng, int(u), layout, ts).events)
            ts += SESSION_SPACING
    # Regular orders outside the homepage, drawn from each user's habitual
    # categories only; the rest of their tastes stay unexplored.
    habits = np.argsort(-world.taste, axis=1)[:, : cfg.habit_categories]
    for _ in range(cfg.orders_per_user):
        for u in rng.permutation(cfg.n_users):
            p = behavior.aff[u] ** 2 * np.isin(world.item_category, habits[u])
            basket = rng.choice(len(p), size=cfg.basket_size, replace=False, p=p / p.sum())
            for j in basket:
                events.append(
                    InteractionEvent(world.users[u], ORDERS_CAROUSEL, EventType.ATC, ts, world.items[j])
                )
            ts += SESSION_SPACING
    return events


def _bought_from_history(world: SyntheticWorld) -> np.ndarray:
    bought = np.zeros((world.cfg.n_users, world.cfg.n_categories), dtype=bool)
    uindex = {u: n for n, u in enumerate(world.users)}
    iindex = {it: n for n, it in enumerate(world.items)}
    for e in world.history:
        if e.event is EventType.ATC:
            bought[uindex[e.user], world.item_category[iindex[e.item]]] = True
    return bought


def static_ordering(world: SyntheticWorld) -> list[str]:
    """Carousels by historical ATCs per view, aggregated over all users."""
    views: dict[str, int] = {c.id: 0 for c in world.carousels}
    atcs: dict[str, int] = {c.id: 0 for c in world.carousels}
    for e in world.history:
        if e.carousel not in views:
            continue
        if e.event is EventType.VIEW:
            views[e.carousel] += 1
        elif e.event is EventType.ATC:
            atcs[e.carousel] += 1
    rate = {k: atcs[k] / views[k] if views[k] else 0.0 for k in views}
    return sorted(rate, key=lambda k: (-rate[k], k))


def train_world(
    world: SyntheticWorld,
    train_cfg: TrainConfig | None = None,
    cat_cfg: TrainConfig | None = None,
) -> LoadedModel:
    # The category matrix has few columns; a small rank keeps its scores
    # collaborative instead of memorizing each user's purchases.
    train_cfg = train_cfg or TrainConfig(dim=8, iterations=10, reg=0.1, conf_alpha=10.0, seed=world.seed)
    cat_cfg = cat_cfg or TrainConfig(dim=3, iterations=10, reg=0.1, conf_alpha=10.0, seed=world.seed)
    result = train_models(world.history, world.catalog, train_cfg, cat_cfg=cat_cfg)
    return LoadedModel(
        result.item_table,
        DiscoveryInputs(result.cat_table, result.eta),
        result.priors,
        result.catalog,
        {},
    )


@dataclass
class SimReport:
    policy: str
    sessions: int
    atc_per_visit: float
    item_page_visits_per_visit: float
    distinct_new_categories_touched: float
    p50_compute_micros: float | None
    p99_compute_micros: float | None
    config_hash: str
    world_seed: int
    sim_seed: int
    w: float | None = None
    normalize: bool | None = None
    trajectory: list[int] | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> SimReport:
        return cls(**json.loads(Path(path).read_text()))


def simulate(
    world: SyntheticWorld,
    policy: Policy,
    n_sessions: int,
    seed: int = 0,
    w: float = 0.7,
    normalize: bool = True,
    model: LoadedModel | None = None,
    track: tuple[str, str] | None = None,
    engine_kwargs: dict | None = None,
) -> SimReport:
    """Replay ``n_sessions`` visits by randomly drawn users under ``policy``.

    The dynamic policy ranks through an in-process :class:`Engine` and feeds
    each visit's events back before the next visit. ``track=(user, carousel)``
    records the zone (1-based) of that carousel on each of the user's visits.
    """
    if policy not in ("static", "dynamic"):
        raise ValueError(f"unknown policy {policy!r}")
    cfg = world.cfg
    rng = np.random.default_rng([seed, 2])
    behavior = _Behavior(world)
    behavior.bought = _bought_from_history(world)
    order = static_ordering(world)
    micros: list[float] = []
    trajectory: list[int] | None = [] if track else None
    atc = clicks = new_cats = 0

    tmp = None
    engine = None
    if policy == "dynamic" and n_sessions > 0:
        if model is None:
            model = train_world(world)
        tmp = tempfile.TemporaryDirectory(prefix="crank-sim-")
        engine = Engine.from_model(
            model,
            Path(tmp.name),
            scoring=ScoringConfig(w=w, normalize=normalize),
            fold_mode="provisional",
            persist=False,
            **(engine_kwargs or {}),
        )
        requests: dict[int, RankRequest] = {}
    try:
        ts = HISTORY_START + cfg.history_sessions * cfg.n_users * SESSION_SPACING + 86400
        users = rng.integers(0, cfg.n_users, size=n_sessions) if not track else None
        track_u = world.users.index(track[0]) if track else None
        # Every simulated visit is its own session: a returning user's clock
        # jumps past the session gap.
        gap = (engine.cfg.session_gap_s if engine is not None else 1800) + 1
        last_visit: dict[int, int] = {}
        for s in range(n_sessions):
            u = int(users[s]) if users is not None else track_u
            if u in last_visit:
                ts = max(ts, last_visit[u] + gap)
            last_visit[u] = ts
            if engine is not None:
                req = requests.get(u)
                if req is None:
                    req = requests[u] = RankRequest(world.users[u], world.carousels, cfg.n_carousels)
                resp = engine.rank(req)
                layout = resp["ranking"]
                micros.append(resp["compute_micros"])
            else:
                t0 = time.perf_counter_ns()
                layout = list(order)
                micros.append((time.perf_counter_ns() - t0) / 1000.0)
            if trajectory is not None:
                trajectory.append(layout.index(track[1]) + 1)
            out = behavior.visit(rng, u, layout, ts)
            atc += out.atc
            clicks += out.clicks
            new_cats += out.new_categories
            if engine is not None and out.events:
                for e in out.events:
                    engine.log.append(e)
                engine.tick()
            ts += SESSION_SPACING
    finally:
        if engine is not None:
            engine.stop()
        if tmp is not None:
            tmp.cleanup()

    n = max(n_sessions, 1)
    enough = len(micros) >= 1000
    return SimReport(
        policy=policy,
        sessions=n_sessions,
        atc_per_visit=atc / n,
        item_page_visits_per_visit=clicks / n,
        distinct_new_categories_touched=new_cats / n,
        p50_compute_micros=float(np.percentile(micros, 50)) if enough else None,
        p99_compute_micros=float(np.percentile(micros, 99)) if enough else None,
        config_hash=cfg.digest(),
        world_seed=world.seed,
        sim_seed=seed,
        w=w if policy == "dynamic" else None,
        normalize=normalize if policy == "dynamic" else None,
        trajectory=trajectory,
    )


def compare(a: SimReport, b: SimReport) -> dict[str, float | str]:
    """Percent lift of ``b`` over ``a`` per metric; "n/a" when ``a`` is zero."""
    if (a.config_hash, a.world_seed, a.sessions) != (b.config_hash, b.world_seed, b.sessions):
        raise ValueError("reports come from different worlds or session counts")
    out: dict[str, float | str] = {}
    for m in METRICS:
        base, new = getattr(a, m), getattr(b, m)
        out[m] = "n/a" if base == 0 else 100.0 * (new - base) / base
    return out


def random_requests(
    engine: Engine,
    n: int,
    candidates: int = 10,
    items_per_carousel: int = 20,
    seed: int = 0,
) -> list[RankRequest]:
    rng = np.random.default_rng(seed)
    stores = engine.stores
    items = [i for i in stores.items.col_ids if i in stores.catalog]
    users = stores.items.row_ids or ["cold-user"]
    per = min(items_per_carousel, len(items))
    reqs = []
    for _ in range(n):
        u = users[rng.integers(len(users))]
        cs = [
            Carousel(f"k{k}", tuple(items[j] for j in rng.choice(len(items), per, replace=False)))
            for k in range(candidates)
        ]
        reqs.append(RankRequest(u, cs, candidates))
    return reqs


def bench_latency(
    engine: Engine,
    n_requests: int = 10000,
    candidates: int = 10,
    items_per_carousel: int = 20,
    concurrency: int = 1,
    warmup: int = 100,
    seed: int = 0,
) -> dict[str, float]:
    """Percentiles of server-side compute time over warmed rank requests."""
    if n_requests < 1000:
        raise ValueError("insufficient samples: need at least 1000 requests")
    pool = random_requests(engine, min(n_requests, 2000), candidates, items_per_carousel, seed)
    for n in range(warmup):
        engine.rank(pool[n % len(pool)])
    samples = np.empty(n_requests)

    def worker(idx: range) -> None:
        for n in idx:
            samples[n] = engine.rank(pool[n % len(pool)])["compute_micros"]

    concurrency = max(1, concurrency)
    if concurrency == 1:
        worker(range(n_requests))
    else:
        threads = [
            threading.Thread(target=worker, args=(range(t, n_requests, concurrency),))
            for t in range(concurrency)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    return {
        "n": n_requests,
        "candidates": candidates,
        "items_per_carousel": items_per_carousel,
        "p50": float(np.percentile(samples, 50)),
        "p95": float(np.percentile(samples, 95)),
        "p99": float(np.percentile(samples, 99)),
        "mean": float(samples.mean()),
    }
