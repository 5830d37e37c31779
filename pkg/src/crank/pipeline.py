"""Offline training: event log + catalog -> model directory.

A model directory holds five artifacts plus a checksum manifest:

    user_item.emb   user/item factors
    user_cat.emb    user/category factors
    eta_uc.jsonl    per (user, category) purchase counts
    priors.jsonl    per (user, carousel) Beta priors seeded from history
    catalog.jsonl   item -> category
    manifest.json   sha256 of each artifact
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .domain import CategoryMap, InteractionEvent, read_events
from .factorization import EmbeddingTable, TrainConfig, build_matrix, train_als
from .ingestion import SessionRule, sessionize
from .priors import PriorStore
from .scoring import DiscoveryInputs

_log = logging.getLogger(__name__)

ARTIFACTS = ("user_item.emb", "user_cat.emb", "eta_uc.jsonl", "priors.jsonl", "catalog.jsonl")
MANIFEST = "manifest.json"


class ArtifactError(RuntimeError):
    pass


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def seed_priors(
    events: Iterable[InteractionEvent],
    rule: SessionRule = SessionRule(),
    a0: float = 1.0,
    b0: float = 1.0,
) -> PriorStore:
    """Fold sessionized historical events into fresh priors."""
    by_user: dict[str, list[InteractionEvent]] = defaultdict(list)
    for e in events:
        by_user[e.user].append(e)
    store = PriorStore(a0, b0)
    for user in sorted(by_user):
        evs = sorted(by_user[user], key=lambda e: e.ts)  # stable: ties keep file order
        for session in sessionize(evs, rule):
            for e in session:
                store.apply(e.user, e.carousel, e.event)
    return store


def write_eta(path: str | Path, eta: dict[tuple[str, str], float]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (u, c), n in sorted(eta.items()):
            fh.write(json.dumps({"user": u, "category": c, "eta": int(n)}) + "\n")


@dataclass
class TrainResult:
    item_table: EmbeddingTable
    cat_table: EmbeddingTable
    eta: dict[str, dict[str, int]]
    priors: PriorStore
    catalog: CategoryMap


def train_models(
    events: Sequence[InteractionEvent],
    catalog: CategoryMap,
    cfg: TrainConfig = TrainConfig(),
    window_days: int = 365,
    rule: SessionRule = SessionRule(),
    cat_cfg: TrainConfig | None = None,
) -> TrainResult:
    """Train both factor models, count purchases per category and seed priors.

    ``cat_cfg`` overrides ``cfg`` for the user-category model.
    """
    events = list(events)
    item_m = build_matrix(events, "item", catalog, window_days)
    cat_m = build_matrix(events, "category", catalog, window_days)
    _log.info("training user-item model on %d x %d matrix", *item_m.shape)
    item_table = train_als(item_m, cfg)
    _log.info("training user-category model on %d x %d matrix", *cat_m.shape)
    cat_table = train_als(cat_m, cat_cfg or cfg)
    eta: dict[str, dict[str, int]] = defaultdict(dict)
    for (u, c), n in cat_m.to_dict().items():
        eta[u][c] = int(n)
    return TrainResult(item_table, cat_table, dict(eta), seed_priors(events, rule), catalog)


def save_model_dir(result: TrainResult, out: str | Path, meta: dict | None = None) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    result.item_table.save(out / "user_item.emb")
    result.cat_table.save(out / "user_cat.emb")
    write_eta(out / "eta_uc.jsonl", {(u, c): n for u, cs in result.eta.items() for c, n in cs.items()})
    result.priors.save(out / "priors.jsonl")
    result.catalog.dump(out / "catalog.jsonl")
    manifest = {
        "created": int(time.time()),
        "artifacts": {name: {"sha256": sha256_file(out / name)} for name in ARTIFACTS},
        "meta": meta or {},
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def train(
    events_path: str | Path,
    catalog_path: str | Path,
    out: str | Path,
    cfg: TrainConfig = TrainConfig(),
    window_days: int = 365,
    rule: SessionRule = SessionRule(),
) -> Path:
    catalog = CategoryMap.load(catalog_path)
    events = list(read_events(events_path))
    result = train_models(events, catalog, cfg, window_days, rule)
    meta = {"train_config": asdict(cfg), "window_days": window_days, "n_events": len(events)}
    return save_model_dir(result, out, meta)


def verify_model_dir(model_dir: str | Path) -> dict[str, str]:
    """Check every artifact against the manifest; returns name -> sha256."""
    model_dir = Path(model_dir)
    try:
        manifest = json.loads((model_dir / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot read manifest in {model_dir}: {exc}") from None
    digests = {}
    for name in ARTIFACTS:
        path = model_dir / name
        if not path.exists():
            raise ArtifactError(f"missing artifact {name}")
        expected = manifest.get("artifacts", {}).get(name, {}).get("sha256")
        actual = sha256_file(path)
        if expected != actual:
            raise ArtifactError(f"checksum mismatch for {name}")
        digests[name] = actual
    return digests


@dataclass
class LoadedModel:
    item_table: EmbeddingTable
    discovery: DiscoveryInputs
    priors: PriorStore
    catalog: CategoryMap
    versions: dict[str, str]


def load_model_dir(model_dir: str | Path, a0: float = 1.0, b0: float = 1.0) -> LoadedModel:
    model_dir = Path(model_dir)
    versions = verify_model_dir(model_dir)
    try:
        item_table = EmbeddingTable.load(model_dir / "user_item.emb")
        cat_table = EmbeddingTable.load(model_dir / "user_cat.emb")
        eta = DiscoveryInputs.load_eta(model_dir / "eta_uc.jsonl")
        priors = PriorStore.load(model_dir / "priors.jsonl", a0, b0)
        catalog = CategoryMap.load(model_dir / "catalog.jsonl")
    except (OSError, ValueError) as exc:
        raise ArtifactError(str(exc)) from exc
    return LoadedModel(item_table, DiscoveryInputs(cat_table, eta), priors, catalog, versions)
