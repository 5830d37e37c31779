"""Beta priors over user-carousel engagement and their online updates."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .domain import CarouselId, EventType, UserId


@dataclass(frozen=True)
class BetaPrior:
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self) -> None:
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"Beta parameters must be positive, got a={self.a}, b={self.b}")


def expected_lambda(p: BetaPrior) -> float:
    """Mean of the Beta distribution, a / (a + b)."""
    return p.a / (p.a + p.b)


def update_prior(p: BetaPrior, e: EventType | str | None) -> BetaPrior:
    """Conjugate update for a single carousel-level event.

    Clicks and add-to-carts count as successes, views as failures; anything
    else leaves the prior untouched.
    """
    if e is None:
        return p
    try:
        e = EventType(e)
    except ValueError:
        return p
    if e is EventType.VIEW:
        return BetaPrior(p.a, p.b + 1)
    return BetaPrior(p.a + 1, p.b)


def fold_events(p: BetaPrior, events: Iterable[EventType | str | None]) -> BetaPrior:
    for e in events:
        p = update_prior(p, e)
    return p


class PriorStore:
    """Thread-safe map of (user, carousel) -> BetaPrior.

    Absent keys read as the initial prior. Writes are per-key atomic
    read-modify-write under striped locks; reads take no lock since the
    stored values are immutable.
    """

    _N_STRIPES = 64

    def __init__(self, a0: float = 1.0, b0: float = 1.0):
        self.initial = BetaPrior(a0, b0)
        self._priors: dict[tuple[UserId, CarouselId], BetaPrior] = {}
        self._locks = [threading.Lock() for _ in range(self._N_STRIPES)]
        self.last_persisted_ts: float | None = None

    def _lock_for(self, key: tuple[str, str]) -> threading.Lock:
        return self._locks[hash(key) % self._N_STRIPES]

    def get(self, u: UserId, k: CarouselId) -> BetaPrior:
        return self._priors.get((u, k), self.initial)

    def set(self, u: UserId, k: CarouselId, p: BetaPrior) -> None:
        key = (u, k)
        with self._lock_for(key):
            self._priors[key] = p

    def apply(self, u: UserId, k: CarouselId, e: EventType | str | None) -> BetaPrior:
        key = (u, k)
        with self._lock_for(key):
            p = update_prior(self._priors.get(key, self.initial), e)
            self._priors[key] = p
        return p

    def __contains__(self, key: object) -> bool:
        return key in self._priors

    def __len__(self) -> int:
        return len(self._priors)

    def items(self) -> Iterator[tuple[tuple[UserId, CarouselId], BetaPrior]]:
        return iter(list(self._priors.items()))

    def as_dict(self) -> dict[tuple[UserId, CarouselId], tuple[float, float]]:
        return {k: (p.a, p.b) for k, p in self.items()}

    def copy(self) -> PriorStore:
        other = PriorStore(self.initial.a, self.initial.b)
        other._priors = dict(self._priors)
        return other

    def save(self, path: str | Path, ts: float | None = None) -> None:
        """Write a JSONL snapshot atomically (temp file + rename)."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            for (u, k), p in sorted(self.items()):
                fh.write(json.dumps({"user": u, "carousel": k, "a": p.a, "b": p.b}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        self.last_persisted_ts = ts

    @classmethod
    def load(cls, path: str | Path, a0: float = 1.0, b0: float = 1.0) -> PriorStore:
        store = cls(a0, b0)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    prior = BetaPrior(float(obj["a"]), float(obj["b"]))
                    store._priors[(obj["user"], obj["carousel"])] = prior
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad prior record ({exc})") from None
        return store


def get_or_init(store: PriorStore, u: UserId, k: CarouselId) -> BetaPrior:
    return store.get(u, k)
