"""Identifiers, carousels, interaction events and the item catalog."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

UserId = str
ItemId = str
CarouselId = str
CategoryId = str


class EventParseError(ValueError):
    """Raised when an event line cannot be decoded.

    ``field`` names the offending field (``None`` for whole-line JSON errors).
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class UnknownItemError(KeyError):
    def __init__(self, item: ItemId):
        super().__init__(item)
        self.item = item

    def __str__(self) -> str:
        return f"unknown item {self.item}"


class CatalogError(ValueError):
    pass


def check_id(value: object, field: str = "id") -> str:
    if not isinstance(value, str) or not value:
        raise ValueError(f"{field} must be a non-empty string")
    if value.split() != [value]:
        raise ValueError(f"{field} must not contain whitespace: {value!r}")
    return value


class EventType(str, enum.Enum):
    VIEW = "view"
    CLICK = "click"
    ATC = "atc"

    @property
    def engaged(self) -> bool:
        return self is not EventType.VIEW


@dataclass(frozen=True)
class Carousel:
    """An ordered, immutable list of items under one carousel id."""

    id: CarouselId
    items: tuple[ItemId, ...]

    def __post_init__(self) -> None:
        check_id(self.id, "carousel")
        items = tuple(self.items)
        if not items:
            raise ValueError(f"carousel {self.id} has no items")
        for item in items:
            check_id(item, "item")
        if len(set(items)) != len(items):
            raise ValueError(f"carousel {self.id} contains duplicate items")
        object.__setattr__(self, "items", items)

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class InteractionEvent:
    user: UserId
    carousel: CarouselId
    event: EventType
    ts: int
    item: ItemId | None = None

    def __post_init__(self) -> None:
        check_id(self.user, "user")
        check_id(self.carousel, "carousel")
        if self.item is not None:
            check_id(self.item, "item")
        if not isinstance(self.event, EventType):
            object.__setattr__(self, "event", EventType(self.event))
        if isinstance(self.ts, bool) or not isinstance(self.ts, int) or self.ts < 0:
            raise ValueError(f"ts must be a non-negative integer, got {self.ts!r}")

    def to_dict(self) -> dict:
        d: dict = {"ts": self.ts, "user": self.user, "carousel": self.carousel}
        if self.item is not None:
            d["item"] = self.item
        d["event"] = self.event.value
        return d


def serialize_event(e: InteractionEvent) -> str:
    return json.dumps(e.to_dict(), separators=(",", ":"), ensure_ascii=False)


def event_from_dict(obj: object) -> InteractionEvent:
    if not isinstance(obj, dict):
        raise EventParseError("event must be a JSON object")
    for name in ("ts", "user", "carousel", "event"):
        if name not in obj:
            raise EventParseError(f"missing field {name!r}", name)
    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, int):
        raise EventParseError(f"ts must be an integer, got {ts!r}", "ts")
    if ts < 0:
        raise EventParseError(f"negative ts {ts}", "ts")
    try:
        event = EventType(obj["event"])
    except ValueError:
        raise EventParseError(f"unknown event {obj['event']!r}", "event") from None
    fields = {"user": obj["user"], "carousel": obj["carousel"]}
    item = obj.get("item")
    if item is not None:
        fields["item"] = item
    elif event is not EventType.VIEW:
        raise EventParseError(f"{event.value} event requires an item", "item")
    for name, value in fields.items():
        try:
            check_id(value, name)
        except ValueError as exc:
            raise EventParseError(str(exc), name) from None
    return InteractionEvent(
        user=obj["user"], carousel=obj["carousel"], event=event, ts=ts, item=item
    )


def parse_event(line: str) -> InteractionEvent:
    """Decode one line of event JSONL. Unknown fields are ignored."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise EventParseError(f"malformed JSON: {exc.msg}") from None
    return event_from_dict(obj)


def read_events(path: str | Path) -> Iterator[InteractionEvent]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield parse_event(line)


def write_events(path: str | Path, events: Iterable[InteractionEvent]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in events:
            fh.write(serialize_event(e) + "\n")


class CategoryMap(Mapping[ItemId, CategoryId]):
    """Many-to-one item -> category mapping; unknown items are an error."""

    def __init__(self, mapping: Mapping[ItemId, CategoryId] | None = None):
        self._map: dict[ItemId, CategoryId] = {}
        for item, cat in (mapping or {}).items():
            self._map[check_id(item, "item")] = check_id(cat, "category")

    def __getitem__(self, item: ItemId) -> CategoryId:
        try:
            return self._map[item]
        except KeyError:
            raise UnknownItemError(item) from None

    def __iter__(self):
        return iter(self._map)

    def __len__(self) -> int:
        return len(self._map)

    def __contains__(self, item: object) -> bool:
        return item in self._map

    def categories(self) -> list[CategoryId]:
        return sorted(set(self._map.values()))

    @classmethod
    def load(cls, path: str | Path) -> CategoryMap:
        mapping: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    item, cat = obj["item"], obj["category"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CatalogError(f"{path}:{lineno}: bad catalog line ({exc})") from None
                if item in mapping and mapping[item] != cat:
                    raise CatalogError(
                        f"{path}:{lineno}: item {item} mapped to both "
                        f"{mapping[item]} and {cat}"
                    )
                mapping[item] = cat
        return cls(mapping)

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for item in sorted(self._map):
                fh.write(json.dumps({"item": item, "category": self._map[item]}) + "\n")


def category_of(catalog: CategoryMap, item: ItemId) -> CategoryId:
    return catalog[item]
