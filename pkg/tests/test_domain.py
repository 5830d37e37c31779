import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from crank.domain import (
    Carousel,
    CatalogError,
    CategoryMap,
    EventParseError,
    EventType,
    InteractionEvent,
    UnknownItemError,
    category_of,
    parse_event,
    read_events,
    serialize_event,
    write_events,
)

ids = st.text(
    alphabet=st.characters(blacklist_categories=("Zs", "Zl", "Zp", "Cc", "Cs")), min_size=1, max_size=12
).filter(lambda s: s.split() == [s])


def test_parse_click_with_item():
    e = parse_event('{"ts":100,"user":"u1","carousel":"c3","item":"i42","event":"click"}')
    assert e == InteractionEvent("u1", "c3", EventType.CLICK, 100, "i42")


def test_parse_view_without_item():
    e = parse_event('{"ts":0,"user":"u1","carousel":"c3","event":"view"}')
    assert e.item is None and e.event is EventType.VIEW and e.ts == 0


def test_unknown_event_is_rejected():
    with pytest.raises(EventParseError, match="unknown event") as info:
        parse_event('{"ts":5,"user":"u1","carousel":"c3","item":"i1","event":"purchase"}')
    assert info.value.field == "event"


@pytest.mark.parametrize(
    "line, field",
    [
        ('{"user":"u1","carousel":"c3","event":"view"}', "ts"),
        ('{"ts":-1,"user":"u1","carousel":"c3","event":"view"}', "ts"),
        ('{"ts":1.5,"user":"u1","carousel":"c3","event":"view"}', "ts"),
        ('{"ts":true,"user":"u1","carousel":"c3","event":"view"}', "ts"),
        ('{"ts":1,"carousel":"c3","event":"view"}', "user"),
        ('{"ts":1,"user":"u 1","carousel":"c3","event":"view"}', "user"),
        ('{"ts":1,"user":"u1","carousel":"","event":"view"}', "carousel"),
        ('{"ts":1,"user":"u1","carousel":"c3","event":"click"}', "item"),
        ("[1, 2]", None),
        ("{not json", None),
    ],
)
def test_parse_errors_name_the_field(line, field):
    with pytest.raises(EventParseError) as info:
        parse_event(line)
    assert info.value.field == field


def test_unknown_fields_ignored():
    e = parse_event('{"ts":1,"user":"u","carousel":"c","event":"view","extra":[1]}')
    assert e == InteractionEvent("u", "c", EventType.VIEW, 1)


@given(
    user=ids,
    carousel=ids,
    item=ids,
    event=st.sampled_from(list(EventType)),
    ts=st.integers(0, 2**53),
    drop_item=st.booleans(),
)
def test_round_trip(user, carousel, item, event, ts, drop_item):
    if drop_item:
        event = EventType.VIEW
    e = InteractionEvent(user, carousel, event, ts, None if drop_item else item)
    line = serialize_event(e)
    assert "\n" not in line
    assert parse_event(line) == e
    assert json.loads(line)["event"] == event.value


def test_file_round_trip(tmp_path):
    events = [InteractionEvent("u", "c", EventType.ATC, n, f"i{n}") for n in range(5)]
    write_events(tmp_path / "e.jsonl", events)
    assert list(read_events(tmp_path / "e.jsonl")) == events
    assert (tmp_path / "e.jsonl").read_bytes().count(b"\n") == 5


def test_carousel_rules():
    c = Carousel("k", ["a", "b"])
    assert c.items == ("a", "b") and len(c) == 2
    with pytest.raises(ValueError, match="no items"):
        Carousel("k", [])
    with pytest.raises(ValueError, match="duplicate"):
        Carousel("k", ["a", "b", "a"])
    with pytest.raises(ValueError):
        Carousel("k k", ["a"])
    with pytest.raises(AttributeError):
        c.items = ("b", "a")


def test_category_lookup():
    cats = CategoryMap({"i42": "dairy", "i43": "dairy"})
    assert category_of(cats, "i42") == "dairy"
    assert category_of(cats, "i43") == "dairy"
    with pytest.raises(UnknownItemError) as info:
        category_of(cats, "i99")
    assert str(info.value) == "unknown item i99" and info.value.item == "i99"
    assert cats.categories() == ["dairy"]


def test_catalog_file(tmp_path):
    path = tmp_path / "cat.jsonl"
    path.write_text(
        '{"item":"a","category":"x"}\n{"item":"b","category":"y"}\n{"item":"a","category":"x"}\n'
    )
    cats = CategoryMap.load(path)
    assert dict(cats) == {"a": "x", "b": "y"}
    cats.dump(tmp_path / "out.jsonl")
    assert dict(CategoryMap.load(tmp_path / "out.jsonl")) == dict(cats)

    path.write_text('{"item":"a","category":"x"}\n{"item":"a","category":"z"}\n')
    with pytest.raises(CatalogError, match="both"):
        CategoryMap.load(path)
