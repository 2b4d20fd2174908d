"""Paths, change events and the scenario JSON schema."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import ConfigError, EmptyPathDeletion, PositionOutOfRange
from .field import FieldCtx


@dataclass(frozen=True)
class Path:
    """Router IDs ``r_1 .. r_d`` in traversal order; the destination is not included."""

    nodes: tuple

    def __init__(self, nodes: Sequence[int]):
        nodes = tuple(int(n) for n in nodes)
        if not nodes:
            raise ValueError("a path needs at least one node")
        if any(n < 0 for n in nodes):
            raise ValueError("node IDs must be non-negative field residues")
        object.__setattr__(self, "nodes", nodes)

    @property
    def d(self) -> int:
        return len(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def __getitem__(self, i):
        return self.nodes[i]

    def r(self, i: int) -> int:
        """1-based accessor matching the ``r_i`` convention."""
        if not 1 <= i <= self.d:
            raise IndexError(i)
        return self.nodes[i - 1]

    def check_field(self, ctx: FieldCtx) -> None:
        if any(n >= ctx.p for n in self.nodes):
            raise ValueError(f"node ID outside GF({ctx.p})")

    def __repr__(self):
        return f"Path{self.nodes}"


class ChangeKind(str, enum.Enum):
    ADDED = "add"
    DELETED = "delete"
    NO_CHANGE = "none"


@dataclass(frozen=True)
class ChangeEvent:
    kind: ChangeKind
    position: Optional[int] = None
    id: Optional[int] = None

    @classmethod
    def added(cls, position: int, node_id: int) -> "ChangeEvent":
        return cls(ChangeKind.ADDED, position, node_id)

    @classmethod
    def deleted(cls, position: int, node_id: Optional[int] = None) -> "ChangeEvent":
        return cls(ChangeKind.DELETED, position, node_id)

    @classmethod
    def none(cls) -> "ChangeEvent":
        return cls(ChangeKind.NO_CHANGE)

    def __str__(self):
        if self.kind is ChangeKind.NO_CHANGE:
            return "none"
        return f"{self.kind.value}@{self.position}:{self.id}"


def apply_change(path: Path, event: ChangeEvent) -> Path:
    """Return the path after ``event``; ``path`` itself is left untouched.

    Addition position ``m`` inserts before the current ``r_m`` (``m = d+1``
    appends after ``r_d``).  Deletion position ``m`` removes ``r_m``.
    """
    d = path.d
    nodes = list(path.nodes)
    if event.kind is ChangeKind.NO_CHANGE:
        return path
    m = event.position
    if event.kind is ChangeKind.ADDED:
        if m is None or not 1 <= m <= d + 1:
            raise PositionOutOfRange(f"addition position {m} outside 1..{d + 1}")
        if event.id is None:
            raise ValueError("addition needs the new node ID")
        nodes.insert(m - 1, int(event.id))
        return Path(nodes)
    if m is None or not 1 <= m <= d:
        raise PositionOutOfRange(f"deletion position {m} outside 1..{d}")
    if d == 1:
        raise EmptyPathDeletion("cannot delete the only node of a path")
    del nodes[m - 1]
    return Path(nodes)


def complete_event(path: Path, event: ChangeEvent) -> ChangeEvent:
    """Fill in the removed ID of a deletion event from the path."""
    if event.kind is ChangeKind.DELETED and event.id is None:
        return ChangeEvent.deleted(event.position, path.r(event.position))
    return event


# -- scenario JSON ------------------------------------------------------------

@dataclass(frozen=True)
class TimedEvent:
    at_packet: int
    event: ChangeEvent


def parse_event(obj: dict, where: str = "event") -> TimedEvent:
    try:
        kind = ChangeKind(obj["kind"])
        at = int(obj["at_packet"])
        position = obj.get("position")
        node_id = obj.get("id")
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: malformed event {obj!r} ({exc})") from None
    if kind is ChangeKind.NO_CHANGE:
        raise ConfigError(f"{where}: scenario events must be 'add' or 'delete'")
    if position is None:
        raise ConfigError(f"{where}: missing 'position'")
    if kind is ChangeKind.ADDED and node_id is None:
        raise ConfigError(f"{where}: an 'add' event needs an 'id'")
    ev = ChangeEvent(kind, int(position), None if node_id is None else int(node_id))
    return TimedEvent(at, ev)


def load_scenario_json(text: str) -> dict:
    """Parse the scenario document, reporting JSON syntax errors with their line."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    for key in ("p", "path"):
        if key not in doc:
            raise ConfigError(f"scenario is missing required key {key!r}")
    return doc
