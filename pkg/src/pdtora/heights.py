"""TORA height algebra.

A height is the 5-tuple ``(tau, oid, r, delta, id)``. The first three fields
form the reference level, ``delta`` orders nodes within a level and ``id``
breaks the remaining ties. ``None`` stands for the Null height (no route) and
sorts above every real height.
"""

from __future__ import annotations

from enum import Enum
from typing import NamedTuple, Optional


class Height(NamedTuple):
    tau: float
    oid: int
    r: int
    delta: int
    id: int

    @property
    def ref_level(self) -> tuple[float, int, int]:
        return (self.tau, self.oid, self.r)

    def __str__(self) -> str:
        return f"({self.tau:g},{self.oid},{self.r},{self.delta},{self.id})"


# None is the Null height throughout the package.
MaybeHeight = Optional[Height]


class Ordering(Enum):
    LESS = -1
    EQUAL = 0
    GREATER = 1


class LinkDirection(Enum):
    DOWNSTREAM = "downstream"
    UPSTREAM = "upstream"
    UNDIRECTED = "undirected"


def destination_height(dst: int) -> Height:
    return Height(0, 0, 0, 0, dst)


def compare_heights(a: MaybeHeight, b: MaybeHeight) -> Ordering:
    if a is None and b is None:
        return Ordering.EQUAL
    if a is None:
        return Ordering.GREATER
    if b is None:
        return Ordering.LESS
    if a == b:
        return Ordering.EQUAL
    return Ordering.LESS if a < b else Ordering.GREATER


def link_direction(own: MaybeHeight, neighbor: MaybeHeight) -> LinkDirection:
    """Direction of the link as seen from the node holding ``own``."""
    if own is None or neighbor is None:
        return LinkDirection.UNDIRECTED
    if neighbor < own:
        return LinkDirection.DOWNSTREAM
    if neighbor > own:
        return LinkDirection.UPSTREAM
    # equal heights only happen for the same node id
    return LinkDirection.UNDIRECTED


def new_reference_level(now_ms: float, self_id: int) -> Height:
    return Height(now_ms, self_id, 0, 0, self_id)


def format_height(h: MaybeHeight) -> str:
    return "null" if h is None else str(h)
