"""Small shared sampling helpers."""

from __future__ import annotations

from typing import Sequence, TypeVar

T = TypeVar("T")


def evenly_spaced(items: Sequence[T], k: int) -> list[T]:
    """At most ``k`` elements of ``items``, evenly spread, order preserved."""
    if k <= 0 or not items:
        return []
    if len(items) <= k:
        return list(items)
    if k == 1:
        return [items[len(items) // 2]]
    positions = [round(i * (len(items) - 1) / (k - 1)) for i in range(k)]
    out, last = [], -1
    for p in positions:
        if p != last:
            out.append(items[p])
            last = p
    return out
