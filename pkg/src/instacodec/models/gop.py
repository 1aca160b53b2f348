"""Group-of-pictures scheduling."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class GopEntry:
    index: int
    kind: str  # "I" or "P"
    reference: int | None = None


def gop_plan(num_frames: int, gop_size: int | float) -> list[GopEntry]:
    """I-frames at multiples of ``gop_size`` (``math.inf`` or 0 for a single GoP); P-frames reference index - 1."""
    if num_frames < 1:
        raise ValueError(f"need at least one frame, got {num_frames}")
    if gop_size == 0:
        gop_size = math.inf
    if gop_size < 1:
        raise ValueError(f"gop size must be >= 1, got {gop_size}")
    plan = []
    for i in range(num_frames):
        if gop_size == math.inf and i == 0 or gop_size != math.inf and i % int(gop_size) == 0:
            plan.append(GopEntry(i, "I"))
        else:
            plan.append(GopEntry(i, "P", i - 1))
    return plan
