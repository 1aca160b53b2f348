"""Adam optimizer over named :class:`~instacodec.tensor.Tensor` parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class MissingGradientError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    lr: float
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: OptimizerState) -> None:
    """One bias-corrected Adam update in place; clears gradients afterwards."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise MissingGradientError(f"parameter {missing[0]!r} has no gradient")
    state.step += 1
    t = state.step
    bc1 = 1.0 - BETA1**t
    bc2 = 1.0 - BETA2**t
    for name, p in params.items():
        g = p.grad.astype(np.float64)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros(p.shape, dtype=np.float64)
            v = np.zeros(p.shape, dtype=np.float64)
        m = BETA1 * m + (1.0 - BETA1) * g
        v = BETA2 * v + (1.0 - BETA2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + EPS)
        p.data = (p.data - update).astype(p.data.dtype)
        p.grad = None
