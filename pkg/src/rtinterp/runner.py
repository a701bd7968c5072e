"""Streaming reconstruction in the units of the incoming data.

Policies are trained on standardized data. :class:`StreamingReconstructor`
standardizes each incoming interval with the statistics stored alongside the
policy and maps emitted sections back to raw units.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import Interval, NegativeHalfWidth, NonMonotoneTimestamps, SplineConfig, ValidationError
from .datagen import Standardization
from .policy import params_from_dict
from .rti import stream_step
from .splinalg import basis_derivative


@dataclass(frozen=True)
class Section:
    index: int
    x_start: float
    x_end: float
    coeffs: np.ndarray  # raw units, local basis at x_start

    def derivatives(self, x, order: int, d: int) -> np.ndarray:
        """Values of ``f, f', ..., f^(order)`` at ``x`` (stacked on the last axis)."""
        return np.stack([basis_derivative(x, self.x_start, d, k) @ self.coeffs for k in range(order + 1)], axis=-1)


def load_policy(path):
    with open(path) as fh:
        doc = json.load(fh)
    return policy_from_doc(doc)


def policy_from_doc(doc: dict):
    cfg, params, extra = params_from_dict(doc)
    st = extra.get("standardization")
    stats = Standardization(float(st["mean"]), float(st["std"])) if st else None
    if stats is not None and not stats.std > 0:
        raise ValidationError("standardization std must be positive")
    return cfg, params, stats


class StreamingReconstructor:
    """Feed intervals one at a time; each call after the first returns the new section."""

    def __init__(self, cfg: SplineConfig, params, stats: Standardization | None = None, e0=None):
        self.cfg = cfg
        self.params = params
        self.stats = stats
        self.e0 = e0
        self._carry = None
        self._count = 0

    @property
    def received(self) -> int:
        return self._count

    @property
    def n_sections(self) -> int:
        return max(self._count - 1, 0)

    def _to_model(self, iv: Interval) -> Interval:
        if self.stats is None:
            return iv
        return Interval(iv.x, (iv.y - self.stats.mean) / self.stats.std, iv.eps / self.stats.std)

    def _to_raw(self, coeffs: np.ndarray) -> np.ndarray:
        if self.stats is None:
            return np.array(coeffs, dtype=float)
        out = self.stats.std * np.asarray(coeffs, dtype=float)
        out[0] += self.stats.mean
        return out

    def push(self, x: float, y: float, eps: float) -> Section | None:
        if eps < 0:
            raise NegativeHalfWidth(self._count)
        iv = Interval(float(x), float(y), float(eps))
        if self._carry is not None and not iv.x > self._carry.last.x:
            raise NonMonotoneTimestamps(self._count)
        x_prev = None if self._carry is None else self._carry.last.x
        coeffs, self._carry = stream_step(self._carry, self._to_model(iv), self.cfg, self.params, self.e0)
        self._count += 1
        if coeffs is None:
            return None
        return Section(self._count - 2, x_prev, iv.x, self._to_raw(coeffs))
