"""Domain types shared across the package.

All types are immutable after construction and validate their invariants
eagerly, so an instance that exists is an instance that is valid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_ORDER = 8


class RtiError(Exception):
    """Base class for all errors raised by the package."""


class ValidationError(RtiError, ValueError):
    pass


class NonMonotoneTimestamps(ValidationError):
    def __init__(self, index: int):
        super().__init__(f"timestamp at index {index} is not strictly greater than its predecessor")
        self.index = index


class NegativeHalfWidth(ValidationError):
    def __init__(self, index: int):
        super().__init__(f"interval at index {index} has a negative half-width")
        self.index = index


class NumericalError(RtiError, ArithmeticError):
    """Raised when a computation produces non-finite values or a factorization fails."""


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Interval:
    x: float
    y: float
    eps: float

    def __post_init__(self):
        if not self.eps >= 0:
            raise NegativeHalfWidth(0)


@dataclass(frozen=True)
class IntervalSequence:
    """Intervals ordered by strictly increasing timestamp."""

    items: tuple[Interval, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        validate_sequence(self)

    @classmethod
    def from_arrays(cls, x, y, eps) -> "IntervalSequence":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        eps = np.broadcast_to(np.asarray(eps, dtype=float), x.shape)
        if y.shape != x.shape:
            raise ValidationError("x and y must have the same length")
        # bypass per-item eps check so the index reported is the sequence index
        for i, e in enumerate(eps):
            if not e >= 0:
                raise NegativeHalfWidth(i)
        return cls(tuple(Interval(float(a), float(b), float(c)) for a, b, c in zip(x, y, eps)))

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def __iter__(self):
        return iter(self.items)

    @property
    def x(self) -> np.ndarray:
        return np.array([it.x for it in self.items])

    @property
    def y(self) -> np.ndarray:
        return np.array([it.y for it in self.items])

    @property
    def eps(self) -> np.ndarray:
        return np.array([it.eps for it in self.items])


def validate_sequence(seq: Iterable) -> None:
    """Check ordering and half-widths of a sequence of intervals.

    Accepts an ``IntervalSequence`` or any iterable of ``Interval`` or
    ``(x, y, eps)`` triples. Raises ``NonMonotoneTimestamps`` or
    ``NegativeHalfWidth`` with the offending index; returns None when valid.
    """
    items = seq.items if isinstance(seq, IntervalSequence) else seq
    prev = None
    for i, it in enumerate(items):
        x, _, eps = (it.x, it.y, it.eps) if isinstance(it, Interval) else it
        if not eps >= 0:
            raise NegativeHalfWidth(i)
        if prev is not None and not x > prev:
            raise NonMonotoneTimestamps(i)
        prev = x


@dataclass(frozen=True)
class SplineConfig:
    """Spline order ``d`` and smoothness degree ``phi`` (``1 <= phi < d``)."""

    d: int
    phi: int

    def __post_init__(self):
        if int(self.d) != self.d or int(self.phi) != self.phi:
            raise ValidationError("d and phi must be integers")
        if not 1 <= self.phi < self.d:
            raise ValidationError(f"need 1 <= phi < d, got d={self.d}, phi={self.phi}")
        if self.d > MAX_ORDER:
            raise ValidationError(f"spline order above {MAX_ORDER} is not supported")

    @property
    def n_coeffs(self) -> int:
        return self.d + 1

    @property
    def n_free(self) -> int:
        """Degrees of freedom per section left after continuity (``d - phi``)."""
        return self.d - self.phi

    @property
    def n_cont(self) -> int:
        return self.phi + 1


@dataclass(frozen=True)
class Action:
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _frozen_array(self.coeffs))
        if self.coeffs.ndim != 1:
            raise ValidationError("action coefficients must be a vector")

    def check(self, cfg: SplineConfig) -> "Action":
        if len(self.coeffs) != cfg.n_coeffs:
            raise ValidationError(f"action has {len(self.coeffs)} coefficients, expected {cfg.n_coeffs}")
        return self


@dataclass(frozen=True)
class SignalState:
    x_prev: float
    e: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "e", _frozen_array(self.e))


@dataclass(frozen=True)
class RtiState:
    interval: Interval
    sigma: SignalState

    def __post_init__(self):
        if not self.interval.x > self.sigma.x_prev:
            raise NonMonotoneTimestamps(1)

    @property
    def u(self) -> float:
        return self.interval.x - self.sigma.x_prev

    @property
    def e(self) -> np.ndarray:
        return self.sigma.e


@dataclass(frozen=True)
class Spline:
    """Piecewise polynomial in the local monomial basis of each section.

    Section ``t`` (0-based here) covers ``(knots[t], knots[t+1]]`` and is
    ``sum_i sections[t][i] * (x - knots[t])**i``.
    """

    config: SplineConfig
    knots: np.ndarray
    sections: tuple[np.ndarray, ...]
    e0: np.ndarray = field(default=None)

    def __post_init__(self):
        knots = _frozen_array(self.knots)
        secs = tuple(_frozen_array(s) for s in self.sections)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "sections", secs)
        cfg = self.config
        if knots.ndim != 1 or len(knots) < 2:
            raise ValidationError("a spline needs at least two knots")
        bad = np.flatnonzero(np.diff(knots) <= 0)
        if len(bad):
            raise NonMonotoneTimestamps(int(bad[0]) + 1)
        if len(secs) != len(knots) - 1:
            raise ValidationError("number of sections must equal number of knots minus one")
        for s in secs:
            if s.shape != (cfg.n_coeffs,):
                raise ValidationError(f"section has shape {s.shape}, expected ({cfg.n_coeffs},)")
        e0 = secs[0][: cfg.n_cont] if self.e0 is None else self.e0
        object.__setattr__(self, "e0", _frozen_array(e0))
        if self.e0.shape != (cfg.n_cont,):
            raise ValidationError("e0 must have phi+1 entries")
        self._check_continuity()

    def _check_continuity(self, atol: float = 1e-9) -> None:
        from .splinalg import continuity_vector

        if not np.allclose(self.sections[0][: self.config.n_cont], self.e0, rtol=0, atol=atol):
            raise ValidationError("first section does not match e0")
        u = np.diff(self.knots)
        for t in range(1, len(self.sections)):
            e = continuity_vector(self.sections[t - 1], u[t - 1], self.config)
            got = self.sections[t][: self.config.n_cont]
            if np.any(np.abs(got - e) > atol * np.maximum(1.0, np.abs(e))):
                raise ValidationError(f"section {t} violates continuity")

    @property
    def n_sections(self) -> int:
        return len(self.sections)

    def coefficients(self) -> np.ndarray:
        return np.stack(self.sections)


def as_sequence(seq) -> IntervalSequence:
    if isinstance(seq, IntervalSequence):
        return seq
    seq = list(seq)
    validate_sequence(seq)
    items = [it if isinstance(it, Interval) else Interval(*map(float, it)) for it in seq]
    return IntervalSequence(tuple(items))


def sequence_arrays(seq: Sequence) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    seq = as_sequence(seq)
    return seq.x, seq.y, seq.eps
