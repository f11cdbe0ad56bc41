"""Trait distributions and target sets of traits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import ConfigurationError

__all__ = ["Distribution", "Bins", "HalfLine", "Interval", "parse_target"]

DIST_ATOL = 1e-10


@dataclass(frozen=True, eq=False)
class Distribution:
    """Finite weighted point set on the trait space.

    Used both for probability vectors over a finite alphabet
    (``support = arange(d)``) and for point masses or weighted clouds of
    real-valued traits.
    """

    support: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support)
        m = np.asarray(self.masses, dtype=float)
        if s.ndim != 1 or s.shape != m.shape or s.size == 0:
            raise ConfigurationError("support and masses must be equal-length 1-d arrays")
        if np.any(m < 0) or abs(m.sum() - 1.0) > DIST_ATOL:
            raise ConfigurationError("masses must be non-negative and sum to 1")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "masses", m)

    @classmethod
    def point_mass(cls, x):
        return cls(np.array([x]), np.array([1.0]))

    @classmethod
    def on_alphabet(cls, masses):
        m = np.asarray(masses, dtype=float)
        return cls(np.arange(m.size), m)

    def prob(self, A):
        return float(self.masses[A.contains(self.support)].sum())

    def sample(self, rng, size=None):
        idx = rng.choice(self.support.size, size=size, p=self.masses)
        return self.support[idx]

    def __repr__(self):
        return f"Distribution(support={self.support.tolist()}, masses={self.masses.tolist()})"


@dataclass(frozen=True)
class Bins:
    """A finite set of trait values."""

    values: tuple

    def contains(self, x):
        return np.isin(np.asarray(x), np.asarray(self.values))

    @property
    def label(self):
        return "bins_" + "_".join(str(v) for v in self.values)


@dataclass(frozen=True)
class HalfLine:
    """The half-line ``(-inf, upper]``."""

    upper: float

    def contains(self, x):
        return np.asarray(x) <= self.upper

    @property
    def label(self):
        return f"le_{self.upper:g}"


@dataclass(frozen=True)
class Interval:
    """The interval ``(lower, upper]``."""

    lower: float
    upper: float

    def contains(self, x):
        x = np.asarray(x)
        return (x > self.lower) & (x <= self.upper)

    @property
    def label(self):
        return f"in_{self.lower:g}_{self.upper:g}"


def parse_target(spec):
    """Build a target set from its config form.

    A list of values is a :class:`Bins`; ``{"le": u}`` a :class:`HalfLine`;
    ``{"in": [a, b]}`` an :class:`Interval`.
    """
    if isinstance(spec, (Bins, HalfLine, Interval)):
        return spec
    if isinstance(spec, (list, tuple)):
        return Bins(tuple(spec))
    if isinstance(spec, (int, np.integer)):
        return Bins((int(spec),))
    if isinstance(spec, dict) and set(spec) == {"le"}:
        return HalfLine(float(spec["le"]))
    if isinstance(spec, dict) and set(spec) == {"in"} and len(spec["in"]) == 2:
        a, b = spec["in"]
        if not a < b:
            raise ConfigurationError("interval needs lower < upper")
        return Interval(float(a), float(b))
    raise ConfigurationError(f"cannot interpret target set {spec!r}")


def normal_cdf(y):
    return 0.5 * math.erfc(-y / math.sqrt(2.0))
