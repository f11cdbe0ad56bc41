"""Environment states, environment laws and realised environment sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ._validation import (
    ConfigurationError,
    check_irreducible_aperiodic,
    check_pmf,
    check_stochastic_matrix,
)
from .seeding import ENVIRONMENT, stream

__all__ = [
    "EnvState",
    "EnvironmentSpec",
    "LocationEnvironment",
    "EnvSequence",
    "sample_env_sequence",
    "reverse_env",
    "shift_env",
]


@dataclass(frozen=True, eq=False)
class EnvState:
    """One environment component: an offspring law plus trait parameters.

    States compare by identity, so sequences drawn from the same
    :class:`EnvironmentSpec` share state objects.
    """

    id: int
    offspring_pmf: np.ndarray
    trait_params: Any = None
    mean: float = field(init=False)

    def __post_init__(self):
        p = check_pmf(self.offspring_pmf, name=f"offspring_pmf of state {self.id}")
        p.setflags(write=False)
        object.__setattr__(self, "offspring_pmf", p)
        object.__setattr__(self, "mean", float(np.dot(np.arange(p.size), p)))

    @property
    def k_max(self):
        return int(np.flatnonzero(self.offspring_pmf)[-1])

    @property
    def log_mean(self):
        return math.log(self.mean) if self.mean > 0 else -math.inf

    @property
    def second_moment(self):
        k = np.arange(self.offspring_pmf.size)
        return float(np.dot(k * k, self.offspring_pmf))

    def __repr__(self):
        return f"EnvState(id={self.id}, mean={self.mean:g})"


@dataclass(frozen=True, eq=False)
class LocationEnvironment:
    """Periodic field of step-right probabilities on the integers.

    ``omega[x mod period]`` is the probability of stepping from ``x`` to
    ``x + 1``.  Walkers are confined to ``[-radius, radius]`` by reflection.
    """

    omega: np.ndarray
    radius: int = 200
    delta: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ConfigurationError("omega must be a non-empty 1-d sequence")
        if np.any(w < self.delta) or np.any(w > 1 - self.delta):
            raise ConfigurationError(f"omega values must lie in [{self.delta}, {1 - self.delta}]")
        if self.radius < 1:
            raise ConfigurationError("radius must be >= 1")
        w.setflags(write=False)
        object.__setattr__(self, "omega", w)

    @property
    def period(self):
        return self.omega.size

    def right_prob(self, x):
        """Step-right probability at integer positions ``x`` with reflection."""
        x = np.asarray(x)
        p = self.omega[np.mod(x, self.period)]
        p = np.where(x >= self.radius, 0.0, p)
        return np.where(x <= -self.radius, 1.0, p)


_MODES = ("constant", "iid", "markov")


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    """Law of a stationary ergodic environment over finitely many states.

    Build with :meth:`constant`, :meth:`iid` or :meth:`markov`.
    """

    mode: str
    states: tuple
    weights: np.ndarray | None = None
    transition: np.ndarray | None = None
    location: LocationEnvironment | None = None

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigurationError(f"unknown environment mode {self.mode!r}")
        states = tuple(self.states)
        if not states or not all(isinstance(s, EnvState) for s in states):
            raise ConfigurationError("states must be a non-empty sequence of EnvState")
        object.__setattr__(self, "states", states)
        if self.mode == "constant":
            if len(states) != 1:
                raise ConfigurationError("constant mode takes exactly one state")
            object.__setattr__(self, "weights", np.ones(1))
        else:
            w = check_pmf(self.weights, name="weights")
            if w.size != len(states):
                raise ConfigurationError("weights must have one entry per state")
            object.__setattr__(self, "weights", w)
        if self.mode == "markov":
            T = check_irreducible_aperiodic(self.transition, name="transition")
            if T.shape[0] != len(states):
                raise ConfigurationError("transition must be len(states) x len(states)")
            object.__setattr__(self, "transition", T)

    @classmethod
    def constant(cls, state, location=None):
        return cls("constant", (state,), location=location)

    @classmethod
    def iid(cls, states, weights, location=None):
        return cls("iid", tuple(states), weights=weights, location=location)

    @classmethod
    def markov(cls, states, transition, initial=None, location=None):
        """Finite Markov environment.

        ``initial`` defaults to the stationary vector of ``transition`` so
        that the sequence is stationary.
        """
        T = check_stochastic_matrix(transition, name="transition")
        if initial is None:
            initial = _stationary_vector(T)
        return cls("markov", tuple(states), weights=initial, transition=T, location=location)

    @property
    def reversible_checked(self):
        """Whether reversibility in law is asserted for this mode."""
        return self.mode in ("constant", "iid")


def _stationary_vector(T):
    d = T.shape[0]
    A = np.vstack([T.T - np.eye(d), np.ones(d)])
    b = np.zeros(d + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _cumulative_log_means(states):
    logs = np.array([s.log_mean for s in states], dtype=float)
    return tuple(np.concatenate([[0.0], np.cumsum(logs)]).tolist())


@dataclass(frozen=True)
class EnvSequence:
    """A realised environment ``(xi_0, ..., xi_{n-1})`` with ``log P_k``.

    ``log_cumulative_means[k]`` is ``log(m_0 * ... * m_{k-1})``, accumulated
    in log space so it never overflows.
    """

    states: tuple
    log_cumulative_means: tuple = None
    location: LocationEnvironment | None = None

    def __post_init__(self):
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        if self.log_cumulative_means is None:
            object.__setattr__(self, "log_cumulative_means", _cumulative_log_means(states))
        elif len(self.log_cumulative_means) != len(states) + 1:
            raise ConfigurationError("log_cumulative_means must have length len(states) + 1")

    def __len__(self):
        return len(self.states)

    def __getitem__(self, k):
        return self.states[k]

    def log_P(self, k):
        return self.log_cumulative_means[k]

    @property
    def ids(self):
        return tuple(s.id for s in self.states)

    def prefix(self, n):
        if not 0 <= n <= len(self):
            raise ValueError(f"prefix length {n} out of range [0, {len(self)}]")
        return EnvSequence(self.states[:n], self.log_cumulative_means[: n + 1], self.location)


def sample_env_sequence(spec: EnvironmentSpec, seed: int, n: int, rng=None) -> EnvSequence:
    """Draw ``n`` environment components from ``spec``.

    The draw is a deterministic function of ``(spec, seed, n)``; pass
    ``rng`` to use a specific stream instead.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = stream(seed, ENVIRONMENT)
    S = len(spec.states)
    if spec.mode == "constant":
        idx = np.zeros(n, dtype=int)
    elif spec.mode == "iid":
        idx = rng.choice(S, size=n, p=spec.weights)
    else:
        idx = np.empty(n, dtype=int)
        idx[0] = rng.choice(S, p=spec.weights)
        cum = np.cumsum(spec.transition, axis=1)
        u = rng.random(n)
        for t in range(1, n):
            idx[t] = min(int(np.searchsorted(cum[idx[t - 1]], u[t], side="right")), S - 1)
    return EnvSequence(tuple(spec.states[i] for i in idx), location=spec.location)


def reverse_env(seq: EnvSequence) -> EnvSequence:
    """Time-reverse an environment sequence, recomputing ``log P``."""
    return EnvSequence(seq.states[::-1], location=seq.location)


def shift_env(seq: EnvSequence, r: int) -> EnvSequence:
    """Drop the first ``r`` components; ``log P`` is rebased to 0 at ``r``."""
    if not 0 <= r <= len(seq):
        raise ValueError(f"shift {r} out of range [0, {len(seq)}]")
    return EnvSequence(seq.states[r:], location=seq.location)
