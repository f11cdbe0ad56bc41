"""Trait transition kernels and the auxiliary (lineage) kernel.

A trait model describes how the traits of the ``k`` children of an
individual with trait ``x`` are drawn in a given environment state.  The
auxiliary kernel of a state averages the one-child marginals over litter
size and birth rank, weighted by ``p_k / m``::

    Q(x, .) = (1/m) * sum_k p_k * sum_{i=1..k} P^(k,i)(x, .)

It is the transition kernel of the trait along a typical lineage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from ._validation import (
    ConfigurationError,
    DegenerateEnvironmentError,
    UnsupportedExactError,
    check_stochastic_matrix,
)
from .environment import EnvSequence, EnvState, LocationEnvironment
from .traits import Distribution

__all__ = [
    "TraitModel",
    "SymmetricIndependent",
    "FiniteStateJoint",
    "IidIncrements",
    "LocationRWRE",
    "AuxKernel",
    "build_aux_kernel",
    "aux_kernels",
    "aux_n_step_distribution",
    "sample_aux_path",
    "sample_offspring",
    "sample_litter_sizes",
]


def _draw_rows(cum_rows, rng):
    """Inverse-CDF draw of one category per row of cumulative probabilities."""
    u = rng.random(cum_rows.shape[0])
    idx = (u[:, None] >= cum_rows).sum(axis=1)
    return np.minimum(idx, cum_rows.shape[1] - 1)


def sample_litter_sizes(state: EnvState, size, rng):
    """Draw ``size`` i.i.d. litter sizes from the offspring law of ``state``."""
    p = state.offspring_pmf
    return rng.choice(p.size, size=size, p=p)


class TraitModel:
    """Base class for trait models.

    Subclasses set ``finite`` (finite trait alphabet, exact kernels and
    exhaustive enumeration available) and ``alphabet`` (trait values that
    counting measures are binned on; ``None`` for real-valued traits).
    """

    finite = False
    alphabet = None
    joint_sampler = None

    def validate_state(self, state: EnvState):
        pass

    def index(self, values):
        """Map trait values to positions in :attr:`alphabet`."""
        return np.asarray(values, dtype=np.int64)

    def marginal(self, state, k, i):
        """Row-stochastic matrix of the ``i``-th of ``k`` children."""
        raise UnsupportedExactError(f"{type(self).__name__} has no finite marginals")

    def aux_exact(self, state):
        if not self.finite:
            return None
        d = self.alphabet.size
        p = state.offspring_pmf
        Q = np.zeros((d, d))
        for k in range(1, p.size):
            if p[k] == 0:
                continue
            for i in range(1, k + 1):
                Q += p[k] * self.marginal(state, k, i)
        return Q / state.mean

    def aux_sample(self, state, x, rng):
        """Size-biased lineage step: ``k ~ k p_k / m``, ``i ~ U{1..k}``, child of rank ``i``."""
        x = np.asarray(x)
        p = state.offspring_pmf
        ks_all = np.arange(p.size)
        sb = ks_all * p / state.mean
        ks = rng.choice(p.size, size=x.shape[0], p=sb / sb.sum())
        ranks = 1 + np.floor(rng.random(x.shape[0]) * ks).astype(np.int64)
        return self._draw_marginals(state, x, ks, ranks, rng)

    def _draw_marginals(self, state, x, ks, ranks, rng):
        out = np.empty(x.shape[0], dtype=np.int64)
        keys = ks * (ks.max(initial=0) + 1) + ranks
        for key in np.unique(keys):
            sel = keys == key
            k, i = int(ks[sel][0]), int(ranks[sel][0])
            cum = np.cumsum(self.marginal(state, k, i), axis=1)
            out[sel] = _draw_rows(cum[self.index(x[sel])], rng)
        return self.alphabet[out] if self.alphabet is not None else out

    def children(self, state, x, ks, rng):
        """Traits of all children of parents with traits ``x`` and litter sizes ``ks``.

        Children are listed parent by parent, in birth-rank order.
        """
        x = np.asarray(x)
        ks = np.asarray(ks, dtype=np.int64)
        if self.joint_sampler is not None:
            parts = [np.asarray(self.joint_sampler(state, int(k), xv, rng)) for xv, k in zip(x, ks) if k > 0]
            return np.concatenate(parts) if parts else x[:0]
        xr = np.repeat(x, ks)
        kr = np.repeat(ks, ks)
        starts = np.cumsum(ks) - ks
        ranks = np.arange(xr.size) - np.repeat(starts, ks) + 1
        if xr.size == 0:
            return xr
        return self._draw_marginals(state, xr, kr, ranks, rng)


class SymmetricIndependent(TraitModel):
    """Every child independently draws its trait from ``base[x]``."""

    finite = True

    def __init__(self, base):
        self.base = check_stochastic_matrix(base, name="base kernel")
        self.alphabet = np.arange(self.base.shape[0])

    def marginal(self, state, k, i):
        return self.base

    def children(self, state, x, ks, rng):
        xr = np.repeat(np.asarray(x), np.asarray(ks, dtype=np.int64))
        return _draw_rows(np.cumsum(self.base, axis=1)[xr], rng)


class FiniteStateJoint(TraitModel):
    """Per-(k, i) marginal matrices over a finite alphabet, read from the state.

    ``state.trait_params["kernels"]`` maps ``(k, i)`` to the transition
    matrix of the ``i``-th of ``k`` children.  Siblings are conditionally
    independent unless ``joint_sampler(state, k, x, rng)`` is given, in which
    case it must return the ``k`` sibling traits and respect the marginals.
    """

    finite = True

    def __init__(self, n_traits, joint_sampler=None):
        self.n_traits = int(n_traits)
        self.alphabet = np.arange(self.n_traits)
        self.joint_sampler = joint_sampler

    def validate_state(self, state):
        kernels = (state.trait_params or {}).get("kernels")
        if not isinstance(kernels, Mapping):
            raise ConfigurationError(f"state {state.id}: trait_params['kernels'] missing")
        p = state.offspring_pmf
        for k in range(1, p.size):
            if p[k] == 0:
                continue
            for i in range(1, k + 1):
                if (k, i) not in kernels:
                    raise ConfigurationError(f"state {state.id}: no kernel for (k={k}, i={i})")
                M = check_stochastic_matrix(kernels[(k, i)], name=f"kernel ({k},{i})")
                if M.shape[0] != self.n_traits:
                    raise ConfigurationError(f"kernel ({k},{i}) has wrong size")

    def marginal(self, state, k, i):
        return np.asarray(state.trait_params["kernels"][(k, i)], dtype=float)


class IidIncrements(TraitModel):
    """Real traits; each child is displaced from its parent by an i.i.d. increment.

    ``state.trait_params`` is ``{"dist": "normal", "mu": m, "sigma2": v}`` or
    ``{"dist": "discrete", "values": [...], "probs": [...]}``.  The one-child
    marginal does not depend on ``(k, i)``, so the auxiliary kernel is the
    increment law itself.
    """

    def validate_state(self, state):
        tp = state.trait_params or {}
        dist = tp.get("dist")
        if dist == "normal":
            if float(tp.get("sigma2", -1)) < 0:
                raise ConfigurationError(f"state {state.id}: sigma2 must be >= 0")
        elif dist == "discrete":
            vals = np.asarray(tp.get("values", []), dtype=float)
            probs = np.asarray(tp.get("probs", []), dtype=float)
            if vals.size == 0 or vals.shape != probs.shape or abs(probs.sum() - 1) > 1e-12 or np.any(probs < 0):
                raise ConfigurationError(f"state {state.id}: bad discrete increment law")
        else:
            raise ConfigurationError(f"state {state.id}: unknown increment law {dist!r}")

    @staticmethod
    def moments(state):
        """Mean and variance of the increment law of ``state``."""
        tp = state.trait_params
        if tp["dist"] == "normal":
            return float(tp["mu"]), float(tp["sigma2"])
        vals = np.asarray(tp["values"], dtype=float)
        probs = np.asarray(tp["probs"], dtype=float)
        mu = float(np.dot(vals, probs))
        return mu, float(np.dot((vals - mu) ** 2, probs))

    @staticmethod
    def increments(state, size, rng):
        tp = state.trait_params
        if tp["dist"] == "normal":
            return rng.normal(float(tp["mu"]), np.sqrt(float(tp["sigma2"])), size=size)
        vals = np.asarray(tp["values"], dtype=float)
        return vals[rng.choice(vals.size, size=size, p=np.asarray(tp["probs"], dtype=float))]

    def aux_sample(self, state, x, rng):
        x = np.asarray(x, dtype=float)
        return x + self.increments(state, x.shape[0], rng)

    def children(self, state, x, ks, rng):
        xr = np.repeat(np.asarray(x, dtype=float), np.asarray(ks, dtype=np.int64))
        return xr + self.increments(state, xr.size, rng)


class LocationRWRE(TraitModel):
    """Integer traits; every child steps to ``x + 1`` w.p. ``omega_x``, else ``x - 1``.

    The kernel only depends on the location environment, never on the time
    environment.  Traits are binned on ``[-radius, radius]``.
    """

    def __init__(self, location: LocationEnvironment):
        self.location = location
        R = location.radius
        self.alphabet = np.arange(-R, R + 1)

    def index(self, values):
        return np.asarray(values, dtype=np.int64) + self.location.radius

    def aux_exact(self, state):
        a = self.alphabet
        right = self.location.right_prob(a)
        Q = np.zeros((a.size, a.size))
        i = np.arange(a.size)
        up = i < a.size - 1
        Q[i[up], i[up] + 1] = right[up]
        Q[i[1:], i[1:] - 1] = 1.0 - right[1:]
        return Q

    def aux_sample(self, state, x, rng):
        x = np.asarray(x, dtype=np.int64)
        step = np.where(rng.random(x.shape[0]) < self.location.right_prob(x), 1, -1)
        return x + step

    def children(self, state, x, ks, rng):
        xr = np.repeat(np.asarray(x, dtype=np.int64), np.asarray(ks, dtype=np.int64))
        return self.aux_sample(state, xr, rng)


@dataclass(frozen=True, eq=False)
class AuxKernel:
    """Auxiliary kernel of one environment state.

    ``exact`` is the row-stochastic matrix over the model alphabet when it
    exists; ``sampler(x, rng)`` draws one lineage step from each trait in
    the array ``x``.
    """

    exact: np.ndarray | None
    sampler: Callable


def build_aux_kernel(state: EnvState, model: TraitModel) -> AuxKernel:
    """Build the auxiliary kernel of ``state`` under ``model``."""
    if state.mean <= 0:
        raise DegenerateEnvironmentError(f"state {state.id} has zero mean offspring")
    model.validate_state(state)
    exact = model.aux_exact(state)

    def sampler(x, rng):
        return model.aux_sample(state, np.asarray(x), rng)

    return AuxKernel(exact, sampler)


def aux_kernels(seq: EnvSequence, model: TraitModel):
    """Auxiliary kernels of every distinct state of ``seq``, keyed by state."""
    out = {}
    for s in seq.states:
        if s not in out:
            out[s] = build_aux_kernel(s, model)
    return out


def _as_vector(init: Distribution, model):
    if model.alphabet is None:
        raise UnsupportedExactError("model has no finite alphabet")
    v = np.zeros(model.alphabet.size)
    np.add.at(v, model.index(init.support), init.masses)
    return v


def aux_n_step_distribution(init: Distribution, seq: EnvSequence, model: TraitModel, order="forward"):
    """Exact law of ``Y_n`` for the auxiliary chain started from ``init``.

    ``order="forward"`` applies ``Q_0 Q_1 ... Q_{n-1}``; ``"backward"``
    applies ``Q_{n-1} ... Q_0``, the law under the time-reversed environment.
    Returns the probability vector over ``model.alphabet``.
    """
    if order not in ("forward", "backward"):
        raise ValueError("order must be 'forward' or 'backward'")
    kernels = aux_kernels(seq, model)
    if any(K.exact is None for K in kernels.values()):
        raise UnsupportedExactError(f"{type(model).__name__} has no exact kernel")
    v = _as_vector(init, model)
    states = seq.states if order == "forward" else seq.states[::-1]
    for s in states:
        v = v @ kernels[s].exact
    return v


def aux_marginal_path(init: Distribution, seq: EnvSequence, model: TraitModel):
    """Laws of ``Y_0, ..., Y_n`` under the forward environment, as rows."""
    kernels = aux_kernels(seq, model)
    v = _as_vector(init, model)
    rows = [v]
    for s in seq.states:
        v = v @ kernels[s].exact
        rows.append(v)
    return np.array(rows)


def sample_aux_path(x0, seq: EnvSequence, model: TraitModel, rng, size=None):
    """Sample auxiliary-chain paths ``Y_0 = x0, ..., Y_n``.

    Returns shape ``(n + 1,)`` or ``(size, n + 1)`` when ``size`` is given.
    """
    m = 1 if size is None else int(size)
    kernels = aux_kernels(seq, model)
    cur = np.full(m, x0)
    path = [cur]
    for s in seq.states:
        cur = kernels[s].sampler(cur, rng)
        path.append(cur)
    out = np.stack(path, axis=1)
    return out[0] if size is None else out


def sample_offspring(state: EnvState, model: TraitModel, x, rng):
    """Draw the litter size and the children's traits for one parent."""
    k = int(sample_litter_sizes(state, None, rng))
    kids = model.children(state, np.array([x]), np.array([k]), rng)
    return k, kids
