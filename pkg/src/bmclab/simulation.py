"""Generation-by-generation simulation of the population and its traits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import ConfigurationError, EmptyGenerationError, UnsupportedExactError
from .environment import EnvSequence, reverse_env
from .kernels import (
    LocationRWRE,
    SymmetricIndependent,
    TraitModel,
    aux_n_step_distribution,
    sample_litter_sizes,
)
from .traits import Distribution

__all__ = [
    "DEFAULT_CAP",
    "DEFAULT_NODE_BUDGET",
    "PopulationCapExceeded",
    "CountingMeasure",
    "ExplicitTree",
    "Trajectory",
    "CoalescenceHistogram",
    "step_population",
    "simulate",
    "simulate_backward",
    "expected_measure",
    "coalescence_samples",
    "exact_coalescence_tails",
]

DEFAULT_CAP = 10**7
DEFAULT_NODE_BUDGET = 2**22


class PopulationCapExceeded(RuntimeError):
    """Raised by :func:`step_population` when the next generation would be too large."""

    def __init__(self, size, cap):
        super().__init__(f"next generation has {size} individuals, cap is {cap}")
        self.size = size
        self.cap = cap


@dataclass(frozen=True, eq=False)
class CountingMeasure:
    """Occupation measure ``Z = sum_u delta_{X(u)}`` of one generation.

    For binned models ``values`` is the full model alphabet and ``counts``
    may contain zeros; for real-valued traits ``values`` lists the
    individuals' traits (with multiplicity ``counts``).
    """

    values: np.ndarray
    counts: np.ndarray

    @property
    def total(self):
        return int(self.counts.sum())

    def mass(self, A):
        """``Z(A)``, the number of individuals with trait in ``A``."""
        return int(self.counts[A.contains(self.values)].sum())

    def as_dict(self):
        nz = np.flatnonzero(self.counts)
        out = {}
        for v, c in zip(self.values[nz].tolist(), self.counts[nz].tolist()):
            out[v] = out.get(v, 0) + c
        return out

    def individuals(self):
        return np.repeat(self.values, self.counts)


def _measure_from_traits(model, traits):
    if model.alphabet is not None:
        counts = np.bincount(model.index(traits), minlength=model.alphabet.size).astype(np.int64)
        return CountingMeasure(model.alphabet, counts)
    traits = np.asarray(traits, dtype=float)
    return CountingMeasure(traits, np.ones(traits.size, dtype=np.int64))


def _check_cap(size, cap):
    if cap is not None and size > cap:
        raise PopulationCapExceeded(int(size), cap)


def step_population(Z: CountingMeasure, state, model: TraitModel, rng, cap=DEFAULT_CAP, per_parent=False):
    """One generation of reproduction for every individual of ``Z``.

    Binned models use per-bin shortcuts: parents sharing a trait draw their
    litter sizes jointly (multinomial), and child traits are split by
    multinomials over birth ranks.  This is lawful because siblings are
    conditionally independent given ``(k, x)``.  Models with a joint
    sibling sampler, real-valued models and ``per_parent=True`` go through
    one draw per parent.

    Raises :class:`PopulationCapExceeded` before any child trait is drawn
    if the next generation would exceed ``cap``.
    """
    p = state.offspring_pmf
    K = np.arange(p.size)
    binned = model.alphabet is not None and model.joint_sampler is None
    if binned and not per_parent:
        counts = Z.counts
        occ = np.flatnonzero(counts)
        d = model.alphabet.size
        if occ.size == 0:
            return CountingMeasure(model.alphabet, np.zeros(d, dtype=np.int64))
        litters = rng.multinomial(counts[occ], p)
        totals = litters @ K
        _check_cap(totals.sum(), cap)
        if isinstance(model, SymmetricIndependent):
            new = rng.multinomial(totals, model.base[occ]).sum(axis=0)
        elif isinstance(model, LocationRWRE):
            right = rng.binomial(totals, model.location.right_prob(model.alphabet[occ]))
            padded = np.zeros(d + 2, dtype=np.int64)
            np.add.at(padded, occ + 2, right)
            np.add.at(padded, occ, totals - right)
            if padded[0] or padded[-1]:
                raise RuntimeError("walker left the reflecting window")
            new = padded[1:-1]
        else:
            new = np.zeros(d, dtype=np.int64)
            for k in range(1, p.size):
                nk = litters[:, k]
                if p[k] == 0 or not nk.any():
                    continue
                for i in range(1, k + 1):
                    new += rng.multinomial(nk, model.marginal(state, k, i)[occ]).sum(axis=0)
        return CountingMeasure(model.alphabet, new.astype(np.int64))

    parents = Z.individuals()
    ks = sample_litter_sizes(state, parents.size, rng)
    _check_cap(ks.sum(), cap)
    return _measure_from_traits(model, model.children(state, parents, ks, rng))


@dataclass
class ExplicitTree:
    """Genealogy with one record per individual.

    Individuals of generation ``g`` occupy ``offsets[g]:offsets[g+1]``;
    ``parent[j]`` is the index of the parent of ``j`` (``-1`` for the root).
    """

    parent: np.ndarray
    trait: np.ndarray
    offsets: list

    @property
    def generation(self):
        sizes = np.diff(self.offsets)
        return np.repeat(np.arange(sizes.size), sizes)

    def size(self, g):
        return int(self.offsets[g + 1] - self.offsets[g])

    @property
    def depth(self):
        return len(self.offsets) - 2

    def nodes(self, g):
        return np.arange(self.offsets[g], self.offsets[g + 1])

    def ancestors(self, g):
        """Array ``A[h, j]``: ancestor at generation ``h`` of the ``j``-th individual of generation ``g``."""
        cur = self.nodes(g)
        rows = [cur]
        for _ in range(g):
            cur = self.parent[cur]
            rows.append(cur)
        return np.array(rows[::-1])


@dataclass
class Trajectory:
    """Per-generation statistics of one replicate.

    Arrays are indexed by generation ``0..len-1``.  When the population cap
    is hit, generations at or beyond the cap event are absent and
    ``truncated`` is set.
    """

    N: np.ndarray
    log_P: np.ndarray
    env_ids: tuple
    measures: list
    horizon: int
    extinct_at: int | None = None
    truncated: bool = False
    tree: ExplicitTree | None = field(default=None, repr=False)

    @property
    def W(self):
        N = self.N.astype(float)
        with np.errstate(divide="ignore"):
            return np.where(self.N > 0, np.exp(np.log(N) - self.log_P), 0.0)

    @property
    def last_generation(self):
        return self.N.size - 1

    @property
    def survived(self):
        return not self.truncated and self.N[-1] > 0

    def mass(self, A):
        return np.array([Z.mass(A) for Z in self.measures], dtype=np.int64)

    def proportion(self, A):
        """``Z_k(A) / N_k`` per generation (NaN once extinct)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.N > 0, self.mass(A) / np.maximum(self.N, 1), np.nan)


def _root(init: Distribution, model, rng):
    x = init.sample(rng)
    if model.alphabet is None:
        return np.array([float(x)])
    return np.array([x])


def _expected_nodes(seq, n):
    return sum(math.exp(seq.log_P(k)) for k in range(n + 1))


def simulate(
    seq: EnvSequence,
    init: Distribution,
    model: TraitModel,
    n=None,
    mode="aggregated",
    cap=DEFAULT_CAP,
    rng=None,
    node_budget=DEFAULT_NODE_BUDGET,
    per_parent=False,
) -> Trajectory:
    """Simulate generations ``0..n`` started from one individual with trait ~ ``init``.

    Individuals of generation ``k`` reproduce under ``seq[k]``.  In
    ``"explicit"`` mode the returned trajectory carries the full
    :class:`ExplicitTree`.
    """
    n = len(seq) if n is None else n
    if not 0 <= n <= len(seq):
        raise ConfigurationError(f"horizon {n} exceeds environment length {len(seq)}")
    if mode not in ("aggregated", "explicit"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("an explicit rng is required")
    explicit = mode == "explicit"
    if explicit and _expected_nodes(seq, n) > node_budget:
        raise ConfigurationError("explicit mode: expected tree size exceeds the node budget")

    root = _root(init, model, rng)
    Z = _measure_from_traits(model, root)
    N = [1]
    measures = [Z]
    extinct_at = None
    truncated = False
    if explicit:
        parent_parts = [np.array([-1], dtype=np.int64)]
        trait_parts = [root]
        offsets = [0, 1]
        gen_traits = root

    for k in range(n):
        state = seq[k]
        try:
            if explicit:
                ks = sample_litter_sizes(state, gen_traits.size, rng)
                _check_cap(ks.sum(), cap)
                if offsets[-1] + ks.sum() > node_budget:
                    raise PopulationCapExceeded(int(offsets[-1] + ks.sum()), node_budget)
                kids = model.children(state, gen_traits, ks, rng)
                parent_parts.append(np.repeat(np.arange(offsets[-2], offsets[-1]), ks))
                trait_parts.append(kids)
                offsets.append(offsets[-1] + kids.size)
                gen_traits = kids
                Z = _measure_from_traits(model, kids)
            else:
                Z = step_population(Z, state, model, rng, cap=cap, per_parent=per_parent)
        except PopulationCapExceeded:
            truncated = True
            break
        N.append(Z.total)
        measures.append(Z)
        if Z.total == 0 and extinct_at is None:
            extinct_at = k + 1

    L = len(N)
    traj = Trajectory(
        N=np.array(N, dtype=np.int64),
        log_P=np.array(seq.log_cumulative_means[:L]),
        env_ids=seq.ids[:n],
        measures=measures,
        horizon=n,
        extinct_at=extinct_at,
        truncated=truncated,
    )
    if explicit:
        traj.tree = ExplicitTree(
            parent=np.concatenate(parent_parts),
            trait=np.concatenate(trait_parts),
            offsets=offsets[:L + 1],
        )
    return traj


def simulate_backward(seq: EnvSequence, init: Distribution, model: TraitModel, n=None, **kwargs) -> Trajectory:
    """Simulate under the reversed environment ``(xi_{n-1}, ..., xi_0)``.

    Generation ``r`` reproduces under ``xi_{n-r-1}``; ``W_k`` is normalised
    by the mean population of the reversed environment.
    """
    n = len(seq) if n is None else n
    return simulate(reverse_env(seq.prefix(n)), init, model, n=n, **kwargs)


def expected_measure(init: Distribution, seq: EnvSequence, model: TraitModel, n=None):
    """Exact first moment ``E Z_n = P_n * (init Q_0 ... Q_{n-1})``.

    Returns ``(log P_n, Distribution)`` with the normalised measure over the
    model alphabet.
    """
    n = len(seq) if n is None else n
    if not model.finite and not isinstance(model, LocationRWRE):
        raise UnsupportedExactError(f"{type(model).__name__} has no exact first moment")
    v = aux_n_step_distribution(init, seq.prefix(n), model, order="forward")
    v = np.clip(v, 0.0, None)
    return seq.log_P(n), Distribution(model.alphabet, v / v.sum())


@dataclass(frozen=True)
class CoalescenceHistogram:
    """Empirical law of the coalescence generation ``|U_n ^ V_n|``.

    ``pmf[g]`` is the fraction of sampled pairs whose nearest common
    ancestor lives in generation ``g`` (``g = n`` when ``U = V``).
    """

    pmf: np.ndarray
    pairs: int

    @property
    def n(self):
        return self.pmf.size - 1

    def tail(self, K):
        """``P(|U ^ V| >= K)``."""
        return float(self.pmf[K:].sum()) if K <= self.n else 0.0

    def tails(self):
        return np.array([self.tail(K) for K in range(self.n + 1)])

    def std_errors(self):
        t = self.tails()
        return np.sqrt(t * (1 - t) / self.pairs)


def coalescence_samples(tree: ExplicitTree, n: int, pairs: int, rng) -> CoalescenceHistogram:
    """Sample ``pairs`` independent uniform pairs (with replacement) from generation ``n``."""
    if n > tree.depth or tree.size(n) == 0:
        raise EmptyGenerationError(f"generation {n} is empty")
    anc = tree.ancestors(n)
    Nn = tree.size(n)
    u = rng.integers(0, Nn, size=pairs)
    v = rng.integers(0, Nn, size=pairs)
    depth = (anc[:, u] == anc[:, v]).sum(axis=0) - 1
    pmf = np.bincount(depth, minlength=n + 1) / pairs
    return CoalescenceHistogram(pmf, pairs)


def exact_coalescence_tails(tree: ExplicitTree, n: int):
    """Exact ``P(|U_n ^ V_n| >= K)`` for ``K = 0..n`` over all ordered pairs.

    Two individuals coalesce at or after generation ``K`` iff they share
    their generation-``K`` ancestor, so the tail is ``sum_a (n_a / N_n)^2``
    over generation-``K`` ancestors ``a`` with ``n_a`` descendants.
    """
    if n > tree.depth or tree.size(n) == 0:
        raise EmptyGenerationError(f"generation {n} is empty")
    anc = tree.ancestors(n)
    Nn = tree.size(n)
    out = np.empty(n + 1)
    for K in range(n + 1):
        sizes = np.unique(anc[K], return_counts=True)[1].astype(float)
        out[K] = float(np.sum((sizes / Nn) ** 2))
    return out
