"""Input validation helpers shared across the package."""

from __future__ import annotations

from math import gcd

import numpy as np

__all__ = [
    "ConfigurationError",
    "DegenerateEnvironmentError",
    "UnsupportedExactError",
    "EnumerationBudgetExceeded",
    "EmptyGenerationError",
    "check_pmf",
    "check_stochastic_matrix",
    "check_irreducible_aperiodic",
]

PMF_ATOL = 1e-12


class ConfigurationError(ValueError):
    """Raised when a model, environment or experiment configuration is invalid."""


class DegenerateEnvironmentError(ValueError):
    """Raised when an environment state has zero mean offspring."""


class UnsupportedExactError(TypeError):
    """Raised when an exact (matrix) computation is asked of a sampling-only model."""


class EnumerationBudgetExceeded(RuntimeError):
    """Raised when exhaustive enumeration would exceed its state budget."""


class EmptyGenerationError(ValueError):
    """Raised when a generation has no individual to sample from."""


def check_pmf(p, name="pmf", atol=PMF_ATOL):
    """Validate a finite probability vector and return it as a float array."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigurationError(f"{name} must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ConfigurationError(f"{name} must have finite non-negative entries")
    if abs(arr.sum() - 1.0) > atol:
        raise ConfigurationError(f"{name} must sum to 1 (got {arr.sum()!r})")
    return arr


def check_stochastic_matrix(P, name="matrix", atol=PMF_ATOL):
    """Validate a square row-stochastic matrix and return it as a float array."""
    arr = np.asarray(P, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise ConfigurationError(f"{name} must be a non-empty square matrix")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ConfigurationError(f"{name} must have finite non-negative entries")
    if np.any(np.abs(arr.sum(axis=1) - 1.0) > atol):
        raise ConfigurationError(f"rows of {name} must sum to 1")
    return arr


def _period(adj):
    # BFS levels from node 0; the period is the gcd of level[u] + 1 - level[v]
    # over all edges u -> v of a strongly connected digraph.
    n = adj.shape[0]
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(adj[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    g = 0
    for u, v in zip(*np.nonzero(adj)):
        g = gcd(g, int(level[u] + 1 - level[v]))
    return g


def _reachable(adj, start):
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(adj[u]):
            if v not in seen:
                seen.add(int(v))
                stack.append(int(v))
    return seen


def check_irreducible_aperiodic(P, name="transition"):
    """Reject reducible or periodic transition matrices.

    Irreducibility is checked by forward and backward reachability from
    state 0; aperiodicity by the gcd of cycle lengths on the state digraph.
    """
    arr = check_stochastic_matrix(P, name)
    adj = arr > 0
    n = arr.shape[0]
    if len(_reachable(adj, 0)) != n or len(_reachable(adj.T, 0)) != n:
        raise ConfigurationError(f"{name} is reducible")
    if _period(adj) != 1:
        raise ConfigurationError(f"{name} is periodic")
    return arr
