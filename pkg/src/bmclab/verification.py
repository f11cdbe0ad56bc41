"""Exact small-instance oracles and condition checkers."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from ._validation import EnumerationBudgetExceeded, UnsupportedExactError
from .environment import EnvSequence
from .kernels import TraitModel, aux_kernels, aux_n_step_distribution, sample_aux_path
from .seeding import AUX_PATH, replicate_stream, stream
from .simulation import DEFAULT_CAP, Trajectory, simulate
from .traits import Distribution

__all__ = [
    "OracleReport",
    "DoeblinReport",
    "CesaroReport",
    "generation_law",
    "many_to_one_exact",
    "many_to_one_mc",
    "check_doeblin",
    "cesaro_W_check",
]

ENUM_MAX_KMAX = 3
ENUM_MAX_N = 4
ENUM_BUDGET = 200_000


@dataclass
class OracleReport:
    lhs: float
    rhs: float
    abs_err: float
    rel_err: float
    method: str
    tolerance: float
    passed: bool
    usable: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _as_function(f, model):
    """Accept a callable on trait arrays or a vector indexed by the alphabet."""
    if callable(f):
        return lambda x: np.asarray(f(np.asarray(x)), dtype=float)
    vec = np.asarray(f, dtype=float)
    return lambda x: vec[model.index(x)]


def _on_alphabet(f, model):
    return _as_function(f, model)(model.alphabet)


# --- exhaustive enumeration -------------------------------------------------


def _convolve(a, b, budget):
    out = {}
    for za, pa in a.items():
        for zb, pb in b.items():
            z = tuple(x + y for x, y in zip(za, zb))
            out[z] = out.get(z, 0.0) + pa * pb
    if len(out) > budget:
        raise EnumerationBudgetExceeded(f"enumeration needs more than {budget} states")
    return out


def _single_parent_law(model, state, x, budget):
    """Law of the child count vector of one parent with trait ``x``."""
    d = model.alphabet.size
    zero = (0,) * d
    law = {}
    p = state.offspring_pmf
    for k in range(p.size):
        if p[k] == 0:
            continue
        litter = {zero: 1.0}
        for i in range(1, k + 1):
            row = model.marginal(state, k, i)[x]
            child = {tuple(int(j == y) for j in range(d)): float(row[y]) for y in range(d) if row[y] > 0}
            litter = _convolve(litter, child, budget)
        for z, q in litter.items():
            law[z] = law.get(z, 0.0) + p[k] * q
    return law


def generation_law(model: TraitModel, seq: EnvSequence, n: int, x0, budget=ENUM_BUDGET):
    """Exact law of the count vector ``Z_n`` started from one individual at ``x0``.

    Enumerates every litter size and every trait assignment, lumped by the
    resulting count vector (individuals are exchangeable given their trait).
    Returns a dict ``{counts: probability}``.
    """
    if not model.finite or model.joint_sampler is not None:
        raise UnsupportedExactError("enumeration needs a finite model with independent siblings")
    if n > ENUM_MAX_N or any(s.k_max > ENUM_MAX_KMAX for s in seq.states[:n]):
        raise EnumerationBudgetExceeded(
            f"enumeration limited to n <= {ENUM_MAX_N} and k_max <= {ENUM_MAX_KMAX}; use many_to_one_mc"
        )
    d = model.alphabet.size
    law = {tuple(int(j == x0) for j in range(d)): 1.0}
    for k in range(n):
        state = seq[k]
        single = [_single_parent_law(model, state, x, budget) for x in range(d)]
        powers = {}

        def power(x, c):
            if (x, c) not in powers:
                powers[(x, c)] = {(0,) * d: 1.0} if c == 0 else _convolve(power(x, c - 1), single[x], budget)
            return powers[(x, c)]

        new = {}
        for z, pz in law.items():
            acc = {(0,) * d: 1.0}
            for x in range(d):
                if z[x]:
                    acc = _convolve(acc, power(x, z[x]), budget)
            for z2, q in acc.items():
                new[z2] = new.get(z2, 0.0) + pz * q
        if len(new) > budget:
            raise EnumerationBudgetExceeded(f"enumeration needs more than {budget} states")
        law = new
    return law


@lru_cache(maxsize=256)
def _cached_law(model, states, n, x0):
    return generation_law(model, EnvSequence(states), n, x0)


def _sorted_sum(terms):
    # smallest magnitudes first
    return float(sum(sorted(terms, key=abs)))


def _relative(lhs, rhs):
    err = abs(lhs - rhs)
    return err, (err / abs(rhs) if rhs != 0 else err)


def many_to_one_exact(model: TraitModel, seq: EnvSequence, n: int, f, x0, tol=1e-10) -> OracleReport:
    """Check ``E[sum_{|v|=n} f(X(v)) | X(root)=x0] / P_n = (Q_0...Q_{n-1} f)(x0)``.

    The left side comes from :func:`generation_law` (no auxiliary kernel
    involved), the right side from products of the exact auxiliary kernels.
    """
    seq = seq.prefix(n)
    fv = _on_alphabet(f, model)
    law = _cached_law(model, seq.states, n, int(x0))
    P_n = math.exp(seq.log_P(n))
    lhs = _sorted_sum([pz * float(np.dot(z, fv)) for z, pz in law.items()]) / P_n
    y = aux_n_step_distribution(Distribution.point_mass(x0), seq, model, order="forward")
    rhs = float(np.dot(y, fv))
    abs_err, rel_err = _relative(lhs, rhs)
    return OracleReport(
        lhs, rhs, abs_err, rel_err, "enumeration|matrix-product", tol, rel_err <= tol,
        extra={"n": n, "x0": int(x0), "configurations": len(law)},
    )


def many_to_one_mc(
    model: TraitModel,
    seq: EnvSequence,
    n: int,
    f,
    x0,
    replicates: int,
    seed: int = 0,
    cap=DEFAULT_CAP,
    threads: int = 1,
    exact_rhs: bool = True,
) -> OracleReport:
    """Monte Carlo version of the many-to-one identity.

    The left side averages ``sum_v f(X(v)) / P_n`` over simulated trees; the
    right side is exact when the model has exact kernels (and
    ``exact_rhs``), otherwise an average of ``f(Y_n)`` over independently
    sampled auxiliary paths.  Passes when the gap is within three combined
    standard errors.
    """
    seq = seq.prefix(n)
    fn = _as_function(f, model)
    init = Distribution.point_mass(x0)
    logP = seq.log_P(n)

    def one(i):
        traj = simulate(seq, init, model, n=n, cap=cap, rng=replicate_stream(seed, i))
        if traj.truncated:
            return None
        Z = traj.measures[-1]
        return float(np.dot(Z.counts, fn(Z.values))) * math.exp(-logP)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        vals = list(ex.map(one, range(replicates)))
    if any(v is None for v in vals):
        return OracleReport(math.nan, math.nan, math.nan, math.nan, "simulation|-", 3.0, False, usable=False,
                            extra={"reason": "population cap exceeded"})
    vals = np.array(vals)
    lhs = float(vals.mean())
    se_l = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0

    kernels = aux_kernels(seq, model) if n else {}
    if exact_rhs and model.alphabet is not None and all(K.exact is not None for K in kernels.values()):
        y = aux_n_step_distribution(init, seq, model)
        rhs = float(np.dot(y, fn(model.alphabet)))
        se_r = 0.0
        method = "simulation|matrix-product"
    else:
        paths = sample_aux_path(x0, seq, model, stream(seed, AUX_PATH), size=replicates)
        fy = fn(paths[:, -1])
        rhs = float(fy.mean())
        se_r = float(fy.std(ddof=1) / math.sqrt(fy.size)) if fy.size > 1 else 0.0
        method = "simulation|aux-path"
    se = math.hypot(se_l, se_r)
    abs_err, rel_err = _relative(lhs, rhs)
    passed = abs_err <= 3 * se if se > 0 else abs_err <= 1e-12 * max(1.0, abs(rhs))
    return OracleReport(lhs, rhs, abs_err, rel_err, method, 3.0, passed,
                        extra={"se_lhs": se_l, "se_rhs": se_r, "replicates": replicates, "n": n})


# --- Doeblin -----------------------------------------------------------------


@dataclass
class DoeblinReport:
    b: int
    window_ratios: list
    max_ratio: float
    M_bound: float
    passed: bool

    def to_dict(self):
        return asdict(self)


def _max_row_ratio(P):
    # max over x, y, z of P[x, z] / P[y, z]; 0/0 counts as 1, c/0 as inf
    worst = 1.0
    for z in range(P.shape[1]):
        col = P[:, z]
        hi, lo = col.max(), col.min()
        if hi == 0:
            continue
        if lo == 0:
            return math.inf
        worst = max(worst, hi / lo)
    return worst


def check_doeblin(model: TraitModel, seq: EnvSequence, b: int, M_bound: float) -> DoeblinReport:
    """Ratio bound ``P(Y_b in A | x) <= M P(Y_b in A | y)`` on every ``b``-window of ``seq``.

    Singletons ``A`` suffice on a finite alphabet.
    """
    if b < 1 or b > len(seq):
        raise ValueError("need 1 <= b <= len(seq)")
    kernels = aux_kernels(seq, model)
    if any(K.exact is None for K in kernels.values()):
        raise UnsupportedExactError("Doeblin check needs exact kernels")
    ratios = []
    for r in range(len(seq) - b + 1):
        P = kernels[seq[r]].exact
        for s in seq.states[r + 1 : r + b]:
            P = P @ kernels[s].exact
        ratios.append(_max_row_ratio(P))
    worst = max(ratios)
    return DoeblinReport(b, ratios, worst, float(M_bound), worst <= M_bound)


# --- Cesaro -------------------------------------------------------------------


@dataclass
class CesaroReport:
    cesaro: float
    W_n: float
    gap: float

    def to_dict(self):
        return asdict(self)


def cesaro_W_check(traj: Trajectory) -> CesaroReport:
    """Compare ``(1/n) sum_{k=1..n} W_k`` with ``W_n``."""
    if traj.truncated:
        raise ValueError("trajectory is truncated")
    W = traj.W
    n = W.size - 1
    if n < 1:
        raise ValueError("trajectory needs at least one generation")
    ces = float(W[1:].mean())
    return CesaroReport(ces, float(W[-1]), abs(ces - float(W[-1])))
