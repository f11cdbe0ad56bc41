"""Ready-made model instances with their analytic targets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import ConfigurationError, check_stochastic_matrix
from .environment import EnvironmentSpec, EnvSequence, EnvState, LocationEnvironment
from .kernels import (
    FiniteStateJoint,
    IidIncrements,
    LocationRWRE,
    SymmetricIndependent,
    TraitModel,
    build_aux_kernel,
)
from .traits import Distribution

__all__ = ["GalleryEntry", "make_example", "EXAMPLES", "stationary_vector"]

KERNEL_A = [[0.9, 0.1], [0.2, 0.8]]
KERNEL_B = [[0.5, 0.5], [0.6, 0.4]]
POSITIVE_A = [[0.6, 0.4], [0.3, 0.7]]
POSITIVE_B = [[0.5, 0.5], [0.2, 0.8]]


def stationary_vector(Q):
    """Left fixed point ``pi Q = pi`` of an irreducible stochastic matrix."""
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    A = np.vstack([Q.T - np.eye(d), np.ones(d)])
    b = np.zeros(d + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(A, b, rcond=None)[0]


@dataclass(eq=False)
class GalleryEntry:
    name: str
    env: EnvironmentSpec
    model: TraitModel
    init: Distribution
    targets: dict = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        for s in self.env.states:
            build_aux_kernel(s, self.model)

    @property
    def finite(self):
        return self.model.finite

    @property
    def offspring_laws(self):
        return {s.id: s.offspring_pmf for s in self.env.states}

    def normalizers(self, seq: EnvSequence, n: int, start: int = 0):
        """Centering and scaling ``(a, b)`` of the auxiliary chain over ``seq[start:n]``."""
        if isinstance(self.model, IidIncrements):
            mom = np.array([IidIncrements.moments(s) for s in seq.states[start:n]]).reshape(-1, 2)
            return float(mom[:, 0].sum()), math.sqrt(float(mom[:, 1].sum()))
        if isinstance(self.model, LocationRWRE):
            gamma, D = self.targets.get("gamma"), self.targets.get("D")
            if gamma is None or D is None:
                raise ConfigurationError(f"{self.name}: (gamma, D) must be supplied for a non-symmetric omega")
            return (n - start) * gamma, math.sqrt((n - start) * D)
        raise ConfigurationError(f"{self.name} has no CLT normalizers")


def _pmf(p, name):
    try:
        return np.asarray(p, dtype=float)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name} must be a list of probabilities") from None


def _joint_kernels(offspring, per_k):
    """``(k, i) -> matrix`` table; ``per_k`` maps k to a matrix or a list of k matrices."""
    table = {}
    for k in range(1, len(offspring)):
        if offspring[k] == 0:
            continue
        mats = per_k(k)
        if isinstance(mats, np.ndarray) and mats.ndim == 2:
            mats = [mats] * k
        if len(mats) != k:
            raise ConfigurationError(f"need {k} sibling kernels for litter size {k}")
        for i, M in enumerate(mats, start=1):
            table[(k, i)] = check_stochastic_matrix(M, name=f"kernel ({k},{i})")
    return table


def _check_keys(params, allowed, name):
    extra = set(params) - set(allowed)
    if extra:
        raise ConfigurationError(f"{name}: unknown parameter(s) {sorted(extra)}; allowed {sorted(allowed)}")
    return {**allowed, **params}


def _iid_or_markov(states, p):
    if p.get("transition") is not None:
        return EnvironmentSpec.markov(states, p["transition"])
    return EnvironmentSpec.iid(states, p["weights"])


def _ex2_1(params):
    p = _check_keys(params, {"kernel": KERNEL_A, "offspring": [0, 0, 1], "x0": 0}, "ex2_1")
    model = SymmetricIndependent(p["kernel"])
    env = EnvironmentSpec.constant(EnvState(0, _pmf(p["offspring"], "offspring")))
    return GalleryEntry(
        "ex2_1", env, model, Distribution.point_mass(p["x0"]),
        {"stationary": stationary_vector(model.base)},
        "symmetric independent kernel on a Galton-Watson tree",
    )


def _ex3_1(params):
    p = _check_keys(
        params, {"kernel": KERNEL_A, "offspring": [0, 0, 1], "sibling_kernels": None, "x0": 0}, "ex3_1"
    )
    off = _pmf(p["offspring"], "offspring")
    base = check_stochastic_matrix(p["kernel"], name="kernel")
    sib = p["sibling_kernels"] or {}
    kernels = _joint_kernels(off, lambda k: [np.asarray(M) for M in sib[str(k)]] if str(k) in sib else base)
    state = EnvState(0, off, {"kernels": kernels})
    model = FiniteStateJoint(base.shape[0])
    Q = build_aux_kernel(state, model).exact
    return GalleryEntry(
        "ex3_1", EnvironmentSpec.constant(state), model, Distribution.point_mass(p["x0"]),
        {"stationary": stationary_vector(Q)},
        "homogeneous Markov chain along a Galton-Watson tree",
    )


def _ex3_2(params):
    p = _check_keys(
        params,
        {"kernel": KERNEL_A, "offspring": [[0, 0.5, 0.5], [0, 0, 0.5, 0.5]], "weights": [0.5, 0.5],
         "transition": None, "x0": 0},
        "ex3_2",
    )
    model = SymmetricIndependent(p["kernel"])
    states = [EnvState(j, _pmf(o, "offspring")) for j, o in enumerate(p["offspring"])]
    return GalleryEntry(
        "ex3_2", _iid_or_markov(states, p), model, Distribution.point_mass(p["x0"]),
        {"stationary": stationary_vector(model.base)},
        "symmetric kernel, offspring law in a random environment",
    )


def _finite_random_kernels(name, params, defaults, positive=False):
    p = _check_keys(params, defaults, name)
    kernels = [check_stochastic_matrix(K, name="kernel") for K in p["kernels"]]
    offs = p["offspring"]
    if len(offs) != len(kernels):
        raise ConfigurationError(f"{name}: need one offspring law per kernel")
    if positive and any(np.any(K <= 0) for K in kernels):
        raise ConfigurationError(f"{name}: kernels must be strictly positive")
    states = []
    for j, (K, o) in enumerate(zip(kernels, offs)):
        off = _pmf(o, "offspring")
        states.append(EnvState(j, off, {"kernels": _joint_kernels(off, lambda k, K=K: K)}))
    model = FiniteStateJoint(kernels[0].shape[0])
    return p, states, model


def _ex3_3(params):
    p, states, model = _finite_random_kernels(
        "ex3_3", params,
        {"kernels": [KERNEL_A, KERNEL_B], "offspring": [[0, 0, 1], [0, 0, 1]], "weights": [0.5, 0.5],
         "transition": None, "x0": 0},
    )
    env = _iid_or_markov(states, p)
    return GalleryEntry(
        "ex3_3", env, model, Distribution.point_mass(p["x0"]),
        {"stationary_per_state": [stationary_vector(build_aux_kernel(s, model).exact) for s in states]},
        "multitype branching process in random environment",
    )


def _ex3_4(params):
    p, states, model = _finite_random_kernels(
        "ex3_4", params,
        {"kernels": [POSITIVE_A, POSITIVE_B], "offspring": [[0, 0, 0, 1], [0, 0, 0, 1]],
         "weights": [0.5, 0.5], "transition": None, "x0": 0},
        positive=True,
    )
    ratios = []
    for s in states:
        Q = build_aux_kernel(s, model).exact
        ratios.append(float((Q.max(axis=0) / Q.min(axis=0)).max()))
    return GalleryEntry(
        "ex3_4", _iid_or_markov(states, p), model, Distribution.point_mass(p["x0"]),
        {"doeblin_b": 1, "doeblin_M": max(ratios)},
        "strictly positive random kernels (Doeblin condition with b = 1)",
    )


def _ex3_5(params):
    p = _check_keys(
        params,
        {"offspring": [[0, 0, 1], [0, 0, 1]],
         "increments": [{"dist": "normal", "mu": 0.0, "sigma2": 1.0}] * 2,
         "weights": [0.5, 0.5], "transition": None, "x0": 0.0},
        "ex3_5",
    )
    if len(p["offspring"]) != len(p["increments"]):
        raise ConfigurationError("ex3_5: need one increment law per offspring law")
    model = IidIncrements()
    states = [EnvState(j, _pmf(o, "offspring"), dict(inc)) for j, (o, inc) in enumerate(zip(p["offspring"], p["increments"]))]
    for s in states:
        model.validate_state(s)
    if sum(IidIncrements.moments(s)[1] for s in states) == 0:
        raise ConfigurationError("ex3_5: zero increment variance in every state")
    return GalleryEntry(
        "ex3_5", _iid_or_markov(states, p), model, Distribution.point_mass(float(p["x0"])),
        {"clt": "a_n = sum of increment means, b_n = sqrt(sum of increment variances)"},
        "branching random walk on R with a random environment in time",
    )


def _ex3_6(params):
    p = _check_keys(
        params,
        {"omega": None, "period": 16, "delta": 0.05, "omega_seed": None, "radius": 200,
         "offspring": [[0, 0.5, 0.5], [0, 0, 1]], "weights": [0.5, 0.5], "transition": None,
         "gamma": None, "D": None, "x0": 0},
        "ex3_6",
    )
    if p["omega"] is not None:
        omega = np.asarray(p["omega"], dtype=float)
    elif p["omega_seed"] is not None:
        rng = np.random.default_rng(int(p["omega_seed"]))
        omega = rng.uniform(p["delta"], 1 - p["delta"], size=int(p["period"]))
    else:
        omega = np.full(int(p["period"]), 0.5)
    loc = LocationEnvironment(omega, radius=int(p["radius"]), delta=0.0)
    symmetric = bool(np.all(omega == 0.5))
    gamma, D = p["gamma"], p["D"]
    if symmetric and gamma is None and D is None:
        gamma, D = 0.0, 1.0
    states = [EnvState(j, _pmf(o, "offspring")) for j, o in enumerate(p["offspring"])]
    return GalleryEntry(
        "ex3_6", _iid_or_markov(states, p) if len(states) > 1 else EnvironmentSpec.constant(states[0]),
        LocationRWRE(loc), Distribution.point_mass(int(p["x0"])),
        {"gamma": gamma, "D": D, "verified": symmetric},
        "branching random walk on Z with environments in time and in locations",
    )


EXAMPLES = {
    "ex2_1": _ex2_1,
    "ex3_1": _ex3_1,
    "ex3_2": _ex3_2,
    "ex3_3": _ex3_3,
    "ex3_4": _ex3_4,
    "ex3_5": _ex3_5,
    "ex3_6": _ex3_6,
}


def make_example(name: str, params: dict | None = None) -> GalleryEntry:
    """Build the gallery entry ``name`` with ``params`` overriding its defaults."""
    if name not in EXAMPLES:
        raise ConfigurationError(f"unknown model {name!r}; choose from {sorted(EXAMPLES)}")
    entry = EXAMPLES[name](dict(params or {}))
    entry.env = _attach_location(entry)
    return entry


def _attach_location(entry):
    if isinstance(entry.model, LocationRWRE) and entry.env.location is None:
        env = entry.env
        return EnvironmentSpec(env.mode, env.states, env.weights, env.transition, entry.model.location)
    return entry.env
