"""Desk-scale experiments for the limit theorems, with pass/fail gates.

Each experiment is a scikit-learn style estimator: constructor arguments
are its configuration (``get_params`` / ``set_params`` / ``clone`` work),
``fit(X)`` runs it on the environment realisation ``X`` (sampled from the
seed when omitted) and stores the outcome in ``report_``.

All gates compare a simulated statistic with a target computed by a
different route (exact kernel products, closed forms or exhaustive
enumeration).  Quenched runs fix one environment and only vary the
branching randomness; ``annealed=True`` redraws the environment for every
replicate and is labelled as such in the report.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigurationError, EmptyGenerationError, UnsupportedExactError
from .environment import EnvSequence, reverse_env, sample_env_sequence
from .gallery import make_example
from .kernels import IidIncrements, LocationRWRE, aux_marginal_path
from .seeding import (
    ENVIRONMENT,
    SECOND_ENVIRONMENT,
    SECOND_SAMPLE,
    replicate_stream,
    stream,
)
from .simulation import (
    DEFAULT_CAP,
    coalescence_samples,
    exact_coalescence_tails,
    simulate,
    simulate_backward,
)
from .traits import HalfLine, normal_cdf, parse_target
from .verification import check_doeblin, many_to_one_exact, many_to_one_mc

__all__ = [
    "ExperimentConfig",
    "Gate",
    "ConvergenceReport",
    "SimulationRun",
    "ForwardLLN",
    "BackwardLLN",
    "WholeTreeLLN",
    "CLTExperiment",
    "CoalescenceDiagnostic",
    "DoeblinCheck",
    "ManyToOneGrid",
    "run_forward_lln",
    "run_backward_lln",
    "run_whole_tree_lln",
    "run_clt",
    "run_coalescence_diagnostic",
    "COMMANDS",
]

MIN_REPLICATES = 100


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment configuration (see :func:`bmclab.io.parse_config`)."""

    model: str
    n: int
    replicates: int
    seed: int
    params: dict = field(default_factory=dict)
    targets: tuple = ((0,),)
    cap: int = DEFAULT_CAP
    burn_in: int | None = None
    tolerance: float = 0.02
    mode: str = "aggregated"
    annealed: bool = False
    threads: int = 1
    min_survivors: int = 50
    y_grid: tuple = (-2.0, -1.0, 0.0, 1.0, 2.0)
    diag_horizon: int = 100
    diag_tolerance: float = 0.02
    pairs: int = 10_000
    b: int = 1
    M_bound: float = 1e6
    ks_replicates: int = 2000
    ks_horizon: int | None = None
    ks_level: float = 0.01

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError("n: horizon must be >= 2")
        if self.replicates < MIN_REPLICATES:
            raise ConfigurationError(f"replicates: must be >= {MIN_REPLICATES} for statistical gates")
        if self.seed < 0:
            raise ConfigurationError("seed: must be >= 0")
        if self.tolerance < 0 or self.diag_tolerance < 0:
            raise ConfigurationError("tolerance: must be >= 0")
        if self.mode not in ("aggregated", "explicit"):
            raise ConfigurationError("mode: must be 'aggregated' or 'explicit'")
        if self.cap < 1:
            raise ConfigurationError("cap: must be >= 1")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.n // 2)
        if not 0 <= self.burn_in <= self.n:
            raise ConfigurationError("burn_in: must lie in [0, n]")
        if self.threads < 1:
            raise ConfigurationError("threads: must be >= 1")
        if not 0 < self.ks_level < 1:
            raise ConfigurationError("ks_level: must lie in (0, 1)")
        for t in self.targets:
            parse_target(t)

    def to_dict(self):
        return asdict(self)


@dataclass
class Gate:
    name: str
    statistic: float
    threshold: float
    verdict: str
    detail: str = ""


def _gate(name, statistic, threshold, detail="", inconclusive=False):
    if inconclusive:
        verdict = "inconclusive"
    else:
        # a zero tolerance is unattainable by design
        verdict = "pass" if threshold > 0 and statistic <= threshold else "fail"
    return Gate(name, float(statistic), float(threshold), verdict, detail)


@dataclass
class ConvergenceReport:
    """Outcome of one experiment.

    ``rows`` is the per-generation (or per-grid-point) summary table;
    ``records`` the per-replicate, per-generation table written to CSV.
    """

    command: str
    model: str
    gates: list
    rows: list
    records: list = field(default_factory=list, repr=False)
    record_columns: list = field(default_factory=list, repr=False)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(g.verdict != "fail" for g in self.gates)

    @property
    def verdicts(self):
        return {g.name: g.verdict for g in self.gates}

    def to_dict(self):
        return {
            "command": self.command,
            "model": self.model,
            "passed": self.passed,
            "gates": [asdict(g) for g in self.gates],
            "rows": self.rows,
            "summary": self.summary,
        }


def _map(fn, count, threads):
    if threads <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(count)))


def _quantiles(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {"mean": math.nan, "median": math.nan, "q90": math.nan}
    return {"mean": float(x.mean()), "median": float(np.median(x)), "q90": float(np.quantile(x, 0.9))}


class _Experiment(BaseEstimator):
    """Shared machinery; subclasses implement ``_run``."""

    command = ""

    def __init__(
        self,
        model="ex3_1",
        params=None,
        n=14,
        replicates=200,
        seed=0,
        targets=((0,),),
        cap=DEFAULT_CAP,
        burn_in=None,
        tolerance=0.02,
        mode="aggregated",
        annealed=False,
        threads=1,
        min_survivors=50,
    ):
        self.model = model
        self.params = params
        self.n = n
        self.replicates = replicates
        self.seed = seed
        self.targets = targets
        self.cap = cap
        self.burn_in = burn_in
        self.tolerance = tolerance
        self.mode = mode
        self.annealed = annealed
        self.threads = threads
        self.min_survivors = min_survivors

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, **overrides):
        names = cls._get_param_names()
        kw = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name in names}
        kw.update(overrides)
        return cls(**kw)

    def _env_length(self):
        return self.n

    def fit(self, X: EnvSequence | None = None, y=None):
        """Run the experiment on environment ``X`` (sampled from ``seed`` if None)."""
        self.entry_ = make_example(self.model, self.params)
        if X is None:
            X = sample_env_sequence(self.entry_.env, self.seed, self._env_length())
        if len(X) < self.n:
            raise ConfigurationError(f"environment has {len(X)} components, horizon is {self.n}")
        self.env_ = X
        self.target_sets_ = [parse_target(t) for t in self.targets]
        self.burn_in_ = self.n // 2 if self.burn_in is None else self.burn_in
        self.report_ = self._run(self.entry_, X)
        self.passed_ = self.report_.passed
        return self

    def score(self, X=None, y=None):
        """1.0 when no gate failed, else 0.0."""
        check_is_fitted(self, "report_")
        return float(self.passed_)

    # -- helpers ------------------------------------------------------------

    def _replicate_env(self, entry, seq, i, key=ENVIRONMENT):
        if not self.annealed:
            return seq
        return sample_env_sequence(entry.env, self.seed, len(seq), rng=stream(self.seed, key, i))

    def _record_rows(self, i, traj, cols):
        W = traj.W
        rows = []
        for k in range(traj.N.size):
            env_id = traj.env_ids[k - 1] if k > 0 else ""
            row = [i, k, env_id, int(traj.N[k]), float(traj.log_P[k]), float(W[k])]
            rows.append(row + [c[k] for c in cols])
        return rows

    def _base_columns(self):
        return ["replicate", "generation", "env_state_id", "N_k", "logP_k", "W_k"]

    def _mode_kwargs(self):
        return {"mode": self.mode, "cap": self.cap}


def _prop_columns(traj, sets):
    return [traj.proportion(A) for A in sets]


class SimulationRun(_Experiment):
    """Plain simulation with the martingale and Cesaro diagnostics.

    Gate: the replicate mean of ``W_n`` is within three standard errors
    of 1 (``E W_n = 1`` for every environment).
    """

    command = "simulate"

    def _run(self, entry, seq):
        sets = self.target_sets_ if entry.model.alphabet is not None else []

        def one(i):
            s = self._replicate_env(entry, seq, i)
            traj = simulate(s, entry.init, entry.model, n=self.n, rng=replicate_stream(self.seed, i),
                            **self._mode_kwargs())
            W = traj.W
            ces = float(W[1:].mean()) if not traj.truncated else math.nan
            return {
                "records": self._record_rows(i, traj, _prop_columns(traj, sets)),
                "truncated": traj.truncated,
                "W_n": float(W[-1]) if not traj.truncated else math.nan,
                "survived": traj.survived,
                "cesaro_gap": abs(ces - float(W[-1])) if traj.survived else math.nan,
            }

        res = _map(one, self.replicates, self.threads)
        ok = [r for r in res if not r["truncated"]]
        Wn = np.array([r["W_n"] for r in ok])
        mean = float(Wn.mean()) if Wn.size else math.nan
        se = float(Wn.std(ddof=1) / math.sqrt(Wn.size)) if Wn.size > 1 else 0.0
        dev = abs(mean - 1.0)
        thr = 3 * se if se > 0 else 1e-12
        gate = _gate("martingale_mean_W_n", dev, thr, f"mean W_n = {mean:.6g}, se = {se:.3g}",
                     inconclusive=Wn.size < self.min_survivors)
        gaps = [r["cesaro_gap"] for r in ok if r["survived"]]
        summary = {
            "replicates": self.replicates,
            "truncated": len(res) - len(ok),
            "survivors": sum(r["survived"] for r in ok),
            "mean_W_n": mean,
            "se_W_n": se,
            "median_cesaro_gap": float(np.median(gaps)) if gaps else math.nan,
            "annealed": self.annealed,
        }
        return ConvergenceReport(
            self.command, self.model, [gate], [],
            records=[row for r in res for row in r["records"]],
            record_columns=self._base_columns() + [f"prop_{A.label}" for A in sets],
            summary=summary,
        )


class _LLNBase(_Experiment):
    """Per-generation proportions of target sets against exact targets."""

    backward = False

    def _targets_per_generation(self, entry, seq):
        """``targets[k, a]`` = law of ``Y_k`` at set ``a`` in the simulated environment order."""
        sim_seq = reverse_env(seq.prefix(self.n)) if self.backward else seq.prefix(self.n)
        rows = aux_marginal_path(entry.init, sim_seq, entry.model)
        return np.array([[float(r[A.contains(entry.model.alphabet)].sum()) for A in self.target_sets_] for r in rows])

    def _simulate_one(self, entry, seq, i):
        s = self._replicate_env(entry, seq, i)
        sim = simulate_backward if self.backward else simulate
        return sim(s, entry.init, entry.model, n=self.n, rng=replicate_stream(self.seed, i), **self._mode_kwargs())

    def _check_model(self, entry):
        if entry.model.alphabet is None or not (entry.model.finite or isinstance(entry.model, LocationRWRE)):
            raise UnsupportedExactError(f"{self.command} needs a model with exact kernels")

    def _collect(self, entry, seq, extra=None):
        self._check_model(entry)
        sets = self.target_sets_
        m = self.burn_in_

        def one(i):
            traj = self._simulate_one(entry, seq, i)
            props = _prop_columns(traj, sets)
            out = {
                "records": self._record_rows(i, traj, props),
                "truncated": traj.truncated,
                "survived": traj.survived,
                "N": traj.N,
                "props": np.array(props).reshape(len(sets), -1),
            }
            if not traj.truncated:
                W = traj.W
                out["ZP_n"] = [float(traj.mass(A)[-1] * math.exp(-traj.log_P[-1])) for A in sets]
                out["W_m"] = float(W[m])
                out["W_n"] = float(W[-1])
            if extra is not None:
                out.update(extra(traj))
            return out

        return _map(one, self.replicates, self.threads)

    def _generation_rows(self, res, targets):
        rows = []
        R = len(res)
        for k in range(self.n + 1):
            alive = [r for r in res if r["N"].size > k and r["N"][k] > 0]
            for a, A in enumerate(self.target_sets_):
                p = np.array([r["props"][a, k] for r in alive])
                dev = np.abs(p - targets[k, a])
                q = _quantiles(dev)
                rows.append({
                    "generation": k,
                    "target_set": A.label,
                    "target": float(targets[k, a]),
                    "mean_proportion": float(p.mean()) if p.size else math.nan,
                    "median_proportion": float(np.median(p)) if p.size else math.nan,
                    "median_abs_dev": q["median"],
                    "q90_abs_dev": q["q90"],
                    "survival_fraction": len(alive) / R,
                })
        return rows

    def _final_gates(self, res, targets, label):
        gates = []
        survivors = [r for r in res if r["survived"]]
        for a, A in enumerate(self.target_sets_):
            dev = np.array([abs(r["props"][a, -1] - targets[-1, a]) for r in survivors])
            stat = float(np.median(dev)) if dev.size else math.nan
            gates.append(_gate(
                f"{label}[{A.label}]", stat, self.tolerance,
                f"median |Z_n(A)/N_n - target| over {dev.size} survivors; target {targets[-1, a]:.6g}",
                inconclusive=dev.size < self.min_survivors,
            ))
        return gates

    def _l2_stats(self, res, targets):
        ok = [r for r in res if not r["truncated"]]
        out = {}
        for a, A in enumerate(self.target_sets_):
            for tag, key in (("burn_in", "W_m"), ("final", "W_n")):
                vals = [(r["ZP_n"][a] - targets[-1, a] * r[key]) ** 2 for r in ok]
                out[f"l2_{A.label}_{tag}"] = float(np.mean(vals)) if vals else math.nan
        return out

    def _summary(self, res, seq):
        return {
            "replicates": len(res),
            "survivors": sum(r["survived"] for r in res),
            "extinct": sum((not r["truncated"]) and (not r["survived"]) for r in res),
            "truncated": sum(r["truncated"] for r in res),
            "env_state_ids": list(seq.ids[: self.n]),
            "burn_in": self.burn_in_,
            "annealed": self.annealed,
        }

    def _columns(self):
        return self._base_columns() + [f"prop_{A.label}" for A in self.target_sets_]


class ForwardLLN(_LLNBase):
    """Proportions ``Z_n(A)/N_n`` against ``init Q_0 ... Q_{n-1}(A)``.

    The target sequence is the canonical choice of the auxiliary chain's
    marginal law; the gate is the median absolute deviation at generation
    ``n`` over surviving replicates.  The report also carries the
    mean-square statistic ``E (Z_n(A)/P_n - target * W_m)^2`` for the
    burn-in ``m`` and for ``m = n``.
    """

    command = "lln-forward"

    def _run(self, entry, seq):
        targets = self._targets_per_generation(entry, seq)
        res = self._collect(entry, seq)
        gates = self._final_gates(res, targets, "median_dev_final")
        summary = {**self._summary(res, seq), **self._l2_stats(res, targets)}
        return ConvergenceReport(self.command, self.model, gates, self._generation_rows(res, targets),
                                 records=[row for r in res for row in r["records"]],
                                 record_columns=self._columns(), summary=summary)


def run_forward_lln(cfg: ExperimentConfig) -> ConvergenceReport:
    return ForwardLLN.from_config(cfg).fit().report_


class BackwardLLN(_LLNBase):
    """Proportions in the time-reversed environment against ``init Q_{n-1} ... Q_0(A)``.

    Requires ``m >= a > 1`` in every environment state.  The probability
    form of the statement needs an environment that is reversible in law,
    so the gate is inconclusive for Markov environments.  A second gate
    compares the laws of ``W_n`` (forward) and ``W_n^(n)`` (backward) with
    a two-sample Kolmogorov-Smirnov test over ``ks_replicates`` annealed
    replicates of each.
    """

    command = "lln-backward"
    backward = True

    def __init__(
        self,
        model="ex3_3",
        params=None,
        n=14,
        replicates=200,
        seed=0,
        targets=((0,),),
        cap=DEFAULT_CAP,
        burn_in=None,
        tolerance=0.02,
        mode="aggregated",
        annealed=False,
        threads=1,
        min_survivors=50,
        ks_replicates=2000,
        ks_horizon=None,
        ks_level=0.01,
    ):
        super().__init__(model, params, n, replicates, seed, targets, cap, burn_in, tolerance, mode,
                         annealed, threads, min_survivors)
        self.ks_replicates = ks_replicates
        self.ks_horizon = ks_horizon
        self.ks_level = ks_level

    def _check_hypotheses(self, entry):
        low = [s.id for s in entry.env.states if s.mean <= 1]
        if low:
            raise ConfigurationError(
                f"backward law of large numbers needs mean offspring m >= a > 1 in every state; "
                f"states {low} violate it"
            )

    def ks_test(self, entry):
        """Annealed two-sample KS test of ``W_n`` against ``W_n^(n)``."""
        n = self.ks_horizon or self.n
        env = entry.env

        def one(i):
            s1 = sample_env_sequence(env, self.seed, n, rng=stream(self.seed, ENVIRONMENT, i))
            s2 = sample_env_sequence(env, self.seed, n, rng=stream(self.seed, SECOND_ENVIRONMENT, i))
            f = simulate(s1, entry.init, entry.model, n=n, rng=replicate_stream(self.seed, i), **self._mode_kwargs())
            b = simulate_backward(s2, entry.init, entry.model, n=n, rng=stream(self.seed, SECOND_SAMPLE, i),
                                  **self._mode_kwargs())
            if f.truncated or b.truncated:
                return None
            return float(f.W[-1]), float(b.W[-1])

        res = [r for r in _map(one, self.ks_replicates, self.threads) if r is not None]
        fw = np.array([r[0] for r in res])
        bw = np.array([r[1] for r in res])
        ks = stats.ks_2samp(fw, bw)
        pvalue = 1.0 if np.array_equal(np.sort(fw), np.sort(bw)) else float(ks.pvalue)
        return {"ks_statistic": float(ks.statistic), "ks_pvalue": pvalue, "ks_samples": len(res), "ks_horizon": n}

    def _run(self, entry, seq):
        self._check_hypotheses(entry)
        targets = self._targets_per_generation(entry, seq)
        res = self._collect(entry, seq)
        reversible = entry.env.reversible_checked
        gates = self._final_gates(res, targets, "median_dev_final")
        if not reversible:
            for g in gates:
                g.verdict = "inconclusive"
                g.detail += "; environment not reversible-checked"
        ks = self.ks_test(entry)
        gates.append(Gate("ks_W_forward_vs_backward", ks["ks_pvalue"], self.ks_level,
                          "pass" if ks["ks_pvalue"] >= self.ks_level else "fail",
                          f"two-sample KS p-value (pass when >= level) over {ks['ks_samples']} pairs"))
        if not reversible:
            gates[-1].verdict = "inconclusive"
        summary = {**self._summary(res, seq), **self._l2_stats(res, targets), **ks,
                   "reversible_checked": reversible}
        return ConvergenceReport(self.command, self.model, gates, self._generation_rows(res, targets),
                                 records=[row for r in res for row in r["records"]],
                                 record_columns=self._columns(), summary=summary)


def run_backward_lln(cfg: ExperimentConfig) -> ConvergenceReport:
    return BackwardLLN.from_config(cfg).fit().report_


class WholeTreeLLN(_LLNBase):
    """Generation-averaged proportions ``(1/n) sum_k Z_k(A)/N_k``.

    The target is the Cesaro average of the exact marginals
    ``init Q_0 ... Q_{k-1}(A)``, ``k = 1..n``.  The Doeblin screen with
    window ``b`` runs first; when it fails the gate is inconclusive.
    """

    command = "lln-whole-tree"

    def __init__(
        self,
        model="ex3_4",
        params=None,
        n=14,
        replicates=200,
        seed=0,
        targets=((0,),),
        cap=DEFAULT_CAP,
        burn_in=None,
        tolerance=0.03,
        mode="aggregated",
        annealed=False,
        threads=1,
        min_survivors=50,
        b=1,
        M_bound=1e6,
    ):
        super().__init__(model, params, n, replicates, seed, targets, cap, burn_in, tolerance, mode,
                         annealed, threads, min_survivors)
        self.b = b
        self.M_bound = M_bound

    def _run(self, entry, seq):
        self._check_model(entry)
        doeblin = check_doeblin(entry.model, seq.prefix(self.n), self.b, self.M_bound)
        targets = self._targets_per_generation(entry, seq)
        cesaro = targets[1:].mean(axis=0)
        res = self._collect(entry, seq)
        gates = []
        survivors = [r for r in res if r["survived"]]
        for a, A in enumerate(self.target_sets_):
            dev = np.array([abs(float(r["props"][a, 1:].mean()) - cesaro[a]) for r in survivors])
            stat = float(np.median(dev)) if dev.size else math.nan
            gates.append(_gate(
                f"median_dev_cesaro[{A.label}]", stat, self.tolerance,
                f"median |(1/n) sum_k Z_k(A)/N_k - target|; target {cesaro[a]:.6g}; "
                f"Doeblin b={self.b} M={doeblin.max_ratio:.6g}",
                inconclusive=dev.size < self.min_survivors or not doeblin.passed,
            ))
        rows = self._generation_rows(res, targets)
        summary = {**self._summary(res, seq), "doeblin_max_ratio": doeblin.max_ratio,
                   "doeblin_passed": doeblin.passed,
                   "cesaro_targets": {A.label: float(c) for A, c in zip(self.target_sets_, cesaro)}}
        return ConvergenceReport(self.command, self.model, gates, rows,
                                 records=[row for r in res for row in r["records"]],
                                 record_columns=self._columns(), summary=summary)


def run_whole_tree_lln(cfg: ExperimentConfig) -> ConvergenceReport:
    return WholeTreeLLN.from_config(cfg).fit().report_


class CLTExperiment(_Experiment):
    """Empirical distribution function of normalised positions.

    For every ``y`` in ``y_grid`` the proportion
    ``Z_n(-inf, b_n y + a_n] / N_n`` is averaged over surviving replicates
    and compared with the standard normal CDF.  The normalizer diagnostics
    ``b_N / b_{N-r}(shifted)`` and ``(a_N - a_{N-r}(shifted)) / b_{N-r}(shifted)``
    for ``r = 1, 2`` at ``N = diag_horizon`` are gated against 1 and 0.
    """

    command = "clt"

    def __init__(
        self,
        model="ex3_5",
        params=None,
        n=16,
        replicates=200,
        seed=0,
        targets=((0,),),
        cap=DEFAULT_CAP,
        burn_in=None,
        tolerance=0.05,
        mode="aggregated",
        annealed=False,
        threads=1,
        min_survivors=50,
        y_grid=(-2.0, -1.0, 0.0, 1.0, 2.0),
        diag_horizon=100,
        diag_tolerance=0.02,
    ):
        super().__init__(model, params, n, replicates, seed, targets, cap, burn_in, tolerance, mode,
                         annealed, threads, min_survivors)
        self.y_grid = y_grid
        self.diag_horizon = diag_horizon
        self.diag_tolerance = diag_tolerance

    def _env_length(self):
        return max(self.n, self.diag_horizon)

    def _normalizer_diagnostics(self, entry, seq, N):
        out = {}
        for r in (1, 2):
            a_N, b_N = entry.normalizers(seq, N)
            a_s, b_s = entry.normalizers(seq, N, start=r)
            out[f"b_ratio_r{r}"] = b_N / b_s
            out[f"a_shift_r{r}"] = (a_N - a_s) / b_s
        return out

    def _run(self, entry, seq):
        if not isinstance(entry.model, (IidIncrements, LocationRWRE)):
            raise ConfigurationError("clt needs an ex3_5 or ex3_6 model")
        a_n, b_n = entry.normalizers(seq, self.n)
        if not b_n > 0:
            raise ConfigurationError("degenerate normalizer: zero total variance")
        norm = [entry.normalizers(seq, k) for k in range(self.n + 1)]
        ys = [float(y) for y in self.y_grid]

        def one(i):
            s = self._replicate_env(entry, seq, i)
            traj = simulate(s, entry.init, entry.model, n=self.n, rng=replicate_stream(self.seed, i),
                            **self._mode_kwargs())
            cols = []
            for y in ys:
                col = []
                for k, Z in enumerate(traj.measures):
                    a, b = norm[k]
                    col.append(Z.mass(HalfLine(b * y + a)) / Z.total if Z.total and b > 0 else math.nan)
                cols.append(col)
            return {
                "records": self._record_rows(i, traj, cols),
                "truncated": traj.truncated,
                "survived": traj.survived,
                "F": [c[-1] for c in cols] if traj.survived else None,
            }

        res = _map(one, self.replicates, self.threads)
        surv = [r for r in res if r["survived"]]
        F = np.array([r["F"] for r in surv]).reshape(len(surv), len(ys))
        rows = []
        devs = []
        for j, y in enumerate(ys):
            mean = float(F[:, j].mean()) if len(surv) else math.nan
            phi = normal_cdf(y)
            devs.append(abs(mean - phi))
            rows.append({"y": y, "Phi": phi, "mean_F": mean,
                         "median_F": float(np.median(F[:, j])) if len(surv) else math.nan,
                         "abs_dev": abs(mean - phi)})
        gates = [_gate("sup_dev_Phi", max(devs), self.tolerance,
                       f"sup over y of |mean F(y) - Phi(y)|, a_n={a_n:.6g}, b_n={b_n:.6g}",
                       inconclusive=len(surv) < self.min_survivors)]
        diag = self._normalizer_diagnostics(entry, seq, self.diag_horizon)
        for r in (1, 2):
            gates.append(_gate(f"b_ratio_r{r}", abs(diag[f"b_ratio_r{r}"] - 1), self.diag_tolerance,
                               f"b_N/b_(N-r)(T^r xi) = {diag[f'b_ratio_r{r}']:.6g} at N={self.diag_horizon}"))
            gates.append(_gate(f"a_shift_r{r}", abs(diag[f"a_shift_r{r}"]), self.diag_tolerance,
                               f"(a_N - a_(N-r)(T^r xi))/b_(N-r)(T^r xi) at N={self.diag_horizon}"))
        summary = {
            "replicates": len(res),
            "survivors": len(surv),
            "truncated": sum(r["truncated"] for r in res),
            "a_n": a_n,
            "b_n": b_n,
            "diagnostics_at_diag_horizon": diag,
            "diagnostics_at_n": self._normalizer_diagnostics(entry, seq, self.n),
            "annealed": self.annealed,
        }
        if isinstance(entry.model, LocationRWRE):
            summary["gamma_D"] = [entry.targets.get("gamma"), entry.targets.get("D")]
            summary["gamma_D_verified"] = bool(entry.targets.get("verified"))
        return ConvergenceReport(self.command, self.model, gates, rows,
                                 records=[row for r in res for row in r["records"]],
                                 record_columns=self._base_columns() + [f"F_y{y:g}" for y in ys],
                                 summary=summary)


def run_clt(cfg: ExperimentConfig) -> ConvergenceReport:
    return CLTExperiment.from_config(cfg).fit().report_


class CoalescenceDiagnostic(_Experiment):
    """Tails of the coalescence generation of two uniformly sampled individuals.

    One explicit tree is grown to generation ``n``; ``pairs`` pairs are
    sampled with replacement and both tails ``P(|U^V| >= K)`` and
    ``P(|U^V| >= n-K)`` are reported.  The gate compares each sampled tail
    with the exact tail of the same tree (computed from subtree sizes)
    within three binomial standard errors.
    """

    command = "coalescence"

    def __init__(
        self,
        model="ex2_1",
        params=None,
        n=10,
        replicates=100,
        seed=0,
        targets=((0,),),
        cap=DEFAULT_CAP,
        burn_in=None,
        tolerance=3.0,
        mode="explicit",
        annealed=False,
        threads=1,
        min_survivors=50,
        pairs=10_000,
    ):
        super().__init__(model, params, n, replicates, seed, targets, cap, burn_in, tolerance, mode,
                         annealed, threads, min_survivors)
        self.pairs = pairs

    def _run(self, entry, seq):
        traj = simulate(seq, entry.init, entry.model, n=self.n, mode="explicit", cap=self.cap,
                        rng=replicate_stream(self.seed, 0))
        try:
            if traj.truncated:
                raise EmptyGenerationError("tree truncated")
            hist = coalescence_samples(traj.tree, self.n, self.pairs, stream(self.seed, SECOND_SAMPLE, 0))
            exact = exact_coalescence_tails(traj.tree, self.n)
        except EmptyGenerationError as err:
            gate = Gate("tails_within_3se", math.nan, 3.0, "inconclusive", str(err))
            return ConvergenceReport(self.command, self.model, [gate], [], summary={"N_n": int(traj.N[-1])})
        tails = hist.tails()
        rows, worst, records = [], 0.0, []
        for K in range(self.n + 1):
            se = math.sqrt(exact[K] * (1 - exact[K]) / self.pairs)
            z = abs(tails[K] - exact[K]) / se if se > 0 else (0.0 if abs(tails[K] - exact[K]) < 1e-12 else math.inf)
            worst = max(worst, z)
            rows.append({"K": K, "tail_ge_K": float(tails[K]), "exact_ge_K": float(exact[K]),
                         "tail_ge_n_minus_K": float(tails[self.n - K]), "exact_ge_n_minus_K": float(exact[self.n - K]),
                         "se": se, "z": z})
            records.append([K, float(tails[K]), float(exact[K]), float(tails[self.n - K]),
                            float(exact[self.n - K]), se])
        gate = Gate("tails_within_3se", worst, 3.0, "pass" if worst <= 3.0 else "fail",
                    "max over K of |sampled - exact| / se")
        summary = {"N_n": int(traj.N[-1]), "pairs": self.pairs, "nonincreasing": bool(np.all(np.diff(tails) <= 0))}
        return ConvergenceReport(self.command, self.model, [gate], rows, records=records,
                                 record_columns=["K", "tail_ge_K", "exact_ge_K", "tail_ge_n_minus_K",
                                                 "exact_ge_n_minus_K", "se"],
                                 summary=summary)


def run_coalescence_diagnostic(cfg: ExperimentConfig) -> ConvergenceReport:
    return CoalescenceDiagnostic.from_config(cfg).fit().report_


class DoeblinCheck(_Experiment):
    """Doeblin ratio bound on every ``b``-window of the realised environment."""

    command = "doeblin"

    def __init__(
        self,
        model="ex3_4",
        params=None,
        n=14,
        replicates=100,
        seed=0,
        targets=((0,),),
        cap=DEFAULT_CAP,
        burn_in=None,
        tolerance=0.02,
        mode="aggregated",
        annealed=False,
        threads=1,
        min_survivors=50,
        b=1,
        M_bound=1e6,
    ):
        super().__init__(model, params, n, replicates, seed, targets, cap, burn_in, tolerance, mode,
                         annealed, threads, min_survivors)
        self.b = b
        self.M_bound = M_bound

    def _run(self, entry, seq):
        rep = check_doeblin(entry.model, seq.prefix(self.n), self.b, self.M_bound)
        gate = Gate("doeblin_max_ratio", rep.max_ratio, self.M_bound, "pass" if rep.passed else "fail",
                    f"max over windows of the b={self.b} row ratio")
        records = [[r, seq[r].id, ratio] for r, ratio in enumerate(rep.window_ratios)]
        return ConvergenceReport(self.command, self.model, [gate],
                                 [{"window_start": r[0], "env_state_id": r[1], "ratio": r[2]} for r in records],
                                 records=records, record_columns=["window_start", "env_state_id", "ratio"],
                                 summary={"b": self.b, "max_ratio": rep.max_ratio})


class ManyToOneGrid(_Experiment):
    """Many-to-one identity on a grid of horizons, indicators and starts.

    Finite models: exhaustive enumeration against exact kernel products for
    ``n = 0..3``, every basis indicator and every start, at the root and
    for the environment shifted by one.  Other models: the Monte Carlo
    version for the half-line ``(-inf, 0]`` with ``replicates`` trees.
    """

    command = "verify"

    def _run(self, entry, seq):
        model = entry.model
        reports = []
        if model.finite:
            from .environment import shift_env

            d = model.alphabet.size
            for shift in (0, 1):
                s = shift_env(seq, shift)
                for n in range(min(4, len(s) + 1)):
                    for x0 in range(d):
                        for j in range(d):
                            f = np.eye(d)[j]
                            rep = many_to_one_exact(model, s, n, f, x0)
                            reports.append(((shift, n, x0, j), rep))
        else:
            n = min(self.n, 8)
            f = lambda x: (np.asarray(x) <= 0).astype(float)
            x0 = entry.init.support[0]
            rep = many_to_one_mc(model, seq, n, f, x0, self.replicates, seed=self.seed, cap=self.cap,
                                 threads=self.threads)
            reports.append(((0, n, x0, "le_0"), rep))
        records = [[*key, r.lhs, r.rhs, r.abs_err, r.rel_err, r.method, r.passed] for key, r in reports]
        worst = max(r.rel_err for _, r in reports) if model.finite else reports[0][1].abs_err
        passed = all(r.passed for _, r in reports)
        gate = Gate("many_to_one", worst, 1e-10 if model.finite else 3.0, "pass" if passed else "fail",
                    f"{len(reports)} checks; worst relative error" if model.finite else "within 3 combined se")
        return ConvergenceReport(self.command, self.model, [gate], [], records=records,
                                 record_columns=["shift", "n", "x0", "f", "lhs", "rhs", "abs_err", "rel_err",
                                                 "method", "passed"],
                                 summary={"checks": len(reports)})


COMMANDS = {
    "simulate": SimulationRun,
    "verify": ManyToOneGrid,
    "lln-forward": ForwardLLN,
    "lln-backward": BackwardLLN,
    "lln-whole-tree": WholeTreeLLN,
    "clt": CLTExperiment,
    "coalescence": CoalescenceDiagnostic,
    "doeblin": DoeblinCheck,
}
